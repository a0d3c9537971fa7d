"""Feed a synthetic clip frame by frame through a checkpoint and time the per-frame latency.

    python scripts/stream_demo.py --checkpoint runs/overfit/checkpoint.jlm --kind arm_wave
"""

import argparse
import time

import numpy as np

from jlm.dataio import derive_tracking_signals
from jlm.metrics import evaluate_pair
from jlm.runtime import frames_to_motion, infer_stream, load_checkpoint
from jlm.synth import KINDS, synth_generate


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", default="walk_cycle", choices=KINDS)
    p.add_argument("--seconds", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    model = load_checkpoint(args.checkpoint).model
    gt = synth_generate(args.kind, args.seconds, 60.0, args.seed, model.template)
    signals = derive_tracking_signals(gt, model.template)
    frames, lat = [], []
    t0 = time.perf_counter()
    for f in infer_stream(model, iter(signals)):
        t1 = time.perf_counter()
        lat.append(t1 - t0)
        t0 = t1
        frames.append(f)
    rep = evaluate_pair(frames_to_motion(frames, gt.fps), gt, model.template)
    print(f"{len(frames)} frames, median latency {np.median(lat) * 1e3:.2f} ms")
    print({k: round(v, 3) for k, v in rep.metrics().items()})


if __name__ == "__main__":
    main()
