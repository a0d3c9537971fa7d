"""Memorise four synthetic clips with the tiny model and report training-set metrics.

    python scripts/overfit_demo.py --iterations 5000 --out runs/overfit
"""

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from jlm.experiments import overfit_config, overfit_run
from jlm.losses import LossWeights
from jlm.metrics import write_report


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--masked", action="store_true", help="train with token masking")
    p.add_argument("--full-loss", action="store_true", help="enable every loss term, not only the basic ones")
    p.add_argument("--out", default="runs/overfit")
    p.add_argument("--print-every", type=int, default=250)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = overfit_config(args.iterations, args.seed)
    if args.lr is not None:
        cfg = replace(cfg, lr=args.lr, lr_final=args.lr / 10)
    cfg = replace(cfg, masked=args.masked)
    if args.full_loss:
        cfg = replace(cfg, loss=LossWeights())

    def on_step(i, rep):
        if i % args.print_every == 0 or i == cfg.iterations - 1:
            logging.info("%5d  total %.4f  rot %.4f  pos %.4f", i, rep.total, rep.l_rot, rep.l_pos)

    out = Path(args.out)
    r = overfit_run(cfg, on_step=on_step, out_dir=out)
    write_report(out / "metrics.json", r.per_sequence)
    for name, rep in r.per_sequence.items():
        logging.info("%-11s MPJRE %6.2f deg  MPJPE %5.2f cm", name, rep.mpjre, rep.mpjpe)
    m = r.metrics
    summary = {"MPJRE": m.mpjre, "MPJPE": m.mpjpe, "loss_ratio": r.loss_ratio(), "minutes": r.seconds / 60}
    print(json.dumps(summary))


if __name__ == "__main__":
    main()
