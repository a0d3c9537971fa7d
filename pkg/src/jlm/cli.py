"""Command line entry point: ``jlm gen-data | train | eval | infer | gradcheck``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import __version__
from .dataio import derive_tracking_signals, load_motion, load_signals, save_motion
from .errors import JLMError
from .losses import LossWeights
from .metrics import evaluate_pair, write_report
from .model import ModelConfig
from .runtime import TrainConfig, evaluate_model, frames_to_motion, infer_stream, load_checkpoint, train
from .skeleton import load_template
from .synth import KINDS, synth_generate

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _motion_paths(items: list[str]) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        paths.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not paths:
        raise JLMError(f"no motion files found in {items}")
    return paths


def cmd_gen_data(args) -> int:
    seq = synth_generate(args.kind, args.seconds, args.fps, args.seed, load_template(args.skeleton))
    save_motion(seq, args.out, sidecar=args.sidecar)
    print(f"wrote {seq.num_frames} frames of {args.kind} to {args.out}")
    return 0


def _load_train_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    return TrainConfig.from_dict(json.loads(Path(path).read_text()))


def cmd_train(args) -> int:
    cfg = _load_train_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.iterations is not None:
        cfg.iterations = args.iterations
    template = load_template(args.skeleton)
    data = [load_motion(p) for p in _motion_paths(args.data)]
    logging.info("training on %d sequences", len(data))
    res = train(cfg, data, template, out_dir=args.out)
    last = res.log[-1]
    print(f"trained {len(res.log)} iterations, final loss {last['total']:.6f}; checkpoint in {args.out}")
    return 0


def cmd_eval(args) -> int:
    if (args.checkpoint is None) == (args.pred is None):
        raise UsageError("eval: give exactly one of --checkpoint or --pred")
    gt_paths = _motion_paths(args.data)
    gts = {p.stem: load_motion(p) for p in gt_paths}
    if args.checkpoint is not None:
        ckpt = load_checkpoint(args.checkpoint)
        reports = evaluate_model(ckpt.model, gts)
    else:
        pred_paths = _motion_paths(args.pred)
        if len(pred_paths) != len(gt_paths):
            raise UsageError(f"eval: {len(pred_paths)} predictions for {len(gt_paths)} ground-truth files")
        template = load_template(args.skeleton)
        reports = {
            name: evaluate_pair(load_motion(pp), gt, template) for pp, (name, gt) in zip(pred_paths, gts.items())
        }
    doc = write_report(args.report, reports)
    print(json.dumps(doc["aggregate"]))
    return 0


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model
    doc = json.loads(Path(args.input).read_text())
    if "signals" in doc:
        signals, fps = load_signals(args.input)
    else:
        seq = load_motion(args.input)
        signals, fps = derive_tracking_signals(seq, model.template), seq.fps
    frames = list(infer_stream(model, iter(signals), args.window))
    save_motion(frames_to_motion(frames, fps), args.output)
    print(f"wrote {len(frames)} frames to {args.output}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import full_model_gradcheck

    if args.tiny:
        cfg = ModelConfig.tiny()
    elif args.config:
        d = json.loads(Path(args.config).read_text())
        cfg = ModelConfig(**d.get("model", d))
    else:
        raise UsageError("gradcheck: give --config or --tiny")
    report = full_model_gradcheck(cfg, LossWeights(), seed=args.seed)
    print(f"max relative error {report.max_rel_error:.3e} (worst: {report.worst()}, {report.evaluations} evaluations)")
    return 0 if report.max_rel_error < GRADCHECK_TOL else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jlm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic motion file")
    g.add_argument("--kind", required=True, choices=KINDS)
    g.add_argument("--seconds", type=float, required=True)
    g.add_argument("--fps", type=float, default=60.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--sidecar", action="store_true", help="store frames in a float32 .bin sidecar")
    g.add_argument("--skeleton", default=None, help="skeleton asset (default: bundled humanoid)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on motion files")
    t.add_argument("--config", default=None, help="JSON training config")
    t.add_argument("--data", nargs="+", required=True, help="motion files or directories")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--skeleton", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score predictions or a checkpoint against ground truth")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--pred", nargs="+", default=None, help="predicted motion files (same order as --data)")
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--skeleton", default=None)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="stream a motion or signal file through a checkpoint")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--window", type=int, default=None)
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full model and loss")
    c.add_argument("--config", default=None)
    c.add_argument("--tiny", action="store_true")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except (JLMError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
