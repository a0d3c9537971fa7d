"""Train one small model per loss configuration and tabulate held-out metrics.

    python scripts/loss_ablation.py --iterations 1000 --rows basic +hand +hand+motion+physical
"""

import argparse
import json
from pathlib import Path

from jlm.experiments import ablation_runs
from jlm.losses import ABLATIONS
from jlm.model import ModelConfig

COLUMNS = ("MPJRE", "MPJPE", "MPJVE", "Jitter", "Ground", "Skate")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--rows", nargs="*", default=list(ABLATIONS), choices=list(ABLATIONS))
    p.add_argument("--desk", action="store_true", help="use the desk model instead of the tiny one")
    p.add_argument("--seconds", type=float, default=4.0)
    p.add_argument("--out", default="runs/ablation.json")
    args = p.parse_args()

    model = ModelConfig.desk() if args.desk else ModelConfig.tiny()
    results = ablation_runs(args.iterations, args.rows, model, args.seconds)
    print(f"{'losses':<28}" + "".join(f"{c:>9}" for c in COLUMNS))
    for name, rep in results.items():
        m = rep.metrics()
        print(f"{name:<28}" + "".join(f"{m[c]:9.2f}" for c in COLUMNS))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps({k: v.to_dict() for k, v in results.items()}, indent=2))


if __name__ == "__main__":
    main()
