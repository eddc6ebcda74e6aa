"""Synthesize the benchmark series and run the five-way ablation through the CLI.

    python scripts/run_ablation.py --out runs/ablation
"""
import argparse
import sys
from pathlib import Path

from magcrn.cli import main as cli

SMALL_MODEL = ["--embed-dim", "4", "--hidden-dim", "16", "--filter-len", "3", "--heads", "4",
               "--attn-layers", "1", "--gcrn-layers", "1"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--patience", type=int, default=15)
    args, extra = ap.parse_known_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series = out / "synth.txt"
    if cli(["synth", "--nodes", "8", "--steps", "2000", "--seed", "7", "--out", str(series)]):
        return 1
    return cli(["ablate", "--data", str(series), "--out", str(out), "--seed", str(args.seed),
                "--epochs", str(args.epochs), "--patience", str(args.patience), *SMALL_MODEL, *extra])


if __name__ == "__main__":
    sys.exit(main())
