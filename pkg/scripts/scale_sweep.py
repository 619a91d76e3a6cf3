"""Desk-scale QT runs on MNIST for both probability scalings and a few learning rates.

Useful for seeing how much of the learning signal reaches the mapping network
when the probability column is tiny (raw) versus rescaled by 2^N (pow2).
"""
import argparse
from pathlib import Path

from qtrain.config import load_config
from qtrain.trainer import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lrs", default="1e-4,1e-3")
    ap.add_argument("--modes", default="raw,pow2")
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("runs/scale_sweep"))
    args = ap.parse_args(argv)

    print("scale_mode,lr,initial_train_loss,final_train_loss,test_acc")
    for mode in args.modes.split(","):
        for lr in args.lrs.split(","):
            out = args.out / f"{mode}_lr{lr}"
            cfg = load_config(ROOT / "configs/desk_qt16.cfg",
                              [f"scale_mode={mode}", f"learning_rate={lr}", f"epochs={args.epochs}",
                               f"output_dir={out}"])
            res = run_experiment(cfg)
            last = res.metrics[-1]
            print(f"{mode},{lr},{res.initial[0]!r},{last.train_loss!r},{last.test_acc!r}", flush=True)


if __name__ == "__main__":
    main()
