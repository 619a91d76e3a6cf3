"""Run a set of configs and collect final metrics into one summary CSV.

    python3 scripts/run_table.py configs/mnist_qt*.cfg configs/mnist_classical.cfg --out runs/table.csv

Configs whose dataset is missing under $QT_DATA_DIR are reported and skipped.
"""
import argparse
import csv
import sys
from pathlib import Path

from qtrain.config import load_config
from qtrain.trainer import DivergenceError, dump_divergence, run_experiment

FIELDS = ["config", "method", "dataset", "trainable", "param_ratio", "epochs",
          "train_loss", "test_loss", "train_acc", "test_acc", "gen_error", "status"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="+", type=Path)
    ap.add_argument("--out", type=Path, default=Path("runs/table.csv"))
    ap.add_argument("--set", action="append", default=[], help="override applied to every config")
    args = ap.parse_args(argv)

    rows = []
    for path in args.configs:
        cfg = load_config(path, args.set)
        row = dict(config=path.stem, method=cfg.method, dataset=cfg.dataset, status="ok")
        try:
            res = run_experiment(cfg)
        except FileNotFoundError as e:
            print(f"{path.stem}: skipped ({e})", file=sys.stderr)
            continue
        except DivergenceError as e:
            dump_divergence(e, cfg.output_dir)
            rows.append({**row, "status": f"diverged@{e.epoch}"})
            continue
        last = res.metrics[-1]
        row.update(trainable=res.report.trainable, param_ratio=f"{res.report.ratio:.6f}", epochs=last.epoch,
                   train_loss=last.train_loss, test_loss=last.test_loss, train_acc=last.train_acc,
                   test_acc=last.test_acc, gen_error=last.gen_error)
        rows.append(row)
        print(f"{path.stem}: test_acc={last.test_acc:.4f} gen_error={last.gen_error:+.4f}")

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, FIELDS)
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
