"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 divergence (non-finite loss),
3 I/O or parse error, 4 a gradient check outside tolerance.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3, 4


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None):
        overrides.append(f"output_dir={args.out}")
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    from .trainer import run_experiment

    cfg = _config(args)
    result = run_experiment(cfg)
    print(result.report.text(), end="")
    if result.metrics:
        last = result.metrics[-1]
        print(f"final: train_loss={last.train_loss:.6f} test_loss={last.test_loss:.6f} "
              f"train_acc={last.train_acc:.4f} test_acc={last.test_acc:.4f}")
    print(f"outputs: {cfg.output_dir}")
    return EXIT_OK


def cmd_count_params(args) -> int:
    from .trainer import param_report

    rep = param_report(_config(args))
    print(rep.text(), end="")
    return EXIT_OK


def _load_eval_data(args, exp):
    from .data import load_named

    if args.config or args.set:
        from .evaluation import load_data

        train, test = load_data(_config(args))
        return train if args.split == "train" else test
    dataset = args.dataset or exp.provenance.get("dataset")
    if not dataset:
        raise ConfigError("dataset: not given and not recorded in the export")
    return load_named(dataset, args.split)


def _logits(exp, images):
    if exp.architecture.startswith("qcml:"):
        from .trainer import qcml_logits  # hybrid models need the simulator

        return qcml_logits(exp, images)
    from .export import model_from_export
    from .models import forward

    return forward(model_from_export(exp), images)


def cmd_eval(args) -> int:
    from .evaluation import loss_acc
    from .export import read_export

    exp = read_export(args.model)
    ds = _load_eval_data(args, exp)
    loss, acc = loss_acc(_logits(exp, ds.images), ds.labels)
    print(f"loss={loss!r} acc={acc!r} n={len(ds)}")
    return EXIT_OK


def _read_images(path: Path) -> np.ndarray:
    from .data import IDX_IMAGES_MAGIC, _read_bytes, parse_idx

    if path.suffix == ".npy":
        arr = np.load(path)
        return arr[:, None] if arr.ndim == 3 else arr
    raw = parse_idx(_read_bytes(path), IDX_IMAGES_MAGIC, path)
    return (raw.astype(np.float64) / 255.0)[:, None]


def cmd_infer(args) -> int:
    from .export import read_export

    exp = read_export(args.model)
    logits = _logits(exp, _read_images(Path(args.input)))
    pred = np.argmax(logits, axis=1)
    text = "\n".join(str(int(p)) for p in pred) + ("\n" if len(pred) else "")
    if args.out:
        from .export import atomic_write

        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export_info(args) -> int:
    from .export import read_export

    exp = read_export(args.model)
    print(f"architecture: {exp.architecture}")
    print(f"version: {exp.version}")
    print(f"M: {exp.M}")
    print(f"provenance: {json.dumps(exp.provenance, sort_keys=True)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import run_all

    results = run_all(range(args.seeds))
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qtrain", description="Quantum-Train experiments")
    ap.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p, out=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int)
        if out:
            p.add_argument("--out", help="output directory")
        return p

    with_config(sub.add_parser("train", help="run one experiment")).set_defaults(fn=cmd_train)
    with_config(sub.add_parser("count-params", help="print the parameter report"),
                out=False).set_defaults(fn=cmd_count_params)

    p = with_config(sub.add_parser("eval", help="loss/accuracy of an exported model"), out=False)
    p.add_argument("model")
    p.add_argument("--dataset")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="predicted labels for IDX or .npy images")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("export-info", help="describe an export file")
    p.add_argument("model")
    p.set_defaults(fn=cmd_export_info)

    p = sub.add_parser("gradcheck", help="adjoint / parameter-shift / finite-difference agreement")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    from .data import ParseError
    from .export import ExportError

    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ExportError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as e:
        if type(e).__name__ == "DivergenceError":
            print(f"diverged: {e}", file=sys.stderr)
            return EXIT_DIVERGED
        raise


if __name__ == "__main__":
    sys.exit(main())
