"""``swinsight`` command line.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import __version__, datapipe, runner
from .config import load_config
from .errors import ConfigError, SwinsightError

logger = logging.getLogger("swinsight")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or abs(sum(parts) - 1) > 1e-9:
        raise argparse.ArgumentTypeError("ratios must be three nonnegative numbers summing to 1")
    return parts


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="swinsight", description="Swin-Transformer CGI vs authentic image detection.")
    p.add_argument("--version", action="version", version=f"swinsight {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fixture", help="write a synthetic two-class image set and manifest")
    f.add_argument("--out", required=True, type=Path)
    f.add_argument("--n", required=True, type=_positive_int, help="images per class")
    f.add_argument("--size", type=_positive_int, default=32)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--dataset", default="FIX", help="dataset id written to the manifest")
    f.add_argument("--ratios", type=_ratios, default=(0.7, 0.15, 0.15), help="train,val,test")

    t = sub.add_parser("train", help="train one model from a config file")
    t.add_argument("--config", required=True, type=Path)
    t.add_argument("--dataset", help="train on this dataset id only (default: all, balanced)")
    t.add_argument("--out", type=Path, help="output directory (default: the config's [output] dir)")

    e = sub.add_parser("eval", help="score a checkpoint on a manifest split")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--manifest", required=True, type=Path)
    e.add_argument("--split", default="test", choices=datapipe.SPLITS)
    e.add_argument("--out", required=True, type=Path)

    m = sub.add_parser("matrix", help="train every configured set and evaluate on every test split")
    m.add_argument("--config", required=True, type=Path)
    m.add_argument("--out", type=Path)

    s = sub.add_parser("tsne", help="embed extracted features in 2-D")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--features", type=Path, help="CSV with label,dataset,f0,f1,... columns")
    s.add_argument("--manifest", type=Path)
    s.add_argument("--split", default="test", choices=datapipe.SPLITS)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iterations", type=_positive_int, default=1000)
    s.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("report", help="summarise a run directory")
    r.add_argument("--run", required=True, type=Path)
    return p


def _threads():
    value = os.environ.get("SWINSIGHT_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"SWINSIGHT_THREADS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"SWINSIGHT_THREADS must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _dispatch(args) -> int:
    if args.command == "fixture":
        try:
            datapipe.make_synthetic_fixture(
                args.out, args.n, image_size=args.size, seed=args.seed, dataset=args.dataset, ratios=args.ratios
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        print(args.out / "manifest.csv")
    elif args.command == "train":
        cfg = load_config(args.config)
        out = args.out or cfg.out_dir
        outcome = runner.run_train(cfg, args.dataset, out)
        last = outcome.trace.records[-1]
        print(f"trained {len(outcome.trace)} epochs; val_acc={last.val_acc!r}")
        print(Path(out) / "checkpoint.swck")
    elif args.command == "eval":
        ev = runner.run_eval(args.checkpoint, args.manifest, args.split, args.out)
        print(",".join(runner.REPORT_HEADER[2:]))
        print(",".join(ev.report.rounded().values()))
    elif args.command == "matrix":
        cfg = load_config(args.config)
        result = runner.run_matrix(cfg, args.out)
        failed = [c for c in result.cells if c.status != "ok"]
        print(Path(result.out_dir) / "matrix.csv")
        if failed:
            for c in failed:
                print(f"{c.train_set} -> {c.test_set}: {c.status}", file=sys.stderr)
            return EXIT_DATA
    elif args.command == "tsne":
        if args.features is not None:
            feats, labels, datasets = runner.load_feature_csv(args.features)
            runner.embed_features(feats, labels, datasets, args.out, args.perplexity, args.seed, args.iterations)
        else:
            if args.manifest is None:
                raise UsageError("tsne: --manifest is required with --checkpoint")
            runner.run_tsne_on_checkpoint(
                args.checkpoint, args.manifest, args.out, args.split, args.perplexity, args.seed, args.iterations
            )
        print(Path(args.out) / "embedding.csv")
    elif args.command == "report":
        if not args.run.is_dir():
            raise ConfigError(f"run directory not found: {args.run}")
        _, missing = runner.write_summary(args.run)
        print(args.run / "summary.md")
        for item in missing:
            print(f"missing: {item}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads():
            return _dispatch(args)
    except UsageError as exc:
        print(f"swinsight: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SwinsightError as exc:
        print(f"swinsight: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"swinsight: io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
