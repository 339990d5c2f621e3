"""Command line entry point: ``ptrca <subcommand> [flags]``.

Exit status is 0 on success, 1 for usage errors and 2 for data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from .ingest import IngestError
from .pipeline import HELDOUT, RunConfig, Workspace, coerce_config, load_config_file
from .regress import TrainingError
from .route2vec import EncodingError
from .attribute import AttributionError, rank_processes
from .synth import SynthConfig, generate_fab

COMMANDS = ("simulate", "ingest", "kernel", "embed", "train", "predict", "attribute", "ablation")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _bounded(kind, lo=None, hi=None, lo_open=False, hi_open=False):
    def convert(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value {text!r}") from None
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise argparse.ArgumentTypeError(f"must be {'>' if lo_open else '>='} {lo}, got {text}")
        if hi is not None and (v >= hi if hi_open else v > hi):
            raise argparse.ArgumentTypeError(f"must be {'<' if hi_open else '<='} {hi}, got {text}")
        return v
    return convert


def _float_list(text):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("weights must be >= 0")
    return text


def _step_size(text):
    if text == "auto":
        return text
    return str(_bounded(float, 0, lo_open=True)(text))


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("ingest")
    g.add_argument("--history", help="history CSV (default: WORKDIR/history.csv)")
    g.add_argument("--labels", help="label CSV (default: WORKDIR/labels.csv)")
    g.add_argument("--lenient", dest="parse_mode", action="store_const", const="lenient",
                   help="skip malformed rows instead of failing")
    g.add_argument("--schema", help="comma-separated attribute names forming the token")
    g.add_argument("--holdout", type=_bounded(float, 0, 1, hi_open=True), help="held-out wafer fraction")
    g = p.add_argument_group("kernel")
    g.add_argument("--kernel-p", dest="kernel_p", type=_bounded(int, 1), help="maximum subsequence length")
    g.add_argument("--kernel-lambda", dest="kernel_lambda", type=_bounded(float, 0, 1, lo_open=True),
                   help="gap decay in (0, 1]")
    g.add_argument("--kernel-mu", dest="kernel_mu", type=_float_list, help="length weights, comma list")
    g = p.add_argument_group("embedding")
    g.add_argument("--embedding", choices=("kernel", "onehot", "constant"))
    g.add_argument("--dim", type=_bounded(int, 1), help="embedding dimension for kernel mode")
    g.add_argument("--first-step-dt", dest="first_step_dt", type=_bounded(float, 0),
                   help="hours of waiting credited to the first step")
    g.add_argument("--unknown-tokens", dest="unknown_tokens", choices=("error", "zero"))
    g = p.add_argument_group("training")
    g.add_argument("--nu", type=_bounded(float, 0), help="L1 strength")
    g.add_argument("--max-epochs", dest="max_epochs", type=_bounded(int, 1))
    g.add_argument("--step-size", dest="step_size", type=_step_size, help="'auto' or a fixed positive step")
    g.add_argument("--tol", type=_bounded(float, 0, lo_open=True))
    g.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--workdir", help="artifact directory (default: $PTR_WORKDIR or .)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ptrca", description="Partial trajectory regression for wafer defect root-cause analysis.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic fab dataset")
    p.add_argument("--out", help="output directory (default: WORKDIR)")
    p.add_argument("--n-wafers", dest="n_wafers", type=_bounded(int, 1))
    p.add_argument("--noise-sd", dest="noise_sd", type=_bounded(float, 0))
    p.add_argument("--lot-effect-sd", dest="lot_effect_sd", type=_bounded(float, 0))
    p.add_argument("--culprit-wait-hours", dest="culprit_wait_hours", type=_bounded(float, 0))
    p.add_argument("--culprit-fraction", dest="culprit_fraction", type=_bounded(float, 0, 1))
    p.add_argument("--response", choices=("log", "quadratic"))

    helps = {
        "ingest": "parse history + labels, build the token dictionary",
        "kernel": "compute the token kernel matrix",
        "embed": "compute token embeddings",
        "train": "fit the linear head",
        "predict": "predict defect density for every wafer",
        "attribute": "per-step attribution reports",
        "ablation": "compare constant / one-hot / kernel embeddings",
    }
    for name in COMMANDS[1:]:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        _add_pipeline_flags(p)
        if name == "attribute":
            p.add_argument("--wafer", action="append", help="wafer id (repeatable); default: all held-out wafers")
            p.add_argument("--split", choices=("train", "heldout", "all"), default="heldout")
            p.add_argument("--top", type=_bounded(int, 1), default=3, help="steps to list per wafer")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(workdir=os.environ.get("PTR_WORKDIR", "."))
    if args.config:
        try:
            cfg = coerce_config(load_config_file(args.config), cfg)
        except KeyError as exc:
            raise UsageError(f"unknown config key {exc.args[0]!r} in {args.config}") from None
        except (ValueError, OSError) as exc:
            raise UsageError(f"bad config file {args.config}: {exc}") from None
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)
                 if getattr(args, f.name, None) is not None}
    cfg = replace(cfg, **overrides)
    try:
        cfg.kernel_params()
        cfg.train_config()
        cfg.temporal()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _simulate(args, cfg: RunConfig) -> None:
    kw = {k: getattr(args, k) for k in ("n_wafers", "noise_sd", "lot_effect_sd", "culprit_wait_hours",
                                        "culprit_fraction", "response") if getattr(args, k) is not None}
    synth_cfg = SynthConfig(seed=cfg.seed, **kw)
    out = Path(args.out) if args.out else cfg.root
    data = generate_fab(synth_cfg, out)
    print(f"wrote {len(data.trajectories)} wafers to {out} (culprit: {', '.join(data.truth.culprit_tokens)})")


def _run(args, cfg: RunConfig) -> None:
    cmd = args.command
    if cmd == "simulate":
        return _simulate(args, cfg)
    ws = Workspace(cfg)
    ws.ingest()
    cfg.root.mkdir(parents=True, exist_ok=True)
    (cfg.root / f"{cmd}.resolved.conf").write_text(cfg.snapshot(), encoding="utf-8")
    if cmd == "ingest":
        print(f"{len(ws.dataset)} wafers, vocabulary {ws.dictionary.size}, "
              f"{ws.dataset.splits.count(HELDOUT)} held out, {ws.dataset.n_dropped} dropped")
    elif cmd == "kernel":
        K = ws.kernel(force=True)
        print(f"kernel matrix {K.size}x{K.size} -> {cfg.root / 'kernel.csv'}")
    elif cmd == "embed":
        emb = ws.embedding(force=True)
        print(f"{emb.mode} embedding, D={emb.dim} -> {cfg.root / 'embedding.csv'}")
    elif cmd == "train":
        ws.train(force=True)
        m = json.loads((cfg.root / "metrics.json").read_text())
        for split in ("train", "heldout"):
            if split in m:
                print(f"{split:8s} r={m[split]['pearson_r']:.4f} rmse={m[split]['rmse']:.4f} n={m[split]['n']}")
    elif cmd == "predict":
        print(f"predictions -> {ws.predict()}")
    elif cmd == "attribute":
        split = None if args.split == "all" else args.split
        reports, fleet = ws.attribute(args.wafer, split)
        for rep in reports[:20]:
            top = ", ".join(f"k={s.k} alpha={s.alpha:+.4f}" for s in rank_processes(rep, args.top))
            print(f"{rep.wafer_id}: f(z_0)={rep.intercept:.4f} f(z_L)={rep.prediction:.4f} top: {top}")
        if len(reports) > 20:
            print(f"... {len(reports) - 20} more reports in {cfg.root / 'reports'}")
        if fleet is not None:
            print("top tokens by mean alpha:")
            for row in fleet.by_mean()[:args.top]:
                print(f"  {row.token}  n={row.n} mean_alpha={row.mean_alpha:+.4f}")
    elif cmd == "ablation":
        results = ws.ablation()
        print(f"{'embedding':10s} {'pearson_r':>9s} {'rmse':>8s} {'n':>5s}")
        for mode, m in results.items():
            print(f"{mode:10s} {m.pearson_r:9.4f} {m.rmse:8.4f} {m.n:5d}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        cfg = resolve_config(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args, cfg)
    except (IngestError, EncodingError, TrainingError, AttributionError, ValueError, KeyError, OSError) as exc:
        print(f"ptrca {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


def run(argv) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
