"""Command-line interface.

Every configuration key is available as a flag on every command; flags
override environment variables (SEQMIX_<KEY>), which override the config
file, which overrides the built-in defaults. Exit codes: 0 success, 1 runtime
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

from .ablate import replacement_rows, run_grid, stage_rows, window_rows, format_grid_table
from .config import (ENV_PREFIX, PipelineConfig, cli_flag_name, field_type,
                     load_config)
from .errors import ConfigError, SeqmixError
from . import pipeline


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    grp = parser.add_argument_group(
        "config overrides",
        f"generated from the config schema; each key also reads {ENV_PREFIX}<KEY>")
    for f in fields(PipelineConfig):
        flag = cli_flag_name(f)
        t = field_type(f.name)
        help_ = f.metadata.get("help", "")
        if t is bool:
            grp.add_argument(f"--{flag}", dest=f.name, action="store_true",
                             default=None, help=f"{help_} (default {f.default})")
            grp.add_argument(f"--no-{flag}", dest=f.name, action="store_false",
                             default=None, help=argparse.SUPPRESS)
        else:
            grp.add_argument(f"--{flag}", dest=f.name, type=t, default=None,
                             metavar=t.__name__.upper(),
                             help=f"{help_} (default {f.default})")


def _config_from_args(args) -> PipelineConfig:
    overrides = {}
    for f in fields(PipelineConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            overrides[f.name] = val
    return load_config(args.config, overrides=overrides)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqmix",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, **kwargs):
        p = sub.add_parser(name, help=help_, **kwargs)
        p.add_argument("--config", default=None, help="config file (flat key = value lines)")
        _add_config_flags(p)
        return p

    p = add("generate", "generate the synthetic two-domain corpus")
    p.add_argument("--out", required=True, help="output directory for dataset files")

    p = add("pretrain", "source-only training of the pseudo-labeling model")
    p.add_argument("--data", required=True, help="directory produced by `seqmix generate`")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--metrics", default=None, help="write per-epoch metrics (JSON lines)")
    p.add_argument("--verbose", action="store_true")

    p = add("pseudolabel", "assign confidence-filtered pseudo-labels to the target split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint from `seqmix pretrain`")
    p.add_argument("--out", required=True, help="pseudo-label file to write")

    p = add("train", "train the sequence model on mixed windows")
    p.add_argument("--data", required=True)
    p.add_argument("--pseudo", default=None, help="pseudo-label file from `seqmix pseudolabel`")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--metrics", default=None, help="write per-epoch metrics (JSON lines)")
    p.add_argument("--verbose", action="store_true")

    p = add("lm-train", "train the masked label model on source label sequences")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--metrics", default=None)

    p = add("eval", "evaluate a checkpoint on the target split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint from `seqmix train`")
    p.add_argument("--label-model", default=None, help="checkpoint from `seqmix lm-train`")
    p.add_argument("--pred", default=None, help="write per-sample predictions (JSON lines)")
    p.add_argument("--report", default=None, help="write the metrics report (JSON)")

    p = add("ensemble", "average prediction files from several models")
    p.add_argument("--preds", nargs="+", required=True, help="prediction files from `seqmix eval`")
    p.add_argument("--weights", default=None,
                   help="comma-separated model weights (uniform when omitted)")
    p.add_argument("--out", default=None, help="write the fused predictions")
    p.add_argument("--truth", default=None, help="ground-truth sidecar for metrics")
    p.add_argument("--cooc-source", default=None,
                   help="source dataset for co-occurrence filtering of the action argmax")

    p = add("ablate", "run seeded ablation grids and write a report")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report/artifact directory")
    p.add_argument("--grids", default="stages",
                   help="comma list of: stages, windows, replacements (or 'all')")
    p.add_argument("--train-seeds", type=_int_list, default=[1, 2, 3],
                   help="comma-separated training seeds (default 1,2,3)")
    p.add_argument("--windows", type=_int_list, default=[1, 3, 5],
                   help="window sizes for the windows grid (default 1,3,5)")
    p.add_argument("--replacement-counts", type=_int_list, default=[0, 1, 2, 3],
                   help="replacement counts for the replacements grid (default 0,1,2,3)")
    p.add_argument("--verbose", action="store_true")

    return parser


def _cmd_generate(args) -> int:
    cfg = _config_from_args(args)
    info = pipeline.run_generate(cfg, args.out)
    print(json.dumps(info, sort_keys=True, indent=2))
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _config_from_args(args)
    pipeline.run_pretrain(cfg, args.data, args.out, metrics_path=args.metrics,
                          quiet=not args.verbose)
    print(f"wrote {args.out}")
    return 0


def _cmd_pseudolabel(args) -> int:
    cfg = _config_from_args(args)
    info = pipeline.run_pseudolabel(cfg, args.data, args.model, args.out)
    print(json.dumps(info, sort_keys=True, indent=2))
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    pipeline.run_train(cfg, args.data, args.out, pseudo_path=args.pseudo,
                       metrics_path=args.metrics, quiet=not args.verbose)
    print(f"wrote {args.out}")
    return 0


def _cmd_lm_train(args) -> int:
    cfg = _config_from_args(args)
    pipeline.run_lm_train(cfg, args.data, args.out, metrics_path=args.metrics)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    report = pipeline.run_eval(cfg, args.data, args.model, lm_path=args.label_model,
                               pred_path=args.pred, report_path=args.report)
    print(f"{'metric':10s} {'top-1':>8s}")
    for key in ("verb_top1", "noun_top1", "action_top1"):
        print(f"{key.split('_')[0]:10s} {report[key]:8.4f}")
    if args.report:
        print(f"report written to {args.report}")
    return 0


def _cmd_ensemble(args) -> int:
    weights = None
    if args.weights:
        weights = [float(t) for t in args.weights.split(",")]
    cfg = _config_from_args(args)
    report = pipeline.run_ensemble(args.preds, out_path=args.out, truth_path=args.truth,
                                   weights=weights, cooc_source_path=args.cooc_source,
                                   use_cooc=cfg.use_cooc and args.cooc_source is not None,
                                   factor=cfg.cooccurrence_factor)
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def _cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    names = [g.strip() for g in args.grids.split(",") if g.strip()]
    if names == ["all"]:
        names = ["stages", "windows", "replacements"]
    rows = []
    for name in names:
        if name == "stages":
            rows.extend(stage_rows(cfg))
        elif name == "windows":
            rows.extend(window_rows(cfg, args.windows))
        elif name == "replacements":
            rows.extend(replacement_rows(cfg, args.replacement_counts))
        else:
            raise ConfigError("grids", f"unknown grid {name!r}")
    report = run_grid(cfg, args.data, args.out, rows, args.train_seeds,
                      quiet=not args.verbose)
    print(format_grid_table(report))
    print(f"report written to {args.out}/report.json")
    failed = [r for r in report["rows"] if r["status"] == "failed"]
    return 1 if failed else 0


_COMMANDS = {
    "generate": _cmd_generate,
    "pretrain": _cmd_pretrain,
    "pseudolabel": _cmd_pseudolabel,
    "train": _cmd_train,
    "lm-train": _cmd_lm_train,
    "eval": _cmd_eval,
    "ensemble": _cmd_ensemble,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"seqmix: config error: {exc}", file=sys.stderr)
        return 2
    except (SeqmixError, OSError, ValueError) as exc:
        print(f"seqmix: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
