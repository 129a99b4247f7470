"""Seeded ablation grids: stage toggles, window sizes, replacement counts.

Each cell is an independent (config, seed) training + evaluation over the
same generated corpus. Artifacts shared between cells of one seed (the
pseudo-labeling model, the pseudo-label file, the label model) are built once
and reused; identical training configurations are trained once and the
checkpoint is shared. Cell failures are recorded and do not stop the grid.
"""

from __future__ import annotations

import dataclasses
import json
import time
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig, config_to_dict
from .errors import ConfigError
from .pipeline import run_eval, run_lm_train, run_pretrain, run_pseudolabel, run_train

# config fields that do not influence training, only evaluation
EVAL_ONLY_FIELDS = ("use_lm", "use_cooc", "lm_beta", "top_k",
                    "cooccurrence_factor", "enumeration_cap", "eval_batch_size")


@dataclass(frozen=True)
class GridRow:
    grid: str
    name: str
    overrides: dict


def stage_rows(cfg: PipelineConfig) -> list[GridRow]:
    """Component build-up in pipeline order, from per-sample baseline to full."""
    off = {"use_mixing": False, "use_dc": False, "use_lm": False, "use_cooc": False}
    return [
        GridRow("stages", "baseline", {**off, "window_size": 1, "num_replacements": 0}),
        GridRow("stages", "sequence", dict(off)),
        GridRow("stages", "sequence+mixing", {**off, "use_mixing": True}),
        GridRow("stages", "sequence+mixing+dc", {**off, "use_mixing": True, "use_dc": True}),
        GridRow("stages", "sequence+mixing+dc+lm",
                {"use_mixing": True, "use_dc": True, "use_lm": True, "use_cooc": False}),
        GridRow("stages", "full", {}),
    ]


def window_rows(cfg: PipelineConfig, windows: list[int]) -> list[GridRow]:
    """Sequence-only training at several window sizes."""
    off = {"use_mixing": False, "use_dc": False, "use_lm": False, "use_cooc": False,
           "num_replacements": 0}
    return [GridRow("windows", f"w={w}", {**off, "window_size": w}) for w in windows]


def replacement_rows(cfg: PipelineConfig, counts: list[int]) -> list[GridRow]:
    """Mixing with n replacements (n=0 degenerates to sequence-only), no
    domain classifier, mirroring the replacement sweep layout."""
    out = []
    for n in counts:
        ov = {"use_dc": False, "use_lm": False, "use_cooc": False,
              "num_replacements": n, "use_mixing": n > 0}
        out.append(GridRow("replacements", f"n={n}", ov))
    return out


def _train_key(cfg: PipelineConfig) -> str:
    d = config_to_dict(cfg)
    for f in EVAL_ONLY_FIELDS:
        d.pop(f)
    return json.dumps(d, sort_keys=True)


def _toggle_summary(cfg: PipelineConfig) -> dict:
    return {
        "window_size": cfg.window_size,
        "num_replacements": cfg.num_replacements if cfg.use_mixing else 0,
        "mixing": cfg.use_mixing,
        "dc": cfg.use_dc,
        "lm": cfg.use_lm,
        "cooc": cfg.use_cooc,
    }


def run_grid(cfg: PipelineConfig, data_dir, out_dir, rows: list[GridRow],
             seeds: list[int], quiet: bool = True) -> dict:
    if not rows:
        raise ConfigError("grid", "the requested ablation grid is empty")
    if not seeds:
        raise ConfigError("seeds", "at least one seed is required")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shared_root = out / "shared"
    cells_root = out / "cells"
    report_rows = []
    trained: dict[tuple[int, str], Path] = {}
    for row in rows:
        row_cfg = dataclasses.replace(cfg, **row.overrides).validate()
        per_seed = {}
        errors = {}
        for seed in seeds:
            cell_cfg = dataclasses.replace(row_cfg, seed=seed)
            cell_dir = cells_root / row.grid / row.name.replace("=", "") / f"seed{seed}"
            try:
                per_seed[str(seed)] = _run_cell(cfg, cell_cfg, data_dir, shared_root,
                                                cell_dir, trained, quiet)
            except Exception as exc:  # cell isolation: record and continue
                errors[str(seed)] = f"{type(exc).__name__}: {exc}"
                if not quiet:
                    traceback.print_exc()
        entry = {
            "grid": row.grid,
            "name": row.name,
            "toggles": _toggle_summary(dataclasses.replace(cfg, **row.overrides)),
            "seeds": per_seed,
            "errors": errors,
            "status": "ok" if not errors else ("failed" if not per_seed else "partial"),
        }
        if per_seed:
            for metric in ("verb_top1", "noun_top1", "action_top1"):
                vals = np.array([m[metric] for m in per_seed.values()])
                entry[f"{metric}_mean"] = float(vals.mean())
                entry[f"{metric}_std"] = float(vals.std())
        report_rows.append(entry)
    report = {"seeds": [str(s) for s in seeds], "rows": report_rows,
              "config": config_to_dict(cfg)}
    _write_report(out, report)
    return report


def _shared_artifacts(base_cfg: PipelineConfig, cell_cfg: PipelineConfig, data_dir,
                      shared_root: Path, quiet: bool):
    """Per-seed pretrain/pseudo-label/label-model artifacts, built lazily.

    Shared artifacts always use the base window size, which is what the
    mixing and label-model cells train with.
    """
    seed_dir = shared_root / f"seed{cell_cfg.seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    shared_cfg = dataclasses.replace(base_cfg, seed=cell_cfg.seed)
    pretrain = seed_dir / "pretrain.ckpt"
    pseudo = seed_dir / "pseudo.jsonl"
    label_model = seed_dir / "label_model.ckpt"
    if cell_cfg.use_mixing and not pseudo.exists():
        if not pretrain.exists():
            run_pretrain(shared_cfg, data_dir, pretrain, quiet=quiet)
        run_pseudolabel(shared_cfg, data_dir, pretrain, pseudo)
    if cell_cfg.use_lm and not label_model.exists():
        run_lm_train(shared_cfg, data_dir, label_model)
    return (pseudo if cell_cfg.use_mixing else None,
            label_model if cell_cfg.use_lm else None)


def _run_cell(base_cfg: PipelineConfig, cell_cfg: PipelineConfig, data_dir,
              shared_root: Path, cell_dir: Path, trained: dict, quiet: bool) -> dict:
    t0 = time.time()
    cell_dir.mkdir(parents=True, exist_ok=True)
    pseudo, label_model = _shared_artifacts(base_cfg, cell_cfg, data_dir,
                                            shared_root, quiet)
    key = (cell_cfg.seed, _train_key(cell_cfg))
    ckpt = trained.get(key)
    if ckpt is None:
        ckpt = cell_dir / "model.ckpt"
        run_train(cell_cfg, data_dir, ckpt, pseudo_path=pseudo,
                  metrics_path=cell_dir / "train_metrics.jsonl", quiet=quiet)
        trained[key] = ckpt
    report = run_eval(cell_cfg, data_dir, ckpt, lm_path=label_model,
                      report_path=cell_dir / "eval.json")
    out = {k: report[k] for k in ("verb_top1", "noun_top1", "action_top1")}
    out["seconds"] = round(time.time() - t0, 2)
    out["checkpoint"] = str(ckpt)
    return out


def format_grid_table(report: dict) -> str:
    """Readable toggle table with one row per grid configuration."""
    headers = ["grid", "row", "w", "repl", "mix", "dc", "lm", "cooc",
               "verb", "noun", "action", "status"]
    lines = []
    for row in report["rows"]:
        t = row["toggles"]
        mark = lambda b: "yes" if b else "-"  # noqa: E731
        if row["seeds"]:
            fmt = lambda m: f"{row[m + '_mean']:.3f}±{row[m + '_std']:.3f}"  # noqa: E731
            vals = [fmt("verb_top1"), fmt("noun_top1"), fmt("action_top1")]
        else:
            vals = ["-", "-", "-"]
        lines.append([row["grid"], row["name"], str(t["window_size"]),
                      str(t["num_replacements"]), mark(t["mixing"]), mark(t["dc"]),
                      mark(t["lm"]), mark(t["cooc"]), *vals, row["status"]])
    widths = [max(len(headers[i]), *(len(r[i]) for r in lines)) if lines else len(headers[i])
              for i in range(len(headers))]
    def render(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [render(headers), render(["-" * w for w in widths])]
    out.extend(render(r) for r in lines)
    return "\n".join(out)


def _write_report(out: Path, report: dict) -> None:
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out / "report.csv", "w", encoding="utf-8") as fh:
        fh.write("grid,row,window,replacements,mixing,dc,lm,cooc,"
                 "verb_mean,verb_std,noun_mean,noun_std,action_mean,action_std,status\n")
        for row in report["rows"]:
            t = row["toggles"]
            if row["seeds"]:
                stats = [f"{row[m + s]:.6f}" for m in
                         ("verb_top1", "noun_top1", "action_top1") for s in ("_mean", "_std")]
            else:
                stats = [""] * 6
            fh.write(",".join([row["grid"], row["name"], str(t["window_size"]),
                               str(t["num_replacements"]), str(int(t["mixing"])),
                               str(int(t["dc"])), str(int(t["lm"])), str(int(t["cooc"])),
                               *stats, row["status"]]) + "\n")
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(format_grid_table(report) + "\n")
