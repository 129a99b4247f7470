"""Stage implementations behind the CLI commands.

Every stage reads and writes only the documented file formats, so each one
can be re-run (or tested) in isolation, and the ablation grid is just a loop
over these functions with different config overrides.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path

import numpy as np

from . import lm as lm_mod
from .config import PipelineConfig, config_to_dict, save_config
from .corpus import generate_corpus, grammar_from_config
from .data import Dataset
from .dataio import (read_dataset, read_predictions, read_pseudo_labels, read_sidecar,
                     write_dataset, write_predictions, write_pseudo_labels, write_sidecar)
from .errors import MissingArtifactError
from .mixer import build_windows
from .predictor import (WindowBatcher, build_windows as _bw,  # noqa: F401
                        load_predictor, predict_dataset, save_predictor, train_predictor)
from .pseudo import pseudo_label
from .refine import build_cooccurrence, evaluate
from .rng import derive_rng

SOURCE_FILE = "source.seqds"
TARGET_FILE = "target.seqds"
TRUTH_FILE = "target_truth.seqtruth"
CONFIG_SNAPSHOT = "config.used"


def _require(path, producer: str):
    if not Path(path).exists():
        raise MissingArtifactError(f"{path} not found; produce it with `seqmix {producer}`")
    return Path(path)


def write_metrics(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def run_generate(cfg: PipelineConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grammar = grammar_from_config(cfg, derive_rng(cfg.seed, "grammar"))
    source, target, truth = generate_corpus(grammar, derive_rng(cfg.seed, "corpus"))
    write_dataset(source, out / SOURCE_FILE)
    write_dataset(target, out / TARGET_FILE)
    write_sidecar(truth, cfg.num_verbs, cfg.num_nouns, out / TRUTH_FILE)
    save_config(cfg, out / CONFIG_SNAPSHOT)
    return {
        "source": str(out / SOURCE_FILE),
        "target": str(out / TARGET_FILE),
        "truth": str(out / TRUTH_FILE),
        "source_samples": len(source.samples),
        "target_samples": len(target.samples),
        "actions": len(grammar.action_set),
    }


def load_data(cfg: PipelineConfig, data_dir, need_truth: bool = False):
    data = Path(data_dir)
    expected = tuple(m.split(":")[0].strip() for m in cfg.modalities.split(","))
    source = read_dataset(_require(data / SOURCE_FILE, "generate"), expected)
    target = read_dataset(_require(data / TARGET_FILE, "generate"), expected)
    truth = None
    if need_truth:
        truth = read_sidecar(_require(data / TRUTH_FILE, "generate"))
    return source, target, truth


def run_pretrain(cfg: PipelineConfig, data_dir, out_path, metrics_path=None,
                 quiet: bool = True) -> None:
    """Source-only training of the model that later assigns pseudo-labels."""
    source, target, truth = load_data(cfg, data_dir, need_truth=False)
    pre_cfg = dataclasses.replace(cfg, use_mixing=False, use_dc=False,
                                  epochs=max(cfg.pretrain_epochs, 1))
    metrics: list = []
    model = train_predictor(pre_cfg, source, None, [], seed=cfg.seed,
                            metrics_out=metrics, quiet=quiet)
    save_predictor(out_path, model, cfg, source.modalities)
    if metrics_path:
        write_metrics(metrics_path, metrics)


def run_pseudolabel(cfg: PipelineConfig, data_dir, model_path, out_path) -> dict:
    source, target, _ = load_data(cfg, data_dir)
    model, _, _ = load_predictor(_require(model_path, "pretrain"))
    batcher = WindowBatcher(source, target)
    preds = predict_dataset(model, target, batcher, batch_size=cfg.eval_batch_size)
    labels = pseudo_label(preds.sample_ids, preds.central_verb, preds.central_noun,
                          cfg.confidence_threshold)
    write_pseudo_labels(out_path, labels)
    return {
        "kept": len(labels),
        "total": len(preds.sample_ids),
        "distinct_classes": len({(pl.verb, pl.noun) for pl in labels}),
    }


def run_train(cfg: PipelineConfig, data_dir, out_path, pseudo_path=None,
              metrics_path=None, quiet: bool = True) -> None:
    source, target, truth = load_data(cfg, data_dir, need_truth=True)
    labels = []
    if pseudo_path is not None:
        labels = read_pseudo_labels(_require(pseudo_path, "pseudolabel"))
    metrics: list = []
    model = train_predictor(cfg, source, target, labels, seed=cfg.seed,
                            val_truth=truth, metrics_out=metrics, quiet=quiet)
    save_predictor(out_path, model, cfg, source.modalities)
    if metrics_path:
        write_metrics(metrics_path, metrics)


def run_lm_train(cfg: PipelineConfig, data_dir, out_path, metrics_path=None) -> None:
    source, _, _ = load_data(cfg, data_dir)
    sequences = lm_mod.label_sequences_from_dataset(source, cfg.window_size)
    metrics: list = []
    model = lm_mod.lm_train(sequences, cfg, seed=cfg.seed, metrics_out=metrics)
    lm_mod.save_label_model(out_path, model, cfg)
    if metrics_path:
        write_metrics(metrics_path, metrics)


def run_eval(cfg: PipelineConfig, data_dir, model_path, lm_path=None,
             pred_path=None, report_path=None) -> dict:
    """Evaluate a checkpoint on the target split; optionally rescore with the
    label model and filter the action argmax with source co-occurrence."""
    source, target, truth = load_data(cfg, data_dir, need_truth=True)
    model, _, _ = load_predictor(_require(model_path, "train"))
    if model.window_size != cfg.window_size:
        raise MissingArtifactError(
            f"checkpoint {model_path} was trained with window_size={model.window_size} "
            f"but the evaluation requests {cfg.window_size}; retrain with `seqmix train` "
            "or pass the matching --window")
    batcher = WindowBatcher(source, target)
    preds = predict_dataset(model, target, batcher, batch_size=cfg.eval_batch_size)
    cooc = build_cooccurrence(source)
    if cfg.use_lm:
        label_model, _ = lm_mod.load_label_model(_require(lm_path, "lm-train"))
        if label_model.window_size != cfg.window_size:
            raise MissingArtifactError(
                f"label model {lm_path} has window_size={label_model.window_size}, "
                f"expected {cfg.window_size}; produce one with `seqmix lm-train`")
        results = lm_mod.rescore_batch(
            preds.seq_verb, preds.seq_noun, preds.central_verb, preds.central_noun,
            label_model, cooc.support_ids(), cfg.top_k, cfg.lm_beta, cfg.enumeration_cap)
        predictions = {sid: (r.verb_probs, r.noun_probs)
                       for sid, r in zip(preds.sample_ids, results)}
    else:
        predictions = {sid: (preds.central_verb[i], preds.central_noun[i])
                       for i, sid in enumerate(preds.sample_ids)}
    if pred_path:
        write_predictions(pred_path, ((sid,) + predictions[sid] for sid in preds.sample_ids))
    metrics = evaluate(predictions, truth,
                       cooc=cooc if cfg.use_cooc else None,
                       factor=cfg.cooccurrence_factor)
    report = dict(metrics)
    report["num_samples"] = len(predictions)
    report["settings"] = {
        "window_size": cfg.window_size,
        "num_replacements": cfg.num_replacements,
        "use_mixing": cfg.use_mixing,
        "use_dc": cfg.use_dc,
        "use_lm": cfg.use_lm,
        "use_cooc": cfg.use_cooc,
        "lm_beta": cfg.lm_beta,
        "top_k": cfg.top_k,
        "cooccurrence_factor": cfg.cooccurrence_factor,
    }
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return report


def run_ensemble(pred_paths: list, out_path=None, truth_path=None,
                 weights: list[float] | None = None,
                 cooc_source_path=None, use_cooc: bool = False,
                 factor: float = 0.01) -> dict:
    from .refine import ensemble as _ensemble

    sets = [read_predictions(_require(p, "eval")) for p in pred_paths]
    fused = _ensemble(sets, weights)
    ordered = sorted(fused)
    if out_path:
        write_predictions(out_path, ((sid,) + fused[sid] for sid in ordered))
    report = {"num_models": len(sets), "num_samples": len(fused)}
    if truth_path is not None:
        truth = read_sidecar(_require(truth_path, "generate"))
        cooc = None
        if use_cooc and cooc_source_path is not None:
            cooc = build_cooccurrence(read_dataset(_require(cooc_source_path, "generate")))
        report.update(evaluate(fused, truth, cooc=cooc, factor=factor))
    return report
