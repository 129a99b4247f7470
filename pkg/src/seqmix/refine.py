"""Co-occurrence pruning, model ensembling, and top-1 evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset


@dataclass(frozen=True)
class CoOccurrenceMatrix:
    """Counts of (verb, noun) label pairs in the source training data."""

    counts: np.ndarray  # (V, N) non-negative ints

    def support_ids(self) -> np.ndarray:
        """Sorted action ids (verb * N + noun) of the pairs seen at least once."""
        v, n = np.nonzero(self.counts)
        return np.sort(v * self.counts.shape[1] + n).astype(np.int64)


def build_cooccurrence(source: Dataset) -> CoOccurrenceMatrix:
    counts = np.zeros((source.num_verbs, source.num_nouns), dtype=np.int64)
    for s in source.samples:
        if s.verb_label is None or s.noun_label is None:
            raise ValueError(f"unlabeled sample {s.sample_id} in co-occurrence build")
        counts[s.verb_label, s.noun_label] += 1
    return CoOccurrenceMatrix(counts)


def cooccurrence_filter(verb_probs: np.ndarray, noun_probs: np.ndarray,
                        matrix: CoOccurrenceMatrix, factor: float) -> np.ndarray:
    """Outer-product action scores with unseen pairs scaled down by `factor`.

    Scores are not renormalized; they only feed an argmax, which
    renormalization cannot change.
    """
    verb_probs = np.asarray(verb_probs, dtype=np.float64)
    noun_probs = np.asarray(noun_probs, dtype=np.float64)
    if verb_probs.shape[-1] != matrix.counts.shape[0] or noun_probs.shape[-1] != matrix.counts.shape[1]:
        raise ValueError(
            f"distribution sizes ({verb_probs.shape[-1]}, {noun_probs.shape[-1]}) do not match "
            f"co-occurrence matrix {matrix.counts.shape}")
    scores = np.einsum("...i,...j->...ij", verb_probs, noun_probs)
    scale = np.where(matrix.counts > 0, 1.0, factor)
    return scores * scale


def ensemble(prediction_sets: list[dict[str, tuple[np.ndarray, np.ndarray]]],
             weights: list[float] | None = None) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Weighted mean of per-sample verb and noun distributions across models."""
    if not prediction_sets:
        raise ValueError("ensemble: no prediction sets given")
    if weights is None:
        weights = [1.0] * len(prediction_sets)
    if len(weights) != len(prediction_sets):
        raise ValueError("ensemble: weights and prediction sets differ in length")
    total = float(sum(weights))
    if total <= 0:
        raise ValueError("ensemble: weights must sum to a positive value")
    ids = set(prediction_sets[0])
    for i, preds in enumerate(prediction_sets[1:], 1):
        if set(preds) != ids:
            raise ValueError(f"ensemble: prediction set {i} covers different samples")
    out = {}
    for sid in prediction_sets[0]:
        verb = sum(w * p[sid][0] for w, p in zip(weights, prediction_sets)) / total
        noun = sum(w * p[sid][1] for w, p in zip(weights, prediction_sets)) / total
        out[sid] = (np.asarray(verb, dtype=np.float64), np.asarray(noun, dtype=np.float64))
    return out


def evaluate(predictions: dict[str, tuple[np.ndarray, np.ndarray]],
             truth: dict[str, tuple[int, int]],
             cooc: CoOccurrenceMatrix | None = None,
             factor: float = 0.01) -> dict[str, float]:
    """Top-1 accuracies. Verb and noun use the marginal argmax; the action
    prediction uses the co-occurrence-filtered score matrix when given,
    otherwise the pair of marginal argmaxes."""
    if not predictions:
        raise ValueError("evaluate: no predictions")
    missing = [sid for sid in predictions if sid not in truth]
    if missing:
        raise ValueError(f"evaluate: missing ground truth for {missing[0]} "
                         f"({len(missing)} samples total)")
    n = len(predictions)
    verb_hits = noun_hits = action_hits = 0
    for sid, (verb_probs, noun_probs) in predictions.items():
        tv, tn = truth[sid]
        pv = int(np.argmax(verb_probs))
        pn = int(np.argmax(noun_probs))
        verb_hits += pv == tv
        noun_hits += pn == tn
        if cooc is not None:
            scores = cooccurrence_filter(verb_probs, noun_probs, cooc, factor)
            av, an = np.unravel_index(int(np.argmax(scores)), scores.shape)
            action_hits += (av == tv) and (an == tn)
        else:
            action_hits += (pv == tv) and (pn == tn)
    return {
        "verb_top1": verb_hits / n,
        "noun_top1": noun_hits / n,
        "action_top1": action_hits / n,
    }
