"""Pseudo-labeling of target samples from model predictions.

Confidence of a prediction is (top verb probability + top noun probability)/2;
samples at or above the threshold keep their argmax labels, the rest are
dropped from the mixing pool. Argmax ties break toward the lowest class index.
"""

from __future__ import annotations

import numpy as np

from .data import ActionSample, Dataset, PseudoLabel

PROB_ATOL = 1e-6


def pseudo_label(sample_ids, verb_probs, noun_probs, threshold: float) -> list[PseudoLabel]:
    """Filter predictions into pseudo-labels.

    sample_ids: sequence of n ids; verb_probs: (n, V); noun_probs: (n, N).
    Each probability row must sum to 1 within 1e-6. Returns labels for the
    samples whose confidence is >= threshold, in input order.
    """
    sample_ids = list(sample_ids)
    if not sample_ids:
        raise ValueError("pseudo_label: empty input")
    verb_probs = np.asarray(verb_probs, dtype=np.float64)
    noun_probs = np.asarray(noun_probs, dtype=np.float64)
    if verb_probs.shape[0] != len(sample_ids) or noun_probs.shape[0] != len(sample_ids):
        raise ValueError("pseudo_label: ids and probability rows disagree in length")
    for name, probs in (("verb", verb_probs), ("noun", noun_probs)):
        sums = probs.sum(axis=1)
        bad = np.where(np.abs(sums - 1.0) > PROB_ATOL)[0]
        if bad.size:
            raise ValueError(
                f"pseudo_label: {name} probabilities for sample {sample_ids[bad[0]]} "
                f"sum to {sums[bad[0]]:.8f}, not 1"
            )
    top_verb = verb_probs.max(axis=1)
    top_noun = noun_probs.max(axis=1)
    conf = (top_verb + top_noun) / 2.0
    verbs = verb_probs.argmax(axis=1)  # argmax takes the first maximum: lowest index
    nouns = noun_probs.argmax(axis=1)
    out = []
    for i, sid in enumerate(sample_ids):
        if conf[i] >= threshold:
            out.append(PseudoLabel(sid, int(verbs[i]), int(nouns[i]), float(conf[i])))
    return out


def build_pool(target: Dataset, labels: list[PseudoLabel]) -> dict[tuple[int, int], list[ActionSample]]:
    """Index pseudo-labeled target samples by (verb, noun) for the mixer."""
    by_id = {s.sample_id: s for s in target.samples}
    pool: dict[tuple[int, int], list[ActionSample]] = {}
    for pl in labels:
        sample = by_id.get(pl.sample_id)
        if sample is None:
            raise ValueError(f"pseudo-label for unknown target sample {pl.sample_id}")
        pool.setdefault((pl.verb, pl.noun), []).append(sample)
    return pool
