"""Synthetic two-domain action-sequence corpus.

Both domains share the same Markov transition structure over a fixed action
set (so the *order* of actions carries transferable signal), while the
class-conditional feature distributions are offset in the target domain by a
constant per-class shift. Source samples come labeled; target ground truth is
returned separately and must only ever reach evaluation code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig, parse_modalities
from .data import ActionSample, Dataset, Domain, ModalitySpec
from .errors import DataFormatError

TRANSITION_ATOL = 1e-9


@dataclass(frozen=True)
class GrammarSpec:
    """Everything needed to sample one corpus (shared across both domains)."""

    num_verbs: int
    num_nouns: int
    action_set: tuple[tuple[int, int], ...]  # (verb, noun) pairs that occur
    transition: np.ndarray  # (A, A) row-stochastic, over action_set indices
    videos_per_domain: int
    actions_per_video: int
    modalities: tuple[ModalitySpec, ...]
    shift_magnitude: float
    noise_scale: float
    class_mean_scale: float = 1.0

    def validate(self) -> "GrammarSpec":
        a = len(self.action_set)
        if a == 0:
            raise DataFormatError("action_set is empty")
        if len(set(self.action_set)) != a:
            raise DataFormatError("action_set contains duplicate (verb, noun) pairs")
        for v, n in self.action_set:
            if not (0 <= v < self.num_verbs and 0 <= n < self.num_nouns):
                raise DataFormatError(f"action ({v}, {n}) outside vocabulary")
        if self.transition.shape != (a, a):
            raise DataFormatError(f"transition shape {self.transition.shape} != ({a}, {a})")
        if np.any(self.transition < 0):
            raise DataFormatError("transition has negative entries")
        row_sums = self.transition.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > TRANSITION_ATOL:
            raise DataFormatError("transition rows must sum to 1 within 1e-9")
        if self.videos_per_domain < 1 or self.actions_per_video < 1:
            raise DataFormatError("videos_per_domain and actions_per_video must be positive")
        if self.shift_magnitude < 0 or self.noise_scale <= 0 or self.class_mean_scale <= 0:
            raise DataFormatError("invalid shift/noise/mean scale")
        return self


def _peaked_transition(num_actions: int, peak: float, rng: np.random.Generator) -> np.ndarray:
    """Each action has one designated successor with mass `peak`; the rest of
    the mass goes 2:1 onto two other random actions."""
    t = np.zeros((num_actions, num_actions))
    successor = rng.permutation(num_actions)
    for i in range(num_actions):
        others = [j for j in range(num_actions) if j != successor[i]]
        picks = rng.choice(len(others), size=min(2, len(others)), replace=False)
        t[i, successor[i]] = peak
        rest = 1.0 - peak
        if len(picks) == 2:
            t[i, others[picks[0]]] += rest * (2.0 / 3.0)
            t[i, others[picks[1]]] += rest * (1.0 / 3.0)
        elif len(picks) == 1:
            t[i, others[picks[0]]] += rest
        else:
            t[i, successor[i]] += rest
    t /= t.sum(axis=1, keepdims=True)
    return t


def _cycle_transition(num_actions: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic grammar: actions form one random cycle."""
    order = rng.permutation(num_actions)
    t = np.zeros((num_actions, num_actions))
    for k in range(num_actions):
        t[order[k], order[(k + 1) % num_actions]] = 1.0
    return t


def grammar_from_config(cfg: PipelineConfig, rng: np.random.Generator) -> GrammarSpec:
    """Build the GrammarSpec described by the corpus fields of `cfg`."""
    pair_ids = rng.choice(cfg.num_verbs * cfg.num_nouns, size=cfg.num_actions, replace=False)
    action_set = tuple(sorted((int(p) // cfg.num_nouns, int(p) % cfg.num_nouns) for p in pair_ids))
    if cfg.grammar == "deterministic":
        transition = _cycle_transition(cfg.num_actions, rng)
    elif cfg.grammar == "uniform":
        transition = np.full((cfg.num_actions, cfg.num_actions), 1.0 / cfg.num_actions)
    else:
        transition = _peaked_transition(cfg.num_actions, cfg.transition_peak, rng)
    mods = tuple(ModalitySpec(*m) for m in parse_modalities(cfg.modalities))
    return GrammarSpec(
        num_verbs=cfg.num_verbs,
        num_nouns=cfg.num_nouns,
        action_set=action_set,
        transition=transition,
        videos_per_domain=cfg.videos_per_domain,
        actions_per_video=cfg.actions_per_video,
        modalities=mods,
        shift_magnitude=cfg.shift_magnitude,
        noise_scale=cfg.noise_scale,
        class_mean_scale=cfg.class_mean_scale,
    ).validate()


def _sample_video(spec: GrammarSpec, domain: Domain, video_idx: int, means, offsets,
                  rng: np.random.Generator):
    """One Markov walk plus per-action clip features; returns (samples, truth)."""
    tag = "src" if domain == Domain.SOURCE else "tgt"
    video_id = f"{tag}_v{video_idx:04d}"
    samples = []
    truth = {}
    state = int(rng.integers(len(spec.action_set)))
    for pos in range(spec.actions_per_video):
        verb, noun = spec.action_set[state]
        feats = {}
        for m in spec.modalities:
            clip = rng.normal(0.0, spec.noise_scale, size=(m.clip_count, m.feature_dim))
            clip += means[m.name][state]
            if domain == Domain.TARGET:
                clip += offsets[m.name][state]
            feats[m.name] = clip.astype(np.float32)
        sample_id = f"{video_id}_a{pos:03d}"
        if domain == Domain.SOURCE:
            samples.append(ActionSample(sample_id, video_id, pos, domain, feats, verb, noun))
        else:
            samples.append(ActionSample(sample_id, video_id, pos, domain, feats))
            truth[sample_id] = (verb, noun)
        state = int(rng.choice(len(spec.action_set), p=spec.transition[state]))
    return samples, truth


def generate_corpus(spec: GrammarSpec, rng: np.random.Generator):
    """Sample (source dataset, target dataset, target truth).

    Target truth maps sample_id -> (verb, noun) and exists only so evaluation
    can score predictions; the target Dataset itself carries no labels.
    Per-video streams are spawned up front, so videos are independent of one
    another and could be generated concurrently.
    """
    spec.validate()
    n_actions = len(spec.action_set)
    means = {
        m.name: rng.normal(0.0, spec.class_mean_scale, size=(n_actions, m.feature_dim))
        for m in spec.modalities
    }
    offsets = {}
    for m in spec.modalities:
        direction = rng.normal(size=(n_actions, m.feature_dim))
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        offsets[m.name] = direction / norms * spec.shift_magnitude
    video_streams = rng.spawn(2 * spec.videos_per_domain)
    datasets = {}
    truth_all: dict[str, tuple[int, int]] = {}
    for d_idx, domain in enumerate((Domain.SOURCE, Domain.TARGET)):
        samples = []
        for v in range(spec.videos_per_domain):
            vrng = video_streams[d_idx * spec.videos_per_domain + v]
            vs, vt = _sample_video(spec, domain, v, means, offsets, vrng)
            samples.extend(vs)
            truth_all.update(vt)
        datasets[domain] = Dataset(
            domain=domain,
            modalities=spec.modalities,
            num_verbs=spec.num_verbs,
            num_nouns=spec.num_nouns,
            samples=tuple(samples),
        ).validate()
    return datasets[Domain.SOURCE], datasets[Domain.TARGET], truth_all
