"""Temporal windows and source-to-target replacement.

A window is `window_size` consecutive actions from one video, edge-padded at
video boundaries so every action yields exactly one window centered on it.
Mixing swaps randomly chosen non-central positions for target samples whose
pseudo-labels match the outgoing sample's labels; positions with no matching
candidate are left alone (and counted).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ActionSample, Dataset, Domain


@dataclass(frozen=True)
class Window:
    """One training/evaluation window; labels are -1 where unknown (target)."""

    samples: tuple[ActionSample, ...]
    verb_labels: tuple[int, ...]
    noun_labels: tuple[int, ...]
    domains: tuple[int, ...]  # effective per-position domain (replacement flips to TARGET)
    replaced: tuple[bool, ...]
    center_index: int

    @property
    def size(self) -> int:
        return len(self.samples)

    @property
    def central_verb(self) -> int:
        return self.verb_labels[self.center_index]

    @property
    def central_noun(self) -> int:
        return self.noun_labels[self.center_index]


@dataclass
class MixStats:
    """Replacement bookkeeping: attempted vs matched swaps per (verb, noun)."""

    attempted: dict = field(default_factory=dict)
    matched: dict = field(default_factory=dict)

    def record(self, key: tuple[int, int], hit: bool) -> None:
        self.attempted[key] = self.attempted.get(key, 0) + 1
        if hit:
            self.matched[key] = self.matched.get(key, 0) + 1

    def rate(self) -> float:
        total = sum(self.attempted.values())
        return (sum(self.matched.values()) / total) if total else 0.0

    def per_class_rates(self) -> dict[str, float]:
        return {
            f"{v}:{n}": self.matched.get((v, n), 0) / cnt
            for (v, n), cnt in sorted(self.attempted.items())
        }


def build_windows(dataset: Dataset, window_size: int) -> list[Window]:
    """One window per action of each video, in video order then position order."""
    if window_size < 1 or window_size % 2 == 0:
        raise ValueError(f"window_size must be odd and positive, got {window_size}")
    if not dataset.samples:
        raise ValueError("cannot build windows from an empty dataset")
    half = (window_size - 1) // 2
    out = []
    for _, video in sorted(dataset.videos().items()):
        m = len(video)
        for j in range(m):
            picks = [video[min(max(j + o, 0), m - 1)] for o in range(-half, half + 1)]
            verbs = tuple(-1 if s.verb_label is None else s.verb_label for s in picks)
            nouns = tuple(-1 if s.noun_label is None else s.noun_label for s in picks)
            out.append(Window(
                samples=tuple(picks),
                verb_labels=verbs,
                noun_labels=nouns,
                domains=tuple(int(s.domain) for s in picks),
                replaced=(False,) * window_size,
                center_index=half,
            ))
    return out


def mix_window(window: Window, pool: dict[tuple[int, int], list[ActionSample]],
               num_replacements: int, rng: np.random.Generator,
               stats: MixStats | None = None) -> Window:
    """Swap up to `num_replacements` non-central positions for matching target samples.

    Chosen positions are uniform without replacement over non-central indices;
    the inserted sample is uniform over pool entries whose pseudo (verb, noun)
    equal the outgoing sample's labels. Positions without candidates stay.
    """
    w = window.size
    if not 0 <= num_replacements < w:
        raise ValueError(f"num_replacements must lie in [0, {w - 1}], got {num_replacements}")
    if num_replacements == 0:
        return window
    candidates = [i for i in range(w) if i != window.center_index]
    chosen = rng.choice(len(candidates), size=num_replacements, replace=False)
    samples = list(window.samples)
    domains = list(window.domains)
    replaced = list(window.replaced)
    for c in chosen:
        i = candidates[int(c)]
        key = (window.verb_labels[i], window.noun_labels[i])
        matches = pool.get(key)
        if stats is not None:
            stats.record(key, bool(matches))
        if not matches:
            continue
        pick = matches[int(rng.integers(len(matches)))]
        samples[i] = pick
        domains[i] = int(Domain.TARGET)
        replaced[i] = True
    return Window(
        samples=tuple(samples),
        verb_labels=window.verb_labels,
        noun_labels=window.noun_labels,
        domains=tuple(domains),
        replaced=tuple(replaced),
        center_index=window.center_index,
    )


def mix_epoch(windows: list[Window], pool, num_replacements: int,
              rng: np.random.Generator, stats: MixStats | None = None) -> list[Window]:
    """Fresh mixing pass over all windows (one stream, sequential order)."""
    if num_replacements == 0 or not pool:
        return windows
    return [mix_window(w, pool, num_replacements, rng, stats) for w in windows]
