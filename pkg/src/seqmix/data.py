"""Core domain types: action samples, datasets, pseudo-labels.

Instances are immutable after construction (feature arrays are marked
read-only), so they can be shared freely across threads and windows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping

import numpy as np

from .errors import DataFormatError


class Domain(IntEnum):
    SOURCE = 0
    TARGET = 1


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    clip_count: int
    feature_dim: int


@dataclass(frozen=True, eq=False)
class ActionSample:
    """One action clip: per-modality features plus its place in a video.

    SOURCE samples carry verb/noun labels; TARGET samples carry None for both
    (their ground truth lives in a separate evaluation-only sidecar file).
    """

    sample_id: str
    video_id: str
    position_index: int
    domain: Domain
    features: Mapping[str, np.ndarray]  # modality -> (clip_count, feature_dim) float32
    verb_label: int | None = None
    noun_label: int | None = None

    def __post_init__(self):
        for arr in self.features.values():
            arr.flags.writeable = False


@dataclass(frozen=True)
class PseudoLabel:
    """Predicted labels for one target sample, kept only above the threshold."""

    sample_id: str
    verb: int
    noun: int
    confidence: float  # (top verb prob + top noun prob) / 2


@dataclass(frozen=True, eq=False)
class Dataset:
    """All samples of one domain plus the vocabulary and modality layout."""

    domain: Domain
    modalities: tuple[ModalitySpec, ...]
    num_verbs: int
    num_nouns: int
    samples: tuple[ActionSample, ...]
    _videos: dict = field(default_factory=dict, repr=False, compare=False)

    def videos(self) -> dict[str, list[ActionSample]]:
        """Samples grouped by video, each list sorted by position_index."""
        if not self._videos:
            grouped: dict[str, list[ActionSample]] = {}
            for s in self.samples:
                grouped.setdefault(s.video_id, []).append(s)
            for vid in grouped:
                grouped[vid].sort(key=lambda s: s.position_index)
            self._videos.update(grouped)
        return self._videos

    def validate(self) -> "Dataset":
        mod_names = {m.name for m in self.modalities}
        positions_seen: dict[str, set[int]] = {}
        for s in self.samples:
            if set(s.features) != mod_names:
                raise DataFormatError(
                    f"sample {s.sample_id}: modalities {sorted(s.features)} != dataset modalities {sorted(mod_names)}"
                )
            for m in self.modalities:
                shape = s.features[m.name].shape
                if shape != (m.clip_count, m.feature_dim):
                    raise DataFormatError(
                        f"sample {s.sample_id}: modality {m.name} has shape {shape}, "
                        f"expected {(m.clip_count, m.feature_dim)}"
                    )
            if s.domain != self.domain:
                raise DataFormatError(f"sample {s.sample_id}: domain {s.domain} in a {self.domain.name} dataset")
            has_labels = s.verb_label is not None and s.noun_label is not None
            if self.domain == Domain.SOURCE and not has_labels:
                raise DataFormatError(f"source sample {s.sample_id} is missing labels")
            if self.domain == Domain.TARGET and (s.verb_label is not None or s.noun_label is not None):
                raise DataFormatError(f"target sample {s.sample_id} carries labels at ingestion")
            if has_labels and not (0 <= s.verb_label < self.num_verbs and 0 <= s.noun_label < self.num_nouns):
                raise DataFormatError(f"sample {s.sample_id}: labels out of vocabulary")
            seen = positions_seen.setdefault(s.video_id, set())
            if s.position_index in seen:
                raise DataFormatError(
                    f"video {s.video_id}: duplicate position_index {s.position_index}"
                )
            if s.position_index < 0:
                raise DataFormatError(f"sample {s.sample_id}: negative position_index")
            seen.add(s.position_index)
        return self

    def feature_width(self) -> int:
        return sum(m.feature_dim for m in self.modalities)
