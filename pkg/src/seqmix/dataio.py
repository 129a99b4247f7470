"""On-disk formats: dataset files, ground-truth sidecars, prediction files.

Dataset file layout (little-endian throughout):

    magic   8 bytes  b"SQMXDSET"
    version u32      1
    hlen    u32      length of the JSON header
    header  hlen bytes, UTF-8 JSON with sorted keys:
            {domain, num_verbs, num_nouns, sample_count,
             modalities: [{name, clip_count, feature_dim}, ...]}
    records sample_count times:
            sample_id  u16 length + UTF-8 bytes
            video_id   u16 length + UTF-8 bytes
            position   u32
            has_labels u8
            verb, noun i32 (-1 when absent)
            per modality, in header order:
                clip_count * feature_dim float32 values

The sidecar (magic b"SQMXTRUT") holds evaluation-only target labels as
(sample_id, verb, noun) records and is written to a separate file so the
training-data path never sees target labels.

Writers emit bytes deterministically: identical inputs give identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import ActionSample, Dataset, Domain, ModalitySpec
from .errors import DataFormatError

DATASET_MAGIC = b"SQMXDSET"
SIDECAR_MAGIC = b"SQMXTRUT"
FORMAT_VERSION = 1


def _write_str(fh, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise DataFormatError(f"string too long for record field: {len(raw)} bytes")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise DataFormatError(f"truncated file while reading {what}")
    return raw


def _read_str(fh, what: str) -> str:
    (n,) = struct.unpack("<H", _read_exact(fh, 2, what))
    return _read_exact(fh, n, what).decode("utf-8")


def _write_header(fh, magic: bytes, header: dict) -> None:
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    fh.write(magic)
    fh.write(struct.pack("<II", FORMAT_VERSION, len(raw)))
    fh.write(raw)


def _read_header(fh, magic: bytes, path) -> dict:
    got = _read_exact(fh, len(magic), "magic")
    if got != magic:
        raise DataFormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    version, hlen = struct.unpack("<II", _read_exact(fh, 8, "header"))
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format version {version}")
    return json.loads(_read_exact(fh, hlen, "header json").decode("utf-8"))


def write_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        _write_header(fh, DATASET_MAGIC, {
            "domain": dataset.domain.name,
            "num_verbs": dataset.num_verbs,
            "num_nouns": dataset.num_nouns,
            "sample_count": len(dataset.samples),
            "modalities": [
                {"name": m.name, "clip_count": m.clip_count, "feature_dim": m.feature_dim}
                for m in dataset.modalities
            ],
        })
        for s in dataset.samples:
            _write_str(fh, s.sample_id)
            _write_str(fh, s.video_id)
            has = s.verb_label is not None
            fh.write(struct.pack("<IBii", s.position_index, int(has),
                                 -1 if s.verb_label is None else s.verb_label,
                                 -1 if s.noun_label is None else s.noun_label))
            for m in dataset.modalities:
                arr = np.ascontiguousarray(s.features[m.name], dtype=np.float32)
                fh.write(arr.tobytes())


def read_dataset(path, expected_modalities: tuple[str, ...] | None = None) -> Dataset:
    """Load a dataset file; optionally check that it covers the modalities the
    caller needs (raises DataFormatError naming any that are missing)."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, DATASET_MAGIC, path)
        try:
            domain = Domain[header["domain"]]
            mods = tuple(ModalitySpec(m["name"], int(m["clip_count"]), int(m["feature_dim"]))
                         for m in header["modalities"])
            num_verbs, num_nouns = int(header["num_verbs"]), int(header["num_nouns"])
            count = int(header["sample_count"])
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"{path}: malformed header ({exc})") from None
        if expected_modalities is not None:
            present = {m.name for m in mods}
            for name in expected_modalities:
                if name not in present:
                    raise DataFormatError(f"{path}: missing modality {name!r} (file has {sorted(present)})")
        samples = []
        for i in range(count):
            sample_id = _read_str(fh, f"sample {i} id")
            video_id = _read_str(fh, f"sample {i} video id")
            pos, has, verb, noun = struct.unpack("<IBii", _read_exact(fh, 13, f"sample {sample_id} fields"))
            feats = {}
            for m in mods:
                n_bytes = m.clip_count * m.feature_dim * 4
                raw = fh.read(n_bytes)
                if len(raw) != n_bytes:
                    raise DataFormatError(
                        f"{path}: corrupted feature block for sample {sample_id}, modality {m.name}"
                    )
                feats[m.name] = np.frombuffer(raw, dtype="<f4").reshape(m.clip_count, m.feature_dim).copy()
            samples.append(ActionSample(
                sample_id, video_id, pos, domain, feats,
                verb if has else None, noun if has else None,
            ))
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(f"{path}: trailing bytes after last record")
    return Dataset(domain, mods, num_verbs, num_nouns, tuple(samples)).validate()


def write_sidecar(truth: dict[str, tuple[int, int]], num_verbs: int, num_nouns: int, path) -> None:
    """Evaluation-only target labels; keep this file away from training code."""
    with open(path, "wb") as fh:
        _write_header(fh, SIDECAR_MAGIC, {
            "num_verbs": num_verbs, "num_nouns": num_nouns, "sample_count": len(truth),
        })
        for sample_id in sorted(truth):
            verb, noun = truth[sample_id]
            _write_str(fh, sample_id)
            fh.write(struct.pack("<ii", verb, noun))


def read_sidecar(path) -> dict[str, tuple[int, int]]:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, SIDECAR_MAGIC, path)
        out = {}
        for i in range(int(header["sample_count"])):
            sid = _read_str(fh, f"truth record {i}")
            verb, noun = struct.unpack("<ii", _read_exact(fh, 8, f"truth record {sid}"))
            out[sid] = (verb, noun)
    return out


# ---------------------------------------------------------------------------
# Prediction files: one JSON object per line, deterministic float rendering.
# ---------------------------------------------------------------------------

def write_predictions(path, entries) -> None:
    """entries: iterable of (sample_id, verb_probs, noun_probs)."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id, verb_probs, noun_probs in entries:
            rec = {
                "id": sample_id,
                "verb": [float(x) for x in np.asarray(verb_probs).ravel()],
                "noun": [float(x) for x in np.asarray(noun_probs).ravel()],
            }
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_predictions(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[rec["id"]] = (np.asarray(rec["verb"], dtype=np.float64),
                                  np.asarray(rec["noun"], dtype=np.float64))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad prediction record ({exc})") from None
    return out


def write_pseudo_labels(path, labels) -> None:
    """labels: iterable of PseudoLabel records."""
    with open(path, "w", encoding="utf-8") as fh:
        for pl in labels:
            rec = {"id": pl.sample_id, "verb": pl.verb, "noun": pl.noun,
                   "confidence": float(pl.confidence)}
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_pseudo_labels(path):
    from .data import PseudoLabel

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(PseudoLabel(rec["id"], int(rec["verb"]), int(rec["noun"]),
                                       float(rec["confidence"])))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad pseudo-label record ({exc})") from None
    return out
