"""Sequence model: modality fusion, transformer encoder over a temporal
window with two appended classification tokens, verb/noun heads, and an
adversarial per-position domain classifier behind a gradient reversal layer.

Training minimizes
    total = central-action loss + all-position sequence loss + domain loss,
with the window pool re-mixed against the pseudo-labeled target set every
epoch. Everything is deterministic given the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, config_from_dict, config_to_dict
from .data import ActionSample, Dataset, Domain, ModalitySpec
from .errors import DataFormatError, TrainingDiverged
from .mixer import MixStats, Window, build_windows, mix_epoch
from .nn import autodiff as ad
from .nn import backend
from .nn.layers import Linear, Module, TransformerEncoder
from .nn.optim import SGD
from .pseudo import build_pool, pseudo_label
from .rng import derive_rng

# ---------------------------------------------------------------------------
# Feature fusion
# ---------------------------------------------------------------------------

def aggregate_clips(sample: ActionSample, modalities: tuple[ModalitySpec, ...]) -> np.ndarray:
    """Mean over clips per modality, concatenated in modality order.

    The learned projection to the model width is the model's input layer;
    this function is the fixed (parameter-free) part of the fusion.
    """
    parts = []
    for m in modalities:
        feats = sample.features.get(m.name)
        if feats is None:
            raise DataFormatError(f"sample {sample.sample_id}: missing modality {m.name!r}")
        parts.append(np.asarray(feats, dtype=np.float64).mean(axis=0))
    return np.concatenate(parts)


def fused_feature_matrix(dataset: Dataset) -> tuple[dict[str, int], np.ndarray]:
    """Row per sample of aggregate_clips output; returns (id -> row, matrix)."""
    rows = np.empty((len(dataset.samples), dataset.feature_width()), dtype=np.float32)
    index = {}
    for i, s in enumerate(dataset.samples):
        rows[i] = aggregate_clips(s, dataset.modalities)
        index[s.sample_id] = i
    return index, rows


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass
class PredictionBundle:
    """Per-window outputs: central and per-position probabilities, domain logits."""

    central_verb_probs: np.ndarray  # (V,)
    central_noun_probs: np.ndarray  # (N,)
    verb_probs: np.ndarray  # (w, V)
    noun_probs: np.ndarray  # (w, N)
    domain_logits: np.ndarray  # (w, 2)


class SequencePredictor(Module):
    def __init__(self, feature_width: int, num_verbs: int, num_nouns: int,
                 window_size: int, embed_dim: int, num_layers: int, num_heads: int,
                 ff_multiplier: int, init_scale: float, layer_norm_eps: float,
                 grl_lambda: float, rng: np.random.Generator, dtype=np.float32,
                 pos_init_scale: float | None = None, qk_init_scale: float | None = None):
        self.feature_width = feature_width
        self.num_verbs = num_verbs
        self.num_nouns = num_nouns
        self.window_size = window_size
        self.grl_lambda = grl_lambda
        self.np_dtype = np.dtype(dtype)
        d = embed_dim
        pos_scale = init_scale if pos_init_scale is None else pos_init_scale
        self.proj = Linear(feature_width, d, rng, init_scale, dtype)
        self.pos = ad.parameter(rng.normal(0.0, pos_scale, (window_size + 2, d)).astype(dtype))
        self.verb_token = ad.parameter(rng.normal(0.0, init_scale, (d,)).astype(dtype))
        self.noun_token = ad.parameter(rng.normal(0.0, init_scale, (d,)).astype(dtype))
        self.encoder = TransformerEncoder(d, num_layers, num_heads, ff_multiplier * d,
                                          layer_norm_eps, rng, init_scale, dtype,
                                          qk_init_scale)
        self.verb_head = Linear(d, num_verbs, rng, init_scale, dtype)
        self.noun_head = Linear(d, num_nouns, rng, init_scale, dtype)
        self.domain_head = Linear(d, 2, rng, init_scale, dtype)

    def forward_feats(self, feats: np.ndarray, with_domain: bool = True) -> dict:
        """feats: (batch, window_size, feature_width) fused features."""
        b, w, f = feats.shape
        if w != self.window_size or f != self.feature_width:
            raise ValueError(f"feature block {feats.shape} does not match model "
                             f"(w={self.window_size}, feature_width={self.feature_width})")
        x = ad.Tensor(np.ascontiguousarray(feats, dtype=self.np_dtype))
        h = self.proj(x)  # (b, w, d)
        d = h.shape[-1]
        vt = ad.broadcast_to(ad.reshape(self.verb_token, (1, 1, d)), (b, 1, d))
        nt = ad.broadcast_to(ad.reshape(self.noun_token, (1, 1, d)), (b, 1, d))
        h = ad.concat([h, vt, nt], axis=1)  # (b, w+2, d)
        h = h + self.pos
        z = self.encoder(h)
        actions = z[:, :w, :]
        out = {
            "central_verb_logits": self.verb_head(z[:, w, :]),
            "central_noun_logits": self.noun_head(z[:, w + 1, :]),
            "seq_verb_logits": self.verb_head(actions),
            "seq_noun_logits": self.noun_head(actions),
        }
        if with_domain:
            rev = ad.grad_reversal(actions, self.grl_lambda)
            out["domain_logits"] = self.domain_head(rev)
        return out


def build_predictor(cfg: PipelineConfig, feature_width: int, num_verbs: int,
                    num_nouns: int, seed: int) -> SequencePredictor:
    rng = derive_rng(seed, "predictor-init")
    return SequencePredictor(
        feature_width, num_verbs, num_nouns, cfg.window_size,
        cfg.embed_dim, cfg.num_layers, cfg.num_heads, cfg.ff_multiplier,
        cfg.init_scale, cfg.layer_norm_eps, cfg.grl_lambda, rng,
        np.float64 if cfg.dtype == "float64" else np.float32,
        pos_init_scale=cfg.pos_init_scale, qk_init_scale=cfg.qk_init_scale,
    )


# ---------------------------------------------------------------------------
# Batch assembly
# ---------------------------------------------------------------------------

class WindowBatcher:
    """Maps Window objects to index/label arrays over a stacked feature matrix
    (source rows first, then target rows)."""

    def __init__(self, source: Dataset, target: Dataset | None):
        src_index, src_feats = fused_feature_matrix(source)
        self.row_of = dict(src_index)
        mats = [src_feats]
        if target is not None:
            tgt_index, tgt_feats = fused_feature_matrix(target)
            offset = src_feats.shape[0]
            for sid, row in tgt_index.items():
                self.row_of[sid] = offset + row
            mats.append(tgt_feats)
        self.features = np.concatenate(mats, axis=0)

    def arrays(self, windows: list[Window]):
        b, w = len(windows), windows[0].size
        rows = np.empty((b, w), dtype=np.int64)
        verbs = np.empty((b, w), dtype=np.int64)
        nouns = np.empty((b, w), dtype=np.int64)
        doms = np.empty((b, w), dtype=np.int64)
        for i, win in enumerate(windows):
            for j, s in enumerate(win.samples):
                rows[i, j] = self.row_of[s.sample_id]
            verbs[i] = win.verb_labels
            nouns[i] = win.noun_labels
            doms[i] = win.domains
        return rows, verbs, nouns, doms

    def gather(self, rows: np.ndarray) -> np.ndarray:
        return self.features[rows]


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def batch_losses(model: SequencePredictor, feats: np.ndarray, verbs: np.ndarray,
                 nouns: np.ndarray, doms: np.ndarray, weights: tuple[float, float, float]):
    """Weighted batch loss; returns (total Tensor, dict of component floats)."""
    w_central, w_seq, w_domain = weights
    out = model.forward_feats(feats, with_domain=w_domain > 0)
    b, w = verbs.shape
    center = (w - 1) // 2
    l_central = ad.cross_entropy(out["central_verb_logits"], verbs[:, center]) + \
        ad.cross_entropy(out["central_noun_logits"], nouns[:, center])
    terms = [ad.scale(l_central, w_central)]
    comps = {"loss_central": float(l_central.data)}
    if w_seq > 0:
        nv, nn_ = model.num_verbs, model.num_nouns
        l_seq = ad.cross_entropy(ad.reshape(out["seq_verb_logits"], (b * w, nv)), verbs.ravel()) + \
            ad.cross_entropy(ad.reshape(out["seq_noun_logits"], (b * w, nn_)), nouns.ravel())
        terms.append(ad.scale(l_seq, w_seq))
        comps["loss_sequence"] = float(l_seq.data)
    else:
        comps["loss_sequence"] = 0.0
    if w_domain > 0:
        l_dom = ad.cross_entropy(ad.reshape(out["domain_logits"], (b * w, 2)), doms.ravel())
        terms.append(ad.scale(l_dom, w_domain))
        comps["loss_domain"] = float(l_dom.data)
    else:
        comps["loss_domain"] = 0.0
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    comps["loss_total"] = float(total.data)
    return total, comps


def compute_losses(bundle: PredictionBundle, window: Window) -> dict[str, float]:
    """Per-window analytic losses from a prediction bundle (diagnostics/tests).

    Matches the training objective: central cross-entropy, mean all-position
    cross-entropy, and mean domain cross-entropy against the effective flags.
    """
    w = window.size
    if -1 in window.verb_labels or -1 in window.noun_labels:
        raise ValueError("compute_losses requires labels at every position")
    l_central = -np.log(bundle.central_verb_probs[window.central_verb]) \
        - np.log(bundle.central_noun_probs[window.central_noun])
    l_seq = 0.0
    for i in range(w):
        l_seq += -np.log(bundle.verb_probs[i, window.verb_labels[i]])
        l_seq += -np.log(bundle.noun_probs[i, window.noun_labels[i]])
    l_seq /= w
    dom_probs = backend.softmax_fwd(np.asarray(bundle.domain_logits, dtype=np.float64))
    l_dom = float(np.mean([-np.log(dom_probs[i, window.domains[i]]) for i in range(w)]))
    total = float(l_central) + float(l_seq) + l_dom
    return {"loss_central": float(l_central), "loss_sequence": float(l_seq),
            "loss_domain": l_dom, "loss_total": total}


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def _bundle_from_logits(out: dict, i: int) -> PredictionBundle:
    return PredictionBundle(
        central_verb_probs=backend.softmax_fwd(out["central_verb_logits"].data[i:i + 1])[0],
        central_noun_probs=backend.softmax_fwd(out["central_noun_logits"].data[i:i + 1])[0],
        verb_probs=backend.softmax_fwd(out["seq_verb_logits"].data[i]),
        noun_probs=backend.softmax_fwd(out["seq_noun_logits"].data[i]),
        domain_logits=np.asarray(out["domain_logits"].data[i], dtype=np.float64),
    )


def predict_window(model: SequencePredictor, window: Window,
                   modalities: tuple[ModalitySpec, ...]) -> PredictionBundle:
    feats = np.stack([aggregate_clips(s, modalities) for s in window.samples])[None, ...]
    with ad.no_grad():
        out = model.forward_feats(feats.astype(model.np_dtype), with_domain=True)
    return _bundle_from_logits(out, 0)


@dataclass
class DatasetPredictions:
    """Central and per-position probabilities for every window of a dataset,
    ordered like build_windows (one window per sample)."""

    sample_ids: list[str]
    central_verb: np.ndarray  # (S, V)
    central_noun: np.ndarray  # (S, N)
    seq_verb: np.ndarray  # (S, w, V)
    seq_noun: np.ndarray  # (S, w, N)


def predict_dataset(model: SequencePredictor, dataset: Dataset, batcher: WindowBatcher,
                    windows: list[Window] | None = None,
                    batch_size: int = 512) -> DatasetPredictions:
    if windows is None:
        windows = build_windows(dataset, model.window_size)
    rows, _, _, _ = batcher.arrays(windows)
    s, w = rows.shape
    ids = [win.samples[win.center_index].sample_id for win in windows]
    cv = np.empty((s, model.num_verbs), dtype=np.float64)
    cn = np.empty((s, model.num_nouns), dtype=np.float64)
    sv = np.empty((s, w, model.num_verbs), dtype=np.float64)
    sn = np.empty((s, w, model.num_nouns), dtype=np.float64)
    with ad.no_grad():
        for lo in range(0, s, batch_size):
            hi = min(lo + batch_size, s)
            out = model.forward_feats(batcher.gather(rows[lo:hi]), with_domain=False)
            cv[lo:hi] = backend.softmax_fwd(out["central_verb_logits"].data)
            cn[lo:hi] = backend.softmax_fwd(out["central_noun_logits"].data)
            b = hi - lo
            sv[lo:hi] = backend.softmax_fwd(
                out["seq_verb_logits"].data.reshape(b * w, -1)).reshape(b, w, -1)
            sn[lo:hi] = backend.softmax_fwd(
                out["seq_noun_logits"].data.reshape(b * w, -1)).reshape(b, w, -1)
    return DatasetPredictions(ids, cv, cn, sv, sn)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def effective_loss_weights(cfg: PipelineConfig) -> tuple[float, float, float]:
    """Stage toggles fold into the loss weights: disabling mixing removes the
    all-position term, disabling the domain classifier removes its loss."""
    w_seq = cfg.loss_weight_sequence if cfg.use_mixing else 0.0
    w_dom = cfg.loss_weight_domain if cfg.use_dc else 0.0
    return (cfg.loss_weight_central, w_seq, w_dom)


def _validation_metrics(model, target, batcher, target_windows, truth, batch_size):
    preds = predict_dataset(model, target, batcher, target_windows, batch_size)
    verbs = np.array([truth[sid][0] for sid in preds.sample_ids])
    nouns = np.array([truth[sid][1] for sid in preds.sample_ids])
    pv = preds.central_verb.argmax(axis=1)
    pn = preds.central_noun.argmax(axis=1)
    return {
        "val_verb": float(np.mean(pv == verbs)),
        "val_noun": float(np.mean(pn == nouns)),
        "val_action": float(np.mean((pv == verbs) & (pn == nouns))),
    }


def train_predictor(cfg: PipelineConfig, source: Dataset, target: Dataset | None,
                    pseudo_labels: list, seed: int, *, val_truth: dict | None = None,
                    metrics_out: list | None = None, quiet: bool = True) -> SequencePredictor:
    """Train on source windows (mixed against the pseudo-labeled target pool
    when enabled). Returns the model; appends one metrics record per epoch to
    `metrics_out` when given. Deterministic for a fixed (cfg, seed)."""
    w = cfg.window_size
    windows = build_windows(source, w)
    batcher = WindowBatcher(source, target)
    model = build_predictor(cfg, source.feature_width(), source.num_verbs,
                            source.num_nouns, seed)
    weights = effective_loss_weights(cfg)
    n_repl = cfg.num_replacements if cfg.use_mixing else 0
    pool = build_pool(target, pseudo_labels) if (target is not None and pseudo_labels) else {}
    opt = SGD(model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum)
    target_windows = build_windows(target, w) if target is not None else []
    dom_target = np.full((1, w), int(Domain.TARGET), dtype=np.int64)

    for epoch in range(cfg.epochs):
        if (cfg.pseudo_refresh_every > 0 and epoch > 0
                and epoch % cfg.pseudo_refresh_every == 0 and target is not None):
            preds = predict_dataset(model, target, batcher, target_windows, cfg.eval_batch_size)
            refreshed = pseudo_label(preds.sample_ids, preds.central_verb,
                                     preds.central_noun, cfg.confidence_threshold)
            pool = build_pool(target, refreshed)
        stats = MixStats()
        mixed = mix_epoch(windows, pool, n_repl, derive_rng(seed, "mix", epoch), stats) \
            if n_repl > 0 else windows
        rows, verbs, nouns, doms = batcher.arrays(mixed)
        order = derive_rng(seed, "order", epoch).permutation(len(mixed))
        sums = {"loss_central": 0.0, "loss_sequence": 0.0, "loss_domain": 0.0, "loss_total": 0.0}
        n_batches = 0
        for lo in range(0, len(order), cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            total, comps = batch_losses(model, batcher.gather(rows[sel]),
                                        verbs[sel], nouns[sel], doms[sel], weights)
            if not np.isfinite(comps["loss_total"]):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: {comps}")
            opt.zero_grad()
            total.backward()
            opt.step()
            for k in sums:
                sums[k] += comps[k]
            n_batches += 1
        if cfg.include_target_windows and weights[2] > 0 and target_windows:
            t_rows, _, _, _ = batcher.arrays(target_windows)
            t_order = derive_rng(seed, "target-order", epoch).permutation(len(target_windows))
            for lo in range(0, len(t_order), cfg.batch_size):
                sel = t_order[lo:lo + cfg.batch_size]
                feats = batcher.gather(t_rows[sel])
                out = model.forward_feats(feats, with_domain=True)
                b = feats.shape[0]
                l_dom = ad.cross_entropy(
                    ad.reshape(out["domain_logits"], (b * w, 2)),
                    np.repeat(dom_target, b, axis=0).ravel())
                if not np.isfinite(float(l_dom.data)):
                    raise TrainingDiverged(f"non-finite domain loss at epoch {epoch}")
                opt.zero_grad()
                ad.scale(l_dom, weights[2]).backward()
                opt.step()
        record = {"epoch": epoch, "n_batches": n_batches,
                  "replacement_rate": stats.rate(),
                  "replacement_rate_per_class": stats.per_class_rates()}
        for k in sums:
            record[k] = sums[k] / max(n_batches, 1)
        is_val_epoch = (epoch + 1 == cfg.epochs) or ((epoch + 1) % cfg.val_every == 0)
        if val_truth is not None and target is not None and is_val_epoch:
            record.update(_validation_metrics(model, target, batcher, target_windows,
                                              val_truth, cfg.eval_batch_size))
        if metrics_out is not None:
            metrics_out.append(record)
        if not quiet:
            msg = {k: (round(v, 4) if isinstance(v, float) else v)
                   for k, v in record.items() if k != "replacement_rate_per_class"}
            print(f"[train] {json.dumps(msg, sort_keys=True)}")
    return model


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_predictor(path, model: SequencePredictor, cfg: PipelineConfig,
                   modalities: tuple[ModalitySpec, ...]) -> None:
    extra = {
        "feature_width": model.feature_width,
        "num_verbs": model.num_verbs,
        "num_nouns": model.num_nouns,
        "window_size": model.window_size,
        "modalities": [[m.name, m.clip_count, m.feature_dim] for m in modalities],
    }
    save_checkpoint(path, "predictor", model.state_arrays(), config_to_dict(cfg), extra)


def load_predictor(path):
    """Returns (model, cfg, modalities)."""
    _, arrays, cfg_dict, extra = load_checkpoint(path, expected_kind="predictor")
    cfg = config_from_dict(cfg_dict)
    cfg_w = dict(config_to_dict(cfg))
    cfg_w["window_size"] = int(extra["window_size"])
    cfg = config_from_dict(cfg_w)
    model = build_predictor(cfg, int(extra["feature_width"]), int(extra["num_verbs"]),
                            int(extra["num_nouns"]), cfg.seed)
    model.load_state_arrays(arrays)
    modalities = tuple(ModalitySpec(str(n), int(c), int(d)) for n, c, d in extra["modalities"])
    return model, cfg, modalities
