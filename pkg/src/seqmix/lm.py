"""Masked model over action-label sequences, and candidate-sequence rescoring.

The model embeds each (verb, noun) pair as the sum of a verb and a noun
embedding, replaces masked slots by a learned mask vector, runs a small
transformer encoder and predicts verb and noun at every position. A candidate
sequence is scored by its pseudo-log-likelihood: mask one position at a time
and sum the log-probabilities of the true labels.

Rescoring enumerates all top_k**w label sequences for a window, picks the
PLL argmax, and blends the winner's central-position distributions into the
sequence model's central prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, config_from_dict, config_to_dict
from .data import Dataset
from .errors import EnumerationCapExceeded, TrainingDiverged
from .mixer import build_windows
from .nn import autodiff as ad
from .nn import backend
from .nn.layers import Embedding, Linear, Module, TransformerEncoder
from .nn.optim import Adam
from .rng import derive_rng

MASK_SLOT = -1  # marks the masked position in encoded label rows


@dataclass(frozen=True)
class LabelSequence:
    """w (verb, noun) pairs, optionally with masked positions."""

    actions: tuple[tuple[int, int], ...]
    mask_positions: tuple[int, ...] = ()

    def __post_init__(self):
        for p in self.mask_positions:
            if not 0 <= p < len(self.actions):
                raise ValueError(f"mask position {p} outside sequence of length {len(self.actions)}")


def label_sequences_from_dataset(dataset: Dataset, window_size: int) -> list[LabelSequence]:
    """Window label sequences of a labeled dataset (one per sample)."""
    out = []
    for win in build_windows(dataset, window_size):
        if -1 in win.verb_labels or -1 in win.noun_labels:
            raise ValueError("label sequences require a fully labeled dataset")
        out.append(LabelSequence(tuple(zip(win.verb_labels, win.noun_labels))))
    return out


class LabelSequenceModel(Module):
    def __init__(self, num_verbs: int, num_nouns: int, window_size: int,
                 embed_dim: int, num_layers: int, num_heads: int, ff_multiplier: int,
                 init_scale: float, layer_norm_eps: float,
                 rng: np.random.Generator, dtype=np.float32,
                 pos_init_scale: float | None = None, qk_init_scale: float | None = None):
        self.num_verbs = num_verbs
        self.num_nouns = num_nouns
        self.window_size = window_size
        self.np_dtype = np.dtype(dtype)
        d = embed_dim
        pos_scale = init_scale if pos_init_scale is None else pos_init_scale
        self.verb_emb = Embedding(num_verbs, d, rng, init_scale, dtype)
        self.noun_emb = Embedding(num_nouns, d, rng, init_scale, dtype)
        self.mask_emb = ad.parameter(rng.normal(0.0, init_scale, (d,)).astype(dtype))
        self.pos = ad.parameter(rng.normal(0.0, pos_scale, (window_size, d)).astype(dtype))
        self.encoder = TransformerEncoder(d, num_layers, num_heads, ff_multiplier * d,
                                          layer_norm_eps, rng, init_scale, dtype,
                                          qk_init_scale)
        self.verb_head = Linear(d, num_verbs, rng, init_scale, dtype)
        self.noun_head = Linear(d, num_nouns, rng, init_scale, dtype)

    def forward_ids(self, verbs: np.ndarray, nouns: np.ndarray, mask: np.ndarray):
        """verbs/nouns: (b, w) ints; mask: (b, w) bool. Masked slots ignore
        their ids. Returns (verb_logits, noun_logits) Tensors of (b, w, ·)."""
        b, w = verbs.shape
        if w != self.window_size:
            raise ValueError(f"sequence length {w} != model window {self.window_size}")
        d = self.mask_emb.shape[0]
        keep = (~mask).astype(self.np_dtype)[..., None]
        mark = mask.astype(self.np_dtype)[..., None]
        tok = self.verb_emb(verbs) + self.noun_emb(nouns)
        tok = ad.mul(tok, ad.Tensor(keep)) + ad.mul(ad.reshape(self.mask_emb, (1, 1, d)),
                                                    ad.Tensor(mark))
        z = self.encoder(tok + self.pos)
        return self.verb_head(z), self.noun_head(z)

    def masked_distributions(self, verbs: np.ndarray, nouns: np.ndarray,
                             mask: np.ndarray, batch_size: int = 4096):
        """Softmax outputs at every position, batched, without gradients."""
        b = verbs.shape[0]
        pv = np.empty((b, self.window_size, self.num_verbs), dtype=np.float64)
        pn = np.empty((b, self.window_size, self.num_nouns), dtype=np.float64)
        with ad.no_grad():
            for lo in range(0, b, batch_size):
                hi = min(lo + batch_size, b)
                lv, ln_ = self.forward_ids(verbs[lo:hi], nouns[lo:hi], mask[lo:hi])
                n = hi - lo
                pv[lo:hi] = backend.softmax_fwd(
                    lv.data.reshape(n * self.window_size, -1)).reshape(n, self.window_size, -1)
                pn[lo:hi] = backend.softmax_fwd(
                    ln_.data.reshape(n * self.window_size, -1)).reshape(n, self.window_size, -1)
        return pv, pn


def build_label_model(cfg: PipelineConfig, num_verbs: int, num_nouns: int,
                      seed: int) -> LabelSequenceModel:
    rng = derive_rng(seed, "label-model-init")
    return LabelSequenceModel(
        num_verbs, num_nouns, cfg.window_size, cfg.lm_embed_dim, cfg.lm_layers,
        cfg.lm_heads, cfg.lm_ff_multiplier, cfg.init_scale, cfg.layer_norm_eps,
        rng, np.float64 if cfg.dtype == "float64" else np.float32,
        pos_init_scale=cfg.pos_init_scale, qk_init_scale=cfg.qk_init_scale,
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _sequence_arrays(sequences: list[LabelSequence]):
    s = len(sequences)
    w = len(sequences[0].actions)
    verbs = np.empty((s, w), dtype=np.int64)
    nouns = np.empty((s, w), dtype=np.int64)
    for i, seq in enumerate(sequences):
        for j, (v, n) in enumerate(seq.actions):
            verbs[i, j] = v
            nouns[i, j] = n
    return verbs, nouns


def lm_train(sequences: list[LabelSequence], cfg: PipelineConfig, seed: int,
             metrics_out: list | None = None) -> LabelSequenceModel:
    """Train the masked label model on source label sequences.

    Each epoch draws fresh masks (every position independently with
    probability lm_mask_prob, at least one per sequence); the loss is
    cross-entropy on masked positions only. Deterministic given (cfg, seed).
    """
    if not sequences:
        raise ValueError("lm_train: empty sequence corpus")
    verbs, nouns = _sequence_arrays(sequences)
    s, w = verbs.shape
    model = build_label_model(cfg, cfg.num_verbs, cfg.num_nouns, seed)
    if verbs.max() >= model.num_verbs or nouns.max() >= model.num_nouns:
        raise ValueError("label sequence ids exceed the configured vocabulary")
    opt = Adam(model.parameters(), lr=cfg.learning_rate_lm)
    for epoch in range(cfg.lm_epochs):
        rng = derive_rng(seed, "lm-mask", epoch)
        mask = rng.random((s, w)) < cfg.lm_mask_prob
        none = ~mask.any(axis=1)
        if none.any():
            forced = rng.integers(0, w, size=int(none.sum()))
            mask[np.where(none)[0], forced] = True
        order = derive_rng(seed, "lm-order", epoch).permutation(s)
        total = 0.0
        n_batches = 0
        for lo in range(0, s, cfg.lm_batch_size):
            sel = order[lo:lo + cfg.lm_batch_size]
            mb = mask[sel]
            lv, ln_ = model.forward_ids(verbs[sel], nouns[sel], mb)
            flat = mb.ravel()
            rows = np.where(flat)[0]
            loss = ad.cross_entropy(ad.getitem(ad.reshape(lv, (-1, model.num_verbs)), rows),
                                    verbs[sel].ravel()[rows]) + \
                ad.cross_entropy(ad.getitem(ad.reshape(ln_, (-1, model.num_nouns)), rows),
                                 nouns[sel].ravel()[rows])
            if not np.isfinite(float(loss.data)):
                raise TrainingDiverged(f"non-finite label-model loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data)
            n_batches += 1
        if metrics_out is not None:
            metrics_out.append({"epoch": epoch, "loss_masked": total / max(n_batches, 1)})
    return model


def masked_position_accuracy(model: LabelSequenceModel, sequences: list[LabelSequence]) -> float:
    """Leave-one-out masked accuracy: every position of every sequence is
    masked in turn; a hit needs both verb and noun argmax correct."""
    verbs, nouns = _sequence_arrays(sequences)
    s, w = verbs.shape
    verbs_rep = np.repeat(verbs, w, axis=0)
    nouns_rep = np.repeat(nouns, w, axis=0)
    mask = np.tile(np.eye(w, dtype=bool), (s, 1))
    pv, pn = model.masked_distributions(verbs_rep, nouns_rep, mask)
    pos = np.tile(np.arange(w), s)
    rows = np.arange(s * w)
    pred_v = pv[rows, pos].argmax(axis=1)
    pred_n = pn[rows, pos].argmax(axis=1)
    true_v = verbs_rep[rows, pos]
    true_n = nouns_rep[rows, pos]
    return float(np.mean((pred_v == true_v) & (pred_n == true_n)))


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def score_sequence(model: LabelSequenceModel, sequence: LabelSequence):
    """Pseudo-log-likelihood of a full sequence.

    Returns (score, verb_dists, noun_dists) where the dists are the model's
    per-position distributions under leave-one-out masking (row i is the
    distribution at position i when position i is masked).
    """
    w = len(sequence.actions)
    verbs = np.array([[v for v, _ in sequence.actions]] * w, dtype=np.int64)
    nouns = np.array([[n for _, n in sequence.actions]] * w, dtype=np.int64)
    for v, n in sequence.actions:
        if not (0 <= v < model.num_verbs and 0 <= n < model.num_nouns):
            raise ValueError(f"action ({v}, {n}) outside the model vocabulary")
    mask = np.eye(w, dtype=bool)
    pv, pn = model.masked_distributions(verbs, nouns, mask)
    rows = np.arange(w)
    verb_dists = pv[rows, rows]  # (w, V): position i under mask at i
    noun_dists = pn[rows, rows]
    score = float(np.sum(np.log(verb_dists[rows, verbs[0]])) +
                  np.sum(np.log(noun_dists[rows, nouns[0]])))
    return score, verb_dists, noun_dists


# ---------------------------------------------------------------------------
# Rescoring
# ---------------------------------------------------------------------------

@dataclass
class RescoreResult:
    verb_probs: np.ndarray  # fused central verb distribution
    noun_probs: np.ndarray
    lm_verb_probs: np.ndarray  # winner's central-position model distribution
    lm_noun_probs: np.ndarray
    winner: tuple[tuple[int, int], ...]
    winner_score: float
    num_candidates: int


def blend(y_ms: np.ndarray, y_lm: np.ndarray, beta: float) -> np.ndarray:
    """(1 - beta) * model prediction + beta * label-model prediction.

    The endpoints return exact copies of the corresponding input."""
    if beta == 0.0:
        return np.array(y_ms, dtype=np.float64, copy=True)
    if beta == 1.0:
        return np.array(y_lm, dtype=np.float64, copy=True)
    return (1.0 - beta) * np.asarray(y_ms, dtype=np.float64) \
        + beta * np.asarray(y_lm, dtype=np.float64)


def top_k_candidates(seq_verb: np.ndarray, seq_noun: np.ndarray,
                     support: np.ndarray, k: int, num_nouns: int) -> np.ndarray:
    """Per-position top-k action ids (verb * num_nouns + noun).

    seq_verb: (S, w, V); seq_noun: (S, w, N); support: (P,) action ids to rank
    (falls back to the full vocabulary when P < k). Ties break toward the
    lower action id. Returns (S, w, k_eff) with k_eff = min(k, pool size).
    """
    if support.shape[0] < k:
        nv, nn_ = seq_verb.shape[-1], seq_noun.shape[-1]
        support = np.arange(nv * nn_, dtype=np.int64)
    sup_v = support // num_nouns
    sup_n = support % num_nouns
    scores = seq_verb[..., sup_v] * seq_noun[..., sup_n]  # (S, w, P)
    k_eff = min(k, support.shape[0])
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k_eff]
    return support[order]


def _context_combos(w: int, k: int) -> np.ndarray:
    """(k**(w-1), w-1) index tuples in C order (first position slowest)."""
    if w == 1:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.indices((k,) * (w - 1)).reshape(w - 1, -1)
    return grids.T.astype(np.int64)


def masked_slot_distributions(model: LabelSequenceModel, actions: np.ndarray,
                              batch_size: int = 4096):
    """Model distributions at the single masked slot of each encoded row.

    actions: (R, w) action ids with MASK_SLOT at exactly one position per row.
    Returns (pv (R, V), pn (R, N)) float64.
    """
    mask = actions == MASK_SLOT
    ids = np.where(mask, 0, actions)
    verbs = ids // model.num_nouns
    nouns = ids % model.num_nouns
    r = actions.shape[0]
    slot = mask.argmax(axis=1)
    pv = np.empty((r, model.num_verbs), dtype=np.float64)
    pn = np.empty((r, model.num_nouns), dtype=np.float64)
    with ad.no_grad():
        for lo in range(0, r, batch_size):
            hi = min(lo + batch_size, r)
            lv, ln_ = model.forward_ids(verbs[lo:hi], nouns[lo:hi], mask[lo:hi])
            rows = np.arange(hi - lo)
            pv[lo:hi] = backend.softmax_fwd(lv.data[rows, slot[lo:hi]])
            pn[lo:hi] = backend.softmax_fwd(ln_.data[rows, slot[lo:hi]])
    return pv, pn


def _unique_rows(flat: np.ndarray, num_actions: int):
    """Deduplicate encoded label rows; packs each row into one int64 when the
    vocabulary is small enough (much faster than structured unique)."""
    w = flat.shape[1]
    if num_actions + 1 <= 255 and w <= 8:
        shifts = (8 * np.arange(w, dtype=np.uint64))[None, :]
        keys = ((flat + 1).astype(np.uint64) << shifts).sum(axis=1).astype(np.int64)
        uniq_keys, index, inverse = np.unique(keys, return_index=True, return_inverse=True)
        return flat[index], inverse
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    return uniq, inverse


def _score_cubes(model: LabelSequenceModel, cand: np.ndarray, k: int,
                 lm_batch: int = 4096):
    """PLL score cube for each window's candidate grid.

    cand: (U, w, k) action ids. Returns (scores (U, k**w) float64,
    center_pv (U, C, V), center_pn (U, C, N)) where C = k**(w-1) and the
    center arrays hold the model distributions at the central position for
    every context combination (needed to read off the winner's distribution).
    """
    u, w, _ = cand.shape
    nn_ = model.num_nouns
    combos = _context_combos(w, k)  # (C, w-1)
    c = combos.shape[0]
    center = (w - 1) // 2
    # encoded masked rows for every (window, masked position, context)
    rows = np.empty((u, w, c, w), dtype=np.int64)
    for i in range(w):
        others = [j for j in range(w) if j != i]
        for slot, j in enumerate(others):
            rows[:, i, :, j] = cand[:, j, :][:, combos[:, slot]]
        rows[:, i, :, i] = MASK_SLOT
    flat = rows.reshape(u * w * c, w)
    uniq, inverse = _unique_rows(flat, model.num_verbs * nn_)
    pv_at, pn_at = masked_slot_distributions(model, uniq, lm_batch)
    inv3 = inverse.reshape(u, w, c)
    cand_v = cand // nn_
    cand_n = cand % nn_
    scores = np.zeros((u,) + (k,) * w, dtype=np.float64)
    for i in range(w):
        rid = inv3[:, i]  # (U, C) unique-row ids
        tv = pv_at[rid[:, :, None], cand_v[:, None, i, :]]  # (U, C, k)
        tn = pn_at[rid[:, :, None], cand_n[:, None, i, :]]
        term = np.log(tv) + np.log(tn)
        term = term.reshape((u,) + (k,) * (w - 1) + (k,))
        scores += np.moveaxis(term, -1, i + 1)
    center_pv = pv_at[inv3[:, center]]  # (U, C, V)
    center_pn = pn_at[inv3[:, center]]
    return scores.reshape(u, -1), center_pv, center_pn


def _winner_context_index(flat_idx: np.ndarray, w: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Unravel cube argmax -> (choices (U, w), center-context index (U,))."""
    choices = np.stack(np.unravel_index(flat_idx, (k,) * w), axis=1)
    center = (w - 1) // 2
    others = [j for j in range(w) if j != center]
    ctx = np.zeros(flat_idx.shape[0], dtype=np.int64)
    for j in others:
        ctx = ctx * k + choices[:, j]
    return choices, ctx


def rescore_batch(seq_verb: np.ndarray, seq_noun: np.ndarray,
                  central_verb: np.ndarray, central_noun: np.ndarray,
                  model: LabelSequenceModel, support: np.ndarray,
                  k: int, beta: float, cap: int) -> list[RescoreResult]:
    """Rescore many windows at once; identical candidate grids are scored once."""
    s, w, _ = seq_verb.shape
    nn_ = model.num_nouns
    cand = top_k_candidates(seq_verb, seq_noun, support, k, nn_)
    k_eff = cand.shape[-1]
    if k_eff ** w > cap:
        raise EnumerationCapExceeded(
            f"top_k**window_size = {k_eff}**{w} = {k_eff ** w} exceeds the enumeration cap "
            f"{cap}; lower top_k or window_size (or raise enumeration_cap)")
    uniq_cand, inverse = np.unique(cand.reshape(s, w * k_eff), axis=0, return_inverse=True)
    uniq_cand = uniq_cand.reshape(-1, w, k_eff)
    u = uniq_cand.shape[0]
    winners = np.empty((u, w), dtype=np.int64)
    win_scores = np.empty(u, dtype=np.float64)
    lm_v = np.empty((u, model.num_verbs), dtype=np.float64)
    lm_n = np.empty((u, model.num_nouns), dtype=np.float64)
    per_row = 8 * (w + model.num_verbs + model.num_nouns)
    chunk = max(1, 150_000_000 // (w * k_eff ** max(w - 1, 0) * per_row))
    for lo in range(0, u, chunk):
        hi = min(lo + chunk, u)
        scores, center_pv, center_pn = _score_cubes(model, uniq_cand[lo:hi], k_eff)
        best = scores.argmax(axis=1)
        win_scores[lo:hi] = scores[np.arange(hi - lo), best]
        choices, ctx = _winner_context_index(best, w, k_eff)
        winners[lo:hi] = np.take_along_axis(uniq_cand[lo:hi], choices[:, :, None], axis=2)[:, :, 0]
        lm_v[lo:hi] = center_pv[np.arange(hi - lo), ctx]
        lm_n[lo:hi] = center_pn[np.arange(hi - lo), ctx]
    out = []
    for i in range(s):
        ui = inverse[i]
        actions = tuple((int(a) // nn_, int(a) % nn_) for a in winners[ui])
        out.append(RescoreResult(
            verb_probs=blend(central_verb[i], lm_v[ui], beta),
            noun_probs=blend(central_noun[i], lm_n[ui], beta),
            lm_verb_probs=lm_v[ui].copy(),
            lm_noun_probs=lm_n[ui].copy(),
            winner=actions,
            winner_score=float(win_scores[ui]),
            num_candidates=int(k_eff ** w),
        ))
    return out


def rescore(seq_verb: np.ndarray, seq_noun: np.ndarray,
            central_verb: np.ndarray, central_noun: np.ndarray,
            model: LabelSequenceModel, support: np.ndarray,
            k: int, beta: float, cap: int = 1_000_000) -> RescoreResult:
    """Single-window rescoring; see rescore_batch."""
    return rescore_batch(seq_verb[None], seq_noun[None], central_verb[None],
                         central_noun[None], model, support, k, beta, cap)[0]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_label_model(path, model: LabelSequenceModel, cfg: PipelineConfig) -> None:
    extra = {"num_verbs": model.num_verbs, "num_nouns": model.num_nouns,
             "window_size": model.window_size}
    save_checkpoint(path, "label_model", model.state_arrays(), config_to_dict(cfg), extra)


def load_label_model(path):
    _, arrays, cfg_dict, extra = load_checkpoint(path, expected_kind="label_model")
    cfg = config_from_dict(cfg_dict)
    cfg_w = dict(config_to_dict(cfg))
    cfg_w["window_size"] = int(extra["window_size"])
    cfg = config_from_dict(cfg_w)
    model = build_label_model(cfg, int(extra["num_verbs"]), int(extra["num_nouns"]), cfg.seed)
    model.load_state_arrays(arrays)
    return model, cfg
