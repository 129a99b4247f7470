"""Pipeline configuration.

Single source of truth for every tunable constant in the package. The config
file format is a flat ``key = value`` text file: one assignment per line,
``#`` starts a comment, blank lines are ignored, and any key left out takes
its default below. Every key can also be overridden through the environment
as ``SEQMIX_<KEY-IN-UPPERCASE>`` (applied after the file), and every key is
exposed as a CLI flag generated from this schema (see ``cli_flag_name``).
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Any

from .errors import ConfigError

ENV_PREFIX = "SEQMIX_"

GRAMMAR_KINDS = ("default", "deterministic", "uniform")


def _f(default, help_: str, flag: str | None = None):
    meta = {"help": help_}
    if flag:
        meta["flag"] = flag
    return field(default=default, metadata=meta)


@dataclass(frozen=True)
class PipelineConfig:
    """All knobs for corpus generation, training, rescoring and evaluation."""

    seed: int = _f(7, "root seed; all randomness derives from it")

    # method
    window_size: int = _f(5, "actions per temporal window (odd; 1 disables sequence context)", flag="window")
    confidence_threshold: float = _f(0.75, "minimum (top verb prob + top noun prob)/2 to keep a pseudo-label")
    num_replacements: int = _f(1, "non-central window positions swapped for matching target samples", flag="replacements")
    lm_beta: float = _f(0.25, "weight of the label-model distribution in the final blend")
    top_k: int = _f(5, "candidate actions per position when enumerating label sequences")
    cooccurrence_factor: float = _f(0.01, "multiplier applied to verb/noun pairs unseen in source labels")
    enumeration_cap: int = _f(1_000_000, "maximum candidate sequences (top_k ** window_size) allowed")
    use_mixing: bool = _f(True, "swap in pseudo-labeled target samples and add the all-position sequence loss", flag="mixing")
    use_dc: bool = _f(True, "train the adversarial per-position domain classifier", flag="dc")
    use_lm: bool = _f(True, "rescore predictions with the masked label model at evaluation", flag="lm")
    use_cooc: bool = _f(True, "down-weight unseen verb/noun pairs for the action argmax at evaluation", flag="cooc")
    pseudo_refresh_every: int = _f(0, "re-compute pseudo-labels every N epochs during training (0 = once, before training)")
    include_target_windows: bool = _f(False, "also feed pure target windows (domain loss only) during training", flag="target-windows")

    # sequence model
    embed_dim: int = _f(64, "shared embedding width of the sequence model")
    num_layers: int = _f(2, "encoder layers in the sequence model")
    num_heads: int = _f(4, "attention heads in the sequence model")
    ff_multiplier: int = _f(4, "feed-forward width as a multiple of embed_dim")
    init_scale: float = _f(0.02, "std of the normal init for weights")
    pos_init_scale: float = _f(0.1, "std of the positional-embedding init (positions must be separable early)")
    qk_init_scale: float = _f(0.15, "std of the attention query/key init (speeds up attention sharpening)")
    layer_norm_eps: float = _f(1e-5, "epsilon inside layer normalization")
    grl_lambda: float = _f(1.0, "gradient scale of the reversal layer feeding the domain classifier")
    loss_weight_central: float = _f(1.0, "weight of the central-action classification loss")
    loss_weight_sequence: float = _f(1.0, "weight of the all-position classification loss")
    loss_weight_domain: float = _f(1.0, "weight of the domain classification loss")
    dtype: str = _f("float32", "training dtype: float32 or float64")

    # optimization
    learning_rate: float = _f(0.005, "SGD step size for the sequence model")
    momentum: float = _f(0.0, "SGD momentum for the sequence model")
    epochs: int = _f(100, "training epochs for the sequence model")
    pretrain_epochs: int = _f(40, "source-only epochs for the model that assigns pseudo-labels")
    batch_size: int = _f(128, "windows per optimization step")
    eval_batch_size: int = _f(512, "windows per forward pass at evaluation")
    val_every: int = _f(10, "compute validation metrics every N epochs (always on the last)")

    # label model
    learning_rate_lm: float = _f(0.001, "Adam step size for the masked label model")
    lm_epochs: int = _f(100, "training epochs for the masked label model")
    lm_embed_dim: int = _f(32, "embedding width of the label model")
    lm_layers: int = _f(1, "encoder layers in the label model")
    lm_heads: int = _f(2, "attention heads in the label model")
    lm_ff_multiplier: int = _f(4, "label-model feed-forward width multiple")
    lm_mask_prob: float = _f(0.25, "per-position masking probability during label-model training")
    lm_batch_size: int = _f(256, "label sequences per optimization step")

    # synthetic corpus
    num_verbs: int = _f(12, "verb vocabulary size")
    num_nouns: int = _f(16, "noun vocabulary size")
    num_actions: int = _f(24, "distinct (verb, noun) pairs that actually occur")
    videos_per_domain: int = _f(200, "videos generated per domain")
    actions_per_video: int = _f(30, "actions per generated video")
    modalities: str = _f("rgb:4:32,flow:4:32,audio:4:32", "comma list of name:clip_count:feature_dim")
    grammar: str = _f("default", "transition structure: default (peaked), deterministic (cycle) or uniform")
    transition_peak: float = _f(0.85, "probability mass on the designated successor action (default grammar)")
    class_mean_scale: float = _f(1.0, "std of the per-class feature means")
    shift_magnitude: float = _f(6.0, "distance between source and target class-conditional feature means")
    noise_scale: float = _f(3.0, "std of per-clip feature noise around the class mean")

    def validate(self) -> "PipelineConfig":
        """Raise ConfigError naming the first violated field; return self."""
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ConfigError("window_size", f"must be an odd positive integer, got {self.window_size}")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ConfigError("confidence_threshold", f"must lie in [0, 1], got {self.confidence_threshold}")
        if not 0 <= self.num_replacements <= self.window_size - 1:
            raise ConfigError(
                "num_replacements",
                f"must lie in [0, window_size-1] = [0, {self.window_size - 1}], got {self.num_replacements}",
            )
        if not 0.0 <= self.lm_beta <= 1.0:
            raise ConfigError("lm_beta", f"must lie in [0, 1], got {self.lm_beta}")
        if self.top_k < 1:
            raise ConfigError("top_k", f"must be a positive integer, got {self.top_k}")
        if not 0.0 < self.cooccurrence_factor <= 1.0:
            raise ConfigError("cooccurrence_factor", f"must lie in (0, 1], got {self.cooccurrence_factor}")
        if self.enumeration_cap < 1:
            raise ConfigError("enumeration_cap", f"must be positive, got {self.enumeration_cap}")
        if self.pseudo_refresh_every < 0:
            raise ConfigError("pseudo_refresh_every", f"must be >= 0, got {self.pseudo_refresh_every}")
        for name in ("embed_dim", "num_layers", "num_heads", "ff_multiplier",
                     "lm_embed_dim", "lm_layers", "lm_heads", "lm_ff_multiplier"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be a positive integer, got {getattr(self, name)}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError("num_heads", f"must divide embed_dim={self.embed_dim}, got {self.num_heads}")
        if self.lm_embed_dim % self.lm_heads != 0:
            raise ConfigError("lm_heads", f"must divide lm_embed_dim={self.lm_embed_dim}, got {self.lm_heads}")
        for name in ("init_scale", "pos_init_scale", "qk_init_scale"):
            if getattr(self, name) <= 0:
                raise ConfigError(name, f"must be positive, got {getattr(self, name)}")
        if self.layer_norm_eps <= 0:
            raise ConfigError("layer_norm_eps", f"must be positive, got {self.layer_norm_eps}")
        if self.grl_lambda < 0:
            raise ConfigError("grl_lambda", f"must be >= 0, got {self.grl_lambda}")
        for name in ("loss_weight_central", "loss_weight_sequence", "loss_weight_domain"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype", f"must be float32 or float64, got {self.dtype!r}")
        for name in ("learning_rate", "learning_rate_lm"):
            if getattr(self, name) <= 0:
                raise ConfigError(name, f"must be positive, got {getattr(self, name)}")
        if self.momentum < 0 or self.momentum >= 1:
            raise ConfigError("momentum", f"must lie in [0, 1), got {self.momentum}")
        for name in ("epochs", "lm_epochs", "batch_size", "eval_batch_size",
                     "lm_batch_size", "val_every"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be a positive integer, got {getattr(self, name)}")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs", f"must be >= 0, got {self.pretrain_epochs}")
        if not 0.0 < self.lm_mask_prob <= 1.0:
            raise ConfigError("lm_mask_prob", f"must lie in (0, 1], got {self.lm_mask_prob}")
        for name in ("num_verbs", "num_nouns", "videos_per_domain", "actions_per_video"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be a positive integer, got {getattr(self, name)}")
        if not 1 <= self.num_actions <= self.num_verbs * self.num_nouns:
            raise ConfigError(
                "num_actions",
                f"must lie in [1, num_verbs*num_nouns] = [1, {self.num_verbs * self.num_nouns}], got {self.num_actions}",
            )
        parse_modalities(self.modalities)
        if self.grammar not in GRAMMAR_KINDS:
            raise ConfigError("grammar", f"must be one of {GRAMMAR_KINDS}, got {self.grammar!r}")
        if not 0.0 < self.transition_peak <= 1.0:
            raise ConfigError("transition_peak", f"must lie in (0, 1], got {self.transition_peak}")
        if self.class_mean_scale <= 0:
            raise ConfigError("class_mean_scale", f"must be positive, got {self.class_mean_scale}")
        if self.shift_magnitude < 0:
            raise ConfigError("shift_magnitude", f"must be >= 0, got {self.shift_magnitude}")
        if self.noise_scale <= 0:
            raise ConfigError("noise_scale", f"must be positive, got {self.noise_scale}")
        return self


def parse_modalities(spec: str) -> tuple[tuple[str, int, int], ...]:
    """Parse 'name:clips:dim,...' into ((name, clip_count, feature_dim), ...)."""
    out = []
    seen = set()
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError("modalities", f"expected name:clip_count:feature_dim, got {part!r}")
        name, clips_s, dim_s = (b.strip() for b in bits)
        try:
            clips, dim = int(clips_s), int(dim_s)
        except ValueError:
            raise ConfigError("modalities", f"non-integer clip_count/feature_dim in {part!r}") from None
        if not name or name in seen:
            raise ConfigError("modalities", f"empty or duplicate modality name in {part!r}")
        if clips < 1 or dim < 1:
            raise ConfigError("modalities", f"clip_count and feature_dim must be positive in {part!r}")
        seen.add(name)
        out.append((name, clips, dim))
    if not out:
        raise ConfigError("modalities", "at least one modality is required")
    return tuple(out)


def _parse_value(name: str, raw: str, target_type: type) -> Any:
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(name, str(exc)) from None


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}
_TYPE_MAP = {"int": int, "float": float, "bool": bool, "str": str}


def field_type(name: str) -> type:
    t = _FIELD_TYPES[name]
    return _TYPE_MAP[t] if isinstance(t, str) else t


def cli_flag_name(f: dataclasses.Field) -> str:
    """CLI flag for a config field (``--window`` for window_size, etc.)."""
    return f.metadata.get("flag", f.name.replace("_", "-"))


def load_config(path: str | os.PathLike | None = None,
                env: dict[str, str] | None = None,
                overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Build a validated config from file, environment and explicit overrides.

    Precedence (lowest to highest): defaults, config file, SEQMIX_* environment
    variables, `overrides`. An empty or absent file yields pure defaults.
    """
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
        for lineno, line in enumerate(lines, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError("config", f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
            key, raw = (s.strip() for s in stripped.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ConfigError(key, f"unknown config key at {path}:{lineno}")
            values[key] = _parse_value(key, raw, field_type(key))
    env = os.environ if env is None else env
    for key in _FIELD_TYPES:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            values[key] = _parse_value(key, env[env_key], field_type(key))
    if overrides:
        for key, val in overrides.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(key, "unknown config key")
            if val is not None:
                values[key] = val
    return PipelineConfig(**values).validate()


def save_config(cfg: PipelineConfig, path: str | os.PathLike) -> None:
    """Write a config file that round-trips losslessly through load_config."""
    lines = []
    for f in fields(PipelineConfig):
        val = getattr(cfg, f.name)
        rendered = repr(val) if isinstance(val, float) else str(val)
        lines.append(f"{f.name} = {rendered}\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def config_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    return {f.name: getattr(cfg, f.name) for f in fields(PipelineConfig)}


def config_from_dict(d: dict[str, Any]) -> PipelineConfig:
    return PipelineConfig(**d).validate()
