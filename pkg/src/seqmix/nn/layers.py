"""Model building blocks: linear, layer norm, embeddings, attention, encoder."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Tracks parameters and submodules assigned as attributes."""

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_modules", {})[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            self.__dict__.setdefault("_modules", {})[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, p in self.__dict__.get("_params", {}).items():
            out.append((prefix + name, p))
        for name, m in self.__dict__.get("_modules", {}).items():
            if isinstance(m, (list, tuple)):
                for i, sub in enumerate(m):
                    out.extend(sub.named_parameters(f"{prefix}{name}.{i}."))
            else:
                out.extend(m.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            arr = arrays[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.data.dtype)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 init_scale: float, dtype):
        self.weight = ad.parameter(rng.normal(0.0, init_scale, (in_dim, out_dim)).astype(dtype))
        self.bias = ad.parameter(np.zeros(out_dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float, dtype):
        self.gamma = ad.parameter(np.ones(dim, dtype=dtype))
        self.beta = ad.parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator,
                 init_scale: float, dtype):
        self.weight = ad.parameter(rng.normal(0.0, init_scale, (count, dim)).astype(dtype))

    def __call__(self, ids) -> Tensor:
        return ad.embedding(self.weight, ids)


class SelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng, init_scale: float, dtype,
                 qk_init_scale: float | None = None):
        assert dim % heads == 0
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = Linear(dim, 3 * dim, rng, init_scale, dtype)
        if qk_init_scale is not None:
            # query/key blocks can start larger than the rest: attention
            # stays near-uniform far too long otherwise
            self.qkv.weight.data[:, :2 * dim] *= qk_init_scale / init_scale
        self.out = Linear(dim, dim, rng, init_scale, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h, hd = self.heads, self.head_dim
        qkv = self.qkv(x)  # (b, t, 3d)
        qkv = ad.reshape(qkv, (b, t, 3, h, hd))
        qkv = ad.transpose(qkv, (2, 0, 3, 1, 4))  # (3, b, h, t, hd)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.sqrt_dim_scale(q @ ad.transpose(k, (0, 1, 3, 2)), hd)  # (b, h, t, t)
        attn = ad.softmax(scores)
        ctx = attn @ v  # (b, h, t, hd)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng, init_scale: float, dtype):
        self.lin1 = Linear(dim, hidden, rng, init_scale, dtype)
        self.lin2 = Linear(hidden, dim, rng, init_scale, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ad.relu(self.lin1(x)))


class EncoderLayer(Module):
    """Pre-norm residual block: x + attn(ln(x)), then x + ff(ln(x))."""

    def __init__(self, dim: int, heads: int, ff_hidden: int, eps: float,
                 rng, init_scale: float, dtype, qk_init_scale: float | None = None):
        self.ln1 = LayerNorm(dim, eps, dtype)
        self.attn = SelfAttention(dim, heads, rng, init_scale, dtype, qk_init_scale)
        self.ln2 = LayerNorm(dim, eps, dtype)
        self.ff = FeedForward(dim, ff_hidden, rng, init_scale, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class TransformerEncoder(Module):
    def __init__(self, dim: int, layers: int, heads: int, ff_hidden: int,
                 eps: float, rng, init_scale: float, dtype,
                 qk_init_scale: float | None = None):
        self.blocks = [EncoderLayer(dim, heads, ff_hidden, eps, rng, init_scale, dtype,
                                    qk_init_scale)
                       for _ in range(layers)]
        self.final_ln = LayerNorm(dim, eps, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.final_ln(x)
