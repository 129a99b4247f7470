"""Kernel backend selection.

At import time the compiled extension (``seqmix.nn._ckernels``) is used when
present; otherwise the pure-numpy kernels take over. Override with
``SEQMIX_KERNELS=python`` or ``SEQMIX_KERNELS=cython`` (the latter raises if
the extension was not built). ``set_backend`` switches at runtime, which the
parity tests and the backend benchmark rely on.
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels_py

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_BACKENDS = {"python": kernels_py}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def _pick_initial() -> str:
    choice = os.environ.get("SEQMIX_KERNELS", "auto").lower()
    if choice == "auto":
        return "cython" if "cython" in _BACKENDS else "python"
    if choice not in _BACKENDS:
        raise ImportError(
            f"SEQMIX_KERNELS={choice!r} but only {available_backends()} are available "
            "(build the extension with `pip install -e .` to enable cython)"
        )
    return choice


_active = _pick_initial()


def backend_name() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = name


def _mod():
    return _BACKENDS[_active]


def _c2(x):
    return np.ascontiguousarray(x)


def _labels(x):
    return np.ascontiguousarray(x, dtype=np.int64)


def layernorm_fwd(x, gamma, beta, eps):
    return _mod().layernorm_fwd(_c2(x), _c2(gamma), _c2(beta), float(eps))


def layernorm_bwd(dy, x, gamma, mean, rstd):
    return _mod().layernorm_bwd(_c2(dy), _c2(x), _c2(gamma), _c2(mean), _c2(rstd))


def softmax_fwd(x):
    return _mod().softmax_fwd(_c2(x))


def softmax_bwd(dy, y):
    return _mod().softmax_bwd(_c2(dy), _c2(y))


def softmax_xent_fwd(logits, labels):
    return _mod().softmax_xent_fwd(_c2(logits), _labels(labels))


def softmax_xent_bwd(probs, labels, dlosses):
    return _mod().softmax_xent_bwd(_c2(probs), _labels(labels), _c2(dlosses))


def relu_fwd(x):
    return _mod().relu_fwd(_c2(x))


def relu_bwd(dy, x):
    return _mod().relu_bwd(_c2(dy), _c2(x))
