"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy/scipy
implementation is the fallback. Set NUDGEKIT_KERNELS=numpy (or =compiled)
to force a backend; forcing an unavailable backend raises at import.
"""

from __future__ import annotations

import os

from . import _numpy

_BACKENDS = {"numpy": _numpy}
try:
    from . import _speedups

    _BACKENDS["compiled"] = _speedups
except ImportError:
    _speedups = None

_forced = os.environ.get("NUDGEKIT_KERNELS", "").strip().lower()
if _forced:
    if _forced not in _BACKENDS:
        raise ImportError(
            f"NUDGEKIT_KERNELS={_forced!r} requested but only "
            f"{sorted(_BACKENDS)} available"
        )
    ACTIVE_BACKEND = _forced
else:
    ACTIVE_BACKEND = "compiled" if "compiled" in _BACKENDS else "numpy"

_active = _BACKENDS[ACTIVE_BACKEND]


def _select(name: str):
    # The compiled module only defines kernels where native loops beat
    # numpy's BLAS/SIMD paths; anything else falls back per function.
    return getattr(_active, name, None) or getattr(_numpy, name)


knowledge_attention_scores = _select("knowledge_attention_scores")
graph_attention_scores = _select("graph_attention_scores")
segment_softmax = _select("segment_softmax")
weighted_neighbor_sum = _select("weighted_neighbor_sum")
dot_scores = _select("dot_scores")

KERNEL_NAMES = (
    "knowledge_attention_scores",
    "graph_attention_scores",
    "segment_softmax",
    "weighted_neighbor_sum",
    "dot_scores",
)


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend_function(name: str, kernel: str):
    """A specific backend's kernel, falling back to numpy when absent.

    Used by the equivalence tests and the backend comparison benchmark.
    """
    module = _BACKENDS[name]
    return getattr(module, kernel, None) or getattr(_numpy, kernel)


def backend(name: str):
    return _BACKENDS[name]
