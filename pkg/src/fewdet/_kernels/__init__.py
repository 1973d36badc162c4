"""Box-geometry kernels with a compiled core and a pure-numpy fallback.

The backend is selected once at import: the Cython extension when it built,
otherwise the pure-numpy twin. ``FEWDET_PURE=1`` forces the fallback. Both
backends are kept bit-identical (see ``benchmarks/bench_kernels.py`` for the
speed comparison and the parity tests for the equivalence check).
"""

from __future__ import annotations

import os

from . import _pure

try:
    from . import _fast
except ImportError:  # extension not built; fall back silently
    _fast = None

if _fast is not None and not os.environ.get("FEWDET_PURE"):
    _backend = _fast
    BACKEND = "fast"
else:
    _backend = _pure
    BACKEND = "pure"

iou_matrix = _backend.iou_matrix
nms_keep = _backend.nms_keep
greedy_match = _backend.greedy_match


def backends():
    """Importable backends by name, for parity tests and benchmarks."""
    out = {"pure": _pure}
    if _fast is not None:
        out["fast"] = _fast
    return out


def use(name: str) -> None:
    """Rebind the exported kernels to the named backend.

    Exists for the benchmark's pure-vs-fast end-to-end comparison; callers
    are responsible for restoring the original backend.
    """
    global iou_matrix, nms_keep, greedy_match, BACKEND
    mod = backends()[name]
    iou_matrix = mod.iou_matrix
    nms_keep = mod.nms_keep
    greedy_match = mod.greedy_match
    BACKEND = name
