"""Kernel selection: compiled Cython kernel when importable, numpy otherwise.

``SPDCFID_BACKEND=python`` or ``=cython`` forces a choice; forcing cython
without the compiled module is an error.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernel_py
from .system import SurfaceTable

try:
    from ._ctrace import trace_arrays_c as _trace_c
except ImportError:  # extension not built
    _trace_c = None

AVAILABLE = ("cython", "python") if _trace_c is not None else ("python",)


def _default() -> str:
    forced = os.environ.get("SPDCFID_BACKEND", "").strip().lower()
    if forced:
        if forced not in ("python", "cython"):
            raise ImportError(f"SPDCFID_BACKEND must be 'python' or 'cython', got {forced!r}")
        if forced == "cython" and _trace_c is None:
            raise ImportError("SPDCFID_BACKEND=cython but the compiled kernel is not built")
        return forced
    return AVAILABLE[0]


BACKEND = _default()


def trace_arrays(tab: SurfaceTable, z, x, dz, dx, lam, pol_h, t, start, status,
                 group: bool = False, vertices=None, backend: str | None = None) -> None:
    backend = backend or BACKEND
    if backend == "python":
        _kernel_py.trace_arrays(tab, z, x, dz, dx, lam, pol_h, t, start, status, group, vertices)
        return
    if backend != "cython" or _trace_c is None:
        raise ValueError(f"backend {backend!r} unavailable; have {AVAILABLE}")
    record = vertices is not None
    verts = vertices if record else np.zeros((1, 1, 2))
    _trace_c(
        tab.z, tab.kind, tab.curvature, tab.conic, np.ascontiguousarray(tab.coeffs), tab.aperture,
        tab.medium_after, tab.m_kind, tab.m_so, tab.m_se, tab.m_horizontal, tab.m_axis, tab.plane_z,
        z, x, dz, dx, lam, pol_h.view(np.uint8), t, start, status, bool(group), verts, record,
    )
