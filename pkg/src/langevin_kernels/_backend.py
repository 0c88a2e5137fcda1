"""Selects the compiled kernels when the extension is importable.

Set ``LANGEVIN_KERNELS_PURE=1`` to force the pure-Python paths.
"""

from __future__ import annotations

import os

import numpy as np

HAVE_COMPILED = False
_ck = None

if os.environ.get("LANGEVIN_KERNELS_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _ck  # type: ignore[attr-defined]

        HAVE_COMPILED = True
    except ImportError:  # pragma: no cover - depends on the build
        _ck = None


def name() -> str:
    return "compiled" if HAVE_COMPILED else "python"


def em_flow(tag, times, dW, x, v):
    """Flow and derivative flows for the tagged sigma families (compiled)."""
    shape = np.broadcast(x, v).shape
    xs = np.ascontiguousarray(np.broadcast_to(x, shape), dtype=float).ravel()
    vs = np.ascontiguousarray(np.broadcast_to(v, shape), dtype=float).ravel()
    dt = float(times[1] - times[0])
    out = _ck.em_flow(int(tag[0]), float(tag[1]), float(tag[2]), np.ascontiguousarray(dW, dtype=float),
                      dt, xs, vs)
    n = dW.size + 1
    names = ("gamma", "dv", "dx", "dxx", "dxv", "dvv")
    return {k: arr.reshape((n,) + shape) for k, arr in zip(names, out)}
