"""Backend selection and the chunked, scheduling-independent path driver.

The compiled core (``slowfast._kernels``) is used when importable, else the
numpy fallback (``slowfast._purepy``). Paths are split into fixed-size
chunks whose results are combined in chunk order, so output is identical
for any worker count. Set SLOWFAST_FORCE_PUREPY=1 to force the fallback.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

if os.environ.get("SLOWFAST_FORCE_PUREPY"):
    from . import _purepy as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _purepy as _impl

BACKEND = _impl.BACKEND
NoiseStream = _impl.NoiseStream

CHUNK = 256  # paths per task; fixed so results never depend on worker count

_SUM_KEYS = ("alive", "sx", "sx2", "sx4", "sy", "sy2", "sy4",
             "sxp", "sxp2", "syp", "syp2")


def run_paths_chunked(family, params, mode, eps, x0, y0, dt, n_steps,
                      record_every, seed, n_paths, workers=1,
                      want_frames=False, want_terminal=False,
                      px_exp=0.0, py_exp=0.0,
                      spline_knots=None, spline_coefs=None):
    """Run ``n_paths`` paths of a built-in family, merging chunk results."""
    bounds = [(lo, min(lo + CHUNK, n_paths)) for lo in range(0, n_paths, CHUNK)]

    def work(b):
        lo, hi = b
        return _impl.run_paths(family, params, mode, eps, x0, y0, dt,
                               n_steps, record_every, seed, lo, hi,
                               want_frames, want_terminal, px_exp, py_exp,
                               spline_knots, spline_coefs)

    if workers <= 1 or len(bounds) == 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(work, bounds))

    out = {}
    for k in _SUM_KEYS:
        out[k] = parts[0][k].copy()
        for p in parts[1:]:
            out[k] += p[k]
    out["n_blown"] = sum(p["n_blown"] for p in parts)
    out["n_extrap"] = sum(p["n_extrap"] for p in parts)
    if want_frames:
        out["frames"] = np.concatenate([p["frames"] for p in parts], axis=0)
        out["frame_alive"] = np.concatenate([p["frame_alive"] for p in parts], axis=0)
    if want_terminal:
        out["terminal"] = np.concatenate([p["terminal"] for p in parts], axis=0)
        out["terminal_alive"] = np.concatenate([p["terminal_alive"] for p in parts], axis=0)
    return out
