"""Model-family codes and vectorized coefficient evaluations.

Single source of truth for the closed-form coefficients of the built-in
systems; the compiled kernel mirrors these formulas in C. Everything here
is numpy-broadcastable so the same functions serve scalar probes and
path-vectorized simulation.
"""

from __future__ import annotations

import numpy as np

FAM_CONV = 0
FAM_DEC_DER = 1
FAM_DOUBLE_WELL = 2
FAM_CUBIC = 3
FAM_LIP = 4
FAM_FC_DEMO = 5
FAM_AVG_LINEAR = 10
FAM_AVG_DEMO = 11
FAM_AVG_SPLINE = 12
FAM_GENERIC = -1

MODE_SLOWFAST = 0
MODE_FROZEN = 1
MODE_AVERAGED = 2

TAG_W = 0
TAG_B = 1
TAG_AVG = 2

BLOW_CAP = 1e8

INV_SQRT2 = 1.0 / np.sqrt(2.0)
SQRT_E = float(np.exp(0.5))


def eval_slowfast(family, params, x, y):
    """Return (b, g, sigma, a) for a slow-fast family at (x, y), broadcast."""
    if family == FAM_CONV:
        return -(x + y), -y, np.broadcast_to(INV_SQRT2, np.shape(x)), np.broadcast_to(1.0, np.shape(y))
    if family == FAM_DEC_DER:
        return -(x + y), -(y + x), np.broadcast_to(INV_SQRT2, np.shape(x)), np.broadcast_to(1.0, np.shape(y))
    if family == FAM_DOUBLE_WELL:
        return (
            -(x + y),
            -y * (y + 2.0) * (y - 2.0),
            np.broadcast_to(INV_SQRT2, np.shape(x)),
            np.broadcast_to(1.0, np.shape(y)),
        )
    if family == FAM_CUBIC:
        b0_amp, g0_amp = params[0], params[1]
        return (
            -x * x * x - x + b0_amp * np.sin(y),
            -y * y * y - y + g0_amp * np.sin(x),
            np.broadcast_to(1.0, np.shape(x)),
            np.broadcast_to(1.0, np.shape(y)),
        )
    if family == FAM_LIP:
        r = params[0]
        return (
            -x - r * np.cos(y),
            -y + np.sin(x),
            np.broadcast_to(1.0, np.shape(x)),
            np.broadcast_to(1.0, np.shape(y)),
        )
    if family == FAM_FC_DEMO:
        b = -x - y
        sig = np.sqrt(1.0 + 0.25 * np.sin(y) - x / (4.0 * SQRT_E * np.sqrt(1.0 + x * x)))
        th = np.sin(x) + y
        av = 1.0 + np.sin(th) / 12.0
        g = av * av * (np.arctan(x) - y) + np.cos(th) / 6.0 * av
        return b, g, sig, av
    raise ValueError(f"unknown slow-fast family code {family}")


def eval_averaged(family, params, x, ppoly=None):
    """Return (b_bar, sigma) for an averaged family at x, broadcast.

    For FAM_AVG_SPLINE, ``ppoly`` is a scipy PPoly; evaluation clamps x to
    the knot range (constant extrapolation) and reports the clamp count.
    """
    if family == FAM_AVG_LINEAR:
        rate, sig = params[0], params[1]
        return -rate * x, np.broadcast_to(sig, np.shape(x)), 0
    if family == FAM_AVG_DEMO:
        return -x - np.arctan(x), np.broadcast_to(1.0, np.shape(x)), 0
    if family == FAM_AVG_SPLINE:
        sig = params[0]
        lo, hi = ppoly.x[0], ppoly.x[-1]
        n_extrap = int(np.count_nonzero((x < lo) | (x > hi)))
        xc = np.clip(x, lo, hi)
        return ppoly(xc), np.broadcast_to(sig, np.shape(x)), n_extrap
    raise ValueError(f"unknown averaged family code {family}")
