"""Pure-numpy fallback for the compiled simulation core.

Implements the same ``NoiseStream`` / ``run_paths`` interface as
``_kernels``. Streams are numpy Philox generators keyed by
(seed, path_index, stream_tag) through SeedSequence, so the fallback is
bit-reproducible and scheduling-independent on its own; the draw values
differ from the compiled backend's ziggurat sampler (backends agree
statistically, not bitwise).
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import PPoly

from ._families import (
    BLOW_CAP,
    FAM_AVG_SPLINE,
    MODE_AVERAGED,
    MODE_FROZEN,
    MODE_SLOWFAST,
    TAG_AVG,
    TAG_B,
    TAG_W,
    eval_averaged,
    eval_slowfast,
)

BACKEND = "purepy"

_STEP_BLOCK = 512


class NoiseStream:
    """Deterministic gaussian stream keyed by (seed, path_index, stream_tag)."""

    def __init__(self, seed, path_index, stream_tag):
        self.seed = int(seed)
        self.path_index = int(path_index)
        self.stream_tag = int(stream_tag)
        ss = np.random.SeedSequence((self.seed, self.path_index, self.stream_tag))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def normals(self, count):
        return self._gen.standard_normal(int(count))

    def uniforms(self, count):
        return self._gen.random(int(count))


def _block_normals(gens, count):
    """(n_paths, count) normal draws, one generator per path, step-major."""
    out = np.empty((len(gens), count))
    for i, g in enumerate(gens):
        out[i] = g.standard_normal(count)
    return out


def run_paths(family, params, mode, eps, x0, y0, dt,
              n_steps, record_every, seed, path_lo, path_hi,
              want_frames, want_terminal, px_exp, py_exp,
              spline_knots=None, spline_coefs=None):
    """Vectorized mirror of ``_kernels.run_paths`` (same outputs contract)."""
    params = np.asarray(params if params is not None else [], dtype=float)
    ppoly = None
    if spline_knots is not None:
        ppoly = PPoly(np.asarray(spline_coefs, dtype=float),
                      np.asarray(spline_knots, dtype=float))

    n_rec = n_steps // record_every + 1
    n_paths = path_hi - path_lo
    dim = 2 if mode == MODE_SLOWFAST else 1

    paths = np.arange(path_lo, path_hi)
    if mode == MODE_SLOWFAST:
        gw = [NoiseStream(seed, p, TAG_W)._gen for p in paths]
        gb = [NoiseStream(seed, p, TAG_B)._gen for p in paths]
    elif mode == MODE_FROZEN:
        gb = [NoiseStream(seed, p, TAG_B)._gen for p in paths]
    else:
        gw = [NoiseStream(seed, p, TAG_AVG)._gen for p in paths]

    x = np.full(n_paths, float(x0))
    y = np.full(n_paths, float(y0))
    ok = np.ones(n_paths, dtype=bool)

    alive = np.zeros(n_rec, dtype=np.int64)
    acc = {k: np.zeros(n_rec) for k in
           ("sx", "sx2", "sx4", "sy", "sy2", "sy4", "sxp", "sxp2", "syp", "syp2")}
    frames = np.zeros((n_paths, n_rec, dim)) if want_frames else None
    fmask = np.zeros((n_paths, n_rec), dtype=np.uint8) if want_frames else None
    n_extrap = 0

    cw = np.sqrt(2.0 * dt)
    cb = np.sqrt(2.0 * dt / eps)
    dte = dt / eps
    has_px = px_exp > 0.0
    has_py = py_exp > 0.0

    def record(rec):
        alive[rec] = int(np.count_nonzero(ok))
        if mode in (MODE_SLOWFAST, MODE_AVERAGED):
            xa = x[ok]
            x2 = xa * xa
            acc["sx"][rec] = xa.sum()
            acc["sx2"][rec] = x2.sum()
            acc["sx4"][rec] = (x2 * x2).sum()
            if has_px:
                acc["sxp"][rec] = (x2 ** (0.5 * px_exp)).sum()
                acc["sxp2"][rec] = (x2 ** px_exp).sum()
        if mode in (MODE_SLOWFAST, MODE_FROZEN):
            ya = y[ok]
            y2 = ya * ya
            acc["sy"][rec] = ya.sum()
            acc["sy2"][rec] = y2.sum()
            acc["sy4"][rec] = (y2 * y2).sum()
            if has_py:
                acc["syp"][rec] = (y2 ** (0.5 * py_exp)).sum()
                acc["syp2"][rec] = (y2 ** py_exp).sum()
        if want_frames:
            if mode == MODE_SLOWFAST:
                frames[ok, rec, 0] = x[ok]
                frames[ok, rec, 1] = y[ok]
            elif mode == MODE_FROZEN:
                frames[ok, rec, 0] = y[ok]
            else:
                frames[ok, rec, 0] = x[ok]
            fmask[ok, rec] = 1

    record(0)
    rec = 0
    step = 0
    while step < n_steps:
        block = min(_STEP_BLOCK, n_steps - step)
        if mode == MODE_SLOWFAST:
            zw = _block_normals(gw, block)
            zb = _block_normals(gb, block)
        elif mode == MODE_FROZEN:
            zb = _block_normals(gb, block)
        else:
            zw = _block_normals(gw, block)
        for j in range(block):
            step += 1
            if mode == MODE_SLOWFAST:
                b, g, sig, a = eval_slowfast(family, params, x, y)
                xn = x + b * dt + cw * sig * zw[:, j]
                yn = y + g * dte + cb * a * zb[:, j]
                good = (np.isfinite(xn) & np.isfinite(yn)
                        & (np.abs(xn) <= BLOW_CAP) & (np.abs(yn) <= BLOW_CAP))
                upd = ok & good
                x = np.where(upd, xn, x)
                y = np.where(upd, yn, y)
                ok = ok & good
            elif mode == MODE_FROZEN:
                _, g, _, a = eval_slowfast(family, params, x, y)
                yn = y + g * dt + cw * a * zb[:, j]
                good = np.isfinite(yn) & (np.abs(yn) <= BLOW_CAP)
                upd = ok & good
                y = np.where(upd, yn, y)
                ok = ok & good
            else:
                b, sig, ne = eval_averaged(family, params, x, ppoly)
                n_extrap += ne
                xn = x + b * dt + cw * sig * zw[:, j]
                good = np.isfinite(xn) & (np.abs(xn) <= BLOW_CAP)
                upd = ok & good
                x = np.where(upd, xn, x)
                ok = ok & good
            if step % record_every == 0:
                rec += 1
                record(rec)

    out = {"alive": alive, "n_blown": int(n_paths - np.count_nonzero(ok)),
           "n_extrap": int(n_extrap)}
    out.update(acc)
    if want_frames:
        out["frames"] = frames
        out["frame_alive"] = fmask
    if want_terminal:
        if mode == MODE_SLOWFAST:
            term = np.stack([x, y], axis=1)
        elif mode == MODE_FROZEN:
            term = y[:, None].copy()
        else:
            term = x[:, None].copy()
        out["terminal"] = term
        out["terminal_alive"] = ok.astype(np.uint8)
    return out
