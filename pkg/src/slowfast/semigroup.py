"""Monte Carlo semigroup values, their space derivatives under common
random numbers, and exponential decay-rate fitting (the strong exponential
stability tester)."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .integrator import (SimConfig, simulate_averaged_batch,
                         simulate_frozen_batch, simulate_slow_fast_batch)
from .model import AveragedSystem, FrozenSystem, SlowFastSystem


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class DecayFit:
    times: np.ndarray
    magnitudes: np.ndarray
    ses: Optional[np.ndarray]
    window: tuple
    rate: float
    prefactor: float
    r_squared: float
    windows_consistent: bool
    half_rates: tuple
    verdict: str  # "exponential" | "sub-exponential"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,magnitude,se\n")
            ses = self.ses if self.ses is not None else np.zeros_like(self.times)
            for t, m, s in zip(self.times, self.magnitudes, ses):
                fh.write("%.17g,%.17g,%.17g\n" % (t, m, s))


def _frame_schedule(t_list, dt):
    """Snap t_list onto the step grid; returns (stride, frame indices, times)."""
    ks = sorted({max(0, int(round(t / dt))) for t in t_list})
    if ks == [0]:
        return 1, [0], np.array([0.0])
    stride = 0
    for k in ks:
        stride = math.gcd(stride, k)
    stride = max(stride, 1)
    idx = [k // stride for k in ks]
    times = np.array([k * dt for k in ks])
    return stride, idx, times


def _run_with_frames(process, state, cfg, t_list):
    t_end = max(t_list)
    stride, idx, times = _frame_schedule(t_list, cfg.dt)
    n_steps = max(1, int(round(t_end / cfg.dt)))
    if (n_steps // stride + 1) * cfg.n_paths > 50_000_000:
        raise ValueError("t_list too dense for the path count; thin it")
    cfg2 = replace(cfg, t_end=n_steps * cfg.dt, record_stride=stride,
                   store_paths=True)
    if isinstance(process, FrozenSystem):
        batch, _ = simulate_frozen_batch(process, state, cfg2)
    elif isinstance(process, AveragedSystem):
        batch, _ = simulate_averaged_batch(process, state, cfg2)
    elif isinstance(process, SlowFastSystem):
        x0, y0 = state
        batch, _ = simulate_slow_fast_batch(process, x0, y0, cfg2)
    else:
        raise TypeError(f"unsupported process {type(process)!r}")
    frames = batch.states[:, idx, :]
    alive = batch.frame_alive[:, idx].astype(bool)
    return frames, alive, times


def _apply_psi(psi, frames, process):
    if isinstance(process, SlowFastSystem):
        return np.asarray(psi(frames[..., 0], frames[..., 1]), dtype=float)
    return np.asarray(psi(frames[..., 0]), dtype=float)


def estimate_semigroup(process, psi, state, t_list: Sequence[float],
                       cfg: SimConfig):
    """MC estimate of (P_t psi)(state) for each t, reusing one path batch.

    Returns (values, ses, times). ``psi`` must be vectorized: psi(y) for
    frozen/averaged processes, psi(x, y) for the coupled one.
    """
    frames, alive, times = _run_with_frames(process, state, cfg, t_list)
    vals = _apply_psi(psi, frames, process)
    vals = np.where(alive, vals, np.nan)
    n = alive.sum(axis=0)
    mean = np.nansum(vals, axis=0) / np.maximum(n, 1)
    var = np.nansum((vals - mean) ** 2, axis=0) / np.maximum(n, 1)
    return mean, np.sqrt(var / np.maximum(n, 1)), times


def estimate_space_derivative(process, psi, state, direction, t_list,
                              h: float, cfg: SimConfig, order: int = 1):
    """Central-difference CRN estimate of the directional space derivative.

    Both (all three, for order=2) perturbed batches reuse the same noise
    streams, so the difference is taken pathwise before averaging; that is
    the whole point of common random numbers. Returns
    (derivatives, ses, times, below_floor) where below_floor flags times at
    which |derivative| < 2 se (step too small to resolve against noise).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(process, SlowFastSystem):
        raise NotImplementedError("space derivatives target the frozen and "
                                  "averaged semigroups")
    sp = state + h * direction
    sm = state - h * direction
    fp, alive_p, times = _run_with_frames(process, sp, cfg, t_list)
    fm, alive_m, _ = _run_with_frames(process, sm, cfg, t_list)
    alive = alive_p & alive_m
    vp = np.where(alive, _apply_psi(psi, fp, process), np.nan)
    vm = np.where(alive, _apply_psi(psi, fm, process), np.nan)
    if order == 1:
        diff = (vp - vm) / (2.0 * h)
    elif order == 2:
        f0, alive_0, _ = _run_with_frames(process, state, cfg, t_list)
        alive &= alive_0
        v0 = np.where(alive, _apply_psi(psi, f0, process), np.nan)
        diff = (vp - 2.0 * v0 + vm) / (h * h)
    else:
        raise ValueError("order must be 1 or 2")
    n = alive.sum(axis=0)
    mean = np.nansum(diff, axis=0) / np.maximum(n, 1)
    var = np.nansum((diff - mean) ** 2, axis=0) / np.maximum(n, 1)
    se = np.sqrt(var / np.maximum(n, 1))
    below = np.abs(mean) < 2.0 * se
    return mean, se, times, below


def fit_decay_rate(times, magnitudes, ses=None, window=None,
                   rate_min: float = 0.05, min_points: int = 4) -> DecayFit:
    """Least-squares fit of log magnitude vs t; exponential-vs-not verdict.

    "exponential" requires R^2 >= 0.95, rate >= rate_min, and rates fitted
    on the two halves of the window to agree within 30% (polynomial decay
    masquerades as a slow exponential on any single window).
    """
    times = np.asarray(times, dtype=float)
    mags = np.abs(np.asarray(magnitudes, dtype=float))
    if window is None:
        window = (float(times.min()), float(times.max()))
    usable = (times >= window[0]) & (times <= window[1]) & (mags > 0)
    if ses is not None:
        usable &= mags > 2.0 * np.asarray(ses, dtype=float)
    if usable.sum() < min_points:
        raise InsufficientData(
            f"only {int(usable.sum())} usable points in window {window}")
    t, m = times[usable], np.log(mags[usable])

    def ls(tv, mv):
        A = np.vstack([tv, np.ones_like(tv)]).T
        coef, *_ = np.linalg.lstsq(A, mv, rcond=None)
        pred = A @ coef
        ss_res = float(np.sum((mv - pred) ** 2))
        ss_tot = float(np.sum((mv - mv.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
        return -coef[0], math.exp(coef[1]), r2

    rate, pref, r2 = ls(t, m)
    mid = 0.5 * (window[0] + window[1])
    lo, hi = t <= mid, t >= mid
    consistent = False
    half_rates = (math.nan, math.nan)
    if lo.sum() >= 2 and hi.sum() >= 2:
        r_lo, _, _ = ls(t[lo], m[lo])
        r_hi, _, _ = ls(t[hi], m[hi])
        half_rates = (r_lo, r_hi)
        scale = max(abs(r_lo), abs(r_hi), 1e-12)
        consistent = abs(r_lo - r_hi) <= 0.30 * scale
    verdict = ("exponential"
               if (r2 >= 0.95 and rate >= rate_min and consistent)
               else "sub-exponential")
    return DecayFit(times=times, magnitudes=mags,
                    ses=None if ses is None else np.asarray(ses, dtype=float),
                    window=window, rate=float(rate), prefactor=float(pref),
                    r_squared=float(r2), windows_consistent=consistent,
                    half_rates=half_rates, verdict=verdict)


@dataclass(frozen=True)
class SesReport:
    frozen_fits: dict  # x -> DecayFit
    frozen_min_rate: float
    frozen_verdict: str
    averaged_fit: Optional[DecayFit]
    averaged_verdict: Optional[str]


def ses_report(model: SlowFastSystem, psi, probe_xs, cfg: SimConfig,
               averaged: Optional[AveragedSystem] = None,
               t_list=None, h: float = 1e-2, window=None,
               y_probe: float = 0.0, x_probe: float = 0.0) -> SesReport:
    """First-derivative decay verdicts for the frozen semigroup at several
    frozen x (with the min-over-x rate as the uniformity proxy) and,
    optionally, for the averaged semigroup."""
    from .model import frozen as freeze

    if t_list is None:
        t_list = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0]
    fits = {}
    for xv in probe_xs:
        frz = freeze(model, xv)
        hh = h * (1.0 + abs(y_probe))
        mags, ses, times, _ = estimate_space_derivative(
            frz, psi, y_probe, 1.0, t_list, hh, cfg)
        fits[float(xv)] = fit_decay_rate(times, mags, ses, window=window)
    min_rate = min(f.rate for f in fits.values())
    frozen_verdict = ("exponential"
                      if all(f.verdict == "exponential" for f in fits.values())
                      else "sub-exponential")
    avg_fit = None
    avg_verdict = None
    if averaged is not None:
        hh = h * (1.0 + abs(x_probe))
        mags, ses, times, _ = estimate_space_derivative(
            averaged, psi, x_probe, 1.0, t_list, hh, cfg)
        avg_fit = fit_decay_rate(times, mags, ses, window=window)
        avg_verdict = avg_fit.verdict
    return SesReport(frozen_fits=fits, frozen_min_rate=min_rate,
                     frozen_verdict=frozen_verdict,
                     averaged_fit=avg_fit, averaged_verdict=avg_verdict)
