"""Euler-Maruyama time stepping and reproducible parallel Monte Carlo batches.

The integrator owns the paper's sqrt(2), sqrt(2/eps) diffusion scaling:

    x' = x + b dt + sqrt(2 dt)      sigma xi_W
    y' = y + g dt/eps + sqrt(2 dt/eps) a xi_B

Coefficients are evaluated at the pre-step state only. Cubic drifts are
only locally Lipschitz, so blow-up (non-finite or |state| > 1e8) marks the
path as dead; dead paths are excluded from the moment series and counted.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _families as F
from ._backend import BACKEND, run_paths_chunked
from .model import AveragedSystem, FrozenSystem, SlowFastSystem
from .streams import make_noise_stream

logger = logging.getLogger(__name__)

MAX_FRAMES = 2000
_FRAME_STORE_LIMIT = 200_000_000  # doubles


class AllPathsBlownUp(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run configuration.

    For slow-fast runs dt must be at most eps/10 (hard error) and should be
    at most eps/100 (warning otherwise), mirroring the dt << eps rule used
    throughout. ``record_stride`` 0 means auto (at most MAX_FRAMES frames).
    """

    dt: float
    t_end: float
    n_paths: int
    seed: int = 0
    record_stride: int = 0
    crn: bool = True
    workers: int = 1
    store_paths: bool = False
    px_exp: float = 0.0  # extra |x|^p moment to track (0 = off)
    py_exp: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))

    def stride(self) -> int:
        if self.record_stride > 0:
            return self.record_stride
        return max(1, -(-self.n_steps // MAX_FRAMES))

    def validate_for_eps(self, eps: float):
        if self.dt > eps / 10.0:
            raise ValueError(
                f"dt={self.dt} too coarse for eps={eps}: require dt <= eps/10")
        if self.dt > eps / 100.0:
            warnings.warn(
                f"dt={self.dt} > eps/100 for eps={eps}; expect visible "
                "discretisation bias", stacklevel=3)


@dataclass(frozen=True)
class TrajectoryBatch:
    times: np.ndarray
    states: Optional[np.ndarray]  # (n_paths, n_frames, dim) when stored
    frame_alive: Optional[np.ndarray]
    terminal: np.ndarray  # (n_paths, dim)
    terminal_alive: np.ndarray
    seed: int
    n_blown: int
    config: SimConfig
    kind: str  # "slow-fast" | "frozen" | "averaged"


@dataclass(frozen=True)
class MomentSeries:
    times: np.ndarray
    n_alive: np.ndarray
    mean_x: Optional[np.ndarray]
    e_x2: Optional[np.ndarray]
    se_x2: Optional[np.ndarray]
    e_x4: Optional[np.ndarray] = None
    mean_y: Optional[np.ndarray] = None
    e_y2: Optional[np.ndarray] = None
    se_y2: Optional[np.ndarray] = None
    e_y4: Optional[np.ndarray] = None
    se_y4: Optional[np.ndarray] = None
    se_x4: Optional[np.ndarray] = None
    e_xp: Optional[np.ndarray] = None
    se_xp: Optional[np.ndarray] = None
    e_yp: Optional[np.ndarray] = None
    se_yp: Optional[np.ndarray] = None
    n_blown: int = 0

    def to_csv(self, path):
        """Columns: t, E_abs_x_sq, se_x_sq, E_abs_y_sq, se_y_sq, n_alive."""
        zero = np.zeros_like(self.times)
        cols = [self.times,
                zero if self.e_x2 is None else self.e_x2,
                zero if self.se_x2 is None else self.se_x2,
                zero if self.e_y2 is None else self.e_y2,
                zero if self.se_y2 is None else self.se_y2,
                self.n_alive.astype(float)]
        data = np.column_stack(cols)
        header = "t,E_abs_x_sq,se_x_sq,E_abs_y_sq,se_y_sq,n_alive"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in data:
                fh.write(",".join("%.17g" % v for v in row) + "\n")


def _mean_se(s, s2, n):
    n = np.maximum(n, 1)
    m = s / n
    var = np.maximum(s2 / n - m * m, 0.0)
    return m, np.sqrt(var / n)


def _series_from_acc(times, acc, mode, px_exp=0.0, py_exp=0.0):
    n = acc["alive"]
    kw = dict(times=times, n_alive=n, n_blown=acc["n_blown"],
              mean_x=None, e_x2=None, se_x2=None)
    if mode in (F.MODE_SLOWFAST, F.MODE_AVERAGED):
        ex2, se2 = _mean_se(acc["sx2"], acc["sx4"], n)
        kw.update(mean_x=acc["sx"] / np.maximum(n, 1), e_x2=ex2, se_x2=se2,
                  e_x4=acc["sx4"] / np.maximum(n, 1))
        if px_exp > 0:
            exp_, sep = _mean_se(acc["sxp"], acc["sxp2"], n)
            kw.update(e_xp=exp_, se_xp=sep)
    if mode in (F.MODE_SLOWFAST, F.MODE_FROZEN):
        ey2, sey2 = _mean_se(acc["sy2"], acc["sy4"], n)
        ey4 = acc["sy4"] / np.maximum(n, 1)
        # SE of the 4th moment needs the 8th; reuse |y|^p slots when py=4
        kw.update(mean_y=acc["sy"] / np.maximum(n, 1), e_y2=ey2, se_y2=sey2,
                  e_y4=ey4)
        if py_exp > 0:
            eyp, seyp = _mean_se(acc["syp"], acc["syp2"], n)
            kw.update(e_yp=eyp, se_yp=seyp)
        if py_exp == 4.0:
            kw.update(se_y4=kw["se_yp"])
    return MomentSeries(**kw)


def em_step_slow_fast(model: SlowFastSystem, state, dt, gaussians):
    """One explicit EM step; reference implementation for any (n, d).

    ``gaussians`` is (xi_W, xi_B) with standard normal entries supplied by
    the caller. Returns (x', y'); non-finite results are returned as-is
    (batch drivers mark such paths as blown up).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x, y = (np.atleast_1d(np.asarray(v, dtype=float)) for v in state)
    xi_w, xi_b = (np.atleast_1d(np.asarray(v, dtype=float)) for v in gaussians)
    b = np.asarray(model.b(x, y), dtype=float)
    sig = np.asarray(model.sigma(x, y), dtype=float)
    g = np.asarray(model.g(x, y), dtype=float)
    a = np.asarray(model.a(x, y), dtype=float)
    cw = math.sqrt(2.0 * dt)
    cb = math.sqrt(2.0 * dt / model.eps)
    x_new = x + b * dt + cw * (sig @ xi_w)
    y_new = y + g * (dt / model.eps) + cb * (a @ xi_b)
    return x_new, y_new


def _check_frames_budget(cfg, n_frames, dim):
    if cfg.store_paths and cfg.n_paths * n_frames * dim > _FRAME_STORE_LIMIT:
        raise ValueError(
            "storing full paths would exceed the memory budget; increase "
            "record_stride or drop store_paths")


def _run_family(system_family, params, mode, eps, x0, y0, cfg,
                want_frames, spline_knots=None, spline_coefs=None):
    stride = cfg.stride()
    n_steps = cfg.n_steps
    acc = run_paths_chunked(system_family, params, mode, eps,
                            x0, y0, cfg.dt, n_steps, stride, cfg.seed,
                            cfg.n_paths, workers=cfg.workers,
                            want_frames=want_frames, want_terminal=True,
                            px_exp=cfg.px_exp, py_exp=cfg.py_exp,
                            spline_knots=spline_knots, spline_coefs=spline_coefs)
    n_rec = n_steps // stride + 1
    times = np.arange(n_rec) * (stride * cfg.dt)
    return times, acc


def _finish(times, acc, cfg, mode, kind):
    if acc["alive"][-1] == 0:
        raise AllPathsBlownUp(f"all {cfg.n_paths} paths blew up ({kind} run)")
    if acc["n_blown"]:
        logger.warning("%d of %d paths blew up during %s run",
                       acc["n_blown"], cfg.n_paths, kind)
    if acc.get("n_extrap", 0):
        logger.warning("averaged drift evaluated outside its tabulated range "
                       "%d times (constant extrapolation)", acc["n_extrap"])
    batch = TrajectoryBatch(
        times=times, states=acc.get("frames"), frame_alive=acc.get("frame_alive"),
        terminal=acc["terminal"], terminal_alive=acc["terminal_alive"],
        seed=cfg.seed, n_blown=acc["n_blown"], config=cfg, kind=kind)
    series = _series_from_acc(times, acc, mode, cfg.px_exp, cfg.py_exp)
    return batch, series


def simulate_slow_fast_batch(model: SlowFastSystem, x0, y0, cfg: SimConfig):
    """Simulate n_paths independent copies of the coupled system.

    Path i is reproducible from (seed, i) alone. Returns
    (TrajectoryBatch, MomentSeries); moments are over non-blown-up paths
    with the blow-up count reported on both.
    """
    cfg.validate_for_eps(model.eps)
    _check_frames_budget(cfg, cfg.n_steps // cfg.stride() + 1, model.n + model.d)
    if model.family != F.FAM_GENERIC and model.n == 1 and model.d == 1:
        times, acc = _run_family(model.family, model.family_params,
                                 F.MODE_SLOWFAST, model.eps,
                                 float(np.ravel(x0)[0]), float(np.ravel(y0)[0]),
                                 cfg, cfg.store_paths)
        return _finish(times, acc, cfg, F.MODE_SLOWFAST, "slow-fast")
    return _simulate_generic_slow_fast(model, x0, y0, cfg)


def simulate_frozen_batch(frz: FrozenSystem, y0, cfg: SimConfig):
    """Simulate the frozen process dY = g(x,Y) dt + sqrt(2) a dB (eps = 1)."""
    model = frz.parent
    _check_frames_budget(cfg, cfg.n_steps // cfg.stride() + 1, model.d)
    if model.family != F.FAM_GENERIC and model.d == 1:
        times, acc = _run_family(model.family, model.family_params,
                                 F.MODE_FROZEN, 1.0,
                                 float(frz.x[0]), float(np.ravel(y0)[0]),
                                 cfg, cfg.store_paths)
        return _finish(times, acc, cfg, F.MODE_FROZEN, "frozen")
    return _simulate_generic_frozen(frz, y0, cfg)


def simulate_averaged_batch(avg: AveragedSystem, x0, cfg: SimConfig):
    """Simulate the averaged SDE dXbar = b_bar dt + sqrt(2) sigma_bar dW."""
    _check_frames_budget(cfg, cfg.n_steps // cfg.stride() + 1, avg.n)
    x0v = float(np.ravel(x0)[0]) if avg.n == 1 else None
    if avg.family is not None:
        times, acc = _run_family(avg.family, avg.family_params,
                                 F.MODE_AVERAGED, 1.0, x0v, 0.0, cfg,
                                 cfg.store_paths)
        return _finish(times, acc, cfg, F.MODE_AVERAGED, "averaged")
    if avg.ppoly is not None:
        sig = float(np.ravel(avg.sigma(0.0))[0])
        times, acc = _run_family(F.FAM_AVG_SPLINE, (sig,), F.MODE_AVERAGED,
                                 1.0, x0v, 0.0, cfg, cfg.store_paths,
                                 spline_knots=avg.ppoly.x,
                                 spline_coefs=avg.ppoly.c)
        return _finish(times, acc, cfg, F.MODE_AVERAGED, "averaged")
    return _simulate_vectorized_averaged(avg, x0v, cfg)


# ---------------------------------------------------------------------------
# generic (callable-coefficient) drivers


def _generic_chunks(n_paths):
    from ._backend import CHUNK
    return [(lo, min(lo + CHUNK, n_paths)) for lo in range(0, n_paths, CHUNK)]


def _merge_generic(parts, want_frames):
    out = {}
    for k in ("alive",):
        out[k] = sum(p[k] for p in parts)
    for k in ("sx", "sx2", "sx4", "sy", "sy2", "sy4", "sxp", "sxp2", "syp", "syp2"):
        out[k] = sum(p[k] for p in parts)
    out["n_blown"] = sum(p["n_blown"] for p in parts)
    out["n_extrap"] = 0
    if want_frames:
        out["frames"] = np.concatenate([p["frames"] for p in parts], axis=0)
        out["frame_alive"] = np.concatenate([p["frame_alive"] for p in parts], axis=0)
    out["terminal"] = np.concatenate([p["terminal"] for p in parts], axis=0)
    out["terminal_alive"] = np.concatenate([p["terminal_alive"] for p in parts], axis=0)
    return out


def _generic_run(step_fn, dim_state, dims_out, cfg, tags, mode):
    """Per-path EM loop with callable coefficients (any dimensions)."""
    stride = cfg.stride()
    n_steps = cfg.n_steps
    n_rec = n_steps // stride + 1
    times = np.arange(n_rec) * (stride * cfg.dt)
    nx, ny = dims_out

    def run_chunk(bounds):
        lo, hi = bounds
        m = hi - lo
        acc = {k: np.zeros(n_rec) for k in
               ("sx", "sx2", "sx4", "sy", "sy2", "sy4", "sxp", "sxp2", "syp", "syp2")}
        alive_c = np.zeros(n_rec, dtype=np.int64)
        frames = np.zeros((m, n_rec, dim_state)) if cfg.store_paths else None
        fmask = np.zeros((m, n_rec), dtype=np.uint8) if cfg.store_paths else None
        term = np.zeros((m, dim_state))
        tmask = np.zeros(m, dtype=np.uint8)

        for i in range(m):
            p = lo + i
            streams = [make_noise_stream(cfg.seed, p, t) for t in tags]
            state, ok = step_fn("init"), True

            def record(rec, state, ok):
                if not ok:
                    return
                alive_c[rec] += 1
                xs = state[:nx]
                ys = state[nx:nx + ny]
                if nx:
                    x2 = float(xs @ xs)
                    acc["sx"][rec] += xs.sum()
                    acc["sx2"][rec] += x2
                    acc["sx4"][rec] += x2 * x2
                    if cfg.px_exp > 0:
                        acc["sxp"][rec] += x2 ** (0.5 * cfg.px_exp)
                        acc["sxp2"][rec] += x2 ** cfg.px_exp
                if ny:
                    y2 = float(ys @ ys)
                    acc["sy"][rec] += ys.sum()
                    acc["sy2"][rec] += y2
                    acc["sy4"][rec] += y2 * y2
                    if cfg.py_exp > 0:
                        acc["syp"][rec] += y2 ** (0.5 * cfg.py_exp)
                        acc["syp2"][rec] += y2 ** cfg.py_exp
                if frames is not None:
                    frames[i, rec] = state
                    fmask[i, rec] = 1

            record(0, state, ok)
            rec = 0
            for step in range(1, n_steps + 1):
                if ok:
                    new = step_fn(state, streams)
                    if (np.all(np.isfinite(new))
                            and np.max(np.abs(new)) <= F.BLOW_CAP):
                        state = new
                    else:
                        ok = False
                if step % stride == 0:
                    rec += 1
                    record(rec, state, ok)
            term[i] = state
            tmask[i] = 1 if ok else 0

        return {"alive": alive_c, **acc,
                "n_blown": int(m - tmask.sum()),
                "frames": frames, "frame_alive": fmask,
                "terminal": term, "terminal_alive": tmask}

    parts = [run_chunk(b) for b in _generic_chunks(cfg.n_paths)]
    acc = _merge_generic(parts, cfg.store_paths)
    return times, acc


def _simulate_generic_slow_fast(model, x0, y0, cfg):
    n, d = model.n, model.d
    x0v = np.atleast_1d(np.asarray(x0, dtype=float))
    y0v = np.atleast_1d(np.asarray(y0, dtype=float))
    cw = math.sqrt(2.0 * cfg.dt)
    cb = math.sqrt(2.0 * cfg.dt / model.eps)
    dte = cfg.dt / model.eps

    def step(state, streams=None):
        if isinstance(state, str):
            return np.concatenate([x0v, y0v])
        sw, sb = streams
        x, y = state[:n], state[n:]
        b = np.asarray(model.b(x, y), dtype=float)
        sig = np.asarray(model.sigma(x, y), dtype=float)
        g = np.asarray(model.g(x, y), dtype=float)
        a = np.asarray(model.a(x, y), dtype=float)
        xn = x + b * cfg.dt + cw * (sig @ sw.normals(n))
        yn = y + g * dte + cb * (a @ sb.normals(d))
        return np.concatenate([xn, yn])

    times, acc = _generic_run(step, n + d, (n, d), cfg, (F.TAG_W, F.TAG_B),
                              F.MODE_SLOWFAST)
    return _finish(times, acc, cfg, F.MODE_SLOWFAST, "slow-fast")


def _simulate_generic_frozen(frz, y0, cfg):
    model = frz.parent
    d = model.d
    y0v = np.atleast_1d(np.asarray(y0, dtype=float))
    cw = math.sqrt(2.0 * cfg.dt)

    def step(state, streams=None):
        if isinstance(state, str):
            return y0v.copy()
        (sb,) = streams
        g = np.asarray(model.g(frz.x, state), dtype=float)
        a = np.asarray(model.a(frz.x, state), dtype=float)
        return state + g * cfg.dt + cw * (a @ sb.normals(d))

    times, acc = _generic_run(step, d, (0, d), cfg, (F.TAG_B,), F.MODE_FROZEN)
    return _finish(times, acc, cfg, F.MODE_FROZEN, "frozen")


def _simulate_vectorized_averaged(avg, x0, cfg):
    """Callable-drift averaged systems (n = 1), vectorized across paths."""
    if avg.n != 1:
        raise NotImplementedError("callable averaged systems support n = 1 only")
    stride = cfg.stride()
    n_steps = cfg.n_steps
    n_rec = n_steps // stride + 1
    times = np.arange(n_rec) * (stride * cfg.dt)
    cw = math.sqrt(2.0 * cfg.dt)
    n_paths = cfg.n_paths

    streams = [make_noise_stream(cfg.seed, p, F.TAG_AVG) for p in range(n_paths)]
    x = np.full(n_paths, float(x0))
    ok = np.ones(n_paths, dtype=bool)
    alive = np.zeros(n_rec, dtype=np.int64)
    acc = {k: np.zeros(n_rec) for k in
           ("sx", "sx2", "sx4", "sy", "sy2", "sy4", "sxp", "sxp2", "syp", "syp2")}
    frames = np.zeros((n_paths, n_rec, 1)) if cfg.store_paths else None
    fmask = np.zeros((n_paths, n_rec), dtype=np.uint8) if cfg.store_paths else None

    def record(rec):
        alive[rec] = int(np.count_nonzero(ok))
        xa = x[ok]
        x2 = xa * xa
        acc["sx"][rec] = xa.sum()
        acc["sx2"][rec] = x2.sum()
        acc["sx4"][rec] = (x2 * x2).sum()
        if cfg.px_exp > 0:
            acc["sxp"][rec] = (x2 ** (0.5 * cfg.px_exp)).sum()
            acc["sxp2"][rec] = (x2 ** cfg.px_exp).sum()
        if frames is not None:
            frames[ok, rec, 0] = x[ok]
            fmask[ok, rec] = 1

    record(0)
    rec = 0
    block = 512
    step = 0
    while step < n_steps:
        nb = min(block, n_steps - step)
        z = np.empty((n_paths, nb))
        for i, s in enumerate(streams):
            z[i] = s.normals(nb)
        for j in range(nb):
            step += 1
            b = np.asarray(avg.drift(x), dtype=float)
            sig = np.asarray(avg.sigma(x), dtype=float)
            xn = x + b * cfg.dt + cw * sig * z[:, j]
            good = np.isfinite(xn) & (np.abs(xn) <= F.BLOW_CAP)
            x = np.where(ok & good, xn, x)
            ok &= good
            if step % stride == 0:
                rec += 1
                record(rec)

    out = {"alive": alive, **acc, "n_blown": int(n_paths - ok.sum()),
           "n_extrap": 0, "terminal": x[:, None].copy(),
           "terminal_alive": ok.astype(np.uint8)}
    if cfg.store_paths:
        out["frames"] = frames
        out["frame_alive"] = fmask
    return _finish(times, out, cfg, F.MODE_AVERAGED, "averaged")


def default_dt(eps: float) -> float:
    """The paper's step rule dt = eps * 1e-3."""
    return eps * 1e-3
