"""Config-driven command line front end.

Configs are INI files (sections of key = value pairs); unknown sections or
keys are rejected with their full path. One run executes exactly one
command. Exit status: 0 on success, 1 when --strict is set and an
assumption check reports a violation, 2 on any runtime or config failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys

import numpy as np

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "avg-drift", "poisson", "check", "ses", "experiment")

_F, _I, _S, _B = float, int, str, lambda v: v.lower() in ("1", "true", "yes")


def _grid(v):
    lo, hi, n = v.split(":")
    return np.linspace(float(lo), float(hi), int(n))


def _floats(v):
    return tuple(float(t) for t in v.split(",") if t.strip())


SCHEMA = {
    "run": {"command": _S, "seed": _I, "workers": _I, "out": _S},
    "model": {"name": _S, "eps": _F, "r": _F, "b0_amp": _F, "g0_amp": _F},
    "sim": {"dt": _F, "t_end": _F, "n_paths": _I, "x0": _F, "y0": _F,
            "record_stride": _I, "kind": _S},
    "experiment": {"preset": _S, "scale": _S, "n_paths": _I,
                   "horizon_cap": _F, "gap_window": _F, "eps_list": _floats},
    "avg_drift": {"x_grid": _grid, "burn_in": _F, "thinning": _F,
                  "n_samples": _I},
    "poisson": {"phi": _S, "x": _F, "y_grid": _grid, "t_max": _F,
                "quad_dt": _F, "decay_rate": _F},
    "check": {"x_box": _grid, "y_box": _grid, "zeta1": _F},
    "ses": {"probe_xs": _floats, "psi": _S, "h": _F},
}

PHI_TABLE = {
    "y": lambda x, y: y,
    "y2": lambda x, y: y * y,
    "y3": lambda x, y: y ** 3,
    "sin": lambda x, y: np.sin(y),
}

PSI_TABLE = {
    "y": lambda v: v,
    "tanh": np.tanh,
    "sin": np.sin,
}


class ConfigError(ValueError):
    pass


def parse_config(path, overrides=()):
    """Parse + validate an INI config; overrides are section.key=value."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    raw = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        raw[section] = dict(cp.items(section))
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"bad override {ov!r}; use section.key=value")
        key, val = ov.split("=", 1)
        if "." not in key:
            raise ConfigError(f"bad override key {key!r}; use section.key")
        sec, k = key.split(".", 1)
        raw.setdefault(sec, {})[k] = val
    cfg = {}
    for section, items in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        cfg[section] = {}
        for k, v in items.items():
            if k not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{k}")
            try:
                cfg[section][k] = SCHEMA[section][k](v)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {section}.{k}: {v!r} ({exc})")
    if "run" not in cfg or "command" not in cfg["run"]:
        raise ConfigError("missing run.command")
    if cfg["run"]["command"] not in COMMANDS:
        raise ConfigError(f"unknown run.command {cfg['run']['command']!r}; "
                          f"one of {COMMANDS}")
    return cfg


def _model_from(cfg):
    from .model import make_model
    m = dict(cfg.get("model", {}))
    name = m.pop("name", "conv")
    eps = m.pop("eps", 0.1)
    return make_model(name, eps=eps, **m)


def _sim_config(cfg, seed, workers):
    from .integrator import SimConfig
    s = cfg.get("sim", {})
    return SimConfig(dt=s.get("dt", 1e-3), t_end=s.get("t_end", 10.0),
                     n_paths=s.get("n_paths", 1000),
                     record_stride=s.get("record_stride", 0),
                     seed=seed, workers=workers)


def _cmd_simulate(cfg, out_dir, seed, workers):
    from .integrator import (simulate_averaged_batch, simulate_frozen_batch,
                             simulate_slow_fast_batch)
    from .model import analytic_averaged, frozen

    model = _model_from(cfg)
    sim = _sim_config(cfg, seed, workers)
    kind = cfg.get("sim", {}).get("kind", "slow-fast")
    x0 = cfg.get("sim", {}).get("x0", 0.0)
    y0 = cfg.get("sim", {}).get("y0", 0.0)
    if kind == "slow-fast":
        _, ms = simulate_slow_fast_batch(model, x0, y0, sim)
    elif kind == "frozen":
        _, ms = simulate_frozen_batch(frozen(model, np.array([x0])), y0, sim)
    elif kind == "averaged":
        _, ms = simulate_averaged_batch(analytic_averaged(model), x0, sim)
    else:
        raise ConfigError(f"unknown sim.kind {kind!r}")
    path = os.path.join(out_dir, "moments.csv")
    ms.to_csv(path)
    return {"moments.csv": path}, []


def _cmd_avg_drift(cfg, out_dir, seed, workers):
    from .measure import build_averaged_model

    model = _model_from(cfg)
    sim = _sim_config(cfg, seed, workers)
    a = cfg.get("avg_drift", {})
    grid = a.get("x_grid", np.linspace(-3, 3, 25))
    avg = build_averaged_model(model, grid, sim,
                               burn_in=a.get("burn_in", 10.0),
                               thinning=a.get("thinning", 0.1),
                               n_samples=a.get("n_samples", 4000))
    path = os.path.join(out_dir, "averaged_drift.csv")
    avg.table.to_csv(path)
    return {"averaged_drift.csv": path}, []


def _cmd_poisson(cfg, out_dir, seed, workers):
    from .model import frozen
    from .poisson import TestFunction, solve_poisson_grid

    model = _model_from(cfg)
    sim = _sim_config(cfg, seed, workers)
    p = cfg.get("poisson", {})
    phi_name = p.get("phi", "y")
    if phi_name not in PHI_TABLE:
        raise ConfigError(f"unknown poisson.phi {phi_name!r}")
    phi = TestFunction(fn=PHI_TABLE[phi_name], m_y=3)
    frz = frozen(model, np.array([p.get("x", 0.0)]))
    sol = solve_poisson_grid(frz, phi, p.get("y_grid", np.linspace(-3, 3, 121)),
                             sim, t_max=p.get("t_max"),
                             quad_dt=p.get("quad_dt"),
                             decay_rate=p.get("decay_rate", 1.0))
    path = os.path.join(out_dir, "poisson.csv")
    sol.to_csv(path)
    warn = []
    if sol.residual_max is not None and sol.residual_max > 0.1:
        warn.append(f"poisson residual {sol.residual_max:.3g}")
    return {"poisson.csv": path}, warn


def _cmd_check(cfg, out_dir, seed, workers):
    from .assumptions import ProbeGrid, assemble_report

    model = _model_from(cfg)
    c = cfg.get("check", {})
    kw = {}
    if "x_box" in c:
        xb = c["x_box"]
        kw.update(x_lo=xb[0], x_hi=xb[-1], x_res=len(xb))
    if "y_box" in c:
        yb = c["y_box"]
        kw.update(y_lo=yb[0], y_hi=yb[-1], y_res=len(yb))
    report = assemble_report(model, ProbeGrid(**kw), zeta1=c.get("zeta1"))
    p1 = os.path.join(out_dir, "assumptions.txt")
    with open(p1, "w") as fh:
        fh.write(report.to_text())
    p2 = os.path.join(out_dir, "assumptions.kv")
    with open(p2, "w") as fh:
        fh.write(report.to_kv())
    warn = [f"{k}: {v}" for k, v in report.verdicts.items()
            if v.startswith("violated")]
    return {"assumptions.txt": p1, "assumptions.kv": p2}, warn


def _cmd_ses(cfg, out_dir, seed, workers):
    from .model import analytic_averaged
    from .semigroup import ses_report

    model = _model_from(cfg)
    sim = _sim_config(cfg, seed, workers)
    s = cfg.get("ses", {})
    psi_name = s.get("psi", "y")
    if psi_name not in PSI_TABLE:
        raise ConfigError(f"unknown ses.psi {psi_name!r}")
    try:
        avg = analytic_averaged(model)
    except ValueError:
        avg = None
    rep = ses_report(model, PSI_TABLE[psi_name],
                     s.get("probe_xs", (-1.0, 0.0, 1.0)), sim,
                     averaged=avg, h=s.get("h", 1e-2))
    path = os.path.join(out_dir, "ses.txt")
    with open(path, "w") as fh:
        fh.write(f"frozen verdict: {rep.frozen_verdict}\n")
        fh.write(f"frozen min rate over x: {rep.frozen_min_rate:.6g}\n")
        for xv, fit in rep.frozen_fits.items():
            fh.write(f"frozen x={xv:g}: rate={fit.rate:.6g} "
                     f"r2={fit.r_squared:.4f} verdict={fit.verdict}\n")
        if rep.averaged_fit is not None:
            fh.write(f"averaged: rate={rep.averaged_fit.rate:.6g} "
                     f"r2={rep.averaged_fit.r_squared:.4f} "
                     f"verdict={rep.averaged_verdict}\n")
    warn = []
    if rep.frozen_verdict != "exponential":
        warn.append("frozen semigroup not SES on probes")
    return {"ses.txt": path}, warn


def _cmd_experiment(cfg, out_dir, seed, workers):
    from .experiments import run_preset

    e = dict(cfg.get("experiment", {}))
    preset = e.pop("preset", "conv")
    scale = e.pop("scale", "desk")
    if "eps_list" in e:
        e["eps_list"] = tuple(e["eps_list"])
    res = run_preset(preset, scale, out_dir=out_dir, seed=seed,
                     workers=workers, **e)
    warn = [f"{k}: {v}" for k, v in res["report"].verdicts.items()
            if v.startswith("violated")]
    return res["outputs"], warn


_HANDLERS = {
    "simulate": _cmd_simulate,
    "avg-drift": _cmd_avg_drift,
    "poisson": _cmd_poisson,
    "check": _cmd_check,
    "ses": _cmd_ses,
    "experiment": _cmd_experiment,
}


def dispatch(config_path, overrides=(), out=None, seed=None, workers=None,
             strict=False) -> int:
    """Run the command named by the config; returns the process exit code."""
    from .manifest import RunManifest

    try:
        cfg = parse_config(config_path, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    run = cfg.get("run", {})
    command = run["command"]
    out_dir = out or run.get("out") or os.environ.get("SLOWFAST_OUT", ".")
    seed = seed if seed is not None else run.get("seed", 0)
    workers = workers if workers is not None else run.get("workers", 1)
    try:
        os.makedirs(out_dir, exist_ok=True)
        outputs, warnings = _HANDLERS[command](cfg, out_dir, seed, workers)
        if command != "experiment":  # experiment writes its own manifest
            man = RunManifest.collect(config={"command": command,
                                              **{s: {k: str(v) for k, v in d.items()}
                                                 for s, d in cfg.items()}},
                                      seed=seed, outputs=outputs,
                                      warnings=warnings)
            man.write(os.path.join(out_dir, "manifest"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if strict and warnings:
        return 1
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="slowfast",
        description="slow-fast SDE averaging toolkit")
    ap.add_argument("--config", required=True, help="INI config file")
    ap.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="SECTION.KEY=VALUE", help="override a config value")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--strict", action="store_true",
                    help="exit 1 on assumption-violation verdicts")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return dispatch(args.config, args.overrides, args.out, args.seed,
                    args.workers, args.strict)


if __name__ == "__main__":
    sys.exit(main())
