"""Numerical verification of the structural conditions on a probe grid, and
the closed-form constants derived from them.

All "for all x, y, xi" conditions are certified on user-declared boxes and
the verdicts are scoped accordingly ("holds-on-grid"). Analytic
derivatives are used when a coefficient field supplies them; central
finite differences otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import SlowFastSystem

HOLDS = "holds-on-grid"
VIOLATED = "violated-at"
NOT_CHECKED = "not-checked"

_FD_STEP = 1e-4


@dataclass(frozen=True)
class ProbeGrid:
    """Cartesian probe box; defaults follow the |x|,|y| <= 10 convention."""

    x_lo: float = -10.0
    x_hi: float = 10.0
    x_res: int = 41
    y_lo: float = -10.0
    y_hi: float = 10.0
    y_res: int = 41
    n_dirs: int = 8  # unit directions for the xi-sampled correction terms
    max_points: int = 100_000

    def __post_init__(self):
        if self.x_hi <= self.x_lo or self.y_hi <= self.y_lo:
            raise ValueError("degenerate probe box")
        if self.x_res < 2 or self.y_res < 2:
            raise ValueError("need at least 2 points per axis")

    def xs(self):
        return np.linspace(self.x_lo, self.x_hi, self.x_res)

    def ys(self):
        return np.linspace(self.y_lo, self.y_hi, self.y_res)

    def points(self):
        """(x, y) pairs, subsampled if the full product exceeds max_points."""
        xs, ys = self.xs(), self.ys()
        total = len(xs) * len(ys)
        pairs = [(x, y) for x in xs for y in ys]
        if total > self.max_points:
            idx = np.linspace(0, total - 1, self.max_points).astype(int)
            pairs = [pairs[i] for i in idx]
        return pairs

    def describe(self):
        return (f"x in [{self.x_lo}, {self.x_hi}] ({self.x_res} pts), "
                f"y in [{self.y_lo}, {self.y_hi}] ({self.y_res} pts)")


@dataclass
class CheckResult:
    verdict: str
    witness: Optional[tuple] = None
    values: dict = field(default_factory=dict)

    @property
    def holds(self):
        return self.verdict == HOLDS


def _fd(fn, x, y, wrt, order=1, h=_FD_STEP):
    """Central finite differences of a scalar-wrapped field (n = d = 1)."""
    def f(xx, yy):
        return float(np.ravel(fn(xx, yy))[0])
    if order == 1:
        if wrt == "x":
            return (f(x + h, y) - f(x - h, y)) / (2 * h)
        return (f(x, y + h) - f(x, y - h)) / (2 * h)
    if order == 2:
        if wrt == "x":
            return (f(x + h, y) - 2 * f(x, y) + f(x - h, y)) / (h * h)
        return (f(x, y + h) - 2 * f(x, y) + f(x, y - h)) / (h * h)
    raise ValueError(order)


def _deriv_at(fld, name, x, y):
    """Evaluate a named derivative, analytic when available else FD."""
    dfn = fld.deriv(name)
    if dfn is not None:
        return float(np.ravel(dfn(x, y))[0])
    table = {"dx": ("x", 1), "dy": ("y", 1), "dxx": ("x", 2), "dyy": ("y", 2)}
    if name in table:
        wrt, order = table[name]
        return _fd(fld.fn, x, y, wrt, order)
    if name == "dyyy":
        h = 1e-3
        def f(yy):
            return float(np.ravel(fld.fn(x, yy))[0])
        return (f(y + 2 * h) - 2 * f(y + h) + 2 * f(y - h) - f(y - 2 * h)) / (2 * h ** 3)
    if name == "dyyyy":
        h = 1e-2
        def f(yy):
            return float(np.ravel(fld.fn(x, yy))[0])
        return (f(y + 2 * h) - 4 * f(y + h) + 6 * f(y) - 4 * f(y - h) + f(y - 2 * h)) / h ** 4
    if name == "dxdyy":
        h = 1e-3
        def fyy(xx):
            return _fd(fld.fn, xx, y, "y", 2, h=h)
        return (fyy(x + h) - fyy(x - h)) / (2 * h)
    raise ValueError(f"unknown derivative {name}")


# ---------------------------------------------------------------------------
# uniform ellipticity


def check_ellipticity(model: SlowFastSystem, grid: ProbeGrid) -> CheckResult:
    """Extreme eigenvalues of A(x) and Sigma(x) over the grid.

    Returns lam_minus/lam_plus per matrix and combined; holds iff the
    combined minimum is positive.
    """
    from .model import evaluate_effective_diffusions

    lo_s, hi_s = math.inf, -math.inf
    lo_a, hi_a = math.inf, -math.inf
    witness = None
    ys = grid.ys()
    y_probe = [np.array([0.0])] if not model.fully_coupled else [np.array([v]) for v in ys[:: max(1, len(ys) // 8)]]
    for x in grid.xs():
        for yv in y_probe:
            big_s, big_a = evaluate_effective_diffusions(model, np.array([x]), yv)
            es = np.linalg.eigvalsh(big_s)
            ea = np.linalg.eigvalsh(big_a)
            if es[0] < lo_s:
                lo_s = es[0]
                if es[0] <= 0:
                    witness = (x, float(yv[0]))
            if ea[0] < lo_a:
                lo_a = ea[0]
                if ea[0] <= 0:
                    witness = (x, float(yv[0]))
            hi_s = max(hi_s, es[-1])
            hi_a = max(hi_a, ea[-1])
    lam_minus = min(lo_s, lo_a)
    lam_plus = max(hi_s, hi_a)
    verdict = HOLDS if lam_minus > 0 else VIOLATED
    return CheckResult(verdict, witness, {
        "lam_minus": lam_minus, "lam_plus": lam_plus,
        "lam_minus_Sigma": lo_s, "lam_plus_Sigma": hi_s,
        "lam_minus_A": lo_a, "lam_plus_A": hi_a,
    })


# ---------------------------------------------------------------------------
# Lyapunov drift inequalities


def _fit_drift_pair(L, q, offset_slack=2.0):
    """Fit (rate, offset) with L_j <= -rate*q_j + offset on the grid.

    On a bounded grid any offset makes any rate feasible, so the raw
    "maximize the rate" problem is ill-posed. We instead (a) estimate the
    asymptotic dissipativity from the outer shell (largest q): if the shell
    rate is not positive the condition is declared violated; (b) cap the
    offset at offset_slack times the smallest offset any rate needs
    (C(0) = max L), and take the largest rate feasible under that cap.
    """
    L = np.asarray(L, dtype=float)
    q = np.asarray(q, dtype=float)
    pos = q > 1e-12
    if not np.any(pos):
        raise ValueError("probe grid has no points with positive quadratic weight")
    shell = q >= 0.95 * q.max()
    shell_rates = np.full(len(q), np.inf)
    shell_rates[shell] = -L[shell] / q[shell]
    rate_shell = float(shell_rates.min())
    if rate_shell <= 0:
        return rate_shell, float(max(L.max(), 0.0)), int(np.argmin(shell_rates))
    c0 = max(float(L.max()), 0.0)
    cap = offset_slack * c0
    rate = float(np.min((cap - L[pos]) / q[pos]))
    rate = min(rate, float(rate_shell))
    offset = float(np.max(L + rate * q))
    return rate, offset, None


def check_lyapunov(model: SlowFastSystem, which: str, grid: ProbeGrid,
                   offset_slack: float = 2.0) -> CheckResult:
    """Fit the k=1 Lyapunov inequality for the frozen or the slow process.

    frozen:  (g(x,y), y)                         <= -r1 |y|^2 + C1
    slow:    (b(x,y), x) + (4 m_b_x - 1) sigma:sigma <= -rt |x|^2 + Ct

    Higher k follows from k=1 (r_k = r1, C_k = C1 + (k-1) lam_plus).
    """
    pts = grid.points()
    L, q = [], []
    if which == "frozen":
        for (x, y) in pts:
            xv, yv = np.array([x]), np.array([y])
            g = np.asarray(model.g(xv, yv), dtype=float)
            L.append(float(g @ yv))
            q.append(float(yv @ yv))
    elif which == "slow":
        mbx = model.growth.m_b_x
        for (x, y) in pts:
            xv, yv = np.array([x]), np.array([y])
            b = np.asarray(model.b(xv, yv), dtype=float)
            s = np.asarray(model.sigma(xv, yv), dtype=float)
            L.append(float(b @ xv) + (4 * mbx - 1) * float(np.sum(s * s)))
            q.append(float(xv @ xv))
    else:
        raise ValueError("which must be 'frozen' or 'slow'")
    rate, offset, j = _fit_drift_pair(L, q, offset_slack)
    verdict = HOLDS if rate > 0 else VIOLATED
    witness = pts[j] if j is not None else None
    return CheckResult(verdict, witness, {"rate": rate, "offset": offset})


# ---------------------------------------------------------------------------
# drift condition for the frozen semigroup (strong exponential stability)


def _kappa_quantity(model, x, y, zeta1, zeta2, zeta3, rng, n_dirs):
    """max over unit xi of the drift-condition quadratic form at one point."""
    d = model.d
    if d == 1:
        gy = _deriv_at(model.g, "dy", x, y)
        val = 2.0 * gy
        if zeta1 > 0:
            gyy = _deriv_at(model.g, "dyy", x, y)
            val += zeta1 * gyy * gyy
        if zeta2 > 0:
            g3 = _deriv_at(model.g, "dyyy", x, y)
            val += zeta2 * g3 * g3
        if zeta3 > 0:
            g4 = _deriv_at(model.g, "dyyyy", x, y)
            val += zeta3 * g4 * g4
        return val
    # general d: exact eigenvalue bound for the first-order term plus a
    # sampled (and 10% inflated) bound for the xi-quartic correction terms
    raise NotImplementedError(
        "drift-condition checking beyond d = 1 requires vector-valued "
        "derivative evaluators; the built-in registry is one-dimensional")


def check_frozen_drift_condition(model: SlowFastSystem, grid: ProbeGrid,
                                 zeta1: Optional[float] = None,
                                 zeta2: float = 0.0, zeta3: float = 0.0,
                                 rng=None) -> CheckResult:
    """Fit kappa in the frozen drift condition.

    If zeta1 is None it is line-searched over a log grid to maximize kappa
    (zeta2 and zeta3 default to 0: the second-order form suffices for the
    decay estimates actually used downstream).
    """
    pts = grid.points()

    def kappa_for(z1):
        worst = -math.inf
        wit = None
        for (x, y) in pts:
            v = _kappa_quantity(model, x, y, z1, zeta2, zeta3, rng, grid.n_dirs)
            if v > worst:
                worst = v
                wit = (x, y)
        return -worst, wit

    if zeta1 is not None:
        kappa, wit = kappa_for(zeta1)
        z1 = zeta1
    else:
        best = (-math.inf, None, None)
        for z1_try in np.logspace(-3, 1, 17):
            k_try, wit_try = kappa_for(z1_try)
            if k_try > best[0]:
                best = (k_try, wit_try, z1_try)
        kappa, wit, z1 = best
    verdict = HOLDS if kappa > 0 else VIOLATED
    return CheckResult(verdict, wit if verdict == VIOLATED else None,
                       {"kappa": kappa, "zeta1": z1, "zeta2": zeta2, "zeta3": zeta3})


# ---------------------------------------------------------------------------
# moment-bound constants (frozen process and coupled system)


def moment_constants(k: int, r_k: float, C_k: float,
                     r2: Optional[float] = None, C2: Optional[float] = None):
    """(r'_k, C'_k) such that E|Y_t|^k <= exp(-r'_k t)|y0|^k + C'_k/r'_k.

    Follows the Lyapunov computation L|y|^k <= -k r_k |y|^k + k C_k |y|^{k-2}
    and a Young split, giving

        r'_k = k r_k / 2,
        C'_k = 2 C_k (2 C_k (k-2) / (k r_k))^{(k-2)/2}   (k >= 2, 0^0 = 1).

    (The theorem statement's display drops the factor 2k r_k relative to its
    own proof; the proof's constants are the feasible ones - the statement's
    fail already on the standard OU - so those are implemented.)
    k = 1 is Jensen from k = 2: r'_1 = r'_2/2, C'_1 = r'_1 sqrt(C'_2/r'_2),
    so r2, C2 must be supplied. k = 0 returns the (1, 0) convention.
    """
    if k == 0:
        return 1.0, 0.0
    if k == 1:
        if r2 is None or C2 is None:
            raise ValueError("k=1 needs the k=2 inputs (r2, C2)")
        rp2, cp2 = moment_constants(2, r2, C2)
        rp1 = rp2 / 2.0
        return rp1, rp1 * math.sqrt(cp2 / rp2)
    if r_k <= 0:
        raise ValueError("r_k must be positive")
    if C_k < 0:
        raise ValueError("C_k must be non-negative")
    rp = 0.5 * k * r_k
    base = 2.0 * C_k * (k - 2) / (k * r_k)
    cp = 2.0 * C_k * base ** ((k - 2) / 2.0) if k > 2 else 2.0 * C_k
    return rp, cp


def lyapunov_constants_for_k(k: int, r1: float, C1: float, lam_plus: float):
    """(r_k, C_k) from the k=1 pair: r_k = r1, C_k = C1 + (k-1) lam_plus."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return r1, C1 + (k - 1) * lam_plus


def moment_offset(m: int, r1: float, C1: float, lam_plus: float) -> float:
    """C'_m / r'_m for integer m >= 0 built from the k=1 Lyapunov pair."""
    if m == 0:
        return 0.0
    r2, c2 = lyapunov_constants_for_k(2, r1, C1, lam_plus)
    if m == 1:
        rp1, cp1 = moment_constants(1, 0.0, 0.0, r2=r2, C2=c2)
        return cp1 / rp1
    rm, cm = lyapunov_constants_for_k(m, r1, C1, lam_plus)
    rp, cp = moment_constants(m, rm, cm)
    return cp / rp


def slow_moment_constants(r_tilde: float, C_tilde: float, m_b_x: int):
    """(r~', C~') for the slow Lyapunov pair: the |x|^{4 m_b_x} analogue."""
    if m_b_x < 1:
        raise ValueError("m_b_x must be >= 1 for the coupled moment bound")
    return moment_constants(4 * m_b_x, r_tilde, C_tilde)


# ---------------------------------------------------------------------------
# averaged-semigroup drift condition machinery


def compute_avg_condition_constants(zeta1: float, lam_minus: float, d: int,
                                    K_g: float, K_A: float,
                                    r1: float, C1: float, lam_plus: float,
                                    growth) -> dict:
    """D0 and the two coefficients of D_b(x) (constant and |x|^{m7} parts)."""
    if zeta1 <= 0 or lam_minus <= 0:
        raise ValueError("zeta1 and lam_minus must be positive")
    zl = zeta1 * lam_minus
    D0 = max(zl ** -0.5, 1.0) * (d + math.sqrt(zl) * d * d)
    m7, m8, m9 = growth.m7, growth.m8, growth.m9
    R = lambda m: moment_offset(m, r1, C1, lam_plus)
    db_const = ((K_g + K_A) * (1.0 + 2.0 * R(m8))
                + K_g * (R(m8 + m9) + R(m9) + R(m8) * R(m9)))
    db_x = (K_g + K_A + K_g * R(m9)) if m7 > 0 else 0.0
    return {"D0": D0, "Db_const": db_const, "Db_x_coeff": db_x, "m7": m7}


def example_condition_threshold(D0: float, dg0_sup: float) -> float:
    """The bounded-perturbation admissibility threshold exhibited for the
    cubic Langevin example: max{|b0'|, |b0''|} must stay below
    1 / (D0 * sup|g0'|)."""
    return 1.0 / (D0 * dg0_sup)


def check_avg_drift_condition(model: SlowFastSystem, grid: ProbeGrid,
                              kappa: float, constants: dict,
                              zeta: float = 0.0) -> CheckResult:
    """Evaluate the slow drift condition over the grid.

    LHS: largest eigenvalue of sym(d_x b(x,y)). RHS: the negative envelope
    built from n D0/kappa * [b]_{2,m7,m8} * D_b(x), the zeta polynomial and
    the K_Sigma^2 n^3 / (4 lam_minus) term. Reports the worst margin and
    the largest admissible zeta; the verdict requires zeta_max > 0.
    """
    n = model.n
    if n != 1:
        raise NotImplementedError("registry models are one-dimensional")
    pts = grid.points()
    gp = model.growth
    m1, m3, m5 = gp.ms[0], gp.ms[2], gp.ms[4]

    # V-seminorm of b: sup |d_y^gamma b| / (1 + I|x|^m7 + I|y|^m8), 1<=|gamma|<=2
    vsem = 0.0
    for (x, y) in pts:
        denom = 1.0 + (abs(x) ** gp.m7 if gp.m7 > 0 else 0.0) \
            + (abs(y) ** gp.m8 if gp.m8 > 0 else 0.0)
        for name in ("dy", "dyy"):
            vsem = max(vsem, abs(_deriv_at(model.b, name, x, y)) / denom)

    D0 = constants["D0"]
    lam_minus = constants["lam_minus"]
    K_sigma = constants.get("K_Sigma", 0.0)
    base_term = K_sigma ** 2 * n ** 3 / (4.0 * lam_minus)

    worst_margin = math.inf
    zeta_max = math.inf
    witness = None
    for (x, y) in pts:
        lhs = _deriv_at(model.b, "dx", x, y)
        db = constants["Db_const"] + constants["Db_x_coeff"] * abs(x) ** constants["m7"]
        envelope = n * (D0 / kappa) * vsem * db + base_term
        poly = 1.0 + (abs(x) ** m1 if m1 > 0 else 0.0) \
            + (abs(x) ** m3 if m3 > 0 else 0.0) \
            + (abs(x) ** m5 if m5 > 0 else 0.0)
        margin = -envelope - zeta * poly - lhs
        if margin < worst_margin:
            worst_margin = margin
            witness = (x, y)
        zeta_max = min(zeta_max, (-envelope - lhs) / poly)
    verdict = HOLDS if zeta_max > 0 and worst_margin >= 0 else VIOLATED
    return CheckResult(verdict, witness if verdict == VIOLATED else None,
                       {"margin": worst_margin, "zeta_max": zeta_max,
                        "b_vseminorm": vsem})


# ---------------------------------------------------------------------------
# growth-constant audit


def _audit_exponent(vals, weights, declared, e_max=8):
    """Smallest exponent e with max |v|/(1+w^e) within 2x of the e_max fit."""
    vals = np.abs(np.asarray(vals, dtype=float))
    weights = np.asarray(weights, dtype=float)

    def K(e):
        return float(np.max(vals / (1.0 + np.where(e > 0, weights ** e, 0.0))))

    k_rel = K(e_max)
    fitted = next((e for e in range(e_max + 1) if K(e) <= 2.0 * k_rel + 1e-300), e_max)
    return {"constant": K(declared), "fitted_exponent": fitted,
            "declared": declared, "contradicted": fitted > declared}


def growth_constants(model: SlowFastSystem, grid: ProbeGrid) -> dict:
    """Fit K_g, K_A, K_Sigma and audit the declared m1..m9 exponents."""
    pts = grid.points()
    gp = model.growth
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])

    def dvals(fld, name):
        return np.array([_deriv_at(fld, name, x, y) for (x, y) in pts])

    out = {}
    # K_g: |d_x g| <= K_g (1 + |y|^{m9})
    gx = dvals(model.g, "dx")
    m9a = _audit_exponent(gx, np.abs(ys), gp.m9)
    out["K_g"] = m9a["constant"]
    out["m9"] = m9a
    # K_A, K_Sigma: first/second x-derivatives of the effective diffusions
    def diff_const(fld):
        v1 = dvals(fld, "dx")
        v2 = dvals(fld, "dxx")
        return float(np.max(np.abs(np.concatenate([v1, v2]))))
    sig0 = float(np.ravel(model.sigma(np.array([0.0]), np.array([0.0])))[0])
    a0 = float(np.ravel(model.a(np.array([0.0]), np.array([0.0])))[0])
    # derivative of Sigma = sigma sigma^T is 2 sigma sigma' for scalar fields
    out["K_Sigma"] = 2.0 * abs(sig0) * diff_const(model.sigma) if not model.fully_coupled else float("nan")
    out["K_A"] = 2.0 * abs(a0) * diff_const(model.a) if not model.fully_coupled else float("nan")
    # m5/m6: second x-derivatives of b; m7/m8: first/second y-derivatives of b
    bxx = dvals(model.b, "dxx")
    out["m5"] = _audit_exponent(bxx, np.abs(xs), gp.ms[4])
    out["m6"] = _audit_exponent(bxx, np.abs(ys), gp.ms[5])
    by = np.concatenate([dvals(model.b, "dy"), dvals(model.b, "dyy")])
    out["m7"] = _audit_exponent(by, np.abs(np.concatenate([xs, xs])), gp.m7)
    out["m8"] = _audit_exponent(by, np.abs(np.concatenate([ys, ys])), gp.m8)
    # m1/m2: fourth y-derivatives of b; m3/m4: mixed d_x d_yy b
    b4 = dvals(model.b, "dyyyy")
    out["m1"] = _audit_exponent(b4, np.abs(xs), gp.ms[0])
    out["m2"] = _audit_exponent(b4, np.abs(ys), gp.ms[1])
    bm = dvals(model.b, "dxdyy")
    out["m3"] = _audit_exponent(bm, np.abs(xs), gp.ms[2])
    out["m4"] = _audit_exponent(bm, np.abs(ys), gp.ms[3])
    out["flags"] = sorted(k for k in ("m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "m9")
                          if out[k]["contradicted"])
    return out


# ---------------------------------------------------------------------------
# full report


@dataclass
class AssumptionReport:
    model_name: str
    grid: ProbeGrid
    verdicts: dict
    constants: dict

    @property
    def any_violated(self):
        return any(v == VIOLATED for v in self.verdicts.values())

    def to_text(self) -> str:
        lines = [f"assumption report: model={self.model_name}",
                 f"probe grid: {self.grid.describe()}", ""]
        for key in sorted(self.verdicts):
            lines.append(f"{key}: {self.verdicts[key]}")
        lines.append("")
        for key in sorted(self.constants):
            lines.append(f"{key} = {self.constants[key]:.12g}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        rows = [f"model={self.model_name}", f"grid={self.grid.describe()}"]
        rows += [f"verdict.{k}={v}" for k, v in sorted(self.verdicts.items())]
        rows += [f"const.{k}={v:.17g}" for k, v in sorted(self.constants.items())]
        return "\n".join(rows) + "\n"


def assemble_report(model: SlowFastSystem, grid: Optional[ProbeGrid] = None,
                    zeta1: Optional[float] = None) -> AssumptionReport:
    """Run the full checker pipeline on one model."""
    grid = grid or ProbeGrid()
    verdicts, consts = {}, {}

    ell = check_ellipticity(model, grid)
    verdicts["uniform_ellipticity"] = ell.verdict
    consts.update({k: v for k, v in ell.values.items()})

    lyap_f = check_lyapunov(model, "frozen", grid)
    verdicts["lyapunov_frozen"] = lyap_f.verdict
    consts["r1"] = lyap_f.values["rate"]
    consts["C1"] = lyap_f.values["offset"]

    lyap_s = check_lyapunov(model, "slow", grid)
    verdicts["lyapunov_slow"] = lyap_s.verdict
    consts["r_tilde"] = lyap_s.values["rate"]
    consts["C_tilde"] = lyap_s.values["offset"]

    drift = check_frozen_drift_condition(model, grid, zeta1=zeta1)
    verdicts["frozen_drift_condition"] = drift.verdict
    consts["kappa"] = drift.values["kappa"]
    consts["zeta1"] = drift.values["zeta1"]

    if lyap_f.holds:
        lam_plus = consts["lam_plus_A"]
        for k in (2, 4):
            rk, ck = lyapunov_constants_for_k(k, consts["r1"], consts["C1"], lam_plus)
            rpk, cpk = moment_constants(k, rk, ck)
            consts[f"r_prime_{k}"] = rpk
            consts[f"C_prime_{k}"] = cpk
    if lyap_s.holds and model.growth.m_b_x >= 1:
        rpt, cpt = slow_moment_constants(consts["r_tilde"], consts["C_tilde"],
                                         model.growth.m_b_x)
        consts["r_tilde_prime"] = rpt
        consts["C_tilde_prime"] = cpt

    gro = growth_constants(model, grid)
    consts["K_g"] = gro["K_g"]
    if not math.isnan(gro["K_Sigma"]):
        consts["K_Sigma"] = gro["K_Sigma"]
        consts["K_A"] = gro["K_A"]
    verdicts["growth_audit"] = HOLDS if not gro["flags"] else VIOLATED

    if drift.holds and not model.fully_coupled:
        avgc = compute_avg_condition_constants(
            consts["zeta1"], consts["lam_minus"], model.d,
            consts["K_g"], consts.get("K_A", 0.0),
            consts["r1"], consts["C1"], consts["lam_plus_A"], model.growth)
        consts["D0"] = avgc["D0"]
        consts["Db_const"] = avgc["Db_const"]
        avgc["lam_minus"] = consts["lam_minus"]
        avgc["K_Sigma"] = consts.get("K_Sigma", 0.0)
        cond = check_avg_drift_condition(model, grid, consts["kappa"], avgc)
        verdicts["avg_drift_condition"] = cond.verdict
        consts["zeta_max"] = cond.values["zeta_max"]
        consts["avg_condition_margin"] = cond.values["margin"]
    else:
        verdicts["avg_drift_condition"] = NOT_CHECKED

    return AssumptionReport(model.name, grid, verdicts, consts)
