"""Slow-fast system definitions and the registry of built-in example systems.

Convention: the stochastic integrator carries the sqrt(2) / sqrt(2/eps)
diffusion prefactors, so the stored coefficients are exactly

    dX = b(X,Y) dt + sqrt(2)      sigma(X[,Y]) dW
    dY = (1/eps) g(X,Y) dt + sqrt(2/eps) a(X[,Y]) dB

and the fast generator is  L^x u = (g, grad_y u) + a a^T : Hess_y u.
Coefficient evaluators take (x, y) as 1-d arrays of length n and d and
return arrays shaped (n,), (n,n), (d,), (d,d). They must be pure: the
simulator calls them from many workers at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from . import _families as F

INV_SQRT2 = F.INV_SQRT2


@dataclass(frozen=True)
class CoefficientField:
    """One coefficient of a slow-fast system plus optional analytic derivatives.

    ``kind`` is one of slow_drift, slow_diffusion, fast_drift, fast_diffusion.
    ``derivs`` maps names like "dx", "dy", "dyy", "dyyy", "dyyyy", "dxx",
    "dxdyy" to callables with the same (x, y) signature; absent entries fall
    back to central finite differences in the checkers.
    """

    kind: str
    fn: Callable
    derivs: Mapping[str, Callable] = field(default_factory=dict)

    def __call__(self, x, y):
        return self.fn(x, y)

    def deriv(self, name: str):
        return self.derivs.get(name)


@dataclass(frozen=True)
class GrowthProfile:
    """Polynomial growth exponents: b in x, b in y, g in y, plus the
    derivative-growth exponents m1..m9 used by the slow drift condition."""

    m_b_x: int
    m_b_y: int
    m_g_y: int
    ms: tuple = (0, 0, 0, 0, 0, 0, 0, 0, 0)  # m1..m9

    def __post_init__(self):
        if min(self.m_b_x, self.m_b_y, self.m_g_y) < 0 or min(self.ms) < 0:
            raise ValueError("growth exponents must be non-negative")

    @property
    def m7(self):
        return self.ms[6]

    @property
    def m8(self):
        return self.ms[7]

    @property
    def m9(self):
        return self.ms[8]


@dataclass(frozen=True)
class SlowFastSystem:
    """Immutable description of one slow-fast system."""

    name: str
    n: int
    d: int
    b: CoefficientField
    sigma: CoefficientField
    g: CoefficientField
    a: CoefficientField
    eps: float
    growth: GrowthProfile
    fully_coupled: bool = False
    family: int = F.FAM_GENERIC
    family_params: tuple = ()
    # analytic averaged closure: (family, params) or a drift callable
    averaged_family: Optional[int] = None
    averaged_params: tuple = ()
    averaged_drift: Optional[Callable] = None
    averaged_sigma: float = 1.0
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class FrozenSystem:
    """The fast process with the slow variable frozen and eps set to 1:
    dY = g(x, Y) dt + sqrt(2) a(x[, Y]) dB."""

    parent: SlowFastSystem
    x: np.ndarray

    def drift(self, y):
        return self.parent.g(self.x, np.atleast_1d(np.asarray(y, dtype=float)))

    def diffusion(self, y=None):
        yv = self.x * 0.0 if y is None else np.atleast_1d(np.asarray(y, dtype=float))
        return self.parent.a(self.x, yv)

    @property
    def d(self):
        return self.parent.d


@dataclass(frozen=True)
class AveragedSystem:
    """The averaged slow SDE dXbar = b_bar(Xbar) dt + sqrt(2) sigma_bar dW."""

    n: int
    drift: Callable
    sigma: Callable
    provenance: str  # "analytic" | "mc-tabulated"
    family: Optional[int] = None
    family_params: tuple = ()
    ppoly: object = None  # scipy PPoly when mc-tabulated
    table: object = None  # AveragedDriftTable when mc-tabulated


def _f1(v):
    return np.atleast_1d(np.asarray(v, dtype=float))


def _scalar_field(kind, fn, **derivs):
    """Wrap scalar (n=d=1) formulas into array-shaped evaluators."""
    shape = {"slow_drift": (1,), "fast_drift": (1,),
             "slow_diffusion": (1, 1), "fast_diffusion": (1, 1)}[kind]

    def wrap(h):
        def ev(x, y):
            xv, yv = _f1(x), _f1(y)
            return np.asarray(h(float(xv[0]), float(yv[0])), dtype=float).reshape(shape)
        return ev

    return CoefficientField(kind, wrap(fn), {k: wrap(v) for k, v in derivs.items()})


def _zero(x, y):
    return 0.0


_REGISTRY = {}


def _register(name):
    def deco(fn):
        _REGISTRY[name] = fn
        return fn
    return deco


@_register("conv")
def _make_conv(eps):
    return SlowFastSystem(
        name="conv", n=1, d=1,
        b=_scalar_field("slow_drift", lambda x, y: -(x + y),
                        dx=lambda x, y: -1.0, dy=lambda x, y: -1.0,
                        dxx=_zero, dyy=_zero, dyyy=_zero, dyyyy=_zero, dxdyy=_zero),
        sigma=_scalar_field("slow_diffusion", lambda x, y: INV_SQRT2, dx=_zero, dxx=_zero),
        g=_scalar_field("fast_drift", lambda x, y: -y,
                        dx=_zero, dy=lambda x, y: -1.0,
                        dyy=_zero, dyyy=_zero, dyyyy=_zero),
        a=_scalar_field("fast_diffusion", lambda x, y: 1.0, dx=_zero, dxx=_zero),
        eps=eps,
        growth=GrowthProfile(1, 1, 1),
        family=F.FAM_CONV,
        averaged_family=F.FAM_AVG_LINEAR, averaged_params=(1.0, INV_SQRT2),
        averaged_sigma=INV_SQRT2,
    )


@_register("dec-der")
def _make_dec_der(eps):
    return SlowFastSystem(
        name="dec-der", n=1, d=1,
        b=_scalar_field("slow_drift", lambda x, y: -(x + y),
                        dx=lambda x, y: -1.0, dy=lambda x, y: -1.0,
                        dxx=_zero, dyy=_zero, dyyy=_zero, dyyyy=_zero, dxdyy=_zero),
        sigma=_scalar_field("slow_diffusion", lambda x, y: INV_SQRT2, dx=_zero, dxx=_zero),
        g=_scalar_field("fast_drift", lambda x, y: -(y + x),
                        dx=lambda x, y: -1.0, dy=lambda x, y: -1.0,
                        dyy=_zero, dyyy=_zero, dyyyy=_zero),
        a=_scalar_field("fast_diffusion", lambda x, y: 1.0, dx=_zero, dxx=_zero),
        eps=eps,
        growth=GrowthProfile(1, 1, 1),
        family=F.FAM_DEC_DER,
        averaged_family=F.FAM_AVG_LINEAR, averaged_params=(0.0, INV_SQRT2),
        averaged_sigma=INV_SQRT2,
    )


@_register("double-well")
def _make_double_well(eps):
    return SlowFastSystem(
        name="double-well", n=1, d=1,
        b=_scalar_field("slow_drift", lambda x, y: -(x + y),
                        dx=lambda x, y: -1.0, dy=lambda x, y: -1.0,
                        dxx=_zero, dyy=_zero, dyyy=_zero, dyyyy=_zero, dxdyy=_zero),
        sigma=_scalar_field("slow_diffusion", lambda x, y: INV_SQRT2, dx=_zero, dxx=_zero),
        g=_scalar_field("fast_drift", lambda x, y: -y * (y + 2.0) * (y - 2.0),
                        dx=_zero, dy=lambda x, y: -3.0 * y * y + 4.0,
                        dyy=lambda x, y: -6.0 * y, dyyy=lambda x, y: -6.0, dyyyy=_zero),
        a=_scalar_field("fast_diffusion", lambda x, y: 1.0, dx=_zero, dxx=_zero),
        eps=eps,
        growth=GrowthProfile(1, 1, 3),
        family=F.FAM_DOUBLE_WELL,
        averaged_family=F.FAM_AVG_LINEAR, averaged_params=(1.0, INV_SQRT2),
        averaged_sigma=INV_SQRT2,
    )


@_register("cubic")
def _make_cubic(eps, b0_amp=0.25, g0_amp=1.0):
    ba, ga = float(b0_amp), float(g0_amp)
    return SlowFastSystem(
        name="cubic", n=1, d=1,
        b=_scalar_field("slow_drift", lambda x, y: -x ** 3 - x + ba * np.sin(y),
                        dx=lambda x, y: -3.0 * x * x - 1.0,
                        dxx=lambda x, y: -6.0 * x,
                        dy=lambda x, y: ba * np.cos(y),
                        dyy=lambda x, y: -ba * np.sin(y),
                        dyyy=lambda x, y: -ba * np.cos(y),
                        dyyyy=lambda x, y: ba * np.sin(y),
                        dxdyy=_zero),
        sigma=_scalar_field("slow_diffusion", lambda x, y: 1.0, dx=_zero, dxx=_zero),
        g=_scalar_field("fast_drift", lambda x, y: -y ** 3 - y + ga * np.sin(x),
                        dx=lambda x, y: ga * np.cos(x),
                        dy=lambda x, y: -3.0 * y * y - 1.0,
                        dyy=lambda x, y: -6.0 * y,
                        dyyy=lambda x, y: -6.0,
                        dyyyy=_zero),
        a=_scalar_field("fast_diffusion", lambda x, y: 1.0, dx=_zero, dxx=_zero),
        eps=eps,
        growth=GrowthProfile(3, 0, 3, ms=(0, 0, 0, 0, 1, 0, 0, 0, 0)),
        family=F.FAM_CUBIC, family_params=(ba, ga),
        params={"b0_amp": ba, "g0_amp": ga},
    )


@_register("lip")
def _make_lip(eps, r=0.5):
    rv = float(r)
    # frozen process is an OU with mean sin(x); E[cos(Y)] = exp(-1/2) cos(sin x)
    exp_half = float(np.exp(-0.5))

    def avg_drift(x):
        return -x - rv * exp_half * np.cos(np.sin(x))

    return SlowFastSystem(
        name="lip", n=1, d=1,
        b=_scalar_field("slow_drift", lambda x, y: -x - rv * np.cos(y),
                        dx=lambda x, y: -1.0, dxx=_zero,
                        dy=lambda x, y: rv * np.sin(y),
                        dyy=lambda x, y: rv * np.cos(y),
                        dyyy=lambda x, y: -rv * np.sin(y),
                        dyyyy=lambda x, y: -rv * np.cos(y),
                        dxdyy=_zero),
        sigma=_scalar_field("slow_diffusion", lambda x, y: 1.0, dx=_zero, dxx=_zero),
        g=_scalar_field("fast_drift", lambda x, y: -y + np.sin(x),
                        dx=lambda x, y: np.cos(x),
                        dy=lambda x, y: -1.0,
                        dyy=_zero, dyyy=_zero, dyyyy=_zero),
        a=_scalar_field("fast_diffusion", lambda x, y: 1.0, dx=_zero, dxx=_zero),
        eps=eps,
        growth=GrowthProfile(1, 0, 1),
        family=F.FAM_LIP, family_params=(rv,),
        averaged_drift=avg_drift, averaged_sigma=1.0,
        params={"r": rv},
    )


@_register("fully-coupled-demo")
def _make_fc_demo(eps):
    # Both diffusions depend on (x, y); drift of the fast equation is in
    # reversible form so the frozen invariant measure is exactly
    # N(arctan x, 1), and sigma is tuned so the averaged diffusion is 1.
    def sig_fn(x, y):
        return np.sqrt(1.0 + 0.25 * np.sin(y) - x / (4.0 * F.SQRT_E * np.sqrt(1.0 + x * x)))

    def g_fn(x, y):
        th = np.sin(x) + y
        av = 1.0 + np.sin(th) / 12.0
        return av * av * (np.arctan(x) - y) + np.cos(th) / 6.0 * av

    return SlowFastSystem(
        name="fully-coupled-demo", n=1, d=1,
        b=_scalar_field("slow_drift", lambda x, y: -x - y,
                        dx=lambda x, y: -1.0, dy=lambda x, y: -1.0,
                        dxx=_zero, dyy=_zero, dyyy=_zero, dyyyy=_zero, dxdyy=_zero),
        sigma=_scalar_field("slow_diffusion", sig_fn),
        g=_scalar_field("fast_drift", g_fn),
        a=_scalar_field("fast_diffusion",
                        lambda x, y: 1.0 + np.sin(np.sin(x) + y) / 12.0),
        eps=eps,
        growth=GrowthProfile(1, 1, 1),
        fully_coupled=True,
        family=F.FAM_FC_DEMO,
        averaged_family=F.FAM_AVG_DEMO, averaged_params=(),
        averaged_sigma=1.0,
    )


def make_model(name: str, eps: float, **params) -> SlowFastSystem:
    """Build a registered example system.

    Registry keys: conv, dec-der, double-well, cubic, lip,
    fully-coupled-demo. Free constants (e.g. ``r`` for lip, ``b0_amp`` /
    ``g0_amp`` for cubic) are keyword parameters.
    """
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown model {name!r}; known: {sorted(_REGISTRY)}") from None
    if eps <= 0:
        raise ValueError("eps must be positive")
    try:
        return builder(float(eps), **params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for model {name!r}: {exc}") from None


def registry_names():
    return sorted(_REGISTRY)


def evaluate_effective_diffusions(model: SlowFastSystem, x, y=None):
    """Return (Sigma(x)=sigma sigma^T, A(x)=a a^T), symmetrized."""
    xv = _f1(x)
    yv = np.zeros(model.d) if y is None else _f1(y)
    s = np.asarray(model.sigma(xv, yv), dtype=float)
    a = np.asarray(model.a(xv, yv), dtype=float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise ValueError(f"non-finite diffusion coefficient at x={xv}, y={yv}")
    big_sigma = s @ s.T
    big_a = a @ a.T
    return 0.5 * (big_sigma + big_sigma.T), 0.5 * (big_a + big_a.T)


def frozen(model: SlowFastSystem, x) -> FrozenSystem:
    """Freeze the slow variable: dY = g(x, Y) dt + sqrt(2) a(x[,Y]) dB."""
    xv = _f1(x)
    if not np.all(np.isfinite(xv)):
        raise ValueError("frozen parameter x must be finite")
    if xv.shape != (model.n,):
        raise ValueError(f"x must have shape ({model.n},)")
    return FrozenSystem(parent=model, x=xv)


def analytic_averaged(model: SlowFastSystem) -> AveragedSystem:
    """The analytic averaged system, for models that have a closure."""
    sig = model.averaged_sigma

    if model.averaged_family is not None:
        fam, par = model.averaged_family, model.averaged_params

        def drift(x):
            b, _, _ = F.eval_averaged(fam, par, np.asarray(x, dtype=float))
            return b

        return AveragedSystem(n=model.n, drift=drift,
                              sigma=lambda x: np.full(np.shape(x), sig),
                              provenance="analytic", family=fam, family_params=par)
    if model.averaged_drift is not None:
        return AveragedSystem(n=model.n, drift=model.averaged_drift,
                              sigma=lambda x: np.full(np.shape(x), sig),
                              provenance="analytic")
    raise ValueError(f"model {model.name!r} has no analytic averaged closure; "
                     "use measure.build_averaged_model")


def verify_coefficient_derivatives(model: SlowFastSystem, points, h=1e-4,
                                   rtol=1e-3):
    """Check supplied analytic first derivatives against central differences.

    Returns the worst relative error seen over the probe points (scalar
    systems only, which covers the whole registry).
    """
    worst = 0.0
    for (x, y) in points:
        for fld, wrt in ((model.b, "dx"), (model.b, "dy"),
                         (model.g, "dx"), (model.g, "dy")):
            dfn = fld.deriv(wrt)
            if dfn is None:
                continue
            ana = float(np.ravel(dfn(x, y))[0])
            if wrt == "dx":
                num = (float(np.ravel(fld(x + h, y))[0])
                       - float(np.ravel(fld(x - h, y))[0])) / (2 * h)
            else:
                num = (float(np.ravel(fld(x, y + h))[0])
                       - float(np.ravel(fld(x, y - h))[0])) / (2 * h)
            err = abs(ana - num) / max(1.0, abs(ana))
            worst = max(worst, err)
            if err > rtol:
                raise AssertionError(
                    f"analytic {wrt} of {fld.kind} disagrees with finite "
                    f"difference at (x={x}, y={y}): {ana} vs {num}")
    return worst
