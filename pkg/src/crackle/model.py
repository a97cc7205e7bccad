"""Tail models, Poisson sampling and the critical-radius scaling equations.

Two spherically symmetric density families are supported:

* ``ParetoRV``       f(x) = C / (1 + |x|^alpha),          alpha > d
* ``VonMisesPower``  f(x) = C exp(-|x|^tau / tau),         0 < tau <= 1

The von-Mises family is implemented with a constant slowly varying factor,
which is flat for ``a(z) = z^(1 - tau)`` and has polynomial growth of order 0.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import BudgetExceeded, NoRoot, NonIntegrable, QuadratureFailure

N_KNOTS = 1024
RHO_LO = 1e-6
TAIL_FLOOR = 1e-18
QUAD_RTOL = 1e-10


class TailKind(str, enum.Enum):
    PARETO = "ParetoRV"
    VONMISES = "VonMisesPower"


class Regime(str, enum.Enum):
    CRITICAL = "Critical"
    SUBCRITICAL = "Subcritical"


def sphere_area(d: int) -> float:
    """Surface measure s_{d-1} of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def _profile(kind, alpha, tau):
    """Unnormalized radial profile g(rho), vectorized."""
    if kind == TailKind.PARETO:
        def g(r):
            with np.errstate(over="ignore"):
                return 1.0 / (1.0 + np.power(r, alpha))
        return g
    return lambda r: np.exp(-np.power(r, tau) / tau)


def _check_params(kind, alpha, tau, d):
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if kind == TailKind.PARETO:
        if alpha is None or not alpha > d:
            raise NonIntegrable(f"ParetoRV needs alpha > d (alpha={alpha}, d={d})")
    elif kind == TailKind.VONMISES:
        if tau is None or not 0.0 < tau <= 1.0:
            raise ValueError(f"VonMisesPower needs 0 < tau <= 1, got {tau}")
    else:
        raise ValueError(f"unknown tail kind {kind!r}")


def _quad(func, a, b):
    val, err = integrate.quad(func, a, b, epsabs=0.0, epsrel=1e-13, limit=400)
    return val, err


def normalize(kind, params, d):
    """Normalizing constant C of the radial density.

    ``params`` is a mapping holding ``alpha`` (ParetoRV) or ``tau``
    (VonMisesPower). The radial integral is evaluated by adaptive quadrature
    and rejected if its error estimate exceeds 1e-10 relative.
    """
    kind = TailKind(kind)
    alpha, tau = params.get("alpha"), params.get("tau")
    _check_params(kind, alpha, tau, d)
    return _normalize_cached(kind, alpha, tau, d)


@functools.lru_cache(maxsize=None)
def _normalize_cached(kind, alpha, tau, d):
    g = _profile(kind, alpha, tau)
    integrand = lambda r: r ** (d - 1) * g(r)
    total, err = 0.0, 0.0
    for a, b in ((0.0, 1.0), (1.0, np.inf)):
        v, e = _quad(integrand, a, b)
        total += v
        err += e
    if not total > 0 or err / total > QUAD_RTOL:
        raise QuadratureFailure(f"radial integral {total} with error {err}")
    return 1.0 / (sphere_area(d) * total)


@dataclass(frozen=True)
class TailModel:
    kind: TailKind
    dim: int
    alpha: float | None = None
    tau: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TailKind(self.kind))
        _check_params(self.kind, self.alpha, self.tau, self.dim)

    @classmethod
    def pareto(cls, alpha, dim):
        return cls(TailKind.PARETO, int(dim), alpha=float(alpha))

    @classmethod
    def von_mises(cls, tau, dim):
        return cls(TailKind.VONMISES, int(dim), tau=float(tau))

    @property
    def norm_const(self) -> float:
        return _normalize_cached(self.kind, self.alpha, self.tau, self.dim)

    @property
    def params(self) -> dict:
        if self.kind == TailKind.PARETO:
            return {"alpha": self.alpha}
        return {"tau": self.tau}

    def density(self, rho):
        return self.norm_const * _profile(self.kind, self.alpha, self.tau)(np.asarray(rho, float))

    def log_density(self, rho):
        rho = np.asarray(rho, float)
        if self.kind == TailKind.PARETO:
            return math.log(self.norm_const) - np.log1p(np.power(rho, self.alpha))
        return math.log(self.norm_const) - np.power(rho, self.tau) / self.tau

    def density_at(self, x):
        """Density at points of R^d (last axis is the coordinate axis)."""
        return self.density(np.linalg.norm(np.asarray(x, float), axis=-1))

    def a(self, z):
        """Auxiliary function a = 1/psi' (von-Mises family only)."""
        if self.kind != TailKind.VONMISES:
            raise ValueError("a(z) is defined for VonMisesPower tails only")
        return np.power(np.asarray(z, float), 1.0 - self.tau)

    def c_limit(self, M):
        """Limit of a(R)/M as R -> infinity for fixed M."""
        if self.kind != TailKind.VONMISES:
            raise ValueError("c is defined for VonMisesPower tails only")
        return 1.0 / M if self.tau == 1.0 else math.inf

    def survival(self, rho):
        """P(|X| > rho) under the normalized radial law."""
        return _radial_table(self).survival(rho)

    def tail_probability(self, t):
        """P(|X| > t) by direct quadrature (independent of the sampling table)."""
        g = _profile(self.kind, self.alpha, self.tau)
        d = self.dim
        if t <= 0:
            return 1.0
        h = lambda s: np.exp(d * s) * g(np.exp(s))
        s0 = math.log(t)
        v, _ = _quad(h, s0, s0 + 200.0 / min(1.0, _decay(self)))
        return sphere_area(d) * self.norm_const * v


def radial_density(tail: TailModel, rho):
    if np.any(np.asarray(rho) < 0):
        raise ValueError("rho must be non-negative")
    return tail.density(rho)


def _decay(tail):
    """Rough decay rate of the radial integrand in log(rho), used to size intervals."""
    if tail.kind == TailKind.PARETO:
        return tail.alpha - tail.dim
    return 1.0


class _RadialTable:
    """Survival function of |X| on log-spaced knots with monotone interpolation."""

    def __init__(self, tail: TailModel):
        d = tail.dim
        g = _profile(tail.kind, tail.alpha, tail.tau)
        f = lambda r: r ** (d - 1) * g(r)
        scale = sphere_area(d) * tail.norm_const

        # integrate in s = log(rho), where every knot interval is short
        h = lambda s: np.exp(d * s) * g(np.exp(s))
        tail_int = lambda s0: _quad(h, s0, s0 + 200.0 / min(1.0, _decay(tail)))[0]
        hi = 1.0
        while scale * tail_int(math.log(hi)) > TAIL_FLOOR:
            hi *= 2.0
        knots = np.geomspace(RHO_LO, hi, N_KNOTS)
        s_knots = np.log(knots)
        nodes, weights = np.polynomial.legendre.leggauss(16)
        a, b = s_knots[:-1, None], s_knots[1:, None]
        pts = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        pieces = (0.5 * (b - a) * weights * h(pts)).sum(axis=1)
        tail_mass = tail_int(s_knots[-1])
        upper = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]]) + tail_mass
        lower = np.concatenate([[0.0], np.cumsum(pieces)]) + g(0.0) * RHO_LO ** d / d
        # complementary mass is the accurate one near rho = 0
        surv = np.where(scale * upper > 0.5, 1.0 - scale * lower, scale * upper)

        self.d = d
        self.scale = scale
        self.h = h
        self.nodes, self.weights = nodes, weights
        self.surv = surv
        self.g0 = float(g(0.0))
        self.log_knots = np.log(knots)
        self.log_surv = np.log(surv)
        self.interp = PchipInterpolator(self.log_knots, self.log_surv, extrapolate=False)
        self.end_slope = (self.log_surv[-1] - self.log_surv[-2]) / (self.log_knots[-1] - self.log_knots[-2])

    def log_survival_logrho(self, x):
        x = np.asarray(x, float)
        out = np.empty_like(x)
        lo = x < self.log_knots[0]
        hi = x > self.log_knots[-1]
        mid = ~(lo | hi)
        out[mid] = np.log(self._exact(x[mid]))
        r = np.exp(x[lo])
        out[lo] = np.log1p(-self.scale * self.g0 * r ** self.d / self.d)
        out[hi] = self.log_surv[-1] + self.end_slope * (x[hi] - self.log_knots[-1])
        return out

    def survival(self, rho):
        rho = np.asarray(rho, float)
        out = np.ones_like(rho)
        pos = rho > 0
        out[pos] = np.exp(self.log_survival_logrho(np.log(rho[pos])))
        return out

    def inverse(self, u):
        """rho with P(|X| > rho) = u, for u in (0, 1], by bisection on log rho."""
        u = np.asarray(u, float)
        logu = np.log(u)
        rho = np.zeros_like(u)
        near0 = logu >= self.log_surv[0]
        beyond = logu < self.log_surv[-1]
        core = ~(near0 | beyond)

        m = near0 & (u < 1.0)
        rho[m] = (self.d * (-np.expm1(logu[m])) / (self.scale * self.g0)) ** (1.0 / self.d)
        rho[beyond] = np.exp(self.log_knots[-1] + (logu[beyond] - self.log_surv[-1]) / self.end_slope)

        target = logu[core]
        # -log_surv is increasing in the knots
        j = np.searchsorted(-self.log_surv, -target, side="right") - 1
        j = np.clip(j, 0, len(self.log_knots) - 2)
        lo = self.log_knots[j].copy()
        hi = self.log_knots[j + 1].copy()
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            above = self.interp(mid) > target
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        s = 0.5 * (lo + hi)
        # Newton steps on the exact survival; dS/ds = -scale * h(s)
        for _ in range(3):
            s = s + (self._exact(s) - u[core]) / (self.scale * self.h(s))
        rho[core] = np.exp(np.clip(s, self.log_knots[0], self.log_knots[-1]))
        return rho

    def _exact(self, x):
        """Survival at log-radii inside the knot range: right knot plus a Gauss-Legendre piece."""
        j = np.clip(np.searchsorted(self.log_knots, x, side="right"), 1, len(self.log_knots) - 1)
        b = self.log_knots[j]
        half = 0.5 * (b - x)
        pts = half[:, None] * self.nodes + 0.5 * (b + x)[:, None]
        piece = half * (self.weights * self.h(pts)).sum(axis=1)
        return self.surv[j] + self.scale * piece


@functools.lru_cache(maxsize=32)
def _radial_table(tail: TailModel) -> _RadialTable:
    return _RadialTable(tail)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` (an int or a sequence of ints)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def trial_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


@dataclass
class PointCloud:
    points: np.ndarray
    seed: int | None = None
    intensity_n: float = 0.0
    # sampling was restricted to |x| >= r_min (exact for the crackle layer
    # whenever r_min <= R - 2M)
    r_min: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise ValueError("points must be an (N, d) array")

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def norms(self):
        return np.linalg.norm(self.points, axis=1)


def sample_cloud(tail: TailModel, n, seed, r_min=0.0, max_points=None) -> PointCloud:
    """Poisson process with intensity n*f, optionally restricted to |x| >= r_min."""
    if not n > 0:
        raise ValueError("intensity n must be positive")
    table = _radial_table(tail)
    mass = 1.0 if r_min <= 0 else float(table.survival(np.array([r_min]))[0])
    if max_points is not None and n * mass > max_points:
        raise BudgetExceeded(f"expected {n * mass:.3g} points exceeds max_points={max_points:g}")
    rng = make_rng(seed)
    count = int(rng.poisson(n * mass))
    u = mass * (1.0 - rng.random(count))
    rho = table.inverse(u)
    if r_min > 0:
        rho = np.maximum(rho, r_min)
    dirs = rng.standard_normal((count, tail.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return PointCloud(rho[:, None] * dirs, seed=seed, intensity_n=float(n), r_min=float(r_min))


# -- scaling equations ------------------------------------------------------

def log_scaling_lhs(tail: TailModel, n, M, p, R):
    """log of n^p M^{d(p-1)} R^d f(R)^p (heavy) or
    n^p M^{d(p-1)} a(R) R^{d-1} f(R)^p (von-Mises)."""
    d = tail.dim
    base = p * math.log(n) + d * (p - 1) * math.log(M) + p * float(tail.log_density(R))
    if tail.kind == TailKind.PARETO:
        return base + d * math.log(R)
    return base + (1.0 - tail.tau + d - 1) * math.log(R)


def _lhs_peak(tail, p):
    """Radius where the scaling left-hand side is maximal."""
    d = tail.dim
    if tail.kind == TailKind.PARETO:
        # d - p*alpha*r^a/(1+r^a) = 0
        q = d / (p * tail.alpha)
        return (q / (1.0 - q)) ** (1.0 / tail.alpha)
    # (d - tau) - p r^tau = 0
    return ((d - tail.tau) / p) ** (1.0 / tail.tau)


def _solve(tail, n, M, p):
    if not (n > 0 and M > 0):
        raise ValueError("n and M must be positive")
    phi = lambda x: log_scaling_lhs(tail, n, M, p, math.exp(x))
    lo = math.log(max(M, _lhs_peak(tail, p)))
    if phi(lo) <= 0.0:
        raise NoRoot(f"no R > M={M} solves the scaling equation at n={n:g}")
    hi = lo + 1.0
    while phi(hi) > 0.0:
        lo, hi = hi, hi + 1.0
        if hi > 700:
            raise NoRoot("scaling equation has no finite root")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if phi(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    # pick the endpoint with the smaller residual
    x = lo if abs(phi(lo)) <= abs(phi(hi)) else hi
    return math.exp(x)


def solve_R_heavy(tail: TailModel, n, M, p):
    if tail.kind != TailKind.PARETO:
        raise ValueError("solve_R_heavy needs a ParetoRV tail")
    return _solve(tail, n, M, p)


def solve_R_exp(tail: TailModel, n, M, p):
    if tail.kind != TailKind.VONMISES:
        raise ValueError("solve_R_exp needs a VonMisesPower tail")
    return _solve(tail, n, M, p)


def pareto_R_closed_form(tail: TailModel, n, M, p):
    """Asymptotic solution for the Pareto density (exact up to the +1 in 1 + r^alpha)."""
    d, a = tail.dim, tail.alpha
    return ((tail.norm_const * n) ** p * M ** (d * (p - 1))) ** (1.0 / (a * p - d))


def von_mises_R_asymptotic(tail: TailModel, n, p):
    """Logarithmic growth formula for R with M = 1."""
    d, t = tail.dim, tail.tau
    return (t * math.log(n) + (d - t) / p * math.log(t * math.log(n))
            + t * math.log(tail.norm_const)) ** (1.0 / t)


@dataclass(frozen=True)
class ScalingPlan:
    tail: TailModel
    k: int
    p: int
    n: float
    M: float
    R: float
    regime: Regime = Regime.CRITICAL
    kappa: float = 1.0

    @property
    def d(self):
        return self.tail.dim

    @property
    def density_scale(self):
        """n M^d f(R), the quantity driving the moment asymptotics."""
        return self.n * self.M ** self.d * float(self.tail.density(self.R))

    @property
    def lhs(self):
        return math.exp(log_scaling_lhs(self.tail, self.n, self.M, self.p, self.R))

    @property
    def c_ratio(self):
        return float(self.tail.a(self.R)) / self.M

    def with_n(self, n):
        return make_plan(self.tail, self.k, self.p, n, self.M, self.regime, self.kappa)


def make_plan(tail, k, p, n, M, regime=Regime.CRITICAL, kappa=1.5):
    """Solve R for a critical plan; a subcritical plan inflates it by ``kappa``."""
    regime = Regime(regime)
    if k < 1 or p < k + 2:
        raise ValueError(f"need k >= 1 and p >= k+2 (k={k}, p={p})")
    solver = solve_R_heavy if tail.kind == TailKind.PARETO else solve_R_exp
    R = solver(tail, n, M, p)
    if regime == Regime.SUBCRITICAL:
        if not kappa > 1:
            raise ValueError("subcritical regime needs kappa > 1")
        R *= kappa
    else:
        kappa = 1.0
    return ScalingPlan(tail, int(k), int(p), float(n), float(M), float(R), regime, float(kappa))
