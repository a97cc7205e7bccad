"""Limiting objects: region constants, regions of the diagram plane, and
Monte Carlo estimates of the limiting Poisson mean measures.
"""
from __future__ import annotations

import functools
import itertools
import math
import os
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .errors import InsufficientSamples, Unsupported
from .geom import cech_filtration
from .model import ScalingPlan, TailModel, make_rng, sphere_area
from .ph import naive_diagram_oracle, reduce

BOUNDARY_TOL = 1e-9
CONSTANTS_VERSION = "1"
CONSTANTS_ENV = "CRACKLE_CONSTANTS_DIR"
MIN_ACCEPTED = 100
BATCH = 16384


# -- region constants -------------------------------------------------------------

class ConstantRow(NamedTuple):
    k: int
    m: int
    d: int
    pi: float
    b: float
    method: str
    tolerance: float


def _parse_table(text):
    rows = {}
    version = None
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("# version"):
            version = line.split()[-1]
        if not line or line.startswith("#"):
            continue
        k, m, d, pi, b, method, tol = line.split()
        rows[(int(k), int(m))] = ConstantRow(int(k), int(m), int(d), float(pi), float(b), method, float(tol))
    return version, rows


def _format_table(rows):
    lines = [f"# version {CONSTANTS_VERSION}", "# k m d pi b method tolerance"]
    for key in sorted(rows):
        r = rows[key]
        lines.append(f"{r.k} {r.m} {r.d} {r.pi!r} {r.b!r} {r.method} {r.tolerance!r}")
    return "\n".join(lines) + "\n"


def _cache_path():
    root = os.environ.get(CONSTANTS_ENV)
    return Path(root) / "region_constants.txt" if root else None


@functools.lru_cache(maxsize=None)
def _shipped_table():
    text = resources.files("crackle").joinpath("data/region_constants.txt").read_text()
    return _parse_table(text)[1]


def constants_table():
    """Shipped constants, overlaid with the user cache directory if set."""
    rows = dict(_shipped_table())
    path = _cache_path()
    if path is not None and path.exists():
        rows.update(_parse_table(path.read_text())[1])
    return rows


def _store(row):
    path = _cache_path()
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = _parse_table(path.read_text())[1] if path.exists() else {}
    rows[(row.k, row.m)] = row
    path.write_text(_format_table(rows))


def default_dim(k):
    return k + 1


def _pairs(x, m, d, k):
    pts = x.reshape(m, d)
    return reduce(cech_filtration(pts, k + 1), k)


def _bottleneck(pts):
    """Longest edge of a minimum spanning tree (connectivity threshold)."""
    m = len(pts)
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    inside = np.zeros(m, dtype=bool)
    inside[0] = True
    best = dist[0].copy()
    worst = 0.0
    for _ in range(m - 1):
        cand = np.where(inside, np.inf, best)
        j = int(np.argmin(cand))
        worst = max(worst, cand[j])
        inside[j] = True
        best = np.minimum(best, dist[j])
    return worst


def _ratio_objective(k, m, d):
    def f(x):
        prs = _pairs(x, m, d, k)
        return -max((p.death / p.birth for p in prs if p.birth > 0), default=0.0)
    return f


def _birth_objective(k, m, d):
    def f(x):
        pts = x.reshape(m, d)
        gap = _bottleneck(pts) - 2.0
        if gap >= 0:
            return 10.0 * (gap + 1e-9)
        prs = _pairs(x, m, d, k)
        return -max((p.birth for p in prs), default=0.0)
    return f


def _search(objective, m, d, restarts, seed, scale, maxfev, feasible=lambda x: True, polish=10):
    """Nelder-Mead from Gaussian starts; the best ``polish`` results get a compass search."""
    rng = make_rng(seed)
    found = []
    for _ in range(restarts):
        x0 = scale * rng.standard_normal(m * d)
        res = optimize.minimize(objective, x0, method="Nelder-Mead",
                                options={"maxfev": maxfev, "xatol": 1e-10, "fatol": 1e-12,
                                         "adaptive": True})
        found.append((float(res.fun), res.x))
    found.sort(key=lambda t: t[0])
    best_val, best_x = 0.0, None
    for _, x in found[:polish]:
        x = _pattern_polish(objective, x, step=1e-3)
        val = objective(x)
        if val < best_val and feasible(x):
            best_val, best_x = val, x
    return -best_val, best_x


def _pattern_polish(objective, x, step, min_step=1e-12):
    """Coordinate-wise compass search from ``x``."""
    x = x.copy()
    fx = objective(x)
    while step > min_step:
        improved = False
        for i in range(len(x)):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[i] += sgn * step
                fy = objective(y)
                if fy < fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step *= 0.5
    return x


def optimize_pi(k, m, d=None, restarts=200, seed=0, maxfev=400):
    """Numeric sup of death/birth over m-point configurations (a lower bound)."""
    d = d or default_dim(k)
    return _search(_ratio_objective(k, m, d), m, d, restarts, seed, 1.0, maxfev)


def optimize_b(k, m, d=None, restarts=200, seed=0, maxfev=400):
    """Numeric sup of birth over m-point configurations connected at unit radius."""
    d = d or default_dim(k)
    feasible = lambda x: _bottleneck(x.reshape(m, d)) < 2.0
    return _search(_birth_objective(k, m, d), m, d, restarts, seed, 0.7, maxfev, feasible)


def _constant(k, m, which, budget_m):
    if m < k + 2:
        raise Unsupported(f"no k={k} cycles on m={m} < k+2 points")
    row = constants_table().get((k, m))
    if row is not None:
        return getattr(row, which)
    if m > budget_m:
        raise Unsupported(f"(k={k}, m={m}) is not cached and exceeds the optimizer budget m <= {budget_m}")
    pi, _ = optimize_pi(k, m)
    b, _ = optimize_b(k, m)
    row = ConstantRow(k, m, default_dim(k), pi, b, "nelder-mead-200", 1e-3)
    _store(row)
    return getattr(row, which)


def pi_km(k, m, budget_m=5):
    return _constant(k, m, "pi", budget_m)


def b_km(k, m, budget_m=5):
    return _constant(k, m, "b", budget_m)


# -- regions -----------------------------------------------------------------------

class HalfPlane(NamedTuple):
    """a*x + b*y + c >= 0 (or > 0 when strict)."""
    a: float
    b: float
    c: float
    strict: bool = False


_DELTA = (HalfPlane(1.0, 0.0, 0.0), HalfPlane(-1.0, 1.0, 0.0))


@dataclass(frozen=True)
class RegionSpec:
    """A finite union of convex polygons inside Delta = {0 <= x <= y}.

    ``expr`` is the textual form accepted by :func:`parse_region`.
    """
    expr: str
    pieces: tuple

    def contains(self, x, y, tol=BOUNDARY_TOL):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for piece in self.pieces:
            ok = np.ones_like(out)
            for h in piece:
                v = h.a * x + h.b * y + h.c
                ok &= (v > tol) if h.strict else (v >= -tol)
            out |= ok
        return out

    def count(self, xy):
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return int(self.contains(xy[:, 0], xy[:, 1]).sum())

    def polygons(self, extent=1e3):
        """Vertices of each piece, clipped to the box [0, extent]^2."""
        box = [(0.0, 0.0), (extent, 0.0), (extent, extent), (0.0, extent)]
        out = []
        for piece in self.pieces:
            poly = box
            for h in piece:
                poly = _clip(poly, h)
                if not poly:
                    break
            if poly:
                out.append(poly)
        return out

    def bounds(self, extent=1e3):
        polys = self.polygons(extent)
        if not polys:
            return None
        xy = np.array([p for poly in polys for p in poly])
        return xy[:, 0].min(), xy[:, 0].max(), xy[:, 1].min(), xy[:, 1].max()

    def is_empty(self, extent=1e3):
        return not any(_area(p) > 0 for p in self.polygons(extent))

    def area(self, extent=1e3):
        """Area of the pieces (exact when they do not overlap)."""
        return sum(_area(p) for p in self.polygons(extent))


def _clip(poly, h):
    """Sutherland-Hodgman clip of a polygon by one half-plane."""
    val = lambda p: h.a * p[0] + h.b * p[1] + h.c
    out = []
    for i, p in enumerate(poly):
        q = poly[(i + 1) % len(poly)]
        vp, vq = val(p), val(q)
        if vp >= 0:
            out.append(p)
        if (vp >= 0) != (vq >= 0):
            t = vp / (vp - vq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _area(poly):
    if len(poly) < 3:
        return 0.0
    xy = np.array(poly)
    return 0.5 * abs(np.dot(xy[:, 0], np.roll(xy[:, 1], -1)) - np.dot(xy[:, 1], np.roll(xy[:, 0], -1)))


def _fmt(v):
    return repr(float(v)) if not float(v).is_integer() else str(int(v)) if abs(v) < 1e15 else repr(float(v))


def delta():
    return RegionSpec("delta", (_DELTA,))


def delta_km(k, m, pi=None):
    pi = pi_km(k, m) if pi is None else pi
    return RegionSpec(f"dkm({k},{m})", (_DELTA + (HalfPlane(pi, -1.0, 0.0),),))


def bkm(k, m, pi=None, b=None):
    pi = pi_km(k, m) if pi is None else pi
    b = b_km(k, m) if b is None else b
    return RegionSpec(f"bkm({k},{m})", (_DELTA + (HalfPlane(pi, -1.0, 0.0), HalfPlane(-1.0, 0.0, b)),))


def rect(x0, x1, y0, y1):
    """Rectangle [x0, x1] x [y0, y1] intersected with Delta."""
    hs = (HalfPlane(1.0, 0.0, -x0), HalfPlane(-1.0, 0.0, x1),
          HalfPlane(0.0, 1.0, -y0), HalfPlane(0.0, -1.0, y1))
    return RegionSpec(f"rect({_fmt(x0)},{_fmt(x1)},{_fmt(y0)},{_fmt(y1)})", (_DELTA + hs,))


def strip(x0, x1):
    """Birth band [x0, x1] x R_+ intersected with Delta."""
    return RegionSpec(f"strip({_fmt(x0)},{_fmt(x1)})",
                      (_DELTA + (HalfPlane(1.0, 0.0, -x0), HalfPlane(-1.0, 0.0, x1)),))


def i_t(t):
    return RegionSpec(f"it({_fmt(t)})", (_DELTA + (HalfPlane(-1.0, 0.0, t),),))


def max_lifespan_bound(k, m, t):
    """T(Delta_{k,m} cap I_t) = (pi_{k,m} - 1) t."""
    return (pi_km(k, m) - 1.0) * t


def j_t(t, k, p, slack=0.0):
    """Points of Delta_{k,p} cap I_t whose lifespan exceeds T(Delta_{k,p-1} cap I_t) + slack."""
    thresh = max_lifespan_bound(k, p - 1, t) + slack
    hs = (HalfPlane(pi_km(k, p), -1.0, 0.0), HalfPlane(-1.0, 0.0, t),
          HalfPlane(-1.0, 1.0, -thresh, True))
    tag = f"jt({_fmt(t)},{k},{p})" if slack == 0 else f"jt({_fmt(t)},{k},{p},{_fmt(slack)})"
    return RegionSpec(tag, (_DELTA + hs,))


def intersect(*regions):
    pieces = tuple(a + b for a, b in itertools.product(*(r.pieces for r in regions[:2])))
    out = RegionSpec("&".join(_wrap(r.expr, "|") for r in regions[:2]), pieces)
    return intersect(out, *regions[2:]) if len(regions) > 2 else out


def union(*regions):
    return RegionSpec("|".join(r.expr for r in regions), tuple(p for r in regions for p in r.pieces))


def shrink(region, margin):
    """Inner parallel set of each convex piece at distance ``margin``."""
    pieces = tuple(tuple(HalfPlane(h.a, h.b, h.c - margin * math.hypot(h.a, h.b), h.strict) for h in piece)
                   for piece in region.pieces)
    return RegionSpec(f"shrink({_fmt(margin)},{region.expr})", pieces)


def _wrap(expr, op):
    return f"({expr})" if op in expr else expr


_CALL = re.compile(r"^([a-z]+)\((.*)\)$")


def parse_region(text):
    """Parse ``expr`` strings: '|' (union) binds looser than '&' (intersection)."""
    text = text.strip()
    parts = _split(text, "|")
    if len(parts) > 1:
        return union(*(parse_region(p) for p in parts))
    parts = _split(text, "&")
    if len(parts) > 1:
        return intersect(*(parse_region(p) for p in parts))
    if text.startswith("(") and text.endswith(")") and _split(text[1:-1], "|") is not None:
        return parse_region(text[1:-1])
    m = _CALL.match(text)
    if not m and text == "delta":
        return delta()
    if not m:
        raise ValueError(f"cannot parse region {text!r}")
    name, args = m.group(1), m.group(2)
    if name == "shrink":
        margin, rest = args.split(",", 1)
        return shrink(parse_region(rest), float(margin))
    vals = [float(a) for a in args.split(",")] if args else []
    ints = lambda vs: [int(v) for v in vs]
    if name == "rect":
        return rect(*vals)
    if name == "strip":
        return strip(*vals)
    if name == "dkm":
        return delta_km(*ints(vals))
    if name == "bkm":
        return bkm(*ints(vals))
    if name == "it":
        return i_t(vals[0])
    if name == "jt":
        return j_t(vals[0], int(vals[1]), int(vals[2]), *(vals[3:]))
    raise ValueError(f"unknown region {name!r}")


def _split(text, op):
    depth, start, out = 0, 0, []
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == op and depth == 0:
            out.append(text[start:i])
            start = i + 1
    out.append(text[start:])
    return out


def region_contains(region: RegionSpec, point) -> bool:
    return bool(region.contains(point[0], point[1]))


def envelope_grid(region: RegionSpec, eps, extent=1e3):
    """Centers of the eps-grid cells whose centers lie in ``region``."""
    bb = region.bounds(extent)
    if bb is None:
        return np.empty((0, 2))
    x0, x1, y0, y1 = bb
    xs = np.arange(math.floor(x0 / eps), math.ceil(x1 / eps)) * eps + eps / 2
    ys = np.arange(math.floor(y0 / eps), math.ceil(y1 / eps)) * eps + eps / 2
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    keep = region.contains(gx, gy, tol=0.0)
    return np.stack([gx[keep], gy[keep]], axis=1)


# -- Monte Carlo mean measures -------------------------------------------------------

@dataclass
class LimitEstimate:
    value: float
    stderr: float
    samples: int
    acceptance_rate: float
    coefficient: float

    @property
    def rel_err(self):
        return self.stderr / self.value if self.value > 0 else math.inf


class RunningStats:
    """Mean and variance accumulator with a parallel merge."""

    def __init__(self):
        self.n, self.mean, self.m2 = 0, 0.0, 0.0

    def add_batch(self, values):
        values = np.asarray(values, dtype=float)
        other = RunningStats()
        other.n = len(values)
        if other.n:
            other.mean = float(values.mean())
            other.m2 = float(((values - other.mean) ** 2).sum())
        self.merge(other)

    def merge(self, other):
        n = self.n + other.n
        if n == 0:
            return self
        delta = other.mean - self.mean
        self.mean += delta * other.n / n
        self.m2 += other.m2 + delta * delta * self.n * other.n / n
        self.n = n
        return self

    @property
    def stderr(self):
        if self.n < 2:
            return 0.0
        return math.sqrt(self.m2 / (self.n - 1) / self.n)


def connected_unit(points):
    """Whether each configuration (B, m, d) is connected with edges < 2."""
    pts = np.asarray(points, dtype=float)
    B, m, _ = pts.shape
    adj = (((pts[:, :, None] - pts[:, None, :]) ** 2).sum(-1) < 4.0).astype(np.int64)
    reach = adj
    steps = 1
    while steps < m - 1:
        reach = (reach @ reach > 0).astype(np.int64)
        steps *= 2
    return reach[:, 0, :].all(axis=1)


@dataclass
class PalmPool:
    """Accepted draws of y with their persistence pairs, for one random stream."""
    k: int
    p: int
    d: int
    total: int
    box_halfwidth: float
    ys: np.ndarray            # (A, p-1, d) accepted configurations
    pairs: np.ndarray         # (P, 2) pairs of (0, y)
    owner: np.ndarray         # (P,) index into ys

    @property
    def box_volume(self):
        return (2.0 * self.box_halfwidth) ** (self.d * (self.p - 1))

    @property
    def accepted(self):
        return len(self.ys)

    def counts(self, region):
        """Pairs in ``region`` per accepted configuration."""
        inside = region.contains(self.pairs[:, 0], self.pairs[:, 1]) if len(self.pairs) else np.zeros(0, bool)
        return np.bincount(self.owner[inside], minlength=self.accepted).astype(float)


def _mu_oracle(points, k):
    return [(q.birth, q.death) for q in naive_diagram_oracle(points, k)]


@functools.lru_cache(maxsize=16)
def palm_pool(k, p, d, samples, seed) -> PalmPool:
    """Draw y uniformly in [-2(p-1), 2(p-1)]^{d(p-1)} and keep connected ones."""
    if p < k + 2:
        raise ValueError("p must be >= k+2")
    half = 2.0 * (p - 1)
    ys, pairs, owner = [], [], []
    done = 0
    batch = 0
    while done < samples:
        size = min(BATCH, samples - done)
        rng = make_rng([int(seed), 0, batch])
        y = rng.uniform(-half, half, size=(size, p - 1, d))
        full = np.concatenate([np.zeros((size, 1, d)), y], axis=1)
        ok = connected_unit(full)
        for cfg, yy in zip(full[ok], y[ok]):
            for pr in _mu_oracle(cfg, k):
                pairs.append(pr)
                owner.append(len(ys))
            ys.append(yy)
        done += size
        batch += 1
    return PalmPool(k, p, d, samples, half,
                    np.array(ys).reshape(-1, p - 1, d),
                    np.array(pairs, dtype=float).reshape(-1, 2),
                    np.array(owner, dtype=np.int64))


def _estimate(per_accepted, pool, coefficient):
    """MC estimate from per-accepted-sample integrand values (zeros elsewhere)."""
    stats = RunningStats()
    vals = np.zeros(pool.total)
    vals[:pool.accepted] = per_accepted
    for start in range(0, pool.total, BATCH):
        stats.add_batch(vals[start:start + BATCH])
    scale = coefficient * pool.box_volume
    return LimitEstimate(scale * stats.mean, scale * stats.stderr, pool.total,
                         pool.accepted / pool.total, coefficient)


def _check_pool(pool):
    if pool.accepted < MIN_ACCEPTED:
        raise InsufficientSamples(f"only {pool.accepted} accepted configurations (< {MIN_ACCEPTED})")


def heavy_coefficient(p, alpha, d):
    return sphere_area(d) / (math.factorial(p) * (alpha * p - d))


def mean_measure_heavy(A: RegionSpec, k, p, alpha, d, samples, seed) -> LimitEstimate:
    """Limiting Poisson mean measure of A, regularly varying tail."""
    if not alpha > d:
        raise ValueError("alpha must exceed d")
    pool = palm_pool(k, p, d, samples, seed)
    _check_pool(pool)
    return _estimate(pool.counts(A), pool, heavy_coefficient(p, alpha, d))


def exp_coefficient(p, d):
    return sphere_area(d) / math.factorial(p)


def _exp_weights(pool, c, seed, rho_mode):
    """Per-accepted weight of the exponential-tail integrand, rho and theta integrated out."""
    p, d = pool.p, pool.d
    rng = make_rng([int(seed), 1])
    theta = rng.standard_normal((pool.accepted, d))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    if math.isinf(c):
        return np.full(pool.accepted, 1.0 / p)
    u = 1.0 / c
    s = np.einsum("ad,aid->ai", theta, pool.ys)
    ssum = s.sum(axis=1)
    lower = np.maximum(0.0, -u * s.min(axis=1))
    if rho_mode == "integrate":
        # E[1{rho >= lower}] for rho ~ Exp(p), times the 1/p normalization
        return np.exp(-p * lower - u * ssum) / p
    rho = rng.exponential(1.0 / p, size=pool.accepted)
    return np.where(rho >= lower, np.exp(-u * ssum), 0.0) / p


def mean_measure_exp(A: RegionSpec, k, p, c, d, samples, seed, rho_mode="integrate") -> LimitEstimate:
    """Limiting Poisson mean measure of A, exponentially decaying tail.

    ``c`` is the limit of a(R)/M (``math.inf`` allowed).  With
    ``rho_mode='integrate'`` the radial variable is integrated in closed form
    given (theta, y); ``'sample'`` draws it from Exponential(rate p).
    """
    if not c > 0:
        raise ValueError("c must be in (0, inf]")
    pool = palm_pool(k, p, d, samples, seed)
    _check_pool(pool)
    w = _exp_weights(pool, c, seed, rho_mode)
    return _estimate(pool.counts(A) * w, pool, exp_coefficient(p, d))


def ball_union_mass(centers, r, tail: TailModel, samples, seed) -> LimitEstimate:
    """Density mass of a union of closed balls, by uniform sampling of its bounding box."""
    if not r > 0:
        raise ValueError("r must be positive")
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    lo, hi = c.min(axis=0) - r, c.max(axis=0) + r
    vol = float(np.prod(hi - lo))
    rng = make_rng(seed)
    stats = RunningStats()
    done = 0
    while done < samples:
        size = min(BATCH, samples - done)
        z = lo + (hi - lo) * rng.random((size, c.shape[1]))
        inside = (((z[:, None, :] - c[None]) ** 2).sum(-1) <= r * r).any(axis=1)
        stats.add_batch(np.where(inside, tail.density_at(z), 0.0) * vol)
        done += size
    return LimitEstimate(stats.mean, stats.stderr, samples, 1.0, vol)


def _union_mass_batch(centers, r, tail, inner, rng):
    """Vectorized union-of-balls mass for a batch of configurations (B, m, d)."""
    B, m, d = centers.shape
    lo = centers.min(axis=1) - r
    hi = centers.max(axis=1) + r
    vol = np.prod(hi - lo, axis=1)
    z = lo[:, None, :] + (hi - lo)[:, None, :] * rng.random((B, inner, d))
    inside = (((z[:, :, None, :] - centers[:, None, :, :]) ** 2).sum(-1) <= r * r).any(axis=2)
    return vol * np.where(inside, tail.density_at(z), 0.0).mean(axis=1)


def mean_measure_finite(plan: ScalingPlan, A: RegionSpec, m, samples, seed, inner=1024,
                        isolated=True) -> LimitEstimate:
    """Expected count of scaled pairs in A from size-m components at finite n.

    Palm formula: n^m/m! times the integral of h_R g_M mu(MA) prod f, with the
    isolation factor exp(-n Q_{2M}) when ``isolated``.
    """
    tail, n, M, R, k, d = plan.tail, plan.n, plan.M, plan.R, plan.k, plan.d
    pool = palm_pool(k, m, d, samples, seed)
    _check_pool(pool)
    counts = pool.counts(A)
    rng = make_rng([int(seed), 2])
    S = float(tail.survival(np.array([R]))[0])
    vals = np.zeros(pool.accepted)
    idx = np.flatnonzero(counts > 0)
    for start in range(0, len(idx), 512):
        sel = idx[start:start + 512]
        B = len(sel)
        rho = _conditional_radius(tail, R, B, rng)
        theta = rng.standard_normal((B, d))
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
        x1 = rho[:, None] * theta
        others = x1[:, None, :] + M * pool.ys[sel]
        far = (np.linalg.norm(others, axis=2) >= R).all(axis=1)
        w = np.prod(tail.density_at(others), axis=1) * far
        if isolated:
            pts = np.concatenate([x1[:, None, :], others], axis=1)
            w = w * np.exp(-n * _union_mass_batch(pts, 2.0 * M, tail, inner, rng))
        vals[sel] = counts[sel] * w
    coef = n ** m / math.factorial(m) * S * M ** (d * (m - 1))
    return _estimate(vals, pool, coef)


def _conditional_radius(tail, R, size, rng):
    from .model import _radial_table
    table = _radial_table(tail)
    S = float(table.survival(np.array([R]))[0])
    return np.maximum(table.inverse(S * (1.0 - rng.random(size))), R)
