"""Čech filtrations with smallest-enclosing-ball values, and radius-M components."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import BudgetExceeded
from .model import PointCloud

SIMPLEX_BUDGET = 2_000_000
_EXCESS_RTOL = 1e-12


class Simplex(NamedTuple):
    vertices: tuple
    dim: int
    value: float


@dataclass
class Filtration:
    simplices: list
    max_dim: int
    point_count: int

    def __len__(self):
        return len(self.simplices)

    def index(self):
        """Map vertex tuple -> position in filtration order."""
        return {s.vertices: i for i, s in enumerate(self.simplices)}


# -- smallest enclosing ball -------------------------------------------------

def _circumball(support):
    """Smallest ball with every support point on its boundary."""
    p0 = support[0]
    if len(support) == 1:
        return p0.copy(), 0.0
    A = np.array([q - p0 for q in support[1:]])
    G = A @ A.T
    rhs = 0.5 * np.einsum("ij,ij->i", A, A)
    try:
        lam = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        lam = np.linalg.lstsq(G, rhs, rcond=None)[0]
    c = p0 + lam @ A
    return c, float(np.sqrt(((c - p0) ** 2).sum()))


def _mtf(points, end, support, ball, dim):
    """Move-to-front recursion over points[:end] with a fixed support set."""
    if len(support) == dim + 1:
        return ball
    i = 0
    while i < end:
        p = points[i]
        c, r = ball
        if ((p - c) ** 2).sum() > r * r * (1.0 + _EXCESS_RTOL) + 1e-300:
            new_support = support + [p]
            ball = _mtf(points, i, new_support, _circumball(new_support), dim)
            # move the violator to the front
            points.insert(0, points.pop(i))
        i += 1
    return ball


def _three_point_radius(p, q, s):
    a2 = float(((q - s) ** 2).sum())
    b2 = float(((p - s) ** 2).sum())
    c2 = float(((p - q) ** 2).sum())
    m2 = max(a2, b2, c2)
    if 2.0 * m2 >= a2 + b2 + c2:
        # right or obtuse: the diametral ball of the longest edge
        return 0.5 * math.sqrt(m2)
    area16 = 2.0 * (a2 * b2 + b2 * c2 + c2 * a2) - (a2 * a2 + b2 * b2 + c2 * c2)
    return math.sqrt(a2 * b2 * c2 / area16)


def meb(points):
    """Center and radius of the smallest ball enclosing ``points``."""
    pts = [np.asarray(p, dtype=float) for p in points]
    if not pts:
        raise ValueError("meb of an empty set")
    dim = pts[0].shape[0]
    c, r = _mtf(pts, len(pts), [], (pts[0].copy(), 0.0), dim)
    r = max(r, max(float(np.sqrt(((p - c) ** 2).sum())) for p in pts))
    return c, r


def meb_radius(points) -> float:
    """Radius of the smallest enclosing ball (closed-ball Čech entry radius)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    m = pts.shape[0]
    if m == 1:
        return 0.0
    if m == 2:
        return 0.5 * float(np.sqrt(((pts[0] - pts[1]) ** 2).sum()))
    if m == 3:
        return _three_point_radius(pts[0], pts[1], pts[2])
    return meb(pts)[1]


# -- filtration -----------------------------------------------------------------

def _cliques(adj, size_max):
    """All cliques (as sorted tuples) of size 2..size_max in a graph."""
    out = []

    def extend(clique, cands):
        out.append(clique)
        if len(clique) == size_max:
            return
        for v in cands:
            extend(clique + (v,), [w for w in cands if w > v and w in adj[v]])

    for u in range(len(adj)):
        for v in sorted(adj[u]):
            if v > u:
                extend((u, v), [w for w in sorted(adj[u] & adj[v]) if w > v])
    return out


def cech_filtration(points, max_dim, value_cap=math.inf, budget=SIMPLEX_BUDGET) -> Filtration:
    """Čech filtration up to ``max_dim`` with smallest-enclosing-ball values.

    Simplices with value above ``value_cap`` are omitted.  A simplex value is
    never below the values of its facets.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if max_dim < 0:
        raise ValueError("max_dim must be >= 0")
    if not value_cap >= 0:
        raise ValueError("value_cap must be non-negative")
    diff = pts[:, None, :] - pts[None, :, :]
    half = 0.5 * np.sqrt((diff ** 2).sum(axis=-1))

    if max_dim == 0 or n < 2:
        groups = []
    elif math.isinf(value_cap):
        groups = [c for size in range(2, max_dim + 2) for c in itertools.combinations(range(n), size)]
    else:
        adj = [set(np.flatnonzero(half[i] <= value_cap).tolist()) - {i} for i in range(n)]
        groups = _cliques(adj, max_dim + 1)

    if n + len(groups) > budget:
        raise BudgetExceeded(f"{n + len(groups)} simplices exceed budget {budget}")

    values = {(i,): 0.0 for i in range(n)}
    for verts in sorted(groups, key=len):
        if len(verts) == 2:
            v = float(half[verts[0], verts[1]])
        else:
            v = meb_radius(pts[list(verts)])
            facet_max = max(values.get(f, math.inf) for f in itertools.combinations(verts, len(verts) - 1))
            if math.isinf(facet_max):
                continue
            v = max(v, facet_max)
        if v <= value_cap:
            values[verts] = v
    simplices = [Simplex(vs, len(vs) - 1, v) for vs, v in values.items()]
    simplices.sort(key=lambda s: (s.value, s.dim, s.vertices))
    return Filtration(simplices, max_dim, n)


# -- connectivity at radius M ----------------------------------------------------

class UnionFind:
    def __init__(self, size):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, a):
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


@dataclass
class ComponentPartition:
    labels: np.ndarray
    sizes: dict
    isolated_far: set = field(default_factory=set)

    @property
    def count(self):
        return len(self.sizes)

    def members(self, cid):
        return np.flatnonzero(self.labels == cid)

    def groups(self):
        """Component id -> member indices, in id order."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum([0] + [self.sizes[c] for c in range(self.count)])
        return {c: order[bounds[c]:bounds[c + 1]] for c in range(self.count)}


def close_pairs(points, radius):
    """Index pairs (i < j) with |x_i - x_j| < radius, by uniform grid hashing."""
    pts = np.asarray(points, dtype=float)
    n, d = pts.shape if pts.ndim == 2 else (0, 0)
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    keys = np.floor(pts / radius).astype(np.int64)
    cells = {}
    for i, key in enumerate(map(tuple, keys)):
        cells.setdefault(key, []).append(i)
    offsets = list(itertools.product((-1, 0, 1), repeat=d))
    r2 = radius * radius
    found = []
    for key, idx in cells.items():
        a = np.asarray(idx)
        for off in offsets:
            nb = tuple(k + o for k, o in zip(key, off))
            # each unordered cell pair is visited once
            if nb < key or nb not in cells:
                continue
            b = np.asarray(cells[nb])
            d2 = ((pts[a][:, None, :] - pts[b][None, :, :]) ** 2).sum(axis=-1)
            close = d2 < r2
            if nb == key:
                close &= a[:, None] < b[None, :]
            ii, jj = np.nonzero(close)
            if len(ii):
                found.append(np.stack([np.minimum(a[ii], b[jj]), np.maximum(a[ii], b[jj])], axis=1))
    if not found:
        return np.empty((0, 2), dtype=np.int64)
    return np.concatenate(found)


def _partition(n, pairs):
    uf = UnionFind(n)
    for i, j in pairs.tolist():
        uf.union(i, j)
    roots = [uf.find(i) for i in range(n)]
    ids = {}
    labels = np.fromiter((ids.setdefault(r, len(ids)) for r in roots), dtype=np.int64, count=n)
    sizes = dict(zip(*np.unique(labels, return_counts=True))) if n else {}
    return labels, {int(c): int(s) for c, s in sizes.items()}


def components_at(cloud, M, R=None) -> ComponentPartition:
    """Connected components of the radius-M Čech complex (edges of length < 2M).

    With ``R`` given, ``isolated_far`` holds the components lying entirely in
    the layer |x| >= R.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    n = pts.shape[0]
    labels, sizes = _partition(n, close_pairs(pts, 2.0 * M))
    far = set()
    if R is not None and n:
        inner = labels[np.linalg.norm(pts, axis=1) < R]
        far = set(sizes) - set(inner.tolist())
    return ComponentPartition(labels, sizes, far)


def restrict_far(cloud: PointCloud, R) -> PointCloud:
    """Points with |x| >= R, order preserved."""
    if R < 0:
        raise ValueError("R must be non-negative")
    keep = cloud.norms >= R
    return PointCloud(cloud.points[keep], seed=cloud.seed, intensity_n=cloud.intensity_n,
                      r_min=max(cloud.r_min, R))
