"""Persistence pairs by boundary-matrix reduction, and crackle diagrams.

A crackle diagram collects the k-th persistence pairs generated by connected
components of the radius-M Čech complex lying entirely in the layer
|x| >= R.  Pairs are stored in raw radii and divided by M once for the
scaled view.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDim, TooLarge
from .geom import Filtration, cech_filtration, components_at
from .model import PointCloud, ScalingPlan

M_CAP = 16
# pairs with death - birth below this fraction of death count as zero persistence
ZERO_PERSISTENCE_RTOL = 1e-12


class Variant(str, enum.Enum):
    ISOLATED = "Isolated"
    CONNECTED_ONLY = "ConnectedOnly"


@dataclass(frozen=True)
class PersistencePair:
    birth: float
    death: float
    dim: int
    component_size: int | None = None
    component_id: int | None = None

    @property
    def lifespan(self):
        return self.death - self.birth


def _is_zero(birth, death):
    return death - birth <= ZERO_PERSISTENCE_RTOL * abs(death)


def reduce(filtration: Filtration, k: int) -> list:
    """Dimension-k persistence pairs of a filtration (mod-2 column reduction).

    Only columns of dimension k+1 are reduced; unpaired k-simplices (essential
    classes) and zero-persistence pairs are dropped.
    """
    if filtration.max_dim <= k:
        raise InsufficientDim(f"filtration max_dim={filtration.max_dim} needs to exceed k={k}")
    simplices = filtration.simplices
    index = filtration.index()
    pivots = {}
    pairs = []
    for s in simplices:
        if s.dim != k + 1:
            continue
        col = 0
        for face in itertools.combinations(s.vertices, k + 1):
            col |= 1 << index[face]
        while col:
            low = col.bit_length() - 1
            other = pivots.get(low)
            if other is None:
                pivots[low] = col
                birth = simplices[low].value
                if not _is_zero(birth, s.value):
                    pairs.append(PersistencePair(birth, s.value, k))
                break
            col ^= other
    return pairs


@dataclass
class CrackleDiagram:
    plan: ScalingPlan
    pairs: list
    variant: Variant = Variant.ISOLATED
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def raw(self):
        return np.array([(p.birth, p.death) for p in self.pairs], dtype=float).reshape(-1, 2)

    def scaled(self):
        return self.raw() / self.plan.M

    def sizes(self):
        return np.array([p.component_size for p in self.pairs], dtype=int)

    def scaled_pairs(self, m=None):
        """Scaled pairs, optionally restricted to component sizes in ``m``."""
        xy = self.scaled()
        if m is None:
            return xy
        return xy[size_mask(self.sizes(), m)]


def size_mask(sizes, m):
    """Boolean mask for component sizes matching ``m`` (int, container, or None)."""
    sizes = np.asarray(sizes, dtype=int)
    if m is None:
        return np.ones(sizes.shape, dtype=bool)
    if isinstance(m, (int, np.integer)):
        return sizes == m
    if isinstance(m, range):
        return (sizes >= m.start) & (sizes < m.stop) if m.step == 1 else np.isin(sizes, list(m))
    return np.isin(sizes, list(m))


def _diagram(points, labels, keep, plan, variant, m_cap, extra):
    k = plan.k
    pairs = []
    skipped = []
    for cid in keep:
        members = np.flatnonzero(labels == cid)
        m = len(members)
        if m < k + 2:
            continue
        if m > m_cap:
            skipped.append(m)
            continue
        filt = cech_filtration(points[members], k + 1)
        for pr in reduce(filt, k):
            pairs.append(PersistencePair(pr.birth, pr.death, k, m, int(cid)))
    diag = {"components_kept": len(keep), "skipped_components": len(skipped),
            "skipped_sizes": skipped}
    diag.update(extra)
    return CrackleDiagram(plan, pairs, variant, diag)


def crackle_diagram(cloud: PointCloud, plan: ScalingPlan, m_cap=M_CAP) -> CrackleDiagram:
    """Pairs from components of C_M(P_n) lying entirely in |x| >= R (isolated)."""
    R, M = plan.R, plan.M
    norms = cloud.norms
    # a point with |x| < R - 2M is never within 2M of the layer, so it cannot
    # touch (and so cannot disqualify) any component in the layer
    near = norms >= R - 2.0 * M
    pts = cloud.points[near]
    part = components_at(pts, M, R)
    keep = sorted(part.isolated_far)
    extra = {"cloud_size": len(cloud), "far_points": int((norms >= R).sum())}
    return _diagram(pts, part.labels, keep, plan, Variant.ISOLATED, m_cap, extra)


def crackle_diagram_tilde(cloud: PointCloud, plan: ScalingPlan, m_cap=M_CAP) -> CrackleDiagram:
    """Pairs from components of C_M(P_{n,R}), ignoring points inside B(0; R)."""
    far = cloud.norms >= plan.R
    pts = cloud.points[far]
    part = components_at(pts, plan.M)
    keep = sorted(part.sizes)
    extra = {"cloud_size": len(cloud), "far_points": int(far.sum())}
    return _diagram(pts, part.labels, keep, plan, Variant.CONNECTED_ONLY, m_cap, extra)


# -- brute-force verifier ---------------------------------------------------------

def _brute_meb_values(pts):
    """MEB radius of every nonempty subset (bitmask -> radius) by enumeration.

    Candidate centers are circumcenters of all subsets of size <= d+1; the
    enclosing radius of a subset is minimized over candidates it contains.
    """
    n, d = pts.shape
    cand_masks, centers = [], []
    for s in range(1, min(n, d + 1) + 1):
        for sub in itertools.combinations(range(n), s):
            q = pts[list(sub)]
            if s == 1:
                c = q[0]
            else:
                A = q[1:] - q[0]
                lam = np.linalg.lstsq(A @ A.T, 0.5 * (A * A).sum(axis=1), rcond=None)[0]
                c = q[0] + lam @ A
            cand_masks.append(sum(1 << i for i in sub))
            centers.append(c)
    cand_masks = np.array(cand_masks)
    dist = np.sqrt(((np.array(centers)[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
    values = {}
    for mask in range(1, 1 << n):
        members = [i for i in range(n) if mask >> i & 1]
        if len(members) == 1:
            values[mask] = 0.0
            continue
        ok = (cand_masks & ~mask) == 0
        values[mask] = float(dist[ok][:, members].max(axis=1).min())
    return values


def naive_diagram_oracle(points, k):
    """Independent verifier: full subset complex, dense GF(2) reduction."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n > 8:
        raise TooLarge(f"naive oracle accepts at most 8 points, got {n}")
    if n == 0:
        return []
    radius = _brute_meb_values(pts)
    masks = sorted(radius, key=lambda m: bin(m).count("1"))
    value = {}
    for m in masks:
        faces = [m & ~(1 << i) for i in range(n) if m >> i & 1 and m & ~(1 << i)]
        value[m] = max([radius[m]] + [value[f] for f in faces])
    order = sorted(value, key=lambda m: (value[m], bin(m).count("1"),
                                         [i for i in range(n) if m >> i & 1]))
    pos = {m: i for i, m in enumerate(order)}
    N = len(order)
    D = np.zeros((N, N), dtype=np.uint8)
    for j, m in enumerate(order):
        if bin(m).count("1") > 1:
            for i in range(n):
                if m >> i & 1:
                    D[pos[m & ~(1 << i)], j] = 1

    def low(col):
        nz = np.flatnonzero(col)
        return nz[-1] if len(nz) else -1

    owner = {}
    pairs = []
    for j in range(N):
        l = low(D[:, j])
        while l >= 0 and l in owner:
            D[:, j] ^= D[:, owner[l]]
            l = low(D[:, j])
        if l >= 0:
            owner[l] = j
            if bin(order[l]).count("1") == k + 1:
                b, dth = value[order[l]], value[order[j]]
                if not _is_zero(b, dth):
                    pairs.append(PersistencePair(b, dth, k))
    return pairs


def lifespan_max(diagram, t):
    """Largest death - birth among scaled pairs with birth <= t (0 if none)."""
    if not t > 0:
        raise ValueError("t must be positive")
    xy = diagram.scaled() if isinstance(diagram, CrackleDiagram) else np.asarray(diagram, float).reshape(-1, 2)
    sel = xy[xy[:, 0] <= t]
    return float((sel[:, 1] - sel[:, 0]).max()) if len(sel) else 0.0
