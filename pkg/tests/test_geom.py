import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from crackle.errors import BudgetExceeded
from crackle.geom import (UnionFind, cech_filtration, close_pairs, components_at, meb, meb_radius,
                          restrict_far)
from crackle.model import PointCloud


def brute_meb(pts):
    """Min over circumcenters of all subsets of the max distance to the points."""
    n, d = pts.shape
    best = math.inf
    for s in range(1, min(n, d + 1) + 1):
        for sub in itertools.combinations(range(n), s):
            q = pts[list(sub)]
            if s == 1:
                c = q[0]
            else:
                A = q[1:] - q[0]
                lam = np.linalg.lstsq(A @ A.T, 0.5 * (A * A).sum(1), rcond=None)[0]
                c = q[0] + lam @ A
            best = min(best, np.sqrt(((pts - c) ** 2).sum(1)).max())
    return best


def test_meb_examples():
    assert meb_radius([[3.0, 4.0]]) == 0.0
    tri = np.array([[0, 0], [2, 0], [1, math.sqrt(3)]])
    assert meb_radius(tri) == pytest.approx(2 / math.sqrt(3), abs=1e-12)
    assert meb_radius([[0, 0], [4, 0], [1, 0.1]]) == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_meb_matches_brute_force(d):
    rng = np.random.default_rng(d)
    worst = 0.0
    for _ in range(500):
        m = rng.integers(1, 7)
        pts = rng.normal(size=(m, d)) * rng.uniform(0.1, 10)
        worst = max(worst, abs(meb(pts)[1] - brute_meb(pts)))
    assert worst < 1e-9


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-100, 100)))
def test_meb_encloses(pts):
    c, r = meb(pts)
    assert (np.sqrt(((pts - c) ** 2).sum(1)) <= r * (1 + 1e-9) + 1e-9).all()


def test_filtration_two_points():
    f = cech_filtration([[0, 0], [2, 0]], 1)
    assert [(s.vertices, s.value) for s in f.simplices] == [((0,), 0.0), ((1,), 0.0), ((0, 1), 1.0)]


def test_filtration_unit_square():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    f = cech_filtration(sq, 2)
    by_dim = {k: [s for s in f.simplices if s.dim == k] for k in range(3)}
    assert len(by_dim[0]) == 4 and len(by_dim[1]) == 6 and len(by_dim[2]) == 4
    edges = sorted(s.value for s in by_dim[1])
    assert edges == pytest.approx([0.5] * 4 + [math.sqrt(2) / 2] * 2)
    for s in by_dim[2]:
        assert s.value == pytest.approx(brute_meb(sq[list(s.vertices)]))


def test_filtration_cap_zero():
    f = cech_filtration(np.random.default_rng(0).normal(size=(6, 2)), 2, value_cap=0.0)
    assert all(s.dim == 0 for s in f.simplices) and len(f) == 6


def test_filtration_budget():
    with pytest.raises(BudgetExceeded):
        cech_filtration(np.zeros((30, 2)) + np.arange(30)[:, None], 3, budget=100)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 7), st.integers(2, 3)), elements=st.floats(-10, 10)),
       st.sampled_from([math.inf, 1.0, 3.0]))
def test_filtration_is_valid(pts, cap):
    f = cech_filtration(pts, 2, value_cap=cap)
    value = {s.vertices: s.value for s in f.simplices}
    pos = {s.vertices: i for i, s in enumerate(f.simplices)}
    for s in f.simplices:
        if s.dim == 1:
            i, j = s.vertices
            assert s.value == 0.5 * math.sqrt(((pts[i] - pts[j]) ** 2).sum())
        for face in itertools.combinations(s.vertices, s.dim):
            if face:
                assert value[face] <= s.value and pos[face] < pos[s.vertices]
    if math.isinf(cap):
        n = len(pts)
        assert len(f) == sum(math.comb(n, j) for j in range(1, 4))


def naive_components(pts, M):
    n = len(pts)
    uf = UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            if np.sqrt(((pts[i] - pts[j]) ** 2).sum()) < 2 * M:
                uf.union(i, j)
    return [uf.find(i) for i in range(n)]


def same_partition(a, b):
    return all((a[i] == a[j]) == (b[i] == b[j]) for i in range(len(a)) for j in range(len(a)))


def test_components_match_naive():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(0, 120))
        pts = rng.uniform(-10, 10, size=(n, 2))
        part = components_at(pts, 0.7)
        assert sum(part.sizes.values()) == n
        assert same_partition(list(part.labels), naive_components(pts, 0.7))


def test_components_large_cloud():
    pts = np.random.default_rng(2).uniform(-20, 20, size=(500, 2))
    assert same_partition(list(components_at(pts, 1.0).labels), naive_components(pts, 1.0))


def test_components_examples():
    assert components_at(np.array([[0, 0], [1.9, 0]]), 1.0).count == 1
    assert components_at(np.array([[0, 0], [3.9, 0]]), 1.0).count == 2
    line = np.array([[0, 0], [1.9, 0], [3.8, 0], [10, 0]])
    part = components_at(line, 1.0)
    assert sorted(part.sizes.values()) == [1, 3]
    assert part.labels[0] == part.labels[1] == part.labels[2] != part.labels[3]
    assert components_at(np.empty((0, 2)), 1.0).count == 0


def test_close_pairs_strict():
    pts = np.array([[0, 0], [2, 0], [1.999, 0.0]])
    assert sorted(map(tuple, close_pairs(pts, 2.0).tolist())) == [(0, 2), (1, 2)]


def test_isolated_far():
    pts = np.array([[30.0, 0], [31.0, 0], [5.0, 0], [6.5, 0]])
    part = components_at(pts, 1.0, R=10.0)
    assert {tuple(part.members(c)) for c in part.isolated_far} == {(0, 1)}


def test_restrict_far():
    cloud = PointCloud(np.array([[1.0, 0], [5, 0], [0, 3], [-7, 0]]))
    assert restrict_far(cloud, 0.0).points.tolist() == cloud.points.tolist()
    assert len(restrict_far(cloud, 100.0)) == 0
    assert restrict_far(cloud, 3.0).points.tolist() == [[5, 0], [0, 3], [-7, 0]]
