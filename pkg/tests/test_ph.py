import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from crackle.errors import InsufficientDim, TooLarge
from crackle.geom import cech_filtration
from crackle.limits import b_km, pi_km
from crackle.model import PointCloud, TailModel, make_plan, sample_cloud
from crackle.ph import (CrackleDiagram, PersistencePair, crackle_diagram, crackle_diagram_tilde,
                        lifespan_max, naive_diagram_oracle, reduce, size_mask)

SQUARE = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], float)
EQUI = np.array([[0, 0], [2, 0], [1, math.sqrt(3)]])
OBTUSE = np.array([[0, 0], [4, 0], [1, 0.1]])
PLAN = make_plan(TailModel.pareto(3.0, 2), 1, 3, 1e4, 1.0)


def pairs_of(pts, k=1):
    return sorted((p.birth, p.death) for p in reduce(cech_filtration(pts, k + 1), k))


def oracle_of(pts, k=1):
    return sorted((p.birth, p.death) for p in naive_diagram_oracle(pts, k))


def close(a, b, tol=1e-12):
    return len(a) == len(b) and (not a or np.abs(np.array(a) - np.array(b)).max() < tol)


def test_reduce_examples():
    assert close(pairs_of(SQUARE), [(1.0, math.sqrt(2))])
    assert close(pairs_of(EQUI), [(1.0, 2 / math.sqrt(3))])
    assert pairs_of(OBTUSE) == []


def test_reduce_needs_higher_dim():
    with pytest.raises(InsufficientDim):
        reduce(cech_filtration(SQUARE, 1), 1)


def test_oracle_examples():
    assert close(oracle_of(SQUARE), [(1.0, math.sqrt(2))])
    assert oracle_of(np.array([[0, 0], [1, 0], [2.5, 0]])) == []
    s = 1.3
    ang = 2 * math.pi * np.arange(5) / 5
    circ = s / (2 * math.sin(math.pi / 5))
    pent = circ * np.stack([np.cos(ang), np.sin(ang)], 1)
    assert close(oracle_of(pent), [(s / 2, circ)])
    with pytest.raises(TooLarge):
        naive_diagram_oracle(np.zeros((9, 2)), 1)


def test_pipeline_matches_oracle():
    rng = np.random.default_rng(99)
    for _ in range(200):
        pts = rng.uniform(-2, 2, size=(int(rng.integers(3, 8)), 2))
        a, b = pairs_of(pts), oracle_of(pts)
        assert len(a) == len(b)
        if a:
            assert np.abs(np.array(a) - np.array(b)).max() < 1e-9


def test_pipeline_matches_oracle_h2():
    rng = np.random.default_rng(5)
    for _ in range(40):
        pts = rng.uniform(-2, 2, size=(int(rng.integers(4, 7)), 3))
        a, b = pairs_of(pts, 2), oracle_of(pts, 2)
        assert len(a) == len(b)
        if a:
            assert np.abs(np.array(a) - np.array(b)).max() < 1e-9


def test_pairs_are_in_delta_with_positive_persistence():
    rng = np.random.default_rng(3)
    for _ in range(50):
        for b, d in pairs_of(rng.normal(size=(7, 2))):
            assert 0 <= b < d


def far_triangle(scale=0.9):
    center = np.array([2 * PLAN.R, 0.0])
    tri = EQUI - EQUI.mean(0)
    return center + tri * scale * PLAN.M


def test_crackle_diagram_triangle():
    cloud = PointCloud(far_triangle())
    dg = crackle_diagram(cloud, PLAN)
    assert len(dg) == 1 and dg.sizes().tolist() == [3]
    np.testing.assert_allclose(dg.scaled(), [[0.9, 0.9 * 2 / math.sqrt(3)]], atol=1e-12)


def test_isolation_broken_by_inner_point():
    tri = far_triangle()
    pts = np.vstack([tri, [[PLAN.R - 0.5, 0.0]]])
    # move the triangle just outside R, within 2M of the inner point
    shift = np.array([PLAN.R + 0.6 - tri[:, 0].min(), 0.0])
    pts[:3] += shift
    assert np.linalg.norm(pts[3]) < PLAN.R <= np.linalg.norm(pts[:3], axis=1).min()
    assert np.linalg.norm(pts[:3] - pts[3], axis=1).min() < 2 * PLAN.M
    cloud = PointCloud(pts)
    assert len(crackle_diagram(cloud, PLAN)) == 0
    assert len(crackle_diagram_tilde(cloud, PLAN)) == 1


def test_empty_far_cloud():
    cloud = PointCloud(np.random.default_rng(0).uniform(-3, 3, size=(50, 2)))
    assert len(crackle_diagram(cloud, PLAN)) == 0
    assert len(crackle_diagram_tilde(cloud, PLAN)) == 0


@pytest.fixture(scope="module")
def clouds():
    tail = TailModel.pareto(3.0, 2)
    return [sample_cloud(tail, 1e4, seed=s, r_min=PLAN.R - 2.0) for s in range(40)]


def test_isolated_subset_of_tilde(clouds):
    for c in clouds:
        iso = sorted(map(tuple, crackle_diagram(c, PLAN).raw().tolist()))
        til = sorted(map(tuple, crackle_diagram_tilde(c, PLAN).raw().tolist()))
        for p in iso:
            assert p in til


def test_region_confinement_and_count_bound(clouds):
    for c in clouds:
        dg = crackle_diagram_tilde(c, PLAN)
        per_component = {}
        for pr, (b, d) in zip(dg.pairs, dg.scaled()):
            m = pr.component_size
            per_component[pr.component_id] = per_component.get(pr.component_id, 0) + 1
            if m in (3, 4):
                assert d <= pi_km(1, m) * b + 1e-9
                assert b <= b_km(1, m) + 1e-9
            assert per_component[pr.component_id] <= math.comb(m, 2)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 10.0))
def test_scale_equivariance(lam):
    pts = far_triangle(0.95)
    pts = np.vstack([pts, pts[0] + [0.0, 1.5]])
    base = crackle_diagram(PointCloud(pts), PLAN)
    plan2 = make_plan(PLAN.tail, 1, 3, 1e4, 1.0)
    plan2 = type(plan2)(plan2.tail, 1, 3, plan2.n, lam * PLAN.M, lam * PLAN.R)
    scaled = crackle_diagram(PointCloud(lam * pts), plan2)
    np.testing.assert_allclose(scaled.raw(), lam * base.raw(), rtol=1e-9)
    np.testing.assert_allclose(scaled.scaled(), base.scaled(), rtol=1e-9)


def test_size_mask():
    sizes = np.array([3, 4, 5, 3])
    assert size_mask(sizes, 3).tolist() == [True, False, False, True]
    assert size_mask(sizes, range(3, 5)).tolist() == [True, True, False, True]
    assert size_mask(sizes, {5}).tolist() == [False, False, True, False]
    assert size_mask(sizes, None).all()


def test_lifespan_max():
    assert lifespan_max(np.empty((0, 2)), 1.0) == 0.0
    pairs = np.array([[0.5, 0.9], [2.0, 3.0]])
    assert lifespan_max(pairs, 1.0) == pytest.approx(0.4)
    assert lifespan_max(pairs, 2.0) == pytest.approx(1.0)
    dg = CrackleDiagram(PLAN, [PersistencePair(0.5, 0.9, 1, 3), PersistencePair(2.0, 3.0, 1, 4)])
    assert lifespan_max(dg, 2.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        lifespan_max(pairs, 0.0)
