"""Statistical harness: repeated crackle trials and the tests run on them."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateTest, EmptyRegion, InsufficientSamples, InsufficientSpread
from .limits import LimitEstimate, RegionSpec, envelope_grid
from .model import ScalingPlan, sample_cloud, trial_seed
from .ph import crackle_diagram, crackle_diagram_tilde, size_mask

SIGNIFICANCE = 0.01
MIN_EXPECTED = 5.0
MIN_LAMBDA = 0.05
MAX_REL_ERR = 0.05


@dataclass
class TrialRecord:
    index: int
    seed: int
    pairs: np.ndarray          # (N, 2) scaled pairs, isolated variant
    sizes: np.ndarray
    tilde_pairs: np.ndarray    # (N', 2) scaled pairs, connected-only variant
    tilde_sizes: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def select(self, m=None, tilde=False):
        xy, sz = (self.tilde_pairs, self.tilde_sizes) if tilde else (self.pairs, self.sizes)
        return xy[size_mask(sz, m)]

    def to_dict(self):
        return {"index": self.index, "seed": self.seed,
                "pairs": self.pairs.tolist(), "sizes": self.sizes.tolist(),
                "tilde_pairs": self.tilde_pairs.tolist(), "tilde_sizes": self.tilde_sizes.tolist(),
                "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, d):
        arr = lambda v: np.asarray(v, dtype=float).reshape(-1, 2)
        return cls(d["index"], d["seed"], arr(d["pairs"]), np.asarray(d["sizes"], dtype=int),
                   arr(d["tilde_pairs"]), np.asarray(d["tilde_sizes"], dtype=int), d["diagnostics"])


@dataclass
class TrialBatch:
    plan: ScalingPlan
    master_seed: int
    trials: list

    def __len__(self):
        return len(self.trials)

    @property
    def trial_count(self):
        return len(self.trials)

    def counts(self, region: RegionSpec, m=None, tilde=False):
        return np.array([region.count(t.select(m, tilde)) for t in self.trials], dtype=float)


def _one_trial(plan: ScalingPlan, master_seed, index, m_cap):
    seed = trial_seed(master_seed, index)
    diag = {}
    empty = np.empty((0, 2))
    try:
        # inner points can never reach a component of the layer
        cloud = sample_cloud(plan.tail, plan.n, seed, r_min=max(0.0, plan.R - 2.0 * plan.M))
        dg = crackle_diagram(cloud, plan, m_cap)
        dt = crackle_diagram_tilde(cloud, plan, m_cap)
        diag.update(dg.diagnostics)
        diag["tilde_skipped_components"] = dt.diagnostics["skipped_components"]
        return TrialRecord(index, seed, dg.scaled(), dg.sizes(), dt.scaled(), dt.sizes(), diag)
    except Exception as exc:  # recorded, the batch goes on
        diag["error"] = f"{type(exc).__name__}: {exc}"
        return TrialRecord(index, seed, empty, np.empty(0, int), empty, np.empty(0, int), diag)


def _chunk(args):
    plan, master_seed, indices, m_cap = args
    return [_one_trial(plan, master_seed, i, m_cap) for i in indices]


def run_trials(plan: ScalingPlan, trials, master_seed, path=None, workers=1, m_cap=16) -> TrialBatch:
    """Sample ``trials`` independent clouds and compute both diagram variants.

    With ``path`` each finished trial is appended as a JSON line.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    records = []
    sink = open(path, "w") if path else None
    try:
        if workers > 1:
            chunks = [list(range(i, trials, workers)) for i in range(workers)]
            with ProcessPoolExecutor(workers) as ex:
                for part in ex.map(_chunk, [(plan, master_seed, c, m_cap) for c in chunks]):
                    records.extend(part)
            records.sort(key=lambda r: r.index)
            if sink:
                for r in records:
                    sink.write(json.dumps(r.to_dict()) + "\n")
        else:
            for i in range(trials):
                r = _one_trial(plan, master_seed, i, m_cap)
                records.append(r)
                if sink:
                    sink.write(json.dumps(r.to_dict()) + "\n")
                    sink.flush()
    finally:
        if sink:
            sink.close()
    return TrialBatch(plan, master_seed, records)


def load_trials(path, plan, master_seed) -> TrialBatch:
    with open(path) as fh:
        records = [TrialRecord.from_dict(json.loads(line)) for line in fh if line.strip()]
    return TrialBatch(plan, master_seed, records)


# -- reports ------------------------------------------------------------------------

@dataclass
class TestReport:
    name: str
    rule: str
    observed: float
    reference: float
    reference_stderr: float
    passed: bool
    p_value: float | None = None
    tolerance: float | None = None
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_json(self):
        return json.dumps(_plain(asdict(self)), sort_keys=True)

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: observed={self.observed:.6g} reference={self.reference:.6g} ({self.rule})"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _check_lambda(lam: LimitEstimate):
    if lam.value > 0 and lam.stderr / lam.value >= MAX_REL_ERR:
        raise InsufficientSamples(f"stderr/lambda = {lam.stderr / lam.value:.3g} >= {MAX_REL_ERR}")


def pooled_bins(lam, trials, min_expected=MIN_EXPECTED):
    """Left edges of Poisson count bins, each with expected count >= min_expected.

    The last bin is open to the right.
    """
    edges, expected = [0], []
    acc, j = 0.0, 0
    while True:
        acc += trials * stats.poisson.pmf(j, lam)
        rest = trials * stats.poisson.sf(j, lam)
        j += 1
        if rest < min_expected:
            expected.append(acc + rest)
            break
        if acc >= min_expected:
            expected.append(acc)
            edges.append(j)
            acc = 0.0
    return np.array(edges), np.array(expected)


def chi2_poisson(counts, lam):
    """Chi-square GOF of integer counts against Poisson(lam) (lam not fitted)."""
    counts = np.asarray(counts)
    edges, expected = pooled_bins(lam, len(counts))
    if len(expected) < 2:
        return math.nan, 1.0, 0
    idx = np.searchsorted(edges, counts, side="right") - 1
    observed = np.bincount(idx, minlength=len(expected)).astype(float)
    stat, p = stats.chisquare(observed, expected)
    return float(stat), float(p), len(expected) - 1


def poisson_gof(batch: TrialBatch, A: RegionSpec, lam: LimitEstimate, m=None, alpha=SIGNIFICANCE,
                reference_name="limit") -> TestReport:
    """Counts of scaled size-m pairs in A against Poisson(lambda): chi-square, mean and void checks."""
    m = batch.plan.p if m is None else m
    counts = batch.counts(A, m)
    N = len(counts)
    mean = float(counts.mean())
    trial_se = float(counts.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    if lam.value == 0:
        ok = bool((counts == 0).all())
        return TestReport("poisson_gof", "lambda = 0 requires all counts zero", mean, 0.0, 0.0, ok,
                          1.0 if ok else 0.0, 0.0, {"trials": N})
    if lam.value < MIN_LAMBDA:
        raise DegenerateTest(f"lambda = {lam.value:.3g} < {MIN_LAMBDA}: test is powerless")
    _check_lambda(lam)
    stat, p, dof = chi2_poisson(counts, lam.value)
    mean_tol = 3.0 * (lam.stderr + trial_se)
    void_obs = float((counts == 0).mean())
    void_ref = math.exp(-lam.value)
    void_se = math.sqrt(void_ref * (1 - void_ref) / N) + void_ref * lam.stderr
    mean_ok = abs(mean - lam.value) <= mean_tol
    void_ok = abs(void_obs - void_ref) <= 3.0 * void_se
    passed = p > alpha and mean_ok and void_ok
    return TestReport(
        "poisson_gof", f"chi2 p > {alpha} and |mean - lambda| <= 3(se_mc + se_trial) and void within 3 se",
        mean, lam.value, lam.stderr, bool(passed), p, mean_tol,
        {"chi2": stat, "dof": dof, "trials": N, "trial_stderr": trial_se, "mean_ok": bool(mean_ok),
         "void_observed": void_obs, "void_reference": void_ref, "void_stderr": void_se,
         "void_ok": bool(void_ok), "m": m, "region": A.expr, "reference": reference_name})


def hit_miss_estimate(batch: TrialBatch, K: RegionSpec, lam: LimitEstimate, m=None) -> TestReport:
    """Empirical P(pairs hit K) against 1 - exp(-lambda(K))."""
    counts = batch.counts(K, m)
    N = len(counts)
    freq = float((counts > 0).mean())
    ref = 1.0 - math.exp(-lam.value)
    se = math.sqrt(ref * (1 - ref) / N) + (1 - ref) * lam.stderr
    ok = freq == 0.0 if lam.value == 0 else abs(freq - ref) <= 3.0 * se
    return TestReport("hit_miss", "|freq - (1 - exp(-lambda))| <= 3 se", freq, ref, se, bool(ok), None,
                      3.0 * se, {"trials": N, "region": K.expr, "m": m})


def covered_fraction(pairs, grid, eps):
    """Fraction of grid centers within eps of some pair."""
    if len(grid) == 0:
        return math.nan
    if len(pairs) == 0:
        return 0.0
    d2 = ((grid[:, None, :] - pairs[None, :, :]) ** 2).sum(-1).min(axis=1)
    return float((d2 <= eps * eps).mean())


def coverage_grid(region: RegionSpec, eps):
    """eps-grid centers in ``region``; a grid coarser than the region falls back to its centroid."""
    grid = envelope_grid(region, eps)
    if len(grid):
        return grid
    polys = [p for p in region.polygons() if len(p) >= 3]
    if not polys or region.is_empty():
        raise EmptyRegion(f"region {region.expr} is empty")
    poly = np.array(max(polys, key=lambda p: _poly_area(p)))
    return poly.mean(axis=0, keepdims=True)


def _poly_area(poly):
    xy = np.array(poly)
    return 0.5 * abs(np.dot(xy[:, 0], np.roll(xy[:, 1], -1)) - np.dot(xy[:, 1], np.roll(xy[:, 0], -1)))


def coverage_fraction(batch: TrialBatch, region: RegionSpec, eps) -> TestReport:
    """Mean per-trial fraction of the eps-grid of ``region`` covered by pairs with m <= p-1."""
    k, p = batch.plan.k, batch.plan.p
    if p <= k + 2:
        raise EmptyRegion(f"B_(k,p-1) is empty for p = {p}, k = {k}")
    grid = coverage_grid(region, eps)
    sizes = range(k + 2, p)
    fr = np.array([covered_fraction(t.select(sizes), grid, eps) for t in batch.trials])
    mean = float(fr.mean())
    se = float(fr.std(ddof=1) / math.sqrt(len(fr))) if len(fr) > 1 else 0.0
    return TestReport("coverage", "mean covered fraction", mean, 1.0, 0.0, True, None, eps,
                      {"stderr": se, "cells": len(grid), "trials": len(fr), "region": region.expr,
                       "n": batch.plan.n})


def ladder_trend(values, increasing=True):
    """Whether point estimates along a ladder are monotone."""
    v = np.asarray(values, dtype=float)
    diff = np.diff(v)
    return bool((diff >= 0).all() if increasing else (diff <= 0).all())


def coverage_ladder(batches, region, eps, threshold=0.95) -> TestReport:
    reps = [coverage_fraction(b, region, eps) for b in batches]
    means = [r.observed for r in reps]
    ok = ladder_trend(means) and means[-1] >= threshold
    return TestReport("coverage_ladder", f"non-decreasing and top rung >= {threshold}", means[-1], threshold,
                      0.0, bool(ok), None, eps,
                      {"means": means, "stderrs": [r.details["stderr"] for r in reps],
                       "n": [b.plan.n for b in batches]})


def fit_slope(scales, means):
    """Least-squares slope of log mean against log scale."""
    x = np.log(np.asarray(scales, dtype=float))
    y = np.log(np.asarray(means, dtype=float))
    if x.max() - x.min() < math.log(10.0) * (1 - 1e-9):
        raise InsufficientSpread(f"ladder spans {(x.max() - x.min()) / math.log(10):.3g} < 1 decade")
    return stats.linregress(x, y)


def moment_scaling(batches, A: RegionSpec, m=None, lo=-1.15, hi=-0.85) -> TestReport:
    """Slope of log mean count in A (sizes m, default p-1) against log n M^d f(R)."""
    m = batches[0].plan.p - 1 if m is None else m
    scales = [b.plan.density_scale for b in batches]
    counts = [b.counts(A, m) for b in batches]
    means = [float(c.mean()) for c in counts]
    if min(means) <= 0:
        raise InsufficientSamples("a rung has zero mean count")
    fit = fit_slope(scales, means)
    ci = float(stats.t.ppf(0.975, max(len(means) - 2, 1)) * fit.stderr) if len(means) > 2 else math.nan
    variances = [float(c.var(ddof=1)) for c in counts]
    kappa = max(v * s for v, s in zip(variances, scales))
    ok = lo <= fit.slope <= hi
    return TestReport("moment_scaling", f"slope in [{lo}, {hi}]", float(fit.slope), -1.0, float(fit.stderr),
                      bool(ok), None, None,
                      {"scales": scales, "means": means, "variances": variances, "kappa": kappa,
                       "slope_ci95": ci, "intercept": float(fit.intercept), "m": m, "region": A.expr})


def lifespans(batch: TrialBatch, t):
    """Per-trial max lifespan of scaled pairs (all sizes) with birth <= t; 0 when there are none."""
    out = []
    for tr in batch.trials:
        sel = tr.pairs[tr.pairs[:, 0] <= t]
        out.append(float((sel[:, 1] - sel[:, 0]).max()) if len(sel) else 0.0)
    return np.array(out)


def lifespan_law(batch: TrialBatch, t, threshold, lam_J: LimitEstimate) -> TestReport:
    """Empirical P(T > threshold) against 1 - exp(-lambda(J_t)).

    Trials without pairs have T = 0 and count as non-exceedances.  A
    reference below MIN_LAMBDA is flagged as degenerate (low power).
    """
    T = lifespans(batch, t)
    N = len(T)
    freq = float((T > threshold).mean())
    ref = 1.0 - math.exp(-lam_J.value)
    se = math.sqrt(max(ref * (1 - ref), 1.0 / N) / N) + (1 - ref) * lam_J.stderr
    ok = abs(freq - ref) <= 3.0 * se
    return TestReport("lifespan_law", "|P(T > T0 + delta) - (1 - exp(-lambda(J_t)))| <= 3 se", freq, ref, se,
                      bool(ok), None, 3.0 * se,
                      {"t": t, "threshold": threshold, "trials": N, "empty_trials": int((T == 0).sum()),
                       "mean_T": float(T.mean()), "lambda": lam_J.value,
                       "degenerate": bool(lam_J.value < MIN_LAMBDA)})


def poisson_lifespans(pool_pairs, lam, draws, seed, t):
    """Max lifespan with birth <= t of Poisson(lam) pairs drawn from a pool (T = 0 if none)."""
    from .model import make_rng
    rng = make_rng(seed)
    sel = pool_pairs[pool_pairs[:, 0] <= t]
    life = sel[:, 1] - sel[:, 0]
    out = np.zeros(draws)
    ns = rng.poisson(lam, size=draws)
    for i, n in enumerate(ns):
        if n and len(life):
            out[i] = life[rng.integers(0, len(life), size=n)].max()
    return out


def lifespan_law_full(batch: TrialBatch, t, limit_T, alpha=SIGNIFICANCE) -> TestReport:
    """Two-sample KS test of trial lifespans against draws of the limiting functional."""
    T = lifespans(batch, t)
    res = stats.ks_2samp(T, limit_T)
    return TestReport("lifespan_law_full", f"KS p > {alpha}", float(T.mean()), float(np.mean(limit_T)), 0.0,
                      bool(res.pvalue > alpha), float(res.pvalue), None,
                      {"ks": float(res.statistic), "trials": len(T), "draws": len(limit_T)})
