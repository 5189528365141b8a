import math

import numpy as np
import pytest
from scipy import stats

from stablemarket import fixtures as fx
from stablemarket.algorithms import deferred_acceptance
from stablemarket.model import (
    LAMBDA_CATALOG,
    ModelConfig,
    derive_college_preferences,
    derive_preferences,
    derive_student_preferences,
    order_colleges,
    permute_students,
    profile_of,
    resample_student,
    sample_colleges,
    sample_market,
    satisfies_tail_normalisation,
    sigma_schedule,
    student_rng,
    truthful_report,
)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(n=10, m=2, sigma=-0.1)
    with pytest.raises(ValueError):
        ModelConfig(n=0, m=2)
    with pytest.raises(ValueError):
        ModelConfig(n=10, m=2, eta_dist="cauchy")
    with pytest.raises(ValueError):
        ModelConfig(n=10, m=2, quotas=(1, 2, 3))


def test_tail_normalisation_catalog():
    assert satisfies_tail_normalisation("normal", 1.0)
    assert satisfies_tail_normalisation("uniform", 1.0)
    assert not satisfies_tail_normalisation("normal", 1.5)
    with pytest.raises(ValueError):
        ModelConfig(n=10, m=2, eta_scale=2.0)


def test_sigma_schedule_rate():
    # sigma_n * m * sqrt(n ln(nm)) shrinks along n for fixed m
    vals = [sigma_schedule(n) * 5 * math.sqrt(n * math.log(5 * n)) for n in (10**2, 10**4, 10**6)]
    assert vals[0] > vals[1] > vals[2]
    assert sigma_schedule(1) == pytest.approx(math.log(3) ** -0.5)


def test_same_seed_bit_identical():
    cfg = ModelConfig(n=50, m=4, seed=123)
    a, b = sample_market(cfg, 3), sample_market(cfg, 3)
    for name in ("X", "eps", "eta", "Z", "xi", "omega", "utility"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(sample_market(cfg, 4).X, a.X)


def test_streams_are_disjoint():
    cfg = ModelConfig(n=5, m=2, seed=1)
    assert not np.array_equal(student_rng(cfg, 0, 0).random(4), student_rng(cfg, 0, 1).random(4))


def test_homogeneous_colleges_when_sigma_zero():
    real = sample_market(ModelConfig(n=40, m=5, sigma=0.0, seed=2))
    w, _ = derive_college_preferences(real)
    assert (w == w[0]).all()
    assert truthful_report(real).decode().w.tolist() == w.tolist()


def test_priority_reconstruction_exact():
    real = sample_market(ModelConfig(n=30, m=3, seed=9))
    assert np.max(np.abs(real.omega - (real.lam[:, None] + real.sigma * real.eta))) == 0


def test_eta_tail_bound():
    real = sample_market(ModelConfig(n=10_000, m=3, seed=4))
    for t in (1.0, 2.0, 3.0):
        assert np.mean(np.abs(real.eta) > t) < 2 * math.exp(-t * t / 2)


class TestCollegeOrders:
    def test_descending(self):
        w, _ = order_colleges(np.array([[3.0], [1.0], [2.0]]), np.array([-np.inf]))
        assert w.tolist() == [[1, 3, 2, 0]]

    def test_threshold_insertion(self):
        w, _ = order_colleges(np.array([[3.0], [1.0], [2.0]]), np.array([2.5]))
        assert w.tolist() == [[1, 0, 3, 2]]

    def test_ties_to_lower_row_and_counted(self):
        w, ties = order_colleges(np.array([[1.0], [1.0], [0.5]]), np.array([0.5]))
        assert w.tolist() == [[1, 2, 3, 0]]
        assert ties == 2

    def test_quantile_threshold_makes_some_unacceptable(self):
        real = sample_market(ModelConfig(n=400, m=3, threshold="quantile", threshold_p=0.3, seed=5))
        p = profile_of(real)
        share = 1 - p.acceptable.mean()
        assert 0.2 < share < 0.4


class TestStudentOrders:
    def test_descending_with_outside(self):
        real = fx.base_realization()
        real.utility[0] = [0.5, 2.0, 1.0, -1.0]
        v, _ = derive_student_preferences(real)
        assert v[0].tolist()[:3] == [1, 2, 0]

    def test_outside_dominates_never_matched(self):
        cfg = ModelConfig(n=30, m=3, outside_utility=1e9, seed=6)
        real = sample_market(cfg)
        p = profile_of(real)
        assert (p.v[:, 0] == 0).all()
        assert not deferred_acceptance(p, real.quotas).assignment.any()

    def test_exchangeable_utilities_uniform_orders(self):
        cfg = ModelConfig(n=100_000, m=3, utility="zero", outside_utility=-np.inf, seed=8)
        v, _ = derive_student_preferences(sample_market(cfg))
        assert (v[:, 3] == 0).all()
        codes = v[:, :3] @ np.array([16, 4, 1])
        _, counts = np.unique(codes, return_counts=True)
        assert counts.size == 6
        assert stats.chisquare(counts).pvalue > 0.001


class TestReports:
    def test_truthful_round_trip(self):
        real = sample_market(ModelConfig(n=60, m=4, threshold="quantile", threshold_p=0.2, seed=10))
        assert truthful_report(real).decode() == profile_of(real)

    def test_fixture_realization_decodes_to_table(self):
        real = fx.base_realization()
        assert truthful_report(real).decode() == fx.base_profile()
        assert derive_preferences(real)[0] == fx.base_profile()


def test_label_freeness():
    real = sample_market(ModelConfig(n=25, m=3, seed=12))
    perm = np.random.default_rng(0).permutation(25)
    p = profile_of(real)
    q = profile_of(permute_students(real, perm))
    assert np.array_equal(q.v, p.v[perm])
    inv = np.empty_like(perm)
    inv[perm] = np.arange(25)
    relabel = np.concatenate([[0], inv + 1])  # old token -> new token
    assert np.array_equal(q.w, relabel[p.w])


def test_resample_changes_one_row():
    cfg = ModelConfig(n=20, m=3, seed=13)
    real = sample_market(cfg)
    other = resample_student(cfg, real, 7, np.random.default_rng(1))
    changed = np.flatnonzero(np.any(other.eta != real.eta, axis=1) | np.any(other.eps != real.eps, axis=1))
    assert changed.tolist() == [7]
    assert np.array_equal(other.Z, real.Z)


def test_frozen_colleges_shared_across_replications():
    cfg = ModelConfig(n=20, m=3, seed=14)
    col = sample_colleges(cfg)
    a, b = sample_market(cfg, 0, col), sample_market(cfg, 1, col)
    assert np.array_equal(a.Z, b.Z) and np.array_equal(a.xi, b.xi)


@pytest.mark.parametrize("name", sorted(LAMBDA_CATALOG))
def test_anti_concentration(name):
    spec = LAMBDA_CATALOG[name]
    rng = np.random.default_rng(15)
    d = 3
    lam = spec.func(rng.uniform(size=(200_000, d)))
    centres = np.linspace(0, 1, 41)
    for t in (0.01, 0.05, 0.1):
        worst = max(np.mean(np.abs(lam - c) <= t) for c in centres)
        se = math.sqrt(worst * (1 - worst) / lam.size)
        assert worst <= spec.anti_concentration(d) * t + 4 * se
