"""Acceptance criteria 1-9; each test prints one ``[criterion N] PASS/FAIL`` line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or ``python tests/test_acceptance.py``.
"""

import time
import warnings

import numpy as np
import pytest

from conftest import naive_stable_set, random_profile
from stablemarket import fixtures as fx
from stablemarket.algorithms import (
    deferred_acceptance,
    embed_without_student,
    remove_student,
    restabilize,
)
from stablemarket.cli_io import run
from stablemarket.experiments import ExperimentConfig, run_experiment
from stablemarket.model import ModelConfig, profile_of, sample_market
from stablemarket.stats import ObservationWindow, spearman_rho_hat


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_criterion_1_golden_examples(verdict):
    start = time.perf_counter()
    base = deferred_acceptance(fx.base_profile(), fx.QUOTAS_CASCADE)
    pert = deferred_acceptance(fx.perturbed_profile(), fx.QUOTAS_CASCADE)
    vac0 = deferred_acceptance(fx.base_profile(), fx.QUOTAS_VACANCY)
    vac1 = deferred_acceptance(fx.perturbed_profile(), fx.QUOTAS_VACANCY)
    changed = np.flatnonzero(vac0.assignment != vac1.assignment).tolist()
    elapsed = time.perf_counter() - start
    ok = (
        tuple(base.assignment) == fx.SOSM_BASE
        and tuple(pert.assignment) == fx.SOSM_PERTURBED
        and changed == [0]
        and elapsed < 1.0
    )
    verdict(1, ok, f"cascade {base.assignment.tolist()} -> {pert.assignment.tolist()}, "
                   f"vacancy changes students {changed}, {elapsed:.3f}s")


def test_criterion_2_oracle_equivalence(verdict):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    failures = []
    markets = 1000
    for t in range(markets):
        n, m = int(rng.integers(1, 8)), int(rng.integers(1, 4))
        p = random_profile(rng, n, m)
        q = rng.integers(1, 3, size=m)
        stable = naive_stable_set(p, q)
        mu = deferred_acceptance(p, q)
        da = tuple(int(x) for x in mu.assignment)
        if da not in stable:
            failures.append((t, "DA not stable"))
            continue
        rank = p.student_rank
        for other in stable:
            if any(rank[i, other[i]] < rank[i, da[i]] for i in range(n)):
                failures.append((t, "DA not student-optimal"))
                break
        fills = {tuple(np.bincount(s, minlength=m + 1)) for s in stable}
        matched = {tuple(np.array(s) != 0) for s in stable}
        if len(fills) != 1 or len(matched) != 1:
            failures.append((t, "rural hospital"))
        i = int(rng.integers(n))
        start_mu = embed_without_student(deferred_acceptance(remove_student(p, i), q), i)
        if restabilize(start_mu, p, q, verify=True)[0] != mu:
            failures.append((t, "restabilize differs from DA"))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 120
    verdict(2, ok, f"{markets} markets, {len(failures)} violations {failures[:3]}, {elapsed:.1f}s")


def test_criterion_3_equilibration(verdict):
    cfg = ExperimentConfig(
        kind="audit-equilibration",
        model=ModelConfig(n=20, m=3, seed=3),
        replications=5040,
        n_grid=(20, 100, 500),
        m_grid=(3, 10),
        sigma_grid=(0.0, 0.01, 0.1),
    )
    rep = run_experiment(cfg)
    cells = len(rep.summary)
    ok = rep.info["all_equal"] and rep.violations == 0 and cells == 18 and rep.info["trials"] >= 5000
    worst = min(min(row["max_slack_N1"], row["max_slack_N0"]) for row in rep.summary)
    verdict(3, ok, f"{rep.info['trials']} trials over {cells} cells, all equal={rep.info['all_equal']}, "
                   f"violations={rep.violations}, smallest displacement slack={worst}, {rep.runtime_s:.1f}s")


def test_criterion_4_bounded_difference(verdict):
    cfg = ExperimentConfig(
        kind="audit-bdc",
        model=ModelConfig(n=50, m=3, seed=4),
        replications=10_080,
        n_grid=(50, 200, 1000),
        m_grid=(3, 10),
        sigma_grid=(0.0, 0.01, 0.1, None),
    )
    rep = run_experiment(cfg)
    ok = rep.violations == 0 and rep.info["trials"] >= 10_000 and rep.runtime_s < 600
    slack = min(row["max_slack_sosm_max_per_college"] for row in rep.summary)
    cross = min(row["max_slack_cross_max_per_college"] for row in rep.summary)
    verdict(4, ok, f"{rep.info['trials']} trials, violations={rep.violations}, "
                   f"min SOSM slack={slack}, min cross slack={cross}, {rep.runtime_s:.1f}s")


def _lln_config(sigma):
    model = ModelConfig(n=500, m=5, capacity_ratio=1.5, sigma=sigma, seed=7)
    return ExperimentConfig(
        kind="concentration",
        model=model,
        replications=2000,
        target_replications=4000,
        n_grid=(500, 2000, 8000),
        t_grid=(0.0025, 0.005, 0.01, 0.02, 0.04),
        college=3,
    )


@pytest.fixture(scope="module")
def lln_reports():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {"schedule": run_experiment(_lln_config(None)), "homogeneous": run_experiment(_lln_config(0.0))}


def test_criterion_5_lln(verdict, lln_reports):
    sched, homog = lln_reports["schedule"].info, lln_reports["homogeneous"].info
    ratio = homog["rms_ratio_last_first"]
    ok = sched["rms_strictly_decreasing"] and homog["rms_strictly_decreasing"] and 0.2 <= ratio <= 0.6
    rms = {k: round(v, 5) for k, v in sched["rms_by_n"].items()}
    verdict(5, ok, f"schedule RMS {rms}, sigma=0 RMS ratio 8000/500 = {ratio:.3f}")


def test_criterion_6_tail_shape(verdict, lln_reports):
    parts, ok = [], True
    for label, rep in lln_reports.items():
        info = rep.info
        good = info["C_fit"] is not None and info["shape_violations"] == 0 and info["tails_monotone"]
        ok &= good
        parts.append(f"{label}: C={info['C_fit']:.4g}, shape violations={info['shape_violations']}, "
                     f"monotone={info['tails_monotone']}")
    verdict(6, ok, "; ".join(parts))


def test_criterion_7_rank_difference(verdict):
    cfg = ExperimentConfig(
        kind="rankdiff",
        model=ModelConfig(n=100, m=3, seed=5),
        replications=50,
        n_grid=(100, 400, 1600),
        m_grid=(1, 3),
        sigma_grid=(0.0, 0.01, 0.05, 0.2, 0.5),
    )
    rep = run_experiment(cfg)
    degenerate_ok = all(row["max_h"] == 0 for row in rep.summary if row["sigma"] == 0 or row["m"] == 1)
    checked = sum(1 for row in rep.summary if row["nontrivial"] and row["premise_ok"] and row["m"] > 1)
    ok = rep.violations == 0 and degenerate_ok and checked > 0
    verdict(7, ok, f"c={rep.info['c']:.4e}, {checked} nontrivial cells checked, "
                   f"h==0 on degenerate cells={degenerate_ok}, violations={rep.violations}")


def test_criterion_8_estimators(verdict):
    model = ModelConfig(n=250, m=2, capacity_ratio=0.8, seed=11)
    cfg = ExperimentConfig(
        kind="estimators", model=model, replications=500, target_replications=1000, n_grid=(250, 1000, 4000)
    )
    rep = run_experiment(cfg)
    info = rep.info
    trend = info["cdf_decreasing"] and info["rho_decreasing"] and info["kernel_decreasing"]

    aligned = ModelConfig(n=4000, m=5, utility="common", eps_scale=0.01, outside_utility=float("-inf"),
                          sigma=0.0, seed=12)
    arep = run_experiment(ExperimentConfig(kind="estimators", model=aligned, replications=10,
                                           target_replications=10, n_grid=(4000,)))
    rho_hats = [rec["rho_hat"] for rec in arep.records]
    gap = max(abs(r - arep.info["rho_large"]) for r in rho_hats)

    real = sample_market(model.with_(n=1000), 0)
    mu = deferred_acceptance(profile_of(real), real.quotas)
    window = ObservationWindow.full(1000, 2)
    invariant = spearman_rho_hat(mu, real.X, real.Z, window) == spearman_rho_hat(mu, np.exp(3 * real.X), real.Z, window)

    ok = trend and gap <= 0.05 and invariant
    med = [(row["n"], round(row["median_cdf_error"], 4), round(row["median_rho_error"], 4),
            round(row["median_kernel_error"], 4)) for row in rep.summary]
    verdict(8, ok, f"(n, cdf, rho, kernel) medians {med}; aligned |rho_hat - rho_large| <= {gap:.4f} "
                   f"(rho_large={arep.info['rho_large']:.4f}); exact invariance={invariant}")


def test_criterion_9_determinism_and_speed(verdict, tmp_path):
    cfg = ExperimentConfig(kind="audit-bdc", model=ModelConfig(n=60, m=4, seed=9), replications=50,
                           sigma_grid=(0.0, 0.1))
    outs = []
    for d in ("a", "b"):
        run(cfg, tmp_path / d)
        files = sorted(p.name for p in (tmp_path / d).iterdir() if p.name != "manifest.json")
        outs.append({name: (tmp_path / d / name).read_bytes() for name in files})
    identical = outs[0] == outs[1]

    big = ModelConfig(n=100_000, m=50, seed=9)
    p = profile_of(sample_market(big))
    q = big.resolved_quotas()
    deferred_acceptance(profile_of(sample_market(ModelConfig(n=50, m=5))), [10] * 5)  # compile outside the timer
    start = time.perf_counter()
    mu = deferred_acceptance(p, q)
    elapsed = time.perf_counter() - start
    filled = int(mu.fill_counts()[1:].sum())
    verdict(9, identical and elapsed < 5.0, f"byte-identical outputs={identical}, "
                                            f"DA n=1e5 m=50 in {elapsed:.2f}s ({filled} matched)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
