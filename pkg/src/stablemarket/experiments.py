"""Monte Carlo harness: replication targets, tail profiles, audits and sweeps.

Every replication owns a generator derived from ``(seed, stream, index)`` so
results are reproducible and independent of how work is scheduled.  Results
are always reduced in replication order.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache, partial
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate, stats as sps

from .algorithms import (
    deferred_acceptance,
    deferred_acceptance_college_proposing,
    embed_without_student,
    perturbation_diff,
    remove_student,
    restabilize,
)
from .market import Matching, PreferenceProfile, as_quotas, max_rank_difference
from .model import (
    CollegeDraw,
    ModelConfig,
    _rng,
    assemble,
    profile_of,
    resample_student,
    sample_colleges,
    sample_market,
    sample_student_rows,
)
from .stats import (
    ObservationWindow,
    StatisticSpec,
    characteristic_spec,
    indicator_spec,
    kernel_conditional_prob,
    spearman_from_pairs,
    spearman_rho_hat,
    theta_hat,
)

KINDS = (
    "simulate",
    "audit-bdc",
    "audit-equilibration",
    "concentration",
    "estimators",
    "rankdiff",
    "exchangeability",
    "example-fixtures",
)

STATISTICS: dict[str, Callable[[], StatisticSpec]] = {
    "matching_frequency": indicator_spec,
    "low_x_frequency": lambda: characteristic_spec(lambda X: X[:, 0] <= 0.5),
}

# generator streams; stream 0..3 are student streams of sample_market
_TARGET_STREAM = 1
_ORACLE_STREAM = 2
_LARGE_STREAM = 3
_BDC_KEY = 10
_EQ_KEY = 11


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "simulate"
    model: ModelConfig = field(default_factory=lambda: ModelConfig(n=100, m=5))
    replications: int = 100
    target_replications: int | None = None
    n_grid: tuple[int, ...] = ()
    m_grid: tuple[int, ...] = ()
    sigma_grid: tuple[float, ...] = ()
    t_grid: tuple[float, ...] = (0.005, 0.01, 0.02, 0.05, 0.1)
    statistic: str = "matching_frequency"
    college: int = 1
    window_share: float = 1.0
    college_proposing: bool = True
    probes: tuple[float, ...] = (0.25, 0.5, 0.75)
    min_college_prob: float = 0.02
    oracle_multiplier: int = 10
    kernel: str = "epanechnikov"
    ks_alpha: float = 0.01
    threads: int = 1
    output_dir: str = "out"
    output_format: str = "both"

    def __post_init__(self) -> None:
        errors = self.validation_errors()
        if errors:
            raise ValueError("; ".join(errors))
        for name in ("n_grid", "m_grid", "sigma_grid", "t_grid", "probes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def validation_errors(self) -> list[str]:
        errs = []
        if self.kind not in KINDS:
            errs.append(f"kind must be one of {', '.join(KINDS)}")
        if self.replications < 2:
            errs.append("replications must be at least 2")
        if self.target_replications is not None and self.target_replications < 2:
            errs.append("target_replications must be at least 2")
        if any(int(n) < 1 for n in self.n_grid):
            errs.append("n_grid entries must be positive")
        if any(int(m) < 1 for m in self.m_grid):
            errs.append("m_grid entries must be positive")
        if self.model.quotas is not None and any(int(m) != self.model.m for m in self.m_grid):
            errs.append("explicit quotas cannot be combined with an m_grid")
        if any(s is not None and not s >= 0 for s in self.sigma_grid):
            errs.append("sigma_grid entries must be nonnegative")
        if any(not t >= 0 for t in self.t_grid):
            errs.append("t_grid entries must be nonnegative")
        if not self.t_grid:
            errs.append("t_grid must be nonempty")
        if self.statistic not in STATISTICS:
            errs.append(f"statistic must be one of {', '.join(STATISTICS)}")
        if not 0 <= self.college <= min(self.ms()):
            errs.append("college must index an alternative present in every market")
        if not 0 < self.window_share <= 1:
            errs.append("window_share must lie in (0, 1]")
        if not 0 <= self.min_college_prob < 1:
            errs.append("min_college_prob must lie in [0, 1)")
        if self.oracle_multiplier < 1:
            errs.append("oracle_multiplier must be positive")
        if self.threads < 1:
            errs.append("threads must be positive")
        if self.output_format not in ("csv", "jsonl", "both"):
            errs.append("output_format must be csv, jsonl or both")
        if not 0 < self.ks_alpha < 1:
            errs.append("ks_alpha must lie in (0, 1)")
        return errs

    def ns(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.n_grid) or (self.model.n,)

    def ms(self) -> tuple[int, ...]:
        return tuple(int(m) for m in self.m_grid) or (self.model.m,)

    def sigmas(self) -> tuple[float | None, ...]:
        return tuple(self.sigma_grid) or (self.model.sigma,)

    @property
    def n_target(self) -> int:
        return self.target_replications if self.target_replications is not None else 20 * self.replications

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class BoundInputs:
    n_Z: int
    m: int
    m_Z: int
    sigma_n: float
    b_bar: float
    c_bar: float
    C: float

    @property
    def _spread(self) -> float:
        return max(self.sigma_n, self.n_Z ** (-5.0 / 6.0))

    @property
    def a(self) -> float:
        return self.n_Z**2 * self._spread**2 * math.log(self.n_Z * self.m) + 1.0

    @property
    def b(self) -> float:
        return self.n_Z**1.5 * self._spread + 1.0


def _rate(t: float) -> float:
    return min(t * t, t**1.5)


def _exponent_scale(inputs: BoundInputs, t: float) -> float:
    """``n_Z (t^2 ^ t^1.5) / (c^2 + b^2 (a + b t))``; the bound is ``4 exp(-C * this)``."""
    denom = inputs.c_bar**2 + inputs.b_bar**2 * (inputs.a + inputs.b * t)
    return inputs.n_Z * _rate(t) / denom


def theorem_bound(inputs: BoundInputs, t: float) -> float:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return 4.0 * math.exp(-inputs.C * _exponent_scale(inputs, t))


def fit_tail_constant(inputs: BoundInputs, t_grid: Sequence[float], tails: Sequence[float]) -> float | None:
    """Largest ``C`` for which ``4 exp(-C x(t))`` stays above every positive empirical tail.

    Returns None when no tail on the grid is positive (any ``C`` fits).
    """
    best = None
    for t, p in zip(t_grid, tails):
        x = _exponent_scale(inputs, t)
        if p > 0 and x > 0:
            c = -math.log(p / 4.0) / x
            best = c if best is None else min(best, c)
    return best


@dataclass
class ExperimentReport:
    kind: str
    records: list[dict[str, Any]]
    summary: list[dict[str, Any]]
    violations: int = 0
    info: dict[str, Any] = field(default_factory=dict)
    runtime_s: float = 0.0


@dataclass(frozen=True)
class TargetEstimate:
    value: float
    se: float
    replications: int


def _ordered_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    from joblib import Parallel, delayed

    return list(Parallel(n_jobs=threads)(delayed(fn)(x) for x in items))


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


# ---------------------------------------------------------------------------
# market construction shared by the sweeps


def model_at(model: ModelConfig, n: int | None = None, m: int | None = None, sigma=...) -> ModelConfig:
    changes: dict[str, Any] = {}
    if n is not None:
        changes["n"] = int(n)
    if m is not None and m != model.m:
        changes["m"] = int(m)
        changes["quotas"] = None
    if sigma is not ...:
        changes["sigma"] = sigma
    return model.with_(**changes) if changes else model


def frozen_colleges(model: ModelConfig, base: CollegeDraw) -> CollegeDraw:
    """The frozen college draw with the quotas that ``model`` implies."""
    return CollegeDraw(base.Z, base.xi, base.c, model.resolved_quotas())


def observation_window(config: ExperimentConfig, model: ModelConfig, colleges: CollegeDraw) -> ObservationWindow:
    cols = (config.college,)
    if config.window_share >= 1:
        return ObservationWindow(np.arange(model.n), cols)
    return ObservationWindow.fraction(model.n, colleges.Z, colleges.xi, config.window_share, cols)


def _statistic_value(config, model, colleges, window, replication, stream) -> float:
    real = sample_market(model, replication, colleges, stream=stream)
    mu = deferred_acceptance(profile_of(real), colleges.quotas)
    return theta_hat(mu, real.X, real.Z, STATISTICS[config.statistic](), window).value


def estimate_target(
    config: ExperimentConfig,
    colleges: CollegeDraw,
    model: ModelConfig | None = None,
    replications: int | None = None,
) -> TargetEstimate:
    """Replication mean of the statistic with the college side held at ``colleges``."""
    model = config.model if model is None else model
    reps = config.n_target if replications is None else replications
    window = observation_window(config, model, colleges)
    fn = partial(_statistic_value, config, model, colleges, window, stream=_TARGET_STREAM)
    values = _ordered_map(fn, range(reps), config.threads)
    mean, se = _mean_se(values)
    t_min = min(config.t_grid)
    if t_min > 0 and se >= t_min / 10:
        warnings.warn(f"target standard error {se:.3g} is not below t_min/10 = {t_min / 10:.3g}", stacklevel=2)
    return TargetEstimate(mean, se, reps)


# ---------------------------------------------------------------------------
# simulate


def _simulate_rep(config, model, colleges, window, r):
    real = sample_market(model, r, colleges)
    u = profile_of(real)
    mu = deferred_acceptance(u, colleges.quotas)
    th = theta_hat(mu, real.X, real.Z, STATISTICS[config.statistic](), window)
    fills = mu.fill_counts()
    return {
        "replication_index": r,
        "seed": model.seed,
        "n": model.n,
        "m": model.m,
        "sigma": real.sigma,
        "statistic": th.value,
        "unmatched": int(fills[0]),
        "fill_counts": [int(x) for x in fills[1:]],
        "h": max_rank_difference(u).h,
    }


def simulate(config: ExperimentConfig) -> ExperimentReport:
    start = time.perf_counter()
    model = config.model
    colleges = sample_colleges(model)
    window = observation_window(config, model, colleges)
    records = _ordered_map(partial(_simulate_rep, config, model, colleges, window), range(config.replications), config.threads)
    fills = np.array([rec["fill_counts"] for rec in records], dtype=float)
    summary = []
    for j in range(model.m):
        mean, se = _mean_se(fills[:, j] / model.n)
        summary.append({"college": j + 1, "quota": int(colleges.quotas[j]), "mean_share": mean, "se_share": se})
    stat_mean, stat_se = _mean_se([rec["statistic"] for rec in records])
    info = {"statistic_mean": stat_mean, "statistic_se": stat_se, "sigma": model.sigma_n}
    return ExperimentReport("simulate", records, summary, 0, info, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# concentration profile


def concentration_profile(config: ExperimentConfig) -> ExperimentReport:
    """Empirical tails of ``|theta_hat - target|`` per ``n`` against the tail bound.

    The constant ``C`` is fitted at the smallest ``n`` only, as the largest
    value keeping the bound above every positive empirical tail there; the
    report then counts grid points at larger ``n`` where the fitted bound
    falls below the empirical tail (``shape_violations``).
    """
    start = time.perf_counter()
    ns = sorted(config.ns())
    sigma = config.sigmas()[0]
    base = sample_colleges(model_at(config.model, n=ns[0], sigma=sigma))
    t_grid = sorted(config.t_grid)
    records: list[dict] = []
    per_n = []
    for n in ns:
        model = model_at(config.model, n=n, sigma=sigma)
        colleges = frozen_colleges(model, base)
        window = observation_window(config, model, colleges)
        target = estimate_target(config, colleges, model)
        fn = partial(_statistic_value, config, model, colleges, window, stream=0)
        values = np.asarray(_ordered_map(fn, range(config.replications), config.threads), dtype=float)
        dev = values - target.value
        for r, (v, d) in enumerate(zip(values, dev)):
            records.append({"replication_index": r, "seed": model.seed, "n": n, "statistic": float(v), "deviation": float(d)})
        tails = [float(np.mean(np.abs(dev) >= t)) for t in t_grid]
        spec = STATISTICS[config.statistic]()
        b_bar = sum(spec.b(j, colleges.Z) for j in window.colleges)
        c_bar = sum(spec.c(j, colleges.Z) for j in window.colleges)
        inputs = BoundInputs(window.n_Z, model.m, window.m_Z, model.sigma_n, b_bar, c_bar, C=1.0)
        per_n.append((n, model, target, float(np.sqrt(np.mean(dev**2))), tails, inputs))

    fit_inputs, fit_tails = per_n[0][5], per_n[0][4]
    C = fit_tail_constant(fit_inputs, t_grid, fit_tails)
    summary = []
    shape_violations = 0
    monotone = True
    for n, model, target, rms, tails, inputs in per_n:
        inputs = replace(inputs, C=C if C is not None else 0.0)
        monotone &= all(a >= b for a, b in zip(tails, tails[1:]))
        for t, p in zip(t_grid, tails):
            bound = theorem_bound(inputs, t) if C is not None else None
            holds = bound is None or p <= bound
            if n != ns[0] and not holds:
                shape_violations += 1
            summary.append({
                "n": n, "t": t, "empirical_tail": p, "bound": bound, "C": C, "a": inputs.a, "b": inputs.b,
                "n_Z": inputs.n_Z, "sigma": model.sigma_n, "rms": rms, "target": target.value,
                "target_se": target.se, "bound_holds": holds,
            })
    rms_list = [row[3] for row in per_n]
    info = {
        "C_fit": C,
        "fit_n": ns[0],
        "rms_by_n": {str(n): rms for n, _, _, rms, _, _ in per_n},
        "rms_strictly_decreasing": all(a > b for a, b in zip(rms_list, rms_list[1:])),
        "rms_ratio_last_first": rms_list[-1] / rms_list[0] if rms_list[0] > 0 else None,
        "tails_monotone": monotone,
        "shape_violations": shape_violations,
        "target_replications": config.n_target,
    }
    return ExperimentReport("concentration", records, summary, 0, info, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# bounded difference


def bounded_difference_check(
    profile: PreferenceProfile,
    profile_prime: PreferenceProfile,
    quotas: Sequence[int],
    college_proposing: bool = True,
) -> dict[str, Any]:
    """Audit counters for one single-student perturbation ``profile -> profile_prime``.

    The SOSM comparison uses ``k = max(h, h')``; the SOSM-vs-college-optimal
    comparison uses each profile's own ``h``, which is at most that.
    """
    q = as_quotas(quotas, profile.m)
    h0, h1 = max_rank_difference(profile).h, max_rank_difference(profile_prime).h
    K = max(h0, h1, 1)
    m = profile.m
    s0, s1 = deferred_acceptance(profile, q), deferred_acceptance(profile_prime, q)
    d = perturbation_diff(s0, s1)
    out: dict[str, Any] = {
        "h": h0,
        "h_prime": h1,
        "k": max(h0, h1),
        "sosm_max_per_college": d.max_per_college,
        "sosm_bound": 16 * K + 1,
        "sosm_total_changed": d.total_changed,
        "total_bound": 8 * m * K + 3,
    }
    violations = int(d.max_per_college > 16 * K + 1) + int(d.total_changed > 8 * m * K + 3)
    if college_proposing:
        c0 = deferred_acceptance_college_proposing(profile, q)
        c1 = deferred_acceptance_college_proposing(profile_prime, q)
        gap0 = perturbation_diff(s0, c0).max_per_college
        gap1 = perturbation_diff(s1, c1).max_per_college
        side_bad = int(gap0 > 8 * max(h0, 1)) + int(gap1 > 8 * max(h1, 1))
        cross = max(perturbation_diff(a, b).max_per_college for a, b in ((s0, c1), (c0, s1), (c0, c1), (s0, s1)))
        out.update({
            "sosm_cosm_gap": max(gap0, gap1),
            "sosm_cosm_bound": 8 * K,
            "sosm_cosm_violations": side_bad,
            "cross_max_per_college": cross,
            "cross_bound": 32 * K + 1,
        })
        violations += side_bad + int(cross > 32 * K + 1)
    out["violations"] = violations
    return out


def _grid_combos(config: ExperimentConfig) -> list[tuple[int, int, float | None]]:
    return list(itertools.product(config.ns(), config.ms(), config.sigmas()))


def _trial_market(config: ExperimentConfig, key: int, r: int):
    combos = _grid_combos(config)
    n, m, sigma = combos[r % len(combos)]
    model = model_at(config.model, n=n, m=m, sigma=sigma)
    rng = _rng(model.seed, key, r)
    colleges = sample_colleges(model, rng)
    X, eps, eta = sample_student_rows(model, rng, n)
    return model, rng, assemble(model, colleges, X, eps, eta)


def _bdc_trial(config: ExperimentConfig, r: int) -> dict:
    model, rng, real = _trial_market(config, _BDC_KEY, r)
    i = int(rng.integers(model.n))
    real2 = resample_student(model, real, i, rng)
    rec = {"replication_index": r, "seed": model.seed, "n": model.n, "m": model.m, "sigma": real.sigma, "student": i}
    rec.update(bounded_difference_check(profile_of(real), profile_of(real2), real.quotas, config.college_proposing))
    return rec


def _audit_summary(records: list[dict], counters: Sequence[tuple[str, str]]) -> list[dict]:
    """One row per (n, m, sigma) cell with worst-case counters and violation totals."""
    cells: dict[tuple, list[dict]] = {}
    for rec in records:
        cells.setdefault((rec["n"], rec["m"], rec["sigma"]), []).append(rec)
    rows = []
    for (n, m, sigma), recs in sorted(cells.items()):
        row: dict[str, Any] = {"n": n, "m": m, "sigma": sigma, "trials": len(recs)}
        row["max_k"] = max(rec["k"] for rec in recs)
        for name, bound in counters:
            if name in recs[0]:
                row[f"max_{name}"] = max(rec[name] for rec in recs)
                row[f"max_slack_{name}"] = min(rec[bound] - rec[name] for rec in recs)
        row["violations"] = sum(rec["violations"] for rec in recs)
        rows.append(row)
    return rows


def bounded_difference_audit(config: ExperimentConfig) -> ExperimentReport:
    start = time.perf_counter()
    records = _ordered_map(partial(_bdc_trial, config), range(config.replications), config.threads)
    counters = [
        ("sosm_max_per_college", "sosm_bound"),
        ("sosm_total_changed", "total_bound"),
        ("sosm_cosm_gap", "sosm_cosm_bound"),
        ("cross_max_per_college", "cross_bound"),
    ]
    summary = _audit_summary(records, counters)
    violations = sum(rec["violations"] for rec in records)
    info = {"trials": len(records), "violations": violations}
    return ExperimentReport("audit-bdc", records, summary, violations, info, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# equilibration


def equilibration_check(profile: PreferenceProfile, quotas: Sequence[int], i: int) -> dict[str, Any]:
    """Remove ``i``, run DA, put ``i`` back unmatched and restabilise; compare with DA on the full market."""
    q = as_quotas(quotas, profile.m)
    full = deferred_acceptance(profile, q)
    reduced = deferred_acceptance(remove_student(profile, i), q)
    embedded = embed_without_student(reduced, i)
    restored, trace = restabilize(embedded, profile, q)
    k = max_rank_difference(profile).h
    K = max(k, 1)
    m = profile.m
    n1 = n0 = 0
    for j in range(1, m + 1):
        a, b = full.roster(j), embedded.roster(j)
        n1, n0 = max(n1, len(a - b)), max(n0, len(b - a))
    changed = int(np.count_nonzero(full.assignment != embedded.assignment))
    delta = full.fill_counts()[1:] - embedded.fill_counts()[1:]
    fill_ok = bool(np.all((delta == 0) | (delta == 1)) and np.count_nonzero(delta) <= 1)
    equal = restored == full
    violations = int(not equal) + int(n1 > 4 * K) + int(n0 > 4 * K) + int(changed > 4 * m * K + 1) + int(not fill_ok)
    return {
        "student": i,
        "k": k,
        "equal": bool(equal),
        "iterations": trace.iterations,
        "N1": n1,
        "N0": n0,
        "displacement_bound": 4 * K,
        "changed": changed,
        "changed_bound": 4 * m * K + 1,
        "fill_delta": int(delta.sum()),
        "fill_ok": fill_ok,
        "violations": violations,
    }


def _eq_trial(config: ExperimentConfig, r: int) -> dict:
    model, rng, real = _trial_market(config, _EQ_KEY, r)
    i = int(rng.integers(model.n))
    rec = {"replication_index": r, "seed": model.seed, "n": model.n, "m": model.m, "sigma": real.sigma}
    rec.update(equilibration_check(profile_of(real), real.quotas, i))
    return rec


def equilibration_audit(config: ExperimentConfig) -> ExperimentReport:
    start = time.perf_counter()
    records = _ordered_map(partial(_eq_trial, config), range(config.replications), config.threads)
    counters = [("N1", "displacement_bound"), ("N0", "displacement_bound"), ("changed", "changed_bound")]
    summary = _audit_summary(records, counters)
    for row in summary:
        cell = [rec for rec in records if (rec["n"], rec["m"], rec["sigma"]) == (row["n"], row["m"], row["sigma"])]
        row["equal_share"] = sum(rec["equal"] for rec in cell) / len(cell)
        row["max_iterations"] = max(rec["iterations"] for rec in cell)
    violations = sum(rec["violations"] for rec in records)
    info = {
        "trials": len(records),
        "violations": violations,
        "all_equal": all(rec["equal"] for rec in records),
    }
    return ExperimentReport("audit-equilibration", records, summary, violations, info, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# rank difference scaling


def _three_gap_probability(t: float) -> float:
    """``P{eta1 + t < eta2 < eta3 - t}`` for i.i.d. standard normals."""
    f = lambda y: sps.norm.pdf(y) * sps.norm.cdf(y - t) * sps.norm.sf(y + t)
    return integrate.quad(f, -np.inf, np.inf, epsabs=1e-14, epsrel=1e-12)[0]


@lru_cache(maxsize=None)
def rank_constant() -> float:
    """Density constant ``c`` for uniform ``lambda`` on [0, 1] and standard normal ``eta``.

    The lower bound only needs windows of width up to ``2 sigma`` for
    ``lambda`` (density 1, so ``1/2`` suffices) and a three-way gap of ``2``
    for ``eta``; ``c`` is the smaller of the two.
    """
    return min(0.5, _three_gap_probability(2.0) / 2.0)


def rank_constant_for(model: ModelConfig) -> float | None:
    if model.lambda_spec == "first_coordinate" and model.eta_dist == "normal" and model.eta_scale == 1.0:
        return rank_constant()
    return None


def rank_lower_bound(n: int, sigma: float, c: float) -> float:
    return 4.0 * c**4 * (n - 2) * sigma**2


def _rank_rep(model: ModelConfig, colleges: CollegeDraw, r: int) -> int:
    real = sample_market(model, r, colleges)
    return max_rank_difference(profile_of(real)).h


def rank_difference_scaling(config: ExperimentConfig) -> ExperimentReport:
    start = time.perf_counter()
    records, summary = [], []
    violations = 0
    for m in config.ms():
        base = sample_colleges(model_at(config.model, m=m))
        for sigma in config.sigmas():
            means = []
            for n in sorted(config.ns()):
                model = model_at(config.model, n=n, m=m, sigma=sigma)
                colleges = frozen_colleges(model, base)
                hs = _ordered_map(partial(_rank_rep, model, colleges), range(config.replications), config.threads)
                for r, h in enumerate(hs):
                    records.append({"replication_index": r, "seed": model.seed, "n": n, "m": m, "sigma": model.sigma_n, "h": h})
                mean, se = _mean_se(hs)
                means.append(mean)
                s = model.sigma_n
                c = rank_constant_for(model)
                bound = rank_lower_bound(n, s, c) if c is not None else None
                premise = c is not None and s <= 0.5
                nontrivial = bound is not None and bound > 0
                degenerate = s == 0 or m == 1
                ok = True
                if degenerate:
                    ok = max(hs) == 0
                elif premise and nontrivial:
                    ok = mean >= bound - 3 * se
                violations += int(not ok)
                summary.append({
                    "n": n, "m": m, "sigma": s, "mean_h": mean, "se_h": se, "max_h": max(hs), "c": c,
                    "bound": bound, "premise_ok": premise, "nontrivial": nontrivial, "holds": ok,
                })
            for row, nondecr in zip(summary[-len(means):], [True] + [b >= a for a, b in zip(means, means[1:])]):
                row["nondecreasing_in_n"] = nondecr
    info = {"c": rank_constant(), "violations": violations}
    return ExperimentReport("rankdiff", records, summary, violations, info, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# estimator consistency


def _ks_distance(sample: np.ndarray, oracle_sorted: np.ndarray) -> float:
    """``sup_x |F_sample(x) - F_oracle(x)|`` evaluated at the sample's jump points."""
    xs = np.sort(sample)
    k = xs.size
    right = np.arange(1, k + 1) / k
    left = np.arange(0, k) / k
    fo_right = np.searchsorted(oracle_sorted, xs, side="right") / oracle_sorted.size
    fo_left = np.searchsorted(oracle_sorted, xs, side="left") / oracle_sorted.size
    return float(max(np.abs(right - fo_right).max(), np.abs(left - fo_left).max()))


def _estimator_rep(model, colleges, r, stream=0):
    real = sample_market(model, r, colleges, stream=stream)
    mu = deferred_acceptance(profile_of(real), colleges.quotas)
    return real.X[:, 0].copy(), mu.assignment.copy(), real.Z


def _safe_rho(x, y, Z) -> float | None:
    keep = y != 0
    if keep.sum() < 3:
        return None
    return spearman_from_pairs(x[keep], Z[y[keep] - 1, 0], method="ranked")


def _median(values: Sequence[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def estimator_consistency_sweep(config: ExperimentConfig) -> ExperimentReport:
    """Errors of the CDF, sorting and kernel estimators against oracles at the largest ``n``.

    Oracles: pooled draws from ``n_target`` markets at the largest ``n`` for
    the conditional CDFs and choice probabilities and the mean ``rho_hat``
    over the same markets; ``rho_large`` is ``rho_hat`` on one market
    ``oracle_multiplier`` times larger.
    """
    start = time.perf_counter()
    ns = sorted(config.ns())
    sigma = config.sigmas()[0]
    n_max = ns[-1]
    base = sample_colleges(model_at(config.model, n=n_max, sigma=sigma))
    model_max = model_at(config.model, n=n_max, sigma=sigma)
    m = model_max.m
    oracle = _ordered_map(partial(_estimator_rep, model_max, frozen_colleges(model_max, base), stream=_ORACLE_STREAM),
                          range(config.n_target), config.threads)
    X_pool = np.concatenate([o[0] for o in oracle])
    Y_pool = np.concatenate([o[1] for o in oracle])
    prob = np.bincount(Y_pool, minlength=m + 1) / Y_pool.size
    probed = [j for j in range(1, m + 1) if prob[j] > config.min_college_prob]
    cdf_oracle = {j: np.sort(X_pool[Y_pool == j]) for j in probed}
    h_pool = default_pool_bandwidth(X_pool.size)
    p_oracle = {}
    for x0 in config.probes:
        w = np.clip(1.0 - ((X_pool - x0) / h_pool) ** 2, 0.0, None)
        for j in probed:
            p_oracle[(j, x0)] = float(w[Y_pool == j].sum() / w.sum()) if w.sum() > 0 else None
    rhos = [_safe_rho(x, y, base.Z) for x, y, _ in oracle]
    rhos = [r for r in rhos if r is not None]
    rho_oracle = float(np.mean(rhos)) if rhos else None
    big = model_at(config.model, n=n_max * config.oracle_multiplier, sigma=sigma)
    xb, yb, _ = _estimator_rep(big, frozen_colleges(big, base), 0, stream=_LARGE_STREAM)
    rho_large = _safe_rho(xb, yb, base.Z)
    del X_pool, Y_pool, oracle

    records, summary = [], []
    medians = {"cdf": [], "rho": [], "kernel": []}
    for n in ns:
        model = model_at(config.model, n=n, sigma=sigma)
        colleges = frozen_colleges(model, base)
        reps = _ordered_map(partial(_estimator_rep, model, colleges), range(config.replications), config.threads)
        errs = {"cdf": [], "rho": [], "kernel": []}
        window = ObservationWindow(np.arange(n), tuple(range(1, m + 1)))
        for r, (x, y, Z) in enumerate(reps):
            cdf_e = [_ks_distance(x[y == j], cdf_oracle[j]) for j in probed if np.any(y == j)]
            rho = _safe_rho(x, y, Z)
            mu = Matching(y, m)
            ker = []
            for x0 in config.probes:
                for j in probed:
                    p = kernel_conditional_prob(mu, x[:, None], window, j, [x0], kernel=config.kernel)
                    if p is not None and p_oracle[(j, x0)] is not None:
                        ker.append(abs(p - p_oracle[(j, x0)]))
            rec = {
                "replication_index": r, "seed": model.seed, "n": n,
                "cdf_error": max(cdf_e) if cdf_e else None,
                "rho_hat": rho,
                "rho_error": abs(rho - rho_oracle) if rho is not None and rho_oracle is not None else None,
                "kernel_error": max(ker) if ker else None,
            }
            records.append(rec)
            for key in errs:
                errs[key].append(rec[f"{key}_error"])
        row = {"n": n, "replications": config.replications}
        for key in errs:
            med = _median(errs[key])
            medians[key].append(med)
            row[f"median_{key}_error"] = med
        row["median_rho_hat"] = _median([rec["rho_hat"] for rec in records if rec["n"] == n])
        summary.append(row)

    def decreasing(seq):
        return all(a is not None and b is not None and a > b for a, b in zip(seq, seq[1:]))

    info = {
        "probed_colleges": probed,
        "college_probabilities": [float(p) for p in prob],
        "rho_oracle": rho_oracle,
        "rho_large": rho_large,
        "oracle_replications": config.n_target,
        "cdf_decreasing": decreasing(medians["cdf"]),
        "rho_decreasing": decreasing(medians["rho"]),
        "kernel_decreasing": decreasing(medians["kernel"]),
    }
    return ExperimentReport("estimators", records, summary, 0, info, time.perf_counter() - start)


def default_pool_bandwidth(size: int) -> float:
    return float(size) ** (-0.2)


# ---------------------------------------------------------------------------
# exchangeability


def _assignment_rep(model, colleges, r):
    real = sample_market(model, r, colleges)
    return deferred_acceptance(profile_of(real), colleges.quotas).assignment


def exchangeability_audit(config: ExperimentConfig) -> ExperimentReport:
    """Compare per-student match frequencies of the first and second half of the rows.

    With the college side frozen, student labels carry no information, so the
    two halves' frequency distributions should agree; a two-sample KS test at
    level ``ks_alpha`` is reported per college.
    """
    start = time.perf_counter()
    model = config.model
    colleges = sample_colleges(model)
    reps = _ordered_map(partial(_assignment_rep, model, colleges), range(config.replications), config.threads)
    assignments = np.stack(reps)
    half = model.n // 2
    summary = []
    for j in range(0, model.m + 1):
        freq = (assignments == j).mean(axis=0)
        res = sps.ks_2samp(freq[:half], freq[half: 2 * half])
        summary.append({
            "college": j, "ks_statistic": float(res.statistic), "p_value": float(res.pvalue),
            "passes": bool(res.pvalue >= config.ks_alpha),
        })
    records = [
        {"replication_index": r, "seed": model.seed, "fill_counts": np.bincount(a, minlength=model.m + 1).tolist()}
        for r, a in enumerate(assignments)
    ]
    row = summary[config.college]
    info = {"college": config.college, "ks_statistic": row["ks_statistic"], "p_value": row["p_value"], "passes": row["passes"]}
    return ExperimentReport("exchangeability", records, summary, 0, info, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# worked example


def example_fixtures_report(config: ExperimentConfig | None = None) -> ExperimentReport:
    from . import fixtures as fx

    start = time.perf_counter()
    rows = fx.comparison_rows()
    base, pert = fx.base_profile(), fx.perturbed_profile()
    records = []
    mismatches = 0
    for label, quotas in (("cascade", fx.QUOTAS_CASCADE), ("vacancy", fx.QUOTAS_VACANCY)):
        mu = deferred_acceptance(base, quotas)
        mu_p = deferred_acceptance(pert, quotas)
        for i in range(base.n):
            records.append({
                "replication_index": len(records), "seed": 0, "case": label, "student": f"i{i + 1}",
                "base": f"j{mu.assignment[i]}", "perturbed": f"j{mu_p.assignment[i]}",
            })
        checks = bounded_difference_check(base, pert, quotas)
        rows[[r["case"] for r in rows].index(label)].update({"k": checks["k"], "audit_violations": checks["violations"]})
        mismatches += checks["violations"]
    expected = {"cascade": (fx.SOSM_BASE, fx.SOSM_PERTURBED), "vacancy": (fx.SOSM_BASE, None)}
    for row in rows:
        got_base = tuple(int(t[1:]) for t in row["sosm_base"].split())
        got_pert = tuple(int(t[1:]) for t in row["sosm_perturbed"].split())
        want_base, want_pert = expected[row["case"]]
        ok = got_base == want_base and (want_pert is None or got_pert == want_pert)
        if row["case"] == "vacancy":
            ok &= row["changed_students"] == 1
        row["matches_reference"] = ok
        mismatches += int(not ok)
    info = {"h": max_rank_difference(base).h, "violations": mismatches}
    return ExperimentReport("example-fixtures", records, rows, mismatches, info, time.perf_counter() - start)


RUNNERS: dict[str, Callable[[ExperimentConfig], ExperimentReport]] = {
    "simulate": simulate,
    "audit-bdc": bounded_difference_audit,
    "audit-equilibration": equilibration_audit,
    "concentration": concentration_profile,
    "estimators": estimator_consistency_sweep,
    "rankdiff": rank_difference_scaling,
    "exchangeability": exchangeability_audit,
    "example-fixtures": example_fixtures_report,
}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    return RUNNERS[config.kind](config)
