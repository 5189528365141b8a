"""Random markets: college characteristics, student qualities and the preferences they induce.

Colleges rank students by the priority index ``lambda(S_i) + sigma_n * eta_ij``
and admit only those at or above a threshold ``c_j``; students rank colleges
by ``g(X_i, Z_j) + xi_j + eps_ij`` against an outside-option utility.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import stats

from .market import PreferenceProfile, as_quotas


def sigma_schedule(n: int, kappa: float = 1.0, a: float = 0.75, b: float = 0.5) -> float:
    """``kappa * n^-a * (ln n)^-b``; for ``n < 3`` the log factor is frozen at ``ln 3``."""
    return kappa * n ** (-a) * math.log(max(n, 3)) ** (-b)


# name -> (scipy frozen-distribution factory taking `scale`, default scale)
NOISE_CATALOG: dict[str, Callable[[float], stats.rv_continuous]] = {
    "normal": lambda s: stats.norm(scale=s),
    "uniform": lambda s: stats.uniform(loc=-s, scale=2 * s),
    "logistic": lambda s: stats.logistic(scale=s),
    "gumbel": lambda s: stats.gumbel_r(scale=s),
}


@functools.lru_cache(maxsize=64)
def satisfies_tail_normalisation(dist: str, scale: float) -> bool:
    """Check ``P{|eta| > t} <= 2 exp(-t^2/2)`` on a dense grid of ``t``."""
    frozen = NOISE_CATALOG[dist](scale)
    t = np.linspace(0.0, 12.0, 2401)
    tail = frozen.sf(t) + frozen.cdf(-t)
    return bool(np.all(tail <= 2 * np.exp(-(t**2) / 2) + 1e-12))


def _lambda_first(X: np.ndarray) -> np.ndarray:
    return X[:, 0]


def _lambda_max(X: np.ndarray) -> np.ndarray:
    return X.max(axis=1)


@dataclass(frozen=True)
class LambdaSpec:
    """Vertical score ``lambda(S_i)`` with its quantile function and anti-concentration constant.

    ``anti_concentration(x_dim)`` returns C with
    ``sup_c P{c - t <= lambda <= c + t} <= C t`` when ``X ~ U[0,1]^x_dim``.
    """

    func: Callable[[np.ndarray], np.ndarray]
    quantile: Callable[[float, int], float]
    anti_concentration: Callable[[int], float]


LAMBDA_CATALOG: dict[str, LambdaSpec] = {
    "first_coordinate": LambdaSpec(_lambda_first, lambda p, d: p, lambda d: 2.0),
    "max_coordinate": LambdaSpec(_lambda_max, lambda p, d: p ** (1.0 / d), lambda d: 2.0 * d),
}

UTILITY_CATALOG = ("dot", "zero", "common")


@dataclass(frozen=True)
class ModelConfig:
    n: int
    m: int
    quotas: tuple[int, ...] | None = None
    capacity_ratio: float = 1.0
    sigma: float | None = None
    sigma_kappa: float = 1.0
    sigma_a: float = 0.75
    sigma_b: float = 0.5
    lambda_spec: str = "first_coordinate"
    utility: str = "dot"
    outside_utility: float = 0.0
    eta_dist: str = "normal"
    eta_scale: float = 1.0
    eps_dist: str = "normal"
    eps_scale: float = 1.0
    threshold: str = "none"
    threshold_p: float = 0.0
    x_dim: int = 1
    z_dim: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be at least 1")
        if self.sigma is not None and not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if self.capacity_ratio <= 0:
            raise ValueError("capacity_ratio must be positive")
        if self.quotas is not None:
            object.__setattr__(self, "quotas", tuple(int(q) for q in as_quotas(self.quotas, self.m)))
        if self.lambda_spec not in LAMBDA_CATALOG:
            raise ValueError(f"unknown lambda_spec {self.lambda_spec!r}")
        if self.utility not in UTILITY_CATALOG:
            raise ValueError(f"unknown utility {self.utility!r}")
        for name, dist, scale in (("eta", self.eta_dist, self.eta_scale), ("eps", self.eps_dist, self.eps_scale)):
            if dist not in NOISE_CATALOG:
                raise ValueError(f"unknown {name}_dist {dist!r}")
            if not scale > 0:
                raise ValueError(f"{name}_scale must be positive")
        if not satisfies_tail_normalisation(self.eta_dist, self.eta_scale):
            raise ValueError(
                f"eta distribution {self.eta_dist}(scale={self.eta_scale}) violates the tail bound 2exp(-t^2/2)"
            )
        if self.threshold not in ("none", "quantile"):
            raise ValueError(f"unknown threshold rule {self.threshold!r}")
        if not 0.0 <= self.threshold_p < 1.0:
            raise ValueError("threshold_p must lie in [0, 1)")
        if self.x_dim < 1 or self.z_dim < 1:
            raise ValueError("characteristic dimensions must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def sigma_n(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return sigma_schedule(self.n, self.sigma_kappa, self.sigma_a, self.sigma_b)

    def resolved_quotas(self) -> np.ndarray:
        if self.quotas is not None:
            return np.asarray(self.quotas, dtype=np.int64)
        q = max(1, math.ceil(self.capacity_ratio * self.n / self.m))
        return np.full(self.m, q, dtype=np.int64)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def college_rng(config: ModelConfig) -> np.random.Generator:
    return _rng(config.seed, 0)


def student_rng(config: ModelConfig, replication: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for replication ``replication`` of the student draw.

    Distinct ``stream`` values never share draws; experiments use stream 1 for
    target estimation and stream 2 for high-replication oracles.
    """
    return _rng(config.seed, 1 + stream, replication)


@dataclass(frozen=True)
class CollegeDraw:
    """The college side ``(Z, xi)`` plus the thresholds and quotas it determines."""

    Z: np.ndarray
    xi: np.ndarray
    c: np.ndarray
    quotas: np.ndarray


@dataclass(frozen=True, eq=False)
class MarketRealization:
    X: np.ndarray
    eps: np.ndarray
    eta: np.ndarray
    Z: np.ndarray
    xi: np.ndarray
    omega: np.ndarray
    c: np.ndarray
    quotas: np.ndarray
    lam: np.ndarray
    utility: np.ndarray  # (n, m+1), column 0 is the outside option
    sigma: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.Z.shape[0]

    @property
    def colleges(self) -> CollegeDraw:
        return CollegeDraw(self.Z, self.xi, self.c, self.quotas)


def _noise(rng: np.random.Generator, dist: str, scale: float, size) -> np.ndarray:
    if dist == "normal":
        return rng.standard_normal(size) * scale
    if dist == "uniform":
        return rng.uniform(-scale, scale, size)
    if dist == "logistic":
        return rng.logistic(0.0, scale, size)
    if dist == "gumbel":
        return rng.gumbel(0.0, scale, size)
    raise ValueError(dist)


def sample_colleges(config: ModelConfig, rng: np.random.Generator | None = None) -> CollegeDraw:
    rng = college_rng(config) if rng is None else rng
    Z = rng.standard_normal((config.m, config.z_dim))
    xi = rng.standard_normal(config.m)
    if config.threshold == "quantile" and config.threshold_p > 0:
        level = LAMBDA_CATALOG[config.lambda_spec].quantile(config.threshold_p, config.x_dim)
        c = np.full(config.m, level)
    else:
        c = np.full(config.m, -np.inf)
    return CollegeDraw(Z, xi, c, config.resolved_quotas())


def sample_student_rows(
    config: ModelConfig, rng: np.random.Generator, count: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``count`` i.i.d. rows of ``(X_i, eps_i., eta_i.)``."""
    X = rng.uniform(0.0, 1.0, (count, config.x_dim))
    eps = _noise(rng, config.eps_dist, config.eps_scale, (count, config.m))
    eta = _noise(rng, config.eta_dist, config.eta_scale, (count, config.m))
    return X, eps, eta


def assemble(
    config: ModelConfig, colleges: CollegeDraw, X: np.ndarray, eps: np.ndarray, eta: np.ndarray
) -> MarketRealization:
    sigma = config.sigma_n
    lam = LAMBDA_CATALOG[config.lambda_spec].func(X)
    omega = lam[:, None] + sigma * eta
    n, m = X.shape[0], colleges.Z.shape[0]
    if config.utility == "dot":
        d = min(config.x_dim, config.z_dim)
        systematic = X[:, :d] @ colleges.Z[:, :d].T + colleges.xi[None, :]
    elif config.utility == "common":
        systematic = np.broadcast_to(colleges.Z[:, 0][None, :], (n, m))
    else:
        systematic = np.zeros((n, m))
    utility = np.empty((n, m + 1))
    utility[:, 0] = config.outside_utility
    utility[:, 1:] = systematic + eps
    return MarketRealization(
        X=X, eps=eps, eta=eta, Z=colleges.Z, xi=colleges.xi, omega=omega, c=colleges.c,
        quotas=colleges.quotas, lam=lam, utility=utility, sigma=sigma,
    )


def sample_market(
    config: ModelConfig,
    replication: int = 0,
    colleges: CollegeDraw | None = None,
    stream: int = 0,
) -> MarketRealization:
    """Draw ``(Z, xi)`` (unless frozen via ``colleges``) and then ``n`` student rows.

    Deterministic in ``(config.seed, replication)``.
    """
    colleges = sample_colleges(config) if colleges is None else colleges
    X, eps, eta = sample_student_rows(config, student_rng(config, replication, stream), config.n)
    return assemble(config, colleges, X, eps, eta)


def resample_student(
    config: ModelConfig, real: MarketRealization, i: int, rng: np.random.Generator
) -> MarketRealization:
    """Replace the whole quality row of student ``i`` with a fresh draw."""
    x, e, h = sample_student_rows(config, rng, 1)
    X, eps, eta = real.X.copy(), real.eps.copy(), real.eta.copy()
    X[i], eps[i], eta[i] = x[0], e[0], h[0]
    return assemble(config, real.colleges, X, eps, eta)


def permute_students(real: MarketRealization, perm: np.ndarray) -> MarketRealization:
    perm = np.asarray(perm)
    return replace(
        real, X=real.X[perm], eps=real.eps[perm], eta=real.eta[perm], omega=real.omega[perm],
        lam=real.lam[perm], utility=real.utility[perm],
    )


@dataclass
class TieDiagnostics:
    student_ties: int = 0
    college_ties: int = 0


def _order_descending(scores: np.ndarray) -> tuple[np.ndarray, int]:
    """Row-wise descending order; equal scores keep column order. Returns (order, #ties)."""
    order = np.argsort(-scores, axis=1, kind="stable")
    sorted_scores = np.take_along_axis(scores, order, axis=1)
    ties = int(np.sum(sorted_scores[:, 1:] == sorted_scores[:, :-1]))
    return order, ties


def order_colleges(omega: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, int]:
    """College orderings over tokens ``{0..n}`` from priorities ``omega`` (n, m) and thresholds ``c``.

    Ties between students go to the lower row; a student whose index equals
    the threshold is acceptable.
    """
    n, m = omega.shape
    scores = np.empty((m, n + 1))
    scores[:, :n] = omega.T
    scores[:, n] = c
    order, ties = _order_descending(scores)
    tokens = np.where(order == n, 0, order + 1)
    return tokens, ties


def derive_college_preferences(real: MarketRealization) -> tuple[np.ndarray, int]:
    return order_colleges(real.omega, real.c)


def derive_student_preferences(real: MarketRealization) -> tuple[np.ndarray, int]:
    """Student orderings over ``{0..m}``; ties go to the lower index (outside option first)."""
    return _order_descending(real.utility)


def derive_preferences(real: MarketRealization) -> tuple[PreferenceProfile, TieDiagnostics]:
    v, st = derive_student_preferences(real)
    w, ct = derive_college_preferences(real)
    return PreferenceProfile(v, w), TieDiagnostics(st, ct)


def profile_of(real: MarketRealization) -> PreferenceProfile:
    return derive_preferences(real)[0]


@dataclass(frozen=True)
class ReportProfile:
    """What agents submit: rank-order lists and, per college, (priorities, threshold)."""

    student_reports: np.ndarray  # (n, m+1) orderings of {0..m}
    priorities: np.ndarray  # (m, n)
    thresholds: np.ndarray  # (m,)

    def decode(self) -> PreferenceProfile:
        w, _ = order_colleges(self.priorities.T, self.thresholds)
        return PreferenceProfile(self.student_reports, w)


ReportMap = Callable[[MarketRealization], ReportProfile]


def truthful_report(real: MarketRealization) -> ReportProfile:
    v, _ = derive_student_preferences(real)
    return ReportProfile(v, real.omega.T.copy(), real.c.copy())
