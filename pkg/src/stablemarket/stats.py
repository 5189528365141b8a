"""Statistics computed from an observed matching."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .market import Matching

DIRECT_SPEARMAN_LIMIT = 20_000


@dataclass(frozen=True)
class ObservationWindow:
    """Observed students (row indices) and observed alternatives (subset of ``0..m``)."""

    students: np.ndarray
    colleges: tuple[int, ...]

    def __post_init__(self) -> None:
        s = np.asarray(self.students, dtype=np.int64)
        if s.size == 0:
            raise ValueError("window needs at least one student")
        if not self.colleges:
            raise ValueError("window needs at least one college")
        object.__setattr__(self, "students", s)
        object.__setattr__(self, "colleges", tuple(int(j) for j in self.colleges))

    @property
    def n_Z(self) -> int:
        return int(self.students.size)

    @property
    def m_Z(self) -> int:
        return len(self.colleges)

    @classmethod
    def full(cls, n: int, m: int, include_unmatched: bool = False) -> "ObservationWindow":
        start = 0 if include_unmatched else 1
        return cls(np.arange(n), tuple(range(start, m + 1)))

    @classmethod
    def fraction(
        cls, n: int, Z: np.ndarray, xi: np.ndarray, share: float, colleges: Sequence[int] | None = None
    ) -> "ObservationWindow":
        """First ``ceil(share * n)`` students after a shuffle seeded only by ``(Z, xi)``."""
        if not 0 < share <= 1:
            raise ValueError("share must lie in (0, 1]")
        digest = hashlib.sha256(np.ascontiguousarray(Z).tobytes() + np.ascontiguousarray(xi).tobytes()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        perm = rng.permutation(n)
        m = Z.shape[0]
        cols = tuple(range(1, m + 1)) if colleges is None else tuple(colleges)
        return cls(np.sort(perm[: math.ceil(share * n)]), cols)

    @classmethod
    def from_college_predicate(
        cls, n: int, Z: np.ndarray, predicate: Callable[[np.ndarray], bool]
    ) -> "ObservationWindow":
        cols = tuple(j + 1 for j in range(Z.shape[0]) if predicate(Z[j]))
        return cls(np.arange(n), cols)


# tau(j, X_rows, Z) -> values per row; bound(j, Z) -> float
Tau = Callable[[int, np.ndarray, np.ndarray], np.ndarray]
Bound = Callable[[int, np.ndarray], float]


@dataclass(frozen=True)
class StatisticSpec:
    tau: Tau
    b: Bound
    c: Bound
    name: str = "custom"

    def check_bounds(self, X: np.ndarray, Z: np.ndarray, colleges: Sequence[int], atol: float = 1e-12) -> bool:
        """Probe ``|tau_j| <= b_j`` and oscillation ``<= c_j`` on the rows of ``X``."""
        for j in colleges:
            vals = np.asarray(self.tau(j, X, Z), dtype=float)
            if self.b(j, Z) < 1 or self.c(j, Z) < 0:
                return False
            if np.abs(vals).max() > self.b(j, Z) + atol:
                return False
            if vals.max() - vals.min() > self.c(j, Z) + atol:
                return False
        return True


def indicator_spec() -> StatisticSpec:
    return StatisticSpec(
        tau=lambda j, X, Z: np.ones(X.shape[0]),
        b=lambda j, Z: 1.0,
        c=lambda j, Z: 0.0,
        name="matching_frequency",
    )


def characteristic_spec(A: Callable[[np.ndarray], np.ndarray]) -> StatisticSpec:
    return StatisticSpec(
        tau=lambda j, X, Z: np.asarray(A(X), dtype=float),
        b=lambda j, Z: 1.0,
        c=lambda j, Z: 1.0,
        name="characteristic_frequency",
    )


class ThetaHat(NamedTuple):
    value: float
    b_bar: float
    c_bar: float


def theta_hat(
    matching: Matching,
    X: np.ndarray,
    Z: np.ndarray,
    spec: StatisticSpec,
    window: ObservationWindow,
) -> ThetaHat:
    """Window average of ``tau_j(X_i, Z) 1{Y_i = j}`` summed over the observed colleges."""
    rows = window.students
    Y = matching.assignment[rows]
    Xw = X[rows]
    total = 0.0
    for j in window.colleges:
        hit = Y == j
        if hit.any():
            total += float(np.sum(np.asarray(spec.tau(j, Xw[hit], Z), dtype=float)))
    b_bar = float(sum(spec.b(j, Z) for j in window.colleges))
    c_bar = float(sum(spec.c(j, Z) for j in window.colleges))
    return ThetaHat(total / window.n_Z, b_bar, c_bar)


def matching_frequency(matching: Matching, window: ObservationWindow, j: int) -> float:
    Y = matching.assignment[window.students]
    return float(np.count_nonzero(Y == j)) / window.n_Z


def matching_frequencies(matching: Matching, window: ObservationWindow) -> np.ndarray:
    """Frequencies of every alternative ``0..m`` over the window students."""
    Y = matching.assignment[window.students]
    return np.bincount(Y, minlength=matching.m + 1) / window.n_Z


def characteristic_matching_frequency(
    matching: Matching,
    X: np.ndarray,
    Z: np.ndarray,
    window: ObservationWindow,
    A: Callable[[np.ndarray], np.ndarray],
    A_college: Callable[[np.ndarray], np.ndarray],
) -> float:
    """Share of window students with ``X_i in A`` matched to a college with ``Z_j in A'``.

    ``A`` maps the ``(n, x_dim)`` rows to booleans; ``A_college`` does the same
    for the ``(m, z_dim)`` college rows.
    """
    rows = window.students
    Y = matching.assignment[rows]
    in_A = np.asarray(A(X[rows]), dtype=bool)
    good_college = np.concatenate([[False], np.asarray(A_college(Z), dtype=bool)])
    return float(np.count_nonzero(in_A & good_college[Y])) / window.n_Z


def conditional_cdf(
    matching: Matching, X: np.ndarray, window: ObservationWindow, j: int, x
) -> float | None:
    """Empirical CDF of ``X`` among window students matched to ``j``; None if nobody is."""
    rows = window.students
    at_j = rows[matching.assignment[rows] == j]
    if at_j.size == 0:
        return None
    Xj = np.asarray(X)[at_j].reshape(at_j.size, -1)
    below = np.all(Xj <= np.asarray(x, dtype=float).reshape(1, -1), axis=1)
    return float(np.count_nonzero(below)) / at_j.size


def conditional_cdf_curve(
    matching: Matching, x_col: np.ndarray, window: ObservationWindow, j: int, grid: np.ndarray
) -> np.ndarray | None:
    """Vectorised scalar-``X`` version of :func:`conditional_cdf` over ``grid``."""
    rows = window.students
    vals = np.sort(np.asarray(x_col)[rows[matching.assignment[rows] == j]])
    if vals.size == 0:
        return None
    return np.searchsorted(vals, grid, side="right") / vals.size


def _matched_pairs(matching: Matching, X, Z, window, k: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    rows = window.students
    Y = matching.assignment[rows]
    keep = Y != 0
    x = np.asarray(X)[rows[keep]]
    x = x[:, k] if x.ndim == 2 else x
    z = np.asarray(Z)[Y[keep] - 1]
    z = z[:, r] if z.ndim == 2 else z
    return x.astype(float), z.astype(float)


def _spearman_parts_direct(x: np.ndarray, z: np.ndarray) -> tuple[int, int, int]:
    """Row-by-row evaluation of the leave-out double sum (integer numerators)."""
    n1 = x.size
    z_order = np.argsort(z, kind="stable")
    z_sorted = z[z_order]
    # index of the last sorted position with value <= z_l, for every l
    upto = np.searchsorted(z_sorted, z, side="right")
    joint = 0
    for i in range(n1):
        mx = x <= x[i]
        cum = np.concatenate([[0], np.cumsum(mx[z_order])])
        counts = cum[upto]  # sum_{i'} 1{x_i' <= x_i, z_i' <= z_l}
        counts = counts - (z[i] <= z)  # drop i' = i
        drop_l = mx.astype(np.int64)
        drop_l[i] = 0  # i' = l is already gone when l = i
        joint += int(np.sum(counts - drop_l))
    fx = int(np.sum(np.searchsorted(np.sort(x), x, side="right") - 1))
    fz = int(np.sum(np.searchsorted(z_sorted, z, side="right") - 1))
    return joint, fx, fz


def _spearman_parts_ranked(x: np.ndarray, z: np.ndarray) -> tuple[int, int, int]:
    """Same numerators via counting: ``sum_i' a_i' b_i' - sum b - sum (a - 1)``."""
    xs, zs = np.sort(x), np.sort(z)
    n1 = x.size
    a = n1 - np.searchsorted(xs, x, side="left")  # #{i: x_i >= x_i'}
    b = n1 - np.searchsorted(zs, z, side="left")  # #{l: z_l >= z_i'}
    ab = 0
    for start in range(0, n1, 1 << 16):
        ab += int(np.dot(a[start:start + (1 << 16)], b[start:start + (1 << 16)]))
    joint = ab - int(b.sum()) - int((a - 1).sum())
    fx = int(np.sum(np.searchsorted(xs, x, side="right") - 1))
    fz = int(np.sum(np.searchsorted(zs, z, side="right") - 1))
    return joint, fx, fz


def spearman_from_pairs(x: np.ndarray, z: np.ndarray, method: str = "auto") -> float:
    n1 = x.size
    if n1 < 3:
        raise ValueError(f"need at least 3 matched students, got {n1}")
    if method == "auto":
        method = "direct" if n1 <= DIRECT_SPEARMAN_LIMIT else "ranked"
    if method == "direct":
        joint, fx, fz = _spearman_parts_direct(x, z)
    elif method == "ranked":
        joint, fx, fz = _spearman_parts_ranked(x, z)
    else:
        raise ValueError(f"unknown method {method!r}")
    value = Fraction(12, n1 * n1) * (Fraction(joint, n1 - 2) - Fraction(fx * fz, (n1 - 1) ** 2))
    return float(value)


def spearman_rho_hat(
    matching: Matching,
    X: np.ndarray,
    Z: np.ndarray,
    window: ObservationWindow,
    k: int = 0,
    r: int = 0,
    method: str = "auto",
) -> float:
    """Leave-out Spearman-type sorting measure between ``X[:, k]`` and ``Z[Y_i - 1, r]``.

    Only matched window students enter.  ``method`` selects the row-by-row
    double sum (``"direct"``), the counting identity (``"ranked"``) or picks
    by size; both give the same rational number.
    """
    x, z = _matched_pairs(matching, X, Z, window, k, r)
    return spearman_from_pairs(x, z, method)


def epanechnikov(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def triangular(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.clip(1.0 - np.abs(u), 0.0, None)


KERNELS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "epanechnikov": epanechnikov,
    "triangular": triangular,
}


def product_kernel(U: np.ndarray, kernel: str = "epanechnikov") -> np.ndarray:
    K = KERNELS[kernel]
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        return K(U)
    return np.prod(K(U), axis=1)


def default_bandwidth(n_Z: int, d: int = 1) -> float:
    return float(n_Z) ** (-1.0 / (4 + d))


def kernel_conditional_prob(
    matching: Matching,
    X: np.ndarray,
    window: ObservationWindow,
    j: int,
    x,
    bandwidth: float | None = None,
    kernel: str = "epanechnikov",
) -> float | None:
    """Local-constant estimate of ``P{Y_i = j | X_i = x}``; None when no kernel mass at ``x``."""
    rows = window.students
    Xw = np.asarray(X, dtype=float)[rows]
    Xw = Xw.reshape(rows.size, -1)
    h = default_bandwidth(window.n_Z, Xw.shape[1]) if bandwidth is None else bandwidth
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    weights = product_kernel((Xw - np.asarray(x, dtype=float).reshape(1, -1)) / h, kernel)
    denom = weights.sum()
    if denom <= 0:
        return None
    hit = matching.assignment[rows] == j
    return float(weights[hit].sum() / denom)
