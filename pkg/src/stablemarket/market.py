"""Market primitives: preference profiles, matchings and stability predicates.

Encoding conventions used throughout the package:

* colleges are numbered ``1..m`` and ``0`` is the outside option (being
  unmatched);
* students are array rows ``0..n-1``.  Inside a college ordering the
  student in row ``i`` appears as the token ``i + 1`` and ``0`` marks the
  acceptability cutoff, so ``w[j - 1]`` is an ordering of ``{0, 1, .., n}``;
* a matching is an integer vector of length ``n`` with entries in ``0..m``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

OUTSIDE = 0


def _check_orderings(arr: np.ndarray, size: int, what: str) -> None:
    if arr.ndim != 2 or arr.shape[1] != size:
        raise ValueError(f"{what} must have shape (rows, {size}), got {arr.shape}")
    if arr.size == 0:
        return
    if arr.min() < 0 or arr.max() >= size:
        raise ValueError(f"{what} entries must lie in 0..{size - 1}")
    seen = np.zeros(arr.shape, dtype=bool)
    np.put_along_axis(seen, arr, True, axis=1)
    if not seen.all():
        bad = int(np.flatnonzero(~seen.all(axis=1))[0])
        raise ValueError(f"{what} row {bad} is not a permutation (ties or gaps)")


def _inverse(order: np.ndarray) -> np.ndarray:
    rank = np.empty_like(order)
    rows = np.arange(order.shape[0])[:, None]
    rank[rows, order] = np.arange(order.shape[1], dtype=order.dtype)[None, :]
    return rank


@dataclass(frozen=True, eq=False)
class PreferenceProfile:
    """Strict preferences of ``n`` students and ``m`` colleges.

    ``v[i]`` lists ``{0..m}`` from best to worst for student row ``i``;
    ``w[j-1]`` lists ``{0..n}`` from best to worst for college ``j``.
    Acceptability is read off the position of ``0``.
    """

    v: np.ndarray
    w: np.ndarray

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.v, dtype=np.int64)
        w = np.ascontiguousarray(self.w, dtype=np.int64)
        if v.ndim != 2 or w.ndim != 2:
            raise ValueError("v and w must be two-dimensional")
        n, m = v.shape[0], w.shape[0]
        _check_orderings(v, m + 1, "student orderings")
        _check_orderings(w, n + 1, "college orderings")
        v.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_lists(
        cls,
        students: Sequence[Sequence[int]],
        colleges: Sequence[Sequence[int]],
    ) -> "PreferenceProfile":
        """Build a profile from (possibly truncated) 1-based preference lists.

        Alternatives missing from a list are appended after it in increasing
        order, with the outside option ``0`` placed first among them, so
        ``[2, 3, 1]`` means "all colleges acceptable, 0 last".
        """
        n, m = len(students), len(colleges)

        def complete(seq: Sequence[int], size: int) -> list[int]:
            seq = list(seq)
            rest = [a for a in range(size) if a not in seq]
            return seq + rest

        v = np.array([complete(s, m + 1) for s in students], dtype=np.int64).reshape(n, m + 1)
        w = np.array([complete(c, n + 1) for c in colleges], dtype=np.int64).reshape(m, n + 1)
        return cls(v, w)

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def m(self) -> int:
        return self.w.shape[0]

    @cached_property
    def student_rank(self) -> np.ndarray:
        """``student_rank[i, j]``: position of alternative ``j`` in ``v[i]``."""
        return _inverse(self.v)

    @cached_property
    def college_rank(self) -> np.ndarray:
        """``college_rank[j-1, t]``: position of token ``t`` in ``w[j-1]``."""
        return _inverse(self.w)

    @cached_property
    def acceptable(self) -> np.ndarray:
        """``acceptable[j-1, i]`` is True when student row ``i`` ranks above 0 at ``j``."""
        cr = self.college_rank
        return cr[:, 1:] < cr[:, :1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PreferenceProfile):
            return NotImplemented
        return np.array_equal(self.v, other.v) and np.array_equal(self.w, other.w)

    def __hash__(self) -> int:
        return hash((self.v.tobytes(), self.w.tobytes(), self.v.shape, self.w.shape))


@dataclass(frozen=True, eq=False)
class Matching:
    """Assignment of student rows to colleges ``1..m`` (``0`` = unmatched)."""

    assignment: np.ndarray
    m: int

    def __post_init__(self) -> None:
        a = np.array(self.assignment, dtype=np.int64).reshape(-1)
        if a.size and (a.min() < 0 or a.max() > self.m):
            raise ValueError(f"assignment entries must lie in 0..{self.m}")
        a.flags.writeable = False
        object.__setattr__(self, "assignment", a)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def fill_counts(self) -> np.ndarray:
        """Length ``m + 1`` vector; entry 0 counts unmatched students."""
        return np.bincount(self.assignment, minlength=self.m + 1)

    def roster(self, j: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.assignment == j).tolist())

    def rosters(self) -> list[frozenset[int]]:
        """Rosters of colleges ``1..m`` (index 0 of the result is college 1)."""
        return [self.roster(j) for j in range(1, self.m + 1)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Matching):
            return NotImplemented
        return self.m == other.m and np.array_equal(self.assignment, other.assignment)

    def __hash__(self) -> int:
        return hash((self.m, self.assignment.tobytes()))

    def __repr__(self) -> str:
        return f"Matching({self.assignment.tolist()}, m={self.m})"


def as_quotas(quotas: Iterable[int], m: int | None = None) -> np.ndarray:
    q = np.asarray(list(quotas), dtype=np.int64)
    if q.ndim != 1:
        raise ValueError("quotas must be a vector")
    if m is not None and q.shape[0] != m:
        raise ValueError(f"expected {m} quotas, got {q.shape[0]}")
    if q.size and q.min() < 1:
        raise ValueError("every quota must be at least 1")
    return q


@dataclass(frozen=True)
class Validity:
    valid: bool
    college: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.valid


def validate_matching(matching: Matching, quotas: Iterable[int]) -> Validity:
    """Capacity check; reports the first college above its quota."""
    q = as_quotas(quotas, matching.m)
    fill = matching.fill_counts()[1:]
    over = np.flatnonzero(fill > q)
    if over.size:
        j = int(over[0]) + 1
        return Validity(False, j, f"college {j} holds {int(fill[j - 1])} > quota {int(q[j - 1])}")
    return Validity(True)


@dataclass(frozen=True)
class BlockingPair:
    student: int
    college: int


def _blocking_matrix(
    assignments: np.ndarray, profile: PreferenceProfile, q: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised clause-(1)/(2) evaluation over a batch of assignments.

    Returns ``(blocking, ir_ok)`` where ``blocking[k, i, j-1]`` flags the pair
    (i, j) for candidate ``k`` and ``ir_ok[k]`` is individual rationality.
    """
    A = np.atleast_2d(assignments)
    K, n = A.shape
    m = profile.m
    sr = profile.student_rank  # (n, m+1)
    cr = profile.college_rank  # (m, n+1)
    rows = np.arange(n)[None, :]
    cur = sr[rows, A]  # (K, n) rank of current partner
    prefers = sr[None, :, 1:] < cur[:, :, None]  # (K, n, m)

    stud_rank_at = cr[:, 1:].T  # (n, m): rank of student i at college j
    cut = cr[:, 0]  # (m,)
    onehot = A[:, :, None] == np.arange(1, m + 1)[None, None, :]  # (K, n, m)
    fill = onehot.sum(axis=1)  # (K, m)
    worst = np.where(onehot, stud_rank_at[None, :, :], -1).max(axis=1)  # (K, m)
    full = fill >= q[None, :]
    accept = np.where(
        full[:, None, :],
        stud_rank_at[None, :, :] < worst[:, None, :],
        (stud_rank_at < cut[None, :])[None, :, :],
    )
    blocking = prefers & accept

    student_ir = cur <= sr[None, :, 0]
    held_bad = onehot & (stud_rank_at > cut[None, :])[None, :, :]
    ir_ok = student_ir.all(axis=1) & ~held_bad.any(axis=(1, 2))
    return blocking, ir_ok


def blocking_pairs(
    matching: Matching, profile: PreferenceProfile, quotas: Iterable[int]
) -> list[BlockingPair]:
    q = as_quotas(quotas, profile.m)
    blocking, _ = _blocking_matrix(matching.assignment[None, :], profile, q)
    ii, jj = np.nonzero(blocking[0])
    return [BlockingPair(int(i), int(j) + 1) for i, j in zip(ii, jj)]


def is_individually_rational(matching: Matching, profile: PreferenceProfile) -> bool:
    q = np.full(profile.m, matching.n + 1, dtype=np.int64)
    _, ir = _blocking_matrix(matching.assignment[None, :], profile, q)
    return bool(ir[0])


def is_stable(matching: Matching, profile: PreferenceProfile, quotas: Iterable[int]) -> bool:
    q = as_quotas(quotas, profile.m)
    blocking, ir = _blocking_matrix(matching.assignment[None, :], profile, q)
    return bool(ir[0]) and not blocking[0].any()


class MatchingClass(enum.IntEnum):
    """Ordered so that a larger value is a stronger property."""

    UNSTABLE = 0
    INDIVIDUALLY_RATIONAL = 1
    ENVY_FREE = 2
    ONE_ENVY_FREE = 3
    STABLE = 4


def classify_matching(
    matching: Matching, profile: PreferenceProfile, quotas: Iterable[int]
) -> MatchingClass:
    q = as_quotas(quotas, profile.m)
    blocking, ir = _blocking_matrix(matching.assignment[None, :], profile, q)
    if not ir[0]:
        return MatchingClass.UNSTABLE
    blockers = np.flatnonzero(blocking[0].any(axis=1))
    if blockers.size == 0:
        return MatchingClass.STABLE
    if np.any(matching.assignment[blockers] != OUTSIDE):
        return MatchingClass.INDIVIDUALLY_RATIONAL
    if blockers.size == 1:
        return MatchingClass.ONE_ENVY_FREE
    return MatchingClass.ENVY_FREE


def enumerate_stable_matchings(
    profile: PreferenceProfile,
    quotas: Iterable[int],
    max_students: int = 8,
    max_colleges: int = 4,
    chunk: int = 1 << 15,
) -> list[Matching]:
    """Every stable matching, found by exhaustive search.

    Candidates are visited in lexicographic order of the assignment vector,
    which is also the order of the result.
    """
    n, m = profile.n, profile.m
    if n > max_students or m > max_colleges:
        raise ValueError(
            f"brute force refused for n={n}, m={m} (caps n<={max_students}, m<={max_colleges})"
        )
    q = as_quotas(quotas, m)
    if n == 0:
        return [Matching(np.zeros(0, dtype=np.int64), m)]
    out: list[Matching] = []
    product = itertools.product(range(m + 1), repeat=n)
    while True:
        block = np.array(list(itertools.islice(product, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        block = block.reshape(-1, n)
        fill = np.stack([(block == j).sum(axis=1) for j in range(1, m + 1)], axis=1)
        block = block[(fill <= q[None, :]).all(axis=1)]
        if block.size == 0:
            continue
        blocking, ir = _blocking_matrix(block, profile, q)
        keep = ir & ~blocking.any(axis=(1, 2))
        out.extend(Matching(a, m) for a in block[keep])
    return out


@dataclass(frozen=True)
class RankDiffReport:
    """Maximum rank difference and, when positive, one pair attaining it.

    ``witness`` is ``(upper, lower, college)`` with students given as
    ordering tokens (``0`` is the outside option, row ``i`` is ``i + 1``)
    and ``upper`` ranked above ``lower`` at ``college``.
    """

    h: int
    witness: tuple[int, int, int] | None = None


def max_rank_difference(w: np.ndarray | PreferenceProfile) -> RankDiffReport:
    """Largest rank gap at any college between two disputed tokens.

    A pair is disputed when two colleges order it differently.  For a fixed
    college ``j`` and another college ``j'``, the lowest disputed partner of
    the token at position ``p`` of ``w_j`` is the last position ``q`` whose
    ``j'``-rank beats it; suffix minima of the ``j'``-ranks make that a
    binary search, for ``O(m^2 n log n)`` overall.
    """
    if isinstance(w, PreferenceProfile):
        w = w.w
    w = np.asarray(w, dtype=np.int64)
    m, size = w.shape
    if m < 2 or size < 2:
        return RankDiffReport(0)
    rank = _inverse(w)
    best_h, best = 0, None
    positions = np.arange(size)
    for j in range(m):
        order = w[j]
        gap_j = np.full(size, -1, dtype=np.int64)
        for jp in range(m):
            if jp == j:
                continue
            seq = rank[jp][order]  # j'-ranks listed in j-order
            sufmin = np.minimum.accumulate(seq[::-1])[::-1]
            last = np.searchsorted(sufmin, seq, side="left") - 1
            gap_j = np.maximum(gap_j, last - positions)
        p = int(np.argmax(gap_j))
        if gap_j[p] > best_h:
            best_h = int(gap_j[p])
            best = (int(order[p]), int(order[p + best_h]), j + 1)
    return RankDiffReport(best_h, best)
