"""Deferred acceptance, student removal/embedding and the re-stabilisation operator."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence, TextIO

import numba
import numpy as np

from .market import (
    OUTSIDE,
    Matching,
    MatchingClass,
    PreferenceProfile,
    _blocking_matrix,
    as_quotas,
)


@numba.njit(cache=True)
def _student_proposing(v, college_rank, quotas, order):
    n, width = v.shape
    m = width - 1
    offsets = np.zeros(m + 1, dtype=np.int64)
    for j in range(m):
        offsets[j + 1] = offsets[j] + quotas[j]
    heap_rank = np.empty(offsets[m], dtype=np.int64)
    heap_student = np.empty(offsets[m], dtype=np.int64)
    size = np.zeros(m, dtype=np.int64)
    nxt = np.zeros(n, dtype=np.int64)
    assign = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    for k in range(n - 1, -1, -1):
        stack[top] = order[k]
        top += 1
    while top > 0:
        top -= 1
        i = stack[top]
        while nxt[i] < width:
            j = v[i, nxt[i]]
            nxt[i] += 1
            if j == 0:
                break
            c = j - 1
            r = college_rank[c, i + 1]
            if r > college_rank[c, 0]:
                continue
            base = offsets[c]
            s = size[c]
            if s < quotas[c]:
                # sift up in a max-heap keyed by rank (worst student on top)
                pos = s
                while pos > 0:
                    parent = (pos - 1) // 2
                    if heap_rank[base + parent] >= r:
                        break
                    heap_rank[base + pos] = heap_rank[base + parent]
                    heap_student[base + pos] = heap_student[base + parent]
                    pos = parent
                heap_rank[base + pos] = r
                heap_student[base + pos] = i
                size[c] = s + 1
                assign[i] = j
                break
            if r < heap_rank[base]:
                out = heap_student[base]
                pos = 0
                while True:
                    left = 2 * pos + 1
                    if left >= s:
                        break
                    child = left
                    right = left + 1
                    if right < s and heap_rank[base + right] > heap_rank[base + left]:
                        child = right
                    if heap_rank[base + child] <= r:
                        break
                    heap_rank[base + pos] = heap_rank[base + child]
                    heap_student[base + pos] = heap_student[base + child]
                    pos = child
                heap_rank[base + pos] = r
                heap_student[base + pos] = i
                assign[i] = j
                assign[out] = 0
                stack[top] = out
                top += 1
                break
    return assign


@numba.njit(cache=True)
def _college_proposing(w, student_rank, quotas):
    m, width = w.shape
    n = width - 1
    held = np.zeros(m, dtype=np.int64)
    nxt = np.zeros(m, dtype=np.int64)
    assign = np.zeros(n, dtype=np.int64)
    stack = np.empty(m * (n + 1) + m, dtype=np.int64)
    top = 0
    for c in range(m - 1, -1, -1):
        stack[top] = c
        top += 1
    while top > 0:
        top -= 1
        c = stack[top]
        j = c + 1
        while held[c] < quotas[c] and nxt[c] < width:
            t = w[c, nxt[c]]
            nxt[c] += 1
            if t == 0:
                nxt[c] = width
                break
            i = t - 1
            r = student_rank[i, j]
            if r > student_rank[i, 0]:
                continue
            cur = assign[i]
            if cur != 0 and student_rank[i, cur] < r:
                continue
            if cur != 0:
                held[cur - 1] -= 1
                stack[top] = cur - 1
                top += 1
            assign[i] = j
            held[c] += 1
    return assign


def deferred_acceptance(
    profile: PreferenceProfile,
    quotas: Iterable[int],
    order: Sequence[int] | None = None,
) -> Matching:
    """Student-proposing deferred acceptance; returns the student-optimal stable matching.

    Students enter in ``order`` (default: index order) and a rejected student
    proposes again straight away.  The result does not depend on ``order``.
    """
    q = as_quotas(quotas, profile.m)
    if order is None:
        order = np.arange(profile.n, dtype=np.int64)
    else:
        order = np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(profile.n)):
            raise ValueError("order must be a permutation of the student rows")
    assign = _student_proposing(profile.v, profile.college_rank, q, order)
    return Matching(assign, profile.m)


def deferred_acceptance_college_proposing(
    profile: PreferenceProfile, quotas: Iterable[int]
) -> Matching:
    """College-proposing deferred acceptance (college-optimal stable matching)."""
    q = as_quotas(quotas, profile.m)
    assign = _college_proposing(profile.w, profile.student_rank, q)
    return Matching(assign, profile.m)


def remove_student(profile: PreferenceProfile, i: int) -> PreferenceProfile:
    """Market with student row ``i`` eliminated; college orders keep relative positions."""
    n = profile.n
    if not 0 <= i < n:
        raise IndexError(f"student {i} out of range for n={n}")
    v = np.delete(profile.v, i, axis=0)
    token = i + 1
    w = profile.w[profile.w != token].reshape(profile.m, n)
    w = np.where(w > token, w - 1, w)
    return PreferenceProfile(v, w)


def embed_without_student(mu_reduced: Matching, i: int) -> Matching:
    """Lift a matching of the reduced market back to ``n`` students, leaving ``i`` unmatched."""
    if not 0 <= i <= mu_reduced.n:
        raise IndexError(f"insert position {i} out of range")
    return Matching(np.insert(mu_reduced.assignment, i, OUTSIDE), mu_reduced.m)


class RestabilizationError(RuntimeError):
    pass


class NotOneEnvyFree(ValueError):
    pass


@dataclass(frozen=True)
class RestabStep:
    student: int
    college: int
    displaced: int | None


@dataclass
class RestabTrace:
    steps: list[RestabStep] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.steps)

    def to_jsonl(self, fh: TextIO) -> None:
        for k, step in enumerate(self.steps):
            fh.write(json.dumps({"step": k, **asdict(step)}, sort_keys=True) + "\n")


def _blockers(matching: Matching, profile: PreferenceProfile, q: np.ndarray):
    blocking, ir = _blocking_matrix(matching.assignment[None, :], profile, q)
    return blocking[0], bool(ir[0])


def student_maximal_blocking_pair(
    matching: Matching, profile: PreferenceProfile, quotas: Iterable[int]
) -> tuple[int, int] | None:
    """The unique student-maximal blocking pair of a 1-envy-free matching, or None if stable."""
    q = as_quotas(quotas, profile.m)
    blocking, ir = _blockers(matching, profile, q)
    students = np.flatnonzero(blocking.any(axis=1))
    if not ir or students.size > 1 or np.any(matching.assignment[students] != OUTSIDE):
        raise NotOneEnvyFree("matching is not 1-envy-free")
    if students.size == 0:
        return None
    i = int(students[0])
    cols = np.flatnonzero(blocking[i]) + 1
    j = int(cols[np.argmin(profile.student_rank[i, cols])])
    return i, j


def _satisfy(
    assign: np.ndarray, profile: PreferenceProfile, q: np.ndarray, i: int, j: int
) -> int | None:
    roster = np.flatnonzero(assign == j)
    displaced = None
    if roster.size >= q[j - 1]:
        ranks = profile.college_rank[j - 1, roster + 1]
        displaced = int(roster[np.argmax(ranks)])
        assign[displaced] = OUTSIDE
    assign[i] = j
    return displaced


def restabilize_step(
    matching: Matching, profile: PreferenceProfile, quotas: Iterable[int]
) -> tuple[Matching, RestabStep | None]:
    """One application of the operator: satisfy the student-maximal blocking pair."""
    q = as_quotas(quotas, profile.m)
    pair = student_maximal_blocking_pair(matching, profile, q)
    if pair is None:
        return matching, None
    i, j = pair
    assign = matching.assignment.copy()
    displaced = _satisfy(assign, profile, q, i, j)
    return Matching(assign, matching.m), RestabStep(i, j, displaced)


def _best_blocking_college(
    i: int,
    assign: np.ndarray,
    fill: np.ndarray,
    worst: np.ndarray,
    profile: PreferenceProfile,
    q: np.ndarray,
) -> int | None:
    cr = profile.college_rank
    current = assign[i]
    for j in profile.v[i]:
        if j == current:
            return None
        if j == OUTSIDE:
            continue
        r = cr[j - 1, i + 1]
        if fill[j - 1] < q[j - 1]:
            if r < cr[j - 1, 0]:
                return int(j)
        elif r < worst[j - 1]:
            return int(j)
    return None


def restabilize(
    matching: Matching,
    profile: PreferenceProfile,
    quotas: Iterable[int],
    verify: bool = False,
) -> tuple[Matching, RestabTrace]:
    """Iterate the re-stabilisation operator to its stable fixed point.

    After each step only the student just displaced can block, so the loop
    tracks that single candidate.  ``verify=True`` recomputes the full
    blocking set at every step and checks it agrees with the tracked pair.
    """
    q = as_quotas(quotas, profile.m)
    pair = student_maximal_blocking_pair(matching, profile, q)
    trace = RestabTrace()
    if pair is None:
        return matching, trace
    n, m = profile.n, profile.m
    cap = n * m * int(q.max()) + 1
    assign = matching.assignment.copy()
    cr = profile.college_rank
    fill = np.bincount(assign, minlength=m + 1)[1:].astype(np.int64)
    worst = np.full(m, -1, dtype=np.int64)
    matched = np.flatnonzero(assign)
    np.maximum.at(worst, assign[matched] - 1, cr[assign[matched] - 1, matched + 1])

    candidate: int | None = pair[0]
    while candidate is not None:
        i = candidate
        j = _best_blocking_college(i, assign, fill, worst, profile, q)
        if verify:
            expected = student_maximal_blocking_pair(Matching(assign, m), profile, q)
            got = None if j is None else (i, j)
            if expected != got:
                raise RestabilizationError(f"tracked pair {got} != recomputed {expected}")
        if j is None:
            break
        if len(trace.steps) >= cap:
            raise RestabilizationError(f"iteration cap {cap} exceeded")
        displaced = _satisfy(assign, profile, q, i, j)
        if displaced is None:
            fill[j - 1] += 1
        roster = np.flatnonzero(assign == j)
        worst[j - 1] = cr[j - 1, roster + 1].max()
        trace.steps.append(RestabStep(i, j, displaced))
        candidate = displaced
    result = Matching(assign, m)
    if verify and student_maximal_blocking_pair(result, profile, q) is not None:
        raise RestabilizationError("fixed point is not stable")
    return result, trace


@dataclass(frozen=True)
class RelatedMarket:
    """One-to-one market obtained by splitting college ``j`` into ``q_j`` positions.

    Positions are numbered ``1..sum(q)``; ``positions[p-1] = (j, l)`` names
    the ``l``-th seat (1-based) of college ``j``.
    """

    profile: PreferenceProfile
    positions: tuple[tuple[int, int], ...]
    source: PreferenceProfile

    @property
    def quotas(self) -> np.ndarray:
        return np.ones(len(self.positions), dtype=np.int64)

    def to_one_to_one(self, matching: Matching) -> Matching:
        """Fill each college's seats with its roster in its own preference order."""
        first = {}
        for p, (j, l) in enumerate(self.positions, start=1):
            if l == 1:
                first[j] = p
        out = np.zeros(matching.n, dtype=np.int64)
        cr = self.source.college_rank
        for j in range(1, matching.m + 1):
            roster = np.flatnonzero(matching.assignment == j)
            roster = roster[np.argsort(cr[j - 1, roster + 1], kind="stable")]
            out[roster] = first[j] + np.arange(roster.size)
        return Matching(out, len(self.positions))

    def to_many_to_one(self, matching: Matching) -> Matching:
        college = np.array([0] + [j for j, _ in self.positions], dtype=np.int64)
        return Matching(college[matching.assignment], self.source.m)


def to_related_one_to_one(profile: PreferenceProfile, quotas: Iterable[int]) -> RelatedMarket:
    q = as_quotas(quotas, profile.m)
    positions = tuple((j, l) for j in range(1, profile.m + 1) for l in range(1, q[j - 1] + 1))
    first = np.concatenate([[0], np.cumsum(q)])  # seat p of college j is first[j-1] + l
    v = []
    for row in profile.v:
        expanded = []
        for j in row:
            if j == OUTSIDE:
                expanded.append(0)
            else:
                expanded.extend(range(first[j - 1] + 1, first[j] + 1))
        v.append(expanded)
    w = np.repeat(profile.w, q, axis=0)
    return RelatedMarket(PreferenceProfile(np.array(v, dtype=np.int64), w), positions, profile)


@dataclass(frozen=True)
class PerturbationDiff:
    """Indicator changes per alternative ``0..m`` between two matchings."""

    per_college: np.ndarray
    total_changed: int
    k: int

    @property
    def max_per_college(self) -> int:
        return int(self.per_college.max()) if self.per_college.size else 0


def perturbation_diff(mu: Matching, mu_prime: Matching, k: int = 0) -> PerturbationDiff:
    if mu.n != mu_prime.n or mu.m != mu_prime.m:
        raise ValueError("matchings must share n and m")
    a, b = mu.assignment, mu_prime.assignment
    changed = a != b
    per = np.bincount(a[changed], minlength=mu.m + 1) + np.bincount(b[changed], minlength=mu.m + 1)
    return PerturbationDiff(per, int(changed.sum()), int(k))


def displacement_sets(mu: Matching, mu_other: Matching, j: int) -> tuple[frozenset[int], frozenset[int]]:
    """``(mu^{-1}(j) - other^{-1}(j), other^{-1}(j) - mu^{-1}(j))``."""
    a, b = mu.roster(j), mu_other.roster(j)
    return a - b, b - a
