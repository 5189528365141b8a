import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from stablemarket.market import PreferenceProfile


def random_profile(rng: np.random.Generator, n: int, m: int) -> PreferenceProfile:
    v = np.stack([rng.permutation(m + 1) for _ in range(n)]) if n else np.zeros((0, m + 1), dtype=np.int64)
    w = np.stack([rng.permutation(n + 1) for _ in range(m)])
    return PreferenceProfile(v, w)


@st.composite
def small_markets(draw, max_n=6, max_m=3, max_q=2):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(1, max_m))
    v = [draw(st.permutations(list(range(m + 1)))) for _ in range(n)]
    w = [draw(st.permutations(list(range(n + 1)))) for _ in range(m)]
    q = [draw(st.integers(1, max_q)) for _ in range(m)]
    return PreferenceProfile(np.array(v), np.array(w)), np.array(q)


def naive_blocking(assign, profile, q):
    """Blocking pairs straight from the definition, one pair at a time."""
    v, w = profile.v.tolist(), profile.w.tolist()
    out = set()
    for i, row in enumerate(v):
        for j in range(1, profile.m + 1):
            if row.index(j) >= row.index(int(assign[i])):
                continue
            order = w[j - 1]
            me = order.index(i + 1)
            roster = [k for k in range(len(v)) if assign[k] == j]
            if len(roster) < q[j - 1]:
                if me < order.index(0):
                    out.add((i, j))
            elif any(me < order.index(k + 1) for k in roster):
                out.add((i, j))
    return out


def naive_individually_rational(assign, profile):
    v, w = profile.v.tolist(), profile.w.tolist()
    for i, j in enumerate(assign):
        if j == 0:
            continue
        if v[i].index(int(j)) > v[i].index(0):
            return False
        if w[j - 1].index(i + 1) > w[j - 1].index(0):
            return False
    return True


def naive_stable_set(profile, q):
    n, m = profile.n, profile.m
    out = []
    for assign in itertools.product(range(m + 1), repeat=n):
        if any(assign.count(j) > q[j - 1] for j in range(1, m + 1)):
            continue
        if naive_individually_rational(assign, profile) and not naive_blocking(assign, profile, q):
            out.append(tuple(assign))
    return out


def naive_rank_difference(w) -> int:
    """Maximum rank gap over disputed pairs, by checking every pair of tokens."""
    w = np.asarray(w)
    m, size = w.shape
    rank = np.argsort(w, axis=1)
    best = 0
    for a, b in itertools.combinations(range(size), 2):
        signs = {bool(rank[j, a] < rank[j, b]) for j in range(m)}
        if len(signs) == 2:
            best = max(best, max(abs(int(rank[j, a]) - int(rank[j, b])) for j in range(m)))
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
