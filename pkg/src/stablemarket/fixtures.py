"""The five-student, three-college worked market used as a golden fixture."""

from __future__ import annotations

import numpy as np

from .market import Matching, PreferenceProfile
from .model import MarketRealization

STUDENT_LISTS = [[1, 2, 3], [2, 3, 1], [2, 3, 1], [3, 1, 2], [3, 2, 1]]
COLLEGE_LISTS = [[1, 4, 2, 3, 5], [1, 5, 2, 3, 4], [2, 3, 4, 5, 1]]
PERTURBED_FIRST_STUDENT = [2, 3, 1]

QUOTAS_CASCADE = (1, 2, 2)
QUOTAS_VACANCY = (1, 3, 2)

SOSM_BASE = (1, 2, 2, 3, 3)
SOSM_PERTURBED = (2, 3, 3, 1, 2)


def base_profile() -> PreferenceProfile:
    return PreferenceProfile.from_lists(STUDENT_LISTS, COLLEGE_LISTS)


def perturbed_profile() -> PreferenceProfile:
    students = [PERTURBED_FIRST_STUDENT] + STUDENT_LISTS[1:]
    return PreferenceProfile.from_lists(students, COLLEGE_LISTS)


def matching(assignment, m: int = 3) -> Matching:
    return Matching(np.asarray(assignment), m)


def _scores_from_lists(lists: list[list[int]], width: int) -> np.ndarray:
    """Scores whose descending order reproduces each list, unlisted alternatives at the bottom."""
    out = np.full((len(lists), width), -1.0)
    for r, row in enumerate(lists):
        for pos, a in enumerate(row):
            out[r, a] = float(len(row) - pos)
    return out


def base_realization(students: list[list[int]] | None = None) -> MarketRealization:
    """Hand-encoded realization whose derived preferences are the base profile.

    Utilities put the outside option (score 0) below every listed college;
    college priorities are rank scores, thresholds are ``-inf`` and
    ``sigma`` is taken as 1 with ``lambda = 0`` so that ``omega = eta``.
    """
    students = STUDENT_LISTS if students is None else students
    n, m = len(students), len(COLLEGE_LISTS)
    utility = _scores_from_lists(students, m + 1)
    utility[:, 0] = 0.0
    token_scores = _scores_from_lists(COLLEGE_LISTS, n + 1)  # column t is token t
    omega = token_scores[:, 1:].T.copy()
    return MarketRealization(
        X=np.zeros((n, 1)), eps=utility[:, 1:].copy(), eta=omega.copy(), Z=np.zeros((m, 1)),
        xi=np.zeros(m), omega=omega, c=np.full(m, -np.inf), quotas=np.asarray(QUOTAS_CASCADE),
        lam=np.zeros(n), utility=utility, sigma=1.0,
    )


def comparison_rows() -> list[dict]:
    """Rows of the side-by-side table printed by the fixtures command."""
    from .algorithms import deferred_acceptance, perturbation_diff

    rows = []
    for label, quotas in (("cascade", QUOTAS_CASCADE), ("vacancy", QUOTAS_VACANCY)):
        mu = deferred_acceptance(base_profile(), quotas)
        mu_p = deferred_acceptance(perturbed_profile(), quotas)
        diff = perturbation_diff(mu, mu_p)
        rows.append(
            {
                "case": label,
                "quotas": "-".join(map(str, quotas)),
                "sosm_base": " ".join(f"j{j}" for j in mu.assignment),
                "sosm_perturbed": " ".join(f"j{j}" for j in mu_p.assignment),
                "changed_students": int(diff.total_changed),
                "max_changes_per_college": int(diff.max_per_college),
            }
        )
    return rows
