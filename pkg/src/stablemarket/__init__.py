"""Many-to-one stable matching markets with correlated college priorities.

Deferred acceptance, re-stabilisation, a seeded market generator, matching
statistics, and Monte Carlo audits of their finite-sample behaviour.
"""

__version__ = "0.1.0"

from .market import (  # noqa: E402
    OUTSIDE,
    BlockingPair,
    Matching,
    MatchingClass,
    PreferenceProfile,
    RankDiffReport,
    blocking_pairs,
    classify_matching,
    enumerate_stable_matchings,
    is_individually_rational,
    is_stable,
    max_rank_difference,
    validate_matching,
)
from .algorithms import (  # noqa: E402
    deferred_acceptance,
    deferred_acceptance_college_proposing,
    embed_without_student,
    perturbation_diff,
    remove_student,
    restabilize,
    to_related_one_to_one,
)
from .model import ModelConfig, derive_preferences, profile_of, sample_market  # noqa: E402

__all__ = [
    "OUTSIDE", "BlockingPair", "Matching", "MatchingClass", "PreferenceProfile", "RankDiffReport",
    "blocking_pairs", "classify_matching", "enumerate_stable_matchings", "is_individually_rational",
    "is_stable", "max_rank_difference", "validate_matching", "deferred_acceptance",
    "deferred_acceptance_college_proposing", "embed_without_student", "perturbation_diff",
    "remove_student", "restabilize", "to_related_one_to_one", "ModelConfig", "derive_preferences",
    "profile_of", "sample_market",
]
