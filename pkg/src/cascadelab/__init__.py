"""cascadelab: sequential social learning on integer-logit belief grids.

Construct informative private-belief pairs, run the public likelihood-ratio
process (exact enumeration or seeded Monte Carlo), and verify activity,
upcrossing and efficiency bounds against the exact trees and sampled paths.
"""

__version__ = "0.1.0"

from .beliefs import (
    BeliefPair,
    BenchmarkSequence,
    DeltaProfile,
    InformativeParams,
    benchmark_sequence,
    cdf,
    construct_informative_pair,
    delta,
    delta_profile,
    equal_mass_pair,
    is_informative,
)
from .dynamics import (
    EnumeratedTree,
    PublicPath,
    PublicState,
    enumerate_tree,
    martingale_check,
    paths_to_csv,
    sample_path_summaries,
    simulate,
    step,
    threshold,
    transition_prob,
)
from .efficiency import (
    StoppingStats,
    TailFit,
    efficiency_estimate,
    exact_expected_tau,
    expected_tau_bound,
    expected_tau_from_tree,
    smooth_monotone_check,
    stopping_stats,
    tail_fit,
    wrong_action_probabilities,
)
from .extraction import (
    ExtractedProcess,
    ExtractionRule,
    distance_jump_check,
    extract,
    extract_from_path,
    extract_values,
    verify_extracted_activity,
)
from .martingale import (
    ActivitySpec,
    BoundConstants,
    PathStats,
    classical_inequality_audit,
    compute_path_stats,
    dichotomy_audit,
    dubins_bound,
    jump_count,
    maximal_inequality_bound,
    uniform_bound_constants,
    uniform_k_estimate,
    upcrossings,
    weak_activity_check,
)

__all__ = [name for name in dir() if not name.startswith("_")]
