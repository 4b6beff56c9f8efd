"""Time-varying influenceability consensus model: simulation, fitting,
crossvalidated prediction and intrinsic-unpredictability estimation."""

from .analytics import (
    aggregate_error,
    distance_to_mean_stats,
    error_to_truth,
    ks_two_sample,
    partial_pearson,
    sign_test,
    success_summary,
    wilcoxon_signed_rank,
    wisdom_decomposition,
)
from .core import (
    INCLUDE_SELF_IN_MEAN,
    GroupState,
    InfluenceabilityPair,
    TaskKind,
    consensus_step,
    group_mean,
    simulate_trajectory,
)
from .datastore import Dataset, GameRecord, filter_participants, load_dataset, save_dataset
from .estimation import MixtureModel, assign_typical, fit_alpha_round, fit_individual, fit_mixture, linearity_test
from .prediction import PredictionReport, PredictorSpec, bootstrap_ci, crossvalidate, predict
from .simulator import ControlSpec, PopulationSpec, generate_control_cohort, generate_population
from .unpredictability import (
    estimate_unpredictability,
    intrinsic_std,
    lambda_star,
    schedule_control_session,
    synthesize_replicate,
)

__version__ = "0.1.0"
