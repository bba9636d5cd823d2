"""Knockoff filtering with conditional-prediction-function importance statistics."""

__version__ = "0.1.0"

from .data import (
    BinaryOutcome,
    CompetingRisksOutcome,
    ContinuousOutcome,
    Dataset,
    FeatureMatrix,
    OutcomeSpec,
    SurvivalOutcome,
    load_csv,
    percentile_grid,
    standardize,
    train_test_split,
)
from .knockoffs import (
    GaussianKnockoffSampler,
    exchangeability_diagnostic,
    fit_moments,
    sample_knockoffs,
    solve_equicorrelated_s,
)
from .selection import knockoff_plus_threshold, knockoff_threshold, score_selection
from .statistics import (
    CpfConfig,
    cpf_importance,
    cpf_importance_survival,
    cpf_statistics,
    lcd_statistics,
    lsm_statistics,
)
