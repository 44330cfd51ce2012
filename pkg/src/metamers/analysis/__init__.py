from .montecarlo import ModelSetRun, difference_in_means, difference_table, monte_carlo_model_sets, sample_model_sets
from .recognizability import RecognizabilityResult, binomial_tail, cross_model_mean, ensemble_targets, recognizability
from .repsim import (
    GRID_POINTS,
    MIN_TRUSTED_SAMPLES,
    PAIRINGS,
    DistanceDistribution,
    DistributionLabel,
    DivergenceCell,
    Heatmap,
    divergence_heatmap,
    jensen_shannon,
    kde_density,
    resample,
    sample_pairs,
    scott_bandwidth,
)
