"""Robust moving-horizon state estimation for ARMAX models with Student-t noise."""

from ._core import (
    ArmaxFilter,
    ArmaxModel,
    Estimate,
    ExperimentConfig,
    FilterGains,
    KalmanFilter,
    MheTdFilter,
    MhetdError,
    MleResult,
    MwlseFilter,
    NoiseMoments,
    ParticleFilter,
    RhoMode,
    StateEstimator,
    StateSpace,
    TDistribution,
    VarianceReport,
    batch_mhe_td,
    batch_mwlse,
    moments,
    outlier_expectation,
    outlier_experiment,
    pf_comparison,
    psi_transform,
    score_kernel,
    simulate,
    variance_experiment,
    variance_yhat,
    windowed_mle,
)

__all__ = [name for name in dir() if not name.startswith("_")]
