"""Treatment-effect estimation for natural experiments.

Submodules: ``dataset`` (synthetic generator and CSV I/O), ``learners``
(ridge and MLP regressors, propensity model), ``estimators`` (the estimator
registry), ``variance`` (closed-form variance versus enumeration),
``metrics`` and ``bench`` (benchmark runs, sweeps and reports).
"""

from .dataset import (FullDataset, GenerationConfig, ObservedDataset, SchemaError,
                      generate_dataset, load_csv, observe, sample_treatment,
                      write_csv)
from .estimators import REGISTRY, EstimatorResult, run_estimator
from .learners import RegressorSpec, WeightScheme, fit, fit_propensity

__version__ = "0.1.0"

__all__ = [
    "FullDataset",
    "GenerationConfig",
    "ObservedDataset",
    "SchemaError",
    "generate_dataset",
    "load_csv",
    "observe",
    "sample_treatment",
    "write_csv",
    "REGISTRY",
    "EstimatorResult",
    "run_estimator",
    "RegressorSpec",
    "WeightScheme",
    "fit",
    "fit_propensity",
]
