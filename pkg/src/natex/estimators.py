"""Average-treatment-effect estimators.

Every estimator is a pure function of the observed data, an externally
supplied propensity vector and a learner spec. The ``*_from_predictions``
helpers hold the estimator formulas themselves, so the learned functions
can be swapped for injected ones in tests and in the variance analysis.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .dataset import ObservedDataset
from .learners import RegressorSpec, WeightScheme, fit, zero_regressor

__all__ = [
    "EstimatorError",
    "DegenerateArmError",
    "DegenerateSplitError",
    "InsufficientWindowError",
    "NoOverlapError",
    "PropensityDomainError",
    "EstimatorResult",
    "SplitPartition",
    "draw_split",
    "direct_difference",
    "adjusted_direct",
    "horvitz_thompson",
    "regression_discontinuity",
    "propensity_stratification",
    "direct_prediction",
    "doubly_robust",
    "doubly_robust_split",
    "off_policy",
    "off_policy_from_predictions",
    "choose_split",
    "dr_from_predictions",
    "split_from_adjustment",
    "split_predictions",
    "REGISTRY",
    "run_estimator",
]

DEFAULT_RD_WINDOW = 0.1
DEFAULT_STRAT_BINS = 10
SPLIT_RETRIES = 16


class EstimatorError(ValueError):
    pass


class DegenerateArmError(EstimatorError):
    pass


class DegenerateSplitError(EstimatorError):
    pass


class InsufficientWindowError(EstimatorError):
    pass


class NoOverlapError(EstimatorError):
    pass


class PropensityDomainError(EstimatorError):
    pass


@dataclass(frozen=True)
class EstimatorResult:
    estimate: float
    elapsed: float
    estimator_name: str
    seed: int

    def __post_init__(self):
        if not math.isfinite(self.estimate):
            raise EstimatorError(f"{self.estimator_name} returned {self.estimate}")


@dataclass(frozen=True, eq=False)
class SplitPartition:
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        s1 = np.sort(np.asarray(self.s1, dtype=np.intp))
        s2 = np.sort(np.asarray(self.s2, dtype=np.intp))
        if np.intersect1d(s1, s2).size:
            raise ValueError("split halves overlap")
        if abs(s1.size - s2.size) > 1:
            raise ValueError("split halves differ in size by more than one")
        object.__setattr__(self, "s1", s1)
        object.__setattr__(self, "s2", s2)

    @property
    def n(self) -> int:
        return self.s1.size + self.s2.size

    @property
    def halves(self):
        return (self.s1, self.s2)

    def membership(self) -> np.ndarray:
        """Index (0 or 1) of the half each row belongs to."""
        m = np.empty(self.n, dtype=np.int8)
        m[self.s1] = 0
        m[self.s2] = 1
        return m


def _check_p(p, n):
    p = np.asarray(p, dtype=float)
    if p.shape != (n,):
        raise ValueError(f"propensity vector has shape {p.shape}, expected ({n},)")
    if not np.all((p > 0) & (p < 1)):
        raise PropensityDomainError("propensities must lie strictly inside (0, 1)")
    return p


def _check_arms(z):
    z = np.asarray(z)
    if z.size == 0 or z.min() == z.max():
        raise DegenerateArmError("need at least one treated and one control row")


def _sign(z):
    # +1 for treated rows, -1 for controls
    return np.where(np.asarray(z) == 1, 1.0, -1.0)


# -- formula-only estimators -------------------------------------------------

def direct_difference(y_obs, z) -> float:
    """``(2/n) sum_i (y_i 1[z_i=1] - y_i 1[z_i!=1])``."""
    y = np.asarray(y_obs, dtype=float)
    z = np.asarray(z)
    if y.shape != z.shape:
        raise ValueError("y_obs and z lengths differ")
    return 2.0 * float(np.sum(_sign(z) * y)) / y.size


def horvitz_thompson(y_obs, z, p) -> float:
    y = np.asarray(y_obs, dtype=float)
    z = np.asarray(z)
    p = _check_p(p, y.size)
    terms = np.where(z == 1, y / p, -y / (1.0 - p))
    return float(terms.sum()) / y.size


def regression_discontinuity(y_obs, z, p, window: float = DEFAULT_RD_WINDOW) -> float:
    """Arm-mean difference among rows with ``|p - 1/2| <= window``."""
    if window <= 0:
        raise ValueError("window must be positive")
    y = np.asarray(y_obs, dtype=float)
    z = np.asarray(z)
    p = np.asarray(p, dtype=float)
    inside = (p >= 0.5 - window) & (p <= 0.5 + window)
    t = inside & (z == 1)
    c = inside & (z != 1)
    if not t.any() or not c.any():
        raise InsufficientWindowError(
            f"window {window} holds {t.sum()} treated and {c.sum()} control rows")
    return float(y[t].mean() - y[c].mean())


def propensity_stratification(y_obs, z, p, q: int = DEFAULT_STRAT_BINS) -> float:
    """Average within-bin arm-mean difference over ``q`` equal-width bins.

    Bins are closed intervals ``[(k-1)/q, k/q]``; bins lacking either arm
    are skipped.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    y = np.asarray(y_obs, dtype=float)
    z = np.asarray(z)
    p = np.asarray(p, dtype=float)
    diffs = []
    for k in range(1, q + 1):
        in_bin = (p >= (k - 1) / q) & (p <= k / q)
        t = in_bin & (z == 1)
        c = in_bin & (z != 1)
        if t.any() and c.any():
            diffs.append(y[t].mean() - y[c].mean())
    if not diffs:
        raise NoOverlapError("no propensity bin contains both arms")
    return float(np.mean(diffs))


# -- learner-based estimators ------------------------------------------------

def _fit_arm(X, y, w, spec, seed, *, allow_empty=False):
    if X.shape[0] == 0:
        if allow_empty:
            return zero_regressor()
        raise DegenerateArmError("empty training arm")
    return fit(X, y, w, spec, seed)


def _seeds(seed, k):
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(k)]


def adjusted_direct(obs: ObservedDataset, spec: RegressorSpec, seed: int = 0) -> float:
    _check_arms(obs.z)
    f = fit(obs.covariates, obs.y_obs, None, spec, _seeds(seed, 1)[0])
    resid = obs.y_obs - f(obs.covariates)
    return direct_difference(resid, obs.z)


def direct_prediction(obs: ObservedDataset, spec: RegressorSpec, seed: int = 0) -> float:
    _check_arms(obs.z)
    s1, s0 = _seeds(seed, 2)
    t = obs.treated
    X = obs.covariates
    f1 = fit(X[t], obs.y_obs[t], None, spec, s1)
    f0 = fit(X[~t], obs.y_obs[~t], None, spec, s0)
    return float(np.mean(f1(X) - f0(X)))


def dr_from_predictions(y_obs, z, p, f1_vals, f0_vals) -> float:
    """Standard doubly robust sum with per-row predictions ``f1``, ``f0``."""
    y = np.asarray(y_obs, dtype=float)
    z = np.asarray(z)
    p = _check_p(p, y.size)
    f1 = np.asarray(f1_vals, dtype=float)
    f0 = np.asarray(f0_vals, dtype=float)
    resid = np.where(z == 1, (y - f1) / p, -(y - f0) / (1.0 - p))
    return float(np.sum(resid + f1 - f0)) / y.size


def split_from_adjustment(y_obs, z, p, y_hat) -> float:
    """Split-training estimator from the per-row adjustment ``y_hat``."""
    y = np.asarray(y_obs, dtype=float)
    z = np.asarray(z)
    p = _check_p(p, y.size)
    r = y - np.asarray(y_hat, dtype=float)
    terms = np.where(z == 1, r / p, -r / (1.0 - p))
    return float(terms.sum()) / y.size


def doubly_robust(obs: ObservedDataset, p, spec: RegressorSpec,
                  scheme: WeightScheme = WeightScheme.UNIT, seed: int = 0) -> float:
    """Doubly robust estimator with both outcome models fit on all rows."""
    _check_arms(obs.z)
    p = _check_p(p, obs.n)
    w1, w0 = scheme.weights(p)
    s1, s0 = _seeds(seed, 2)
    t = obs.treated
    X = obs.covariates
    f1 = fit(X[t], obs.y_obs[t], w1[t], spec, s1)
    f0 = fit(X[~t], obs.y_obs[~t], w0[~t], spec, s0)
    return dr_from_predictions(obs.y_obs, obs.z, p, f1(X), f0(X))


def draw_split(n: int, rng) -> SplitPartition:
    perm = rng.permutation(n)
    return SplitPartition(perm[: n // 2], perm[n // 2:])


def _split_ok(split, z):
    for half in split.halves:
        zh = z[half]
        if zh.size == 0 or zh.min() == zh.max():
            return False
    return True


def choose_split(z, seed: int) -> SplitPartition:
    """Seeded split whose halves each hold both arms, redrawn up to 16 times."""
    z = np.asarray(z)
    rng = np.random.default_rng(seed)
    for _ in range(SPLIT_RETRIES):
        split = draw_split(z.size, rng)
        if _split_ok(split, z):
            return split
    raise DegenerateSplitError(
        f"no split with both arms in each half after {SPLIT_RETRIES} draws")


def split_predictions(X, z, y_obs, p, split: SplitPartition, spec: RegressorSpec,
                      scheme: WeightScheme, seed: int, *, allow_empty=False):
    """Cross-fit predictions ``(f1_vals, f0_vals)``.

    Row ``i`` is predicted by the models trained on the half not holding
    ``i``. With ``allow_empty`` an arm with no rows in a half is fit as the
    zero function instead of raising.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z)
    y = np.asarray(y_obs, dtype=float)
    w1, w0 = scheme.weights(p)
    f1_vals = np.empty(z.size)
    f0_vals = np.empty(z.size)
    seeds = _seeds(seed, 4)
    for j, (train, other) in enumerate(((split.s1, split.s2), (split.s2, split.s1))):
        t = train[z[train] == 1]
        c = train[z[train] != 1]
        f1 = _fit_arm(X[t], y[t], w1[t], spec, seeds[2 * j], allow_empty=allow_empty)
        f0 = _fit_arm(X[c], y[c], w0[c], spec, seeds[2 * j + 1],
                      allow_empty=allow_empty)
        f1_vals[other] = f1(X[other])
        f0_vals[other] = f0(X[other])
    return f1_vals, f0_vals


def doubly_robust_split(obs: ObservedDataset, p, spec: RegressorSpec,
                        scheme: WeightScheme = WeightScheme.UNIT, seed: int = 0,
                        *, split: SplitPartition | None = None,
                        allow_empty: bool = False) -> float:
    """Doubly robust estimator with split training.

    With ``scheme=WeightScheme.DOUBLE`` this is Double-Double. A fixed
    ``split`` may be passed; otherwise one is drawn from ``seed``.
    """
    p = _check_p(p, obs.n)
    split_seed, fit_seed = _seeds(seed, 2)
    if split is None:
        split = choose_split(obs.z, split_seed)
    f1_vals, f0_vals = split_predictions(obs.covariates, obs.z, obs.y_obs, p, split,
                                         spec, scheme, fit_seed,
                                         allow_empty=allow_empty)
    y_hat = (1.0 - p) * f1_vals + p * f0_vals
    return split_from_adjustment(obs.y_obs, obs.z, p, y_hat)


def off_policy_from_predictions(y_obs, z, p, g_vals) -> float:
    """Split-training sum with the single-model adjustment halved."""
    return split_from_adjustment(y_obs, z, p, 0.5 * np.asarray(g_vals, dtype=float))


def off_policy(obs: ObservedDataset, p, spec: RegressorSpec, seed: int = 0, *,
               split: SplitPartition | None = None) -> float:
    """Single-model split-training estimator weighted by inverse squared propensity."""
    p = _check_p(p, obs.n)
    split_seed, fit_seed = _seeds(seed, 2)
    if split is None:
        split = choose_split(obs.z, split_seed)
    z = obs.z
    X = obs.covariates
    w = np.where(z == 1, 1.0 / p**2, 1.0 / (1.0 - p) ** 2)
    g_vals = np.empty(obs.n)
    seeds = _seeds(fit_seed, 2)
    for j, (train, other) in enumerate(((split.s1, split.s2), (split.s2, split.s1))):
        g = fit(X[train], obs.y_obs[train], w[train], spec, seeds[j])
        g_vals[other] = g(X[other])
    return off_policy_from_predictions(obs.y_obs, z, p, g_vals)


# -- registry ----------------------------------------------------------------
# Uniform call signature: (obs, p, spec, seed, **options) -> float.

def _direct_difference(obs, p, spec, seed, **_):
    return direct_difference(obs.y_obs, obs.z)


def _horvitz_thompson(obs, p, spec, seed, **_):
    return horvitz_thompson(obs.y_obs, obs.z, p)


def _regression_discontinuity(obs, p, spec, seed, rd_window=DEFAULT_RD_WINDOW, **_):
    return regression_discontinuity(obs.y_obs, obs.z, p, rd_window)


def _propensity_stratification(obs, p, spec, seed, strat_bins=DEFAULT_STRAT_BINS, **_):
    return propensity_stratification(obs.y_obs, obs.z, p, strat_bins)


def _adjusted_direct(obs, p, spec, seed, **_):
    return adjusted_direct(obs, spec, seed)


def _direct_prediction(obs, p, spec, seed, **_):
    return direct_prediction(obs, spec, seed)


def _off_policy(obs, p, spec, seed, **_):
    return off_policy(obs, p, spec, seed)


def _with_scheme(func, scheme):
    def run(obs, p, spec, seed, **_):
        return func(obs, p, spec, scheme, seed)
    return run


REGISTRY = {
    "direct-difference": _direct_difference,
    "adjusted-direct": _adjusted_direct,
    "horvitz-thompson": _horvitz_thompson,
    "regression-discontinuity": _regression_discontinuity,
    "propensity-stratification": _propensity_stratification,
    "direct-prediction": _direct_prediction,
    "doubly-robust": _with_scheme(doubly_robust, WeightScheme.UNIT),
    "dr-weighting": _with_scheme(doubly_robust, WeightScheme.SINGLE),
    "dr-2x-weighting": _with_scheme(doubly_robust, WeightScheme.DOUBLE),
    "dr-split": _with_scheme(doubly_robust_split, WeightScheme.UNIT),
    "dr-split-weight": _with_scheme(doubly_robust_split, WeightScheme.SINGLE),
    "double-double": _with_scheme(doubly_robust_split, WeightScheme.DOUBLE),
    "off-policy": _off_policy,
}

# estimators that never call a learner
FORMULA_ONLY = ("direct-difference", "horvitz-thompson", "regression-discontinuity",
                "propensity-stratification")

# display names used in report tables
DISPLAY_NAMES = {
    "regression-discontinuity": "Regression Discontinuity",
    "propensity-stratification": "Propensity Stratification",
    "direct-difference": "Direct Difference",
    "adjusted-direct": "Adjusted Direct",
    "horvitz-thompson": "Horvitz-Thompson",
    "off-policy": "Off-policy",
    "double-double": "Double-Double",
    "doubly-robust": "Doubly Robust",
    "direct-prediction": "Direct Prediction",
    "dr-weighting": "DR + Weighting",
    "dr-2x-weighting": "DR + 2x Weighting",
    "dr-split": "DR + Split",
    "dr-split-weight": "DR + Split + Weight",
}


def run_estimator(name: str, obs: ObservedDataset, p, spec: RegressorSpec,
                  seed: int = 0, *, timed: bool = True, **opts) -> EstimatorResult:
    """Look up ``name`` in the registry and time one invocation."""
    try:
        func = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown estimator {name!r}") from None
    start = time.perf_counter()
    estimate = func(obs, p, spec, seed, **opts)
    elapsed = time.perf_counter() - start if timed else 0.0
    return EstimatorResult(float(estimate), elapsed, name, seed)
