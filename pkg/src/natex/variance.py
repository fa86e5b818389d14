"""Exact finite-sample variance of split-training doubly robust estimators.

With a fixed split and known propensities the estimator is unbiased and its
variance is the sum of a weighted-residual term and a cross-sensitivity
term. Both are computed here by exhaustive enumeration of the assignment
vector, alongside a direct enumeration of the estimator's own moments, so
the two can be checked against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import FullDataset, observe, sample_treatment
from .estimators import (REGISTRY, SplitPartition, doubly_robust_split, draw_split,
                         split_from_adjustment)
from .learners import RegressorSpec, WeightScheme, fit_ridge, zero_regressor

__all__ = [
    "MAX_ENUMERATION_N",
    "CostGuardError",
    "VarianceReport",
    "FixedFunctionPair",
    "adjustment",
    "all_assignments",
    "assignment_probabilities",
    "enumerate_moments",
    "theorem1_terms",
    "theorem1_report",
    "term2_monte_carlo",
    "mc_moments",
    "amgm_bound_check",
    "double_weight_expectation_identity",
]

MAX_ENUMERATION_N = 14
SPLIT_ESTIMATORS = {
    "dr-split": WeightScheme.UNIT,
    "dr-split-weight": WeightScheme.SINGLE,
    "double-double": WeightScheme.DOUBLE,
}


class CostGuardError(ValueError):
    pass


@dataclass(frozen=True)
class VarianceReport:
    term1: float
    term2: float
    closed_form_total: float
    enumerated_mean: float
    enumerated_variance: float
    mc_mean: float | None = None
    mc_variance: float | None = None
    mc_stderr: float | None = None

    HEADER = ("term1,term2,closed_form_total,enumerated_mean,enumerated_variance,"
              "mc_mean,mc_variance,mc_stderr")

    def to_csv_row(self) -> str:
        vals = (self.term1, self.term2, self.closed_form_total, self.enumerated_mean,
                self.enumerated_variance, self.mc_mean, self.mc_variance,
                self.mc_stderr)
        return ",".join("" if v is None else repr(float(v)) for v in vals)

    def summary(self) -> str:
        gap = abs(self.closed_form_total - self.enumerated_variance)
        lines = [
            f"residual term       {self.term1:.6e}",
            f"sensitivity term    {self.term2:.6e}",
            f"closed-form total   {self.closed_form_total:.6e}",
            f"enumerated variance {self.enumerated_variance:.6e}",
            f"|difference|        {gap:.3e}",
            f"enumerated mean     {self.enumerated_mean:.3e}",
        ]
        if self.mc_mean is not None:
            lines.append(f"monte-carlo mean    {self.mc_mean:.3e} "
                         f"(stderr {self.mc_stderr:.3e})")
        return "\n".join(lines)


@dataclass(frozen=True)
class FixedFunctionPair:
    """Assignment-independent predictions for the treated and control models.

    Each side is a callable on covariate rows or a per-row value vector.
    """

    f1: object
    f0: object

    def values(self, X):
        out = []
        for f in (self.f1, self.f0):
            out.append(np.asarray(f(X) if callable(f) else f, dtype=float))
        return out[0], out[1]


def adjustment(f1_vals, f0_vals, p) -> np.ndarray:
    """``(1 - p) f1 + p f0`` row by row."""
    f1 = np.asarray(f1_vals, dtype=float)
    f0 = np.asarray(f0_vals, dtype=float)
    p = np.asarray(p, dtype=float)
    if not f1.shape == f0.shape == p.shape:
        raise ValueError("f1, f0 and p lengths differ")
    return (1.0 - p) * f1 + p * f0


def all_assignments(n: int) -> np.ndarray:
    """Every vector in {0,1}^n as rows of a ``(2**n, n)`` int8 array."""
    codes = np.arange(2**n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(np.int8)


def assignment_probabilities(p, Z) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.prod(np.where(Z == 1, p, 1.0 - p), axis=1)


def _guard(n):
    if n > MAX_ENUMERATION_N:
        raise CostGuardError(
            f"exhaustive enumeration needs n <= {MAX_ENUMERATION_N}, got {n}")


def _fit_half(X, y1, y0, p, train, z_train, scheme, lam):
    """Ridge models trained on one half; an empty arm fits the zero function."""
    w1, w0 = scheme.weights(p[train])
    t = z_train == 1
    models = []
    for mask, y, w in ((t, y1, w1), (~t, y0, w0)):
        rows = train[mask]
        if rows.size == 0:
            models.append(zero_regressor())
        else:
            models.append(fit_ridge(X[rows], y[rows], w[mask], lam))
    return models


def _split_fits(full, z, split, scheme, lam):
    X, p = full.covariates, full.propensity
    f1_vals = np.empty(full.n)
    f0_vals = np.empty(full.n)
    for train, other in ((split.s1, split.s2), (split.s2, split.s1)):
        f1, f0 = _fit_half(X, full.y1, full.y0, p, train, z[train], scheme, lam)
        f1_vals[other] = f1(X[other])
        f0_vals[other] = f0(X[other])
    return f1_vals, f0_vals


def _weighted_moments(probs, errors):
    mean = math.fsum(probs * errors)
    var = math.fsum(probs * (errors - mean) ** 2)
    return mean, var


def enumerate_moments(full: FullDataset, split: SplitPartition,
                      scheme: WeightScheme = WeightScheme.UNIT, lam: float = 1e-6,
                      *, fixed: FixedFunctionPair | None = None):
    """Exact mean and variance of ``tau_hat(z) - tau`` over all assignments.

    The split is held fixed; each assignment is weighted by its Bernoulli
    product probability and the split estimator is evaluated from scratch,
    refitting the ridge models (or using ``fixed`` predictions).
    """
    n = full.n
    _guard(n)
    p = full.propensity
    Z = all_assignments(n)
    probs = assignment_probabilities(p, Z)
    errors = np.empty(len(Z))
    if fixed is not None:
        fixed_vals = fixed.values(full.covariates)
    for k, z in enumerate(Z):
        y_obs = np.where(z == 1, full.y1, full.y0)
        if fixed is None:
            f1_vals, f0_vals = _split_fits(full, z, split, scheme, lam)
        else:
            f1_vals, f0_vals = fixed_vals
        tau_hat = split_from_adjustment(y_obs, z, p, adjustment(f1_vals, f0_vals, p))
        errors[k] = tau_hat - full.true_ate
    return _weighted_moments(probs, errors)


def _half_tables(full, train, other, scheme, lam):
    """Predictions on ``other`` for every assignment of the training half.

    Returns (assignments, probabilities, F1, F0) where ``F1[a, k]`` is the
    treated model's prediction at ``other[k]`` under training assignment ``a``.
    """
    X, p = full.covariates, full.propensity
    A = all_assignments(train.size)
    probs = assignment_probabilities(p[train], A)
    F1 = np.empty((len(A), other.size))
    F0 = np.empty((len(A), other.size))
    for a, z_train in enumerate(A):
        f1, f0 = _fit_half(X, full.y1, full.y0, p, train, z_train, scheme, lam)
        F1[a] = f1(X[other])
        F0[a] = f0(X[other])
    return A, probs, F1, F0


def _flip_sensitivity(A, probs, Yhat):
    """``E_a[yhat(a with bit j = 1) - yhat(a with bit j = 0)]`` for each j.

    Returns an array of shape ``(m, n_other)``.
    """
    m = A.shape[1]
    codes = np.arange(len(A))
    out = np.empty((m, Yhat.shape[1]))
    for j in range(m):
        on = codes | (1 << j)
        off = codes & ~(1 << j)
        out[j] = probs @ (Yhat[on] - Yhat[off])
    return out


def theorem1_terms(full: FullDataset, split: SplitPartition,
                   scheme: WeightScheme = WeightScheme.UNIT, lam: float = 1e-6,
                   *, fixed: FixedFunctionPair | None = None,
                   enumerate: bool = True) -> VarianceReport:
    """Closed-form residual and sensitivity terms for a fixed split.

    ``term1`` is ``(1/n^2) sum_i E[(r1_i sqrt((1-p_i)/p_i) + r0_i sqrt(p_i/(1-p_i)))^2]``
    with residuals of the out-of-half predictions against both potential
    outcomes; ``term2`` is ``(1/n^2) sum_{i != j}`` of the expected product of
    flip sensitivities. Only cross-half pairs contribute, and the two factors
    depend on disjoint halves of the assignment, so each pair expectation
    factorizes.
    """
    n = full.n
    _guard(n)
    p, X = full.propensity, full.covariates
    a_coef = np.sqrt((1.0 - p) / p)
    b_coef = np.sqrt(p / (1.0 - p))

    if fixed is not None:
        f1, f0 = fixed.values(X)
        per_row = ((full.y1 - f1) * a_coef + (full.y0 - f0) * b_coef) ** 2
        term1 = math.fsum(per_row) / n**2
        term2 = 0.0
    else:
        t1_parts = []
        sens = []
        for train, other in ((split.s1, split.s2), (split.s2, split.s1)):
            A, probs, F1, F0 = _half_tables(full, train, other, scheme, lam)
            po = p[other]
            sq = ((full.y1[other] - F1) * a_coef[other]
                  + (full.y0[other] - F0) * b_coef[other]) ** 2
            t1_parts.extend(probs @ sq)
            sens.append(_flip_sensitivity(A, probs, (1.0 - po) * F1 + po * F0))
        term1 = math.fsum(t1_parts) / n**2
        # sens[0][j, i]: flip of s1[j] on prediction at s2[i]; sens[1] the reverse
        term2 = 2.0 * math.fsum((sens[0] * sens[1].T).ravel()) / n**2

    if enumerate:
        mean, var = enumerate_moments(full, split, scheme, lam, fixed=fixed)
    else:
        mean, var = float("nan"), float("nan")
    return VarianceReport(term1, term2, term1 + term2, mean, var)


def theorem1_report(full: FullDataset, scheme: WeightScheme = WeightScheme.UNIT,
                    lam: float = 1e-6, n_splits: int = 1, seed: int = 0,
                    mc_runs: int = 0) -> VarianceReport:
    """Average fixed-split reports over ``n_splits`` seeded splits.

    Conditional on the split the estimator is unbiased, so the unconditional
    variance is the split-average of the conditional variances.
    """
    rng = np.random.default_rng(seed)
    reports = [theorem1_terms(full, draw_split(full.n, rng), scheme, lam)
               for _ in range(n_splits)]
    fields = np.array([[r.term1, r.term2, r.closed_form_total, r.enumerated_mean,
                        r.enumerated_variance] for r in reports]).mean(axis=0)
    mc = (None, None, None)
    if mc_runs:
        name = {v: k for k, v in SPLIT_ESTIMATORS.items()}[scheme]
        mc = mc_moments(full, name, mc_runs, seed, spec=RegressorSpec.ridge(lam))
    return VarianceReport(*map(float, fields), *mc)


def term2_monte_carlo(full: FullDataset, split: SplitPartition,
                      scheme: WeightScheme = WeightScheme.UNIT, lam: float = 1e-6,
                      n_assignments: int = 20, seed: int = 0):
    """Monte-Carlo estimate of both terms for datasets too large to enumerate.

    For each sampled assignment every training row is flipped to 1 and to 0
    with exact refits, giving the sensitivity of every out-of-half
    prediction; all cross-half pairs are then summed exactly.

    Returns ``(term1, term2, term2_stderr)``.
    """
    n = full.n
    X, p = full.covariates, full.propensity
    a_coef = np.sqrt((1.0 - p) / p)
    b_coef = np.sqrt(p / (1.0 - p))
    rng = np.random.default_rng(seed)
    t1_samples, t2_samples = [], []
    for _ in range(n_assignments):
        z = (rng.random(n) < p).astype(np.int8)
        sens = []
        t1 = 0.0
        for train, other in ((split.s1, split.s2), (split.s2, split.s1)):
            po = p[other]
            f1, f0 = _fit_half(X, full.y1, full.y0, p, train, z[train], scheme, lam)
            F1, F0 = f1(X[other]), f0(X[other])
            t1 += math.fsum(((full.y1[other] - F1) * a_coef[other]
                             + (full.y0[other] - F0) * b_coef[other]) ** 2)
            D = np.empty((train.size, other.size))
            for j in range(train.size):
                yh = []
                for bit in (1, 0):
                    zt = z[train].copy()
                    zt[j] = bit
                    g1, g0 = _fit_half(X, full.y1, full.y0, p, train, zt, scheme, lam)
                    yh.append((1.0 - po) * g1(X[other]) + po * g0(X[other]))
                D[j] = yh[0] - yh[1]
            sens.append(D)
        t1_samples.append(t1 / n**2)
        t2_samples.append(2.0 * math.fsum((sens[0] * sens[1].T).ravel()) / n**2)
    t2 = np.array(t2_samples)
    stderr = float(t2.std(ddof=1) / np.sqrt(t2.size)) if t2.size > 1 else float("nan")
    return float(np.mean(t1_samples)), float(t2.mean()), stderr


def mc_moments(full: FullDataset, estimator_name: str, runs: int, seed: int = 0, *,
               spec: RegressorSpec | None = None, z=None,
               split: SplitPartition | None = None):
    """Sample mean, variance and standard error of ``tau_hat - tau``.

    Each run draws a fresh assignment (unless ``z`` is forced) and, for the
    split-training estimators, a fresh split drawn independently of the
    assignment (unless ``split`` is forced). Split estimators fit an empty
    arm as the zero function rather than redrawing the split, which would
    make the split depend on the assignment.
    """
    if runs < 2:
        raise ValueError("runs must be at least 2")
    if estimator_name not in REGISTRY:
        raise KeyError(f"unknown estimator {estimator_name!r}")
    spec = spec or RegressorSpec.ridge()
    p = full.propensity
    errors = np.empty(runs)
    for r, run_seed in enumerate(np.random.SeedSequence(seed).generate_state(runs)):
        rng = np.random.default_rng(int(run_seed))
        zr = np.asarray(z) if z is not None else sample_treatment(p, int(rng.integers(2**32)))
        obs = observe(full, zr)
        if estimator_name in SPLIT_ESTIMATORS:
            sp = split if split is not None else draw_split(full.n, rng)
            est = doubly_robust_split(obs, p, spec, SPLIT_ESTIMATORS[estimator_name],
                                      int(rng.integers(2**32)), split=sp,
                                      allow_empty=True)
        else:
            est = REGISTRY[estimator_name](obs, p, spec, int(rng.integers(2**32)))
        errors[r] = est - full.true_ate
    var = float(errors.var(ddof=1))
    return float(errors.mean()), var, float(np.sqrt(var / runs))


def _residual_parts(full, fixed):
    f1, f0 = fixed.values(full.covariates)
    return full.y1 - f1, full.y0 - f0


def amgm_bound_check(full: FullDataset, fixed: FixedFunctionPair,
                     split: SplitPartition | None = None):
    """Compare the residual term with its double-weighted-loss upper bound.

    Both are on the ``1/n^2`` scale. With assignment-independent predictions
    the split plays no role and the expectations are exact sums.

    Returns ``(bound, term1, holds)``.
    """
    p = full.propensity
    n = full.n
    r1, r0 = _residual_parts(full, fixed)
    a = r1 * np.sqrt((1.0 - p) / p)
    b = r0 * np.sqrt(p / (1.0 - p))
    term1 = math.fsum((a + b) ** 2) / n**2
    bound = (2.0 * math.fsum((1.0 - p) / p * r1**2)
             + 2.0 * math.fsum(p / (1.0 - p) * r0**2)) / n**2
    return bound, term1, bool(term1 <= bound + 1e-12)


def double_weight_expectation_identity(full: FullDataset, fixed: FixedFunctionPair):
    """Expected double-weighted treated loss versus the single-weighted sum.

    ``lhs = E_z[sum_i 1[z_i=1] (1-p_i)/p_i^2 r1_i^2]`` taken exactly as
    ``sum_i p_i (1-p_i)/p_i^2 r1_i^2``; ``rhs = sum_i (1-p_i)/p_i r1_i^2``.
    """
    p = full.propensity
    r1, _ = _residual_parts(full, fixed)
    lhs = math.fsum(p * ((1.0 - p) / p**2) * r1**2)
    rhs = math.fsum((1.0 - p) / p * r1**2)
    return lhs, rhs
