"""Measurement vocabulary: errors, correlations, cross entropy, summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "UndefinedCorrelationError",
    "RunSummary",
    "CalibrationCurve",
    "DatasetAttributes",
    "squared_error",
    "pearson",
    "distance_correlation",
    "binary_cross_entropy",
    "calibration_curve",
    "quartile_summary",
    "dataset_attributes",
]


class UndefinedCorrelationError(ValueError):
    pass


@dataclass(frozen=True)
class RunSummary:
    mean: float
    q1: float
    median: float
    q3: float
    time: float
    count: int
    failures: int = 0


@dataclass(frozen=True)
class CalibrationCurve:
    bins: tuple  # (mean_predicted_p, mean_treated_rate, count) per nonempty bin

    def to_csv(self) -> str:
        lines = ["mean_predicted_p,mean_treated_rate,count"]
        lines += [f"{m:.6g},{r:.6g},{c}" for m, r, c in self.bins]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DatasetAttributes:
    size: int
    variables: int
    treated_pct: float
    bce: float
    corr_y1_p: float
    corr_y0_p: float

    HEADER = ("Size", "Variables", "Treated %", "BCE",
              "Corr(y1, p)", "Corr(y0, p)")

    def to_csv_row(self) -> str:
        return (f"{self.size},{self.variables},{self.treated_pct:.3g},"
                f"{self.bce:.3g},{self.corr_y1_p:.3g},{self.corr_y0_p:.3g}")


def squared_error(estimate: float, truth: float) -> float:
    return (float(estimate) - float(truth)) ** 2


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two vectors of equal length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(np.dot(da, da))
    sb = np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        raise UndefinedCorrelationError("correlation of a constant vector")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


def _double_centered(x):
    D = np.abs(x[:, None] - x[None, :])
    return D - D.mean(axis=0) - D.mean(axis=1)[:, None] + D.mean()


def distance_correlation(a, b) -> float:
    """Sample distance correlation (Szekely-Rizzo-Bakirov) of two vectors.

    Uses the double-centered pairwise distance matrices, so memory is
    quadratic in the length. Returns 0 if either vector is constant.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two vectors of equal length >= 2")
    A = _double_centered(a)
    B = _double_centered(b)
    dcov = (A * B).mean()
    dvar_a = (A * A).mean()
    dvar_b = (B * B).mean()
    if dvar_a <= 0 or dvar_b <= 0:
        return 0.0
    r2 = max(dcov, 0.0) / np.sqrt(dvar_a * dvar_b)
    return float(np.sqrt(min(r2, 1.0)))


def binary_cross_entropy(p, z) -> float:
    """Mean negative log-likelihood of ``z`` under ``p``, in nats."""
    p = np.asarray(p, dtype=float)
    z = np.asarray(z, dtype=float)
    if p.shape != z.shape:
        raise ValueError("p and z lengths differ")
    if not np.all((p > 0) & (p < 1)):
        raise ValueError("propensities must lie strictly inside (0, 1)")
    return float(-np.mean(np.where(z == 1, np.log(p), np.log1p(-p))))


def calibration_curve(p, z, n_bins: int = 10) -> CalibrationCurve:
    """Per equal-width bin of ``p``: mean ``p``, mean ``z`` and count."""
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    p = np.asarray(p, dtype=float)
    z = np.asarray(z, dtype=float)
    idx = np.minimum((p * n_bins).astype(int), n_bins - 1)
    bins = []
    for k in range(n_bins):
        m = idx == k
        if m.any():
            bins.append((float(p[m].mean()), float(z[m].mean()), int(m.sum())))
    return CalibrationCurve(tuple(bins))


def quartile_summary(values, times=None, failures: int = 0) -> RunSummary:
    """Mean and linearly interpolated quartiles of ``values``; mean of ``times``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("quartile_summary needs at least one value")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    t = 0.0 if times is None or len(times) == 0 else float(np.mean(times))
    return RunSummary(float(v.mean()), float(q1), float(med), float(q3), t,
                      int(v.size), failures)


def dataset_attributes(full, z, d: int | None = None) -> DatasetAttributes:
    z = np.asarray(z)
    if z.shape != (full.n,):
        raise ValueError("z length must match the dataset")
    return DatasetAttributes(
        size=full.n,
        variables=full.d if d is None else d,
        treated_pct=100.0 * float(np.mean(z == 1)),
        bce=binary_cross_entropy(full.propensity, z),
        corr_y1_p=pearson(full.y1, full.propensity),
        corr_y0_p=pearson(full.y0, full.propensity),
    )
