"""Semi-synthetic natural-experiment data.

Covariates are standard normal, propensities are logistic-linear in the
covariates with an intercept calibrated to a target treated fraction, and
the potential outcomes follow the literacy-program recipe: control outcomes
fall linearly with the propensity and the treatment effect is zero below
one half, growing as a square root above it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

__all__ = [
    "PROPENSITY_FLOOR",
    "PROPENSITY_CEIL",
    "SchemaError",
    "FullDataset",
    "ObservedDataset",
    "GenerationConfig",
    "generate_covariates",
    "generate_propensities",
    "generate_outcomes",
    "generate_dataset",
    "sample_treatment",
    "observe",
    "load_csv",
    "write_csv",
    "read_treatment_column",
    "add_outcome_noise",
    "perturb_propensities",
]

PROPENSITY_FLOOR = 0.01
PROPENSITY_CEIL = 0.99

RESERVED_COLUMNS = ("z", "y_obs", "y0", "y1", "p")


class SchemaError(ValueError):
    """A data file or config does not match the expected layout or domain."""


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FullDataset:
    """Ground-truth instance: both potential outcomes and true propensities."""

    covariates: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    propensity: np.ndarray
    true_ate: float = field(init=False)

    def __post_init__(self):
        X = _frozen(self.covariates)
        if X.ndim != 2:
            raise ValueError("covariates must be a 2-d matrix")
        n = X.shape[0]
        y1, y0, p = _frozen(self.y1), _frozen(self.y0), _frozen(self.propensity)
        for name, v in (("y1", y1), ("y0", y0), ("propensity", p)):
            if v.shape != (n,):
                raise ValueError(f"{name} has shape {v.shape}, expected ({n},)")
        if n and (p.min() < PROPENSITY_FLOOR or p.max() > PROPENSITY_CEIL):
            raise ValueError("propensities must lie in [0.01, 0.99]")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "propensity", p)
        ate = math.fsum(y1 - y0) / n if n else float("nan")
        object.__setattr__(self, "true_ate", ate)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def subset(self, idx) -> "FullDataset":
        idx = np.asarray(idx)
        return FullDataset(self.covariates[idx], self.y1[idx], self.y0[idx],
                           self.propensity[idx])

    def with_outcomes(self, y1, y0) -> "FullDataset":
        return FullDataset(self.covariates, y1, y0, self.propensity)


@dataclass(frozen=True, eq=False)
class ObservedDataset:
    """What an estimator may see: covariates, assignment, one outcome per row."""

    covariates: np.ndarray
    z: np.ndarray
    y_obs: np.ndarray

    def __post_init__(self):
        X = _frozen(self.covariates)
        if X.ndim != 2:
            raise ValueError("covariates must be a 2-d matrix")
        z = np.asarray(self.z)
        if z.shape != (X.shape[0],):
            raise ValueError("z length must match covariate rows")
        if not np.all((z == 0) | (z == 1)):
            raise ValueError("z entries must be 0 or 1")
        y = _frozen(self.y_obs)
        if y.shape != (X.shape[0],):
            raise ValueError("y_obs length must match covariate rows")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "z", _frozen(z, dtype=np.int8))
        object.__setattr__(self, "y_obs", y)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def treated(self) -> np.ndarray:
        return self.z == 1


@dataclass(frozen=True)
class GenerationConfig:
    n: int = 21663
    d: int = 10
    coeff_scale: float = 6.0
    target_treated_fraction: float = 0.443
    effect_scale: float = 0.5
    outcome_noise_sd: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise SchemaError("n and d must be at least 1")
        if not 0.01 < self.target_treated_fraction < 0.99:
            raise SchemaError("target_treated_fraction must lie in (0.01, 0.99)")
        if self.coeff_scale < 0 or self.effect_scale < 0 or self.outcome_noise_sd < 0:
            raise SchemaError("scales and noise sd must be nonnegative")

    @classmethod
    def from_mapping(cls, values) -> "GenerationConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                continue
            kwargs[key] = int(raw) if key in ("n", "d", "seed") else float(raw)
        return cls(**kwargs)


def generate_covariates(n: int, d: int, seed: int) -> np.ndarray:
    """Standard-normal covariate matrix of shape ``(n, d)``."""
    if n < 0 or d < 1:
        raise ValueError("need n >= 0 and d >= 1")
    return np.random.default_rng(seed).standard_normal((n, d))


def generate_propensities(X, coeff_scale: float, target_treated_fraction: float,
                          seed: int, *, max_iter: int = 200) -> np.ndarray:
    """Logistic-linear propensities whose mean hits ``target_treated_fraction``.

    A random unit direction ``beta`` is drawn from ``seed``; the intercept is
    found by bisection so that the mean clamped propensity is within 1e-4 of
    the target.

    Raises
    ------
    ValueError
        If the target is unreachable after ``max_iter`` bisection steps.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a nonempty matrix")
    if not 0.01 < target_treated_fraction < 0.99:
        raise ValueError("target_treated_fraction must lie in (0.01, 0.99)")
    if coeff_scale == 0:
        return np.full(X.shape[0], float(target_treated_fraction))

    rng = np.random.default_rng(seed)
    beta = rng.standard_normal(X.shape[1])
    beta /= np.linalg.norm(beta)
    score = coeff_scale * (X @ beta)

    def mean_p(b):
        return np.clip(expit(score + b), PROPENSITY_FLOOR, PROPENSITY_CEIL).mean()

    lo, hi = -50.0, 50.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        gap = mean_p(mid) - target_treated_fraction
        if abs(gap) < 1e-10:
            break
        if gap < 0:
            lo = mid
        else:
            hi = mid
    if abs(mean_p(mid) - target_treated_fraction) > 1e-4:
        raise ValueError(
            f"intercept bisection did not reach target {target_treated_fraction}"
        )
    return np.clip(expit(score + mid), PROPENSITY_FLOOR, PROPENSITY_CEIL)


def generate_outcomes(p, effect_scale: float, noise_sd: float, seed: int):
    """Return ``(y0, y1)`` for propensities ``p``.

    ``y0 = 1 - p + e0`` and ``y1 = y0 + effect_scale * sqrt(max(0, p - 1/2)) + e1``
    with independent normal noise of standard deviation ``noise_sd``.
    """
    p = np.asarray(p, dtype=float)
    rng = np.random.default_rng(seed)
    e0 = rng.standard_normal(p.shape)
    e1 = rng.standard_normal(p.shape)
    y0 = (1.0 - p) + noise_sd * e0
    y1 = y0 + effect_scale * np.sqrt(np.maximum(0.0, p - 0.5)) + noise_sd * e1
    return y0, y1


def generate_dataset(config: GenerationConfig) -> FullDataset:
    seeds = np.random.SeedSequence(config.seed).generate_state(3)
    X = generate_covariates(config.n, config.d, int(seeds[0]))
    p = generate_propensities(X, config.coeff_scale, config.target_treated_fraction,
                              int(seeds[1]))
    y0, y1 = generate_outcomes(p, config.effect_scale, config.outcome_noise_sd,
                               int(seeds[2]))
    return FullDataset(X, y1, y0, p)


def sample_treatment(p, seed: int) -> np.ndarray:
    """Independent Bernoulli(p_i) assignments as an int8 vector."""
    p = np.asarray(p, dtype=float)
    u = np.random.default_rng(seed).random(p.shape)
    return (u < p).astype(np.int8)


def observe(full: FullDataset, z) -> ObservedDataset:
    """Mask the potential outcomes down to the one selected by ``z``."""
    z = np.asarray(z)
    if z.shape != (full.n,):
        raise ValueError(f"z has length {z.shape}, dataset has {full.n} rows")
    y_obs = np.where(z == 1, full.y1, full.y0)
    return ObservedDataset(full.covariates, z, y_obs)


def add_outcome_noise(y, sd: float, seed: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if sd < 0:
        raise ValueError("sd must be nonnegative")
    if sd == 0:
        return y.copy()
    return y + sd * np.random.default_rng(seed).standard_normal(y.shape)


def perturb_propensities(p, level: float, seed: int) -> np.ndarray:
    """Add normal noise of sd ``level`` on the log-odds scale, then re-clamp."""
    p = np.asarray(p, dtype=float)
    if level < 0:
        raise ValueError("level must be nonnegative")
    if level == 0:
        return np.clip(p, PROPENSITY_FLOOR, PROPENSITY_CEIL)
    noise = level * np.random.default_rng(seed).standard_normal(p.shape)
    return np.clip(expit(logit(p) + noise), PROPENSITY_FLOOR, PROPENSITY_CEIL)


# -- CSV ingestion -----------------------------------------------------------

def _read_numeric(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: row {r} has {len(row)} cells, "
                                  f"header has {len(header)}")
            vals = []
            for c, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise SchemaError(
                        f"{path}: non-numeric cell {cell!r} at row {r}, "
                        f"column {c} ({header[c]})") from None
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def _require(header, names, path):
    for name in names:
        if name not in header:
            raise SchemaError(f"{path}: missing required column {name!r}")


def load_csv(path, mode: str = "observed"):
    """Read an observed or full dataset from a headered CSV file.

    In ``observed`` mode the columns ``z`` and ``y_obs`` are required; in
    ``full`` mode ``y0``, ``y1`` and ``p``. Every non-reserved column is a
    covariate, kept in file order.
    """
    if mode not in ("observed", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    header, data = _read_numeric(path)
    required = ("z", "y_obs") if mode == "observed" else ("y0", "y1", "p")
    _require(header, required, path)
    col = {h: i for i, h in enumerate(header)}
    cov_idx = [i for i, h in enumerate(header) if h not in RESERVED_COLUMNS]
    X = data[:, cov_idx]
    if mode == "observed":
        z = data[:, col["z"]]
        bad = np.flatnonzero((z != 0) & (z != 1))
        if bad.size:
            raise SchemaError(f"{path}: z must be 0 or 1 (row {bad[0] + 1})")
        return ObservedDataset(X, z.astype(np.int8), data[:, col["y_obs"]])
    p = data[:, col["p"]]
    bad = np.flatnonzero(~((p > 0) & (p < 1)))
    if bad.size:
        raise SchemaError(
            f"{path}: propensity {p[bad[0]]} outside (0, 1) at row {bad[0] + 1}")
    p = np.clip(p, PROPENSITY_FLOOR, PROPENSITY_CEIL)
    return FullDataset(X, data[:, col["y1"]], data[:, col["y0"]], p)


def read_treatment_column(path):
    """Return the ``z`` column of a CSV file, or None when absent."""
    header, data = _read_numeric(path)
    if "z" not in header:
        return None
    return data[:, header.index("z")].astype(np.int8)


def write_csv(path, dataset, z=None, covariate_names=None) -> None:
    """Write a dataset so that :func:`load_csv` reads it back unchanged."""
    X = dataset.covariates
    names = list(covariate_names or [f"x{j}" for j in range(X.shape[1])])
    if isinstance(dataset, ObservedDataset):
        header = names + ["z", "y_obs"]
        cols = [dataset.z, dataset.y_obs]
    else:
        header = names + ["y0", "y1", "p"]
        cols = [dataset.y0, dataset.y1, dataset.propensity]
        if z is not None:
            header.append("z")
            cols.append(np.asarray(z))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(X.shape[0]):
            row = [repr(float(v)) for v in X[i]]
            for c in cols:
                v = c[i]
                row.append(str(int(v)) if c.dtype.kind in "iub" else repr(float(v)))
            w.writerow(row)
