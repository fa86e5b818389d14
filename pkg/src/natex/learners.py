"""Regression engines used by the estimators.

Two learners share one interface: a closed-form weighted ridge, which is
deterministic and cheap enough to refit thousands of times, and a small
ReLU network trained with seeded mini-batch Adam. The propensity model is
the same network with a logistic head.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.special import expit

from .dataset import PROPENSITY_CEIL, PROPENSITY_FLOOR

__all__ = [
    "RankDeficiencyError",
    "DegenerateLabelError",
    "RegressorSpec",
    "Regressor",
    "WeightScheme",
    "PROPENSITY_SPEC",
    "fit",
    "fit_ridge",
    "fit_network",
    "fit_propensity",
    "truncate_propensities",
    "zero_regressor",
]


class RankDeficiencyError(np.linalg.LinAlgError):
    pass


class DegenerateLabelError(ValueError):
    pass


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = "network"
    ridge_lambda: float = 1e-6
    hidden_width: int = 100
    n_layers: int = 3
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ridge", "network"):
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be nonnegative")
        if self.n_layers < 1 or self.hidden_width < 1 or self.batch_size < 1:
            raise ValueError("network sizes must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def ridge(cls, lam: float = 1e-6) -> "RegressorSpec":
        return cls(kind="ridge", ridge_lambda=lam)

    @classmethod
    def from_mapping(cls, values) -> "RegressorSpec":
        ints = {"hidden_width", "n_layers", "epochs", "batch_size", "seed"}
        kwargs = {}
        names = {f.name for f in fields(cls)}
        for key, raw in values.items():
            if key not in names:
                continue
            if key == "kind":
                kwargs[key] = str(raw).strip()
            elif key in ints:
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)


# Short training keeps in-sample propensity estimates calibrated; at the
# outcome models' 200 epochs the classifier drives estimates toward 0 and 1.
PROPENSITY_SPEC = RegressorSpec(epochs=10)


class WeightScheme(enum.Enum):
    """Per-row regression weights for the treated and control fits."""

    UNIT = "unit"
    SINGLE = "single"
    DOUBLE = "double"

    def weights(self, p):
        """Return ``(w1, w0)`` evaluated at propensities ``p``."""
        p = np.asarray(p, dtype=float)
        q = 1.0 - p
        if self is WeightScheme.UNIT:
            return np.ones_like(p), np.ones_like(p)
        if self is WeightScheme.SINGLE:
            return q / p, p / q
        return q / p**2, p / q**2


def _fingerprint(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=float)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Regressor:
    """A fitted prediction function ``x -> float``.

    ``params`` holds either ridge coefficients or network layers; ``predict``
    is a pure function of them.
    """

    kind: str
    params: tuple
    spec: RegressorSpec | None = None
    fingerprint: str = ""
    loss_history: tuple = field(default=(), repr=False)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "zero":
            return np.zeros(X.shape[0])
        if self.kind == "ridge":
            coef, intercept = self.params
            return X @ coef + intercept
        x_mean, x_scale, y_mean, y_scale, layers = self.params
        Xs = ((X - x_mean) / x_scale).astype(_DTYPE)
        out = _forward(Xs, layers)[-1][:, 0].astype(float)
        return out * y_scale + y_mean

    __call__ = predict


def zero_regressor() -> Regressor:
    return Regressor("zero", ())


# -- ridge -------------------------------------------------------------------

def fit_ridge(X, y, w=None, lam: float = 1e-6, *, fit_intercept: bool = True,
              spec: RegressorSpec | None = None) -> Regressor:
    """Weighted ridge via the normal equations ``(X'WX + lam I) b = X'Wy``.

    The intercept column is appended and left unpenalized.

    Raises
    ------
    RankDeficiencyError
        If the normal equations are singular; use ``lam > 0``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("X, y and w lengths disagree")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    design = np.hstack([X, np.ones((n, 1))]) if fit_intercept else X
    Xw = design * w[:, None]
    A = design.T @ Xw
    penalty = np.full(design.shape[1], lam)
    if fit_intercept:
        penalty[-1] = 0.0
    A[np.diag_indices_from(A)] += penalty
    b = Xw.T @ y
    try:
        if lam == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
            raise np.linalg.LinAlgError
        beta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError(
            "singular normal equations; use ridge_lambda > 0") from None
    coef, intercept = (beta[:-1], float(beta[-1])) if fit_intercept else (beta, 0.0)
    coef.setflags(write=False)
    return Regressor("ridge", (coef, intercept), spec or RegressorSpec.ridge(lam),
                     _fingerprint(X, y, w))


# -- network -----------------------------------------------------------------

# single precision halves training time; results stay seeded-deterministic
_DTYPE = np.float32

def _init_layers(sizes, rng):
    """Layers as (W, b) views into one flat parameter buffer."""
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(fan_in, fan_out), (fan_out,)]
    flat = np.empty(sum(int(np.prod(s)) for s in shapes), dtype=_DTYPE)
    views = _views(flat, shapes)
    for k, (fan_in, _) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        for v in views[2 * k:2 * k + 2]:
            v[...] = rng.uniform(-bound, bound, v.shape)
    return flat, shapes, _pairs(views)


def _views(flat, shapes):
    out, pos = [], 0
    for s in shapes:
        size = int(np.prod(s))
        out.append(flat[pos:pos + size].reshape(s))
        pos += size
    return out


def _pairs(views):
    return [(views[i], views[i + 1]) for i in range(0, len(views), 2)]


def _forward(X, layers):
    acts = [X]
    h = X
    for k, (W, b) in enumerate(layers):
        h = h @ W + b
        if k < len(layers) - 1:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    return acts


def _backward(acts, layers, grad_out, grads):
    """Write parameter gradients into the ``grads`` (gW, gb) views."""
    g = grad_out
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        gW, gb = grads[k]
        np.matmul(acts[k].T, g, out=gW)
        g.sum(axis=0, out=gb)
        if k:
            g = (g @ W.T) * (acts[k] > 0)


class _Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size, dtype=_DTYPE)
        self.v = np.zeros(size, dtype=_DTYPE)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        denom = np.sqrt(self.v / c2)
        denom += self.eps
        params -= (self.lr / c1) * self.m / denom


def _standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def _train(Xs, target, w, spec, seed, loss, out_bias=None):
    """Mini-batch Adam on a weighted loss; returns (layers, loss history)."""
    n, d = Xs.shape
    rng = np.random.default_rng(seed)
    sizes = [d] + [spec.hidden_width] * (spec.n_layers - 1) + [1]
    flat, shapes, layers = _init_layers(sizes, rng)
    if out_bias is not None:
        layers[-1][1][...] = out_bias
    grad = np.zeros_like(flat)
    grads = _pairs(_views(grad, shapes))
    opt = _Adam(flat.size, spec.learning_rate)
    Xs = Xs.astype(_DTYPE)
    w = (w / w.mean()).astype(_DTYPE)
    t = target.astype(_DTYPE)[:, None]

    def full_loss():
        out = _forward(Xs, layers)[-1]
        return float(np.mean(w * loss(out, t)[0][:, 0]))

    history = [full_loss()]
    bs = min(spec.batch_size, n)
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            acts = _forward(Xs[idx], layers)
            _, dout = loss(acts[-1], t[idx])
            grad_out = (w[idx, None] * dout) / idx.size
            _backward(acts, layers, grad_out, grads)
            opt.step(flat, grad)
    if spec.epochs:
        history.append(full_loss())
    flat.setflags(write=False)
    return layers, tuple(history)


def _squared(out, t):
    r = out - t
    return r * r, 2.0 * r


def _logistic(out, t):
    # binary cross-entropy on logits, stable form
    ll = np.logaddexp(0.0, out) - t * out
    return ll, expit(out) - t


def fit_network(X, y, w=None, spec: RegressorSpec | None = None,
                seed: int | None = None) -> Regressor:
    """Fit a ReLU network minimizing ``sum_i w_i (y_i - f(x_i))^2``.

    Inputs are standardized on the training rows and the target on its
    weighted mean and spread, so rows of weight zero have no influence at
    all. Weights are rescaled to mean one, which leaves the minimizer
    unchanged.
    """
    spec = spec or RegressorSpec()
    if spec.kind != "network":
        raise ValueError("fit_network needs a network spec")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot fit a network on an empty training set")
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("X, y and w lengths disagree")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative with a positive entry")
    seed = spec.seed if seed is None else seed

    x_mean, x_scale = _standardize(X)
    active = w > 0
    wa = w[active]
    y_mean = float(np.average(y[active], weights=wa))
    y_scale = float(np.sqrt(np.average((y[active] - y_mean) ** 2, weights=wa)))
    if not y_scale > 1e-12:
        y_scale = 1.0
    target = np.where(active, (y - y_mean) / y_scale, 0.0)
    layers, history = _train((X - x_mean) / x_scale, target, w, spec, seed, _squared)
    return Regressor("network", (x_mean, x_scale, y_mean, y_scale, tuple(layers)),
                     spec, _fingerprint(X, y, w), history)


def fit(X, y, w, spec: RegressorSpec, seed: int) -> Regressor:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "ridge":
        return fit_ridge(X, y, w, spec.ridge_lambda, spec=spec)
    return fit_network(X, y, w, spec, seed)


def truncate_propensities(p) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=float), PROPENSITY_FLOOR, PROPENSITY_CEIL)


def fit_propensity(X, z, spec: RegressorSpec | None = None, seed: int | None = None,
                   *, truncate: bool = True) -> np.ndarray:
    """Estimate propensities with a logistic-head network and BCE loss.

    Returns in-sample estimates, clamped to [0.01, 0.99] unless
    ``truncate=False`` (then only kept off exact 0 and 1).
    """
    spec = spec or PROPENSITY_SPEC
    if spec.kind != "network":
        spec = replace(PROPENSITY_SPEC, seed=spec.seed)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise DegenerateLabelError("empty treatment vector")
    if z.min() == z.max():
        raise DegenerateLabelError("z contains a single class")
    seed = spec.seed if seed is None else seed
    x_mean, x_scale = _standardize(X)
    Xs = (X - x_mean) / x_scale
    # head bias starts at the base-rate log-odds
    base = float(np.log(z.mean() / (1.0 - z.mean())))
    layers, _ = _train(Xs, z, np.ones(z.size), spec, seed, _logistic, out_bias=base)
    p = expit(_forward(Xs.astype(_DTYPE), layers)[-1][:, 0].astype(float))
    if truncate:
        return truncate_propensities(p)
    return np.clip(p, 1e-6, 1 - 1e-6)
