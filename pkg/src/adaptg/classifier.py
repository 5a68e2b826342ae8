"""Weighted class-probability models pi_k(x) for the mixture's M-step.

Every model is fit to soft labels: a row of nonnegative case weights over the
K classes for each observation. All of them expose the same small surface,
``fit / log_proba / predict_proba / objective / n_params``.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_softmax

RIDGE = 1e-4


# ---------------------------------------------------------------------------
# features

def _spline_knots(x: np.ndarray, df: int) -> np.ndarray:
    qs = np.linspace(0.0, 1.0, df + 1)
    return np.unique(np.quantile(x, qs))


def _ncs_basis(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Natural cubic spline basis without intercept (truncated power form)."""
    lo, hi = knots[0], knots[-1]
    scale = hi - lo
    u = (x - lo) / scale
    k = (knots - lo) / scale
    K = k.size
    cols = [u]

    def d(j):
        return (np.maximum(u - k[j], 0.0) ** 3 - np.maximum(u - k[-1], 0.0) ** 3) / (k[-1] - k[j])

    last = d(K - 2)
    for j in range(K - 2):
        cols.append(d(j) - last)
    return np.column_stack(cols)


def spline_basis(x, df: int, knots=None):
    """Natural cubic spline features for each column of ``x``.

    Boundary knots sit at the min and max of each column and ``df - 1``
    interior knots at equally spaced quantiles; the basis is linear beyond the
    boundary knots. Returns ``(features, knots_per_column)``; constant columns
    contribute nothing.
    """
    if df < 2:
        raise ValueError("spline df must be >= 2")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if knots is None and n <= df:
        raise ValueError(f"need more than df={df} observations, got {n}")
    blocks, used = [], []
    for j in range(x.shape[1]):
        kn = _spline_knots(x[:, j], df) if knots is None else knots[j]
        if kn is None or kn.size < 2:
            if knots is None:
                warnings.warn(f"covariate column {j} is constant; dropping it from the spline basis")
            used.append(None)
            continue
        if knots is None and kn.size < df + 1:
            warnings.warn(f"covariate column {j}: tied quantiles, spline df reduced to {kn.size - 1}")
        used.append(kn)
        blocks.append(_ncs_basis(x[:, j], kn))
    feats = np.column_stack(blocks) if blocks else np.empty((n, 0))
    return feats, used


@dataclass
class FeatureMap:
    """Featurization psi(x), always led by an intercept column.

    ``kind`` is ``intercept``, ``spline`` (natural cubic spline with ``df``
    per covariate) or ``identity``.
    """

    kind: str = "intercept"
    df: int = 3
    knots: list | None = field(default=None, repr=False)

    def fit(self, x) -> "FeatureMap":
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        if self.kind == "spline":
            _, self.knots = spline_basis(x, self.df) if x.shape[1] else (None, [])
        elif self.kind not in ("intercept", "identity"):
            raise ValueError(f"unknown featurization {self.kind!r}")
        return self

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        ones = np.ones((x.shape[0], 1))
        if self.kind == "intercept" or x.shape[1] == 0:
            return ones
        if self.kind == "identity":
            return np.column_stack([ones, x])
        feats, _ = spline_basis(x, self.df, knots=self.knots)
        return np.column_stack([ones, feats])

    def fit_transform(self, x) -> np.ndarray:
        return self.fit(x).transform(x)


# ---------------------------------------------------------------------------
# helpers shared by the parametric models

def _standardizer(F):
    mean = F.mean(axis=0)
    scale = F.std(axis=0)
    const = scale < 1e-12
    mean = np.where(const, 0.0, mean)
    scale = np.where(const, 1.0, scale)
    return mean, scale


def _independent_columns(F, tol=1e-8):
    keep = []
    for j in range(F.shape[1]):
        trial = keep + [j]
        if np.linalg.matrix_rank(F[:, trial], tol=tol * np.sqrt(F.shape[0])) == len(trial):
            keep.append(j)
    if len(keep) < F.shape[1]:
        warnings.warn(f"dropping {F.shape[1] - len(keep)} collinear feature column(s)")
    return np.array(keep, dtype=int)


def _check_weights(F, W):
    F = np.asarray(F, dtype=float)
    W = np.asarray(W, dtype=float)
    if F.ndim != 2 or W.ndim != 2 or F.shape[0] != W.shape[0]:
        raise ValueError("features must be (n, d) and weights (n, K)")
    if np.any(W < 0):
        raise ValueError("case weights must be nonnegative")
    return F, W


class InterceptOnly:
    """Constant class probabilities, the weighted class frequencies."""

    kind = "intercept"

    def __init__(self, probs=None):
        self.probs = None if probs is None else np.asarray(probs, dtype=float)

    @property
    def K(self):
        return self.probs.size

    def n_params(self, d: int | None = None) -> int:
        return self.K - 1

    def fit(self, F, W, init=None, maxiter=None):
        F, W = _check_weights(F, W)
        tot = W.sum(axis=0)
        self.probs = tot / tot.sum()
        self.history = [self.objective(F, W)]
        return self

    def init_constant(self, F, probs):
        self.probs = np.asarray(probs, dtype=float) / np.sum(probs)
        return self

    def log_proba(self, F):
        with np.errstate(divide="ignore"):
            lp = np.log(self.probs)
        return np.broadcast_to(lp, (np.shape(F)[0], self.K)).copy()

    def predict_proba(self, F):
        return np.exp(self.log_proba(F))

    def penalty(self) -> float:
        return 0.0

    def copy(self):
        return copy.copy(self)

    def objective(self, F, W) -> float:
        W = np.asarray(W, dtype=float)
        lp = self.log_proba(F)
        return float(np.sum(np.where(W > 0, W * lp, 0.0)))

    def to_dict(self):
        return {"kind": self.kind, "probs": self.probs.tolist()}


class _SoftmaxModel:
    """Shared machinery: standardization, L-BFGS fitting, reference-class softmax."""

    kind = "base"

    def __init__(self, ridge: float = RIDGE, maxiter: int = 200, tol: float = 1e-9,
                 track_history: bool = False):
        self.ridge = ridge
        self.maxiter = maxiter
        self.tol = tol
        self.track_history = track_history
        self.theta = None
        self.history: list[float] = []

    # subclasses implement size, _forward, _default_theta, _constant_theta

    def _prep(self, F):
        F = np.asarray(F, dtype=float)
        if getattr(self, "cols", None) is None:
            self.cols = _independent_columns(F)
            self.mean, self.scale = _standardizer(F[:, self.cols])
        return (F[:, self.cols] - self.mean) / self.scale

    def _negobj(self, theta, X, W, Wm=None, wsum=None):
        # the reference class has logit 0, so only K-1 logits are materialized
        if Wm is None:
            Wm, wsum = W[:, :-1], W.sum(axis=1)
        a, back = self._forward(theta, X)
        mx = np.maximum(a.max(axis=1), 0.0)
        e = np.exp(a - mx[:, None])
        denom = e.sum(axis=1) + np.exp(-mx)
        lse = mx + np.log(denom)
        val = np.vdot(Wm, a) - wsum @ lse - 0.5 * self.ridge * theta @ theta
        G = Wm - (wsum / denom)[:, None] * e
        grad = back(G) - self.ridge * theta
        return -val, -grad

    def _log_proba_X(self, theta, X):
        a, _ = self._forward(theta, X)
        return log_softmax(np.column_stack([a, np.zeros(X.shape[0])]), axis=1)

    def objective(self, F, W) -> float:
        """Penalized weighted log-likelihood at the current parameters."""
        X = self._prep(F)
        return -self._negobj(self.theta, X, np.asarray(W, dtype=float))[0]

    def gradient(self, F, W, theta=None) -> np.ndarray:
        X = self._prep(F)
        theta = self.theta if theta is None else theta
        return -self._negobj(theta, X, np.asarray(W, dtype=float))[1]

    def fit(self, F, W, init=None, maxiter=None):
        """Maximize the penalized objective, warm-started from ``init`` if given.

        The result is never worse than the starting point, so a capped
        ``maxiter`` still yields an ascent step.
        """
        F, W = _check_weights(F, W)
        self.K = W.shape[1]
        if self.K < 2:
            raise ValueError("need at least two classes")
        X = self._prep(F)
        if init is not None and init.theta is not None and init.theta.size == self.size(X.shape[1]):
            theta0 = init.theta.copy()
        elif self.theta is not None and self.theta.size == self.size(X.shape[1]):
            theta0 = self.theta.copy()
        else:
            theta0 = self._default_theta(X)
        args = (X, W, np.ascontiguousarray(W[:, :-1]), W.sum(axis=1))
        f0 = self._negobj(theta0, *args)[0]
        hist = [-f0]

        def record(xk):
            hist.append(-self._negobj(xk, *args)[0])

        res = minimize(self._negobj, theta0, args=args, jac=True, method="L-BFGS-B",
                       callback=record if self.track_history else None,
                       options={"maxiter": maxiter or self.maxiter, "ftol": self.tol, "gtol": 1e-7})
        if np.all(np.isfinite(res.x)) and res.fun <= f0:
            self.theta = res.x
        else:
            self.theta = theta0
        if not self.track_history:
            hist.append(-min(res.fun, f0))
        self.history = hist
        return self

    def init_constant(self, F, probs):
        """Set parameters so every row predicts ``probs`` (up to the ridge)."""
        probs = np.asarray(probs, dtype=float)
        self.K = probs.size
        X = self._prep(F)
        self.theta = self._constant_theta(X, probs)
        return self

    def log_proba(self, F):
        return self._log_proba_X(self.theta, self._prep(F))

    def predict_proba(self, F):
        return np.exp(self.log_proba(F))

    def penalty(self) -> float:
        return 0.5 * self.ridge * float(self.theta @ self.theta)

    def copy(self):
        """Shallow copy; fitting replaces ``theta`` rather than mutating it."""
        return copy.copy(self)

    def _const_col(self, X):
        const = np.flatnonzero(np.all(X == X[:1], axis=0))
        return int(const[0]) if const.size else None


class MultinomialLogit(_SoftmaxModel):
    """Softmax regression with the last class as reference."""

    kind = "logit"

    def size(self, d):
        return d * (self.K - 1)

    def n_params(self, d: int) -> int:
        return d * (self.K - 1)

    def _default_theta(self, X):
        return np.zeros(self.size(X.shape[1]))

    def _constant_theta(self, X, probs):
        B = np.zeros((X.shape[1], self.K - 1))
        j = self._const_col(X)
        if j is not None:
            B[j] = (np.log(probs[:-1]) - np.log(probs[-1])) / X[0, j]
        return B.ravel()

    def _forward(self, theta, X):
        B = theta.reshape(X.shape[1], self.K - 1)

        def back(G):
            return (X.T @ G).ravel()

        return X @ B, back

    def to_dict(self):
        return {"kind": self.kind, "ridge": self.ridge, "theta": self.theta.tolist()}


class ShallowNet(_SoftmaxModel):
    """One sigmoid hidden layer of ``hidden`` units, softmax output.

    The input layer reads the features (intercept included) and the output
    layer has no bias, giving ``(d + K - 1) * hidden`` parameters.
    """

    kind = "nnet"

    def __init__(self, hidden: int = 2, ridge: float = RIDGE, seed: int = 0,
                 maxiter: int = 200, tol: float = 1e-9, track_history: bool = False):
        super().__init__(ridge=ridge, maxiter=maxiter, tol=tol, track_history=track_history)
        if hidden < 1:
            raise ValueError("need at least one hidden unit")
        self.hidden = hidden
        self.seed = seed

    def size(self, d):
        return (d + self.K - 1) * self.hidden

    def n_params(self, d: int) -> int:
        return (d + self.K - 1) * self.hidden

    def _split(self, theta, d):
        h = self.hidden
        W = theta[: d * h].reshape(d, h)
        V = theta[d * h:].reshape(h, self.K - 1)
        return W, V

    def _default_theta(self, X):
        rng = np.random.default_rng(self.seed)
        d = X.shape[1]
        W = rng.normal(scale=1.0 / np.sqrt(d), size=(d, self.hidden))
        V = np.zeros((self.hidden, self.K - 1))
        return np.concatenate([W.ravel(), V.ravel()])

    def _constant_theta(self, X, probs):
        rng = np.random.default_rng(self.seed)
        d = X.shape[1]
        W = np.zeros((d, self.hidden))
        j = self._const_col(X)
        if j is None:
            return self._default_theta(X)
        W[j] = rng.uniform(-1.0, 1.0, size=self.hidden) / X[0, j]
        h0 = expit(W[j] * X[0, j])
        target = np.log(probs[:-1]) - np.log(probs[-1])
        V = np.outer(h0, target) / (h0 @ h0)
        return np.concatenate([W.ravel(), V.ravel()])

    def _forward(self, theta, X):
        W, V = self._split(theta, X.shape[1])
        H = expit(X @ W)

        def back(G):
            dV = H.T @ G
            dZ = (G @ V.T) * H * (1.0 - H)
            dW = X.T @ dZ
            return np.concatenate([dW.ravel(), dV.ravel()])

        return H @ V, back

    def to_dict(self):
        return {"kind": self.kind, "hidden": self.hidden, "ridge": self.ridge,
                "theta": self.theta.tolist()}


def make_classifier(kind: str, hidden: int = 2, seed: int = 0, ridge: float = RIDGE):
    if kind == "intercept":
        return InterceptOnly()
    if kind == "logit":
        return MultinomialLogit(ridge=ridge)
    if kind == "nnet":
        return ShallowNet(hidden=hidden, ridge=ridge, seed=seed)
    raise ValueError(f"unknown classifier {kind!r}")


def fit_multinomial_logit(features, weights, config=None) -> MultinomialLogit:
    config = dict(config or {})
    return MultinomialLogit(**config).fit(features, weights)


def fit_shallow_net(features, weights, hidden: int, config=None) -> ShallowNet:
    config = dict(config or {})
    model = ShallowNet(hidden=hidden, **config).fit(features, weights)
    if not np.all(np.isfinite(model.theta)):
        warnings.warn("shallow net training failed; falling back to intercept-only")
        return InterceptOnly().fit(features, weights)
    return model


def weighted_loglik(log_proba: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sum(np.where(weights > 0, weights * log_proba, 0.0)))


__all__ = [
    "FeatureMap", "InterceptOnly", "MultinomialLogit", "ShallowNet", "RIDGE",
    "fit_multinomial_logit", "fit_shallow_net", "make_classifier", "spline_basis",
    "weighted_loglik",
]
