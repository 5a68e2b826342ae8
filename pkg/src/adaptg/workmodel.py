"""Conditional Gaussian mixture working model, fit by EM on masked data.

The effect sizes are modeled as ``theta | x ~ sum_k pi_k(x) N(mu_k, tau2_k)``
so that ``z | x, class k ~ N(mu_k, tau2_k + sigma^2)``. Masked hypotheses
contribute every z-value compatible with their masked p-value, weighted by the
Jacobian of the masking and p-value maps; the resulting posterior blue
probabilities order the reveals.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from .classifier import FeatureMap, InterceptOnly, make_classifier, weighted_loglik
from .data import Hypotheses
from .engine import MaskedView, RunResult, rank_by_score, run
from .masking import CandidateTable, MaskingParams, default_params
from .normal import LOG_SQRT_2PI

log = logging.getLogger(__name__)
_LOG2 = math.log(2.0)

EM_TOL = 1e-6
EM_MAX_ITER = 30
FLOOR_FRACTION = 1e-4
# L-BFGS iterations for the warm-started classifier update inside one M-step
CLASSIFIER_STEP_ITER = 10


@dataclass(frozen=True)
class ModelCandidate:
    K: int
    featurization: str = "intercept"
    df: int | None = None
    classifier_kind: str = "intercept"
    hidden: int | None = None
    score: float | None = None

    def label(self) -> str:
        feat = self.featurization if self.df is None else f"{self.featurization}(df={self.df})"
        clf = self.classifier_kind if self.hidden is None else f"{self.classifier_kind}(h={self.hidden})"
        return f"K={self.K}, {feat}, {clf}"


def default_grid(n_covariates: int, classifier: str = "nnet", hidden: int = 2,
                 ks=(2, 3, 4, 5), dfs=(2, 3, 4)) -> list[ModelCandidate]:
    """K in ``ks`` crossed with intercept-only and spline featurizations."""
    grid = [ModelCandidate(K) for K in ks]
    if n_covariates > 0 and classifier != "intercept":
        h = hidden if classifier == "nnet" else None
        grid += [ModelCandidate(K, "spline", df, classifier, h) for K in ks for df in dfs]
    return grid


@dataclass
class GmmParams:
    mu: np.ndarray
    tau2: np.ndarray
    classifier: object
    symmetric: bool = False

    @property
    def K(self) -> int:
        return self.mu.size

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "tau2": self.tau2.tolist(), "symmetric": self.symmetric,
                "classifier": self.classifier.to_dict()}


@dataclass
class WeightTable:
    """Responsibilities ``w[i, k, h, c]``.

    ``h`` indexes the mirrored halves of a symmetric component (a single half
    otherwise) and ``c`` the candidate columns of ``table``.
    """

    w_full: np.ndarray
    table: CandidateTable
    log_norm: np.ndarray

    @property
    def w(self) -> np.ndarray:
        return self.w_full.sum(axis=2)

    @property
    def w_class(self) -> np.ndarray:
        return self.w_full.sum(axis=(2, 3))

    @property
    def blue_prob(self) -> np.ndarray:
        return self.w[:, :, self.table.b == 1].sum(axis=(1, 2))

    @property
    def loglik(self) -> float:
        return float(self.log_norm.sum())


def _signs(symmetric: bool) -> np.ndarray:
    return np.array([1.0, -1.0]) if symmetric else np.array([1.0])


def log_weights(table: CandidateTable, log_pi: np.ndarray, sigma, params: GmmParams) -> np.ndarray:
    """Unnormalized log weights ``log v[i, k, h, c]``; -inf for impossible candidates."""
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (table.n,))
    signs = _signs(params.symmetric)
    var = params.tau2[None, :] + sigma[:, None] ** 2  # (n, K)
    mu_eff = signs[:, None] * params.mu[None, :]  # (H, K)
    diff = table.z[:, None, None, :] - mu_eff.T[None, :, :, None]
    logphi = (-0.5 * diff ** 2 / var[:, :, None, None]
              - 0.5 * np.log(var)[:, :, None, None] - LOG_SQRT_2PI)
    lv = (logphi + log_pi[:, :, None, None] - math.log(signs.size)
          + table.logjac[:, None, None, :])
    return np.where(table.valid[:, None, None, :], lv, -np.inf)


def e_step(table: CandidateTable, features: np.ndarray, sigma, params: GmmParams) -> WeightTable:
    """Posterior class/candidate probabilities for every hypothesis.

    Masked hypotheses normalize over all classes and candidates; revealed ones
    only over candidates consistent with their bit.
    """
    log_pi = params.classifier.log_proba(features)
    lv = log_weights(table, log_pi, sigma, params)
    n = lv.shape[0]
    flat = lv.reshape(n, -1)
    norm = logsumexp(flat, axis=1)
    w = np.exp(flat - norm[:, None]).reshape(lv.shape)
    return WeightTable(w, table, norm)


def observed_loglik(table, features, sigma, params) -> float:
    return e_step(table, features, sigma, params).loglik


def q_scores(table: CandidateTable, features, sigma, params: GmmParams) -> np.ndarray:
    """Estimated P(b_i = 1 | x_i, m_i) for every hypothesis (0 or 1 if known)."""
    return e_step(table, features, sigma, params).blue_prob


class GmmTruth:
    """A fitted (or hand-set) mixture used as a generative model.

    ``log_density_z(z, x)`` is the marginal log density of z given x, so the
    engine's oracle policy can score hypotheses with it.
    """

    def __init__(self, params: GmmParams, feature_map: FeatureMap | None = None, sigma=1.0):
        self.params = params
        self.feature_map = feature_map or FeatureMap("intercept")
        self.sigma = sigma

    def log_density_z(self, z, x) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float).reshape(z.shape[0], -1)
        log_pi = self.params.classifier.log_proba(self.feature_map.transform(x))
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), z.shape)
        var = self.params.tau2[None, :] + sigma[:, None] ** 2
        base = log_pi - 0.5 * np.log(var) - LOG_SQRT_2PI

        def half(s):
            return -0.5 * (z[:, None] - s * self.params.mu[None, :]) ** 2 / var

        if self.params.symmetric:
            # logaddexp is commutative, so the density is exactly even in z
            comp = base - _LOG2 + np.logaddexp(half(1.0), half(-1.0))
        else:
            comp = base + half(1.0)
        return logsumexp(comp, axis=1)


# ---------------------------------------------------------------------------
# M-step

def _component_closed_form(y, W, s2, floor):
    tot = W.sum()
    mu = float((W * y).sum() / tot)
    S = float((W * (y - mu) ** 2).sum() / tot)
    return mu, max(S - s2, floor)


def _component_negll(par, y, W, s2):
    mu, lt = par
    t2 = math.exp(lt)
    v = t2 + s2
    r = y - mu
    val = 0.5 * np.sum(W * (r ** 2 / v + np.log(v)))
    g_mu = -np.sum(W * r / v)
    g_t2 = 0.5 * np.sum(W * (1.0 / v - r ** 2 / v ** 2))
    return val, np.array([g_mu, g_t2 * t2])


def _component_quasi_newton(y, W, s2, floor, start):
    mu0, t20 = start
    x0 = np.array([mu0, math.log(max(t20, floor))])
    f0 = _component_negll(x0, y, W, s2)[0]
    hi = math.log(max(1e6, 100.0 * float(np.max(y ** 2)) + 1.0))
    res = minimize(_component_negll, x0, args=(y, W, s2), jac=True, method="L-BFGS-B",
                   bounds=[(None, None), (math.log(floor), hi)],
                   options={"maxiter": 200, "ftol": 1e-14, "gtol": 1e-10})
    if not np.all(np.isfinite(res.x)) or res.fun > f0:
        return mu0, max(t20, floor), False
    return float(res.x[0]), float(math.exp(res.x[1])), bool(res.success)


def m_step_gaussian(y, W, s2, floor, start=None, method="auto"):
    """Weighted ML for one component: maximize ``sum W log phi(y; mu, tau2 + s2)``.

    ``y``, ``W`` and ``s2`` are flat arrays of candidate values, weights and
    per-row noise variances. Closed form when all ``s2`` agree, bounded
    quasi-Newton otherwise. Returns ``(mu, tau2, converged)``.
    """
    y = np.asarray(y, dtype=float)
    W = np.asarray(W, dtype=float)
    s2 = np.broadcast_to(np.asarray(s2, dtype=float), y.shape)
    keep = W > 0
    y, W, s2 = y[keep], W[keep], s2[keep]
    if W.sum() < 1e-10:
        if start is None:
            return 0.0, floor, False
        return start[0], start[1], False
    equal = np.ptp(s2) == 0
    if method == "closed" or (method == "auto" and equal):
        if not equal:
            raise ValueError("closed-form M-step needs equal standard errors")
        mu, t2 = _component_closed_form(y, W, float(s2[0]), floor)
        return mu, t2, True
    if start is None:
        mu, _ = _component_closed_form(y, W, float(np.mean(s2)), floor)
        start = (mu, max(float(np.average((y - mu) ** 2, weights=W) - np.mean(s2)), floor))
    return _component_quasi_newton(y, W, s2, floor, start)


def m_step(table: CandidateTable, features, sigma, weights: WeightTable, params: GmmParams,
           floor: float, method="auto"):
    """New parameters from the current responsibilities.

    The classifier is warm-started from ``params.classifier`` and refit on the
    class weights. The refit is kept only if it does not lower the unpenalized
    weighted log-likelihood of the class weights, so every M-step increases
    the expected complete-data log-likelihood and EM stays monotone in the
    observed-data log-likelihood. Each Gaussian component is refit on its
    candidate values.
    Returns ``(GmmParams, flags)`` where ``flags`` lists components whose
    optimizer failed (their previous values are kept).
    """
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (table.n,))
    wc = weights.w_class
    clf = params.classifier.copy().fit(features, wc, init=params.classifier,
                                       maxiter=CLASSIFIER_STEP_ITER)
    if (weighted_loglik(clf.log_proba(features), wc)
            < weighted_loglik(params.classifier.log_proba(features), wc)):
        clf = params.classifier

    signs = _signs(params.symmetric)
    y = (signs[None, :, None] * table.z[:, None, :])  # (n, H, C)
    s2 = np.broadcast_to((sigma ** 2)[:, None, None], y.shape)
    mu = params.mu.copy()
    tau2 = params.tau2.copy()
    flags = []
    for k in range(params.K):
        W = weights.w_full[:, k, :, :]
        m_k, t_k, ok = m_step_gaussian(y.ravel(), W.ravel(), s2.ravel(), floor,
                                       start=(mu[k], tau2[k]), method=method)
        if not ok and W.sum() >= 1e-10:
            flags.append(k)
        mu[k], tau2[k] = m_k, t_k
    return GmmParams(mu, tau2, clf, params.symmetric), flags


# ---------------------------------------------------------------------------
# initialization and EM

def tau2_floor(table: CandidateTable) -> float:
    pooled = table.pooled_z()
    return FLOOR_FRACTION * max(float(np.var(pooled)), 1e-8)


def init_params(table: CandidateTable, K: int, features, sigma, classifier=None,
                symmetric: bool = False, seed: int = 0) -> GmmParams:
    """K-means (10 restarts) on the pooled candidate z-values.

    Component variances are the cluster variances minus the mean noise
    variance, floored; the classifier starts at the cluster proportions.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (table.n,))
    pooled = table.pooled_z()
    rows = np.nonzero(table.valid)[0]
    distinct = np.unique(np.round(pooled, 12)).size
    if K > distinct:
        warnings.warn(f"only {distinct} distinct candidate values; reducing K from {K} to {distinct}")
        K = distinct
    floor = tau2_floor(table)
    s2bar = float(np.mean(sigma[rows] ** 2))
    vals = np.abs(pooled) if symmetric else pooled

    if K == 1:
        labels = np.zeros(vals.size, dtype=int)
    else:
        km = KMeans(n_clusters=K, n_init=10, random_state=seed).fit(vals[:, None])
        labels = km.labels_.copy()
        for k in range(K):
            if not np.any(labels == k):
                big = np.bincount(labels, minlength=K).argmax()
                members = np.flatnonzero(labels == big)
                upper = members[vals[members] > np.median(vals[members])]
                labels[upper] = k

    mu = np.array([vals[labels == k].mean() for k in range(K)])
    tau2 = np.array([max(vals[labels == k].var() - s2bar, floor) for k in range(K)])
    order = np.argsort(mu)
    mu, tau2 = mu[order], tau2[order]
    props = np.bincount(labels, minlength=K)[order].astype(float)
    props /= props.sum()
    clf = InterceptOnly() if classifier is None else classifier
    clf.init_constant(features, props)
    return GmmParams(mu, tau2, clf, symmetric)


@dataclass
class FitResult:
    params: GmmParams
    objective_path: list[float]
    loglik: float
    n_iter: int
    converged: bool
    flags: list = field(default_factory=list)
    weights: WeightTable | None = None


def fit_em(table: CandidateTable, features, sigma, init: GmmParams, max_iter: int = EM_MAX_ITER,
           tol: float = EM_TOL, floor: float | None = None, method="auto") -> FitResult:
    """Alternate E- and M-steps until the relative objective change drops below ``tol``.

    The tracked objective is the observed-data log-likelihood, which these
    generalized EM steps never decrease.
    """
    floor = tau2_floor(table) if floor is None else floor
    params = init
    if np.any(init.tau2 < floor):
        # warm starts may come from a table with a lower floor; start from a feasible point
        params = replace(init, tau2=np.maximum(init.tau2, floor))
    wt = e_step(table, features, sigma, params)
    obj = wt.loglik
    path = [obj]
    flags = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new, bad = m_step(table, features, sigma, wt, params, floor, method=method)
        flags.extend((it, k) for k in bad)
        wt_new = e_step(table, features, sigma, new)
        obj_new = wt_new.loglik
        if not np.isfinite(obj_new):
            break
        params, wt = new, wt_new
        path.append(obj_new)
        if abs(obj_new - obj) <= tol * (1.0 + abs(obj)):
            converged = True
            obj = obj_new
            break
        obj = obj_new
    return FitResult(params, path, wt.loglik, it, converged, flags, wt)


def information_criterion(loglik: float, n_params: int, n: int, criterion: str = "aic") -> float:
    if criterion == "aic":
        return 2.0 * n_params - 2.0 * loglik
    if criterion == "bic":
        return math.log(n) * n_params - 2.0 * loglik
    raise ValueError(f"unknown criterion {criterion!r}")


def candidate_n_params(candidate: ModelCandidate, params: GmmParams, d: int) -> int:
    return params.classifier.n_params(d) + 2 * params.K


@dataclass
class Selection:
    candidate: ModelCandidate
    fit: FitResult
    feature_map: FeatureMap
    features: np.ndarray
    scores: list[tuple[str, float]]


def fit_candidate(table, x, sigma, candidate: ModelCandidate, symmetric=False, seed=0,
                  max_iter=EM_MAX_ITER, tol=EM_TOL, kmeans_cache=None):
    fmap = FeatureMap(candidate.featurization, candidate.df or 3).fit(x)
    F = fmap.transform(x)
    clf = make_classifier(candidate.classifier_kind, hidden=candidate.hidden or 2, seed=seed)
    init = None
    key = (candidate.K, symmetric)
    if kmeans_cache is not None and key in kmeans_cache:
        base = kmeans_cache[key]
        clf.init_constant(F, base[2])
        init = GmmParams(base[0].copy(), base[1].copy(), clf, symmetric)
    if init is None:
        init = init_params(table, candidate.K, F, sigma, clf, symmetric, seed)
        if kmeans_cache is not None:
            probs = init.classifier.predict_proba(F[:1])[0]
            kmeans_cache[key] = (init.mu.copy(), init.tau2.copy(), probs)
    fit = fit_em(table, F, sigma, init, max_iter=max_iter, tol=tol)
    return fmap, F, fit


def select_model(table: CandidateTable, x, sigma, candidates: list[ModelCandidate],
                 criterion: str = "aic", symmetric: bool = False, seed: int = 0,
                 max_iter: int = EM_MAX_ITER, tol: float = EM_TOL) -> Selection:
    """Fit every candidate on the masked data and keep the best by AIC/BIC.

    The parameter count is the classifier's plus two per component.
    """
    x = np.asarray(x, dtype=float).reshape(table.n, -1)
    if x.shape[1] == 0:
        candidates = [c for c in candidates if c.featurization == "intercept"] or [ModelCandidate(2)]
    n = table.n
    best = None
    scores = []
    cache: dict = {}
    for cand in candidates:
        try:
            fmap, F, fit = fit_candidate(table, x, sigma, cand, symmetric, seed, max_iter, tol, cache)
        except Exception as exc:  # one bad candidate should not sink the selection
            log.warning("candidate %s failed: %s", cand.label(), exc)
            continue
        k_params = candidate_n_params(cand, fit.params, F.shape[1])
        score = information_criterion(fit.loglik, k_params, n, criterion)
        scores.append((cand.label(), score))
        if best is None or score < best[0].score:
            best = (replace(cand, K=fit.params.K, score=score), fit, fmap, F)
    if best is None:
        cand = ModelCandidate(2)
        fmap, F, fit = fit_candidate(table, x, sigma, cand, symmetric, seed, max_iter, tol)
        score = information_criterion(fit.loglik, candidate_n_params(cand, fit.params, 1), n, criterion)
        best = (replace(cand, score=score), fit, fmap, F)
    return Selection(best[0], best[1], best[2], best[3], scores)


# ---------------------------------------------------------------------------
# reveal policy driven by the working model

class GmmPolicy:
    """Reveal the masked hypotheses with the highest estimated blue probability.

    The model is selected once on the initial masked data and refit
    (warm-started) at every call afterwards.
    """

    def __init__(self, grid: list[ModelCandidate] | None = None, criterion: str = "aic",
                 classifier: str = "nnet", hidden: int = 2, symmetric: bool = False,
                 seed: int = 0, max_iter: int = EM_MAX_ITER, tol: float = EM_TOL):
        self.grid = grid
        self.criterion = criterion
        self.classifier = classifier
        self.hidden = hidden
        self.symmetric = symmetric
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol
        self.selection: Selection | None = None
        self.params: GmmParams | None = None
        self.n_fits = 0
        self.fallbacks = 0
        self.paths: list[list[float]] = []

    def __call__(self, view: MaskedView):
        table = view.candidates()
        if self.selection is None:
            grid = self.grid or default_grid(view.x.shape[1], self.classifier, self.hidden)
            self.selection = select_model(table, view.x, view.sigma, grid, self.criterion,
                                          self.symmetric, self.seed, self.max_iter, self.tol)
            fit = self.selection.fit
        else:
            fit = fit_em(table, self.selection.features, view.sigma, self.params,
                         max_iter=self.max_iter, tol=self.tol)
        self.params = fit.params
        self.n_fits += 1
        self.paths.append(fit.objective_path)
        q = fit.weights.blue_prob
        idx = view.masked_indices
        return rank_by_score(idx, q[idx])[: view.batch_size]

    def diagnostics(self) -> dict:
        if self.selection is None:
            return {"policy": "gmm", "fits": 0}
        sel = self.selection
        return {
            "policy": "gmm",
            "selected": sel.candidate.label(),
            "criterion": self.criterion,
            "score": sel.candidate.score,
            "candidate_scores": [{"model": m, "score": s} for m, s in sel.scores],
            "selection_objective_path": self.paths[0],
            "last_objective_path": self.paths[-1],
            "fits": self.n_fits,
            # smallest one-iteration change of the objective over every fit; >= 0 up to rounding
            "min_objective_step": min((float(np.min(np.diff(p))) for p in self.paths if len(p) > 1),
                                      default=0.0),
            "params": self.params.to_dict() if self.params is not None else None,
        }


def run_adapt_gmm(hyps: Hypotheses, alpha: float, params: MaskingParams | None = None,
                  standardize: bool = True, batch_size: int | None = None, **policy_kwargs) -> RunResult:
    """The full pipeline: default masking, GMM working model, reveal loop."""
    if standardize:
        hyps = hyps.standardized()
    if params is None:
        params = default_params(len(hyps), alpha, null=hyps.null)
    policy = GmmPolicy(**policy_kwargs)
    return run(hyps, params, alpha, policy, batch_size=batch_size)
