"""Simulation harness: the logistic covariate scenario, Monte Carlo FDR/TPR
evaluation, the estimator-conservatism check and the card-game verifier."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import expit, logsumexp

from .baselines import bh, storey_bh
from .data import Hypotheses
from .engine import OraclePolicy, run
from .masking import (ONE_SIDED_RIGHT, POINT, MaskingParams, NullType, default_params,
                      mask_array)
from .normal import LOG_SQRT_2PI, norm_sf
from .workmodel import run_adapt_gmm

log = logging.getLogger(__name__)

INTERVAL_1 = NullType("interval", 1.0)


def pi1(x):
    """Probability that a hypothesis with covariate ``x`` is drawn from the signal class."""
    return 0.75 * expit(6.0 * np.asarray(x, dtype=float) - 9.0)


@dataclass(frozen=True)
class LogisticSimConfig:
    n: int = 3000
    replications: int = 100
    alpha_grid: tuple = (0.05, 0.1, 0.2)
    null_type: NullType = ONE_SIDED_RIGHT
    seed: int = 0
    signal_loc: float = 2.0
    signal_scale: float = 0.5


@dataclass
class SimDraw:
    hyps: Hypotheses
    gamma: np.ndarray
    theta: np.ndarray
    is_null: np.ndarray


def null_status(theta, null: NullType) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if null.kind == "point":
        return theta == 0.0
    if null.kind == "one-sided-right":
        return theta <= 0.0
    if null.kind == "one-sided-left":
        return theta >= 0.0
    return np.abs(theta) <= null.delta


def gen_logistic(config: LogisticSimConfig, replication: int = 0, rng=None) -> SimDraw:
    """One draw of ``(x, gamma, theta, z)`` with p-values for the configured null."""
    if rng is None:
        rng = np.random.default_rng([config.seed, replication])
    n = config.n
    x = rng.normal(size=n)
    gamma = rng.uniform(size=n) < pi1(x)
    signal = rng.logistic(config.signal_loc, config.signal_scale, size=n)
    theta = np.where(gamma, signal, 0.0)
    z = rng.normal(theta, 1.0)
    hyps = Hypotheses.from_z(z, 1.0, x[:, None], config.null_type, covariate_names=["x"])
    return SimDraw(hyps, gamma, theta, null_status(theta, config.null_type))


class LogisticTruth:
    """Exact conditional density of z given x under the logistic scenario.

    The signal density is the logistic prior convolved with N(0, 1), computed
    by quadrature on a fixed theta grid.
    """

    def __init__(self, loc: float = 2.0, scale: float = 0.5, half_width: float = 25.0,
                 n_grid: int = 2001):
        self.loc = loc
        self.scale = scale
        self.grid = np.linspace(loc - half_width * scale, loc + half_width * scale, n_grid)
        u = (self.grid - loc) / scale
        # log logistic density plus log trapezoid weights
        logp = -u - 2.0 * np.logaddexp(0.0, -u) - math.log(scale)
        h = self.grid[1] - self.grid[0]
        w = np.full(n_grid, h)
        w[[0, -1]] = h / 2
        self.log_prior_w = logp + np.log(w)

    def log_signal_density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        lp = -0.5 * (z[:, None] - self.grid[None, :]) ** 2 - LOG_SQRT_2PI + self.log_prior_w
        return logsumexp(lp, axis=1)

    def log_density_z(self, z, x) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        p1 = pi1(np.asarray(x, dtype=float).reshape(z.shape[0], -1)[:, 0])
        log_null = -0.5 * z ** 2 - LOG_SQRT_2PI
        with np.errstate(divide="ignore"):
            return np.logaddexp(np.log1p(-p1) + log_null, np.log(p1) + self.log_signal_density(z))


# ---------------------------------------------------------------------------
# methods

def _method_adaptg(draw, alpha, seed):
    return run_adapt_gmm(draw.hyps, alpha, seed=seed).rejected


def _method_adaptg_sym(draw, alpha, seed):
    return run_adapt_gmm(draw.hyps, alpha, params=MaskingParams.symmetric(), seed=seed).rejected


def _method_oracle(draw, alpha, seed):
    params = default_params(len(draw.hyps), alpha, null=draw.hyps.null)
    return run(draw.hyps, params, alpha, OraclePolicy(LogisticTruth())).rejected


def _method_bh(draw, alpha, seed):
    return bh(draw.hyps.p, alpha).indices


def _method_storey(draw, alpha, seed):
    return storey_bh(draw.hyps.p, alpha).indices


METHODS = {
    "adaptg": _method_adaptg,
    "adaptg-sym": _method_adaptg_sym,
    "adaptg-oracle": _method_oracle,
    "bh": _method_bh,
    "storey": _method_storey,
}


def fdp_tpr(rejected, is_null) -> tuple[float, float]:
    rejected = np.asarray(rejected, dtype=int)
    v = int(is_null[rejected].sum())
    r = rejected.size
    n_alt = int((~is_null).sum())
    fdp = v / max(r, 1)
    tpr = (r - v) / n_alt if n_alt else 0.0
    return fdp, tpr


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def values(self, method: str, alpha: float, key: str = "tpr") -> dict[int, float]:
        return {r["replication"]: r[key] for r in self.rows
                if r["method"] == method and r["alpha"] == alpha}

    def summary(self) -> list[dict]:
        out = []
        keys = sorted({(r["method"], r["alpha"]) for r in self.rows} |
                      {(e["method"], e["alpha"]) for e in self.errors})
        for method, alpha in keys:
            sel = [r for r in self.rows if r["method"] == method and r["alpha"] == alpha]
            n_err = sum(1 for e in self.errors if e["method"] == method and e["alpha"] == alpha)
            fdp = np.array([r["fdp"] for r in sel])
            tpr = np.array([r["tpr"] for r in sel])
            k = len(sel)
            se = (lambda a: float(a.std(ddof=1) / math.sqrt(k)) if k > 1 else float("nan"))
            out.append({
                "method": method, "alpha": alpha, "replications": k, "errors": n_err,
                "fdr": float(fdp.mean()) if k else float("nan"), "fdr_se": se(fdp),
                "tpr": float(tpr.mean()) if k else float("nan"), "tpr_se": se(tpr),
            })
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "alpha", "replication", "fdp", "tpr"])
            for r in self.rows:
                w.writerow([r["method"], r["alpha"], r["replication"], repr(r["fdp"]), repr(r["tpr"])])

    def write_json(self, path):
        doc = {"config": self.config, "summary": self.summary(), "errors": self.errors}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _one_replication(args):
    methods, config, rep = args
    draw = gen_logistic(config, rep)
    rows, errors = [], []
    for method in methods:
        fn = METHODS[method]
        for alpha in config.alpha_grid:
            try:
                rejected = fn(draw, alpha, rep)
            except Exception as exc:  # recorded and excluded, counted in the summary
                errors.append({"method": method, "alpha": alpha, "replication": rep,
                               "error": f"{type(exc).__name__}: {exc}"})
                continue
            fdp, tpr = fdp_tpr(rejected, draw.is_null)
            rows.append({"method": method, "alpha": alpha, "replication": rep,
                         "fdp": fdp, "tpr": tpr, "rejections": int(len(rejected))})
    return rows, errors


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("ADAPTG_THREADS")
    if env:
        return max(1, int(env))
    return 1


def evaluate(methods, config: LogisticSimConfig, workers: int | None = None) -> EvalReport:
    """Run every method at every alpha on ``config.replications`` seeded draws.

    Replication ``r`` uses the stream ``default_rng([seed, r])`` whatever the
    worker count, and results are collected in replication order.
    """
    methods = list(methods)
    if not methods:
        raise ValueError("need at least one method")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s): {unknown}")
    jobs = [(methods, config, rep) for rep in range(config.replications)]
    workers = worker_count(workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_replication, jobs))
    else:
        results = [_one_replication(j) for j in jobs]
    report = EvalReport(config={
        "n": config.n, "replications": config.replications, "alpha_grid": list(config.alpha_grid),
        "null": str(config.null_type), "seed": config.seed, "methods": methods})
    for rows, errors in results:
        report.rows.extend(rows)
        report.errors.extend(errors)
    return report


SCENARIOS = {
    "logistic-onesided": (ONE_SIDED_RIGHT, ("adaptg", "bh", "storey")),
    "logistic-point": (POINT, ("adaptg", "bh", "storey")),
    "logistic-interval": (INTERVAL_1, ("adaptg", "bh", "storey")),
    "spike-at-one": (INTERVAL_1, ("adaptg", "adaptg-sym")),
}


def scenario(name: str, n: int = 1000, replications: int = 50, alpha_grid=(0.05, 0.1, 0.2),
             seed: int = 0):
    """``(config, methods)`` for a named scenario."""
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    null, methods = SCENARIOS[name]
    return LogisticSimConfig(n, replications, tuple(alpha_grid), null, seed), methods


# ---------------------------------------------------------------------------
# estimator conservatism

@dataclass(frozen=True)
class ConservatismReport:
    mean: float
    se: float
    expected: float
    replications: int

    @property
    def z_score(self) -> float:
        return (self.mean - self.expected) / self.se


def conservatism_check(params: MaskingParams, threshold: float, n: int = 100, reps: int = 10_000,
                       null_mean: float = 0.0, seed: int = 0) -> ConservatismReport:
    """Monte Carlo estimate of ``E[(A + 1)/zeta] - E[V]`` for a fixed threshold.

    All ``n`` hypotheses are null with ``z ~ N(null_mean, 1)`` and a
    right-tailed p-value, so ``null_mean = 0`` gives uniform nulls and negative
    values super-uniform ones. Hypotheses with masked value at most
    ``threshold`` are counted as red (V) or blue (A).
    """
    if not 0 < threshold <= params.alpha_m:
        raise ValueError("threshold must lie in (0, alpha_m]")
    rng = np.random.default_rng(seed)
    z = rng.normal(null_mean, 1.0, size=(reps, n))
    p = norm_sf(z)
    m, maskable, b = mask_array(p.ravel(), params)
    hit = (maskable & (m <= threshold)).reshape(reps, n)
    b = b.reshape(reps, n).astype(bool)
    A = (hit & b).sum(axis=1)
    V = (hit & ~b).sum(axis=1)
    diff = (A + 1) / params.zeta - V
    return ConservatismReport(float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(reps)),
                              1.0 / params.zeta, reps)


# ---------------------------------------------------------------------------
# card game

@dataclass(frozen=True)
class CardGame:
    """``n`` cards, card ``i`` blue with probability ``q[i]`` independently.

    The player learns ``S_0``, the number of blue cards, then flips one card
    per turn; the game ends at ``tau = min{t >= 1 : S_t <= s[t-1]}`` where
    ``S_t`` counts blue cards still face down.
    """

    q: tuple
    s: tuple

    def __post_init__(self):
        q = tuple(Fraction(v) for v in self.q)
        if any(v < 0 or v > 1 for v in q):
            raise ValueError("q must lie in [0, 1]")
        if len(self.s) != len(q):
            raise ValueError("need one threshold per turn")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "s", tuple(int(v) for v in self.s))

    @property
    def n(self) -> int:
        return len(self.q)

    def descending_order(self) -> tuple:
        return tuple(sorted(range(self.n), key=lambda i: (-self.q[i], i)))


def _sum_prob(q, cards, total) -> Fraction:
    """P(sum of B_i over ``cards`` equals ``total``)."""
    dist = [Fraction(1)]
    for i in cards:
        new = [Fraction(0)] * (len(dist) + 1)
        for k, pk in enumerate(dist):
            new[k] += pk * (1 - q[i])
            new[k + 1] += pk * q[i]
        dist = new
    return dist[total] if 0 <= total < len(dist) else Fraction(0)


def _blue_prob(q, cards, total, i) -> Fraction:
    """P(B_i = 1 | sum over ``cards`` = total)."""
    denom = _sum_prob(q, cards, total)
    rest = tuple(c for c in cards if c != i)
    return q[i] * _sum_prob(q, rest, total - 1) / denom


def _stop_prob_table(game: CardGame, s0: int, horizon: int, fixed: tuple | None):
    """P(tau <= horizon | S_0 = s0) under the optimal adaptive policy or a fixed order."""
    q, s, n = game.q, game.s, game.n

    @lru_cache(maxsize=None)
    def value(cards: tuple, total: int) -> Fraction:
        t = n - len(cards)  # turns already played
        if t >= horizon or not cards:
            return Fraction(0)
        choices = [next(c for c in fixed if c in cards)] if fixed is not None else cards
        best = Fraction(-1)
        for i in choices:
            pb = _blue_prob(q, cards, total, i)
            rest = tuple(c for c in cards if c != i)
            v = Fraction(0)
            for bit, pr in ((1, pb), (0, 1 - pb)):
                if pr == 0:
                    continue
                left = total - bit
                v += pr * (1 if left <= s[t] else value(rest, left))
            best = max(best, v)
        return best

    return value(tuple(range(n)), s0)


@dataclass
class CardGameVerdict:
    ok: bool
    optimal: dict
    descending: dict
    failures: list


def card_game_bruteforce(game: CardGame) -> CardGameVerdict:
    """Exact check that the descending-q order maximizes ``P(tau <= t | S_0)`` for every t.

    The adaptive optimum is computed by backward induction over the
    information states (face-down cards, blue cards among them), which equals
    the best decision tree over reveal histories.
    """
    if game.n > 6:
        raise ValueError("exhaustive mode supports n <= 6")
    order = game.descending_order()
    optimal, desc, failures = {}, {}, []
    everything = tuple(range(game.n))
    for s0 in range(game.n + 1):
        if _sum_prob(game.q, everything, s0) == 0:
            continue
        for horizon in range(1, game.n + 1):
            best = _stop_prob_table(game, s0, horizon, None)
            mine = _stop_prob_table(game, s0, horizon, order)
            optimal[(s0, horizon)] = best
            desc[(s0, horizon)] = mine
            if mine != best:
                failures.append((s0, horizon, mine, best))
    return CardGameVerdict(not failures, optimal, desc, failures)


def enumerate_policy_values(game: CardGame, s0: int) -> list[list[Fraction]]:
    """``P(tau = t | S_0)`` for t = 1..n under every adaptive decision tree.

    Exponential in ``n``; meant as an independent cross-check for tiny games.
    """
    q, s, n = game.q, game.s, game.n

    def trees(cards, total):
        t = n - len(cards)
        if not cards:
            return [[Fraction(0)] * n]
        out = []
        for i in cards:
            pb = _blue_prob(q, cards, total, i)
            rest = tuple(c for c in cards if c != i)
            branches = []
            for bit, pr in ((1, pb), (0, 1 - pb)):
                left = total - bit
                if pr == 0:
                    branches.append([[Fraction(0)] * n])
                elif left <= s[t]:
                    stop = [Fraction(0)] * n
                    stop[t] = pr
                    branches.append([stop])
                else:
                    branches.append([[pr * v for v in sub] for sub in trees(rest, left)])
            for a, b in itertools.product(*branches):
                out.append([x + y for x, y in zip(a, b)])
        return out

    return trees(tuple(range(n)), s0)


def random_card_game(rng, n: int) -> CardGame:
    """Random q on a grid of twentieths and a random nonincreasing threshold sequence."""
    q = tuple(Fraction(int(v), 20) for v in rng.integers(0, 21, size=n))
    steps = rng.integers(0, 2, size=n)
    start = int(rng.integers(0, n))
    s = []
    cur = start
    for k in range(n):
        cur = max(cur - int(steps[k]), -1)
        s.append(cur)
    return CardGame(q, tuple(s))
