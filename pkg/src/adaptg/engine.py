"""The reveal loop: shrink the masking set until the FDP estimate drops below alpha.

A reveal policy sees only a :class:`MaskedView` of the data and returns the
next hypotheses to unmask, most promising (most likely blue) first. The engine
unmasks them one per step and checks the stopping rule after each.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from .data import Hypotheses
from .masking import CandidateTable, MaskingParams, NullType, build_candidates, mask_array, point_side_info

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    """A reveal policy asked for something outside the masking set."""


def fdp_hat(a: int, r: int, zeta: float) -> float:
    """FDP estimate ``(1 + A) / (zeta R)``; infinite when ``R = 0``."""
    if a < 0 or r < 0:
        raise ValueError("counts must be nonnegative")
    if r == 0:
        return math.inf
    return (1.0 + a) / (zeta * r)


@dataclass(frozen=True)
class TraceRow:
    t: int
    n_masked: int
    a: int
    r: int
    fdp_hat: float
    note: str = ""


@dataclass(frozen=True)
class MaskedView:
    """What a reveal policy is allowed to see at step ``t``.

    ``revealed_b`` is -1 and ``revealed_p`` is NaN for every hypothesis still
    in the masking set; never-maskable hypotheses show ``b = 0`` and their
    p-value from the start.
    """

    x: np.ndarray
    m: np.ndarray
    sigma: np.ndarray
    null: NullType
    params: MaskingParams
    sign: np.ndarray | None
    masked: np.ndarray
    revealed_b: np.ndarray
    revealed_p: np.ndarray
    a: int
    r: int
    step: int
    batch_size: int

    @property
    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(self.masked)

    def candidates(self) -> CandidateTable:
        return build_candidates(self.m, self.sigma, self.revealed_b, self.params,
                                self.null, self.sign)


class RevealPolicy(Protocol):
    def __call__(self, view: MaskedView) -> Sequence[int]:
        ...


@dataclass
class RunResult:
    rejected: np.ndarray
    trace: list[TraceRow]
    stop_step: int | None
    alpha: float
    params: MaskingParams
    n_masked_initial: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def no_rejections(self) -> bool:
        return self.stop_step is None

    @property
    def n_rejections(self) -> int:
        return int(self.rejected.size)


def rank_by_score(indices, scores) -> np.ndarray:
    """Indices sorted by descending score, ties broken by lowest index.

    Scores are rounded to 12 decimals first so that values equal up to
    floating-point noise count as ties.
    """
    indices = np.asarray(indices)
    scores = np.round(np.asarray(scores, dtype=float), 12)
    return indices[np.lexsort((indices, -scores))]


def reveal_by_score(scores: dict[int, float]) -> int:
    """Index with the largest score; ties go to the lowest index."""
    if not scores:
        raise ValueError("no scores given")
    idx = np.fromiter(scores.keys(), dtype=int)
    vals = np.fromiter(scores.values(), dtype=float)
    return int(rank_by_score(idx, vals)[0])


def blue_posterior(log_v: np.ndarray, table: CandidateTable) -> np.ndarray:
    """P(b = 1 | observed) from per-candidate unnormalized log weights ``(n, C)``."""
    log_v = np.where(table.valid, log_v, -np.inf)
    norm = logsumexp(log_v, axis=1, keepdims=True)
    w = np.exp(log_v - norm)
    return w[:, table.b == 1].sum(axis=1)


def _index_order(view: MaskedView) -> np.ndarray:
    return view.masked_indices[: view.batch_size]


def run(hyps: Hypotheses, params: MaskingParams, alpha: float, policy: RevealPolicy,
        batch_size: int | None = None) -> RunResult:
    """Run the masked reveal procedure and return the rejection set."""
    if len(hyps) == 0:
        raise ValueError("need at least one hypothesis")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")

    m, maskable, b = mask_array(hyps.p, params)
    sign = point_side_info(hyps.z, b) if hyps.null.kind == "point" else None
    masked = maskable.copy()
    revealed_b = np.where(masked, -1, 0).astype(np.int8)
    revealed_p = np.where(masked, np.nan, hyps.p)
    zeta = params.zeta
    a = int(b[masked].sum())
    r = int(masked.sum()) - a
    n0 = int(masked.sum())
    if batch_size is None:
        batch_size = max(1, n0 // 50)

    t = 0
    fdp = fdp_hat(a, r, zeta)
    trace = [TraceRow(t, n0, a, r, fdp)]

    def finish(stop):
        rejected = np.flatnonzero(masked & (b == 0)) if stop is not None else np.array([], dtype=int)
        diag = policy.diagnostics() if hasattr(policy, "diagnostics") else {}
        return RunResult(rejected, trace, stop, alpha, params, n0, diag)

    while True:
        if fdp <= alpha:
            return finish(t)
        if r == 0:
            # R never grows again, so no rejection set can be reached
            return finish(None)

        view = MaskedView(
            x=hyps.x.copy(), m=m.copy(), sigma=hyps.sigma.copy(), null=hyps.null,
            params=params, sign=None if sign is None else sign.copy(),
            masked=masked.copy(), revealed_b=revealed_b.copy(),
            revealed_p=revealed_p.copy(), a=a, r=r, step=t, batch_size=batch_size,
        )
        note = ""
        try:
            order = policy(view)
        except ProtocolError:
            raise
        except Exception as exc:  # model fit failure: reveal in index order
            log.warning("reveal policy failed at step %d (%s); using index order", t, exc)
            note = f"policy-fallback: {type(exc).__name__}"
            order = _index_order(view)

        order = np.asarray(order, dtype=int).ravel()
        if order.size == 0:
            raise ProtocolError("policy returned an empty reveal request")
        if order.size > batch_size:
            raise ProtocolError(f"policy asked for {order.size} reveals, batch limit is {batch_size}")
        if np.unique(order).size != order.size:
            raise ProtocolError("policy returned duplicate indices")
        if np.any((order < 0) | (order >= len(hyps))) or not np.all(masked[order]):
            raise ProtocolError("policy asked to reveal an index outside the masking set")

        for i in order:
            masked[i] = False
            revealed_b[i] = b[i]
            revealed_p[i] = hyps.p[i]
            if b[i]:
                a -= 1
            else:
                r -= 1
            t += 1
            fdp = fdp_hat(a, r, zeta)
            trace.append(TraceRow(t, n0 - t, a, r, fdp, note))
            note = ""
            if fdp <= alpha or r == 0:
                break


class OraclePolicy:
    """Reveal in descending order of the exact blue probability.

    ``true_model`` must provide ``log_density_z(z, x)``, the log density of a
    z-statistic given its covariates under the data-generating distribution.
    The order is fixed at the first call.
    """

    def __init__(self, true_model):
        self.true_model = true_model
        self._order = None
        self.q = None

    def scores(self, view: MaskedView) -> np.ndarray:
        table = view.candidates()
        log_v = np.empty_like(table.z)
        for c in range(table.z.shape[1]):
            log_v[:, c] = self.true_model.log_density_z(table.z[:, c], view.x) + table.logjac[:, c]
        return blue_posterior(log_v, table)

    def __call__(self, view: MaskedView):
        if self._order is None:
            self.q = self.scores(view)
            idx = view.masked_indices
            self._order = rank_by_score(idx, self.q[idx])
        still = self._order[view.masked[self._order]]
        return still[: view.batch_size]

    def diagnostics(self) -> dict:
        return {"policy": "oracle"}


def oracle_policy(true_model) -> OraclePolicy:
    return OraclePolicy(true_model)
