"""Covariate-free reference procedures: Benjamini-Hochberg and Storey-BH."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RejectionSet:
    indices: np.ndarray
    threshold: float | None

    def __len__(self):
        return int(self.indices.size)


def _check(p, alpha):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("p-values must be one-dimensional")
    if np.any(np.isnan(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return p


def _step_up(p, level):
    """Largest k with p_(k) <= level * k / n; reject the k smallest."""
    n = p.size
    if n == 0:
        return RejectionSet(np.array([], dtype=int), None)
    order = np.argsort(p, kind="stable")
    ok = p[order] <= level * np.arange(1, n + 1) / n
    if not ok.any():
        return RejectionSet(np.array([], dtype=int), None)
    k = int(np.flatnonzero(ok)[-1]) + 1
    thr = float(p[order[k - 1]])
    return RejectionSet(np.sort(np.flatnonzero(p <= thr)), thr)


def bh(p, alpha: float) -> RejectionSet:
    """Benjamini-Hochberg step-up at level ``alpha``."""
    return _step_up(_check(p, alpha), alpha)


def storey_pi0(p, lambda_s: float = 0.5) -> float:
    """Storey's null-proportion estimate ``(1 + #{p > lambda}) / (n (1 - lambda))``, capped at 1."""
    p = np.asarray(p, dtype=float)
    if not 0 < lambda_s < 1:
        raise ValueError("lambda_s must lie in (0, 1)")
    return float(min(1.0, (1.0 + np.sum(p > lambda_s)) / (p.size * (1.0 - lambda_s))))


def storey_bh(p, alpha: float, lambda_s: float = 0.5) -> RejectionSet:
    """BH at level ``alpha / pi0_hat``."""
    p = _check(p, alpha)
    return _step_up(p, alpha / storey_pi0(p, lambda_s))
