"""Columnar container for a batch of hypotheses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .masking import ONE_SIDED_RIGHT, NullType, abs_z_from_p, clamp_p, p_value


@dataclass
class Hypotheses:
    """n hypotheses with covariates, p-values and optional z-statistics.

    ``x`` has shape ``(n, d)`` and may have ``d = 0``. When only p-values are
    available, ``z = Phi^{-1}(1 - p)`` with unit standard error and a
    right-tailed null is used for modeling.
    """

    x: np.ndarray
    p: np.ndarray
    z: np.ndarray
    sigma: np.ndarray
    null: NullType = ONE_SIDED_RIGHT
    ids: list[str] | None = None
    covariate_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        n = self.p.shape[0]
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.shape[0] == n and n > 0 else x.reshape(n, -1)
        self.x = x.reshape(n, -1)
        self.z = np.asarray(self.z, dtype=float)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (n,)).copy()
        if np.any(self.sigma <= 0):
            raise ValueError("standard errors must be positive")
        if np.any((self.p < 0) | (self.p > 1)) or np.any(np.isnan(self.p)):
            raise ValueError("p-values must lie in [0, 1]")

    def __len__(self):
        return self.p.shape[0]

    @classmethod
    def from_z(cls, z, sigma=1.0, x=None, null: NullType = ONE_SIDED_RIGHT, ids=None,
               covariate_names=None) -> "Hypotheses":
        z = np.asarray(z, dtype=float)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), z.shape)
        x = np.empty((z.shape[0], 0)) if x is None else x
        return cls(x, p_value(z, sigma, null), z, sigma, null, ids, list(covariate_names or []))

    @classmethod
    def from_p(cls, p, x=None, ids=None, covariate_names=None) -> "Hypotheses":
        p = np.asarray(p, dtype=float)
        x = np.empty((p.shape[0], 0)) if x is None else x
        z = abs_z_from_p(clamp_p(p), 1.0, ONE_SIDED_RIGHT)
        return cls(x, p, z, np.ones_like(p), ONE_SIDED_RIGHT, ids, list(covariate_names or []))

    def standardized(self) -> "Hypotheses":
        """Copy with ``z / sigma`` and unit standard errors; ``sigma^2`` joins
        the covariates when the standard errors vary."""
        x = self.x
        names = list(self.covariate_names)
        if np.ptp(self.sigma) > 0:
            x = np.column_stack([x, self.sigma ** 2])
            names.append("se2")
        return Hypotheses(x, self.p, self.z / self.sigma, np.ones_like(self.sigma),
                          self.null, self.ids, names)
