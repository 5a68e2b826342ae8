"""Generalized masking functions and the p <-> z reconstruction maps.

A masking function hides whether a p-value lies in the red region
``[0, alpha_m]`` or the blue region ``[lam, nu]``. Everything outside those
two intervals is shown to the analyst unchanged.
"""

from __future__ import annotations

import enum
import math
import sys
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .normal import norm_isf, norm_logpdf, norm_sf

P_EPS = 1e-15
_LOG2 = math.log(2.0)


class Shape(str, enum.Enum):
    TENT = "tent"
    COMB = "comb"


@dataclass(frozen=True)
class NullType:
    """Null hypothesis family for a z-statistic ``z ~ N(theta, sigma^2)``.

    ``kind`` is one of ``one-sided-right`` (theta <= 0), ``one-sided-left``
    (theta >= 0), ``point`` (theta = 0) or ``interval`` (|theta| <= delta).
    For interval nulls ``delta`` is measured in standard-error units, so the
    p-value is a function of ``z / sigma`` alone.
    """

    kind: str = "one-sided-right"
    delta: float = 0.0

    KINDS = ("one-sided-right", "one-sided-left", "point", "interval")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown null kind {self.kind!r}")
        if self.delta < 0 or not math.isfinite(self.delta):
            raise ValueError("interval half-width must be finite and >= 0")
        if self.kind != "interval" and self.delta != 0:
            raise ValueError("delta only applies to interval nulls")

    @classmethod
    def parse(cls, text: str) -> "NullType":
        """Parse ``point``, ``one-sided-right``, ``one-sided-left`` or ``interval:<delta>``."""
        text = text.strip().lower()
        if text.startswith("interval"):
            _, _, rest = text.partition(":")
            return cls("interval", float(rest) if rest else 0.0)
        if text == "one-sided":
            text = "one-sided-right"
        return cls(text)

    @property
    def one_sided(self) -> bool:
        return self.kind.startswith("one-sided")

    @property
    def n_signs(self) -> int:
        # interval nulls keep both signs of z as unknowns
        return 2 if self.kind == "interval" else 1

    def __str__(self):
        return f"interval:{self.delta:g}" if self.kind == "interval" else self.kind


ONE_SIDED_RIGHT = NullType("one-sided-right")
ONE_SIDED_LEFT = NullType("one-sided-left")
POINT = NullType("point")


@dataclass(frozen=True)
class MaskingParams:
    alpha_m: float
    lam: float
    nu: float
    shape: Shape = Shape.TENT

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        if not (0 < self.alpha_m <= self.lam < self.nu <= 1):
            raise ValueError(
                "masking parameters need 0 < alpha_m <= lam < nu <= 1, got "
                f"alpha_m={self.alpha_m}, lam={self.lam}, nu={self.nu}"
            )

    @property
    def zeta(self) -> float:
        z = (self.nu - self.lam) / self.alpha_m
        # snap float noise so that e.g. 0.6 / 0.3 gives exactly 2
        r = round(z)
        return float(r) if abs(z - r) <= 8 * sys.float_info.epsilon * z else z

    def r_min(self, alpha: float) -> int:
        """Smallest nonzero rejection count reachable at level ``alpha``."""
        return math.ceil(1.0 / (self.zeta * alpha) - 1e-9)

    @classmethod
    def symmetric(cls) -> "MaskingParams":
        """The original AdaPT mask, ``min(p, 1 - p)``."""
        return cls(0.5, 0.5, 1.0, Shape.TENT)


class MaskedValue(NamedTuple):
    m: float
    is_maskable: bool


def default_params(n: int, alpha: float, nu_override: float | None = None,
                   null: NullType | None = None) -> MaskingParams:
    """Default masking parameters for ``n`` tests at FDR level ``alpha``.

    The stretch factor is ``max(2, min(1/alpha, 300/(n alpha)))`` and
    ``alpha_m = lam`` is then fixed by ``nu``. Interval nulls use the comb
    shape, everything else the tent shape.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    nu = 0.9 if nu_override is None else float(nu_override)
    zeta = max(2.0, min(1.0 / alpha, 300.0 / (n * alpha)))
    alpha_m = nu / (zeta + 1.0)
    shape = Shape.COMB if (null is not None and null.kind == "interval") else Shape.TENT
    return MaskingParams(alpha_m, alpha_m, nu, shape)


def clamp_p(p):
    return np.clip(np.asarray(p, dtype=float), P_EPS, 1.0 - P_EPS)


def mask_array(p, params: MaskingParams):
    """Vectorized masking.

    Returns ``(m, maskable, b)`` where ``b`` is 1 for blue p-values. Red takes
    precedence when ``alpha_m == lam`` and ``p`` sits exactly on the boundary.
    """
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    p = clamp_p(p)
    red = p <= params.alpha_m
    blue = ~red & (p >= params.lam) & (p <= params.nu)
    zeta = params.zeta
    if params.shape is Shape.TENT:
        folded = (params.nu - p) / zeta
    else:
        folded = (p - params.lam) / zeta
    m = np.where(blue, np.clip(folded, 0.0, params.alpha_m), p)
    return m, red | blue, blue.astype(np.int8)


def mask(p: float, params: MaskingParams) -> MaskedValue:
    """Masked value ``g(p)`` of a single p-value."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p-value {p} outside [0, 1]")
    m, maskable, _ = mask_array(np.array([p]), params)
    return MaskedValue(float(m[0]), bool(maskable[0]))


def blue_from_masked(m, params: MaskingParams):
    """The blue preimage ``p_{i,1}`` of masked values ``m <= alpha_m``."""
    m = np.asarray(m, dtype=float)
    if params.shape is Shape.TENT:
        p1 = params.nu - params.zeta * m
    else:
        p1 = params.lam + params.zeta * m
    lo = params.lam
    if lo <= params.alpha_m:
        # a shared boundary belongs to red, so keep blue preimages strictly above it
        lo = np.nextafter(params.alpha_m, 1.0)
    return np.clip(p1, lo, params.nu)


def unmask_candidates(m: MaskedValue, params: MaskingParams) -> list[tuple[int, float]]:
    """All ``(b, p)`` pairs consistent with a masked value."""
    if m.is_maskable:
        if not 0.0 <= m.m <= params.alpha_m * (1 + 1e-12):
            raise ValueError("maskable value must lie in [0, alpha_m]")
        return [(0, m.m), (1, float(blue_from_masked(min(m.m, params.alpha_m), params)))]
    return [(0, m.m)]


# ---------------------------------------------------------------------------
# p-value transforms

def p_value(z, sigma, null: NullType):
    """p-value of ``z ~ N(theta, sigma^2)`` under ``null``; uniform at the null boundary."""
    u = np.asarray(z, dtype=float) / np.asarray(sigma, dtype=float)
    if null.kind == "one-sided-right":
        p = norm_sf(u)
    elif null.kind == "one-sided-left":
        p = norm_sf(-u)
    elif null.kind == "point":
        p = 2.0 * norm_sf(np.abs(u))
    else:
        a = np.abs(u)
        p = norm_sf(a + null.delta) + norm_sf(a - null.delta)
    p = np.clip(p, 0.0, 1.0)
    return float(p) if np.ndim(p) == 0 else p


def interval_abs_z(p, delta: float, tol: float = 1e-10, upper: float = 40.0):
    """Invert the interval-null p-value: the ``u >= 0`` with ``p(u) = p``.

    Bisection on ``[0, upper]``; the transform is strictly decreasing in ``u``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    lo = np.zeros_like(p)
    hi = np.full_like(p, upper)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        val = norm_sf(mid + delta) + norm_sf(mid - delta)
        above = val > p
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    u = 0.5 * (lo + hi)
    resid = np.abs(norm_sf(u + delta) + norm_sf(u - delta) - p)
    if np.any(resid >= tol):
        bad = int(np.argmax(resid))
        raise RuntimeError(
            f"interval-null inversion did not converge for p={p[bad]:.3g} "
            f"(residual {resid[bad]:.2e})"
        )
    return u


def abs_z_from_p(p, sigma, null: NullType):
    """``|z|`` (or signed z for one-sided nulls) giving p-value ``p``.

    For one-sided nulls the result is the signed z; for point and interval
    nulls it is ``|z|`` and the sign must come from elsewhere.
    """
    p = clamp_p(p)
    sigma = np.asarray(sigma, dtype=float)
    if null.kind == "one-sided-right":
        return sigma * norm_isf(p)
    if null.kind == "one-sided-left":
        return -sigma * norm_isf(p)
    if null.kind == "point":
        return sigma * norm_isf(p / 2.0)
    return sigma * interval_abs_z(p, null.delta)


def log_abs_dpdz(z, sigma, null: NullType):
    """``log |dp/dz|`` of the p-value transform, used as the Jacobian term."""
    sigma = np.asarray(sigma, dtype=float)
    u = np.asarray(z, dtype=float) / sigma
    if null.one_sided:
        out = norm_logpdf(u)
    elif null.kind == "point":
        out = _LOG2 + norm_logpdf(u)
    else:
        a = np.abs(u)
        d = null.delta
        # phi(a - d) + phi(a + d), factored for stability
        out = norm_logpdf(a - d) + np.log1p(np.exp(-2.0 * a * d))
    return out - np.log(sigma)


def z_candidates(m: MaskedValue, sigma: float, null: NullType,
                 side_info: int | None, params: MaskingParams):
    """z-values consistent with a masked p-value.

    Returns a list of ``(b, b_prime, z)``. ``b_prime`` is ``1{z > 0}`` for
    interval nulls and ``None`` otherwise. ``side_info`` is the revealed
    ``sgn(z) * (-1)^b`` and must be given exactly when ``null`` is a point null.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if (side_info is not None) != (null.kind == "point"):
        raise ValueError("side_info must be supplied for point nulls only")
    out = []
    for b, p in unmask_candidates(m, params):
        mag = float(np.squeeze(abs_z_from_p(p, sigma, null)))
        if null.one_sided:
            out.append((b, None, mag))
        elif null.kind == "point":
            sign = side_info * (-1) ** b
            out.append((b, None, sign * mag))
        else:
            out.append((b, 0, -mag))
            out.append((b, 1, mag))
    return out


def point_side_info(z, b):
    """Revealed sign ``sgn(z) * (-1)^b`` for point nulls (sgn(0) taken as +1)."""
    s = np.where(np.asarray(z) >= 0, 1, -1)
    return (s * np.where(np.asarray(b) == 1, -1, 1)).astype(np.int8)


# ---------------------------------------------------------------------------
# candidate table used by working models and oracles

@dataclass
class CandidateTable:
    """All z-values compatible with what the analyst currently sees.

    Columns are indexed by ``c``; ``b[c]`` is the red/blue bit of the column and
    ``bprime[c]`` the sign bit for interval nulls. ``logjac`` carries
    ``b log(zeta) - log|dp/dz|`` and ``valid`` marks candidates that are still
    possible for each hypothesis.
    """

    z: np.ndarray
    b: np.ndarray
    bprime: np.ndarray | None
    logjac: np.ndarray
    valid: np.ndarray

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def pooled_z(self) -> np.ndarray:
        return self.z[self.valid]


def build_candidates(m, sigma, known_b, params: MaskingParams, null: NullType,
                     sign=None) -> CandidateTable:
    """Vectorized candidate construction.

    ``known_b`` holds the revealed bit (0/1) or -1 for hypotheses still masked.
    Never-maskable hypotheses must be passed with ``known_b = 0``.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
    known_b = np.asarray(known_b)
    if null.kind == "point" and sign is None:
        raise ValueError("point nulls need the revealed sign information")

    has_blue = m <= params.alpha_m
    p_cols = [m, np.where(has_blue, blue_from_masked(np.minimum(m, params.alpha_m), params), 0.5)]
    ok_cols = [known_b != 1, has_blue & (known_b != 0)]

    log_zeta = math.log(params.zeta)
    zs, bs, bps, jacs, oks = [], [], [], [], []
    for b in (0, 1):
        mag = abs_z_from_p(p_cols[b], sigma, null)
        if null.kind == "interval":
            variants = [(0, -mag), (1, mag)]
        elif null.kind == "point":
            variants = [(None, sign * (-1) ** b * mag)]
        else:
            variants = [(None, mag)]
        for bp, zc in variants:
            zs.append(zc)
            bs.append(b)
            bps.append(bp)
            jacs.append(b * log_zeta - log_abs_dpdz(zc, sigma, null))
            oks.append(ok_cols[b])
    return CandidateTable(
        z=np.column_stack(zs),
        b=np.array(bs, dtype=np.int8),
        bprime=np.array(bps, dtype=np.int8) if null.kind == "interval" else None,
        logjac=np.column_stack(jacs),
        valid=np.column_stack(oks),
    )
