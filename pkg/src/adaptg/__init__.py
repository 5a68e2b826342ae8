"""Adaptive p-value thresholding with generalized masking and a conditional
Gaussian mixture working model."""

from .baselines import RejectionSet, bh, storey_bh, storey_pi0
from .data import Hypotheses
from .engine import OraclePolicy, ProtocolError, RunResult, fdp_hat, run
from .masking import (ONE_SIDED_LEFT, ONE_SIDED_RIGHT, POINT, MaskingParams, NullType, Shape,
                      default_params, mask, unmask_candidates)
from .workmodel import GmmPolicy, ModelCandidate, run_adapt_gmm

__version__ = "0.1.0"

__all__ = [
    "Hypotheses", "MaskingParams", "NullType", "Shape", "ONE_SIDED_LEFT", "ONE_SIDED_RIGHT",
    "POINT", "default_params", "mask", "unmask_candidates", "run", "fdp_hat", "RunResult",
    "ProtocolError", "OraclePolicy", "GmmPolicy", "ModelCandidate", "run_adapt_gmm",
    "RejectionSet", "bh", "storey_bh", "storey_pi0",
]
