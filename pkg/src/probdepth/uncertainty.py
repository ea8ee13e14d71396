"""Uncertainty from depth disagreement, loss reweighting and the total objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ContractError, DomainError, Grid, masked_mean, require_same_shape


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.6
    gamma: float = 0.8
    lambda1: float = 1.0
    lambda2: float = 0.3
    lambda3: float = 0.05
    lambda_s: float = 0.003
    use_consistency: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if not 0 < self.gamma <= 1:
            raise DomainError("gamma must lie in (0, 1]")
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda_s) < 0:
            raise DomainError("loss coefficients must be non-negative")


def uncertainty_map(d_single: Grid, d_cv: Grid, beta: float = 0.6) -> Grid:
    """``1 - exp(-beta * |d_single - d_cv|)`` per pixel."""
    if not beta > 0:
        raise DomainError("beta must be positive")
    require_same_shape(d_single, d_cv)
    diff = np.abs(d_single.scalar - d_cv.scalar)
    return Grid(-np.expm1(-beta * diff), d_single.valid & d_cv.valid)


def binary_mask(U: Grid, gamma: float = 0.8) -> np.ndarray:
    """Boolean keep-mask ``U < gamma``; invalid pixels are dropped."""
    if not 0 < gamma <= 1:
        raise DomainError("gamma must lie in (0, 1]")
    return U.valid & (U.scalar < gamma)


def reweighted_loss(lp: Grid, U: Grid, gamma: float = 0.8) -> Grid:
    """``M * (1 - U) * lp`` with ``M = [U < gamma]``."""
    require_same_shape(lp, U)
    keep = binary_mask(U, gamma)
    out = np.where(keep, (1.0 - U.scalar) * lp.scalar, 0.0)
    return Grid(out, lp.valid & U.valid)


def consistency_loss(d_multi: Grid, d_single: Grid, U: Grid, gamma: float = 0.8) -> float:
    """Mean relative deviation of multi- from single-frame depth on high-uncertainty pixels.

    A simple stand-in for a consistency term: it pulls masked-out pixels
    towards the single-frame estimate, which is where the multi-frame cue is
    unreliable.
    """
    require_same_shape(d_multi, d_single, U)
    sel = d_multi.valid & d_single.valid & U.valid & (U.scalar >= gamma)
    if not sel.any():
        return 0.0
    rel = np.abs(d_multi.scalar - d_single.scalar) / np.where(sel, d_single.scalar, 1.0)
    return masked_mean(rel, sel)


@dataclass(frozen=True)
class PhotometricTerms:
    """A per-pixel (or pre-reduced) photometric term plus its smoothness term."""

    photometric: object
    smoothness: float = 0.0


def _reduce(term) -> float:
    if isinstance(term, Grid):
        if not term.valid.any():
            return 0.0
        return term.masked_mean()
    arr = np.asarray(term, dtype=np.float64)
    if arr.ndim == 0:
        return float(arr)
    if arr.size == 0:
        raise ContractError("empty loss term")
    return float(arr.mean())


def total_loss(multi: PhotometricTerms, single: PhotometricTerms, cv, consistency: float,
               cfg: LossConfig = LossConfig()):
    """Combine mean-reduced terms into the scalar objective.

    Returns:
        ``(total, breakdown)`` where breakdown maps term names to their
        weighted contributions.
    """
    multi_term = _reduce(multi.photometric) + cfg.lambda_s * multi.smoothness
    single_term = _reduce(single.photometric) + cfg.lambda_s * single.smoothness
    cv_term = _reduce(cv)
    lc = float(consistency) if cfg.use_consistency else 0.0
    breakdown = {
        "multi": multi_term,
        "single": cfg.lambda1 * single_term,
        "cv": cfg.lambda2 * cv_term,
        "consistency": cfg.lambda3 * lc,
    }
    total = breakdown["multi"] + breakdown["single"] + breakdown["cv"] + breakdown["consistency"]
    return total, breakdown
