"""Probabilistic cost volume modulation.

Single-frame Gaussian depth and multi-frame matching costs are turned into
per-pixel distributions over the depth candidates, fused with per-pixel
uncertainty weights, and the fused distribution is mapped back to cost space.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .costvolume import PROB_MAGIC, CostVolume, DepthHypotheses, pack_volume, unpack_volume
from .grid import ContractError, DomainError, Grid

PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class GaussianDepth:
    mean: Grid
    var: Grid

    def __post_init__(self):
        if self.mean.shape != self.var.shape:
            raise ContractError("mean and variance differ in resolution")
        ok = self.mean.valid & self.var.valid
        if np.any(self.var.scalar[ok] <= 0):
            raise DomainError("variance must be positive on valid pixels")

    @property
    def valid(self) -> np.ndarray:
        return self.mean.valid & self.var.valid


@dataclass(eq=False)
class ProbabilityVolume:
    probs: np.ndarray
    valid: np.ndarray
    normalized: bool = False

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.probs.shape

    def normalize(self) -> "ProbabilityVolume":
        total = self.probs.sum(axis=2, keepdims=True)
        valid = self.valid & (total[:, :, 0] > 0)
        probs = np.where(valid[:, :, None], self.probs / np.where(total > 0, total, 1.0), 0.0)
        return ProbabilityVolume(probs, valid, True)

    def to_bytes(self, hyp: DepthHypotheses | None = None) -> bytes:
        d_min, d_max = (hyp.d_min, hyp.d_max) if hyp is not None else (0.0, 0.0)
        count = np.where(self.valid, self.probs.shape[2], 0)
        return pack_volume(PROB_MAGIC, self.probs, count, d_min, d_max, flags=int(self.normalized))

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProbabilityVolume":
        magic, flags, payload, count, _, _ = unpack_volume(data)
        if magic != PROB_MAGIC:
            raise ContractError(f"not a probability volume (magic {magic!r})")
        return cls(payload, count > 0, bool(flags & 1))

    def save(self, path, hyp: DepthHypotheses | None = None) -> None:
        Path(path).write_bytes(self.to_bytes(hyp))

    @classmethod
    def load(cls, path) -> "ProbabilityVolume":
        return cls.from_bytes(Path(path).read_bytes())


def gaussian_probabilities(g: GaussianDepth, hyp: DepthHypotheses) -> ProbabilityVolume:
    """Gaussian density evaluated at every candidate, then normalised per pixel.

    Computed in log space so very small variances still yield a finite peak.
    """
    valid = g.valid
    mu = np.where(valid, g.mean.scalar, 1.0)[:, :, None]
    var = np.where(valid, g.var.scalar, 1.0)[:, :, None]
    logp = -0.5 * np.log(2 * np.pi * var) - (hyp.values[None, None, :] - mu) ** 2 / (2 * var)
    logp -= logp.max(axis=2, keepdims=True)
    p = np.exp(logp)
    p /= p.sum(axis=2, keepdims=True)
    return ProbabilityVolume(np.where(valid[:, :, None], p, 0.0), valid, True)


def cost_to_probabilities(cv: CostVolume) -> ProbabilityVolume:
    """Softmax of negated costs with a per-pixel max shift."""
    logits = -cv.costs
    logits = logits - logits.max(axis=2, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=2, keepdims=True)
    return ProbabilityVolume(np.where(cv.valid[:, :, None], p, 0.0), cv.valid.copy(), True)


def _check_fusion_inputs(p_single: ProbabilityVolume, p_cv: ProbabilityVolume, U: Grid) -> np.ndarray:
    if p_single.shape != p_cv.shape:
        raise ContractError("probability volumes differ in shape")
    if U.shape != p_single.shape[:2]:
        raise ContractError("uncertainty map is not at cost-volume resolution")
    u = U.scalar
    if np.any((u[U.valid] < 0) | (u[U.valid] > 1)):
        raise DomainError("uncertainty must lie in [0, 1]")
    return u[:, :, None]


def fuse_wgm(p_single: ProbabilityVolume, p_cv: ProbabilityVolume, U: Grid) -> ProbabilityVolume:
    """Weighted geometric mean ``p_single**U * p_cv**(1-U)``, left unnormalised."""
    u = _check_fusion_inputs(p_single, p_cv, U)
    a = np.maximum(p_single.probs, PROB_FLOOR)
    b = np.maximum(p_cv.probs, PROB_FLOOR)
    fused = np.exp(u * np.log(a) + (1.0 - u) * np.log(b))
    # exact endpoints: x**1 and x**0 without a log/exp round trip
    fused = np.where(u == 0.0, b, np.where(u == 1.0, a, fused))
    valid = p_single.valid & p_cv.valid & U.valid
    return ProbabilityVolume(np.where(valid[:, :, None], fused, 0.0), valid, False)


def fuse_wam(p_single: ProbabilityVolume, p_cv: ProbabilityVolume, U: Grid) -> ProbabilityVolume:
    """Weighted arithmetic mean ``U * p_single + (1-U) * p_cv``."""
    u = _check_fusion_inputs(p_single, p_cv, U)
    fused = u * p_single.probs + (1.0 - u) * p_cv.probs
    fused = np.where(u == 0.0, p_cv.probs, np.where(u == 1.0, p_single.probs, fused))
    valid = p_single.valid & p_cv.valid & U.valid
    return ProbabilityVolume(np.where(valid[:, :, None], fused, 0.0), valid,
                             p_single.normalized and p_cv.normalized)


def rescale_to_cost(P: ProbabilityVolume, original: CostVolume) -> CostVolume:
    """Invert the fused distribution and min-max map it onto the original cost range.

    Pixels whose fused distribution or cost profile is flat keep their
    original costs.
    """
    if P.shape != original.costs.shape:
        raise ContractError("probability and cost volumes differ in shape")
    p = P.probs
    c = original.costs
    p_max = p.max(axis=2, keepdims=True)
    p_min = p.min(axis=2, keepdims=True)
    c_max = c.max(axis=2, keepdims=True)
    c_min = c.min(axis=2, keepdims=True)
    p_span = p_max - p_min
    c_span = c_max - c_min
    degenerate = (p_span <= 0) | (c_span <= 0)
    scaled = (p_max - p) / np.where(degenerate, 1.0, p_span)
    modulated = scaled * c_span + c_min
    # pin the extremes so the range is reproduced bit-for-bit
    modulated = np.where(p == p_max, c_min, np.where(p == p_min, c_max, modulated))
    modulated = np.where(degenerate, c, modulated)
    valid = P.valid & original.valid
    count = np.where(valid, original.valid_count, 0).astype(np.uint8)
    return CostVolume(modulated, count, original.d_min, original.d_max)


def expected_depth(P: ProbabilityVolume, hyp: DepthHypotheses) -> Grid:
    """Mean candidate depth under ``P`` (normalised internally)."""
    if P.shape[2] != hyp.k:
        raise ContractError("candidate count mismatch")
    mass = P.probs.sum(axis=2)
    valid = P.valid & (mass > 0)
    depth = (P.probs @ hyp.values) / np.where(valid, mass, 1.0)
    return Grid(depth, valid)
