"""Plane-sweep cost volumes over log-spaced depth candidates.

Binary container layout (little-endian), shared with probability volumes::

    magic      4 bytes   b"PDCV" (cost volume) or b"PDPV" (probability volume)
    version    uint16    1
    flags      uint16    bit 0: probabilities normalised
    width      uint32
    height     uint32
    k          uint32    number of depth candidates, at most 255
    d_min      float64
    d_max      float64
    payload    float32[height][width][k]   candidate index varies fastest
    count      uint8[height][width]        valid candidates per pixel
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import CameraIntrinsics, RigidPose, plane_sweep_warp
from .grid import ContractError, DomainError, Grid

COST_MAGIC = b"PDCV"
PROB_MAGIC = b"PDPV"
_HEADER = struct.Struct("<4sHHIIIdd")
_VERSION = 1


@dataclass(frozen=True, eq=False)
class DepthHypotheses:
    d_min: float
    d_max: float
    values: np.ndarray

    @property
    def k(self) -> int:
        return len(self.values)


def sid_candidates(d_min: float, d_max: float, k: int) -> DepthHypotheses:
    """Depth candidates uniformly spaced in log depth, both endpoints included."""
    if not (0 < d_min < d_max):
        raise DomainError("need 0 < d_min < d_max")
    if k < 2:
        raise DomainError("need at least two candidates")
    i = np.arange(k, dtype=np.float64)
    values = np.exp(np.log(d_min) + i / (k - 1) * np.log(d_max / d_min))
    values[0], values[-1] = d_min, d_max
    values.setflags(write=False)
    return DepthHypotheses(float(d_min), float(d_max), values)


@dataclass(eq=False)
class CostVolume:
    """Matching costs ``(H, W, k)`` and the number of valid candidates per pixel."""

    costs: np.ndarray
    valid_count: np.ndarray
    d_min: float = 0.0
    d_max: float = 0.0

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def k(self) -> int:
        return self.costs.shape[2]

    @property
    def valid(self) -> np.ndarray:
        return self.valid_count > 0

    def to_bytes(self) -> bytes:
        return pack_volume(COST_MAGIC, self.costs, self.valid_count, self.d_min, self.d_max)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CostVolume":
        magic, _, payload, count, d_min, d_max = unpack_volume(data)
        if magic != COST_MAGIC:
            raise ContractError(f"not a cost volume (magic {magic!r})")
        return cls(payload, count, d_min, d_max)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "CostVolume":
        return cls.from_bytes(Path(path).read_bytes())


def pack_volume(magic: bytes, payload: np.ndarray, count: np.ndarray, d_min: float, d_max: float,
                flags: int = 0) -> bytes:
    h, w, k = payload.shape
    if k > 255:
        raise ContractError("the container stores at most 255 candidates")
    header = _HEADER.pack(magic, _VERSION, flags, w, h, k, float(d_min), float(d_max))
    return (
        header
        + np.ascontiguousarray(payload, dtype="<f4").tobytes()
        + np.ascontiguousarray(count, dtype=np.uint8).tobytes()
    )


def unpack_volume(data: bytes):
    """Return ``(magic, flags, payload, count, d_min, d_max)`` from container bytes."""
    magic, version, flags, w, h, k, d_min, d_max = _HEADER.unpack_from(data, 0)
    if version != _VERSION:
        raise ContractError(f"unsupported container version {version}")
    off = _HEADER.size
    n = w * h * k
    payload = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(h, w, k).astype(np.float64)
    count = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=off + 4 * n).reshape(h, w).copy()
    return magic, flags, payload, count, d_min, d_max


def build_cost_volume(f_t: Grid, sources: list[tuple[Grid, RigidPose]], K_feat: CameraIntrinsics,
                      hyp: DepthHypotheses) -> CostVolume:
    """Mean absolute feature difference over channels and valid source warps.

    Candidates with no valid source at a pixel take that pixel's maximum cost
    over its valid candidates, so they are never the most attractive choice.
    """
    if not sources:
        raise ContractError("need at least one source")
    for feat, _ in sources:
        if feat.shape != f_t.shape or feat.channels != f_t.channels:
            raise ContractError("source and target features differ in shape or channels")
    h, w = f_t.shape
    k = hyp.k
    total = np.zeros((h, w, k))
    n_valid = np.zeros((h, w, k), dtype=np.int64)
    for i, d in enumerate(hyp.values):
        # fixed source order keeps the reduction deterministic
        for feat, pose in sources:
            warped = plane_sweep_warp(feat, float(d), pose, K_feat)
            ok = warped.valid & f_t.valid
            diff = np.abs(f_t.values - warped.values).mean(axis=2)
            total[:, :, i] += np.where(ok, diff, 0.0)
            n_valid[:, :, i] += ok
    has = n_valid > 0
    costs = np.where(has, total / np.maximum(n_valid, 1), 0.0)
    valid_count = has.sum(axis=2)
    fill = np.where(has, costs, -np.inf).max(axis=2)
    fill = np.where(valid_count > 0, fill, 0.0)
    costs = np.where(has, costs, fill[:, :, None])
    return CostVolume(costs, valid_count.astype(np.uint8), hyp.d_min, hyp.d_max)


def argmin_depth(cv: CostVolume, hyp: DepthHypotheses) -> Grid:
    """Depth of the lowest-cost candidate; ties go to the smaller index."""
    if cv.k != hyp.k:
        raise ContractError("candidate count mismatch")
    idx = np.argmin(cv.costs, axis=2)
    return Grid(hyp.values[idx], cv.valid)


def soft_argmin_depth(cv: CostVolume, hyp: DepthHypotheses, temperature: float) -> Grid:
    """Expected candidate depth under ``softmax(-cost / temperature)``."""
    if not temperature > 0:
        raise DomainError("temperature must be positive")
    if cv.k != hyp.k:
        raise ContractError("candidate count mismatch")
    logits = -cv.costs / temperature
    logits = logits - logits.max(axis=2, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=2, keepdims=True)
    return Grid(weights @ hyp.values, cv.valid)


def smooth_depth(depth: Grid, radius: int) -> Grid:
    """Median over the valid pixels of each ``(2r+1)^2`` neighbourhood."""
    if radius < 0:
        raise DomainError("radius must be non-negative")
    if radius == 0:
        return depth
    r = radius
    vals = np.where(depth.valid, depth.scalar, np.nan)
    padded = np.pad(vals, r, mode="constant", constant_values=np.nan)
    windows = sliding_window_view(padded, (2 * r + 1, 2 * r + 1)).reshape(depth.height, depth.width, -1)
    out = np.full(depth.shape, np.nan)
    valid = depth.valid
    if valid.any():
        out[valid] = np.nanmedian(windows[valid], axis=1)
    return Grid(np.nan_to_num(out), valid)


@dataclass
class CostVolumeStats:
    flat_fraction: float
    empty_fraction: float = field(default=0.0)


def cost_volume_stats(cv: CostVolume, flat_tol: float = 1e-12) -> CostVolumeStats:
    """Fraction of valid pixels whose cost profile is flat (degenerate matching)."""
    valid = cv.valid
    if not valid.any():
        return CostVolumeStats(1.0, 1.0)
    spread = cv.costs.max(axis=2) - cv.costs.min(axis=2)
    flat = (spread <= flat_tol) & valid
    return CostVolumeStats(float(flat.sum() / valid.sum()), float(1 - valid.mean()))
