"""Per-pixel grids with explicit validity masks.

Every image, depth map, feature map and uncertainty map in the package is a
:class:`Grid`. Values live in a ``(height, width, channels)`` float64 array and
validity in a ``(height, width)`` boolean array. Invalid pixels always carry 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ContractError(ValueError):
    """Raised when inputs violate a structural precondition (shapes, emptiness)."""


class DomainError(ValueError):
    """Raised when a numeric argument lies outside its admissible domain."""


@dataclass(frozen=True, eq=False)
class Grid:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3:
            raise ContractError(f"grid values must be 2D or 3D, got shape {values.shape}")
        valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != values.shape[:2]:
            raise ContractError(
                f"validity shape {valid.shape} does not match values {values.shape[:2]}"
            )
        values = np.where(valid[:, :, None], values, 0.0)
        values.setflags(write=False)
        valid = valid.copy()
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, array, valid=None) -> "Grid":
        array = np.asarray(array, dtype=np.float64)
        if valid is None:
            valid = np.ones(array.shape[:2], dtype=bool)
        return cls(array, valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]

    @property
    def scalar(self) -> np.ndarray:
        """The single channel as an ``(H, W)`` array."""
        if self.channels != 1:
            raise ContractError(f"expected a single-channel grid, got {self.channels} channels")
        return self.values[:, :, 0]

    def with_valid(self, valid) -> "Grid":
        return Grid(self.values, np.asarray(valid, dtype=bool) & self.valid)

    def masked_mean(self) -> float:
        """Mean over valid pixels and channels, summed in row-major order."""
        n = int(self.valid.sum())
        if n == 0:
            raise ContractError("mean over a grid with no valid pixels")
        return float(self.values[self.valid].sum() / (n * self.channels))


def require_same_shape(*grids: Grid) -> None:
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise ContractError(f"resolution mismatch: {sorted(shapes)}")


def masked_mean(values, valid) -> float:
    """Mean of ``values`` over ``valid``; invalid entries are excluded from the denominator."""
    values = np.asarray(values, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        raise ContractError("mean over an empty selection")
    return float(values[valid].sum() / n)


def downsample2(grid: Grid) -> Grid:
    """2x2 box average; an output pixel is valid only if all four inputs are.

    Pixel centres sit at integer coordinates, so output pixel ``i`` covers input
    pixels ``2i`` and ``2i+1`` and is centred at input coordinate ``2i + 0.5``.
    """
    h, w = grid.height // 2, grid.width // 2
    v = grid.values[: 2 * h, : 2 * w]
    m = grid.valid[: 2 * h, : 2 * w]
    out = v.reshape(h, 2, w, 2, -1).mean(axis=(1, 3))
    valid = m.reshape(h, 2, w, 2).all(axis=(1, 3))
    return Grid(out, valid)


def upsample_nearest(grid: Grid, factor: int, shape: tuple[int, int] | None = None) -> Grid:
    """Replicate each pixel into a ``factor x factor`` block, then crop or pad to ``shape``."""
    values = np.repeat(np.repeat(grid.values, factor, axis=0), factor, axis=1)
    valid = np.repeat(np.repeat(grid.valid, factor, axis=0), factor, axis=1)
    if shape is not None:
        h, w = shape
        ph, pw = max(0, h - values.shape[0]), max(0, w - values.shape[1])
        if ph or pw:
            values = np.pad(values, ((0, ph), (0, pw), (0, 0)), mode="edge")
            valid = np.pad(valid, ((0, ph), (0, pw)), mode="edge")
        values, valid = values[:h, :w], valid[:h, :w]
    return Grid(values, valid)
