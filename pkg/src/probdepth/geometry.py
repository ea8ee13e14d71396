"""Pinhole cameras, rigid poses, bilinear sampling and depth-based warping.

Conventions: pixel centres sit at integer coordinates with x to the right and
y downwards. A pose ``T_{t->s}`` maps target-camera coordinates into
source-camera coordinates, ``p_s = R @ p_t + t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ContractError, DomainError, Grid, require_same_shape

BEHIND_CAMERA_EPS = 1e-9
# sample coordinates this close to a pixel centre snap onto it
SNAP_EPS = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def downscaled(self, factor: int) -> "CameraIntrinsics":
        """Intrinsics after ``log2(factor)`` rounds of 2x2 box downsampling.

        Each round maps input coordinate ``u`` to ``(u - 0.5) / 2``.
        """
        fx, fy, cx, cy = self.fx, self.fy, self.cx, self.cy
        w, h = self.width, self.height
        f = factor
        while f > 1:
            if f % 2:
                raise DomainError("downscale factor must be a power of two")
            fx, fy = fx / 2, fy / 2
            cx, cy = (cx - 0.5) / 2, (cy - 0.5) / 2
            w, h = w // 2, h // 2
            f //= 2
        return CameraIntrinsics(fx, fy, cx, cy, w, h)


@dataclass(frozen=True, eq=False)
class RigidPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0):
            raise DomainError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise DomainError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "RigidPose":
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> "RigidPose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rt, -rt @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """``self @ other``: apply ``other`` first."""
        return RigidPose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform ``(..., 3)`` points."""
        return points @ self.rotation.T + self.translation


def rotation_from_axis_angle(rotvec) -> np.ndarray:
    """Rodrigues' formula; ``rotvec`` is axis times angle in radians."""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    theta = float(np.linalg.norm(rotvec))
    if theta < 1e-15:
        return np.eye(3)
    k = rotvec / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    r = np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * kx @ kx
    # re-orthonormalise so the pose invariant holds to 1e-9
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def backproject(pixel, depth, K: CameraIntrinsics) -> np.ndarray:
    """Lift pixel coordinates ``(..., 2)`` at the given depth to camera-frame points ``(..., 3)``."""
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise DomainError("depth must be positive")
    x = (pixel[..., 0] - K.cx) / K.fx * depth
    y = (pixel[..., 1] - K.cy) / K.fy * depth
    return np.stack(np.broadcast_arrays(x, y, depth), axis=-1)


def project(points, K: CameraIntrinsics):
    """Project camera-frame points ``(..., 3)``.

    Returns:
        ``(coords, in_front)`` where coords is ``(..., 2)``. Points with
        ``z <= 1e-9`` get ``in_front=False`` and coordinates of NaN.
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    in_front = z > BEHIND_CAMERA_EPS
    safe_z = np.where(in_front, z, 1.0)
    u = K.fx * points[..., 0] / safe_z + K.cx
    v = K.fy * points[..., 1] / safe_z + K.cy
    coords = np.stack([u, v], axis=-1)
    coords = np.where(in_front[..., None], coords, np.nan)
    return coords, in_front


def bilinear_sample(grid: Grid, coords):
    """Sample ``grid`` at continuous coordinates ``(..., 2)``.

    A sample is invalid when it falls outside ``[0, W-1] x [0, H-1]`` or when
    any neighbour carrying non-zero weight is invalid. Invalid samples are 0.

    Returns:
        ``(values, valid)`` with shapes ``(..., C)`` and ``(...)``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    x = coords[..., 0]
    y = coords[..., 1]
    finite = np.isfinite(x) & np.isfinite(y)
    x = np.where(finite, x, -1.0)
    y = np.where(finite, y, -1.0)
    x = np.where(np.abs(x - np.round(x)) < SNAP_EPS, np.round(x), x)
    y = np.where(np.abs(y - np.round(y)) < SNAP_EPS, np.round(y), y)
    w, h = grid.width, grid.height
    inside = finite & (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)

    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.clip(np.floor(xc).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(yc).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = xc - x0
    ay = yc - y0

    vals = grid.values
    ok = grid.valid
    out = np.zeros(x.shape + (grid.channels,))
    valid = inside.copy()
    for xi, yi, wgt in (
        (x0, y0, (1 - ax) * (1 - ay)),
        (x1, y0, ax * (1 - ay)),
        (x0, y1, (1 - ax) * ay),
        (x1, y1, ax * ay),
    ):
        out += wgt[..., None] * vals[yi, xi]
        valid &= ~((wgt > 0) & ~ok[yi, xi])
    out = np.where(valid[..., None], out, 0.0)
    return out, valid


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Integer pixel-centre coordinates as an ``(H, W, 2)`` array of (x, y)."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys], axis=-1)


def reprojection_coords(depth: Grid, pose: RigidPose, K: CameraIntrinsics):
    """Source-image coordinates for every target pixel, and the in-front flag."""
    pix = pixel_grid(depth.height, depth.width)
    d = np.where(depth.valid, depth.scalar, 1.0)
    pts = backproject(pix, d, K)
    coords, in_front = project(pose.apply(pts), K)
    return coords, in_front & depth.valid


def warp_image(src: Grid, depth: Grid, pose: RigidPose, K: CameraIntrinsics) -> Grid:
    """Synthesise the target view from ``src`` using target depth and ``T_{t->s}``."""
    require_same_shape(src, depth)
    if depth.channels != 1:
        raise ContractError("depth must be single-channel")
    if np.any(depth.scalar[depth.valid] <= 0):
        raise DomainError("depth must be positive on valid pixels")
    coords, ok = reprojection_coords(depth, pose, K)
    values, valid = bilinear_sample(src, coords)
    return Grid(values, valid & ok)


def plane_sweep_warp(src_feat: Grid, depth: float, pose: RigidPose, K: CameraIntrinsics) -> Grid:
    """Warp source features onto the fronto-parallel target plane at ``depth``."""
    if not depth > 0:
        raise DomainError("plane depth must be positive")
    plane = Grid(np.full(src_feat.shape, float(depth)), np.ones(src_feat.shape, dtype=bool))
    return warp_image(src_feat, plane, pose, K)
