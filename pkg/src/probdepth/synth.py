"""Deterministic synthetic dynamic scenes.

A scene is a textured fronto-parallel background plane plus textured
rectangles (also fronto-parallel in world space) that translate in the XY
plane. The camera moves by a fixed rigid step per frame. Rendering is exact
ray casting with a z-buffer, so ground-truth depth, dynamic masks and
occlusions come for free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import CameraIntrinsics, RigidPose, pixel_grid, project
from .grid import DomainError, Grid, downsample2

BACKGROUND_ID = 0

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on uint64 arrays."""
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def _lattice(seed: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) value attached to integer lattice points."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed) * np.uint64(0x9E3779B97F4A7C15) + i.astype(np.int64).astype(np.uint64))
        h = _mix(h ^ (j.astype(np.int64).astype(np.uint64) * np.uint64(0xD6E8FEB86659FD93)))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(x: np.ndarray, y: np.ndarray, seed: int, octaves: int = 3) -> np.ndarray:
    """Smooth value noise in [0, 1]; ``x`` and ``y`` are in lattice units."""
    total = np.zeros(np.broadcast(x, y).shape)
    norm = 0.0
    amp, freq = 1.0, 1.0
    for octave in range(octaves):
        xs, ys = x * freq, y * freq
        i0, j0 = np.floor(xs), np.floor(ys)
        fx, fy = xs - i0, ys - j0
        sx = fx * fx * (3 - 2 * fx)
        sy = fy * fy * (3 - 2 * fy)
        s = seed * 7919 + octave
        v00 = _lattice(s, i0, j0)
        v10 = _lattice(s, i0 + 1, j0)
        v01 = _lattice(s, i0, j0 + 1)
        v11 = _lattice(s, i0 + 1, j0 + 1)
        top = v00 + sx * (v10 - v00)
        bot = v01 + sx * (v11 - v01)
        total += amp * (top + sy * (bot - top))
        norm += amp
        amp *= 0.5
        freq *= 2.0
    return total / norm


@dataclass(frozen=True)
class Background:
    depth: float = 12.0
    seed: int = 1
    texture_scale: float = 0.5

    def __post_init__(self):
        if not self.texture_scale > 0:
            raise DomainError("texture_scale must be positive")


@dataclass(frozen=True)
class SceneObject:
    """Textured world-space rectangle; ``center`` is its XY position at frame 0."""

    center: tuple[float, float] = (0.0, 0.0)
    depth: float = 6.0
    size: tuple[float, float] = (1.0, 1.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    seed: int = 2
    texture_scale: float = 0.25

    def __post_init__(self):
        if not self.texture_scale > 0:
            raise DomainError("texture_scale must be positive")
        if min(self.size) <= 0:
            raise DomainError("object size must be positive")

    @property
    def moving(self) -> bool:
        return any(v != 0 for v in self.velocity)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    intrinsics: CameraIntrinsics
    background: Background = Background()
    objects: tuple[SceneObject, ...] = ()
    camera_motion: RigidPose = field(default_factory=RigidPose.identity)
    rng_seed: int = 0
    d_min: float = 1.0
    d_max: float = 80.0

    def __post_init__(self):
        for depth in [self.background.depth, *(o.depth for o in self.objects)]:
            if not self.d_min < depth < self.d_max:
                raise DomainError(f"surface depth {depth} outside ({self.d_min}, {self.d_max})")
        for o in self.objects:
            if not np.all(np.isfinite(o.velocity)):
                raise DomainError("object velocity must be finite")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.intrinsics.height, self.intrinsics.width

    def camera_pose(self, frame_index: int) -> RigidPose:
        """Camera-to-world pose: the motion step applied ``frame_index`` times."""
        pose = RigidPose.identity()
        for _ in range(frame_index):
            pose = pose.compose(self.camera_motion)
        return pose

    def relative_pose(self, target: int, source: int) -> RigidPose:
        """``T_{t->s}``: target-camera coordinates to source-camera coordinates."""
        return self.camera_pose(source).inverse().compose(self.camera_pose(target))


@dataclass(frozen=True, eq=False)
class Frame:
    image: Grid
    depth: Grid
    dynamic: np.ndarray
    pose: RigidPose
    surface: np.ndarray


def _cast(scene: SceneSpec, frame_index: int, coords: np.ndarray):
    """Ray-cast pixel coordinates ``(..., 2)``; returns depth, surface id, intensity."""
    K = scene.intrinsics
    pose = scene.camera_pose(frame_index)
    dirs = np.stack(
        [(coords[..., 0] - K.cx) / K.fx, (coords[..., 1] - K.cy) / K.fy, np.ones(coords.shape[:-1])], axis=-1
    )
    origin = pose.translation
    world_dirs = dirs @ pose.rotation.T
    dz = world_dirs[..., 2]

    def hit(plane_z):
        s = (plane_z - origin[2]) / np.where(np.abs(dz) > 1e-12, dz, np.nan)
        pts = origin + s[..., None] * world_dirs
        return s, pts

    depth, pts = hit(scene.background.depth)
    ok = np.isfinite(depth) & (depth > 0)
    depth = np.where(ok, depth, np.inf)
    surface = np.where(ok, BACKGROUND_ID, -1)
    bg = scene.background
    intensity = np.where(
        ok,
        value_noise(pts[..., 0] / bg.texture_scale, pts[..., 1] / bg.texture_scale, scene.rng_seed * 1009 + bg.seed),
        0.0,
    )
    for n, obj in enumerate(scene.objects, start=1):
        s, p = hit(obj.depth)
        cx = obj.center[0] + obj.velocity[0] * frame_index
        cy = obj.center[1] + obj.velocity[1] * frame_index
        lx, ly = p[..., 0] - cx, p[..., 1] - cy
        inside = (np.abs(lx) <= obj.size[0] / 2) & (np.abs(ly) <= obj.size[1] / 2)
        closer = np.isfinite(s) & (s > 0) & inside & (s < depth)
        tex = value_noise(lx / obj.texture_scale, ly / obj.texture_scale, scene.rng_seed * 1009 + obj.seed)
        depth = np.where(closer, s, depth)
        surface = np.where(closer, n, surface)
        intensity = np.where(closer, tex, intensity)
    image = 0.1 + 0.8 * intensity
    return depth, surface, image


def render(scene: SceneSpec, frame_index: int) -> Frame:
    """Render one frame: image, ground-truth depth, dynamic mask and camera-to-world pose."""
    if frame_index < 0:
        raise DomainError("frame index must be non-negative")
    h, w = scene.resolution
    depth, surface, image = _cast(scene, frame_index, pixel_grid(h, w))
    valid = np.isfinite(depth)
    moving_ids = [n for n, o in enumerate(scene.objects, start=1) if o.moving]
    dynamic = np.isin(surface, moving_ids)
    return Frame(
        image=Grid(np.where(valid, image, 0.0), valid),
        depth=Grid(np.where(valid, depth, 0.0), valid),
        dynamic=dynamic,
        pose=scene.camera_pose(frame_index),
        surface=surface,
    )


def occlusion_mask(scene: SceneSpec, target: int, sources: list[int], rel_tol: float = 1e-6) -> np.ndarray:
    """Static target pixels whose surface point is hidden from some source view.

    Out-of-frame samples do not count as occlusion unless no source sees the
    point at all; matching handles those through validity.
    """
    h, w = scene.resolution
    K = scene.intrinsics
    frame = render(scene, target)
    pix = pixel_grid(h, w)
    d = np.where(frame.depth.valid, frame.depth.scalar, 1.0)
    rays = np.stack([(pix[..., 0] - K.cx) / K.fx * d, (pix[..., 1] - K.cy) / K.fy * d, d], axis=-1)
    occluded = np.zeros((h, w), dtype=bool)
    seen_any = np.zeros((h, w), dtype=bool)
    for s in sources:
        pts = scene.relative_pose(target, s).apply(rays)
        coords, front = project(pts, K)
        in_frame = front & (coords[..., 0] >= 0) & (coords[..., 0] <= w - 1)
        in_frame &= (coords[..., 1] >= 0) & (coords[..., 1] <= h - 1)
        safe = np.where(in_frame[..., None], coords, 0.0)
        depth_s, surface_s, _ = _cast(scene, s, safe)
        same = (surface_s == frame.surface) & (np.abs(depth_s - pts[..., 2]) <= rel_tol * pts[..., 2])
        occluded |= in_frame & ~same
        seen_any |= in_frame & same
    return (occluded | ~seen_any) & ~frame.dynamic & frame.depth.valid


@dataclass(frozen=True)
class OracleNoise:
    relative_sigma: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.relative_sigma < 0:
            raise DomainError("relative_sigma must be non-negative")


VAR_FLOOR = 1e-6


def oracle_single_depth(gt: Grid, noise: OracleNoise):
    """Noisy single-frame depth with a matching variance.

    Returns a :class:`probdepth.pcvm.GaussianDepth`.
    """
    from .pcvm import GaussianDepth

    rng = np.random.default_rng(noise.rng_seed)
    eta = rng.normal(0.0, 1.0, size=gt.shape) * noise.relative_sigma
    g = gt.scalar
    mean = g * (1.0 + eta) if noise.relative_sigma > 0 else g.copy()
    var = np.maximum((noise.relative_sigma * g) ** 2, VAR_FLOOR)
    return GaussianDepth(Grid(mean, gt.valid), Grid(var, gt.valid))


def _gradients(x: np.ndarray):
    p = np.pad(x, 1, mode="edge")
    gx = np.abs(p[1:-1, 2:] - p[1:-1, :-2]) / 2
    gy = np.abs(p[2:, 1:-1] - p[:-2, 1:-1]) / 2
    return gx, gy


def _dilated_box(x: np.ndarray, dilation: int) -> np.ndarray:
    p = np.pad(x, dilation, mode="reflect")
    win = sliding_window_view(p, (2 * dilation + 1, 2 * dilation + 1))[:, :, ::dilation, ::dilation]
    return win.mean(axis=(-2, -1))


def feature_maps(image: Grid, channels: int = 8, gain: float = 1.0) -> Grid:
    """Deterministic quarter-resolution features.

    Channels are intensity, |d/dx|, |d/dy|, then 3x3 (dilated) patch means of
    those three, cycling with growing dilation until ``channels`` is reached.
    Everything is multiplied by ``gain``.
    """
    if channels < 3:
        raise DomainError("need at least three feature channels")
    small = downsample2(downsample2(image))
    inten = small.values.mean(axis=2)
    gx, gy = _gradients(inten)
    base = [inten, gx, gy]
    feats = list(base)
    j = 0
    while len(feats) < channels:
        dilation = 1 + j // 3
        feats.append(_dilated_box(base[j % 3], dilation))
        j += 1
    # a feature pixel is trusted only when its gradient stencil is fully valid
    ok = small.valid.copy()
    ok[:, 1:-1] &= small.valid[:, 2:] & small.valid[:, :-2]
    ok[1:-1, :] &= small.valid[2:, :] & small.valid[:-2, :]
    return Grid(np.stack(feats, axis=-1) * gain, ok)
