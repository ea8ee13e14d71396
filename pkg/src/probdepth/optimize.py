"""Per-pixel depth refinement by finite-difference descent on the reweighted photometric loss plus smoothness."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .costvolume import CostVolume, DepthHypotheses
from .geometry import CameraIntrinsics, RigidPose, warp_image
from .grid import DomainError, Grid, require_same_shape
from .photometric import PhotometricConfig, min_over_sources, reprojection_loss, smoothness_loss, smoothness_pixel_map
from .uncertainty import LossConfig, binary_mask, reweighted_loss

logger = logging.getLogger(__name__)

DIVERGENCE_STREAK = 5


@dataclass(frozen=True)
class DescentConfig:
    steps: int = 200
    step_size: float = 1.0
    fd_step: float = 1e-3
    freeze_cost_volume: bool = True
    d_min: float = 1.0
    d_max: float = 80.0

    def __post_init__(self):
        if self.steps < 0:
            raise DomainError("steps must be non-negative")
        if not self.step_size > 0:
            raise DomainError("step_size must be positive")
        if not self.fd_step > 0:
            raise DomainError("fd_step must be positive")


@dataclass
class RefineResult:
    depth: Grid
    trace: list[dict] = field(default_factory=list)
    diverged: bool = False

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["step", "total", "l_up", "l_s", "active_pixels"])
            for rec in self.trace:
                writer.writerow([rec["step"], *(f"{rec[k]:.12g}" for k in ("total", "l_up", "l_s")),
                                 rec["active_pixels"]])


def photometric_map(depth: Grid, target: Grid, sources: list[tuple[Grid, RigidPose]], K: CameraIntrinsics,
                    cfg: PhotometricConfig = PhotometricConfig()) -> Grid:
    """Per-pixel reprojection loss of ``depth``, reduced over sources."""
    losses = [reprojection_loss(target, warp_image(src, depth, pose, K), cfg) for src, pose in sources]
    return _reduce_sources(losses, cfg)


def fd_gradient_field(depth: Grid, objective, fd_step: float = 1e-3) -> Grid:
    """Central difference of a scalar ``objective(depth)`` w.r.t. each valid pixel.

    The step for pixel ``x`` is ``fd_step * depth[x]``. One pair of objective
    evaluations per pixel, so use it on small maps or as a reference.
    """
    if not fd_step > 0:
        raise DomainError("fd_step must be positive")
    base = depth.scalar
    grad = np.zeros(depth.shape)
    for y, x in zip(*np.nonzero(depth.valid)):
        h = fd_step * abs(base[y, x]) if base[y, x] != 0 else fd_step
        plus = base.copy()
        minus = base.copy()
        plus[y, x] += h
        minus[y, x] -= h
        grad[y, x] = (objective(Grid(plus, depth.valid)) - objective(Grid(minus, depth.valid))) / (2 * h)
    return Grid(grad, depth.valid)


def _box3_sum(x: np.ndarray) -> np.ndarray:
    p = np.pad(x, 1)
    h, w = x.shape
    return sum(p[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3))


def _reduce_sources(losses: list[Grid], cfg: PhotometricConfig) -> Grid:
    if cfg.min_over_sources or len(losses) == 1:
        return min_over_sources(losses)
    stack = np.stack([g.scalar for g in losses])
    ok = np.stack([g.valid for g in losses])
    n = ok.sum(axis=0)
    return Grid(np.where(n > 0, (stack * ok).sum(axis=0) / np.maximum(n, 1), 0.0), n > 0)


def objective_terms(depth: Grid, target: Grid, sources, K, U: Grid, loss_cfg: LossConfig = LossConfig(),
                    photo_cfg: PhotometricConfig = PhotometricConfig()) -> dict:
    """Mean reweighted photometric loss, smoothness, and their weighted sum."""
    lup = reweighted_loss(photometric_map(depth, target, sources, K, photo_cfg), U, loss_cfg.gamma)
    l_up = lup.masked_mean() if lup.valid.any() else 0.0
    l_s = smoothness_loss(depth, target) if loss_cfg.lambda_s > 0 else 0.0
    return {"total": l_up + loss_cfg.lambda_s * l_s, "l_up": l_up, "l_s": l_s}


def photometric_gradient(depth: Grid, target: Grid, sources, K, U: Grid, active: np.ndarray, fd_step: float,
                         loss_cfg: LossConfig = LossConfig(),
                         photo_cfg: PhotometricConfig = PhotometricConfig(), bracket: bool = False) -> np.ndarray:
    """Central-difference gradient of the pixel-summed descent objective for every active pixel.

    The objective is the reweighted photometric loss plus ``lambda_s`` times
    the edge-aware smoothness. A pixel's depth only reaches either term inside
    its 3x3 neighbourhood, so pixels
    on a stride-3 lattice can be perturbed together: 9 lattice offsets, two
    evaluations each. The warped value at a pixel depends on that pixel's
    depth alone, so each source is warped just three times (base, +h, -h).

    With ``bracket`` the gradient is zeroed wherever neither perturbation
    lowers the objective. The photometric loss has a kink at an exact match,
    where the central difference is not zero even though the pixel already
    sits at its minimum.
    """
    base = depth.scalar
    valid = depth.valid
    h = fd_step * base
    warps = []
    for src, pose in sources:
        warps.append(tuple(
            warp_image(src, Grid(d, valid), pose, K) for d in (base, base + h, np.maximum(base - h, 1e-9))
        ))
    shifted_depth = (base + h, np.maximum(base - h, 1e-9))
    # the smoothness normaliser is frozen at the current iterate so every pair
    # term stays local to its two pixels
    disp_mean = float((1.0 / base[valid]).mean()) if valid.any() else 1.0
    def local_map(losses, d):
        lup = reweighted_loss(_reduce_sources(losses, photo_cfg), U, loss_cfg.gamma)
        local = np.where(lup.valid, lup.scalar, 0.0)
        if loss_cfg.lambda_s > 0:
            local = local + loss_cfg.lambda_s * smoothness_pixel_map(Grid(d, valid), target, disp_mean)
        return _box3_sum(local)

    centre = None
    if bracket:
        centre = local_map([reprojection_loss(target, w[0], photo_cfg) for w in warps], base)
    grad = np.zeros(depth.shape)
    ys, xs = np.mgrid[0:depth.height, 0:depth.width]
    for oy in range(3):
        for ox in range(3):
            sel = active & (ys % 3 == oy) & (xs % 3 == ox)
            if not sel.any():
                continue
            sums = []
            for side in (1, 2):
                losses = []
                for w0, *shifted in warps:
                    w1 = shifted[side - 1]
                    mixed = Grid(np.where(sel[:, :, None], w1.values, w0.values), np.where(sel, w1.valid, w0.valid))
                    losses.append(reprojection_loss(target, mixed, photo_cfg))
                sums.append(local_map(losses, np.where(sel, shifted_depth[side - 1], base)))
            g = (sums[0] - sums[1]) / (2 * h)
            if centre is not None:
                g = np.where((sums[0] >= centre) & (sums[1] >= centre), 0.0, g)
            grad[sel] = g[sel]
    return grad


def refine_depth(init: Grid, target: Grid, sources: list[tuple[Grid, RigidPose]], K: CameraIntrinsics, U: Grid,
                 cfg: DescentConfig = DescentConfig(), loss_cfg: LossConfig = LossConfig(),
                 photo_cfg: PhotometricConfig = PhotometricConfig(),
                 cost_volume: CostVolume | None = None,
                 hyp: DepthHypotheses | None = None) -> RefineResult:
    """Jacobi-style descent on the uncertainty-reweighted photometric loss plus smoothness.

    Every iteration computes all per-pixel gradients from the previous iterate,
    then moves each unmasked pixel by ``-step_size * gradient`` and clamps to
    ``[d_min, d_max]``. The gradient is taken on the pixel-summed loss, so the
    step size does not depend on image size. Pixels with ``U >= gamma`` are
    never touched.

    With ``freeze_cost_volume`` the supplied cost volume is locked read-only
    for the whole run. Without it, the refined depth is fed back into the
    volume at the end by re-modulating its costs around the refined depth
    (requires ``hyp``).
    """
    require_same_shape(init, target, U)
    if np.any(init.scalar[init.valid] <= 0):
        raise DomainError("initial depth must be positive")
    active = binary_mask(U, loss_cfg.gamma) & init.valid
    depth = init.scalar.copy()
    valid = init.valid

    locked = None
    if cost_volume is not None and cfg.freeze_cost_volume:
        locked = cost_volume.costs.flags.writeable
        cost_volume.costs.setflags(write=False)

    def record(step, d):
        terms = objective_terms(Grid(d, valid), target, sources, K, U, loss_cfg, photo_cfg)
        trace.append({"step": step, **terms, "active_pixels": n_active})
        return terms["total"]

    n_active = int(active.sum())
    trace = []
    try:
        loss = record(0, depth)
        streak = 0
        diverged = False
        for step in range(1, cfg.steps + 1):
            grad = photometric_gradient(Grid(depth, valid), target, sources, K, U, active, cfg.fd_step,
                                        loss_cfg, photo_cfg, bracket=True)
            proposal = np.clip(depth - cfg.step_size * grad, cfg.d_min, cfg.d_max)
            depth = np.where(active, proposal, depth)
            new_loss = record(step, depth)
            streak = streak + 1 if new_loss > loss else 0
            loss = new_loss
            if streak >= DIVERGENCE_STREAK:
                diverged = True
                logger.warning("descent diverging: loss rose %d steps in a row at step %d", streak, step)
                break
    finally:
        if locked is not None:
            cost_volume.costs.setflags(write=locked)

    refined = Grid(depth, valid)
    if cost_volume is not None and not cfg.freeze_cost_volume:
        _feed_back(cost_volume, refined, hyp)
    return RefineResult(refined, trace, diverged)


def _feed_back(cv: CostVolume, depth: Grid, hyp: DepthHypotheses | None) -> None:
    """Rewrite ``cv`` in place so its cost minimum follows ``depth``."""
    from .grid import downsample2
    from .pcvm import GaussianDepth, gaussian_probabilities, rescale_to_cost

    if hyp is None:
        raise ValueError("feeding depth back into the cost volume needs the depth hypotheses")
    small = depth
    while small.height > cv.height:
        small = downsample2(small)
    ratios = hyp.values[1:] / hyp.values[:-1]
    var = (small.scalar * (ratios.mean() - 1.0)) ** 2
    g = GaussianDepth(small, Grid(np.maximum(var, 1e-6), small.valid))
    modulated = rescale_to_cost(gaussian_probabilities(g, hyp), cv)
    cv.costs[...] = modulated.costs
