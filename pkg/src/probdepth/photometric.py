"""Photometric reprojection, log-likelihood and smoothness losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter, uniform_filter

from .grid import ContractError, DomainError, Grid, require_same_shape


@dataclass(frozen=True)
class PhotometricConfig:
    alpha: float = 0.85
    ssim_window: int = 3
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2
    min_over_sources: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError("alpha must lie in [0, 1]")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise DomainError("ssim_window must be odd and >= 3")


def _box_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Mean over a ``window x window`` neighbourhood with mirrored borders; ``x`` is (H, W, C)."""
    return uniform_filter(x, size=(window, window, 1), mode="mirror")


def _window_all(mask: np.ndarray, window: int) -> np.ndarray:
    return minimum_filter(mask.astype(np.uint8), size=window, mode="mirror").astype(bool)


def ssim_map(a: Grid, b: Grid, cfg: PhotometricConfig = PhotometricConfig()) -> Grid:
    """Per-pixel SSIM, averaged over channels.

    A pixel is valid only if every pixel of its window is valid in both inputs.
    """
    require_same_shape(a, b)
    w = cfg.ssim_window
    x, y = a.values, b.values
    mu_x = _box_mean(x, w)
    mu_y = _box_mean(y, w)
    sigma_x = _box_mean(x * x, w) - mu_x**2
    sigma_y = _box_mean(y * y, w) - mu_y**2
    sigma_xy = _box_mean(x * y, w) - mu_x * mu_y
    num = (2 * mu_x * mu_y + cfg.ssim_c1) * (2 * sigma_xy + cfg.ssim_c2)
    den = (mu_x**2 + mu_y**2 + cfg.ssim_c1) * (sigma_x + sigma_y + cfg.ssim_c2)
    ssim = np.clip(num / den, -1.0, 1.0).mean(axis=2)
    valid = _window_all(a.valid & b.valid, w)
    return Grid(ssim, valid)


def reprojection_loss(target: Grid, warped: Grid, cfg: PhotometricConfig = PhotometricConfig()) -> Grid:
    """Blend of SSIM dissimilarity and channel-mean absolute difference."""
    require_same_shape(target, warped)
    ssim = ssim_map(target, warped, cfg)
    l1 = np.abs(target.values - warped.values).mean(axis=2)
    loss = cfg.alpha * (1.0 - ssim.scalar) / 2.0 + (1.0 - cfg.alpha) * l1
    # the SSIM window may reach an invalid pixel even when the centre is fine
    valid = target.valid & warped.valid & ssim.valid
    return Grid(loss, valid)


def min_over_sources(losses: list[Grid]) -> Grid:
    """Per-pixel minimum over the sources that are valid at that pixel."""
    if not losses:
        raise ContractError("need at least one loss map")
    require_same_shape(*losses)
    stack = np.stack([np.where(g.valid, g.scalar, np.inf) for g in losses])
    best = stack.min(axis=0)
    valid = np.isfinite(best)
    return Grid(np.where(valid, best, 0.0), valid)


def nll_reprojection_loss(lp, var):
    """Log-likelihood loss ``lp**2 / var + ln(var)``.

    Accepts grids (validity is intersected) or plain arrays/scalars.
    """
    if isinstance(lp, Grid):
        require_same_shape(lp, var)
        valid = lp.valid & var.valid
        v = var.scalar
        if np.any(v[valid] <= 0):
            raise DomainError("variance must be positive")
        v = np.where(valid, v, 1.0)
        return Grid(lp.scalar**2 / v + np.log(v), valid)
    lp = np.asarray(lp, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise DomainError("variance must be positive")
    out = lp**2 / var + np.log(var)
    return float(out) if out.ndim == 0 else out


def _smoothness_pairs(depth: np.ndarray, valid: np.ndarray, image: np.ndarray, disp_mean: float | None):
    disp = np.where(valid, 1.0 / np.where(valid, depth, 1.0), 0.0)
    if disp_mean is None:
        disp_mean = disp[valid].mean()
    disp = disp / disp_mean
    vx = valid[:, 1:] & valid[:, :-1]
    vy = valid[1:, :] & valid[:-1, :]
    gx = np.abs(disp[:, 1:] - disp[:, :-1]) * np.exp(-np.abs(image[:, 1:] - image[:, :-1]))
    gy = np.abs(disp[1:, :] - disp[:-1, :]) * np.exp(-np.abs(image[1:, :] - image[:-1, :]))
    return np.where(vx, gx, 0.0), np.where(vy, gy, 0.0), vx, vy


def smoothness_loss(depth: Grid, image: Grid) -> float:
    """Edge-aware first-order smoothness of mean-normalised disparity.

    Forward differences; a term counts only where both pixels of the pair are
    valid. The x and y terms are averaged over their own valid pairs.
    """
    require_same_shape(depth, image)
    valid = depth.valid & image.valid
    if not valid.any():
        raise ContractError("smoothness over an all-invalid map")
    gx, gy, vx, vy = _smoothness_pairs(depth.scalar, valid, image.values.mean(axis=2), None)
    total = 0.0
    if vx.any():
        total += gx.sum() / vx.sum()
    if vy.any():
        total += gy.sum() / vy.sum()
    return float(total)


def smoothness_pixel_map(depth: Grid, image: Grid, disp_mean: float | None = None) -> np.ndarray:
    """Smoothness pair terms attributed to the left/top pixel of each pair.

    Scaled so that ``map.sum() / n_valid == smoothness_loss`` when
    ``disp_mean`` is None. Passing ``disp_mean`` freezes the normaliser, which
    makes every entry depend only on its own pixel and the right/lower
    neighbour.
    """
    require_same_shape(depth, image)
    valid = depth.valid & image.valid
    n = valid.sum()
    gx, gy, vx, vy = _smoothness_pairs(depth.scalar, valid, image.values.mean(axis=2), disp_mean)
    out = np.zeros(depth.shape)
    if vx.any():
        out[:, :-1] += gx * (n / vx.sum())
    if vy.any():
        out[:-1, :] += gy * (n / vy.sum())
    return out


def central_difference_grad(f, x: float, h: float = 1e-6) -> float:
    if not h > 0:
        raise DomainError("step must be positive")
    return (f(x + h) - f(x - h)) / (2 * h)
