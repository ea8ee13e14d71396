"""Depth evaluation metrics, median scaling and static/dynamic splits."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass

import numpy as np

from .grid import ContractError, Grid, require_same_shape

MIN_DEPTH = 1e-3
CSV_HEADER = ["abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"]


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    count: int = 0

    def row(self) -> list[float]:
        return list(astuple(self))[:7]


def _selection(pred: Grid, gt: Grid, mask, cap: float, standard_mask: bool) -> np.ndarray:
    require_same_shape(pred, gt)
    sel = pred.valid & gt.valid
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    g = gt.scalar
    if standard_mask:
        sel &= (g > 0) & (g <= cap)
    else:
        sel &= g > 0
    return sel


def evaluate(pred: Grid, gt: Grid, mask=None, cap: float = 80.0, standard_mask: bool = True) -> DepthMetrics:
    """Standard seven depth statistics over valid, masked pixels.

    Predictions are clamped to ``[1e-3, cap]``. With ``standard_mask`` only
    ground truth in ``(0, cap]`` is scored.
    """
    sel = _selection(pred, gt, mask, cap, standard_mask)
    n = int(sel.sum())
    if n == 0:
        raise ContractError("no pixels to evaluate")
    p = np.clip(pred.scalar[sel], MIN_DEPTH, cap)
    g = gt.scalar[sel]
    thresh = np.maximum(p / g, g / p)
    err = p - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err**2 / g)),
        rmse=float(np.sqrt(np.mean(err**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(thresh < 1.25)),
        delta2=float(np.mean(thresh < 1.25**2)),
        delta3=float(np.mean(thresh < 1.25**3)),
        count=n,
    )


def median_scale(pred: Grid, gt: Grid, mask=None, cap: float = 80.0):
    """Scale ``pred`` by ``median(gt) / median(pred)`` over the evaluated pixels.

    Returns:
        ``(scaled_pred, scale)``.
    """
    sel = _selection(pred, gt, mask, cap, True)
    if not sel.any():
        raise ContractError("no pixels to scale over")
    med_pred = float(np.median(pred.scalar[sel]))
    if med_pred == 0:
        raise ContractError("median of the prediction is zero")
    scale = float(np.median(gt.scalar[sel])) / med_pred
    return Grid(pred.values * scale, pred.valid), scale


def split_evaluate(pred: Grid, gt: Grid, dynamic_mask, cap: float = 80.0, exclude=None):
    """Evaluate static and dynamic regions separately.

    ``exclude`` removes pixels from both sides (e.g. occlusions). A side with
    no pixels is reported as ``None``.
    """
    dynamic = np.asarray(dynamic_mask, dtype=bool)
    keep = np.ones_like(dynamic) if exclude is None else ~np.asarray(exclude, dtype=bool)
    out = []
    for region in (~dynamic & keep, dynamic & keep):
        try:
            out.append(evaluate(pred, gt, region, cap))
        except ContractError:
            out.append(None)
    return tuple(out)


def write_metrics_csv(path, rows: list[tuple[str, str, DepthMetrics | None]]) -> None:
    """Rows of ``(depth_name, region, metrics)``; absent regions are skipped."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["depth", "region", *CSV_HEADER, "pixels"])
        for name, region, m in rows:
            if m is None:
                continue
            writer.writerow([name, region, *(f"{v:.10g}" for v in m.row()), m.count])


def read_metrics_csv(path) -> dict[tuple[str, str], DepthMetrics]:
    out = {}
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            vals = [float(rec[k]) for k in CSV_HEADER]
            out[(rec["depth"], rec["region"])] = DepthMetrics(*vals, count=int(rec["pixels"]))
    return out


def abs_rel_error_map(pred: Grid, gt: Grid) -> Grid:
    """Per-pixel ``|pred - gt| / gt``; valid where both are valid and gt > 0."""
    require_same_shape(pred, gt)
    g = gt.scalar
    valid = pred.valid & gt.valid & (g > 0)
    err = np.abs(pred.scalar - g) / np.where(valid, g, 1.0)
    return Grid(np.where(valid, err, 0.0), valid)
