"""Scene directories and the end-to-end depth pipeline.

A scene directory holds three frames, ground truth for the middle (target)
frame and a ``manifest.json`` naming every file with its SHA-256. A run
directory holds every intermediate of :func:`run_pipeline` plus its own
manifest. Everything written is a deterministic function of the inputs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .costvolume import (CostVolume, DepthHypotheses, argmin_depth, build_cost_volume, cost_volume_stats,
                         sid_candidates, smooth_depth)
from .fileio import load_grid, load_image, read_pgm, save_grid, save_image, write_pgm
from .geometry import CameraIntrinsics, RigidPose
from .grid import Grid, downsample2, upsample_nearest
from .metrics import DepthMetrics, evaluate, split_evaluate, write_metrics_csv
from .optimize import RefineResult, photometric_map, refine_depth
from .pcvm import (GaussianDepth, ProbabilityVolume, cost_to_probabilities, expected_depth, fuse_wam, fuse_wgm,
                   gaussian_probabilities, rescale_to_cost)
from .photometric import smoothness_loss
from .synth import feature_maps, occlusion_mask, oracle_single_depth, render
from .uncertainty import PhotometricTerms, binary_mask, consistency_loss, reweighted_loss, total_loss, uncertainty_map

logger = logging.getLogger(__name__)

FEATURE_FACTOR = 4
FLAT_WARNING_FRACTION = 0.5
SCENE_ROLES = ("frames", "depth_gt", "dynamic_mask", "occlusion_mask", "poses")


class MissingInputError(FileNotFoundError):
    pass


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_manifest(directory, roles: dict, extra: dict | None = None) -> Path:
    """Checksum every file under ``directory`` (except the manifest) into ``manifest.json``."""
    directory = Path(directory)
    files = {
        p.relative_to(directory).as_posix(): sha256_file(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    body = {"files": files, "roles": roles}
    if extra:
        body.update(extra)
    path = directory / "manifest.json"
    _dump_json(path, body)
    return path


# --- scene directories ---------------------------------------------------


def write_scene(cfg: PipelineConfig, out_dir, target: int = 1) -> Path:
    """Render frames ``target-1, target, target+1`` and the target's ground truth."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = cfg.scene
    indices = [target - 1, target, target + 1]
    frames = {i: render(scene, i) for i in indices}
    names = []
    for i in indices:
        name = f"frame_{i}.ppm"
        save_image(out / name, frames[i].image)
        names.append(name)
    save_grid(out / "depth_gt.pfm", frames[target].depth)
    write_pgm(out / "dynamic.pgm", frames[target].dynamic)
    write_pgm(out / "occlusion.pgm", occlusion_mask(scene, target, [indices[0], indices[2]]))
    K = scene.intrinsics
    _dump_json(out / "poses.json", {
        "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height},
        "camera_to_world": {name: frames[i].pose.matrix.tolist() for i, name in zip(indices, names)},
    })
    roles = {
        "frames": names,
        "target": names[1],
        "depth_gt": "depth_gt.pfm",
        "dynamic_mask": "dynamic.pgm",
        "occlusion_mask": "occlusion.pgm",
        "poses": "poses.json",
    }
    return write_manifest(out, roles)


@dataclass(frozen=True, eq=False)
class SceneData:
    K: CameraIntrinsics
    target: Grid
    sources: list[tuple[Grid, RigidPose]]
    depth_gt: Grid
    dynamic: np.ndarray
    occlusion: np.ndarray
    files: dict


def load_scene(scene_dir) -> SceneData:
    """Read a scene directory, checking that every manifest role and checksum is present."""
    root = Path(scene_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise MissingInputError(f"{manifest_path}: no manifest")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    roles = manifest.get("roles", {})
    files = manifest.get("files", {})
    missing = [r for r in (*SCENE_ROLES, "target") if r not in roles]
    if missing:
        raise MissingInputError(f"manifest lacks role(s): {', '.join(missing)}")
    needed = [*roles["frames"], *(roles[r] for r in SCENE_ROLES if r != "frames")]
    for name in needed:
        path = root / name
        if name not in files or not path.is_file():
            raise MissingInputError(f"{path}: listed input is missing")
        if sha256_file(path) != files[name]:
            raise MissingInputError(f"{path}: checksum does not match the manifest")

    poses = json.loads((root / roles["poses"]).read_text(encoding="utf-8"))
    K = CameraIntrinsics(**poses["intrinsics"])
    missing = [name for name in roles["frames"] if name not in poses.get("camera_to_world", {})]
    if missing:
        raise MissingInputError(f"no pose for frame(s): {', '.join(missing)}")
    c2w = {name: RigidPose.from_matrix(poses["camera_to_world"][name]) for name in roles["frames"]}
    target_name = roles["target"]
    target_pose = c2w[target_name]
    target = load_image(root / target_name)
    sources = [
        (load_image(root / name), c2w[name].inverse().compose(target_pose))
        for name in roles["frames"] if name != target_name
    ]
    return SceneData(
        K=K,
        target=target,
        sources=sources,
        depth_gt=load_grid(root / roles["depth_gt"]),
        dynamic=read_pgm(root / roles["dynamic_mask"]) > 127,
        occlusion=read_pgm(root / roles["occlusion_mask"]) > 127,
        files={name: files[name] for name in needed},
    )


# --- pipeline -------------------------------------------------------------


def _downsample(grid: Grid, factor: int) -> Grid:
    while factor > 1:
        grid = downsample2(grid)
        factor //= 2
    return grid


@dataclass(eq=False)
class PipelineResult:
    hyp: DepthHypotheses
    cost_volume: CostVolume
    modulated: CostVolume
    p_single: ProbabilityVolume
    p_cv: ProbabilityVolume
    p_fused: ProbabilityVolume
    single: GaussianDepth
    d_cv: Grid
    d_multi: Grid
    uncertainty: Grid
    uncertainty_cv: Grid
    refined: RefineResult | None
    metrics: dict
    losses: dict
    flat_fraction: float

    @property
    def final_depth(self) -> Grid:
        return self.refined.depth if self.refined is not None else self.d_multi


def run_pipeline(cfg: PipelineConfig, scene: SceneData) -> PipelineResult:
    K = scene.K
    h, w = scene.target.shape
    hyp = sid_candidates(cfg.d_min, cfg.d_max, cfg.k)
    K_feat = K.downscaled(FEATURE_FACTOR)

    f_t = feature_maps(scene.target, cfg.channels, cfg.feature_gain)
    f_sources = [(feature_maps(img, cfg.channels, cfg.feature_gain), pose) for img, pose in scene.sources]
    cv = build_cost_volume(f_t, f_sources, K_feat, hyp)
    flat = cost_volume_stats(cv).flat_fraction
    if flat > FLAT_WARNING_FRACTION:
        logger.warning("cost volume is flat on %.0f%% of pixels; matching is degenerate", 100 * flat)

    d_cv_small = smooth_depth(argmin_depth(cv, hyp), cfg.smooth_radius)
    d_cv = upsample_nearest(d_cv_small, FEATURE_FACTOR, (h, w))

    single = oracle_single_depth(scene.depth_gt, cfg.noise)
    single_small = GaussianDepth(_downsample(single.mean, FEATURE_FACTOR), _downsample(single.var, FEATURE_FACTOR))

    U = uncertainty_map(single.mean, d_cv, cfg.loss.beta)
    U_small = uncertainty_map(single_small.mean, d_cv_small, cfg.loss.beta)

    p_single = gaussian_probabilities(single_small, hyp)
    p_cv = cost_to_probabilities(cv)
    if cfg.fusion == "wgm":
        P = fuse_wgm(p_single, p_cv, U_small)
    elif cfg.fusion == "wam":
        P = fuse_wam(p_single, p_cv, U_small)
    else:
        P = fuse_wgm(p_single, p_cv, Grid(np.zeros(U_small.shape), U_small.valid))
    modulated = rescale_to_cost(P, cv)
    d_multi = upsample_nearest(expected_depth(P, hyp), FEATURE_FACTOR, (h, w))

    refined = None
    if cfg.descent.steps > 0:
        refined = refine_depth(d_multi, scene.target, scene.sources, K, U, cfg.descent, cfg.loss, cfg.photometric,
                               cost_volume=cv, hyp=hyp)
        if refined.diverged:
            logger.warning("depth refinement diverged; keeping the last iterate")

    depths = {"multi": d_multi, "cv": d_cv, "single": single.mean}
    if refined is not None:
        depths["refined"] = refined.depth
    metrics = {}
    for name, depth in depths.items():
        static, dynamic = split_evaluate(depth, scene.depth_gt, scene.dynamic, cfg.cap, exclude=scene.occlusion)
        metrics[name] = {"all": evaluate(depth, scene.depth_gt, cap=cfg.cap), "static": static, "dynamic": dynamic}

    final = refined.depth if refined is not None else d_multi

    def photo(d):
        return photometric_map(d, scene.target, scene.sources, K, cfg.photometric)

    _, losses = total_loss(
        PhotometricTerms(reweighted_loss(photo(final), U, cfg.loss.gamma), smoothness_loss(final, scene.target)),
        PhotometricTerms(photo(single.mean), smoothness_loss(single.mean, scene.target)),
        photo(d_cv),
        consistency_loss(final, single.mean, U, cfg.loss.gamma),
        cfg.loss,
    )
    losses["total"] = sum(losses.values())

    return PipelineResult(hyp, cv, modulated, p_single, p_cv, P, single, d_cv, d_multi, U, U_small, refined,
                          metrics, losses, flat)


def write_run(result: PipelineResult, cfg: PipelineConfig, scene_dir, out_dir) -> Path:
    """Serialise every intermediate of a pipeline run into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene_dir = Path(scene_dir)
    r = result

    save_grid(out / "depth_multi.pfm", r.d_multi)
    save_grid(out / "depth_cv.pfm", r.d_cv)
    save_grid(out / "depth_single.pfm", r.single.mean)
    save_grid(out / "depth_single_var.pfm", r.single.var)
    save_grid(out / "uncertainty.pfm", r.uncertainty)
    save_grid(out / "uncertainty_cv.pfm", r.uncertainty_cv)
    write_pgm(out / "mask.pgm", binary_mask(r.uncertainty, cfg.loss.gamma))
    r.cost_volume.save(out / "cost_volume.pdcv")
    r.modulated.save(out / "cost_volume_modulated.pdcv")
    r.p_single.save(out / "p_single.pdpv", r.hyp)
    r.p_cv.save(out / "p_cv.pdpv", r.hyp)
    r.p_fused.save(out / "p_fused.pdpv", r.hyp)
    if r.refined is not None:
        save_grid(out / "depth_refined.pfm", r.refined.depth)
        r.refined.write_trace(out / "refine_trace.csv")

    rows = [(name, region, m) for name, regions in r.metrics.items() for region, m in regions.items()]
    write_metrics_csv(out / "metrics.csv", rows)
    with open(out / "losses.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["term", "value"])
        for name, value in r.losses.items():
            writer.writerow([name, f"{value:.12g}"])

    # ground truth travels with the run so plotdata needs nothing else
    manifest = json.loads((scene_dir / "manifest.json").read_text(encoding="utf-8"))
    roles = manifest["roles"]
    for role, name in (("depth_gt", "depth_gt.pfm"), ("dynamic_mask", "dynamic.pgm"),
                       ("occlusion_mask", "occlusion.pgm")):
        shutil.copyfile(scene_dir / roles[role], out / name)
        side = scene_dir / (Path(roles[role]).stem + ".valid.pgm")
        if role == "depth_gt" and side.exists():
            shutil.copyfile(side, out / "depth_gt.valid.pgm")

    _dump_json(out / "run.json", {
        "config": cfg.as_dict(),
        "scene_inputs": manifest["files"],
        "flat_fraction": r.flat_fraction,
        "refine": None if r.refined is None else {
            "steps_run": len(r.refined.trace) - 1, "diverged": r.refined.diverged,
        },
    })
    roles = {
        "depth_multi": "depth_multi.pfm",
        "depth_cv": "depth_cv.pfm",
        "depth_single": "depth_single.pfm",
        "uncertainty": "uncertainty.pfm",
        "uncertainty_cv": "uncertainty_cv.pfm",
        "cost_volume": "cost_volume.pdcv",
        "cost_volume_modulated": "cost_volume_modulated.pdcv",
        "p_single": "p_single.pdpv",
        "p_cv": "p_cv.pdpv",
        "p_fused": "p_fused.pdpv",
        "metrics": "metrics.csv",
        "depth_gt": "depth_gt.pfm",
        "dynamic_mask": "dynamic.pgm",
        "occlusion_mask": "occlusion.pgm",
    }
    if r.refined is not None:
        roles["depth_refined"] = "depth_refined.pfm"
    return write_manifest(out, roles)


def metrics_summary(metrics: dict[str, dict[str, DepthMetrics | None]]) -> dict:
    return {
        name: {region: None if m is None else m.abs_rel for region, m in regions.items()}
        for name, regions in metrics.items()
    }
