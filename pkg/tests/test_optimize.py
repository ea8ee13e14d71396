import numpy as np
import pytest

from probdepth.costvolume import CostVolume, sid_candidates
from probdepth.geometry import CameraIntrinsics, RigidPose
from probdepth.grid import DomainError, Grid
from probdepth.metrics import evaluate
from probdepth.optimize import (DescentConfig, RefineResult, fd_gradient_field, objective_terms, photometric_gradient,
                                photometric_map, refine_depth)
from probdepth.photometric import smoothness_loss, smoothness_pixel_map
from probdepth.synth import Background, SceneSpec, render
from probdepth.uncertainty import LossConfig, reweighted_loss

K = CameraIntrinsics(64.0, 64.0, 31.5, 15.5, 64, 32)


def plane_pair(depth=12.0, texture=2.0, baseline=1.0):
    scene = SceneSpec(K, Background(depth, 1, texture), camera_motion=RigidPose.from_translation([baseline, 0, 0]))
    target = render(scene, 1)
    sources = [(render(scene, i).image, scene.relative_pose(1, i)) for i in (0, 2)]
    return target, sources


@pytest.fixture(scope="module")
def pair():
    return plane_pair()


def zeros():
    return Grid.from_array(np.zeros((K.height, K.width)))


def test_descent_config_validation():
    for kwargs in ({"steps": -1}, {"step_size": 0}, {"fd_step": 0}):
        with pytest.raises(DomainError):
            DescentConfig(**kwargs)


def test_fd_gradient_of_quadratic():
    rng = np.random.default_rng(0)
    d = Grid.from_array(rng.uniform(1, 10, (4, 5)))
    c = 4.0

    def objective(g):
        return float(np.mean((g.scalar - c) ** 2))

    grad = fd_gradient_field(d, objective).scalar
    expect = 2 * (d.scalar - c) / d.scalar.size
    assert np.allclose(grad, expect, rtol=1e-6, atol=0)


def test_fd_gradient_zero_for_excluded_pixel():
    d = Grid.from_array(np.arange(1.0, 7.0).reshape(2, 3))
    keep = np.ones((2, 3), bool)
    keep[1, 2] = False

    def objective(g):
        return float(np.sum(g.scalar[keep] ** 2))

    assert abs(fd_gradient_field(d, objective).scalar[1, 2]) < 1e-9
    with pytest.raises(DomainError):
        fd_gradient_field(d, objective, 0.0)


@pytest.mark.parametrize("factor", [0.9, 0.93, 0.96, 0.98, 1.02, 1.04, 1.07, 1.1])
def test_objective_slope_points_toward_truth(pair, factor):
    target, sources = pair
    gt = target.depth
    cfg = LossConfig(lambda_s=0.0)

    def objective(f):
        return objective_terms(Grid(gt.scalar * f, gt.valid), target.image, sources, K, zeros(), cfg)["total"]

    delta = 1e-3 * factor
    slope = objective(factor + delta) - objective(factor - delta)
    assert np.sign(-slope) == np.sign(1.0 - factor)


@pytest.mark.parametrize("factor", [0.9, 1.1])
def test_per_pixel_gradient_mostly_toward_truth(pair, factor):
    target, sources = pair
    gt = target.depth
    d = Grid(gt.scalar * factor, gt.valid)
    grad = photometric_gradient(d, target.image, sources, K, zeros(), np.ones(gt.shape, bool), 1e-3,
                                LossConfig(lambda_s=0.0))
    interior = np.zeros(gt.shape, bool)
    interior[4:-4, 8:-8] = True
    moving = interior & (np.abs(grad) > 1e-6)
    toward = np.sign(-grad[moving]) == np.sign(1.0 - factor)
    assert toward.mean() > 0.75


def test_lattice_gradient_matches_reference():
    small = CameraIntrinsics(16.0, 16.0, 7.5, 5.5, 16, 12)
    scene = SceneSpec(small, Background(6.0, 3, 1.0), camera_motion=RigidPose.from_translation([0.3, 0, 0]))
    t = render(scene, 1)
    sources = [(render(scene, 0).image, scene.relative_pose(1, 0))]
    rng = np.random.default_rng(1)
    d = Grid(t.depth.scalar * rng.uniform(0.95, 1.05, t.depth.shape), t.depth.valid)
    U = Grid.from_array(rng.uniform(0, 0.6, t.depth.shape))
    cfg = LossConfig(lambda_s=0.05)
    active = np.ones(d.shape, bool)
    fast = photometric_gradient(d, t.image, sources, small, U, active, 1e-4, cfg)

    # reference: the pixel-summed objective with the smoothness normaliser
    # frozen at d, as the lattice version does
    disp_mean = float((1.0 / d.scalar).mean())

    def objective(g):
        lup = reweighted_loss(photometric_map(g, t.image, sources, small), U, cfg.gamma)
        total = np.where(lup.valid, lup.scalar, 0.0).sum()
        total += cfg.lambda_s * smoothness_pixel_map(g, t.image, disp_mean).sum()
        return total

    ref = fd_gradient_field(d, objective, 1e-4).scalar
    assert np.allclose(fast, ref, rtol=1e-4, atol=1e-8)


def test_refine_from_truth_stays_put():
    # 16 m gives a whole-pixel disparity, so the warp reproduces the target exactly
    target, sources = plane_pair(depth=16.0)
    r = refine_depth(target.depth, target.image, sources, K, zeros(), DescentConfig(steps=5))
    totals = [rec["total"] for rec in r.trace]
    assert max(totals) - min(totals) < 1e-8
    assert np.abs(r.depth.scalar - target.depth.scalar).max() < 1e-6


def test_refine_recovers_scaled_plane(pair):
    target, sources = pair
    init = Grid(target.depth.scalar * 1.2, target.depth.valid)
    r = refine_depth(init, target.image, sources, K, zeros(), DescentConfig(steps=200, step_size=5.0),
                     LossConfig(lambda_s=0.03))
    assert not r.diverged
    assert evaluate(r.depth, target.depth).abs_rel < 0.02
    assert r.trace[-1]["total"] < r.trace[0]["total"]


def test_refine_never_moves_masked_pixels(pair):
    target, sources = pair
    u = np.zeros(target.depth.shape)
    u[:, :20] = 1.0
    u[5:9, 30:40] = 0.85
    init = Grid(target.depth.scalar * 1.1, target.depth.valid)
    r = refine_depth(init, target.image, sources, K, Grid.from_array(u), DescentConfig(steps=5, step_size=10.0))
    masked = u >= 0.8
    assert np.array_equal(r.depth.scalar[masked], init.scalar[masked])
    assert not np.array_equal(r.depth.scalar[~masked], init.scalar[~masked])
    assert r.trace[0]["active_pixels"] == int((~masked).sum())


def test_frozen_cost_volume_is_byte_identical(pair):
    target, sources = pair
    rng = np.random.default_rng(2)
    cv = CostVolume(rng.random((8, 16, 32)), np.full((8, 16), 32, np.uint8), 1.0, 80.0)
    before = cv.to_bytes()
    init = Grid(target.depth.scalar * 1.1, target.depth.valid)
    refine_depth(init, target.image, sources, K, zeros(), DescentConfig(steps=3), cost_volume=cv)
    assert cv.to_bytes() == before
    assert cv.costs.flags.writeable


def test_unfrozen_cost_volume_follows_refined_depth(pair):
    target, sources = pair
    hyp = sid_candidates(1, 80, 32)
    rng = np.random.default_rng(2)
    cv = CostVolume(rng.random((8, 16, 32)), np.full((8, 16), 32, np.uint8), 1.0, 80.0)
    before = cv.to_bytes()
    refine_depth(target.depth, target.image, sources, K, zeros(), DescentConfig(steps=1, freeze_cost_volume=False),
                 cost_volume=cv, hyp=hyp)
    assert cv.to_bytes() != before
    nearest = np.argmin(np.abs(np.log(hyp.values / 12.0)))
    assert np.mean(cv.costs.argmin(axis=2) == nearest) > 0.95


def test_divergence_is_reported_not_raised(pair, monkeypatch):
    target, sources = pair
    # a gradient that always points away from the truth makes the loss climb
    monkeypatch.setattr("probdepth.optimize.photometric_gradient",
                        lambda depth, *args, **kwargs: np.full(depth.shape, -0.1))
    r = refine_depth(target.depth, target.image, sources, K, zeros(), DescentConfig(steps=40))
    assert isinstance(r, RefineResult)
    assert r.diverged
    assert len(r.trace) < 41


def test_refine_rejects_non_positive_init(pair):
    target, sources = pair
    with pytest.raises(DomainError):
        refine_depth(Grid.from_array(np.zeros(target.depth.shape)), target.image, sources, K, zeros())


def test_objective_terms_and_trace_csv(pair, tmp_path):
    target, sources = pair
    cfg = LossConfig(lambda_s=0.5)
    terms = objective_terms(target.depth, target.image, sources, K, zeros(), cfg)
    assert terms["l_s"] == pytest.approx(smoothness_loss(target.depth, target.image))
    assert terms["total"] == pytest.approx(terms["l_up"] + 0.5 * terms["l_s"])
    r = refine_depth(target.depth, target.image, sources, K, zeros(), DescentConfig(steps=2))
    r.write_trace(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "step,total,l_up,l_s,active_pixels"
    assert len(lines) == 4
