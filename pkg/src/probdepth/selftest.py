"""Seeded property checks that run without a test framework.

Used by ``probdepth selftest``; each check returns ``(ok, detail)``.
"""

from __future__ import annotations

import numpy as np

from .costvolume import CostVolume, sid_candidates
from .geometry import CameraIntrinsics, RigidPose, backproject, project, rotation_from_axis_angle, warp_image
from .grid import Grid
from .metrics import evaluate, median_scale
from .pcvm import ProbabilityVolume, cost_to_probabilities, fuse_wgm, rescale_to_cost
from .photometric import central_difference_grad, nll_reprojection_loss


def _camera(rng) -> CameraIntrinsics:
    w, h = int(rng.integers(8, 64)), int(rng.integers(8, 64))
    return CameraIntrinsics(rng.uniform(20, 200), rng.uniform(20, 200), rng.uniform(0, w - 1), rng.uniform(0, h - 1),
                            w, h)


def check_round_trip(rng, cases: int = 100):
    worst = 0.0
    for _ in range(cases):
        K = _camera(rng)
        pix = rng.uniform([0, 0], [K.width - 1, K.height - 1], size=(50, 2))
        depth = rng.uniform(0.5, 80.0, size=50)
        coords, front = project(backproject(pix, depth, K), K)
        worst = max(worst, float(np.abs(coords - pix).max()))
        if not front.all():
            return False, "backprojected point behind the camera"
    return worst < 1e-9, f"max reprojection error {worst:.2e}"


def check_identity_warp(rng, cases: int = 100):
    worst = 0.0
    for _ in range(cases):
        K = _camera(rng)
        img = Grid.from_array(rng.random((K.height, K.width)))
        depth = Grid.from_array(rng.uniform(1.0, 50.0, (K.height, K.width)))
        warped = warp_image(img, depth, RigidPose.identity(), K)
        if not warped.valid.all():
            return False, "identity warp lost pixels"
        worst = max(worst, float(np.abs(warped.values - img.values).max()))
    return worst < 1e-9, f"max identity-warp error {worst:.2e}"


def check_sid(rng, cases: int = 50):
    worst = 0.0
    for _ in range(cases):
        d_min = rng.uniform(0.1, 10.0)
        d_max = d_min * rng.uniform(1.5, 100.0)
        hyp = sid_candidates(d_min, d_max, int(rng.integers(2, 256)))
        v = hyp.values
        ratios = v[1:] / v[:-1]
        worst = max(worst, abs(v[0] - d_min), abs(v[-1] - d_max), float(np.ptp(ratios)))
    return worst < 1e-12, f"max endpoint/ratio deviation {worst:.2e}"


def check_wgm(rng):
    k = 16
    a = rng.dirichlet(np.ones(k), size=(10, 10))
    b = rng.dirichlet(np.ones(k), size=(10, 10))
    pa = ProbabilityVolume(a, np.ones((10, 10), bool), True)
    pb = ProbabilityVolume(b, np.ones((10, 10), bool), True)
    u = rng.random((10, 10))
    ends = max(
        float(np.abs(fuse_wgm(pa, pb, Grid.from_array(np.zeros((10, 10)))).probs - b).max()),
        float(np.abs(fuse_wgm(pa, pb, Grid.from_array(np.ones((10, 10)))).probs - a).max()),
    )
    fused = fuse_wgm(pa, pb, Grid.from_array(u)).probs
    lin = float(np.abs(np.log(fused) - (u[..., None] * np.log(a) + (1 - u[..., None]) * np.log(b))).max())
    return ends < 1e-12 and lin < 1e-9, f"endpoint error {ends:.2e}, log-linearity error {lin:.2e}"


def check_rescale(rng, pixels: int = 1000):
    k = 24
    costs = rng.random((1, pixels, k))
    cv = CostVolume(costs, np.full((1, pixels), k, np.uint8), 1.0, 80.0)
    P = ProbabilityVolume(rng.random((1, pixels, k)), np.ones((1, pixels), bool))
    m = rescale_to_cost(P, cv)
    same_range = np.array_equal(m.costs.min(axis=2), costs.min(axis=2)) and np.array_equal(
        m.costs.max(axis=2), costs.max(axis=2))
    same_arg = np.array_equal(m.costs.argmin(axis=2), P.probs.argmax(axis=2))
    return same_range and same_arg, "min/max preserved and argmin == argmax" if same_range and same_arg else "mismatch"


def check_softmax(rng):
    costs = rng.normal(0, 5, size=(8, 8, 32))
    cv = CostVolume(costs, np.full((8, 8), 32, np.uint8), 1.0, 80.0)
    err = float(np.abs(cost_to_probabilities(cv).probs.sum(axis=2) - 1).max())
    two = cost_to_probabilities(CostVolume(np.array([[[0.0, np.log(2)]]]), np.full((1, 1), 2, np.uint8), 1.0, 2.0))
    err2 = float(np.abs(two.probs[0, 0] - [2 / 3, 1 / 3]).max())
    return err < 1e-9 and err2 < 1e-12, f"sum error {err:.2e}, two-candidate error {err2:.2e}"


def check_nll_stationary(rng, cases: int = 100):
    worst = 0.0
    for lp in rng.uniform(0.05, 1.0, cases):
        g = central_difference_grad(lambda v: nll_reprojection_loss(lp, v), lp**2, h=1e-7 * lp**2)
        worst = max(worst, abs(g))
    return worst < 1e-5, f"max gradient at the optimum {worst:.2e}"


def check_metrics(rng):
    gt = Grid.from_array(rng.uniform(1, 50, (16, 16)))
    m = evaluate(Grid.from_array(gt.scalar * 1.3), gt)
    ok = abs(m.abs_rel - 0.3) < 1e-9 and m.delta1 == 0 and m.delta2 == 1
    c = float(rng.uniform(0.1, 10))
    scaled, _ = median_scale(Grid.from_array(gt.scalar * c), gt)
    ok &= bool(np.allclose(scaled.scalar, gt.scalar, rtol=1e-12))
    return ok, f"abs_rel {m.abs_rel:.12f}, delta1 {m.delta1}, delta2 {m.delta2}"


def check_rotation(rng):
    R = rotation_from_axis_angle(rng.normal(size=3))
    err = float(np.abs(R @ R.T - np.eye(3)).max())
    return err < 1e-12, f"orthonormality error {err:.2e}"


CHECKS = [
    ("project/backproject round trip", check_round_trip),
    ("identity-pose warp", check_identity_warp),
    ("SID endpoints and log spacing", check_sid),
    ("weighted geometric mean algebra", check_wgm),
    ("probability-to-cost rescale", check_rescale),
    ("softmax of negated costs", check_softmax),
    ("log-likelihood stationarity", check_nll_stationary),
    ("depth metrics", check_metrics),
    ("axis-angle rotation", check_rotation),
]


def run_selftest(seed: int = 0, report=print) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, check in CHECKS:
        ok, detail = check(rng)
        all_ok &= bool(ok)
        report(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all_ok
