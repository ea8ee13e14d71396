import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from probdepth.costvolume import CostVolume, DepthHypotheses, sid_candidates
from probdepth.grid import ContractError, DomainError, Grid
from probdepth.pcvm import (GaussianDepth, ProbabilityVolume, cost_to_probabilities, expected_depth, fuse_wam,
                            fuse_wgm, gaussian_probabilities, rescale_to_cost)


def hyps(values):
    v = np.asarray(values, dtype=np.float64)
    return DepthHypotheses(float(v[0]), float(v[-1]), v)


def pv(probs, normalized=False):
    p = np.asarray(probs, dtype=np.float64)
    while p.ndim < 3:
        p = p[None]
    return ProbabilityVolume(p, np.ones(p.shape[:2], bool), normalized)


def ugrid(u, shape=(1, 1)):
    return Grid.from_array(np.full(shape, float(u)))


def volume(costs):
    c = np.asarray(costs, dtype=np.float64)
    while c.ndim < 3:
        c = c[None]
    return CostVolume(c, np.full(c.shape[:2], c.shape[2], np.uint8), 1.0, 80.0)


def gaussian(mean, var):
    return GaussianDepth(Grid.from_array(np.full((1, 1), mean)), Grid.from_array(np.full((1, 1), var)))


# gaussian_probabilities

def test_gaussian_worked_example():
    p = gaussian_probabilities(gaussian(10.0, 4.0), hyps([6, 8, 10, 12, 14]))
    assert p.normalized
    # exp(-[4, 1, 0, 1, 4] / 2) normalised
    assert np.allclose(p.probs[0, 0], [0.054489, 0.244201, 0.402620, 0.244201, 0.054489], atol=5e-6)


def test_gaussian_delta_and_flat_limits():
    hyp = sid_candidates(1, 80, 32)
    sharp = gaussian_probabilities(gaussian(hyp.values[7], 1e-8), hyp).probs[0, 0]
    assert sharp.argmax() == 7 and sharp[7] > 0.99
    flat = gaussian_probabilities(gaussian(40.0, 1e12), hyp).probs[0, 0]
    assert flat.max() / flat.min() < 1.01


def test_gaussian_rejects_non_positive_variance():
    with pytest.raises(DomainError):
        gaussian(5.0, 0.0)
    with pytest.raises(ContractError):
        GaussianDepth(Grid.from_array(np.ones((2, 2))), Grid.from_array(np.ones((2, 3))))


def test_gaussian_invalid_pixels_carry_no_mass():
    mean = Grid(np.full((1, 2), 5.0), np.array([[True, False]]))
    p = gaussian_probabilities(GaussianDepth(mean, Grid.from_array(np.ones((1, 2)))), sid_candidates(1, 80, 8))
    assert p.valid.tolist() == [[True, False]]
    assert np.all(p.probs[0, 1] == 0)


# cost_to_probabilities

def test_softmax_examples():
    assert np.allclose(cost_to_probabilities(volume([3.0] * 4)).probs, 0.25)
    two = cost_to_probabilities(volume([0.0, np.log(2)])).probs[0, 0]
    assert np.allclose(two, [2 / 3, 1 / 3], atol=1e-12)
    dec = cost_to_probabilities(volume([0.1, 0.5, 2.0, 9.0])).probs[0, 0]
    assert np.all(np.diff(dec) < 0)


def test_softmax_stable_for_large_costs():
    p = cost_to_probabilities(volume([1e4, 1e4 + np.log(2)])).probs[0, 0]
    assert np.allclose(p, [2 / 3, 1 / 3], atol=1e-12)


@given(arrays(np.float64, (3, 4, 6), elements=st.floats(-50, 50)))
def test_softmax_sums_to_one(costs):
    p = cost_to_probabilities(volume(costs))
    assert np.allclose(p.probs.sum(axis=2), 1.0, atol=1e-9)
    assert np.all(p.probs >= 0)


# fusion

def test_wgm_examples():
    a, b = [0.8, 0.2], [0.2, 0.8]
    assert np.allclose(fuse_wgm(pv(a), pv(b), ugrid(0.5)).probs[0, 0], [0.4, 0.4], atol=1e-12)
    assert np.array_equal(fuse_wgm(pv(a), pv(b), ugrid(0.0)).probs[0, 0], b)
    assert np.array_equal(fuse_wgm(pv(a), pv(b), ugrid(1.0)).probs[0, 0], a)
    assert not fuse_wgm(pv(a), pv(b), ugrid(0.5)).normalized


def test_wam_examples():
    a, b = [0.8, 0.2], [0.2, 0.8]
    assert np.allclose(fuse_wam(pv(a), pv(b), ugrid(0.5)).probs[0, 0], [0.5, 0.5])
    assert np.array_equal(fuse_wam(pv(a), pv(b), ugrid(0.0)).probs[0, 0], b)
    assert np.allclose(fuse_wam(pv([1.0, 0.0]), pv([0.0, 1.0]), ugrid(0.25)).probs[0, 0], [0.25, 0.75])
    assert fuse_wam(pv(a, True), pv(b, True), ugrid(0.3)).normalized
    assert not fuse_wam(pv(a, True), pv(b), ugrid(0.3)).normalized


@pytest.mark.parametrize("fuse", [fuse_wgm, fuse_wam])
def test_fusion_contracts(fuse):
    with pytest.raises(DomainError):
        fuse(pv([0.5, 0.5]), pv([0.5, 0.5]), ugrid(1.5))
    with pytest.raises(ContractError):
        fuse(pv([0.5, 0.5]), pv([0.3, 0.3, 0.4]), ugrid(0.5))
    with pytest.raises(ContractError):
        fuse(pv([0.5, 0.5]), pv([0.5, 0.5]), ugrid(0.5, (2, 2)))


dists = arrays(np.float64, (2, 3, 5), elements=st.floats(1e-6, 1.0))
weights = arrays(np.float64, (2, 3), elements=st.floats(0.0, 1.0))


@given(dists, dists, weights)
def test_wgm_log_linearity(a, b, u):
    fused = fuse_wgm(pv(a), pv(b), Grid.from_array(u)).probs
    expect = u[..., None] * np.log(a) + (1 - u[..., None]) * np.log(b)
    assert np.allclose(np.log(fused), expect, atol=1e-9, rtol=0)


@given(dists, dists)
def test_fusion_endpoints_exact(a, b):
    for fuse in (fuse_wgm, fuse_wam):
        assert np.abs(fuse(pv(a), pv(b), Grid.from_array(np.zeros((2, 3)))).probs - b).max() <= 1e-12
        assert np.abs(fuse(pv(a), pv(b), Grid.from_array(np.ones((2, 3)))).probs - a).max() <= 1e-12


@given(dists, dists, weights, st.floats(1e-3, 1e3))
def test_wgm_argmax_ignores_scale_of_single(a, b, u, c):
    U = Grid.from_array(u)
    base = fuse_wgm(pv(a), pv(b), U).probs
    scaled = fuse_wgm(pv(a * c), pv(b), U).probs
    # ties can only be broken differently if they already are near-ties
    gap = np.sort(base, axis=2)[..., -1] - np.sort(base, axis=2)[..., -2]
    clear = gap > 1e-9 * base.max(axis=2)
    assert np.array_equal(base.argmax(axis=2)[clear], scaled.argmax(axis=2)[clear])


@pytest.mark.parametrize("peak_single,peak_cv", [(3, 20), (25, 5), (10, 11)])
def test_wgm_follows_sharp_single_at_high_uncertainty(peak_single, peak_cv):
    hyp = sid_candidates(1, 80, 32)
    p_single = gaussian_probabilities(gaussian(hyp.values[peak_single], 1e-4), hyp)
    costs = np.abs(np.arange(32) - peak_cv) * 0.3
    p_cv = cost_to_probabilities(volume(costs))
    fused = fuse_wgm(p_single, p_cv, ugrid(0.9)).probs[0, 0]
    assert fused.argmax() == peak_single
    assert fuse_wgm(p_single, p_cv, ugrid(0.0)).probs[0, 0].argmax() == peak_cv


# rescale_to_cost

def test_rescale_worked_example():
    cv = volume([3.0, 2.0, 5.0])
    m = rescale_to_cost(pv([0.5, 0.3, 0.2]), cv)
    assert np.allclose(m.costs[0, 0], [2.0, 4.0, 5.0], atol=1e-12)


def test_rescale_flat_inputs_pass_through():
    cv = volume([[[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]]])
    m = rescale_to_cost(pv([[[0.2, 0.2, 0.2], [0.1, 0.5, 0.4]]]), cv)
    assert np.array_equal(m.costs, cv.costs)


@given(arrays(np.float64, (4, 4, 7), elements=st.floats(0, 1)), arrays(np.float64, (4, 4, 7), elements=st.floats(-5, 5)))
def test_rescale_range_and_inversion(p, c):
    cv = volume(c)
    m = rescale_to_cost(pv(p), cv)
    assert np.array_equal(m.costs.min(axis=2), c.min(axis=2))
    assert np.array_equal(m.costs.max(axis=2), c.max(axis=2))
    moving = (np.ptp(p, axis=2) > 0) & (np.ptp(c, axis=2) > 0)
    assert np.array_equal(m.costs.argmin(axis=2)[moving], p.argmax(axis=2)[moving])


def test_rescale_shape_mismatch():
    with pytest.raises(ContractError):
        rescale_to_cost(pv([0.5, 0.5]), volume([1.0, 2.0, 3.0]))


def test_rescale_invariant_to_probability_scale():
    rng = np.random.default_rng(3)
    p, c = rng.random((5, 5, 9)), rng.random((5, 5, 9))
    a = rescale_to_cost(pv(p), volume(c)).costs
    b = rescale_to_cost(pv(p * 37.0), volume(c)).costs
    assert np.allclose(a, b, atol=1e-12)


# expected_depth

def test_expected_depth_examples():
    hyp = hyps([2.0, 4.0])
    assert expected_depth(pv([0.75, 0.25]), hyp).scalar[0, 0] == pytest.approx(2.5)
    assert expected_depth(pv([3.0, 1.0]), hyp).scalar[0, 0] == pytest.approx(2.5)
    h5 = sid_candidates(1, 80, 5)
    assert expected_depth(pv(np.eye(5)[3]), h5).scalar[0, 0] == pytest.approx(h5.values[3])
    assert expected_depth(pv(np.ones(5)), h5).scalar[0, 0] == pytest.approx(h5.values.mean())


def test_expected_depth_zero_mass_invalid():
    d = expected_depth(pv([[[0.0, 0.0], [0.5, 0.5]]]), hyps([2.0, 4.0]))
    assert d.valid.tolist() == [[False, True]]
    with pytest.raises(ContractError):
        expected_depth(pv([0.5, 0.5]), sid_candidates(1, 80, 3))


# container

def test_probability_volume_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    p = ProbabilityVolume(rng.random((3, 4, 6)).astype(np.float32).astype(np.float64),
                          rng.random((3, 4)) > 0.3, True)
    p.save(tmp_path / "p.pdpv", sid_candidates(1, 80, 6))
    data = (tmp_path / "p.pdpv").read_bytes()
    assert data[:4] == b"PDPV"
    q = ProbabilityVolume.load(tmp_path / "p.pdpv")
    assert np.array_equal(q.probs, p.probs) and np.array_equal(q.valid, p.valid) and q.normalized


def test_probability_loader_rejects_cost_volume():
    with pytest.raises(ContractError):
        ProbabilityVolume.from_bytes(volume([1.0, 2.0]).to_bytes())


def test_normalize():
    p = pv([[[2.0, 6.0], [0.0, 0.0]]]).normalize()
    assert np.allclose(p.probs[0, 0], [0.25, 0.75])
    assert p.valid.tolist() == [[True, False]] and p.normalized
