import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from probdepth.grid import DomainError, Grid
from probdepth.uncertainty import (LossConfig, PhotometricTerms, binary_mask, consistency_loss, reweighted_loss,
                                   total_loss, uncertainty_map)


def g(x):
    return Grid.from_array(np.atleast_2d(np.asarray(x, dtype=np.float64)))


def test_uncertainty_examples():
    assert uncertainty_map(g([5.0]), g([5.0])).scalar[0, 0] == 0.0
    assert uncertainty_map(g([1.0]), g([2.0]), 0.6).scalar[0, 0] == pytest.approx(0.451188, abs=1e-6)
    assert uncertainty_map(g([0.0]), g([1000.0]), 0.6).scalar[0, 0] > 1 - 1e-15


def test_uncertainty_validity_and_domain():
    a = Grid(np.ones((1, 2)), np.array([[True, False]]))
    assert uncertainty_map(a, g([[1.0, 1.0]])).valid.tolist() == [[True, False]]
    with pytest.raises(DomainError):
        uncertainty_map(g([1.0]), g([2.0]), 0.0)


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0.01, 5))
def test_uncertainty_monotone_and_bounded(d1, d2, beta):
    lo, hi = sorted((d1, d2))
    u_lo = uncertainty_map(g([0.0]), g([lo]), beta).scalar[0, 0]
    u_hi = uncertainty_map(g([0.0]), g([hi]), beta).scalar[0, 0]
    assert 0.0 <= u_lo <= u_hi <= 1.0
    if 0 < hi and beta * hi < 30:
        assert 0.0 < u_hi < 1.0


def test_binary_mask_is_strict():
    assert binary_mask(g([[0.79, 0.8, 0.0, 1.0]]), 0.8).tolist() == [[True, False, True, False]]
    assert binary_mask(g([[0.999, 1.0]]), 1.0).tolist() == [[True, False]]
    with pytest.raises(DomainError):
        binary_mask(g([0.1]), 0.0)


def test_reweighted_examples():
    lp = g([[1.0, 1.0, 2.0]])
    out = reweighted_loss(lp, g([[0.5, 0.9, 0.0]]), 0.8).scalar
    assert out.tolist() == [[0.5, 0.0, 2.0]]


@given(arrays(np.float64, (4, 5), elements=st.floats(0, 10)), arrays(np.float64, (4, 5), elements=st.floats(0, 1)))
def test_reweighted_bounded_by_input(lp, u):
    out = reweighted_loss(g(lp), g(u)).scalar
    assert np.all(out <= lp)
    assert np.array_equal(out[u >= 0.8], np.zeros(np.sum(u >= 0.8)))
    assert np.array_equal(reweighted_loss(g(lp), g(np.zeros_like(u))).scalar, lp)


def test_consistency_examples():
    U_hi = g([0.9])
    assert consistency_loss(g([12.0]), g([10.0]), U_hi) == pytest.approx(0.2)
    assert consistency_loss(g([10.0]), g([10.0]), U_hi) == 0.0
    assert consistency_loss(g([12.0]), g([10.0]), g([0.5])) == 0.0


def test_total_loss_examples():
    zero = PhotometricTerms(0.0, 0.0)
    assert total_loss(zero, zero, 0.0, 0.0)[0] == 0.0
    assert total_loss(zero, zero, 1.0, 0.0)[0] == pytest.approx(0.3)
    one = PhotometricTerms(1.0, 0.0)
    total, parts = total_loss(one, one, 1.0, 1.0)
    assert total == pytest.approx(2.35)
    assert parts == pytest.approx({"multi": 1.0, "single": 1.0, "cv": 0.3, "consistency": 0.05})


def test_total_loss_reduces_grids_over_valid_pixels():
    lp = Grid(np.array([[1.0, 3.0, 100.0]]), np.array([[True, True, False]]))
    total, parts = total_loss(PhotometricTerms(lp, 10.0), PhotometricTerms(0.0), 0.0, 0.0)
    assert parts["multi"] == pytest.approx(2.0 + 0.003 * 10.0)


def test_total_loss_linear_in_coefficients():
    terms = PhotometricTerms(0.7, 0.2)
    base = total_loss(terms, terms, 0.9, 0.4, LossConfig(lambda2=0.3))[1]
    doubled = total_loss(terms, terms, 0.9, 0.4, LossConfig(lambda2=0.6))[1]
    assert doubled["cv"] == 2 * base["cv"]
    off = total_loss(terms, terms, 0.9, 0.4, LossConfig(use_consistency=False))[1]
    assert off["consistency"] == 0.0


@pytest.mark.parametrize("kwargs", [{"beta": 0}, {"gamma": 0}, {"gamma": 1.5}, {"lambda2": -1}])
def test_loss_config_validation(kwargs):
    with pytest.raises(DomainError):
        LossConfig(**kwargs)
