import numpy as np
import pytest

from retrialpsa import (CoefficientEvaluator, SingularSystemError, mean_series,
                        normalization_residual, pade_from_series, priority_pgf, truncated_mean)
from retrialpsa.metrics import SeriesMetrics
from retrialpsa.oracle import xi_series

from conftest import ALL_VARIANTS, FROZEN_EN2_SINGLE, single_exp


@pytest.fixture(scope="module")
def series_single():
    ev = CoefficientEvaluator(single_exp(0.0), 10)
    return ev, mean_series(ev, 1), mean_series(ev, 2)


def test_coefficients_match_chain_expansion(series_single):
    _, s1, s2 = series_single
    e1, e2 = xi_series(single_exp(0.0), (200, 200), 10)
    assert np.allclose(s1.coefficients, e1, rtol=1e-6)
    assert np.allclose(s2.coefficients, e2, rtol=1e-6)
    assert s2.extrapolation["imag_residue"] < 1e-8 * np.abs(s2.coefficients).max()


def test_step_independence():
    ev = CoefficientEvaluator(single_exp(0.0), 6)
    a = mean_series(ev, 2, h=1e-4).coefficients
    b = mean_series(ev, 2, h=5e-5).coefficients
    assert np.allclose(a, b, rtol=1e-4)


def test_base_coefficient_is_priority_mean():
    # general service: the unknown is the whole PGF, so the slope of the
    # direct priority solution gives the base coefficients independently
    m = ALL_VARIANTS["single_general"](0.0)
    ev = CoefficientEvaluator(m, 0)
    h = 1e-4
    t = h * np.arange(1, 4)
    stencil = np.array([-2.5, 4.0, -1.5]) / h
    d1 = -stencil @ priority_pgf(m, 1 - t, np.ones(3)).real
    dd = -stencil @ priority_pgf(m, 1 - t, 1 - t).real
    assert mean_series(ev, 1).coefficients[0] == pytest.approx(d1, rel=1e-5)
    assert mean_series(ev, 2).coefficients[0] == pytest.approx(dd - d1, rel=1e-5)


def test_truncated_against_frozen_oracle(series_single):
    _, _, s2 = series_single
    for xi, ref in FROZEN_EN2_SINGLE.items():
        assert abs(truncated_mean(s2, xi, 8).value - ref) / ref < 1e-4
    assert truncated_mean(s2, 0.0).value == s2.coefficients[0]


def test_truncation_converges(series_single):
    _, _, s2 = series_single
    ref = FROZEN_EN2_SINGLE[0.1]
    errs = [abs(truncated_mean(s2, 0.1, M).value - ref) for M in (2, 4, 8)]
    assert errs[0] > errs[1] > errs[2]


def test_large_xi_flagged(series_single):
    _, _, s2 = series_single
    assert truncated_mean(s2, 0.9, 4).last_term > 1.0


def test_pade_geometric():
    p = pade_from_series([1.0] * 6, 0, 1)
    assert np.allclose(p.denominator, [1, -1])
    assert p(0.5) == pytest.approx(2.0)
    assert p.defective  # the pole sits at xi = 1


def test_pade_n0_is_polynomial():
    c = [1.0, 2.0, 3.0]
    p = pade_from_series(c, 2, 0)
    assert p(0.3) == pytest.approx(1 + 0.6 + 0.27)


def test_pade_reexpansion(series_single):
    _, _, s2 = series_single
    p = pade_from_series(s2, 7, 2)
    assert np.allclose(p.taylor(10), s2.coefficients[:10], rtol=1e-8, atol=1e-8)


def test_pade_singular():
    with pytest.raises(SingularSystemError):
        pade_from_series([1.0, 0.0, 0.0, 0.0, 0.0], 1, 2)


def test_pade_defective_flag():
    # 1 / (1 - 2 xi) has its pole at 0.5
    p = pade_from_series([2.0 ** k for k in range(4)], 0, 1)
    assert p.defective


def test_pade_needs_enough_terms():
    with pytest.raises(ValueError):
        pade_from_series([1.0, 1.0], 1, 1)


@pytest.mark.parametrize("variant", sorted(ALL_VARIANTS))
def test_normalization_residual(variant):
    ev = CoefficientEvaluator(ALL_VARIANTS[variant](0.0), 8)
    assert normalization_residual(ev, 0.0) < 1e-10
    assert normalization_residual(ev, 0.05) < 1e-6
    assert np.isfinite(normalization_residual(ev, 0.5, 2))


def test_symmetric_total_constant():
    ev = CoefficientEvaluator(single_exp(0.0, mu1_star=9.0, mu2_star=9.0), 4)
    s1, s2 = mean_series(ev, 1), mean_series(ev, 2)
    total = s1.coefficients + s2.coefficients
    assert np.max(np.abs(total[1:])) < 1e-6 * total[0]


def test_means_nonnegative(series_single):
    _, s1, s2 = series_single
    for xi in np.linspace(0, 0.3, 7):
        assert truncated_mean(s1, xi).value >= 0
        assert truncated_mean(s2, xi).value >= 0


def test_bad_orbit_index(series_single):
    with pytest.raises(ValueError):
        mean_series(series_single[0], 3)
    assert isinstance(series_single[1], SeriesMetrics)
