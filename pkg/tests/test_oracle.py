import numpy as np
import pytest

from retrialpsa import ModelError, ModelSpec, ServiceLaw, Variant, build_generator, solve_ctmc, solve_stationary
from retrialpsa.oracle import solve_geometric_exact, xi_series

from conftest import FROZEN_BATCH_01, FROZEN_EN1_SINGLE_01, FROZEN_EN2_SINGLE, batch_exp, single_exp


def _state(caps, i, j, c):
    return (i * (caps[1] + 1) + j) * 2 + c


def test_generator_rows_and_rates():
    m = single_exp(0.1)
    caps = (10, 10)
    Q = build_generator(m, caps).Q
    assert np.allclose(np.asarray(Q.sum(axis=1)).ravel(), 0.0, atol=1e-12)
    # empty idle state: only arrivals leave
    assert -Q[_state(caps, 0, 0, 0), _state(caps, 0, 0, 0)] == pytest.approx(3.2)
    # one orbit nonempty: solo retrial rate
    assert Q[_state(caps, 3, 0, 0), _state(caps, 2, 0, 1)] == pytest.approx(8.0)
    # both nonempty: weighted rates
    assert Q[_state(caps, 3, 2, 0), _state(caps, 2, 2, 1)] == pytest.approx(0.1 * 8.0)
    assert Q[_state(caps, 3, 2, 0), _state(caps, 3, 1, 1)] == pytest.approx(0.9 * 10.0)


def test_cap_too_small():
    with pytest.raises(ModelError):
        build_generator(batch_exp(), (5, 5))


def test_rejects_general_service():
    m = ModelSpec(Variant.SINGLE_GENERAL, 8, 10, 0.1, ServiceLaw.deterministic(0.2), lam1=1, lam2=1)
    with pytest.raises(ModelError):
        build_generator(m, (10, 10))


def test_single_class_busy():
    m = ModelSpec(Variant.SINGLE_EXP, 8, 10, 0.3, ServiceLaw.exponential(5.0), lam1=3.0, lam2=0.0)
    sol = solve_stationary(build_generator(m, (200, 1)))
    assert sol.p_busy == pytest.approx(0.6, abs=1e-8)


def test_frozen_single_values():
    sol = solve_ctmc(single_exp(0.1), (300, 300))
    assert sol.residual < 1e-10
    assert abs(sol.p.sum() - 1) < 1e-12
    assert sol.trusted
    assert sol.EN2 == pytest.approx(FROZEN_EN2_SINGLE[0.1], rel=1e-10)
    assert sol.EN1 == pytest.approx(FROZEN_EN1_SINGLE_01, rel=1e-10)
    assert sol.p_busy == pytest.approx(0.64, abs=1e-9)


def test_geometric_solvers_agree():
    m = batch_exp(0.1)
    exact = solve_geometric_exact(m, (60, 60))
    enum = solve_stationary(build_generator(m, (60, 60)))
    assert exact.EN1 == pytest.approx(enum.EN1, rel=1e-5)
    assert exact.EN2 == pytest.approx(enum.EN2, rel=1e-5)
    big = solve_ctmc(m, (150, 150))
    assert (big.EN1, big.EN2) == pytest.approx(FROZEN_BATCH_01, rel=1e-9)
    assert big.p_busy == pytest.approx(0.4, abs=1e-9)


def test_cap_doubling():
    m = single_exp(0.1)
    a, b = solve_ctmc(m, (150, 150)), solve_ctmc(m, (300, 300))
    assert abs(a.EN1 - b.EN1) / b.EN1 < 1e-3
    assert abs(a.EN2 - b.EN2) / b.EN2 < 1e-3


def test_untrusted_flag():
    sol = solve_ctmc(single_exp(0.1), (20, 20))
    assert not sol.trusted and sol.boundary_mass > 1e-8


def test_xi_series_reproduces_solution():
    m = single_exp(0.0)
    e1, e2 = xi_series(m, (150, 150), 12)
    sol = solve_ctmc(m.with_xi(0.05), (150, 150))
    pw = 0.05 ** np.arange(13)
    assert pw @ e1 == pytest.approx(sol.EN1, rel=1e-10)
    assert pw @ e2 == pytest.approx(sol.EN2, rel=1e-10)


def test_pgf_normalized():
    sol = solve_ctmc(single_exp(0.1), (100, 100))
    assert sol.pgf(1.0, 1.0) == pytest.approx(1.0)
    assert sol.pgf(1.0, 1.0, server=1) == pytest.approx(sol.p_busy)
