import numpy as np
import pytest

from retrialpsa import (BatchLaw, KernelBundle, ModelError, ModelSpec, NoConvergenceError, RootSolverConfig,
                        ServiceLaw, Variant, eval_kernel, solve_y0, y0_derivative_at_one)
from retrialpsa.kernel import (y0_derivative_closed_form, y0_derivative_method,
                               y0_derivative_numeric)

from conftest import ALL_VARIANTS, interior_points, single_exp

LEAD = {"single_exp": "G", "single_general": "Ut", "batch_exp": "U1", "batch_general": "U"}
NAMES = {"SINGLE_EXP": ["G", "G10", "G00"],
         "SINGLE_GENERAL": ["Ut", "Ut0", "St", "Tt0", "Tt1"],
         "BATCH_EXP": ["U1", "U0", "F0"],
         "BATCH_GENERAL": ["U", "G0", "S", "T0", "T1"]}


def g_displayed(m, z1, z2):
    """Single-arrival exponential lead kernel, transcribed independently."""
    lam, l1, l2, mu, s2 = m.arrival_rate, m.lam1, m.lam2, m.mu, m.mu2_star
    return z2 * (mu * s2 + (lam + s2) * (lam - l1 * z1)) - mu * s2 - l2 * (lam + s2) * z2 ** 2


def test_single_exp_lead_matches_transcription(rng):
    m = single_exp()
    b = KernelBundle(m)
    z1, z2 = interior_points(rng, 16)
    assert np.allclose(eval_kernel(b, "G", z1, z2), g_displayed(m, z1, z2), atol=1e-11)
    assert eval_kernel(b, "G", 0.5, 0.5) == pytest.approx(g_displayed(m, 0.5, 0.5), abs=1e-12)


def test_single_exp_zeros_at_one():
    b = KernelBundle(single_exp())
    assert abs(eval_kernel(b, "G", 1.0, 1.0)) < 1e-12
    assert abs(eval_kernel(b, "G10", 1.0, 1.0)) < 1e-12


@pytest.mark.parametrize("variant", sorted(ALL_VARIANTS))
def test_lead_kernel_finite_near_zero(variant):
    b = KernelBundle(ALL_VARIANTS[variant]())
    eps = RootSolverConfig().eps0
    for z2 in (0.3, -0.5j, 0.9):
        v1 = eval_kernel(b, LEAD[variant], eps, z2)
        v2 = eval_kernel(b, LEAD[variant], 2 * eps, z2)
        assert np.isfinite(eval_kernel(b, LEAD[variant], 0.0, z2))
        assert abs(v1 - v2) < 1e-4 * max(1.0, abs(v1))


@pytest.mark.parametrize("variant", sorted(ALL_VARIANTS))
def test_other_kernels_have_simple_pole(variant):
    # z1 * kernel has a finite limit, the kernel itself does not
    b = KernelBundle(ALL_VARIANTS[variant]())
    eps = RootSolverConfig().eps0
    for name in NAMES[b.model.variant.value]:
        if name == LEAD[variant]:
            continue
        r1 = eps * eval_kernel(b, name, eps, 0.3)
        r2 = 2 * eps * eval_kernel(b, name, 2 * eps, 0.3)
        assert abs(r1 - r2) < 1e-4 * max(1.0, abs(r1))
        assert not np.isfinite(eval_kernel(b, name, 0.0, 0.3))


def test_unknown_name():
    with pytest.raises(ModelError):
        eval_kernel(KernelBundle(single_exp()), "U", 0.5, 0.5)


@pytest.mark.parametrize("variant", sorted(ALL_VARIANTS))
def test_root_on_unit_circle(variant):
    b = KernelBundle(ALL_VARIANTS[variant]())
    z1 = np.exp(2j * np.pi * np.arange(64) / 64)
    y = solve_y0(b, z1)
    assert np.all(np.abs(y) <= 1 + 1e-8)
    assert np.max(np.abs(eval_kernel(b, LEAD[variant], z1, y))) < 1e-9
    assert abs(solve_y0(b, 1.0) - 1) < 1e-10


@pytest.mark.parametrize("variant", sorted(ALL_VARIANTS))
def test_root_continuous(variant):
    b = KernelBundle(ALL_VARIANTS[variant]())
    z1 = np.exp(2j * np.pi * np.arange(2000) / 2000)
    y = solve_y0(b, z1)
    step = np.abs(np.diff(y)) / np.abs(np.diff(z1))
    assert step.max() < 5.0
    x = np.linspace(0, 1, 200)
    yr = solve_y0(b, x)
    assert np.max(np.abs(np.diff(yr))) < 0.05


def test_root_matches_quadratic(rng):
    m = single_exp()
    b = KernelBundle(m)
    z1 = np.concatenate([[0.7], interior_points(rng, 20, 1.0)[0]])
    lam, l1, l2, mu, s2 = m.arrival_rate, m.lam1, m.lam2, m.mu, m.mu2_star
    for x in z1:
        # a z^2 + b z + c with the displayed coefficients
        roots = np.roots([-l2 * (lam + s2), mu * s2 + (lam + s2) * (lam - l1 * x), -mu * s2])
        small = roots[np.argmin(np.abs(roots))]
        assert abs(solve_y0(b, x) - small) < 1e-10


def test_derivative_single_exp():
    b = KernelBundle(single_exp())
    assert y0_derivative_at_one(b) == pytest.approx(13.2 / 20.96, abs=1e-12)
    assert y0_derivative_method(b) == "CLOSED_FORM"
    assert abs(y0_derivative_numeric(b) - 13.2 / 20.96) < 1e-6


def test_derivative_batch_general_matches_numeric():
    b = KernelBundle(ALL_VARIANTS["batch_general"]())
    assert abs(y0_derivative_closed_form(b) - y0_derivative_numeric(b)) < 1e-6


def test_derivative_numeric_tag():
    b = KernelBundle(ALL_VARIANTS["batch_exp"]())
    assert y0_derivative_method(b) == "NUMERIC"
    assert y0_derivative_at_one(b) == pytest.approx(y0_derivative_numeric(b))


def test_batch_general_single_jobs_match_single():
    law = BatchLaw.explicit({(1, 0): 1 / 3.2, (0, 1): 2.2 / 3.2})
    mb = ModelSpec(Variant.BATCH_GENERAL, 8.0, 10.0, 0.1, ServiceLaw.exponential(5.0), lam=3.2, batch=law)
    assert y0_derivative_at_one(KernelBundle(mb)) == pytest.approx(13.2 / 20.96, abs=1e-9)


def test_outside_disk_rejected():
    with pytest.raises(ValueError):
        solve_y0(KernelBundle(single_exp()), 1.5)


def test_no_convergence():
    cfg = RootSolverConfig(max_iter=1, fixed_point_fallback=False)
    with pytest.raises(NoConvergenceError):
        solve_y0(KernelBundle(single_exp()), np.array([0.3 + 0.4j, -0.9]), cfg)
