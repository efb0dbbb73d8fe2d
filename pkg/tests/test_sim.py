import numpy as np
import pytest

from retrialpsa import ModelSpec, ServiceLaw, SimConfig, Variant, simulate, sweep_simulate

from conftest import FROZEN_BATCH_01, FROZEN_EN2_SINGLE, batch_exp, batch_general, single_exp

FAST = SimConfig(seed=7, warmup=20_000, events=400_000, replications=2, batches=10)


def test_reproducible():
    a = simulate(single_exp(), FAST)
    b = simulate(single_exp(), FAST)
    assert a == b


def test_different_seeds_differ():
    a = simulate(single_exp(), FAST)
    b = simulate(single_exp(), SimConfig(seed=8, warmup=20_000, events=400_000, replications=2, batches=10))
    assert a.EN1 != b.EN1


def test_single_class_busy():
    m = ModelSpec(Variant.SINGLE_EXP, 8, 10, 0.1, ServiceLaw.exponential(5.0), lam1=3.0, lam2=0.0)
    r = simulate(m, FAST)
    assert abs(r.p_busy - 0.6) <= 3 * r.ci_busy
    assert r.EN2 == 0.0


def test_single_exp_against_oracle():
    r = simulate(single_exp(0.1), SimConfig(seed=11, events=2_000_000, replications=4))
    assert abs(r.EN2 - FROZEN_EN2_SINGLE[0.1]) <= 1.5 * r.ci2


def test_batch_against_oracle():
    r = simulate(batch_exp(0.1), SimConfig(seed=3, events=1_000_000))
    assert abs(r.EN1 - FROZEN_BATCH_01[0]) <= 1.5 * r.ci1
    assert abs(r.EN2 - FROZEN_BATCH_01[1]) <= 1.5 * r.ci2


@pytest.mark.parametrize("make", [single_exp, batch_exp, batch_general])
def test_busy_equals_offered_load(make):
    m = make(0.1)
    r = simulate(m, FAST)
    load = m.arrival_rate * sum(m.gbar) * m.bbar
    assert abs(r.p_busy - load) <= 3 * r.ci_busy
    assert r.ci1 > 0 and r.ci2 > 0 and 0 <= r.p_busy <= 1


def test_ledger_and_retrials():
    r = simulate(batch_exp(0.1), SimConfig(seed=5, warmup=1000, events=100_000, debug=True))
    assert r.diagnostics["ledger_balanced"]
    assert r.diagnostics["empty_orbit_retrials"] == 0


def test_watchdog():
    r = simulate(single_exp(0.1, lam2=6.0), SimConfig(seed=1, warmup=0, events=2_000_000, watchdog=500))
    assert r.diverged and np.isnan(r.EN1)
    assert "watchdog" in r.diagnostics["reason"]


def test_sweep():
    grid = [0.5, 1.0, 1.6, 2.2]
    out = sweep_simulate(single_exp(0.1), "lam2", grid, FAST)
    assert len(out) == 4
    single = simulate(single_exp(0.1).with_(lam2=0.5), FAST)
    assert out[0] == single
    en2 = [r.EN2 for r in out]
    ci = [r.ci2 for r in out]
    for k in range(3):
        assert en2[k + 1] + ci[k + 1] >= en2[k] - ci[k]


def test_sweep_collects_errors():
    out = sweep_simulate(single_exp(0.1), "xi", [0.1, 2.0], FAST)
    assert not isinstance(out[0], Exception)
    assert isinstance(out[1], Exception)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(events=0)
