"""Randomised property checks (hypothesis)."""

import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from offsite_ucr.cost_model import (RETENTION_LEVELS, evaluate, rate, secrecy_rate,
                                    select_retention)
from offsite_ucr.errors import InfeasibleError
from offsite_ucr.scenario import UserConfig
from offsite_ucr.solver import secrecy_rate_partials

from conftest import fd_secrecy_partials, make_scenario, published_system, random_allocation, reference_metrics, rel

pos = st.floats(min_value=1e-3, max_value=1e3)


@given(b=st.floats(1e3, 1e8), p=st.floats(1e-6, 10.0), g=st.floats(1e-14, 1e-8))
def test_symmetric_secrecy_is_zero(b, p, g):
    assert secrecy_rate(b, p, g, g, 4e-21, 4e-21) == 0.0


@given(b=st.floats(1e3, 1e8), p=st.floats(1e-6, 10.0), g=st.floats(1e-14, 1e-8),
       ratio=st.floats(0.0, 10.0))
def test_secrecy_rate_bounds(b, p, g, ratio):
    r_s = secrecy_rate(b, p, g, g * ratio, 4e-21, 4e-21)
    assert 0.0 <= r_s <= rate(b, p, g, 4e-21) * (1 + 1e-12)


@given(b=st.floats(1e4, 1e7), p=st.floats(1e-4, 1.0), g=st.floats(1e-13, 1e-9),
       ratio=st.floats(1e-3, 0.9))
def test_partials_match_finite_differences(b, p, g, ratio):
    ge, nz = g * ratio, 4e-21
    d_b, d_p = secrecy_rate_partials(b, p, g, ge, nz, nz)
    fd_b, fd_p = fd_secrecy_partials(b, p, g, ge, nz, nz)
    assert rel(d_b, fd_b) <= 1e-5
    assert rel(d_p, fd_p) <= 1e-5


@given(phi=st.floats(1e-4, 1.0), e_min=st.floats(0.05, 3.0), loss=st.floats(0.01, 2.0))
def test_retention_always_on_ladder(phi, e_min, loss):
    user = UserConfig(efficiency_min=e_min, loss_max=loss)
    try:
        choice = select_retention(phi, user, published_system())
    except InfeasibleError:
        return
    assert choice.retention_rate in RETENTION_LEVELS
    assert math.log1p(phi / choice.retention_rate) >= e_min * (1 - 1e-9)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
def test_evaluate_matches_reference(seed, n):
    sc = make_scenario(n, seed=seed % 1000)
    a = random_allocation(sc, np.random.default_rng(seed))
    bd = evaluate(sc, a, check=False)
    ref = reference_metrics(sc, a.bandwidth, a.power, a.phi, a.freq_user, a.freq_server)
    assert rel(bd.ucr, ref["ucr"]) <= 1e-12
    assert rel(bd.total_energy, ref["energy"]) <= 1e-12
    assert rel(bd.system_delay, ref["delay"]) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 999), scale=st.floats(0.1, 10.0))
def test_utility_scale_is_linear(seed, scale):
    base = make_scenario(2, seed=seed)
    scaled = make_scenario(2, seed=seed, utility_scale=base.system.utility_scale * scale)
    a = random_allocation(base, np.random.default_rng(seed))
    assert rel(evaluate(scaled, a, check=False).ucr,
               scale * evaluate(base, a, check=False).ucr) <= 1e-12
