import dataclasses
import math

import numpy as np
import pytest

from offsite_ucr.errors import InfeasibleError
from offsite_ucr.scenario import (Channel, Scenario, SystemConfig, UserConfig,
                                  dbm_per_hz_to_watt, generate_scenario, path_loss_gain,
                                  secrecy_feasibility)

from conftest import published_system


def test_path_loss_one_km():
    assert path_loss_gain(1.0, 0.0) == pytest.approx(10 ** -12.81, rel=1e-12)
    assert path_loss_gain(1.0, 0.0) == pytest.approx(1.549e-13, rel=1e-3)


def test_path_loss_hundred_metres():
    assert path_loss_gain(0.1, 0.0) == pytest.approx(10 ** -9.05, rel=1e-12)


def test_path_loss_ten_db_shadow_is_factor_ten():
    assert path_loss_gain(1.0, 10.0) == pytest.approx(path_loss_gain(1.0, 0.0) / 10, rel=1e-12)


def test_path_loss_decreases_with_distance():
    d = np.linspace(0.01, 2.0, 200)
    g = [path_loss_gain(x, 3.0) for x in d]
    assert np.all(np.diff(g) < 0)


@pytest.mark.parametrize("d", [0.0, -1.0])
def test_path_loss_rejects_non_positive_distance(d):
    with pytest.raises(ValueError):
        path_loss_gain(d)


def test_noise_conversion():
    assert dbm_per_hz_to_watt(-174) == pytest.approx(10 ** -20.4, rel=1e-12)


def test_same_seed_same_scenario():
    cfg = published_system(user_count=6)
    a = generate_scenario(cfg, UserConfig(), 42)
    b = generate_scenario(cfg, UserConfig(), 42)
    assert a == b
    assert np.array_equal(a.gain, b.gain) and np.array_equal(a.gain_eve, b.gain_eve)


def test_different_seeds_differ():
    cfg = published_system(user_count=3)
    a = generate_scenario(cfg, UserConfig(), 1)
    b = generate_scenario(cfg, UserConfig(), 2)
    assert not np.array_equal(a.gain, b.gain)


def test_zero_users_rejected():
    with pytest.raises(ValueError):
        SystemConfig(user_count=0)


def test_generated_users_are_secure_and_positive():
    sc = generate_scenario(published_system(user_count=20), UserConfig(), 7)
    assert all(secrecy_feasibility(sc))
    assert np.all(sc.gain > 0) and np.all(sc.gain_eve >= 0)
    d = sc.column("distance_to_server")
    assert np.all((d >= 0.05 - 1e-12) & (d <= 0.5 + 1e-12))


def test_bandwidth_total_is_split():
    sc = generate_scenario(published_system(user_count=4, bandwidth_total=8e6), UserConfig(), 0)
    assert np.allclose(sc.b_max, 2e6)


def test_no_resampling_keeps_insecure_users():
    # with resampling off some seed must produce an insecure user
    cfg = published_system(user_count=10)
    found = False
    for seed in range(50):
        sc = generate_scenario(cfg, UserConfig(), seed, resample_infeasible=False)
        if not all(secrecy_feasibility(sc)):
            found = True
            break
    assert found


def test_resampling_gives_up():
    # eavesdropper noise so low that no placement is ever secure
    cfg = published_system(user_count=1, noise_psd_eve=1e-40)
    with pytest.raises(InfeasibleError):
        generate_scenario(cfg, UserConfig(), 0, max_attempts=5)


def _one_user(g, g_e, **kw):
    return Scenario(published_system(user_count=1, **kw), [UserConfig()], [Channel(g, g_e)])


def test_feasibility_symmetric_channel_is_infeasible():
    assert secrecy_feasibility(_one_user(1e-10, 1e-10)) == [False]


def test_feasibility_no_eavesdropper():
    assert secrecy_feasibility(_one_user(1e-10, 0.0)) == [True]


def test_feasibility_tenfold_gain():
    assert secrecy_feasibility(_one_user(1e-10, 1e-11)) == [True]


def test_feasibility_uses_noise_ratio():
    # equal gains, but the eavesdropper is noisier
    assert secrecy_feasibility(_one_user(1e-10, 1e-10, noise_psd_eve=1e-19)) == [True]


def test_invalid_configs():
    with pytest.raises(ValueError):
        SystemConfig(cost_weight_time=0.7, cost_weight_energy=0.5)
    with pytest.raises(ValueError):
        SystemConfig(cycle_c2=1.0)
    with pytest.raises(ValueError):
        Scenario(published_system(user_count=1), [UserConfig(confidentiality_coeff=13)],
                 [Channel(1e-10, 0.0)])
    with pytest.raises(ValueError):
        Channel(0.0, 0.0)


def test_phi_max_from_confidentiality():
    u = UserConfig(confidentiality_coeff=6)
    assert u.phi_max(24) == pytest.approx(0.5)


def test_bits_per_layer_derived():
    s = SystemConfig()
    assert s.bits_per_layer is None
    assert s.layer_bits == pytest.approx(14e6 / 24 * 16)
    assert s.payload_bits_per_unit_phi == pytest.approx(14e6 * 16)


def test_scenario_is_immutable():
    sc = generate_scenario(published_system(user_count=2), UserConfig(), 0)
    with pytest.raises(dataclasses.FrozenInstanceError):
        sc.system = None
