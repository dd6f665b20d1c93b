import math

import numpy as np
import pytest

from offsite_ucr.config_io import default_config
from offsite_ucr.scenario import Channel, Scenario, SystemConfig, UserConfig, generate_scenario


def published_system(**kw) -> SystemConfig:
    """Default run configuration (published settings plus artifact choices)."""
    return default_config().with_values(**kw).system


def make_scenario(n=2, seed=0, user=None, **system_kw):
    cfg = default_config().with_values(user_count=n, **system_kw)
    return generate_scenario(cfg.system, user or cfg.user, seed)


def reference_metrics(scenario, b, p, phi, f, m):
    """Straight-line evaluation of every cost quantity, one scalar at a time.

    Written without numpy broadcasting or any helper from the package so that
    it can serve as an independent oracle for cost_model.evaluate.
    """
    s = scenario.system
    w = s.bits_per_layer
    if w is None:
        w = s.total_param_size / s.layer_count * s.bits_per_parameter
    Lw = s.layer_count * w
    times, energy, util = [], 0.0, 0.0
    for n, (u, c) in enumerate(zip(scenario.users, scenario.channels)):
        r_leg = b[n] * math.log2(1.0 + c.gain_to_server * p[n] / (s.noise_psd_server * b[n]))
        r_eve = b[n] * math.log2(1.0 + c.gain_to_eve * p[n] / (s.noise_psd_eve * b[n]))
        r_s = max(r_leg - r_eve, 0.0)
        cyc_u = s.cycle_c1 * phi[n] ** s.cycle_c2
        cyc_s = s.cycle_c3 * phi[n] ** (-s.cycle_c4)
        t_up = phi[n] * Lw / r_s
        t = cyc_u / f[n] + t_up + cyc_s / m[n]
        e = (u.user_capacitance * cyc_u * f[n] ** 2 + p[n] * t_up
             + s.server_capacitance * cyc_s * m[n] ** 2)
        times.append(t)
        energy += e
        util += s.utility_scale * math.log(1.0 + phi[n] + f[n] / u.freq_max
                                           + b[n] / u.bandwidth_max)
    delay = max(times)
    cost = s.cost_weight_time * delay + s.cost_weight_energy * energy
    return {"delay": delay, "energy": energy, "utility": util, "ucr": util / cost}


@pytest.fixture
def two_users():
    return make_scenario(2, seed=1)


@pytest.fixture
def five_users():
    return make_scenario(5, seed=1)


def symmetric_scenario(n=1, gain=1e-10, gain_eve=1e-12, **system_kw):
    system = published_system(user_count=n, **system_kw)
    users = [UserConfig() for _ in range(n)]
    return Scenario(system, users, [Channel(gain, gain_eve) for _ in range(n)])


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def random_allocation(scenario, rng):
    from offsite_ucr.cost_model import Allocation, extraction_floor
    n = scenario.n
    floor = np.array([extraction_floor(u, scenario.system) for u in scenario.users])
    m = rng.uniform(0.05, 1.0, n) * scenario.system.server_freq_max / n
    return Allocation(bandwidth=scenario.b_max * rng.uniform(0.1, 1.0, n),
                      power=scenario.p_max * rng.uniform(0.01, 1.0, n),
                      phi=rng.uniform(floor, scenario.phi_max),
                      freq_user=scenario.f_max * rng.uniform(0.01, 1.0, n),
                      freq_server=m)


def fd_secrecy_partials(b, p, g, g_e, noise, noise_eve, step=1e-6):
    """Central finite differences of the secrecy rate, evaluated at 50 digits.

    At high SNR the float64 difference r(x + h) - r(x - h) cancels most of
    its digits, so the differences are formed in mpmath instead.
    """
    import mpmath
    with mpmath.workdps(50):
        b, p, g, g_e = (mpmath.mpf(float(v)) for v in (b, p, g, g_e))
        n0, n1 = mpmath.mpf(float(noise)), mpmath.mpf(float(noise_eve))

        def r(bb, pp):
            leg = bb * mpmath.log(1 + g * pp / (n0 * bb), 2)
            eve = bb * mpmath.log(1 + g_e * pp / (n1 * bb), 2)
            return max(leg - eve, mpmath.mpf(0))

        hb, hp = b * step, p * step
        d_b = (r(b + hb, p) - r(b - hb, p)) / (2 * hb)
        d_p = (r(b, p + hp) - r(b, p - hp)) / (2 * hp)
        return float(d_b), float(d_p)
