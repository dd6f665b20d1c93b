"""Reference allocators and a brute-force grid oracle."""

from __future__ import annotations

import enum
from typing import Mapping, Optional

import numpy as np

from .cost_model import Allocation, evaluate, extraction_floor, secrecy_rate
from .errors import TransmissionFailure
from .scenario import Scenario, secrecy_feasibility
from .solver import SolveResult, SolverOptions, dinkelbach_solve


class BaselineKind(str, enum.Enum):
    average_allocation = "average_allocation"
    comm_only = "comm_only"
    freq_only = "freq_only"
    grid_oracle = "grid_oracle"

    def __str__(self):
        return self.value


AVERAGE_PHI = 0.5
# cap on the number of joint grid points scored by grid_oracle
GRID_LIMIT = 2 ** 26


def _phi_floor(scenario: Scenario) -> np.ndarray:
    return np.array([extraction_floor(u, scenario.system) for u in scenario.users])


def average_phi(scenario: Scenario) -> np.ndarray:
    """phi = 0.5 clamped into [phi_floor, phi_max] per user."""
    return np.clip(AVERAGE_PHI, _phi_floor(scenario), scenario.phi_max)


def average_allocation(scenario: Scenario) -> Allocation:
    """Every limit at its maximum, the server split evenly, phi = 0.5."""
    bad = [i for i, ok in enumerate(secrecy_feasibility(scenario)) if not ok]
    if bad:
        raise TransmissionFailure(f"user(s) {bad} have zero secrecy rate", users=bad)
    n = scenario.n
    alloc = Allocation(bandwidth=scenario.b_max.copy(), power=scenario.p_max.copy(),
                       phi=average_phi(scenario), freq_user=scenario.f_max.copy(),
                       freq_server=np.full(n, scenario.system.server_freq_max / n))
    alloc.delay_bound = evaluate(scenario, alloc).system_delay
    return alloc


def comm_only(scenario: Scenario, options: Optional[SolverOptions] = None) -> SolveResult:
    """Optimise b, p and phi with both frequencies frozen at the average point."""
    return dinkelbach_solve(scenario, options, mode="comm_only",
                            initial=average_allocation(scenario))


def freq_only(scenario: Scenario, options: Optional[SolverOptions] = None) -> SolveResult:
    """Optimise the user and server frequencies; b, p and phi stay at the average point."""
    return dinkelbach_solve(scenario, options, mode="freq_only",
                            initial=average_allocation(scenario))


def grid_axes(scenario: Scenario, points: int) -> dict:
    """Default per-user axes: log-spaced p, f and m, linear phi over its range."""
    n = scenario.n
    F = scenario.system.server_freq_max
    floor = _phi_floor(scenario)
    return {
        "power": [np.geomspace(scenario.p_max[i] * 1e-2, scenario.p_max[i], points)
                  for i in range(n)],
        "phi": [np.linspace(floor[i], scenario.phi_max[i], points) for i in range(n)],
        "freq_user": [np.geomspace(scenario.f_max[i] * 1e-2, scenario.f_max[i], points)
                      for i in range(n)],
        "freq_server": [np.geomspace(F * 1e-3, F, points) for _ in range(n)],
    }


def _user_table(scenario: Scenario, i: int, axes: Mapping):
    s = scenario.system
    p, phi, f, m = np.meshgrid(np.asarray(axes["power"][i], float),
                               np.asarray(axes["phi"][i], float),
                               np.asarray(axes["freq_user"][i], float),
                               np.asarray(axes["freq_server"][i], float), indexing="ij")
    p, phi, f, m = (a.ravel() for a in (p, phi, f, m))
    b = scenario.b_max[i]
    r_s = secrecy_rate(b, p, scenario.gain[i], scenario.gain_eve[i],
                       s.noise_psd_server, s.noise_psd_eve)
    cu = s.cycle_c1 * phi ** s.cycle_c2
    cs = s.cycle_c3 * phi ** (-s.cycle_c4)
    bits = phi * s.payload_bits_per_unit_phi
    with np.errstate(divide="ignore"):
        t = cu / f + bits / r_s + cs / m
    e = (scenario.k_user[i] * cu * f ** 2 + p * bits / r_s
         + s.server_capacitance * cs * m ** 2)
    u = s.utility_scale * np.log(1.0 + phi + f / scenario.f_max[i] + 1.0)
    ok = r_s > 0
    return np.stack([p, phi, f, m])[:, ok], u[ok], e[ok], t[ok]


def grid_oracle(scenario: Scenario, grid_points_per_axis: int = 8,
                axes: Optional[Mapping] = None):
    """Exhaustive UCR search over per-user tensor grids of (p, phi, f, m).

    Bandwidth is fixed at b_max.  ``axes`` may supply explicit per-user value
    lists under the keys power, phi, freq_user and freq_server.  Returns the
    best allocation and its UCR.
    """
    n = scenario.n
    if n > 3:
        raise ValueError(f"grid_oracle supports at most 3 users, got {n}")
    if grid_points_per_axis < 1:
        raise ValueError("grid_points_per_axis must be positive")
    axes = dict(axes) if axes is not None else grid_axes(scenario, grid_points_per_axis)
    s = scenario.system
    tables = [_user_table(scenario, i, axes) for i in range(n)]
    sizes = [len(tab[1]) for tab in tables]
    if int(np.prod(sizes, dtype=float)) > GRID_LIMIT:
        raise ValueError(f"grid of {np.prod(sizes, dtype=float):.3g} points is too large; "
                         "use fewer points per axis")
    if min(sizes) == 0:
        raise TransmissionFailure("no grid point has a positive secrecy rate")
    F = s.server_freq_max * (1 + 1e-12)
    ct, ce = s.cost_weight_time, s.cost_weight_energy

    # fold users one at a time into (utility, energy, time, server load) tables,
    # keeping the index of every partial combination
    util, energy, delay, load = (tables[0][1], tables[0][2], tables[0][3],
                                 tables[0][0][3])
    index = np.arange(sizes[0])[:, None]
    for i in range(1, n):
        _, u_i, e_i, t_i = tables[i]
        m_i = tables[i][0][3]
        util = (util[:, None] + u_i[None, :]).ravel()
        energy = (energy[:, None] + e_i[None, :]).ravel()
        delay = np.maximum(delay[:, None], t_i[None, :]).ravel()
        load = (load[:, None] + m_i[None, :]).ravel()
        index = np.concatenate([np.repeat(index, sizes[i], axis=0),
                                np.tile(np.arange(sizes[i]), len(index))[:, None]], axis=1)
        keep = load <= F
        util, energy, delay, load, index = (util[keep], energy[keep], delay[keep],
                                            load[keep], index[keep])
    if len(util) == 0:
        raise ValueError("no grid point satisfies the server capacity")
    ucr = util / (ct * delay + ce * energy)
    best = int(np.argmax(ucr))
    cols = np.array([tables[i][0][:, index[best, i]] for i in range(n)])
    alloc = Allocation(bandwidth=scenario.b_max.copy(), power=cols[:, 0], phi=cols[:, 1],
                       freq_user=cols[:, 2], freq_server=cols[:, 3])
    bd = evaluate(scenario, alloc)
    alloc.delay_bound = bd.system_delay
    return alloc, bd.ucr
