"""Closed-form rates, times, energies, utility and the UCR of an allocation.

Everything here is a pure function of its inputs.  Array inputs broadcast
through the numpy ufuncs; scalar inputs give scalars back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConstraintViolation, InfeasibleError, TransmissionFailure
from .scenario import RETENTION_LEVELS, Channel, Scenario, SystemConfig, UserConfig

LN2 = math.log(2.0)
# relative slack accepted when checking constraints of a returned allocation
FEASIBILITY_RTOL = 1e-9


@dataclass
class Allocation:
    bandwidth: np.ndarray
    power: np.ndarray
    phi: np.ndarray
    freq_user: np.ndarray
    freq_server: np.ndarray
    delay_bound: float = math.nan

    def __post_init__(self):
        names = ("bandwidth", "power", "phi", "freq_user", "freq_server")
        for name in names:
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        shapes = {getattr(self, name).shape for name in names}
        if len(shapes) != 1 or len(next(iter(shapes))) != 1:
            raise ValueError(f"allocation vectors must be 1-D of equal length, got {shapes}")

    @property
    def n(self) -> int:
        return len(self.phi)

    def copy(self, **changes) -> "Allocation":
        fields = dict(bandwidth=self.bandwidth.copy(), power=self.power.copy(),
                      phi=self.phi.copy(), freq_user=self.freq_user.copy(),
                      freq_server=self.freq_server.copy(), delay_bound=self.delay_bound)
        fields.update(changes)
        return Allocation(**fields)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.bandwidth, self.power, self.phi,
                               self.freq_user, self.freq_server])


@dataclass(frozen=True)
class EmulatorChoice:
    retention_rate: float
    lower_bound: float
    upper_bound: float


@dataclass
class CostBreakdown:
    t_compute_user: np.ndarray
    t_uplink: np.ndarray
    t_compute_server: np.ndarray
    e_compute_user: np.ndarray
    e_uplink: np.ndarray
    e_compute_server: np.ndarray
    secrecy_rate: np.ndarray
    utility: np.ndarray
    system_delay: float
    total_energy: float
    total_cost: float
    system_utility: float
    ucr: float

    @property
    def t_total(self) -> np.ndarray:
        return self.t_compute_user + self.t_uplink + self.t_compute_server

    @property
    def e_total(self) -> np.ndarray:
        return self.e_compute_user + self.e_uplink + self.e_compute_server


def _positive(name, value):
    if np.any(np.asarray(value) <= 0):
        raise ValueError(f"{name} must be positive, got {value}")


def cycles_user(phi, c1: float, c2: float):
    """GPU cycles for local adapter tuning, C1 * phi**C2."""
    _positive("phi", phi)
    return c1 * np.power(phi, c2)


def cycles_server(phi, c3: float, c4: float):
    """GPU cycles for integrating the returned adapter, C3 * phi**-C4."""
    _positive("phi", phi)
    return c3 * np.power(phi, -c4)


def rate(b, p, g, noise_psd):
    """Shannon rate b log2(1 + g p / (noise_psd b)) in bit/s."""
    _positive("bandwidth", b)
    return b * np.log1p(g * p / (noise_psd * b)) / LN2


def secrecy_rate(b, p, g, g_e, noise_psd, noise_psd_eve):
    """Legitimate rate minus eavesdropper rate, clamped at zero."""
    diff = rate(b, p, g, noise_psd) - rate(b, p, g_e, noise_psd_eve)
    return np.maximum(diff, 0.0)


def uplink_time_energy(b, p, phi, system: SystemConfig, channel: Channel):
    """Time and energy to send ``phi * L * w`` adapter bits over the secure link."""
    r_s = secrecy_rate(b, p, channel.gain_to_server, channel.gain_to_eve,
                       system.noise_psd_server, system.noise_psd_eve)
    if np.any(r_s <= 0):
        raise TransmissionFailure("secrecy rate is zero; transmission fails")
    t = phi * system.payload_bits_per_unit_phi / r_s
    return t, p * t


def compute_time_energy_user(f, phi, k, system: SystemConfig):
    _positive("freq_user", f)
    cycles = cycles_user(phi, system.cycle_c1, system.cycle_c2)
    return cycles / f, k * cycles * f * f


def compute_time_energy_server(f, phi, k, system: SystemConfig):
    _positive("freq_server", f)
    cycles = cycles_server(phi, system.cycle_c3, system.cycle_c4)
    return cycles / f, k * cycles * f * f


def utility_user(b, phi, f, user: UserConfig, scale: float = 1.0):
    """Service score scale * ln(1 + phi + f/f_max + b/b_max)."""
    return scale * np.log(1.0 + phi + f / user.freq_max + b / user.bandwidth_max)


def efficiency_G(phi, chi):
    """Fine-tuning efficiency ln(1 + phi/chi) of an adapter/emulator pair."""
    _positive("phi", phi)
    _positive("retention rate", chi)
    return np.log1p(np.asarray(phi) / chi)


def mse_loss_surrogate(chi, scale: float = 1.0, exponent: float = 2.0):
    """Emulator distortion stand-in: scale * (1 - chi)**exponent on (0, 1]."""
    chi_arr = np.asarray(chi)
    if np.any(chi_arr <= 0) or np.any(chi_arr > 1):
        raise ValueError(f"retention rate must lie in (0, 1], got {chi}")
    return scale * np.power(1.0 - chi_arr, exponent)


def retention_lower_bound(user: UserConfig, system: SystemConfig) -> float:
    """Smallest retention rate meeting the loss budget."""
    ratio = user.loss_max / system.mse_scale
    if ratio >= 1.0:
        return 0.0
    return 1.0 - ratio ** (1.0 / system.mse_exponent)


def retention_upper_bound(phi: float, efficiency_min: float) -> float:
    """Largest retention rate keeping ln(1 + phi/chi) >= efficiency_min."""
    return phi / math.expm1(efficiency_min)


def round_retention(value: float, levels: Sequence[float] = RETENTION_LEVELS) -> float:
    """Nearest retention level; exact midpoints go to the upper level."""
    dist = [abs(level - value) for level in levels]
    best = min(dist)
    return max(level for level, d in zip(levels, dist) if d <= best + 1e-12)


def snap_retention_up(value: float, levels: Sequence[float] = RETENTION_LEVELS) -> float:
    candidates = [level for level in levels if level >= value - 1e-12]
    if not candidates:
        raise InfeasibleError(f"no retention level reaches {value:.6g}")
    return min(candidates)


def select_retention(phi: float, user: UserConfig, system: SystemConfig) -> EmulatorChoice:
    """Pick the emulator retention level for extraction rate ``phi``.

    The continuous choice is min(lower, upper), rounded to the nearest level.
    If rounding lands outside [lower, upper] the closest level inside the
    interval is used instead; no level inside means the user is infeasible.
    """
    if not 0 < phi:
        raise ValueError(f"phi must be positive, got {phi}")
    lower = retention_lower_bound(user, system)
    upper = retention_upper_bound(phi, user.efficiency_min)
    target = min(lower, upper)
    chosen = round_retention(target)
    allowed = [c for c in RETENTION_LEVELS if lower - 1e-12 <= c <= upper * (1 + 1e-12)]
    if chosen not in allowed:
        if not allowed:
            raise InfeasibleError(
                f"no retention level in [{lower:.6g}, {upper:.6g}] for phi={phi:.6g}")
        chosen = round_retention(target, allowed)
    return EmulatorChoice(chosen, lower, upper)


def phi_min(chi_lower: float, efficiency_min: float, phi_max: Optional[float] = None) -> float:
    """Extraction rate at which ln(1 + phi/chi_lower) equals efficiency_min."""
    if not chi_lower > 0:
        raise ValueError(f"chi_lower must be positive, got {chi_lower}")
    value = chi_lower * math.expm1(efficiency_min)
    if phi_max is not None and value > phi_max:
        raise InfeasibleError(f"phi_min {value:.6g} exceeds phi_max {phi_max:.6g}")
    return value


def extraction_floor(user: UserConfig, system: SystemConfig) -> float:
    """Lower bound on phi that keeps some retention level admissible.

    Uses the smallest retention level satisfying the loss budget, so that the
    level later chosen for the emulator also meets the efficiency floor.
    """
    chi = snap_retention_up(retention_lower_bound(user, system))
    return phi_min(chi, user.efficiency_min, user.phi_max(system.layer_count))


def _secrecy_rates(scenario: Scenario, b, p):
    s = scenario.system
    return secrecy_rate(b, p, scenario.gain, scenario.gain_eve,
                        s.noise_psd_server, s.noise_psd_eve)


def constraint_violations(scenario: Scenario, alloc: Allocation,
                          retention: Optional[Sequence[EmulatorChoice]] = None,
                          rtol: float = FEASIBILITY_RTOL) -> list:
    """Human-readable list of broken constraints (empty when feasible)."""
    out = []

    def check(mask, label):
        for n in np.flatnonzero(mask):
            out.append(f"user {n}: {label}")

    check(~(alloc.bandwidth > 0), "bandwidth must be positive")
    check(alloc.bandwidth > scenario.b_max * (1 + rtol), "bandwidth above b_max")
    check(alloc.power < 0, "power negative")
    check(alloc.power > scenario.p_max * (1 + rtol), "power above p_max")
    check(~(alloc.phi > 0), "extraction rate must be positive")
    check(alloc.phi > scenario.phi_max * (1 + rtol), "extraction rate above phi_max")
    check(~(alloc.freq_user > 0), "user frequency must be positive")
    check(alloc.freq_user > scenario.f_max * (1 + rtol), "user frequency above f_max")
    check(~(alloc.freq_server > 0), "server frequency must be positive")
    f_total = scenario.system.server_freq_max
    if alloc.freq_server.sum() > f_total * (1 + rtol):
        out.append(f"server frequencies sum {alloc.freq_server.sum():.6g} above {f_total:.6g}")
    if retention is not None:
        for n, (choice, user) in enumerate(zip(retention, scenario.users)):
            chi = choice.retention_rate
            if not any(abs(chi - level) < 1e-12 for level in RETENTION_LEVELS):
                out.append(f"user {n}: retention {chi} not an allowed level")
                continue
            eff = float(efficiency_G(alloc.phi[n], chi))
            if eff < user.efficiency_min * (1 - rtol):
                out.append(f"user {n}: efficiency {eff:.6g} below {user.efficiency_min:.6g}")
            loss = float(mse_loss_surrogate(chi, scenario.system.mse_scale,
                                            scenario.system.mse_exponent))
            if loss > user.loss_max * (1 + rtol):
                out.append(f"user {n}: emulator loss {loss:.6g} above {user.loss_max:.6g}")
    return out


def evaluate(scenario: Scenario, alloc: Allocation, *, check: bool = True,
             retention: Optional[Sequence[EmulatorChoice]] = None) -> CostBreakdown:
    """Assemble all per-user and system metrics of ``alloc``."""
    if check:
        violations = constraint_violations(scenario, alloc, retention)
        if violations:
            raise ConstraintViolation(violations)
    s = scenario.system
    b, p, phi = alloc.bandwidth, alloc.power, alloc.phi
    f_do, f_mo = alloc.freq_user, alloc.freq_server

    r_s = _secrecy_rates(scenario, b, p)
    failed = np.flatnonzero(r_s <= 0)
    if failed.size:
        raise TransmissionFailure(
            f"zero secrecy rate for user(s) {failed.tolist()}; transmission fails",
            users=failed.tolist())

    c_user = cycles_user(phi, s.cycle_c1, s.cycle_c2)
    c_server = cycles_server(phi, s.cycle_c3, s.cycle_c4)
    t_cu = c_user / f_do
    e_cu = scenario.k_user * c_user * f_do ** 2
    t_up = phi * s.payload_bits_per_unit_phi / r_s
    e_up = p * t_up
    t_cs = c_server / f_mo
    e_cs = s.server_capacitance * c_server * f_mo ** 2
    util = s.utility_scale * np.log(1.0 + phi + f_do / scenario.f_max + b / scenario.b_max)

    delay = float(np.max(t_cu + t_up + t_cs))
    energy = float(e_cu.sum() + e_up.sum() + e_cs.sum())
    cost = s.cost_weight_time * delay + s.cost_weight_energy * energy
    total_util = float(util.sum())
    return CostBreakdown(
        t_compute_user=t_cu, t_uplink=t_up, t_compute_server=t_cs,
        e_compute_user=e_cu, e_uplink=e_up, e_compute_server=e_cs,
        secrecy_rate=r_s, utility=util, system_delay=delay, total_energy=energy,
        total_cost=cost, system_utility=total_util, ucr=total_util / cost)


def user_times(scenario: Scenario, alloc: Allocation) -> np.ndarray:
    """Per-user completion times (compute + uplink + server)."""
    return evaluate(scenario, alloc, check=False).t_total
