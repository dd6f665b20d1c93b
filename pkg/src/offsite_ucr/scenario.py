"""Problem instances: system constants, per-user limits and channel gains."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleError

NOISE_PSD_DBM_HZ = -174.0
RETENTION_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)


def dbm_per_hz_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    user_count: int = 5
    layer_count: int = 24
    total_param_size: int = 14_000_000
    bits_per_parameter: float = 16.0
    # derived from total_param_size / layer_count * bits_per_parameter when None
    bits_per_layer: Optional[float] = None
    noise_psd_server: float = dbm_per_hz_to_watt(NOISE_PSD_DBM_HZ)
    noise_psd_eve: float = dbm_per_hz_to_watt(NOISE_PSD_DBM_HZ)
    server_capacitance: float = 1e-27
    server_freq_max: float = 100e9
    cost_weight_time: float = 0.5
    cost_weight_energy: float = 0.5
    cycle_c1: float = 1e9
    cycle_c2: float = 2.0
    cycle_c3: float = 5e9
    cycle_c4: float = 1.0
    utility_scale: float = 1.0
    mse_scale: float = 1.0
    mse_exponent: float = 2.0
    # when set, every user gets bandwidth_total / user_count as its b_max
    bandwidth_total: Optional[float] = None
    distance_min: float = 0.05
    distance_max: float = 0.5
    shadow_std_db: float = 8.0
    rng_seed: int = 0

    def __post_init__(self):
        problems = []
        if int(self.user_count) != self.user_count or self.user_count < 1:
            problems.append(f"user_count must be a positive integer, got {self.user_count}")
        if int(self.layer_count) != self.layer_count or self.layer_count < 1:
            problems.append(f"layer_count must be a positive integer, got {self.layer_count}")
        for name in ("total_param_size", "bits_per_parameter", "layer_bits",
                     "noise_psd_server", "noise_psd_eve", "server_capacitance",
                     "server_freq_max", "cycle_c1", "cycle_c3", "cycle_c4",
                     "utility_scale", "mse_scale", "mse_exponent",
                     "distance_min", "distance_max"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive, got {getattr(self, name)}")
        if not self.cycle_c2 > 1:
            problems.append(f"cycle_c2 must exceed 1, got {self.cycle_c2}")
        for name in ("cost_weight_time", "cost_weight_energy"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if abs(self.cost_weight_time + self.cost_weight_energy - 1.0) > 1e-9:
            problems.append("cost_weight_time + cost_weight_energy must equal 1")
        if self.distance_min >= self.distance_max:
            problems.append("distance_min must be below distance_max")
        if self.shadow_std_db < 0:
            problems.append("shadow_std_db must be non-negative")
        if self.bandwidth_total is not None and not self.bandwidth_total > 0:
            problems.append("bandwidth_total must be positive when set")
        if problems:
            raise ValueError("invalid SystemConfig: " + "; ".join(problems))

    @property
    def layer_bits(self) -> float:
        """Per-layer payload w in bits (derived unless bits_per_layer is set)."""
        if self.bits_per_layer is not None:
            return self.bits_per_layer
        return self.total_param_size / self.layer_count * self.bits_per_parameter

    @property
    def payload_bits_per_unit_phi(self) -> float:
        """Bits sent for extraction rate 1, i.e. L * w."""
        return self.layer_count * self.layer_bits


@dataclass(frozen=True)
class UserConfig:
    bandwidth_max: float = 2e6
    power_max: float = 0.2
    freq_max: float = 7e9
    user_capacitance: float = 1e-27
    confidentiality_coeff: float = 12.0
    efficiency_min: float = 0.5
    loss_max: float = 0.5
    distance_to_server: float = 0.25
    distance_to_eve: float = 0.25

    def phi_max(self, layer_count: int) -> float:
        return 2.0 * self.confidentiality_coeff / layer_count

    def validate(self, layer_count: int) -> None:
        problems = [f"{f.name} must be positive, got {getattr(self, f.name)}"
                    for f in dataclasses.fields(self) if not getattr(self, f.name) > 0]
        phi_max = self.phi_max(layer_count)
        if not 0.0 < phi_max <= 1.0 + 1e-12:
            problems.append(f"phi_max = 2*confidentiality_coeff/layer_count = {phi_max} "
                            "must lie in (0, 1]")
        if problems:
            raise ValueError("invalid UserConfig: " + "; ".join(problems))


@dataclass(frozen=True)
class Channel:
    gain_to_server: float
    gain_to_eve: float

    def __post_init__(self):
        if not self.gain_to_server > 0:
            raise ValueError(f"gain_to_server must be positive, got {self.gain_to_server}")
        if not self.gain_to_eve >= 0:
            raise ValueError(f"gain_to_eve must be non-negative, got {self.gain_to_eve}")


@dataclass(frozen=True)
class Scenario:
    system: SystemConfig
    users: tuple
    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "channels", tuple(self.channels))
        n = self.system.user_count
        if len(self.users) != n or len(self.channels) != n:
            raise ValueError(f"expected {n} users and channels, got "
                             f"{len(self.users)} and {len(self.channels)}")
        for u in self.users:
            u.validate(self.system.layer_count)

    @property
    def n(self) -> int:
        return self.system.user_count

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(u, name) for u in self.users], dtype=float)

    @cached_property
    def b_max(self) -> np.ndarray:
        return self.column("bandwidth_max")

    @cached_property
    def p_max(self) -> np.ndarray:
        return self.column("power_max")

    @cached_property
    def f_max(self) -> np.ndarray:
        return self.column("freq_max")

    @cached_property
    def k_user(self) -> np.ndarray:
        return self.column("user_capacitance")

    @cached_property
    def phi_max(self) -> np.ndarray:
        return np.array([u.phi_max(self.system.layer_count) for u in self.users])

    @cached_property
    def gain(self) -> np.ndarray:
        return np.array([c.gain_to_server for c in self.channels])

    @cached_property
    def gain_eve(self) -> np.ndarray:
        return np.array([c.gain_to_eve for c in self.channels])

    def with_channels(self, channels: Sequence[Channel]) -> "Scenario":
        return Scenario(self.system, self.users, tuple(channels))


def path_loss_gain(distance_km: float, shadow_db: float = 0.0) -> float:
    """Linear power gain of the 128.1 + 37.6 log10(d) dB urban path-loss model."""
    if not distance_km > 0:
        raise ValueError(f"distance must be positive, got {distance_km}")
    loss_db = 128.1 + 37.6 * math.log10(distance_km) + shadow_db
    return 10.0 ** (-loss_db / 10.0)


def _link_is_secure(g: float, g_e: float, system: SystemConfig) -> bool:
    return g / system.noise_psd_server > g_e / system.noise_psd_eve


def secrecy_feasibility(scenario: Scenario) -> list:
    """Per-user flag: can a strictly positive secrecy rate be reached at all?"""
    return [_link_is_secure(c.gain_to_server, c.gain_to_eve, scenario.system)
            for c in scenario.channels]


def _draw_in_annulus(rng: np.random.Generator, r_min: float, r_max: float) -> np.ndarray:
    r = math.sqrt(rng.uniform(r_min ** 2, r_max ** 2))
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([r * math.cos(theta), r * math.sin(theta)])


def generate_scenario(config: SystemConfig, user_template: UserConfig,
                      rng_seed: Optional[int] = None, *,
                      resample_infeasible: bool = True,
                      max_attempts: int = 100) -> Scenario:
    """Draw a reproducible instance around a server at the origin.

    Users and the single eavesdropper are placed uniformly (by area) in the
    annulus ``[distance_min, distance_max]`` km; every link gets independent
    log-normal shadowing.  A user whose legitimate channel is not strictly
    better than its eavesdropper channel is redrawn up to ``max_attempts``
    times when ``resample_infeasible`` is set, otherwise kept as is.
    """
    if config.user_count < 1:
        raise ValueError("user_count must be at least 1")
    seed = config.rng_seed if rng_seed is None else rng_seed
    rng = np.random.default_rng(seed % 2**64)
    d_min, d_max = config.distance_min, config.distance_max
    eve = _draw_in_annulus(rng, d_min, d_max)

    b_max = user_template.bandwidth_max
    if config.bandwidth_total is not None:
        b_max = config.bandwidth_total / config.user_count

    users, channels = [], []
    for n in range(config.user_count):
        for attempt in range(max_attempts):
            pos = _draw_in_annulus(rng, d_min, d_max)
            d_srv = float(np.hypot(*pos))
            d_eve = max(float(np.hypot(*(pos - eve))), d_min)
            shadow_srv, shadow_eve = rng.normal(0.0, config.shadow_std_db, size=2)
            g = path_loss_gain(d_srv, shadow_srv)
            g_e = path_loss_gain(d_eve, shadow_eve)
            if not resample_infeasible or _link_is_secure(g, g_e, config):
                break
        else:
            raise InfeasibleError(
                f"user {n}: no secrecy-feasible placement in {max_attempts} attempts",
                users=[n])
        users.append(dataclasses.replace(
            user_template, bandwidth_max=b_max,
            distance_to_server=d_srv, distance_to_eve=d_eve))
        channels.append(Channel(g, g_e))
    return Scenario(config, tuple(users), tuple(channels))
