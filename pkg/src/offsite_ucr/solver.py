"""Dinkelbach + alternating optimisation solver for the UCR problem.

The ratio U/S is maximised through the parametric problem
max U - y S with y <- U/S.  For fixed y the variables are split into the
extraction rates phi (a separable convex 1-D problem per user, solved
under the current delay bound) and the resources (b, p, f, m, T).  The
resource problem is handled by a quadratic transform of the uplink energy,
a first-order model of the secrecy rate and a three-step KKT procedure:
per-user frequency and power responses to the delay multiplier rho_n, and
an outer search on T so that sum(rho) = y c_t.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import _kernels as kern
from .cost_model import (LN2, Allocation, CostBreakdown, EmulatorChoice,
                         constraint_violations, evaluate, extraction_floor,
                         retention_lower_bound, secrecy_rate, select_retention)
from .errors import InfeasibleError, TransmissionFailure
from .scenario import Channel, Scenario, SystemConfig, secrecy_feasibility

MODES = ("joint", "comm_only", "freq_only")


@dataclass(frozen=True)
class SolverOptions:
    dinkelbach_tol: float = 1e-6
    dinkelbach_max_iter: int = 50
    ao_max_iter: int = 10
    sca_max_iter: int = 20
    sca_tol: float = 1e-5
    bisection_tol: float = 1e-8
    root_max_iter: int = 200
    p_floor: float = 1e-6
    freq_floor: float = 1e3
    # ascent slack used when accepting phi and resource steps
    ascent_slack: float = 1e-9
    # optimise the delay bound jointly with phi in the phi step
    phi_release_delay: bool = True

    def __post_init__(self):
        for name in ("dinkelbach_tol", "sca_tol", "bisection_tol", "p_floor",
                     "freq_floor", "ascent_slack"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("dinkelbach_max_iter", "ao_max_iter", "sca_max_iter", "root_max_iter"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass(frozen=True)
class SecrecyLinearization:
    """Affine model r0 + d_b (b - b0) + d_p (p - p0) of the secrecy rate."""
    b0: np.ndarray
    p0: np.ndarray
    r0: np.ndarray
    d_b: np.ndarray
    d_p: np.ndarray

    def __call__(self, b, p):
        return self.r0 + self.d_b * (b - self.b0) + self.d_p * (p - self.p0)


@dataclass
class Multipliers:
    eta: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    rho: np.ndarray
    zeta: float = 0.0

    @classmethod
    def zeros(cls, n):
        z = np.zeros(n)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), 0.0)


@dataclass
class SolverState:
    y: float
    allocation: Allocation
    phi_floor: np.ndarray
    retention: list
    fp_aux: Optional[np.ndarray] = None
    sca_point: Optional[SecrecyLinearization] = None
    multipliers: Multipliers = None
    # variables the current mode keeps frozen (nan = free); rows f, p, m
    frozen: Optional[np.ndarray] = None
    phi_fixed: bool = False
    outer_iterations: int = 0
    ao_iterations: int = 0
    sca_iterations: int = 0
    phi_infeasible: list = field(default_factory=list)

    def __post_init__(self):
        n = self.allocation.n
        if self.multipliers is None:
            self.multipliers = Multipliers.zeros(n)
        if self.frozen is None:
            self.frozen = np.full((3, n), np.nan)


@dataclass
class TraceRecord:
    iteration: int
    y: float
    objective: float
    ucr: float
    max_violation: float
    ao_iterations: int
    sca_iterations: int


@dataclass
class Trace:
    records: list = field(default_factory=list)

    def append(self, record: TraceRecord):
        self.records.append(record)

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.records])

    def write_csv(self, path) -> None:
        names = list(TraceRecord.__dataclass_fields__)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.records:
                w.writerow([repr(getattr(r, k)) if isinstance(getattr(r, k), float)
                            else getattr(r, k) for k in names])


@dataclass
class KKTSolution:
    bandwidth: np.ndarray
    power: np.ndarray
    freq_user: np.ndarray
    freq_server: np.ndarray
    delay_bound: float
    times: np.ndarray
    multipliers: Multipliers
    converged: bool = True


@dataclass
class SolveResult:
    allocation: Allocation
    retention: list
    breakdown: CostBreakdown
    trace: Trace
    state: SolverState
    converged: bool
    mode: str = "joint"
    scenario: Optional[Scenario] = None

    @property
    def ucr(self) -> float:
        return self.breakdown.ucr

    def __iter__(self):
        # allows `alloc, retention, breakdown, trace = dinkelbach_solve(...)`
        return iter((self.allocation, self.retention, self.breakdown, self.trace))


# ---------------------------------------------------------------- objective

def dinkelbach_objective(scenario: Scenario, allocation: Allocation, T: float,
                         y: float) -> float:
    """U - y (c_e E + c_t T) for the allocation under delay bound T."""
    bd = evaluate(scenario, allocation, check=False)
    s = scenario.system
    return bd.system_utility - y * (s.cost_weight_energy * bd.total_energy
                                    + s.cost_weight_time * T)


def _metrics(scenario, alloc):
    # lean version of evaluate for the inner loops: (utility, energy, times)
    s = scenario.system
    b, p, phi, f, m = (alloc.bandwidth, alloc.power, alloc.phi, alloc.freq_user,
                       alloc.freq_server)
    r_s = (b * (np.log1p(scenario.gain * p / (s.noise_psd_server * b))
                - np.log1p(scenario.gain_eve * p / (s.noise_psd_eve * b))) / LN2)
    cu = s.cycle_c1 * phi ** s.cycle_c2
    cs = s.cycle_c3 * phi ** (-s.cycle_c4)
    bits = phi * s.payload_bits_per_unit_phi
    with np.errstate(divide="ignore"):
        t_up = np.where(r_s > 0, bits / np.maximum(r_s, 1e-300), np.inf)
    times = cu / f + t_up + cs / m
    energy = (scenario.k_user * cu * f * f + p * t_up
              + s.server_capacitance * cs * m * m).sum()
    util = s.utility_scale * np.log(1.0 + phi + f / scenario.f_max + b / scenario.b_max).sum()
    return float(util), float(energy), times


def _true_objective(scenario, alloc, y):
    util, energy, _ = _metrics(scenario, alloc)
    s = scenario.system
    return util - y * (s.cost_weight_energy * energy + s.cost_weight_time * alloc.delay_bound)


def _with_delay(scenario, alloc):
    alloc.delay_bound = float(np.max(_metrics(scenario, alloc)[2]))
    return alloc


def initial_allocation(scenario: Scenario, phi_floor: Optional[np.ndarray] = None) -> Allocation:
    """Interior starting point: b_max, p_max/2, mid phi, f_max/2, F/N."""
    if phi_floor is None:
        phi_floor = np.array([extraction_floor(u, scenario.system) for u in scenario.users])
    n = scenario.n
    alloc = Allocation(
        bandwidth=scenario.b_max.copy(), power=scenario.p_max / 2,
        phi=(phi_floor + scenario.phi_max) / 2, freq_user=scenario.f_max / 2,
        freq_server=np.full(n, scenario.system.server_freq_max / n))
    return _with_delay(scenario, alloc)


# ---------------------------------------------------------------- P4 pieces

def update_fp_aux(scenario: Scenario, allocation: Allocation, p_floor: float = 1e-6) -> np.ndarray:
    """Quadratic-transform auxiliaries x_n = 1 / (2 r_s p D) at the current point."""
    s = scenario.system
    r_s = secrecy_rate(allocation.bandwidth, allocation.power, scenario.gain,
                       scenario.gain_eve, s.noise_psd_server, s.noise_psd_eve)
    if np.any(r_s <= 0):
        raise TransmissionFailure("secrecy rate is zero; FP auxiliary undefined",
                                  users=np.flatnonzero(r_s <= 0).tolist())
    p = np.maximum(allocation.power, p_floor)
    bits = allocation.phi * s.payload_bits_per_unit_phi
    return 1.0 / (2.0 * r_s * p * bits)


def fp_transformed_energy(power, bits, r_s, x):
    """[p D]^2 x + 1/(4 r_s^2 x), an upper bound on p D / r_s tight at the FP optimum."""
    return (power * bits) ** 2 * x + 1.0 / (4.0 * r_s ** 2 * x)


def secrecy_rate_partials(b, p, g, g_e, noise, noise_eve):
    """Closed-form (dr_s/db, dr_s/dp) of the unclamped secrecy rate."""
    a = g / noise
    c = g_e / noise_eve
    d_p = (b / LN2) * (a / (b + a * p) - c / (b + c * p))
    d_b = (np.log1p(a * p / b) - a * p / (b + a * p)
           - np.log1p(c * p / b) + c * p / (b + c * p)) / LN2
    return d_b, d_p


def sca_linearize(b0, p0, channel, system: SystemConfig) -> SecrecyLinearization:
    """First-order model of the secrecy rate around (b0, p0).

    ``channel`` is a Channel or a Scenario (the latter linearizes every user).
    """
    if isinstance(channel, Scenario):
        g, g_e = channel.gain, channel.gain_eve
    else:
        g, g_e = channel.gain_to_server, channel.gain_to_eve
    b0 = np.asarray(b0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    r0 = secrecy_rate(b0, p0, g, g_e, system.noise_psd_server, system.noise_psd_eve)
    if np.any(r0 <= 0):
        raise TransmissionFailure("cannot linearize at a zero secrecy rate")
    d_b, d_p = secrecy_rate_partials(b0, p0, g, g_e, system.noise_psd_server,
                                     system.noise_psd_eve)
    return SecrecyLinearization(b0, p0, r0, d_b, d_p)


def _resource_params(scenario, y, phi, x, lin, p_floor, cols=None):
    """Kernel parameter matrix; column j describes user ``cols[j]`` at phi[j]."""
    s = scenario.system
    cols = np.arange(scenario.n) if cols is None else np.asarray(cols)
    b = scenario.b_max[cols]
    f_max = scenario.f_max[cols]
    cyc_u = s.cycle_c1 * phi ** s.cycle_c2
    cyc_s = s.cycle_c3 * phi ** (-s.cycle_c4)
    yce = y * s.cost_weight_energy
    d_b, d_p = lin.d_b[cols], lin.d_p[cols]
    r_icpt = lin.r0[cols] + d_b * (b - lin.b0[cols]) - d_p * lin.p0[cols]
    prm = np.empty((14, len(cols)))
    prm[0] = s.utility_scale
    prm[1] = f_max * (1.0 + phi + 1.0)
    prm[2] = yce * scenario.k_user[cols] * cyc_u
    prm[3] = cyc_u
    prm[4] = f_max
    prm[5] = yce
    prm[6] = phi * s.payload_bits_per_unit_phi
    prm[7] = x
    prm[8] = r_icpt
    prm[9] = d_p
    prm[10] = scenario.p_max[cols]
    prm[11] = ResourceModel._power_floor(r_icpt, d_p, p_floor)
    prm[12] = yce * s.server_capacitance
    prm[13] = cyc_s
    return prm


class ResourceModel:
    """The convex resource problem at fixed (y, phi, x, linearization).

    Bandwidth sits at b_max (the objective is increasing in b); the per-user
    responses to the delay multiplier are evaluated by compiled kernels.
    """

    def __init__(self, scenario: Scenario, y: float, phi: np.ndarray, x: np.ndarray,
                 lin: SecrecyLinearization, frozen: Optional[np.ndarray] = None,
                 options: SolverOptions = SolverOptions()):
        s = scenario.system
        n = scenario.n
        self.scenario, self.y, self.phi, self.x, self.lin = scenario, y, phi, x, lin
        self.options = options
        self.frozen = np.full((3, n), np.nan) if frozen is None else np.asarray(frozen, float)
        self.bandwidth = scenario.b_max.copy()
        self.bits = phi * s.payload_bits_per_unit_phi
        prm = _resource_params(scenario, y, phi, x, lin, options.p_floor)
        self.prm = np.ascontiguousarray(prm)
        self.rho_guess = np.ones(n)
        self._out = np.empty((7, n))

    @staticmethod
    def _power_floor(r_icpt, slope, p_floor):
        lo = np.full_like(r_icpt, p_floor)
        bad = r_icpt + slope * lo <= 0
        if np.any(bad):
            # keep the affine rate positive on the power bracket
            lo[bad] = np.maximum(p_floor, -r_icpt[bad] / slope[bad] * (1 + 1e-9) + 1e-300)
        return lo

    @property
    def n(self):
        return self.scenario.n

    # Step 1 and 2 for a single user at a given multiplier
    def user_freq(self, rho: float, n: int):
        if self.frozen[0, n] == self.frozen[0, n]:
            return float(self.frozen[0, n]), 0.0
        f, delta, _ = kern.freq_user_root(rho, *self.prm[[0, 1, 2, 3, 4], n])
        return f, delta

    def bandwidth_power(self, rho: float, n: int):
        prm = self.prm[:, n]
        if self.frozen[1, n] == self.frozen[1, n]:
            p, beta = float(self.frozen[1, n]), 0.0
        else:
            p, beta, _ = kern.power_root(rho, *prm[5:12])
        f, _ = self.user_freq(rho, n)
        alpha = self._alpha(np.array([rho]), np.array([f]), np.array([p]))
        return float(self.bandwidth[n]), p, float(alpha[n]), beta

    def _alpha(self, rho, f, p):
        # bandwidth multiplier from the b-stationarity at b = b_max
        prm, s = self.prm, self.scenario
        r = prm[8] + prm[9] * p
        util_arg = 1.0 + self.phi + f / s.f_max + 1.0
        alpha = (s.system.utility_scale / (s.b_max * util_arg)
                 + prm[5] * self.lin.d_b / (2.0 * prm[7] * r ** 3)
                 + rho * prm[6] * self.lin.d_b / r ** 2)
        return np.maximum(alpha, 0.0)

    def server_freq(self, rho: np.ndarray):
        rho = np.asarray(rho, dtype=float)
        fixed = self.frozen[2]
        if np.all(fixed == fixed):
            return fixed.copy(), 0.0, False
        am, cyc = self.prm[12], self.prm[13]
        free = fixed != fixed
        if not np.any(rho[free] > 0):
            m = np.where(free, self.options.freq_floor, fixed)
            return m, 0.0, True

        def freqs(zeta):
            return np.array([fixed[i] if not free[i]
                             else kern.server_freq_root(rho[i], zeta, am[i], cyc[i])[0]
                             for i in range(self.n)])

        m = freqs(0.0)
        cap = self.scenario.system.server_freq_max
        if m.sum() <= cap:
            return m, 0.0, False
        hi = 1.0
        while freqs(hi).sum() > cap:
            hi *= 2.0
        zeta = brentq(lambda z: freqs(z).sum() - cap, 0.0, hi, xtol=1e-300, rtol=1e-15,
                      maxiter=self.options.root_max_iter)
        return freqs(zeta), zeta, False

    # Step 3
    def _phi_of_T(self, T, zeta):
        total = kern.respond_all(T, zeta, self.prm, self.frozen, self.rho_guess, self._out)
        target = self.y * self.scenario.system.cost_weight_time
        gap = total - target
        # warm-started roots differ in the last bits; call that an exact zero
        return 0.0 if abs(gap) <= 1e-13 * target else gap

    def _min_time(self):
        return max(kern.min_time(i, self.prm, self.frozen) for i in range(self.n))

    def delay_for(self, zeta: float, T_guess: float):
        """Delay bound T with sum(rho(T)) = y c_t at the given zeta."""
        target = self.y * self.scenario.system.cost_weight_time
        t_min = self._min_time()
        T_hi = T_guess if T_guess > t_min and math.isfinite(T_guess) else 2.0 * t_min + 1e-12
        converged = True
        val = self._phi_of_T(T_hi, zeta)
        doublings = 0
        while val > 0 and doublings < 60:
            T_hi = t_min + 2.0 * (T_hi - t_min)
            val = self._phi_of_T(T_hi, zeta)
            doublings += 1
        if val > 0:
            converged = False
        T_lo = T_hi
        if val < 0:
            while True:
                T_lo = t_min + 0.5 * (T_lo - t_min)
                v = self._phi_of_T(T_lo, zeta)
                if v >= 0:
                    break
                T_hi = T_lo
                if T_lo - t_min <= 1e-15 * t_min:
                    break
            if v == 0:
                T_hi = T_lo
        if T_lo < T_hi:
            T = brentq(lambda t: self._phi_of_T(t, zeta), T_lo, T_hi,
                       xtol=1e-300, rtol=1e-15, maxiter=self.options.root_max_iter)
        else:
            T = T_hi
        self._phi_of_T(T, zeta)
        self.rho_guess = np.where(np.isfinite(self._out[0]) & (self._out[0] > 0),
                                  self._out[0], self.rho_guess)
        base = np.where(np.isfinite(self._out[0]), self._out[0], 0.0)
        deficit = target - base.sum()
        if deficit > 0 and T <= t_min * (1 + 1e-12):
            # T sits on the floor of users with every free resource capped; their
            # time no longer moves with rho, so they take the rest of y c_t and
            # the cap multipliers absorb it
            T = t_min
            floors = np.array([kern.min_time(i, self.prm, self.frozen) for i in range(self.n)])
            pinned = np.flatnonzero(floors >= t_min * (1 - 1e-12))
            for i in pinned:
                rho_i = base[i] + deficit / len(pinned)
                t, _, f, p, m, delta, beta = kern.user_response(rho_i, zeta, i, self.prm,
                                                                self.frozen)
                self._out[:, i] = rho_i, f, p, m, delta, beta, t
        # polish: all-active users share T, so a tiny uniform shift of rho closes the gap
        out = self._out.copy()
        gap = abs(out[0].sum() - target) / target
        if not gap <= 1e-10:
            converged = converged and gap <= 1e-8
        return T, out, converged

    def solve(self, T_guess: float) -> KKTSolution:
        cap = self.scenario.system.server_freq_max
        T, out, ok = self.delay_for(0.0, T_guess)
        zeta = 0.0
        free = self.frozen[2] != self.frozen[2]
        if np.any(free) and out[3].sum() > cap * (1 + 1e-12):
            def excess(z):
                nonlocal T
                T, o, _ = self.delay_for(z, T)
                return o[3].sum() - cap
            hi = 1.0
            while excess(hi) > 0:
                hi *= 2.0
            zeta = brentq(excess, 0.0, hi, xtol=1e-300, rtol=1e-14,
                          maxiter=self.options.root_max_iter)
            T, out, ok = self.delay_for(zeta, T)
        n = self.n
        rho = out[0].copy()
        alpha = self._alpha(rho, out[1], out[2])
        mult = Multipliers(eta=np.zeros(n), alpha=alpha, beta=out[5].copy(),
                           delta=out[4].copy(), rho=rho, zeta=zeta)
        return KKTSolution(self.bandwidth.copy(), out[2].copy(), out[1].copy(),
                           out[3].copy(), T, out[6].copy(), mult, ok)


def _model(scenario, state, options):
    return ResourceModel(scenario, state.y, state.allocation.phi, state.fp_aux,
                         state.sca_point, state.frozen, options)


def kkt_step1_user_freq(rho_n: float, model: ResourceModel, n: int):
    """(f_n, delta_n) for user n at multiplier rho_n."""
    return model.user_freq(rho_n, n)


def kkt_step1_server_freq(rho, model: ResourceModel):
    """(server frequencies, zeta, degenerate flag) for multipliers rho."""
    return model.server_freq(rho)


def kkt_step2_bandwidth_power(rho_n: float, model: ResourceModel, n: int):
    """(b_n, p_n, alpha_n, beta_n) for user n at multiplier rho_n."""
    return model.bandwidth_power(rho_n, n)


def kkt_step3_delay(model: ResourceModel, T_guess: float = math.nan):
    """Delay bound and multipliers of the resource KKT system."""
    sol = model.solve(T_guess)
    return sol.delay_bound, sol.multipliers.rho


def kkt_residuals(model: ResourceModel, sol: KKTSolution) -> dict:
    """Scaled complementary-slackness products and the rho-sum gap."""
    s = model.scenario
    mult = sol.multipliers
    y_ct = model.y * s.system.cost_weight_time
    T = sol.delay_bound
    m_total = sol.freq_server.sum()
    cap = s.system.server_freq_max
    return {
        "min_multiplier": float(min(mult.alpha.min(), mult.beta.min(), mult.delta.min(),
                                    mult.rho.min(), mult.zeta)),
        "alpha_slack": float(np.max(mult.alpha * np.abs(sol.bandwidth - s.b_max) / s.b_max)
                             / max(1.0, float(np.max(mult.alpha)))),
        "beta_slack": float(np.max(np.abs(sol.power - s.p_max) / s.p_max * (mult.beta > 0))),
        "delta_slack": float(np.max(np.abs(sol.freq_user - s.f_max) / s.f_max * (mult.delta > 0))),
        "zeta_slack": float(abs(m_total - cap) / cap) if mult.zeta > 0 else 0.0,
        "rho_slack": float(np.max(np.abs(sol.times - T) / T * (mult.rho > 0))),
        "delay_excess": float(max(0.0, np.max(sol.times - T) / T)),
        "rho_sum_gap": float(abs(mult.rho.sum() - y_ct) / y_ct),
    }


def _step_change(old: Allocation, new: Allocation, p_floor: float) -> float:
    """Largest relative move of p, f or m.

    Measured against the variables themselves rather than their caps, so a
    slack cap does not change where an iteration stops.
    """
    return max(np.max(np.abs(new.power - old.power) / np.maximum(new.power, p_floor)),
               np.max(np.abs(new.freq_user - old.freq_user) / new.freq_user),
               np.max(np.abs(new.freq_server - old.freq_server)
                      / np.maximum(new.freq_server, 1e-300)))


def solve_resource_subproblem(scenario: Scenario, state: SolverState,
                              options: SolverOptions = SolverOptions()) -> SolverState:
    """Improve (b, p, f, m, T) at fixed phi by repeated FP/SCA/KKT steps.

    A step is kept only if the true P2 objective does not drop; otherwise a
    halving line search toward it is tried and the loop stops.
    """
    alloc = state.allocation
    h0 = _true_objective(scenario, alloc, state.y)
    scale = max(abs(h0), state.y * 1e-12, 1e-300)
    for it in range(options.sca_max_iter):
        state.fp_aux = update_fp_aux(scenario, alloc, options.p_floor)
        state.sca_point = sca_linearize(alloc.bandwidth, alloc.power, scenario, scenario.system)
        model = _model(scenario, state, options)
        if np.all(state.multipliers.rho > 0):
            model.rho_guess = state.multipliers.rho.copy()
        sol = model.solve(alloc.delay_bound)
        state.sca_iterations += 1
        cand = _with_delay(scenario, alloc.copy(
            bandwidth=sol.bandwidth, power=sol.power, freq_user=sol.freq_user,
            freq_server=sol.freq_server))
        h1 = _true_objective(scenario, cand, state.y)
        if h1 >= h0 - options.ascent_slack * scale:
            change = _step_change(alloc, cand, options.p_floor)
            alloc, state.multipliers = cand, sol.multipliers
            state.last_kkt = (model, sol)
            gain = abs(h1 - h0) / max(abs(h1), 1e-300)
            h0 = h1
            if gain < options.sca_tol and change < options.sca_tol:
                break
            continue
        # line search toward the rejected step
        step = 0.5
        accepted = False
        while step > 1e-3:
            trial = _with_delay(scenario, alloc.copy(
                power=alloc.power + step * (cand.power - alloc.power),
                freq_user=alloc.freq_user + step * (cand.freq_user - alloc.freq_user),
                freq_server=alloc.freq_server + step * (cand.freq_server - alloc.freq_server)))
            h_trial = _true_objective(scenario, trial, state.y)
            if h_trial > h0:
                alloc, h0, accepted = trial, h_trial, True
                break
            step *= 0.5
        if not accepted:
            break
    state.allocation = alloc
    return state


# ---------------------------------------------------------------- P3

def _phi_inputs(scenario: Scenario, state: SolverState):
    s = scenario.system
    a = state.allocation
    r_s = secrecy_rate(a.bandwidth, a.power, scenario.gain, scenario.gain_eve,
                       s.noise_psd_server, s.noise_psd_eve)
    n = scenario.n
    q = np.empty((14, n))
    q[0] = s.utility_scale
    q[1] = 1.0 + a.freq_user / scenario.f_max + a.bandwidth / scenario.b_max
    q[2] = state.y * s.cost_weight_energy
    q[3] = scenario.k_user
    q[4] = a.freq_user
    q[5] = s.cycle_c1
    q[6] = s.cycle_c2
    q[7] = a.power
    q[8] = s.payload_bits_per_unit_phi
    q[9] = r_s
    q[10] = s.server_capacitance
    q[11] = s.cycle_c3
    q[12] = s.cycle_c4
    q[13] = a.freq_server
    return (np.ascontiguousarray(q), np.ascontiguousarray(state.phi_floor, dtype=float),
            np.ascontiguousarray(scenario.phi_max, dtype=float))


def solve_phi_subproblem(scenario: Scenario, state: SolverState,
                         release_delay: bool = False) -> np.ndarray:
    """Per-user convex minimisation of the phi objective under t_n(phi) <= T.

    With ``release_delay`` the bound T is optimised too: the weighted delay
    y c_t T is traded against the per-user objectives by a search on T that
    balances sum(eta) against y c_t (the problem stays convex in (phi, T)).
    Returns the new phi vector; users whose deadline cannot be met get the
    time-minimising phi and are listed in ``state.phi_infeasible``.
    """
    q, lo, hi = _phi_inputs(scenario, state)
    n = scenario.n
    out = np.empty((3, n))
    T = float(state.allocation.delay_bound)
    if release_delay:
        T = _phi_delay(scenario, state, q, lo, hi, T)
    kern.phi_step(q, lo, hi, T, out)
    state.phi_infeasible = np.flatnonzero(out[1] > 0).tolist()
    state.multipliers.eta = out[2].copy()
    return out[0].copy()


def _phi_delay(scenario, state, q, lo, hi, T_cur):
    n = scenario.n
    out = np.empty((3, n))
    target = state.y * scenario.system.cost_weight_time
    # unconstrained minimisers bound the useful range from above
    kern.phi_step(q, lo, hi, np.inf, out)
    t_free = _phi_times(out[0], q).max()
    # smallest achievable bound: every user at its time-minimising phi
    kern.phi_step(q, lo, hi, -np.inf, out)
    t_min = _phi_times(out[0], q).max()
    if not t_free > t_min:
        return max(T_cur, t_min)

    def excess(T):
        kern.phi_step(q, lo, hi, T, out)
        return out[2].sum() - target

    a = t_min * (1 + 1e-12)
    if excess(a) <= 0:
        return a
    b = t_free
    for _ in range(60):
        if excess(b) <= 0:
            break
        b = t_min + 2.0 * (b - t_min)
    else:
        return max(T_cur, t_min)
    return brentq(excess, a, b, xtol=1e-300, rtol=1e-15, maxiter=200)


def _phi_times(phi, q):
    return (q[5] * phi ** q[6] / q[4] + phi * q[8] / q[9]
            + q[11] * phi ** (-q[12]) / q[13])


def phi_objective(scenario: Scenario, allocation: Allocation, y: float, phi) -> np.ndarray:
    """Per-user phi objective (negated utility plus weighted energy)."""
    s = scenario.system
    a = allocation
    phi = np.asarray(phi, dtype=float)
    r_s = secrecy_rate(a.bandwidth, a.power, scenario.gain, scenario.gain_eve,
                       s.noise_psd_server, s.noise_psd_eve)
    util = s.utility_scale * np.log(1.0 + phi + a.freq_user / scenario.f_max
                                    + a.bandwidth / scenario.b_max)
    energy = (scenario.k_user * s.cycle_c1 * phi ** s.cycle_c2 * a.freq_user ** 2
              + a.power * phi * s.payload_bits_per_unit_phi / r_s
              + s.server_capacitance * s.cycle_c3 * phi ** (-s.cycle_c4) * a.freq_server ** 2)
    return -util + y * s.cost_weight_energy * energy


# ---------------------------------------------------------------- outer loop

def _frozen_rows(scenario: Scenario, mode: str) -> np.ndarray:
    n = scenario.n
    frozen = np.full((3, n), np.nan)
    if mode == "comm_only":
        frozen[0] = scenario.f_max
        frozen[2] = scenario.system.server_freq_max / n
    elif mode == "freq_only":
        frozen[1] = scenario.p_max
    return frozen


def _check_scenario(scenario: Scenario):
    s = scenario.system
    if not s.cost_weight_time > 0:
        raise ValueError("cost_weight_time must be positive for the delay-bound formulation")
    bad = [i for i, ok in enumerate(secrecy_feasibility(scenario)) if not ok]
    if bad:
        raise InfeasibleError(f"user(s) {bad} cannot reach a positive secrecy rate", users=bad)
    floors = []
    for i, u in enumerate(scenario.users):
        try:
            floors.append(extraction_floor(u, s))
        except InfeasibleError as exc:
            raise InfeasibleError(f"user {i}: {exc}", users=[i]) from exc
    return np.array(floors)


def _max_violation(scenario, alloc, retention):
    return float(len(constraint_violations(scenario, alloc, retention)))


# share of the secrecy-rate ceiling targeted by the balanced start's power
BALANCED_RATE_SHARE = 0.5


def balanced_start(scenario: Scenario, phi_floor: Optional[np.ndarray] = None) -> Allocation:
    """Initial point with the server frequency capped at its cost-balanced level.

    Since sum(rho) = y c_t, no server frequency above (c_t / (2 c_e k_m))^(1/3)
    is ever optimal; starting below that level keeps the first ratio y from
    being dominated by server energy.  Power starts where the secrecy rate
    reaches BALANCED_RATE_SHARE of its high-power limit (capped at p_max).
    """
    alloc = initial_allocation(scenario, phi_floor)
    s = scenario.system
    # power reaching a fixed share of the secrecy-rate ceiling, so the start
    # does not move with p_max when the cap is slack
    a = scenario.gain / (s.noise_psd_server * scenario.b_max)
    c = scenario.gain_eve / (s.noise_psd_eve * scenario.b_max)
    ratio = (a / c) ** BALANCED_RATE_SHARE
    alloc.power = np.minimum(scenario.p_max, (ratio - 1.0) / (a - c * ratio))
    if s.cost_weight_energy > 0:
        m_bal = (s.cost_weight_time / (2.0 * s.cost_weight_energy
                                       * s.server_capacitance)) ** (1.0 / 3.0)
        alloc.freq_server = np.minimum(alloc.freq_server, m_bal)
    return _with_delay(scenario, alloc)


def dinkelbach_solve(scenario: Scenario, options: Optional[SolverOptions] = None, *,
                     mode: str = "joint", initial: Optional[Allocation] = None,
                     phi_floor: Optional[np.ndarray] = None) -> SolveResult:
    """Maximise the UCR of ``scenario``.

    ``mode`` selects which variables are optimised: ``joint`` (all),
    ``comm_only`` (frequencies frozen at f_max and F/N) or ``freq_only``
    (power at p_max, phi frozen at the initial value).  Without ``initial``
    the solver runs from the balanced start and from the even-split start
    (b_max, p_max/2, mid phi, f_max/2, F/N) and keeps the better result.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    options = options or SolverOptions()
    floors = _check_scenario(scenario)
    if phi_floor is not None:
        floors = np.maximum(floors, phi_floor)
    if initial is not None:
        starts = [initial.copy()]
    else:
        starts = [balanced_start(scenario, floors), initial_allocation(scenario, floors)]
    best = None
    for start in starts:
        result = _dinkelbach_run(scenario, options, mode, start, floors)
        if best is None or result.ucr > best.ucr:
            best = result
    return best


def _dinkelbach_run(scenario, options, mode, alloc, floors) -> SolveResult:
    alloc = _with_delay(scenario, alloc)
    bd = evaluate(scenario, alloc, check=False)
    state = SolverState(y=bd.ucr, allocation=alloc, phi_floor=floors,
                        retention=[], frozen=_frozen_rows(scenario, mode),
                        phi_fixed=(mode == "freq_only"))
    state.last_kkt = None
    s = scenario.system
    trace = Trace()
    trace.append(TraceRecord(0, bd.ucr, 0.0, bd.ucr,
                             _max_violation(scenario, alloc, None), 0, 0))
    converged = False
    for k in range(options.dinkelbach_max_iter):
        state.outer_iterations = k + 1
        # loss budget gives the retention floor; the phi floor follows from it
        state.chi_lower = [retention_lower_bound(u, s) for u in scenario.users]
        state.sca_iterations = 0
        h_prev = _true_objective(scenario, state.allocation, state.y)
        for a in range(options.ao_max_iter):
            state.ao_iterations = a + 1
            if not state.phi_fixed:
                phi = solve_phi_subproblem(scenario, state, options.phi_release_delay)
                trial = _with_delay(scenario, state.allocation.copy(phi=phi))
                scale = max(abs(h_prev), 1e-300)
                if (_true_objective(scenario, trial, state.y)
                        >= h_prev - options.ascent_slack * scale):
                    state.allocation = trial
            solve_resource_subproblem(scenario, state, options)
            h_new = _true_objective(scenario, state.allocation, state.y)
            done = h_new - h_prev <= 1e-10 * max(abs(h_new), state.y * 1e-12)
            h_prev = h_new
            if done:
                break
        state.retention = [select_retention(float(p), u, s)
                           for p, u in zip(state.allocation.phi, scenario.users)]
        bd = evaluate(scenario, state.allocation, check=False)
        y_new = bd.ucr
        trace.append(TraceRecord(
            iteration=k + 1, y=y_new,
            objective=_true_objective(scenario, state.allocation, state.y),
            ucr=bd.ucr, max_violation=_max_violation(scenario, state.allocation,
                                                      state.retention),
            ao_iterations=state.ao_iterations, sca_iterations=state.sca_iterations))
        if abs(y_new - state.y) <= options.dinkelbach_tol * abs(y_new):
            converged = True
            break
        state.y = y_new
    state.y = evaluate(scenario, state.allocation, check=False).ucr
    _polish(scenario, state, options)
    breakdown = evaluate(scenario, state.allocation, retention=state.retention)
    return SolveResult(state.allocation, state.retention, breakdown, trace, state,
                       converged, mode, scenario)


def _polish(scenario, state, options, max_iter=50, tol=1e-12, ucr_rtol=1e-8):
    """Settle the resource step onto its fixed point at the final ratio.

    The ascent safeguard can reject steps whose effect is at rounding level,
    leaving multipliers from an earlier ratio.  Here full FP/SCA/KKT steps are
    taken without it until the variables stop moving; the result is kept if
    its UCR is within ``ucr_rtol`` of the incumbent, so the returned
    multipliers belong to the returned point.
    """
    start = state.allocation
    ucr0 = evaluate(scenario, start, check=False).ucr
    alloc, mult = start, state.multipliers
    try:
        for _ in range(max_iter):
            x = update_fp_aux(scenario, alloc, options.p_floor)
            lin = sca_linearize(alloc.bandwidth, alloc.power, scenario, scenario.system)
            model = ResourceModel(scenario, state.y, alloc.phi, x, lin, state.frozen, options)
            if np.all(mult.rho > 0):
                model.rho_guess = mult.rho.copy()
            sol = model.solve(alloc.delay_bound)
            cand = _with_delay(scenario, alloc.copy(
                bandwidth=sol.bandwidth, power=sol.power, freq_user=sol.freq_user,
                freq_server=sol.freq_server))
            change = _step_change(alloc, cand, options.p_floor)
            alloc, mult = cand, sol.multipliers
            state.fp_aux, state.sca_point = x, lin
            if change <= tol:
                break
    except (InfeasibleError, ValueError):
        return False
    if evaluate(scenario, alloc, check=False).ucr >= ucr0 * (1 - ucr_rtol) \
            and not constraint_violations(scenario, alloc):
        mult.eta = state.multipliers.eta
        state.allocation, state.multipliers = alloc, mult
        return True
    return False


def certificate(result: SolveResult) -> dict:
    """KKT and feasibility residuals of a returned solution.

    Uses the multipliers of the last resource step against the returned
    allocation's true completion times.  Slack entries are relative to the
    natural scale of each constraint.
    """
    sc = result.scenario
    a = result.allocation
    mult = result.state.multipliers
    s = sc.system
    times = evaluate(sc, a, check=False).t_total
    T = a.delay_bound
    y_ct = result.state.y * s.cost_weight_time
    active = mult.rho > 0
    return {
        "violations": constraint_violations(sc, a, result.retention),
        "min_multiplier": float(min(mult.alpha.min(), mult.beta.min(), mult.delta.min(),
                                    mult.rho.min(), mult.eta.min(), mult.zeta)),
        "alpha_slack": float(np.max(np.abs(a.bandwidth - sc.b_max) / sc.b_max
                                    * (mult.alpha > 0))),
        "beta_slack": float(np.max(np.abs(a.power - sc.p_max) / sc.p_max * (mult.beta > 0))),
        "delta_slack": float(np.max(np.abs(a.freq_user - sc.f_max) / sc.f_max
                                    * (mult.delta > 0))),
        "zeta_slack": (float(abs(a.freq_server.sum() - s.server_freq_max) / s.server_freq_max)
                       if mult.zeta > 0 else 0.0),
        "rho_slack": float(np.max(np.abs(times - T) / T * active)),
        "delay_excess": float(max(0.0, np.max(times - T) / T)),
        "rho_sum_gap": float(abs(mult.rho.sum() - y_ct) / y_ct),
    }
