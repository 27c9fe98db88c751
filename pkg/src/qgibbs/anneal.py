"""Certified annealing schedules and real-time propagation along them.

Schedules are closed-form solutions of the adiabatic condition with the
worst-case gap bounds plugged in.  ``propagate`` integrates
``i d|phi>/dt = H(lambda(t)) |phi>`` (hbar = 1) with an adaptive fourth-order
commutator-free Magnus scheme; every stage is an exact exponential, so the
norm is preserved to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .classical import ClassicalModel, ThermalPoint, gibbs_vector
from .errors import CapacityError, ContractError, DomainError, NumericalError
from .quantum_map import QuantumMap, gap_bound_qa, gap_bound_sa
from .spectral import DENSE_CAP, positive_gauge

SA, EQA, QA, POLY = "SA", "EQA", "QA", "POLY"
FAMILIES = (SA, EQA, QA, POLY)


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class Schedule:
    """A monotone control path ``lambda(t)`` on ``[0, total_time]``.

    ``time_scale`` > 1 compresses the path: ``lambda_c(t) = lambda(time_scale * t)``.
    """

    family: str
    epsilon: float
    n_sites: int
    control_start: float
    control_final: float
    base_total_time: float
    constants: Dict[str, float] = field(default_factory=dict)
    time_scale: float = 1.0
    note: str = ""

    @property
    def total_time(self) -> float:
        return self.base_total_time / self.time_scale

    def compressed(self, factor: float) -> "Schedule":
        if factor <= 0:
            raise DomainError("compression factor must be positive")
        return replace(self, time_scale=self.time_scale * factor)

    def control(self, t):
        return self._control(np.asarray(t, dtype=float) * self.time_scale)

    def rate(self, t):
        """``d lambda / dt`` including the compression factor."""
        return self.time_scale * self._rate(np.asarray(t, dtype=float) * self.time_scale)

    def ode_rhs(self, lam: float) -> float:
        """Right side of the uncompressed schedule ODE ``d lambda / d tau = f(lambda)``."""
        raise NotImplementedError

    def gap_bound(self, lam: float) -> float:
        raise NotImplementedError

    def _control(self, tau):
        raise NotImplementedError

    def _rate(self, tau):
        raise NotImplementedError

    def as_dict(self) -> Dict[str, object]:
        return {"family": self.family, "epsilon": self.epsilon, "n_sites": self.n_sites,
                "control_start": self.control_start, "control_final": self.control_final,
                "total_time": self.total_time, "time_scale": self.time_scale,
                "constants": dict(self.constants), "note": self.note}


@dataclass(frozen=True)
class SASchedule(Schedule):
    """``T(t) = pN / ln(alpha t + 1)``, clamped to ``T_max_cap`` near ``t = 0``."""

    def _control(self, tau):
        c = self.constants
        if c["p"] == 0.0:
            return np.full_like(tau, self.control_final)
        with np.errstate(divide="ignore"):
            t = c["p"] * self.n_sites / np.log1p(c["alpha"] * tau)
        return np.where(tau <= c["t_clamp"], c["T_max_cap"], t)

    def _rate(self, tau):
        c = self.constants
        if c["p"] == 0.0:
            return np.zeros_like(tau)
        pn, a = c["p"] * self.n_sites, c["alpha"]
        lg = np.log1p(a * tau)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = -pn * a / ((1.0 + a * tau) * lg ** 2)
        return np.where(tau <= c["t_clamp"], 0.0, r)

    def gap_bound(self, lam: float) -> float:
        return gap_bound_sa(self.n_sites, 1.0 / lam, self.constants["p"]).value

    def ode_rhs(self, lam: float) -> float:
        pn = self.constants["p"] * self.n_sites
        return -2.0 * self.epsilon * lam ** 2 * self.gap_bound(lam) / pn


@dataclass(frozen=True)
class FieldSchedule(Schedule):
    """Transverse-field path ``gamma^{-k} = k abar t + gamma_0^{-k}`` (``k = 0``: exponential)."""

    def _control(self, tau):
        c = self.constants
        k, abar = c["exponent"], c["alpha_bar"]
        if k == 0:
            return self.control_start * np.exp(-abar * tau)
        return (k * abar * tau + self.control_start ** (-k)) ** (-1.0 / k)

    def _rate(self, tau):
        c = self.constants
        return -c["alpha_bar"] * self._control(tau) ** (c["exponent"] + 1)

    def gap_bound(self, lam: float) -> float:
        return gap_bound_qa(self.n_sites, self.constants["c"], lam).value

    def ode_rhs(self, lam: float) -> float:
        return -self.constants["alpha_bar"] * lam ** (self.constants["exponent"] + 1)


@dataclass(frozen=True)
class PolySchedule(Schedule):
    """``T(t) = [(1+q) a t + T_cap^{-(1+q)}]^{-1/(1+q)}`` for a gap bound ``(beta N)^{-q}``."""

    def _control(self, tau):
        c = self.constants
        k = 1.0 + c["q"]
        return (k * c["a"] * tau + c["T_max_cap"] ** (-k)) ** (-1.0 / k)

    def _rate(self, tau):
        c = self.constants
        return -c["a"] * self._control(tau) ** (2.0 + c["q"])

    def gap_bound(self, lam: float) -> float:
        return (lam / self.n_sites) ** self.constants["q"]

    def ode_rhs(self, lam: float) -> float:
        pn = self.constants["p"] * self.n_sites
        return -2.0 * self.epsilon * lam ** 2 * self.gap_bound(lam) / pn


@dataclass(frozen=True)
class ConstantSchedule(Schedule):
    """Control held fixed for ``total_time``; the ground state is stationary."""

    def _control(self, tau):
        return np.full_like(tau, self.control_final)

    def _rate(self, tau):
        return np.zeros_like(tau)

    def gap_bound(self, lam: float) -> float:
        return math.nan

    def ode_rhs(self, lam: float) -> float:
        return 0.0


def make_constant_schedule(family: str, value: float, total_time: float,
                           n_sites: int) -> ConstantSchedule:
    if family not in FAMILIES:
        raise ContractError(f"unknown family {family!r}")
    if not value > 0 or total_time < 0:
        raise DomainError("constant schedule needs a positive control and total_time >= 0")
    return ConstantSchedule(family, 0.0, n_sites, value, value, total_time)


def make_sa_schedule(p: float, n_sites: int, epsilon: float, T_final: float,
                     T_max_cap: Optional[float] = None) -> SASchedule:
    """Integrate ``dT/dt = -(2 eps T^2 / pN) * gap_bound_sa(T)`` from ``T = inf``."""
    if epsilon <= 0 or T_final <= 0 or n_sites < 1 or p < 0:
        raise DomainError("SA schedule needs p >= 0, N >= 1, eps > 0, T_final > 0")
    if T_max_cap is None:
        T_max_cap = 20.0 * p * n_sites if p > 0 else 20.0 * T_final
    if T_final >= T_max_cap:
        raise DomainError(f"T_final={T_final} must be below T_max_cap={T_max_cap}")
    alpha = 4.0 * epsilon * math.sqrt(2.0 * math.pi * n_sites) * math.exp(-n_sites)
    if p == 0.0:
        return SASchedule(SA, epsilon, n_sites, T_final, T_final, 0.0,
                          {"p": 0.0, "alpha": alpha, "T_max_cap": T_max_cap, "t_clamp": 0.0},
                          note="free model: every temperature shares the ground state")
    pn = p * n_sites
    t_clamp = math.expm1(pn / T_max_cap) / alpha
    total = math.expm1(pn / T_final) / alpha
    return SASchedule(SA, epsilon, n_sites, T_max_cap, T_final, total,
                      {"p": p, "alpha": alpha, "T_max_cap": T_max_cap, "t_clamp": t_clamp})


def make_eqa_schedule(n_sites: int, c: float, epsilon: float, gamma_0: float,
                      gamma_final: float, refined: bool = False,
                      matrix_element_bound: Optional[float] = None,
                      family: str = EQA) -> FieldSchedule:
    """Integrate ``d gamma/dt = -(eps / N) * gap_bound_qa(gamma)^2`` from ``gamma_0``.

    The numerator ``N`` is the norm of ``sum_j sigma_x^j``.  ``refined=True``
    assumes ``|<m|dH/dgamma|0>| <= x Delta_m`` with ``x = matrix_element_bound``
    (default ``N``), giving ``d gamma/dt = -eps * gap_bound / x``; this is not a
    worst-case certificate.
    """
    if family not in (EQA, QA):
        raise ContractError(f"field schedules serve EQA/QA, not {family}")
    if not 0 < gamma_final < gamma_0:
        raise DomainError(f"need 0 < gamma_final < gamma_0 (got {gamma_final}, {gamma_0})")
    if gamma_0 > c:
        raise DomainError(f"gamma_0={gamma_0} exceeds the bound constant c={c}")
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    n = n_sites
    if refined:
        x = float(n if matrix_element_bound is None else matrix_element_bound)
        abar = epsilon * 2.0 * math.sqrt(2.0 * math.pi * n) * math.exp(-n) * (1.0 + c) ** (-n) / x
        k = n - 1
        note = f"refined rate, matrix-element bound x={x} (not worst case)"
    else:
        abar = 8.0 * math.pi * epsilon * math.exp(-2 * n) * (1.0 + c) ** (-2 * n)
        k = 2 * n - 1
        note = ""
    if k == 0:
        total = math.log(gamma_0 / gamma_final) / abar
    else:
        total = (gamma_final ** (-k) - gamma_0 ** (-k)) / (k * abar)
    return FieldSchedule(family, epsilon, n, gamma_0, gamma_final, total,
                         {"c": c, "alpha_bar": abar, "exponent": k, "refined": float(refined)},
                         note=note)


def make_poly_schedule(q: float, n_sites: int, epsilon: float, control_final: float,
                       p: float = 1.0, T_max_cap: Optional[float] = None) -> PolySchedule:
    """SA-type schedule for a gap bounded below by ``(beta N)^{-q}``.

    Same numerator bound ``pN`` as the exponential-gap case; asymptotically
    ``T(t) = alpha / t^{1/(q+1)}`` with the returned ``alpha``.
    """
    if q < 0:
        raise DomainError("q must be non-negative")
    if epsilon <= 0 or control_final <= 0 or p <= 0:
        raise DomainError("poly schedule needs eps, T_final, p > 0")
    if T_max_cap is None:
        T_max_cap = 20.0 * p * n_sites
    if control_final >= T_max_cap:
        raise DomainError("T_final must be below T_max_cap")
    a = 2.0 * epsilon / (p * n_sites ** (1.0 + q))
    k = 1.0 + q
    total = (control_final ** (-k) - T_max_cap ** (-k)) / (k * a)
    alpha = (k * a) ** (-1.0 / k)
    return PolySchedule(POLY, epsilon, n_sites, T_max_cap, control_final, total,
                        {"q": q, "p": p, "a": a, "alpha": alpha, "T_max_cap": T_max_cap})


def reintegrate_schedule(schedule: Schedule, times: np.ndarray, rtol: float = 1e-11) -> np.ndarray:
    """Numerically integrate the schedule ODE (independent of the closed form)."""
    times = np.asarray(times, dtype=float) * schedule.time_scale
    t0, lam0 = 0.0, schedule.control_start
    if isinstance(schedule, SASchedule):
        t0 = schedule.constants["t_clamp"]
    out = np.full(times.shape, lam0)
    mask = times > t0
    if mask.any():
        # integrate in log-time: the paths span many decades of t
        s0 = math.log1p(t0)

        def rhs(s, y):
            return [schedule.ode_rhs(y[0]) * math.exp(s)]

        sol = solve_ivp(rhs, (s0, math.log1p(times[mask].max())), [lam0], method="DOP853",
                        t_eval=np.log1p(times[mask]), rtol=rtol, atol=0.0)
        if not sol.success:
            raise NumericalError(f"schedule re-integration failed: {sol.message}")
        out[mask] = sol.y[0]
    return out


# ---------------------------------------------------------------------------
# Hamiltonian paths


class HamiltonianPath:
    """``H(lambda)`` and ``dH/dlambda`` for one family and one classical model.

    SA/POLY: lambda = T.  EQA: lambda = gamma at fixed ``beta``.  QA: lambda = gamma.
    """

    def __init__(self, model: ClassicalModel, family: str, point: Optional[ThermalPoint] = None):
        if family not in FAMILIES:
            raise ContractError(f"unknown family {family!r}")
        if family == EQA and point is None:
            raise ContractError("the EQA family needs the target thermal point")
        self.model = model
        self.family = family
        self.point = point
        self.qmap = QuantumMap(model)
        self.flips = self.qmap.flips

    @property
    def dim(self) -> int:
        return self.qmap.dim

    def parts(self, lam: float) -> Tuple[np.ndarray, float]:
        """``(diagonal, g)`` with ``H(lambda) = diag(diagonal) - g * flips``."""
        if self.family in (SA, POLY):
            beta = 1.0 / lam
            return self.qmap.boltzmann_field(beta), self.qmap.chi(beta)
        if self.family == EQA:
            return self.qmap.boltzmann_field(self.point.beta), lam
        return self.qmap.energy, lam

    def derivative_parts(self, lam: float) -> Tuple[np.ndarray, float]:
        if self.family in (SA, POLY):
            beta = 1.0 / lam
            dbeta = -beta * beta
            d = self.qmap.boltzmann_field_beta_derivative(beta) * dbeta
            g = -self.qmap.p * self.qmap.chi(beta) * dbeta
            return d, g
        return np.zeros(self.dim), 1.0

    def sparse(self, lam: float) -> sp.csr_matrix:
        d, g = self.parts(lam)
        return sp.diags(d, format="csr") - g * self.flips

    def dense(self, lam: float) -> np.ndarray:
        d, g = self.parts(lam)
        return np.diag(d) - g * self.flips.toarray()

    def derivative_dense(self, lam: float) -> np.ndarray:
        d, g = self.derivative_parts(lam)
        return np.diag(d) - g * self.flips.toarray()

    def reference_state(self, lam: float) -> np.ndarray:
        """Unnormalized |psi> entering the monitor (Gibbs vector for SA/POLY)."""
        if self.family in (SA, POLY):
            return gibbs_vector(self.model, ThermalPoint(1.0 / lam), normalized=False).real
        w, v = np.linalg.eigh(self.dense(lam))
        return positive_gauge(v[:, 0])


def _monitor_from_spectrum(path: HamiltonianPath, lam: float, rate: float,
                           w: np.ndarray, v: np.ndarray) -> float:
    if rate == 0.0:
        return 0.0
    psi = path.reference_state(lam)
    dh = path.derivative_dense(lam)
    amps = v[:, 1:].T @ (dh @ psi)
    gaps = w[1:] - w[0]
    return float(np.max(np.abs(amps) / gaps ** 2) / np.linalg.norm(psi) * abs(rate))


def adiabatic_monitor(model: ClassicalModel, family: str, lam: float, rate: float,
                      point: Optional[ThermalPoint] = None) -> float:
    """``max_m |<psi_m| dH/dlambda |psi>| / (Delta_m^2 ||psi||) * |d lambda/dt|``.

    For SA ``|psi>`` is the unnormalized Gibbs vector and ``||psi|| = sqrt(Z)``.
    """
    path = HamiltonianPath(model, family, point)
    if path.dim > DENSE_CAP:
        raise CapacityError(f"monitor needs a dense spectrum; dim {path.dim} > {DENSE_CAP}")
    w, v = np.linalg.eigh(path.dense(lam))
    return _monitor_from_spectrum(path, lam, rate, w, v)


@dataclass(frozen=True)
class CommutatorReport:
    residual: float
    per_state_max_deviation: float
    per_state_tolerance: float
    max_bound_ratio: float

    @property
    def passed(self) -> bool:
        return (self.residual <= 1e-9 and self.per_state_max_deviation <= self.per_state_tolerance
                and self.max_bound_ratio <= 1.0 + 1e-12)


def commutator_residual(model: ClassicalModel, point: ThermalPoint) -> CommutatorReport:
    """Check that ``-beta H/2`` generates the temperature translations of ``|psi(T)>``.

    Returns the residual of ``dH_q/dT |psi> = [d(-beta H/2)/dT, H_q] |psi>`` (relative
    to ``||psi||``), the worst per-state deviation of
    ``|<m|dH_q/dT|psi>| / Delta_m = |<m|H|psi>| / (2T^2)`` (tolerance
    ``1e-8 * ||H|| * ||psi||``, both sides being linear in ``psi``) and the largest
    ``|<m|H|psi>| / (pN sqrt(Z))``.
    """
    path = HamiltonianPath(model, SA)
    if path.dim > DENSE_CAP:
        raise CapacityError(f"dim {path.dim} > {DENSE_CAP}")
    t = point.temperature
    beta = point.beta
    energy = path.qmap.energy
    hq = path.dense(t)
    psi = gibbs_vector(model, point, normalized=False).real
    norm = np.linalg.norm(psi)
    lhs = path.derivative_dense(t) @ psi
    gen = 0.5 * beta * beta * energy  # d(-beta H/2)/dT
    rhs = gen * (hq @ psi) - hq @ (gen * psi)
    residual = float(np.linalg.norm(lhs - rhs) / norm)

    w, v = np.linalg.eigh(hq)
    gaps = w[1:] - w[0]
    left = np.abs(v[:, 1:].T @ lhs) / gaps
    h_elems = np.abs(v[:, 1:].T @ (energy * psi))
    right = h_elems / (2.0 * t * t)
    h_norm = float(np.max(np.abs(energy))) if energy.size else 0.0
    dev = float(np.max(np.abs(left - right))) if gaps.size else 0.0
    pn = path.qmap.p * model.n_sites
    if h_elems.size and h_elems.max() > 0:
        ratio = float(h_elems.max() / (pn * norm)) if pn > 0 else math.inf
    else:
        ratio = 0.0
    return CommutatorReport(residual, dev, 1e-8 * h_norm * norm, ratio)


# ---------------------------------------------------------------------------
# propagation


@dataclass(frozen=True)
class IntegratorConfig:
    tol: float = 1e-8
    max_step: Optional[float] = None
    n_samples: int = 500
    track_fidelity: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise DomainError("integrator tolerance must be positive")
        if self.n_samples < 1:
            raise DomainError("need at least one trace sample")


TRACE_COLUMNS = ("t", "lambda", "gap", "fidelity", "energy", "monitor", "norm_drift")


@dataclass(frozen=True, eq=False)
class AnnealTrace:
    samples: np.ndarray  # shape (n, 7), columns TRACE_COLUMNS
    final_state: np.ndarray
    steps: int
    rejected: int

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, TRACE_COLUMNS.index(name)]

    @property
    def final_fidelity(self) -> float:
        return float(self.column("fidelity")[-1])

    @property
    def max_norm_drift(self) -> float:
        return float(np.max(self.column("norm_drift")))


# fourth-order commutator-free Magnus coefficients (two exponentials)
_C1, _C2 = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6
_A1, _A2 = (3 - 2 * math.sqrt(3)) / 12, (3 + 2 * math.sqrt(3)) / 12


class _Stepper:
    def __init__(self, path: HamiltonianPath, schedule: Schedule):
        self.path = path
        self.schedule = schedule
        self.dense = path.dim <= 512
        if self.dense:
            self.flips = path.flips.toarray()

    def _parts(self, t):
        return self.path.parts(float(self.schedule.control(t)))

    def _expmv(self, d, g, dt, psi):
        if self.dense:
            w, v = np.linalg.eigh(np.diag(d) - g * self.flips)
            return v @ (np.exp(-1j * dt * w) * (v.T @ psi))
        h = sp.diags(d, format="csr") - g * self.path.flips
        return expm_multiply(-1j * dt * h, psi)

    def step(self, t, dt, psi):
        d1, g1 = self._parts(t + _C1 * dt)
        d2, g2 = self._parts(t + _C2 * dt)
        psi = self._expmv(_A2 * d1 + _A1 * d2, _A2 * g1 + _A1 * g2, dt, psi)
        return self._expmv(_A1 * d1 + _A2 * d2, _A1 * g1 + _A2 * g2, dt, psi)


def initial_ground_state(path: HamiltonianPath, lam: float) -> np.ndarray:
    if path.family in (SA, POLY):
        return gibbs_vector(path.model, ThermalPoint(1.0 / lam), normalized=True).amplitudes
    if path.dim <= DENSE_CAP:
        return positive_gauge(np.linalg.eigh(path.dense(lam))[1][:, 0]).astype(complex)
    from .operators import SparseOperator
    from .spectral import extremal_pair
    return extremal_pair(SparseOperator(path.sparse(lam), symmetric=True)).v0.astype(complex)


def propagate(model: ClassicalModel, family: str, schedule: Schedule,
              integrator: IntegratorConfig = IntegratorConfig(),
              point: Optional[ThermalPoint] = None) -> AnnealTrace:
    """Evolve the ground state at ``lambda(0)`` along ``schedule`` to ``total_time``."""
    path = HamiltonianPath(model, family, point)
    if integrator.track_fidelity and path.dim > DENSE_CAP:
        raise CapacityError(f"fidelity tracking needs dim <= {DENSE_CAP}, got {path.dim}")
    stepper = _Stepper(path, schedule)
    total = schedule.total_time
    psi = initial_ground_state(path, float(schedule.control(0.0)))
    sample_times = np.linspace(0.0, total, integrator.n_samples + 1)
    max_step = integrator.max_step or (total / integrator.n_samples if total > 0 else 1.0)
    tol = integrator.tol

    rows = []

    def record(t, psi):
        lam = float(schedule.control(t))
        nd = abs(np.linalg.norm(psi) - 1.0)
        if integrator.track_fidelity:
            h = path.dense(lam)
            w, v = np.linalg.eigh(h)
            fid = float(abs(np.vdot(v[:, 0], psi)) ** 2)
            energy = float(np.vdot(psi, h @ psi).real)
            mon = _monitor_from_spectrum(path, lam, float(schedule.rate(t)), w, v)
            rows.append((t, lam, w[1] - w[0], min(fid, 1.0), energy, mon, nd))
        else:
            energy = float(np.vdot(psi, path.sparse(lam) @ psi).real)
            rows.append((t, lam, math.nan, math.nan, energy, math.nan, nd))

    record(0.0, psi)
    t, dt = 0.0, max_step
    steps = rejected = 0
    for target in sample_times[1:]:
        while t < target:
            h = min(dt, max_step, target - t)
            if h <= 1e-14 * max(1.0, target):
                raise NumericalError(f"step size underflow at t={t:.6g}")
            full = stepper.step(t, h, psi)
            half = stepper.step(t + 0.5 * h, 0.5 * h, stepper.step(t, 0.5 * h, psi))
            err = float(np.linalg.norm(full - half)) / 15.0
            if err <= tol:
                t = target if target - t - h <= 1e-15 * max(1.0, target) else t + h
                psi = half
                steps += 1
            else:
                rejected += 1
            fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * (tol / err) ** 0.2))
            dt = h * fac
        record(t, psi)
    return AnnealTrace(np.array(rows, dtype=float), psi, steps, rejected)
