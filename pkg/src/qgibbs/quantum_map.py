"""Quantum Hamiltonians whose ground state is the classical Gibbs state.

For a classical model with energy ``E`` and local fields ``H_j`` the
simulated-annealing family is::

    H_q(T) = chi * sum_j (exp(beta H_j) - sigma_x^j),   chi = exp(-beta p)

and the extended quantum-annealing family is::

    H~_q(gamma) = chi * sum_j exp(beta H_j) - gamma * sum_j X_j

Both annihilate ``exp(-beta E / 2)`` (the latter at ``gamma = chi``).
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .classical import (ENUMERATION_CAP, KRONECKER, ClassicalModel, ThermalPoint,
                        energy_table, local_hamiltonian, local_hamiltonian_on_support,
                        reflection_ranks)
from .errors import ContractError, DomainError
from .operators import (DiagonalOperator, SparseOperator, diag_exp, ising_decompose)

SUPPORT_CAP = 2 ** 20


@dataclass(frozen=True)
class MapParams:
    p: float
    chi: float
    beta: float
    method: str = "enumeration"

    def __post_init__(self):
        if self.p < 0 or not 0 < self.chi <= 1:
            raise DomainError(f"invalid map parameters p={self.p}, chi={self.chi}")


@functools.lru_cache(maxsize=256)
def field_scale(model: ClassicalModel, support_cap: int = SUPPORT_CAP) -> Tuple[float, str]:
    """``p = max_j max_sigma |H_j[sigma]|`` and the method used to obtain it.

    ``H_j`` only depends on the sites that share a term with ``j``, so the
    maximum is found exactly by enumerating each support.  A support too large
    to enumerate falls back to the coupling-sum upper bound.
    """
    p, method = 0.0, "enumeration"
    vmax = float(np.max(np.abs(ClassicalModel(1, (), model.spin).level_values())))
    for j in range(model.n_sites):
        support = model.support(j)
        if model.n_levels ** len(support) <= support_cap:
            _, table = local_hamiltonian_on_support(model, j)
            pj = float(np.max(np.abs(table))) if table.size else 0.0
        else:
            method = "coupling-bound"
            if model.energy_kind == KRONECKER:
                pj = sum(abs(t.coeff) for t in model.terms_at(j))
            else:
                pj = sum(abs(t.coeff) * vmax ** len(t.sites) for t in model.terms_at(j))
        p = max(p, pj)
    return p, method


def compute_map_params(model: ClassicalModel, point: ThermalPoint) -> MapParams:
    p, method = field_scale(model)
    return MapParams(p=p, chi=math.exp(-point.beta * p), beta=point.beta, method=method)


class QuantumMap:
    """Full-basis tables for one classical model, shared by all Hamiltonian builds.

    Holds ``E``, every ``H_j`` and the flip operator ``sum_j X_j``; the
    temperature and field enter only through cheap diagonal exponentials.
    """

    def __init__(self, model: ClassicalModel, cap: int = ENUMERATION_CAP):
        model.check_capacity(cap)
        self.model = model
        self.energy = energy_table(model, cap)
        self.local_fields = np.array(
            [local_hamiltonian(model, j, cap).entries for j in range(model.n_sites)])
        self.p, self.p_method = field_scale(model)
        dim = model.dim
        rows = np.tile(np.arange(dim), model.n_sites)
        cols = np.concatenate([reflection_ranks(model, j) for j in range(model.n_sites)])
        self.flips = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(dim, dim))

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def n_sites(self) -> int:
        return self.model.n_sites

    def chi(self, beta: float) -> float:
        return math.exp(-beta * self.p)

    def params(self, beta: float) -> MapParams:
        return MapParams(self.p, self.chi(beta), beta, self.p_method)

    def boltzmann_field(self, beta: float) -> np.ndarray:
        """``chi * sum_j exp(beta H_j)`` as a diagonal table (no overflow for beta->inf)."""
        return np.exp(beta * (self.local_fields - self.p)).sum(axis=0)

    def boltzmann_field_beta_derivative(self, beta: float) -> np.ndarray:
        """d/dbeta of ``boltzmann_field``."""
        return ((self.local_fields - self.p) * np.exp(beta * (self.local_fields - self.p))).sum(axis=0)

    def _require_spin_half(self, what: str):
        if self.model.n_levels != 2:
            raise ContractError(f"{what} is defined for spin-1/2 models only")

    def sa(self, beta: float) -> SparseOperator:
        self._require_spin_half("the simulated-annealing family")
        chi = self.chi(beta)
        return SparseOperator(sp.diags(self.boltzmann_field(beta), format="csr") - chi * self.flips,
                              symmetric=True)

    def eqa(self, beta: float, gamma: float) -> SparseOperator:
        return SparseOperator(sp.diags(self.boltzmann_field(beta), format="csr") - gamma * self.flips,
                              symmetric=True)

    def plain_qa(self, gamma: float) -> SparseOperator:
        self._require_spin_half("the plain quantum-annealing family")
        return SparseOperator(sp.diags(self.energy, format="csr") - gamma * self.flips,
                              symmetric=True)


def _beta(point: ThermalPoint) -> float:
    if not isinstance(point, ThermalPoint):
        raise ContractError("expected a ThermalPoint")
    return point.beta


def build_sa_hamiltonian(model: ClassicalModel, point: ThermalPoint) -> SparseOperator:
    return QuantumMap(model).sa(_beta(point))


def build_eqa_hamiltonian(model: ClassicalModel, point: ThermalPoint, gamma: float) -> SparseOperator:
    """Extended-QA operator; spin-1/2 uses sigma_x, spin-s the anti-diagonal X."""
    if not (math.isfinite(gamma) and gamma > 0):
        raise DomainError(f"transverse field must be positive, got {gamma}")
    return QuantumMap(model).eqa(_beta(point), gamma)


def build_plain_qa(model: ClassicalModel, gamma: float) -> SparseOperator:
    if not (math.isfinite(gamma) and gamma >= 0):
        raise DomainError(f"transverse field must be non-negative, got {gamma}")
    return QuantumMap(model).plain_qa(gamma)


# ---------------------------------------------------------------------------
# gap lower bounds


@dataclass(frozen=True)
class GapBound:
    value: float
    family: str
    inputs: Dict[str, float] = field(default_factory=dict)


def gap_bound_sa(n_sites: int, beta: float, p: float) -> GapBound:
    if n_sites < 1 or beta <= 0 or p < 0:
        raise DomainError("gap_bound_sa needs N >= 1, beta > 0, p >= 0")
    value = 2.0 * math.sqrt(2.0 * math.pi * n_sites) * math.exp(-(beta * p + 1.0) * n_sites)
    return GapBound(value, "SA", {"N": n_sites, "beta": beta, "p": p})


def gap_bound_qa(n_sites: int, c: float, gamma: float) -> GapBound:
    if not 0 < gamma < c:
        raise DomainError(f"QA gap bound requires 0 < gamma < c (gamma={gamma}, c={c})")
    value = (2.0 * math.sqrt(2.0 * math.pi * n_sites) * math.exp(-n_sites)
             * (gamma / (1.0 + c)) ** n_sites)
    return GapBound(value, "QA", {"N": n_sites, "c": c, "gamma": gamma})


# ---------------------------------------------------------------------------
# closed-form validation and diagnostics


@dataclass(frozen=True)
class ClosedFormReport:
    beta: float
    coupling: float
    n_sites: int
    x: float
    y: float
    max_deviation: float
    passed: bool


def ising_closed_form_check(beta: float, coupling: float, n_sites: int,
                            tol: float = 1e-12) -> ClosedFormReport:
    """Compare the expansion of ``exp(beta H_j)`` on a ring with x^2, xy, y^2.

    Each site's ``exp(beta H_j)`` must equal
    ``x^2 + xy (s_{j-1}s_j + s_j s_{j+1}) + y^2 s_{j-1}s_{j+1}`` with
    ``x = cosh(beta J)``, ``y = sinh(beta J)``.
    """
    if n_sites < 4:
        raise ContractError("closed-form check needs a ring of at least 4 sites")
    model = ClassicalModel.ring(n_sites, coupling)
    x, y = math.cosh(beta * coupling), math.sinh(beta * coupling)
    worst = 0.0
    for j in range(n_sites):
        poly = ising_decompose(diag_exp(local_hamiltonian(model, j), beta), n_sites)
        left, right = (j - 1) % n_sites, (j + 1) % n_sites
        expected = np.zeros(1 << n_sites)
        expected[0] = x * x
        expected[(1 << left) | (1 << j)] = x * y
        expected[(1 << j) | (1 << right)] = x * y
        expected[(1 << left) | (1 << right)] = y * y
        worst = max(worst, float(np.max(np.abs(poly.coefficients - expected))))
    return ClosedFormReport(beta, coupling, n_sites, x, y, worst, worst <= tol)


@dataclass(frozen=True)
class MarkovReport:
    max_row_sum_deviation: float
    min_offdiagonal: float
    min_diagonal: float
    detailed_balance_residual: float

    @property
    def passed(self) -> bool:
        return self.max_row_sum_deviation <= 1e-10 and self.min_offdiagonal >= 0.0


def recover_markov_matrix(model: ClassicalModel, point: ThermalPoint) -> Tuple[SparseOperator, MarkovReport]:
    """Transition matrix similar to ``1 - H_q(T)``.

    Returned in row-stochastic orientation, ``P = e^{beta H/2} (1 - H_q) e^{-beta H/2}``,
    so ``P[a, b]`` is the probability of moving from ``a`` to ``b``.  Its transpose
    is ``e^{-beta H/2} (1 - H_q) e^{beta H/2}``.
    """
    qmap = QuantumMap(model)
    beta = _beta(point)
    one_minus = (sp.identity(qmap.dim, format="csr") - qmap.sa(beta).matrix).tocoo()
    e = qmap.energy
    data = one_minus.data * np.exp(0.5 * beta * (e[one_minus.row] - e[one_minus.col]))
    mat = sp.csr_matrix((data, (one_minus.row, one_minus.col)), shape=one_minus.shape)
    markov = SparseOperator(mat)

    row_dev = float(np.max(np.abs(np.asarray(mat.sum(axis=1)).ravel() - 1.0)))
    off = mat - sp.diags(mat.diagonal())
    off.eliminate_zeros()
    min_off = float(off.data.min()) if off.nnz else 0.0
    pi = np.exp(-beta * (e - e.min()))
    pi /= pi.sum()
    flux = sp.diags(pi) @ mat
    db = abs(flux - flux.T)
    db_res = float(db.max()) if db.nnz else 0.0
    return markov, MarkovReport(row_dev, min_off, float(mat.diagonal().min()), db_res)


def potts_polynomial_discrepancy(coupling: float = 1.0) -> Dict[str, object]:
    """Per-bond energies of the spin-1 operator polynomial versus ``J delta``.

    Evaluates ``J/2 [S S'(1 + S S') - 2(S^2 + S'^2)]`` on every pair of values and
    reports whether it differs from ``J delta(S, S')`` by a constant.  Diagnostic
    only; the kronecker-delta energy is what the model classes use.
    """
    values = (1, 0, -1)
    poly, delta = {}, {}
    for a in values:
        for b in values:
            poly[(a, b)] = coupling / 2 * (a * b * (1 + a * b) - 2 * (a * a + b * b))
            delta[(a, b)] = coupling * (a == b)
    shifts = {k: poly[k] - delta[k] for k in poly}
    spread = max(shifts.values()) - min(shifts.values())
    return {"polynomial": poly, "delta": delta, "max_shift_spread": spread,
            "consistent": spread < 1e-12}
