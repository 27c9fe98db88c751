"""Eigen-solvers and ground-state checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .classical import (ClassicalModel, DiagonalObservable, ThermalPoint, gibbs_vector)
from .errors import CapacityError, ContractError, NumericalError
from .operators import DiagonalOperator, SparseOperator, StateVector
from .quantum_map import QuantumMap

DENSE_CAP = 4096


@dataclass(frozen=True, eq=False)
class EigenSolution:
    energies: np.ndarray
    vectors: np.ndarray  # columns are eigenvectors
    residuals: np.ndarray

    def state(self, k: int) -> StateVector:
        return StateVector(self.vectors[:, k])

    @property
    def gap(self) -> float:
        return float(self.energies[1] - self.energies[0])


def _as_sparse(op) -> SparseOperator:
    return op.to_sparse() if isinstance(op, DiagonalOperator) else op


def dense_spectrum(op, cap: int = DENSE_CAP) -> EigenSolution:
    """Full spectrum of a real symmetric operator, energies ascending."""
    op = _as_sparse(op)
    if op.dim > cap:
        raise CapacityError(f"dense spectrum capped at dim {cap}, got {op.dim}")
    a = op.toarray()
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ContractError("dense_spectrum requires a symmetric operator")
    w, v = np.linalg.eigh(a)
    res = np.linalg.norm(a @ v - v * w, axis=0)
    return EigenSolution(w, v, res)


def positive_gauge(v: np.ndarray) -> np.ndarray:
    """Fix the global sign so the entry of largest magnitude is positive."""
    k = int(np.argmax(np.abs(v)))
    return v if v[k] >= 0 else -v


@dataclass(frozen=True, eq=False)
class ExtremalPair:
    e0: float
    v0: np.ndarray
    e1: float
    v1: np.ndarray
    residuals: tuple
    degenerate: bool
    matvecs: int

    @property
    def gap(self) -> float:
        return self.e1 - self.e0


class _Lanczos:
    """Restarted Lanczos for the lowest eigenpair orthogonal to ``locked`` vectors."""

    def __init__(self, matrix, krylov_dim: int):
        self.matrix = matrix
        self.dim = matrix.shape[0]
        self.krylov_dim = krylov_dim
        self.matvecs = 0

    def _project(self, w: np.ndarray, locked: List[np.ndarray]) -> np.ndarray:
        for u in locked:
            w = w - u * (u @ w)
        return w

    def lowest(self, start: np.ndarray, locked: List[np.ndarray], tol: float,
               max_restarts: int):
        v = self._project(start.astype(float), locked)
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            raise NumericalError("Lanczos start vector lies in the locked subspace")
        v /= nrm
        best = np.inf
        m = min(self.krylov_dim, self.dim - len(locked))
        for _ in range(max_restarts):
            basis = np.zeros((m + 1, self.dim))
            alpha = np.zeros(m)
            beta = np.zeros(m)
            basis[0] = v
            k_used = m
            for k in range(m):
                w = self.matrix @ basis[k]
                self.matvecs += 1
                w = self._project(w, locked)
                alpha[k] = basis[k] @ w
                # full reorthogonalization, applied twice
                for _ in range(2):
                    w = w - basis[:k + 1].T @ (basis[:k + 1] @ w)
                w = self._project(w, locked)
                beta[k] = np.linalg.norm(w)
                if beta[k] <= 1e-13 * max(1.0, abs(alpha[k])):
                    k_used = k + 1
                    break
                basis[k + 1] = w / beta[k]
            t = np.diag(alpha[:k_used]) + np.diag(beta[:k_used - 1], 1) + np.diag(beta[:k_used - 1], -1)
            theta, s = np.linalg.eigh(t)
            v = basis[:k_used].T @ s[:, 0]
            v = self._project(v, locked)
            v /= np.linalg.norm(v)
            hv = self.matrix @ v
            self.matvecs += 1
            energy = float(v @ hv)
            res = float(np.linalg.norm(hv - energy * v))
            best = min(best, res)
            if res <= tol or k_used < m:
                return energy, v, res
        raise NumericalError(f"Lanczos did not converge; best residual {best:.3e}")


def extremal_pair(op, tol: float = 1e-10, krylov_dim: int = 200,
                  max_restarts: int = 500) -> ExtremalPair:
    """Lowest two eigenpairs by restarted Lanczos with deflation.

    The ground search starts from the normalized all-ones vector; the second
    search is deflated against the converged ground vector and starts from a
    fixed pseudo-random vector so degenerate partners are not missed.
    """
    op = _as_sparse(op)
    if not op.symmetric:
        raise ContractError("extremal_pair requires a symmetric-flagged operator")
    if op.dim < 2:
        raise ContractError("extremal_pair needs dim >= 2")
    solver = _Lanczos(op.matrix, krylov_dim)
    ones = np.full(op.dim, 1.0 / np.sqrt(op.dim))
    e0, v0, r0 = solver.lowest(ones, [], tol, max_restarts)
    rng = np.random.default_rng(0x5EED)
    e1, v1, r1 = solver.lowest(rng.standard_normal(op.dim), [v0], tol, max_restarts)
    if e1 < e0:
        e0, v0, r0, e1, v1, r1 = e1, v1, r1, e0, v0, r0
    return ExtremalPair(e0, positive_gauge(v0), e1, v1, (r0, r1),
                        degenerate=(e1 - e0) <= 10 * tol, matvecs=solver.matvecs)


@dataclass(frozen=True)
class GroundStateReport:
    ground_energy: float
    gap: float
    overlap_with_gibbs: float
    positivity_min_entry: float
    degenerate: bool
    energy_tol: float = 1e-9
    overlap_tol: float = 1e-9
    state: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def passed(self) -> bool:
        return (abs(self.ground_energy) <= self.energy_tol
                and self.overlap_with_gibbs >= 1.0 - self.overlap_tol
                and self.positivity_min_entry > 0.0
                and not self.degenerate)


def verify_gibbs_ground(model: ClassicalModel, point: ThermalPoint,
                        tol: float = 1e-12) -> GroundStateReport:
    qmap = QuantumMap(model)
    pair = extremal_pair(qmap.sa(point.beta), tol=tol)
    psi = gibbs_vector(model, point, normalized=True).real
    overlap = min(1.0, float((pair.v0 @ psi) ** 2))
    return GroundStateReport(pair.e0, pair.gap, overlap, float(pair.v0.min()), pair.degenerate,
                             state=pair.v0)


def ground_expectation(state: StateVector, obs: DiagonalObservable,
                       model: Optional[ClassicalModel] = None) -> float:
    """``<v|A|v> / <v|v>`` for a diagonal observable."""
    if obs.kind == "custom":
        table = np.asarray(obs.table, dtype=float)
    elif model is None:
        raise ContractError(f"observable kind {obs.kind!r} needs the model to tabulate")
    else:
        table = obs.evaluate(model)
    if table.shape[0] != state.dim:
        raise ContractError(f"observable dim {table.shape[0]} != state dim {state.dim}")
    weights = np.abs(state.amplitudes) ** 2
    total = weights.sum()
    if total == 0.0:
        raise ContractError("zero-norm state")
    return float(weights @ table / total)


@dataclass(frozen=True)
class GroundSpaceReport:
    ground_energy: float
    multiplicity: int
    overlap: float  # squared norm of the projection of the unit vector onto the ground space
    gap_above: float


def ground_space_overlap(op, psi: np.ndarray, degeneracy_tol: float = 1e-9) -> GroundSpaceReport:
    """Projection of ``psi`` onto the lowest eigenspace of ``op`` (dense solve).

    Useful when the ground level is degenerate and a single eigenvector is not
    meaningful, as for the spin-1 reflection field which fixes the middle level.
    """
    sol = dense_spectrum(op)
    w = sol.energies
    mult = int(np.sum(w <= w[0] + degeneracy_tol))
    u = psi / np.linalg.norm(psi)
    proj = sol.vectors[:, :mult].T @ u
    gap = float(w[mult] - w[0]) if mult < w.size else float("inf")
    return GroundSpaceReport(float(w[0]), mult, min(1.0, float(proj @ proj)), gap)
