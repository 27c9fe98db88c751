"""Diagonal and sparse operators over the configuration basis.

Basis convention: a configuration of ``n`` sites with ``d = 2s+1`` levels each
has rank ``sum_j level_j * d**j`` (site 0 least significant).  Level 0 is the
largest spin value, so for spin-1/2 level 0 is sigma = +1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, NumericalError

SYMMETRY_ATOL = 1e-14


@dataclass(frozen=True, eq=False)
class DiagonalOperator:
    """Real diagonal operator stored as one entry per configuration rank."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 1:
            raise ContractError("diagonal entries must be one-dimensional")
        if not np.all(np.isfinite(entries)):
            raise NumericalError("diagonal operator has non-finite entries")
        object.__setattr__(self, "entries", entries)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def to_sparse(self) -> "SparseOperator":
        return SparseOperator(sp.diags(self.entries, format="csr"), symmetric=True)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Row-compressed real matrix; ``symmetric`` is verified on construction."""

    matrix: sp.csr_matrix
    symmetric: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise ContractError(f"operator must be square, got {m.shape}")
        m.sum_duplicates()
        m.sort_indices()
        if not np.all(np.isfinite(m.data)):
            raise NumericalError("sparse operator has non-finite entries")
        if self.symmetric:
            diff = abs(m - m.T)
            if diff.nnz and diff.max() > SYMMETRY_ATOL:
                raise ContractError(
                    f"operator flagged symmetric but |A - A^T|_max = {diff.max():.3e}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def row(self, k: int) -> list:
        """Return row ``k`` as a list of ``(column, value)`` pairs."""
        lo, hi = self.matrix.indptr[k], self.matrix.indptr[k + 1]
        return list(zip(self.matrix.indices[lo:hi].tolist(), self.matrix.data[lo:hi].tolist()))

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.matrix + other.matrix,
                              symmetric=self.symmetric and other.symmetric)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.matrix - other.matrix,
                              symmetric=self.symmetric and other.symmetric)

    def __mul__(self, scalar: float) -> "SparseOperator":
        return SparseOperator(self.matrix * float(scalar), symmetric=self.symmetric)

    __rmul__ = __mul__

    def __matmul__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.matrix @ other.matrix)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Complex amplitude vector indexed by configuration rank."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.ndim != 1:
            raise ContractError("amplitudes must be one-dimensional")
        if not np.all(np.isfinite(amps)):
            raise NumericalError("state vector has non-finite amplitudes")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise ContractError("cannot normalize a zero vector")
        return StateVector(self.amplitudes / n)

    @property
    def real(self) -> np.ndarray:
        return self.amplitudes.real

    def vdot(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    @classmethod
    def basis(cls, rank: int, dim: int) -> "StateVector":
        amps = np.zeros(dim, dtype=complex)
        amps[rank] = 1.0
        return cls(amps)

    @classmethod
    def uniform(cls, dim: int) -> "StateVector":
        return cls(np.full(dim, 1.0 / np.sqrt(dim), dtype=complex))


Operator = Union[SparseOperator, DiagonalOperator]


def n_levels_for(spin: float) -> int:
    twice = 2.0 * spin
    if spin <= 0 or abs(twice - round(twice)) > 1e-12:
        raise ContractError(f"spin must be a positive half-integer, got {spin}")
    return int(round(twice)) + 1


def spin_matrices(spin: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(S_z, S_+, S_-)`` for one site in the level basis (level 0 = +s)."""
    d = n_levels_for(spin)
    m = spin - np.arange(d)
    sz = np.diag(m)
    sp_ = np.zeros((d, d))
    for k in range(1, d):
        # level k has m = s - k; S_+ raises it to level k - 1
        sp_[k - 1, k] = np.sqrt(spin * (spin + 1) - m[k] * (m[k] + 1))
    return sz, sp_, sp_.T.copy()


def single_site_matrix(kind: str, spin: float = 0.5) -> np.ndarray:
    d = n_levels_for(spin)
    if kind in ("sigma_x", "sigma_z") and d != 2:
        raise ContractError(f"{kind} is defined for spin 1/2 only (got spin {spin})")
    if kind == "sigma_x":
        return np.array([[0.0, 1.0], [1.0, 0.0]])
    if kind == "sigma_z":
        return np.array([[1.0, 0.0], [0.0, -1.0]])
    if kind == "S_z":
        return spin_matrices(spin)[0]
    if kind == "X":
        return np.fliplr(np.eye(d))
    raise ContractError(f"unknown site operator kind {kind!r}")


def embed_site_operator(kind: str, j: int, n_sites: int, spin: float = 0.5) -> SparseOperator:
    """Embed a one-site operator acting on site ``j`` of an ``n_sites`` register."""
    if not 0 <= j < n_sites:
        raise ContractError(f"site {j} out of range for {n_sites} sites")
    local = sp.csr_matrix(single_site_matrix(kind, spin))
    d = local.shape[0]
    # site 0 is the least significant digit, i.e. the rightmost kron factor
    left = sp.identity(d ** (n_sites - 1 - j), format="csr")
    right = sp.identity(d ** j, format="csr")
    return SparseOperator(sp.kron(sp.kron(left, local), right, format="csr"), symmetric=True)


def apply(op: Operator, v: StateVector) -> StateVector:
    if op.dim != v.dim:
        raise ContractError(f"dimension mismatch: operator {op.dim}, vector {v.dim}")
    if isinstance(op, DiagonalOperator):
        return StateVector(op.entries * v.amplitudes)
    return StateVector(op.matrix @ v.amplitudes)


def diag_exp(d: DiagonalOperator, scale: float) -> DiagonalOperator:
    """Entrywise ``exp(scale * d)``; overflow is reported, never returned as inf."""
    arg = scale * d.entries
    with np.errstate(over="ignore"):
        out = np.exp(arg)
    bad = ~np.isfinite(out)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise NumericalError(
            f"exp overflow at rank {k}: scale*entry = {arg[k]:.6g}")
    return DiagonalOperator(out)


def walsh_hadamard(table: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform of a length ``2**n`` table."""
    x = np.array(table, dtype=float, copy=True)
    n = x.shape[0]
    if n == 0 or n & (n - 1):
        raise ContractError(f"table length {n} is not a power of two")
    h = 1
    while h < n:
        y = x.reshape(-1, 2, h)
        a = y[:, 0, :].copy()
        b = y[:, 1, :]
        y[:, 0, :] = a + b
        y[:, 1, :] = a - b
        h *= 2
    return x


@dataclass(frozen=True, eq=False)
class IsingPolynomial:
    """Expansion ``d = sum_S c_S prod_{i in S} sigma_z^i`` of a diagonal operator.

    ``coefficients`` is indexed by the subset bitmask ``S`` (bit ``i`` = site ``i``)
    and is kept in full so that recomposition is exact.  The bucketed views drop
    coefficients with ``|c| <= cutoff``.
    """

    n_sites: int
    coefficients: np.ndarray
    cutoff: float = 1e-13

    @property
    def constant(self) -> float:
        return float(self.coefficients[0])

    def _bucket(self, keep) -> Dict[Tuple[int, ...], float]:
        out = {}
        for mask in np.flatnonzero(np.abs(self.coefficients) > self.cutoff):
            sites = tuple(i for i in range(self.n_sites) if mask >> i & 1)
            if sites and keep(len(sites)):
                out[sites] = float(self.coefficients[mask])
        return out

    @property
    def pair_terms(self) -> Dict[Tuple[int, int], float]:
        return self._bucket(lambda k: k == 2)

    @property
    def higher_terms(self) -> Dict[Tuple[int, ...], float]:
        """Non-pair terms: single-site fields and products of three or more."""
        return self._bucket(lambda k: k != 2)

    def coefficient(self, sites) -> float:
        mask = 0
        for i in sites:
            mask |= 1 << i
        return float(self.coefficients[mask])

    def recompose(self) -> DiagonalOperator:
        # the unnormalized transform is its own inverse up to 2**n
        return DiagonalOperator(walsh_hadamard(self.coefficients))


def ising_decompose(d: DiagonalOperator, n_sites: int, cutoff: float = 1e-13) -> IsingPolynomial:
    if d.dim != 1 << n_sites:
        raise ContractError(f"dimension {d.dim} is not 2**{n_sites}")
    coeffs = walsh_hadamard(d.entries) / d.dim
    return IsingPolynomial(n_sites, coeffs, cutoff)
