"""Classical spin models on finite graphs and exhaustive-enumeration oracles.

Units: k_B = 1, so ``beta = 1 / T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import CapacityError, ContractError, DomainError
from .operators import DiagonalOperator, StateVector, n_levels_for

ENUMERATION_CAP = 2 ** 24

MULTILINEAR = "multilinear"
KRONECKER = "kronecker"


@dataclass(frozen=True)
class CouplingTerm:
    sites: Tuple[int, ...]
    coeff: float

    def __post_init__(self):
        sites = tuple(int(s) for s in self.sites)
        if not sites:
            raise ContractError("a coupling term needs at least one site")
        if any(b <= a for a, b in zip(sites, sites[1:])) or sites[0] < 0:
            raise ContractError(f"term sites must be strictly increasing and >= 0: {sites}")
        if not math.isfinite(self.coeff):
            raise ContractError(f"non-finite coefficient {self.coeff}")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "coeff", float(self.coeff))


@dataclass(frozen=True)
class ClassicalModel:
    """Energy functional ``E[sigma]`` given as an explicit list of terms.

    ``energy_kind`` is ``"multilinear"`` (each term contributes
    ``coeff * prod sigma_i``) or ``"kronecker"`` (Potts bonds, each pair term
    contributes ``coeff * delta(level_i, level_j)``).
    """

    n_sites: int
    terms: Tuple[CouplingTerm, ...] = ()
    spin: float = 0.5
    energy_kind: str = MULTILINEAR

    def __post_init__(self):
        if self.n_sites < 1:
            raise ContractError("a model needs at least one site")
        n_levels_for(self.spin)
        terms = tuple(t if isinstance(t, CouplingTerm) else CouplingTerm(*t) for t in self.terms)
        for t in terms:
            if t.sites[-1] >= self.n_sites:
                raise ContractError(f"term {t.sites} references a site >= {self.n_sites}")
        if self.energy_kind not in (MULTILINEAR, KRONECKER):
            raise ContractError(f"unknown energy kind {self.energy_kind!r}")
        if self.energy_kind == KRONECKER and any(len(t.sites) != 2 for t in terms):
            raise ContractError("kronecker-delta energies take pair terms only")
        object.__setattr__(self, "terms", terms)

    # -- construction shortcuts -------------------------------------------
    @classmethod
    def chain(cls, n_sites: int, coupling: float, *, periodic: bool = False,
              spin: float = 0.5, energy_kind: str = MULTILINEAR,
              field: float = 0.0) -> "ClassicalModel":
        bonds = [(j, j + 1) for j in range(n_sites - 1)]
        if periodic and n_sites > 2:
            bonds.append((0, n_sites - 1))
        elif periodic and n_sites == 2:
            # two-site ring: both bonds join the same pair
            bonds.append((0, 1))
        terms = [CouplingTerm(b, coupling) for b in bonds]
        if field:
            terms += [CouplingTerm((j,), field) for j in range(n_sites)]
        return cls(n_sites, tuple(terms), spin, energy_kind)

    @classmethod
    def ring(cls, n_sites: int, coupling: float, **kw) -> "ClassicalModel":
        return cls.chain(n_sites, coupling, periodic=True, **kw)

    # -- basis ----------------------------------------------------------------
    @property
    def n_levels(self) -> int:
        return n_levels_for(self.spin)

    @property
    def dim(self) -> int:
        return self.n_levels ** self.n_sites

    def level_values(self) -> np.ndarray:
        """Classical value carried by each level index (+1/-1 for spin-1/2)."""
        if self.n_levels == 2:
            return np.array([1.0, -1.0])
        return self.spin - np.arange(self.n_levels)

    def check_capacity(self, cap: int = ENUMERATION_CAP) -> None:
        if self.dim > cap:
            raise CapacityError(
                f"basis of {self.n_levels}^{self.n_sites} = {self.dim} exceeds cap {cap}")

    def terms_at(self, j: int) -> Tuple[CouplingTerm, ...]:
        return tuple(t for t in self.terms if j in t.sites)

    def support(self, j: int) -> Tuple[int, ...]:
        """Sites sharing at least one term with site ``j`` (``j`` included)."""
        s = {j}
        for t in self.terms_at(j):
            s.update(t.sites)
        return tuple(sorted(s))

    def restricted(self, sites: Sequence[int], terms: Iterable[CouplingTerm]) -> "ClassicalModel":
        """Relabel ``terms`` onto a sub-register made of ``sites`` (in that order)."""
        index = {s: k for k, s in enumerate(sites)}
        new = [CouplingTerm(tuple(sorted(index[s] for s in t.sites)), t.coeff) for t in terms]
        return ClassicalModel(len(sites), tuple(new), self.spin, self.energy_kind)


@dataclass(frozen=True)
class SpinConfig:
    """Configuration as level indices; ``rank`` uses site 0 as least significant digit."""

    levels: Tuple[int, ...]
    n_levels: int = 2

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        if any(not 0 <= v < self.n_levels for v in levels):
            raise ContractError(f"level indices must lie in [0, {self.n_levels - 1}]: {levels}")
        object.__setattr__(self, "levels", levels)

    @property
    def rank(self) -> int:
        r = 0
        for v in reversed(self.levels):
            r = r * self.n_levels + v
        return r

    @classmethod
    def from_rank(cls, rank: int, n_sites: int, n_levels: int = 2) -> "SpinConfig":
        if not 0 <= rank < n_levels ** n_sites:
            raise ContractError(f"rank {rank} out of range")
        levels = []
        for _ in range(n_sites):
            rank, v = divmod(rank, n_levels)
            levels.append(v)
        return cls(tuple(levels), n_levels)

    @classmethod
    def from_spins(cls, spins: Sequence[int]) -> "SpinConfig":
        """Spin-1/2 shortcut: +1 -> level 0, -1 -> level 1."""
        if any(s not in (1, -1) for s in spins):
            raise ContractError(f"spin-1/2 values must be +1/-1: {spins}")
        return cls(tuple(0 if s == 1 else 1 for s in spins), 2)


@dataclass(frozen=True)
class ThermalPoint:
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise DomainError(f"beta must be positive and finite, got {self.beta}")

    @property
    def temperature(self) -> float:
        return 1.0 / self.beta

    @classmethod
    def from_temperature(cls, temperature: float) -> "ThermalPoint":
        if not (math.isfinite(temperature) and temperature > 0):
            raise DomainError(f"temperature must be positive and finite, got {temperature}")
        return cls(1.0 / temperature)


@dataclass(frozen=True, eq=False)
class DiagonalObservable:
    """Observable diagonal in the configuration basis.

    kind: ``energy``, ``magnetization`` (sum of site values), ``pair`` (product
    of the values at ``sites``), ``constant`` or ``custom`` (explicit ``table``).
    """

    kind: str
    sites: Tuple[int, ...] = ()
    table: Optional[np.ndarray] = field(default=None, repr=False)
    value: float = 1.0

    @classmethod
    def pair(cls, i: int, j: int) -> "DiagonalObservable":
        return cls("pair", (i, j))

    def evaluate(self, model: ClassicalModel) -> np.ndarray:
        if self.kind == "energy":
            return energy_table(model)
        if self.kind == "magnetization":
            vals = model.level_values()
            return sum(vals[_site_levels(model, j)] for j in range(model.n_sites))
        if self.kind == "pair":
            vals = model.level_values()
            out = np.ones(model.dim)
            for j in self.sites:
                out = out * vals[_site_levels(model, j)]
            return out
        if self.kind == "constant":
            return np.full(model.dim, float(self.value))
        if self.kind == "custom":
            table = np.asarray(self.table, dtype=float)
            if table.shape != (model.dim,):
                raise ContractError(f"custom table has shape {table.shape}, basis is {model.dim}")
            return table
        raise ContractError(f"unknown observable kind {self.kind!r}")


# ---------------------------------------------------------------------------
# enumeration


def _site_levels(model: ClassicalModel, j: int) -> np.ndarray:
    ranks = np.arange(model.dim, dtype=np.int64)
    return (ranks // model.n_levels ** j) % model.n_levels


def _terms_table(model: ClassicalModel, terms: Iterable[CouplingTerm]) -> np.ndarray:
    vals = model.level_values()
    cache = {}

    def levels(j):
        if j not in cache:
            cache[j] = _site_levels(model, j)
        return cache[j]

    out = np.zeros(model.dim)
    for t in terms:
        if model.energy_kind == KRONECKER:
            i, j = t.sites
            out += t.coeff * (levels(i) == levels(j))
        else:
            prod = np.full(model.dim, t.coeff)
            for j in t.sites:
                prod = prod * vals[levels(j)]
            out += prod
    return out


def energy_table(model: ClassicalModel, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """``E[sigma]`` for every configuration, in rank order."""
    model.check_capacity(cap)
    return _terms_table(model, model.terms)


def evaluate_energy(model: ClassicalModel, config: SpinConfig) -> float:
    if len(config.levels) != model.n_sites or config.n_levels != model.n_levels:
        raise ContractError(
            f"configuration of {len(config.levels)} sites/{config.n_levels} levels "
            f"does not match model ({model.n_sites} sites/{model.n_levels} levels)")
    vals = model.level_values()
    e = 0.0
    for t in model.terms:
        if model.energy_kind == KRONECKER:
            i, j = t.sites
            e += t.coeff * (config.levels[i] == config.levels[j])
        else:
            e += t.coeff * math.prod(vals[config.levels[j]] for j in t.sites)
    return float(e)


def reflection_ranks(model: ClassicalModel, j: int) -> np.ndarray:
    """Rank permutation for ``R_j`` (level ``k`` -> ``2s - k`` at site ``j``)."""
    lv = _site_levels(model, j)
    stride = model.n_levels ** j
    return np.arange(model.dim, dtype=np.int64) + (model.n_levels - 1 - 2 * lv) * stride


def local_hamiltonian(model: ClassicalModel, j: int,
                      cap: int = ENUMERATION_CAP) -> DiagonalOperator:
    """``H_j[sigma] = (E[sigma] - E[R_j sigma]) / 2`` over the full basis.

    Terms not touching ``j`` are invariant under ``R_j`` and cancel, so only the
    terms containing ``j`` are evaluated.
    """
    if not 0 <= j < model.n_sites:
        raise ContractError(f"site {j} out of range")
    model.check_capacity(cap)
    e = _terms_table(model, model.terms_at(j))
    return DiagonalOperator(0.5 * (e - e[reflection_ranks(model, j)]))


def local_hamiltonian_on_support(model: ClassicalModel, j: int) -> Tuple[Tuple[int, ...], np.ndarray]:
    """``H_j`` tabulated only over the sites it depends on.

    Returns ``(support, table)`` where the table is indexed by the rank of the
    sub-configuration on ``support`` (same digit convention, in support order).
    """
    support = model.support(j)
    sub = model.restricted(support, model.terms_at(j))
    return support, local_hamiltonian(sub, support.index(j)).entries


def brute_thermal(model: ClassicalModel, point: ThermalPoint, obs: DiagonalObservable,
                  cap: int = ENUMERATION_CAP) -> Tuple[float, float]:
    """Partition function and thermal expectation by exhaustive enumeration."""
    e = energy_table(model, cap)
    w = np.exp(-point.beta * e)
    z = float(np.sum(w))
    if not (math.isfinite(z) and z > 0):
        raise DomainError(f"partition function not representable at beta={point.beta}")
    a = obs.evaluate(model)
    return z, float(np.sum(w * a) / z)


def gibbs_vector(model: ClassicalModel, point: ThermalPoint, normalized: bool = True,
                 cap: int = ENUMERATION_CAP) -> StateVector:
    """Amplitudes ``exp(-beta E / 2)``, optionally divided by ``sqrt(Z)``."""
    e = energy_table(model, cap)
    amps = np.exp(-0.5 * point.beta * e)
    if normalized:
        amps = amps / np.linalg.norm(amps)
    return StateVector(amps)


def flip_identity_residual(model: ClassicalModel, point: Optional[ThermalPoint] = None,
                           cap: int = ENUMERATION_CAP) -> float:
    """Max over sites and configurations of ``|E[R_j s] - (E[s] - 2 H_j[s])|``."""
    e = energy_table(model, cap)
    worst = 0.0
    for j in range(model.n_sites):
        hj = local_hamiltonian(model, j, cap).entries
        r = np.abs(e[reflection_ranks(model, j)] - (e - 2.0 * hj))
        worst = max(worst, float(r.max()))
    return worst


def random_model(rng: np.random.Generator, n_sites: int, max_arity: int = 3,
                 n_terms: Optional[int] = None) -> ClassicalModel:
    """Spin-1/2 multilinear model with random terms, coefficients uniform in [-1, 1]."""
    if n_terms is None:
        n_terms = int(rng.integers(n_sites, 2 * n_sites + 1))
    terms = []
    for _ in range(n_terms):
        arity = int(rng.integers(1, min(max_arity, n_sites) + 1))
        sites = tuple(sorted(rng.choice(n_sites, size=arity, replace=False).tolist()))
        terms.append(CouplingTerm(sites, float(rng.uniform(-1.0, 1.0))))
    return ClassicalModel(n_sites, tuple(terms))
