"""Path-integral Monte Carlo for the extended quantum-annealing Hamiltonian.

The quantum model ``chi sum_j exp(beta H_j) - gamma sum_j sigma_x^j`` of a 1D
nearest-neighbour Ising chain is Trotterized into an ``N x L`` classical
lattice with effective action::

    S[s] = dtau * sum_k sum_{i<j} Jt_ij s_ik s_jk - xi * sum_k sum_i s_ik s_i(k+1)

where ``dtau = beta_tilde / L``, ``Jt`` are the pair coefficients of
``chi sum_j exp(beta H_j)`` and ``xi = ln coth(dtau * field) / 2``.  Slices are
periodic.  The Boltzmann weight is ``exp(-S)``, so adjacent slices align.
"""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numba
import numpy as np

from .anneal import Schedule
from .classical import MULTILINEAR, ClassicalModel, ThermalPoint, local_hamiltonian_on_support
from .errors import ContractError, DomainError, UnsupportedModelError
from .operators import DiagonalOperator, diag_exp, ising_decompose
from .quantum_map import compute_map_params

OBSERVABLES = ("nn_corr", "energy", "magnetization_sq")
RASTER, SHUFFLED = "raster", "shuffled"
CHUNK_SWEEPS = 1000


# ---------------------------------------------------------------------------
# effective couplings


@dataclass(frozen=True)
class EffectiveCouplings:
    """``chi sum_j exp(beta H_j) = Lambda + sum_{i<j} pairs[(i, j)] s_i s_j``."""

    n_sites: int
    Lambda: float
    pairs: Dict[Tuple[int, int], float]
    chi: float
    beta: float
    bonds: Tuple[Tuple[int, int, float], ...]  # classical bonds (i, j, J)

    def neighbour_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR-style symmetric neighbour lists ``(ptr, idx, val)``."""
        nbrs: List[List[Tuple[int, float]]] = [[] for _ in range(self.n_sites)]
        for (i, j), v in sorted(self.pairs.items()):
            nbrs[i].append((j, v))
            nbrs[j].append((i, v))
        ptr = np.zeros(self.n_sites + 1, dtype=np.int64)
        idx, val = [], []
        for i, lst in enumerate(nbrs):
            ptr[i + 1] = ptr[i] + len(lst)
            idx += [j for j, _ in lst]
            val += [v for _, v in lst]
        return ptr, np.array(idx, dtype=np.int64), np.array(val, dtype=float)

    def bond_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        b = np.array(self.bonds, dtype=float).reshape(-1, 3)
        return b[:, 0].astype(np.int64), b[:, 1].astype(np.int64), b[:, 2].copy()


def _nearest_neighbour_bonds(model: ClassicalModel) -> Tuple[Tuple[int, int, float], ...]:
    if model.n_levels != 2 or model.energy_kind != MULTILINEAR:
        raise UnsupportedModelError("PIMC backend handles spin-1/2 Ising models only")
    n = model.n_sites
    bonds = []
    for t in model.terms:
        if len(t.sites) != 2:
            raise UnsupportedModelError(f"term {t.sites} is not a pair interaction")
        i, j = t.sites
        if not (j - i == 1 or (i == 0 and j == n - 1)):
            raise UnsupportedModelError(f"pair {t.sites} is not a nearest-neighbour bond")
        bonds.append((i, j, t.coeff))
    return tuple(bonds)


def effective_couplings(model: ClassicalModel, point: ThermalPoint,
                        atol: float = 1e-12) -> EffectiveCouplings:
    """Ising expansion of ``chi sum_j exp(beta H_j)`` for a 1D nearest-neighbour model.

    Each ``exp(beta H_j)`` is expanded on its own support (three sites at most)
    and the pieces are accumulated, so the cost is linear in ``N``.
    """
    bonds = _nearest_neighbour_bonds(model)
    params = compute_map_params(model, point)
    chi, beta = params.chi, point.beta
    const = 0.0
    pairs: Dict[Tuple[int, int], float] = {}
    for j in range(model.n_sites):
        support, table = local_hamiltonian_on_support(model, j)
        poly = ising_decompose(diag_exp(DiagonalOperator(table), beta), len(support))
        scale = max(1.0, float(np.max(np.abs(poly.coefficients))))
        for mask, c in enumerate(poly.coefficients):
            sites = tuple(support[b] for b in range(len(support)) if mask >> b & 1)
            if len(sites) == 0:
                const += chi * c
            elif len(sites) == 2:
                if c != 0.0:
                    pairs[sites] = pairs.get(sites, 0.0) + chi * c
            elif abs(c) > atol * scale:
                raise AssertionError(
                    f"non-pair term {sites} = {c:.3e} in the expansion of exp(beta H_{j})")
    pairs = {k: v for k, v in pairs.items() if abs(v) > 0.0}
    return EffectiveCouplings(model.n_sites, const, pairs, chi, beta, bonds)


def xi_coupling(beta_tilde: float, chi: float, gamma: float, n_slices: int,
                include_chi: bool = False) -> float:
    """Inter-slice coupling ``ln coth(a) / 2`` with ``a = beta_tilde [chi] gamma / L``."""
    a = beta_tilde * (chi if include_chi else 1.0) * gamma / n_slices
    if not a > 0:
        raise DomainError(f"inter-slice argument must be positive, got {a}")
    q = math.exp(-2.0 * a)
    if q >= 1.0:
        return math.inf
    # ln coth(a) = ln(1 + q) - ln(1 - q), stable for large and small a
    return 0.5 * (math.log1p(q) - math.log1p(-q))


# ---------------------------------------------------------------------------
# parameters and lattice


@dataclass(frozen=True)
class PIMCParams:
    n_slices: int
    beta_tilde: float
    sweeps: int
    burn_in: int = 1000
    seed: int = 0
    field_includes_chi: bool = False
    n_chains: int = 1
    time_per_sweep: Optional[float] = None
    order: str = SHUFFLED

    def __post_init__(self):
        if self.order not in (RASTER, SHUFFLED):
            raise DomainError(f"sweep order must be {RASTER!r} or {SHUFFLED!r}")
        if self.n_slices < 2:
            raise DomainError("need at least two Trotter slices")
        if not self.beta_tilde > 0:
            raise DomainError("beta_tilde must be positive")
        if self.sweeps < 1 or self.burn_in < 0 or self.n_chains < 1:
            raise DomainError("sweeps >= 1, burn_in >= 0 and n_chains >= 1 required")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    @property
    def delta_tau(self) -> float:
        return self.beta_tilde / self.n_slices

    @property
    def low_beta_tilde(self) -> bool:
        """True when ``beta_tilde < 10`` (ground-state projection may be incomplete)."""
        return self.beta_tilde < 10.0


@dataclass
class PIMCLattice:
    spins: np.ndarray  # (N, L) int8, entries +-1
    couplings: EffectiveCouplings
    xi: float

    def __post_init__(self):
        self.spins = np.ascontiguousarray(self.spins, dtype=np.int8)
        if self.spins.ndim != 2 or not np.all(np.abs(self.spins) == 1):
            raise ContractError("lattice spins must be an (N, L) array of +-1")
        if self.xi < 0:
            raise DomainError("xi must be non-negative")

    @property
    def n_slices(self) -> int:
        return self.spins.shape[1]


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True, nogil=True)
def _flip_cost(spins, i, k, nbr_ptr, nbr_idx, nbr_val, dtau, xi):
    """Change of the action when ``spins[i, k]`` is flipped."""
    n_slices = spins.shape[1]
    s = spins[i, k]
    h = 0.0
    for q in range(nbr_ptr[i], nbr_ptr[i + 1]):
        h += nbr_val[q] * spins[nbr_idx[q], k]
    kp = k + 1 if k + 1 < n_slices else 0
    km = k - 1 if k > 0 else n_slices - 1
    align = s * (spins[i, kp] + spins[i, km])
    inter = 0.0 if align == 0 else 2.0 * xi * align
    return -2.0 * s * dtau * h + inter


@numba.njit(cache=True, nogil=True)
def _measure(spins, bi, bj, bJ):
    n_sites, n_slices = spins.shape
    corr = 0.0
    energy = 0.0
    for b in range(bi.shape[0]):
        acc = 0.0
        for k in range(n_slices):
            acc += spins[bi[b], k] * spins[bj[b], k]
        corr += acc
        energy += bJ[b] * acc
    mag = 0.0
    for i in range(n_sites):
        for k in range(n_slices):
            mag += spins[i, k]
    nb = max(bi.shape[0], 1)
    m = mag / (n_sites * n_slices)
    return corr / (nb * n_slices), energy / n_slices, m * m


@numba.njit(cache=True, nogil=True)
def _run_sweeps(spins, nbr_ptr, nbr_idx, nbr_val, dtau, xis, orders, uniforms, bi, bj, bJ, out):
    """Metropolis sweeps; every spin is proposed once per sweep.

    ``orders[s]`` lists flat positions ``k * N + i`` in proposal order (a single
    row is reused for every sweep).  ``uniforms[s, k, i]`` drives the proposal
    at site ``i`` of slice ``k``; ``out[s]`` receives (acceptance, nn_corr,
    energy, m^2).
    """
    n_sites, n_slices = spins.shape
    for s in range(xis.shape[0]):
        xi = xis[s]
        row = orders[s] if orders.shape[0] > 1 else orders[0]
        accepted = 0
        for pos in range(row.shape[0]):
            k = row[pos] // n_sites
            i = row[pos] - k * n_sites
            d = _flip_cost(spins, i, k, nbr_ptr, nbr_idx, nbr_val, dtau, xi)
            if d <= 0.0 or uniforms[s, k, i] < math.exp(-d):
                spins[i, k] = -spins[i, k]
                accepted += 1
        c, e, m2 = _measure(spins, bi, bj, bJ)
        out[s, 0] = accepted / (n_sites * n_slices)
        out[s, 1] = c
        out[s, 2] = e
        out[s, 3] = m2


def action(lattice: PIMCLattice, params: PIMCParams) -> float:
    """Effective action ``S[s]`` (Lambda dropped)."""
    s = lattice.spins.astype(float)
    intra = 0.0
    for (i, j), v in lattice.couplings.pairs.items():
        intra += v * float(np.sum(s[i] * s[j]))
    inter = float(np.sum(s * np.roll(s, -1, axis=1)))
    return params.delta_tau * intra - lattice.xi * inter


def slice_energy(lattice: PIMCLattice, params: PIMCParams, beta: Optional[float] = None) -> float:
    """Alias of :func:`action`; ``beta`` is carried by the lattice couplings."""
    return action(lattice, params)


def draw_sweeps(params: PIMCParams, n_sites: int, n_sweeps: int,
                rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Proposal orders and acceptance uniforms for ``n_sweeps`` sweeps.

    ``raster`` visits slice 0 sites 0..N-1, then slice 1, and so on.  With
    ``shuffled`` each sweep uses a fresh uniformly random permutation, which
    avoids the deterministic domain-wall sweeps that make fixed-order
    Metropolis non-ergodic when zero-cost flips exist.  Draws are laid out
    sweep by sweep, so splitting a run into chunks does not change the stream.
    """
    size = n_sites * params.n_slices
    if params.order == RASTER:
        uniforms = rng.random((n_sweeps, params.n_slices, n_sites))
        return np.arange(size, dtype=np.int64)[None, :], uniforms
    draws = rng.random((n_sweeps, 2, size))
    orders = np.argsort(draws[:, 0], axis=1, kind="stable").astype(np.int64)
    return orders, draws[:, 1].reshape(n_sweeps, params.n_slices, n_sites)


def metropolis_sweep(lattice: PIMCLattice, params: PIMCParams,
                     rng: np.random.Generator) -> float:
    """One sweep in place; returns the acceptance fraction."""
    ptr, idx, val = lattice.couplings.neighbour_arrays()
    bi, bj, bJ = lattice.couplings.bond_arrays()
    n, L = lattice.spins.shape
    out = np.zeros((1, 4))
    orders, uniforms = draw_sweeps(params, n, 1, rng)
    _run_sweeps(lattice.spins, ptr, idx, val, params.delta_tau, np.array([lattice.xi]),
                orders, uniforms, bi, bj, bJ, out)
    return float(out[0, 0])


def sweep_transition_matrix(lattice: PIMCLattice, params: PIMCParams) -> Tuple[np.ndarray, np.ndarray]:
    """Exact one-sweep transition matrix over all ``2**(N L)`` lattice states.

    Built from the same flip-cost kernel as the sampler; for the shuffled order
    it is the average over every proposal permutation.  Returns
    ``(P_sweep, weights)`` with ``weights`` proportional to ``exp(-S)``.
    """
    n, L = lattice.spins.shape
    nspins = n * L
    limit = 12 if params.order == RASTER else 6
    if nspins > limit:
        raise ContractError(f"explicit transition matrices are limited to {limit} spins here")
    ptr, idx, val = lattice.couplings.neighbour_arrays()
    dim = 1 << nspins
    states = np.empty((dim, n, L), dtype=np.int8)
    for r in range(dim):
        bits = [(r >> b) & 1 for b in range(nspins)]
        states[r] = (1 - 2 * np.array(bits, dtype=np.int8)).reshape(L, n).T
    weights = np.array([math.exp(-action(PIMCLattice(states[r], lattice.couplings, lattice.xi), params))
                        for r in range(dim)])
    site_kernels = []
    for pos in range(nspins):
        k, i = divmod(pos, n)
        site = np.zeros((dim, dim))
        bit = 1 << pos
        for r in range(dim):
            d = _flip_cost(states[r], i, k, ptr, idx, val, params.delta_tau, lattice.xi)
            acc = 1.0 if d <= 0 else math.exp(-d)
            site[r, r ^ bit] = acc
            site[r, r] = 1.0 - acc
        site_kernels.append(site)
    if params.order == RASTER:
        perms = [range(nspins)]
    else:
        perms = list(itertools.permutations(range(nspins)))
    sweep = np.zeros((dim, dim))
    for perm in perms:
        prod = np.eye(dim)
        for pos in perm:
            prod = prod @ site_kernels[pos]
        sweep += prod
    return sweep / len(perms), weights


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class SampleStats:
    name: str
    mean: float
    variance: float
    stderr: float
    naive_stderr: float
    count: int
    binning: Tuple[float, ...]  # stderr at bin sizes 1, 2, 4, ...
    converged: bool

    @property
    def tau_int(self) -> float:
        if self.naive_stderr == 0:
            return 0.5
        return 0.5 * (self.stderr / self.naive_stderr) ** 2

    @classmethod
    def from_series(cls, name: str, series: np.ndarray, min_bins: int = 64) -> "SampleStats":
        x = np.asarray(series, dtype=float)
        n = x.size
        mean = float(x.mean())
        var = float(x.var(ddof=1)) if n > 1 else 0.0
        levels = []
        y = x
        while y.size >= min_bins:
            levels.append(float(y.std(ddof=1) / math.sqrt(y.size)) if y.size > 1 else 0.0)
            y = 0.5 * (y[: y.size // 2 * 2:2] + y[1: y.size // 2 * 2:2])
        if not levels:
            levels = [float(math.sqrt(var / n)) if n > 1 else 0.0]
        se = max(levels)
        converged = len(levels) >= 3 and abs(levels[-1] - levels[-2]) <= 0.2 * max(levels[-1], 1e-300)
        return cls(name, mean, var, se, levels[0], n, tuple(levels), converged)

    @classmethod
    def merge(cls, parts: Sequence["SampleStats"]) -> "SampleStats":
        """Combine independent chains of equal length."""
        if len(parts) == 1:
            return parts[0]
        k = len(parts)
        mean = sum(p.mean for p in parts) / k
        se = math.sqrt(sum(p.stderr ** 2 for p in parts)) / k
        naive = math.sqrt(sum(p.naive_stderr ** 2 for p in parts)) / k
        var = sum(p.variance for p in parts) / k
        return cls(parts[0].name, mean, var, se, naive, sum(p.count for p in parts), (),
                   all(p.converged for p in parts))


# ---------------------------------------------------------------------------
# chains


class PIMCChain:
    """One Markov chain with its own generator; checkpointable mid-run."""

    def __init__(self, couplings: EffectiveCouplings, params: PIMCParams,
                 xi_of_sweep, seed_seq: np.random.SeedSequence):
        self.couplings = couplings
        self.params = params
        self.xi_of_sweep = xi_of_sweep
        self.rng = np.random.Generator(np.random.PCG64(seed_seq))
        n = couplings.n_sites
        self.spins = np.where(self.rng.random((n, params.n_slices)) < 0.5, 1, -1).astype(np.int8)
        self.sweep = 0
        self.records = np.zeros((params.burn_in + params.sweeps, 4))
        self._arrays = couplings.neighbour_arrays() + couplings.bond_arrays()

    @property
    def total_sweeps(self) -> int:
        return self.params.burn_in + self.params.sweeps

    @property
    def done(self) -> bool:
        return self.sweep >= self.total_sweeps

    def advance(self, n_sweeps: Optional[int] = None) -> None:
        stop = self.total_sweeps if n_sweeps is None else min(self.total_sweeps, self.sweep + n_sweeps)
        ptr, idx, val, bi, bj, bJ = self._arrays
        n, L = self.spins.shape
        while self.sweep < stop:
            m = min(CHUNK_SWEEPS, stop - self.sweep)
            xis = np.array([self.xi_of_sweep(s) for s in range(self.sweep, self.sweep + m)])
            orders, uniforms = draw_sweeps(self.params, n, m, self.rng)
            _run_sweeps(self.spins, ptr, idx, val, self.params.delta_tau, xis, orders, uniforms,
                        bi, bj, bJ, self.records[self.sweep:self.sweep + m])
            self.sweep += m

    def stats(self) -> Dict[str, SampleStats]:
        meas = self.records[self.params.burn_in:self.sweep]
        return {name: SampleStats.from_series(name, meas[:, c + 1])
                for c, name in enumerate(OBSERVABLES)}

    @property
    def acceptance(self) -> float:
        done = self.records[:self.sweep]
        return float(done[:, 0].mean()) if done.size else math.nan

    def checkpoint(self) -> Dict[str, object]:
        return {"sweep": self.sweep, "spins": self.spins.tolist(),
                "rng_state": self.rng.bit_generator.state,
                "records": self.records[:self.sweep].tolist()}

    def restore(self, state: Dict[str, object]) -> None:
        self.sweep = int(state["sweep"])
        self.spins = np.array(state["spins"], dtype=np.int8)
        self.rng.bit_generator.state = state["rng_state"]
        rec = np.array(state["records"], dtype=float).reshape(-1, 4)
        self.records[:rec.shape[0]] = rec


@dataclass
class PIMCResult:
    stats: Dict[str, SampleStats]
    chain_stats: List[Dict[str, SampleStats]]
    acceptance: float
    Lambda: float
    xi_final: float
    couplings: EffectiveCouplings
    params: PIMCParams
    low_beta_tilde: bool

    def summary(self) -> Dict[str, object]:
        return {
            "observables": {k: {"mean": s.mean, "stderr": s.stderr, "naive_stderr": s.naive_stderr,
                                "tau_int": s.tau_int, "count": s.count, "converged": s.converged}
                            for k, s in self.stats.items()},
            "chains": [{k: {"mean": s.mean, "stderr": s.stderr} for k, s in cs.items()}
                       for cs in self.chain_stats],
            "acceptance": self.acceptance, "Lambda": self.Lambda, "xi_final": self.xi_final,
            "chi": self.couplings.chi,
            "pair_couplings": [[i, j, v] for (i, j), v in sorted(self.couplings.pairs.items())],
            "low_beta_tilde": self.low_beta_tilde,
        }


class PIMCRun:
    """A (possibly annealed) multi-chain run with checkpoint/resume support.

    With ``schedule`` the transverse field follows ``schedule.control(t)`` at
    ``t = sweep * time_per_sweep`` (default: the schedule spans the burn-in) and
    stays at its final value afterwards; otherwise the field is fixed at ``chi``.
    """

    def __init__(self, model: ClassicalModel, point: ThermalPoint, params: PIMCParams,
                 schedule: Optional[Schedule] = None):
        self.model = model
        self.point = point
        self.params = params
        self.schedule = schedule
        self.couplings = effective_couplings(model, point)
        chi = self.couplings.chi
        if schedule is None:
            xi0 = xi_coupling(params.beta_tilde, chi, chi, params.n_slices, params.field_includes_chi)
            self.xi_of_sweep = lambda s: xi0
        else:
            tps = params.time_per_sweep
            if tps is None:
                tps = schedule.total_time / max(params.burn_in, 1)
            total = schedule.total_time

            def xi_of_sweep(s):
                gamma = float(schedule.control(min(s * tps, total)))
                return xi_coupling(params.beta_tilde, chi, gamma, params.n_slices,
                                   params.field_includes_chi)

            self.xi_of_sweep = xi_of_sweep
        children = np.random.SeedSequence(params.seed).spawn(params.n_chains)
        self.chains = [PIMCChain(self.couplings, params, self.xi_of_sweep, c) for c in children]

    def advance(self, n_sweeps: Optional[int] = None, workers: int = 1) -> None:
        if workers > 1 and len(self.chains) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(lambda c: c.advance(n_sweeps), self.chains))
        else:
            for c in self.chains:
                c.advance(n_sweeps)

    @property
    def done(self) -> bool:
        return all(c.done for c in self.chains)

    def result(self) -> PIMCResult:
        per_chain = [c.stats() for c in self.chains]
        merged = {k: SampleStats.merge([cs[k] for cs in per_chain]) for k in OBSERVABLES}
        acc = float(np.mean([c.acceptance for c in self.chains]))
        last = max(c.sweep for c in self.chains)
        return PIMCResult(merged, per_chain, acc, self.couplings.Lambda,
                          self.xi_of_sweep(max(last - 1, 0)), self.couplings, self.params,
                          self.params.low_beta_tilde)

    def checkpoint(self) -> str:
        return json.dumps({"format": "qgibbs-pimc-checkpoint/1", "params": asdict(self.params),
                           "chains": [c.checkpoint() for c in self.chains]})

    def restore(self, text: str) -> None:
        data = json.loads(text)
        if data.get("format") != "qgibbs-pimc-checkpoint/1":
            raise ContractError("not a PIMC checkpoint")
        if data["params"] != asdict(self.params):
            raise ContractError("checkpoint was written for different PIMC parameters")
        if len(data["chains"]) != len(self.chains):
            raise ContractError("checkpoint chain count mismatch")
        for c, st in zip(self.chains, data["chains"]):
            c.restore(st)


def run_pimc(model: ClassicalModel, point: ThermalPoint, params: PIMCParams,
             schedule: Optional[Schedule] = None, workers: int = 1) -> PIMCResult:
    run = PIMCRun(model, point, params, schedule)
    run.advance(workers=workers)
    return run.result()
