import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qgibbs.classical import (KRONECKER, ClassicalModel, CouplingTerm, DiagonalObservable,
                              SpinConfig, ThermalPoint, brute_thermal, energy_table,
                              evaluate_energy, flip_identity_residual, gibbs_vector,
                              local_hamiltonian, local_hamiltonian_on_support, random_model,
                              reflection_ranks)
from qgibbs.errors import CapacityError, ContractError, DomainError


def test_single_term_energy(ising2):
    assert evaluate_energy(ising2, SpinConfig.from_spins([1, 1])) == 1.0
    assert evaluate_energy(ising2, SpinConfig.from_spins([1, -1])) == -1.0


def test_potts_energy_is_kronecker_delta():
    m = ClassicalModel(2, (((0, 1), 1.0),), spin=1.0, energy_kind=KRONECKER)
    assert evaluate_energy(m, SpinConfig((0, 0), 3)) == 1.0
    assert evaluate_energy(m, SpinConfig((1, 0), 3)) == 0.0


def test_energy_table_matches_pointwise_evaluation(rng):
    m = random_model(rng, 5)
    table = energy_table(m)
    for r in range(m.dim):
        assert table[r] == pytest.approx(evaluate_energy(m, SpinConfig.from_rank(r, 5)), abs=1e-14)


def test_rank_convention_site_zero_least_significant():
    assert SpinConfig.from_spins([-1, 1]).rank == 1
    assert SpinConfig.from_spins([1, -1]).rank == 2
    assert SpinConfig.from_rank(5, 3, 3).levels == (2, 1, 0)


@given(st.integers(1, 5), st.integers(2, 4), st.data())
def test_rank_round_trip(n, d, data):
    r = data.draw(st.integers(0, d ** n - 1))
    assert SpinConfig.from_rank(r, n, d).rank == r


def test_local_hamiltonian_examples(ising2):
    h1 = local_hamiltonian(ising2, 1).entries
    assert h1[SpinConfig.from_spins([1, 1]).rank] == 1.0
    free = ClassicalModel(3, (((0, 1), 0.7),))
    assert np.all(local_hamiltonian(free, 2).entries == 0.0)
    ring = ClassicalModel.ring(5, -1.5)
    assert max(np.abs(local_hamiltonian(ring, j).entries).max() for j in range(5)) == 3.0


def test_local_table_on_support_matches_full_table(rng):
    for _ in range(10):
        m = random_model(rng, 6)
        for j in range(m.n_sites):
            support, small = local_hamiltonian_on_support(m, j)
            full = local_hamiltonian(m, j).entries
            levels = (np.arange(m.dim)[:, None] >> np.array(support)) & 1
            sub_rank = levels @ (1 << np.arange(len(support)))
            np.testing.assert_allclose(full, small[sub_rank], atol=1e-14)


def test_partition_function_examples():
    lone = ClassicalModel(1)
    z, c = brute_thermal(lone, ThermalPoint(2.3), DiagonalObservable("constant", value=4.2))
    assert z == 2.0 and c == pytest.approx(4.2)
    for beta, j in [(0.3, 1.0), (1.0, -2.0), (2.0, 0.5)]:
        m = ClassicalModel(2, (((0, 1), j),))
        z, corr = brute_thermal(m, ThermalPoint(beta), DiagonalObservable.pair(0, 1))
        assert z == pytest.approx(2 * math.exp(-beta * j) + 2 * math.exp(beta * j), rel=1e-14)
        assert corr == pytest.approx(-math.tanh(beta * j), abs=1e-14)


def test_gibbs_vector_examples(ising2):
    v = gibbs_vector(ClassicalModel(1), ThermalPoint(1.0)).real
    np.testing.assert_allclose(v, [1 / math.sqrt(2)] * 2, atol=1e-15)
    u = gibbs_vector(ising2, ThermalPoint(1.0), normalized=False).real
    e = math.exp(0.5)
    np.testing.assert_allclose(u, [1 / e, e, e, 1 / e], rtol=1e-15)
    z, _ = brute_thermal(ising2, ThermalPoint(1.0), DiagonalObservable("constant"))
    assert u @ u == pytest.approx(z, rel=1e-14)


def test_flip_identity_examples(ising2):
    assert flip_identity_residual(ising2) == 0.0
    assert flip_identity_residual(ClassicalModel(3)) == 0.0
    potts = ClassicalModel.chain(3, 1.0, spin=1.0, energy_kind=KRONECKER)
    assert flip_identity_residual(potts) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
def test_flip_identity_holds_for_random_models(seed, n):
    m = random_model(np.random.default_rng(seed), n)
    assert flip_identity_residual(m) <= 1e-12


def test_reflection_is_an_involution():
    m = ClassicalModel.chain(3, 1.0, spin=1.5)
    for j in range(3):
        r = reflection_ranks(m, j)
        assert np.array_equal(r[r], np.arange(m.dim))


def test_contract_errors():
    with pytest.raises(ContractError):
        CouplingTerm((1, 1), 1.0)
    with pytest.raises(ContractError):
        ClassicalModel(2, (((0, 2), 1.0),))
    with pytest.raises(ContractError):
        ClassicalModel(2, spin=0.7)
    with pytest.raises(ContractError):
        ClassicalModel(3, (((0, 1, 2), 1.0),), spin=1.0, energy_kind=KRONECKER)
    with pytest.raises(DomainError):
        ThermalPoint(0.0)
    with pytest.raises(DomainError):
        ThermalPoint.from_temperature(-1.0)
    with pytest.raises(CapacityError):
        energy_table(ClassicalModel(30))


def test_two_site_ring_doubles_the_bond():
    m = ClassicalModel.ring(2, 1.0)
    assert [t.sites for t in m.terms] == [(0, 1), (0, 1)]
    assert energy_table(m)[0] == 2.0
