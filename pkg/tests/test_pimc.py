import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pimc_oracles import single_spin_slice_magnetization_sq, transfer_matrix_expectation
from qgibbs.anneal import make_eqa_schedule
from qgibbs.classical import ClassicalModel, ThermalPoint
from qgibbs.errors import ContractError, DomainError, UnsupportedModelError
from qgibbs.pimc import (PIMCLattice, PIMCParams, PIMCRun, SampleStats, _flip_cost, action,
                         effective_couplings, metropolis_sweep, run_pimc, sweep_transition_matrix,
                         xi_coupling)


def test_couplings_vanish_at_high_temperature():
    cp = effective_couplings(ClassicalModel.ring(6, 1.0), ThermalPoint(1e-9))
    assert max(abs(v) for v in cp.pairs.values()) <= 1e-8


@pytest.mark.parametrize("n", [4, 6])
def test_ring_couplings_closed_form(n):
    beta = 1.0
    cp = effective_couplings(ClassicalModel.ring(n, 1.0), ThermalPoint(beta))
    chi, x, y = math.exp(-2 * beta), math.cosh(beta), math.sinh(beta)
    assert cp.chi == pytest.approx(chi)
    assert cp.Lambda == pytest.approx(n * chi * x * x, rel=1e-13)
    assert cp.pairs[(0, 1)] == pytest.approx(2 * chi * x * y, rel=1e-13)
    # on a 4-ring the pair (j-1, j+1) is shared by two sites j
    assert cp.pairs[(0, 2)] == pytest.approx((2 if n == 4 else 1) * chi * y * y, rel=1e-13)
    assert len(cp.pairs) == (6 if n == 4 else 2 * n)


def test_free_spins_have_no_pair_couplings():
    cp = effective_couplings(ClassicalModel.ring(5, 0.0), ThermalPoint(0.7))
    assert cp.Lambda == pytest.approx(5 * cp.chi) and cp.chi == 1.0 and not cp.pairs


@pytest.mark.parametrize("model", [
    ClassicalModel(4, (((0, 2), 1.0),)),
    ClassicalModel(3, (((0, 1, 2), 1.0),)),
    ClassicalModel(3, (((0,), 1.0), ((0, 1), 1.0))),
    ClassicalModel.chain(3, 1.0, spin=1.0),
])
def test_unsupported_models(model):
    with pytest.raises(UnsupportedModelError):
        effective_couplings(model, ThermalPoint(1.0))


def test_xi_examples():
    assert xi_coupling(1.0, 1.0, 0.5, 1) == pytest.approx(0.5 * math.log(1 / math.tanh(0.5)), rel=1e-14)
    assert xi_coupling(1.0, 1.0, 0.5, 1) == pytest.approx(0.3861, abs=2e-4)
    assert 0.0 <= xi_coupling(1e4, 1.0, 1.0, 1) < 1e-300
    assert 0 < xi_coupling(10.0, 1.0, 1.0, 1) < 1e-8
    assert xi_coupling(1.0, 0.5, 0.3, 4, include_chi=True) == xi_coupling(1.0, 1.0, 0.15, 4)
    assert math.isinf(xi_coupling(1e-320, 1.0, 1.0, 10))
    with pytest.raises(DomainError):
        xi_coupling(1.0, 1.0, 0.0, 4)


@given(st.floats(1e-3, 5.0), st.floats(1e-3, 5.0))
def test_xi_grows_as_field_drops(g1, g2):
    lo, hi = sorted((g1, g2))
    assert xi_coupling(20.0, 0.3, lo, 64) >= xi_coupling(20.0, 0.3, hi, 64)


def _lattice(model, beta, spins, xi):
    return PIMCLattice(spins, effective_couplings(model, ThermalPoint(beta)), xi)


def test_aligned_lattice_has_extremal_inter_slice_term():
    n, L, xi = 3, 5, 0.7
    params = PIMCParams(n_slices=L, beta_tilde=2.0, sweeps=1)
    lat = _lattice(ClassicalModel.ring(3, 0.0), 1.0, np.ones((n, L)), xi)
    assert action(lat, params) == pytest.approx(-xi * n * L)
    rng = np.random.default_rng(0)
    for _ in range(20):
        other = _lattice(ClassicalModel.ring(3, 0.0), 1.0, rng.choice([-1, 1], (n, L)), xi)
        assert action(other, params) >= action(lat, params)


def test_flip_cost_is_local(rng):
    model, params = ClassicalModel.ring(5, 0.8), PIMCParams(n_slices=6, beta_tilde=3.0, sweeps=1)
    lat = _lattice(model, 0.9, rng.choice([-1, 1], (5, 6)), 0.45)
    ptr, idx, val = lat.couplings.neighbour_arrays()
    for _ in range(30):
        i, k = int(rng.integers(5)), int(rng.integers(6))
        before = action(lat, params)
        d = _flip_cost(lat.spins, i, k, ptr, idx, val, params.delta_tau, lat.xi)
        lat.spins[i, k] *= -1
        assert action(lat, params) - before == pytest.approx(d, abs=1e-10)


def test_infinite_slice_coupling_freezes_columns():
    params = PIMCParams(n_slices=8, beta_tilde=1.0, sweeps=1)
    lat = _lattice(ClassicalModel.ring(4, 1.0), 1.0, np.ones((4, 8)), math.inf)
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert metropolis_sweep(lat, params, rng) == 0.0
    assert np.all(lat.spins == 1)


def test_free_lattice_accepts_everything():
    params = PIMCParams(n_slices=8, beta_tilde=1.0, sweeps=1)
    lat = _lattice(ClassicalModel.ring(4, 0.0), 1.0, np.ones((4, 8)), 0.0)
    assert metropolis_sweep(lat, params, np.random.default_rng(2)) == 1.0


def test_same_seed_same_lattice():
    model, pt = ClassicalModel.ring(6, 1.0), ThermalPoint(0.5)
    params = PIMCParams(n_slices=12, beta_tilde=4.0, sweeps=1000, burn_in=0, seed=99)
    a, b = PIMCRun(model, pt, params), PIMCRun(model, pt, params)
    a.advance(), b.advance()
    assert np.array_equal(a.chains[0].spins, b.chains[0].spins)
    assert np.array_equal(a.chains[0].records, b.chains[0].records)
    c = PIMCRun(model, pt, PIMCParams(n_slices=12, beta_tilde=4.0, sweeps=1000, burn_in=0, seed=100))
    c.advance()
    assert not np.array_equal(a.chains[0].records, c.chains[0].records)


@pytest.mark.parametrize("order", ["shuffled", "raster"])
def test_detailed_balance_on_two_by_two_lattice(order):
    model = ClassicalModel(2, (((0, 1), 0.9),))
    params = PIMCParams(n_slices=2, beta_tilde=3.0, sweeps=1, order=order)
    cp = effective_couplings(model, ThermalPoint(0.8))
    lat = PIMCLattice(np.ones((2, 2)), cp, xi_coupling(3.0, cp.chi, cp.chi, 2))
    sweep, weights = sweep_transition_matrix(lat, params)
    pi = weights / weights.sum()
    assert np.abs(sweep.sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(pi @ sweep - pi).max() <= 1e-10


def test_raster_order_fails_to_mix_a_free_slice_ring():
    # fixed-order Metropolis drags domain walls deterministically around the ring
    model = ClassicalModel(1)
    exact = single_spin_slice_magnetization_sq(1.0, 2.0, 8)
    res = run_pimc(model, ThermalPoint(1.0), PIMCParams(n_slices=8, beta_tilde=2.0, sweeps=20000,
                                                        burn_in=500, seed=5, order="raster"))
    s = res.stats["magnetization_sq"]
    assert abs(s.mean - exact) > 10 * s.stderr


def test_single_spin_matches_two_level_oracle():
    model = ClassicalModel(1)
    beta_tilde, L = 2.0, 8
    res = run_pimc(model, ThermalPoint(1.0), PIMCParams(n_slices=L, beta_tilde=beta_tilde,
                                                        sweeps=40000, burn_in=500, seed=5))
    exact = single_spin_slice_magnetization_sq(1.0, beta_tilde, L)
    s = res.stats["magnetization_sq"]
    assert abs(s.mean - exact) <= 3 * s.stderr


def test_sampler_matches_transfer_matrix_oracle():
    model, pt = ClassicalModel.ring(4, 1.0), ThermalPoint(0.5)
    params = PIMCParams(n_slices=8, beta_tilde=4.0, sweeps=60000, burn_in=1000, seed=11)
    res = run_pimc(model, pt, params)
    cp = res.couplings
    s = 1 - 2 * ((np.arange(16)[:, None] >> np.arange(4)) & 1)
    exact = transfer_matrix_expectation(cp.pairs, 4, 8, params.delta_tau, res.xi_final,
                                        s[:, 0] * s[:, 1])
    st_ = res.stats["nn_corr"]
    assert abs(st_.mean - exact) <= 3 * st_.stderr


def test_annealed_run_reproduces_fixed_field_estimate():
    model, pt = ClassicalModel.ring(4, 1.0), ThermalPoint(0.5)
    base = dict(n_slices=8, beta_tilde=4.0, sweeps=40000, burn_in=4000)
    fixed = run_pimc(model, pt, PIMCParams(seed=1, **base))
    chi = fixed.couplings.chi
    sched = make_eqa_schedule(4, 2.0, 0.01, 2.0, chi, refined=True)
    run = PIMCRun(model, pt, PIMCParams(seed=2, **base), sched)
    xis = [run.xi_of_sweep(s) for s in range(0, 4001, 50)]
    assert all(b >= a for a, b in zip(xis, xis[1:]))
    assert xis[-1] == pytest.approx(fixed.xi_final)
    run.advance()
    ann = run.result()
    a, f = ann.stats["nn_corr"], fixed.stats["nn_corr"]
    assert abs(a.mean - f.mean) <= 3 * math.hypot(a.stderr, f.stderr)


def test_checkpoint_resume_is_bit_identical():
    model, pt = ClassicalModel.ring(5, 1.0), ThermalPoint(0.7)
    params = PIMCParams(n_slices=6, beta_tilde=3.0, sweeps=3000, burn_in=200, seed=4, n_chains=2)
    full = PIMCRun(model, pt, params)
    full.advance()
    part = PIMCRun(model, pt, params)
    part.advance(1234)
    resumed = PIMCRun(model, pt, params)
    resumed.restore(part.checkpoint())
    resumed.advance()
    for a, b in zip(full.chains, resumed.chains):
        assert np.array_equal(a.records, b.records) and np.array_equal(a.spins, b.spins)
    assert full.result().summary() == resumed.result().summary()
    other = PIMCRun(model, pt, PIMCParams(n_slices=6, beta_tilde=3.0, sweeps=3000, burn_in=200, seed=5,
                                          n_chains=2))
    with pytest.raises(ContractError):
        other.restore(part.checkpoint())


def test_chi_variant_changes_the_slice_coupling():
    model, pt = ClassicalModel.ring(4, 1.0), ThermalPoint(0.5)
    a = PIMCRun(model, pt, PIMCParams(n_slices=8, beta_tilde=4.0, sweeps=1))
    b = PIMCRun(model, pt, PIMCParams(n_slices=8, beta_tilde=4.0, sweeps=1, field_includes_chi=True))
    chi = a.couplings.chi
    assert a.xi_of_sweep(0) == xi_coupling(4.0, chi, chi, 8)
    assert b.xi_of_sweep(0) == xi_coupling(4.0, 1.0, chi * chi, 8)


def test_binning_statistics():
    rng = np.random.default_rng(3)
    iid = rng.standard_normal(2 ** 16)
    s = SampleStats.from_series("x", iid)
    assert s.stderr == pytest.approx(1 / 256, rel=0.15) and s.tau_int < 1.0
    ar = np.zeros(2 ** 16)
    for t in range(1, ar.size):
        ar[t] = 0.9 * ar[t - 1] + iid[t]
    corr = SampleStats.from_series("y", ar)
    # AR(1) with phi = 0.9: tau_int = (1 + phi) / (2 (1 - phi)) = 9.5
    assert corr.tau_int == pytest.approx(9.5, rel=0.3)


def test_params_validation():
    with pytest.raises(DomainError):
        PIMCParams(n_slices=1, beta_tilde=1.0, sweeps=10)
    with pytest.raises(DomainError):
        PIMCParams(n_slices=4, beta_tilde=-1.0, sweeps=10)
    with pytest.raises(DomainError):
        PIMCParams(n_slices=4, beta_tilde=1.0, sweeps=10, seed=-1)
    assert PIMCParams(n_slices=4, beta_tilde=5.0, sweeps=1).low_beta_tilde
