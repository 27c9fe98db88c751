import math

import numpy as np
import pytest

from qgibbs.anneal import (EQA, POLY, QA, SA, HamiltonianPath, IntegratorConfig, TRACE_COLUMNS,
                           adiabatic_monitor, commutator_residual, make_constant_schedule,
                           make_eqa_schedule, make_poly_schedule, make_sa_schedule, propagate,
                           reintegrate_schedule)
from qgibbs.classical import ClassicalModel, ThermalPoint, random_model
from qgibbs.errors import ContractError, DomainError


def test_sa_schedule_examples():
    s = make_sa_schedule(2.0, 4, 0.01, 2.0)
    alpha = 4 * 0.01 * math.sqrt(8 * math.pi) * math.exp(-4)
    assert s.constants["alpha"] == pytest.approx(alpha, rel=1e-14)
    assert s.constants["alpha"] == pytest.approx(3.672e-3, abs=1e-6)
    assert float(s.control(1e4)) == pytest.approx(8 / math.log(alpha * 1e4 + 1), rel=1e-14)
    assert float(s.control(1e4)) == pytest.approx(2.204, abs=1e-3)
    assert float(s.control(s.total_time)) == pytest.approx(2.0, rel=1e-12)


def test_sa_schedule_asymptotics():
    s = make_sa_schedule(1.0, 3, 0.01, 0.01)
    ratios = [float(s.control(t)) * math.log(t) / 3.0 for t in (1e20, 1e60, 1e200)]
    assert all(abs(b - 1) < abs(a - 1) for a, b in zip(ratios, ratios[1:]))
    # the remaining offset is ln(alpha) / ln(t)
    assert abs(ratios[-1] - 1) < 0.02


def test_sa_schedule_is_clamped_and_monotone():
    s = make_sa_schedule(2.0, 4, 0.01, 2.0)
    assert float(s.control(0.0)) == s.constants["T_max_cap"] == 160.0
    t = np.linspace(0, s.total_time, 400)
    assert np.all(np.diff(s.control(t)) <= 0)
    with pytest.raises(DomainError):
        make_sa_schedule(2.0, 4, 0.01, 200.0)


def test_eqa_schedule_examples():
    s = make_eqa_schedule(1, 1.0, 0.01, 1.0, 0.1)
    assert s.constants["alpha_bar"] == pytest.approx(8 * math.pi * 0.01 * math.exp(-2) / 4, rel=1e-14)
    assert s.constants["alpha_bar"] == pytest.approx(8.502e-3, rel=1e-3)
    n = 2
    s = make_eqa_schedule(n, 2.0, 0.01, 2.0, 1e-3)
    k, abar = 2 * n - 1, s.constants["alpha_bar"]
    vals = [float(s.control(t)) * (k * abar * t) ** (1 / k) for t in (1e8, 1e12, s.total_time)]
    assert abs(vals[-1] - 1) < abs(vals[0] - 1) and abs(vals[-1] - 1) < 1e-3
    t = np.linspace(0, s.total_time, 300)
    assert np.all(np.diff(s.control(t)) < 0)
    with pytest.raises(DomainError):
        make_eqa_schedule(2, 1.0, 0.01, 2.0, 0.5)
    with pytest.raises(ContractError):
        make_eqa_schedule(2, 2.0, 0.01, 2.0, 0.5, family=SA)


def test_refined_eqa_schedule_is_shorter():
    full = make_eqa_schedule(3, 2.0, 0.01, 2.0, 0.5)
    refined = make_eqa_schedule(3, 2.0, 0.01, 2.0, 0.5, refined=True)
    assert refined.total_time < full.total_time and refined.note


def test_poly_schedule_exponents():
    for q in (0.0, 1.0, 2.5):
        s = make_poly_schedule(q, 3, 0.01, 1e-3)
        t = 1e12
        assert float(s.control(2 * t)) / float(s.control(t)) == pytest.approx(2 ** (-1 / (q + 1)), rel=1e-6)
        assert float(s.control(t)) * t ** (1 / (q + 1)) == pytest.approx(s.constants["alpha"], rel=1e-5)
        tt = np.linspace(0, s.total_time, 200)
        assert np.all(np.diff(s.control(tt)) < 0)
    zero = make_poly_schedule(0.0, 3, 0.01, 1e-3)
    assert float(zero.control(1e10)) * 1e10 == pytest.approx(float(zero.control(1e11)) * 1e11, rel=1e-8)


@pytest.mark.parametrize("sched", [
    make_sa_schedule(2.0, 4, 0.01, 2.0),
    make_sa_schedule(1.3, 6, 0.05, 0.7),
    make_eqa_schedule(3, 1.5, 0.01, 1.5, 0.2),
    make_eqa_schedule(3, 1.5, 0.01, 1.5, 0.2, refined=True),
    make_poly_schedule(1.5, 4, 0.01, 0.1),
])
def test_closed_forms_match_reintegrated_ode(sched):
    t = np.linspace(0, sched.total_time, 101)
    ode = reintegrate_schedule(sched, t)
    np.testing.assert_allclose(ode, sched.control(t), rtol=1e-6)
    live = t[t > sched.constants.get("t_clamp", 0.0)]
    rhs = [sched.ode_rhs(float(x)) for x in sched.control(live)]
    np.testing.assert_allclose(sched.rate(live), rhs, rtol=1e-9)


def test_compression_scales_time_and_rate():
    s = make_sa_schedule(2.0, 4, 0.01, 2.0)
    c = s.compressed(10.0)
    assert c.total_time == pytest.approx(s.total_time / 10)
    assert float(c.control(100.0)) == pytest.approx(float(s.control(1000.0)))
    assert float(c.rate(100.0)) == pytest.approx(10 * float(s.rate(1000.0)))


def test_monitor_examples():
    m = ClassicalModel.ring(4, 1.0)
    assert adiabatic_monitor(m, SA, 2.0, 0.0) == 0.0
    a = adiabatic_monitor(m, SA, 2.0, -1e-3)
    assert adiabatic_monitor(m, SA, 2.0, -3e-3) == pytest.approx(3 * a, rel=1e-12)


@pytest.mark.parametrize("n", [3, 5])
def test_monitor_below_epsilon_along_sa_schedule(n):
    m = ClassicalModel.ring(n, 1.0)
    s = make_sa_schedule(2.0, n, 0.01, 1.5)
    for t in np.linspace(0, s.total_time, 40):
        assert adiabatic_monitor(m, SA, float(s.control(t)), float(s.rate(t))) <= 0.01 * (1 + 1e-6)


def test_commutator_examples(ising2):
    free = commutator_residual(ClassicalModel(3), ThermalPoint(1.0))
    assert free.residual == 0.0 and free.passed
    rep = commutator_residual(ising2, ThermalPoint(1.0))
    assert rep.residual <= 1e-10 and rep.passed


def test_per_state_identity_on_random_models(rng):
    for _ in range(10):
        m = random_model(rng, int(rng.integers(2, 6)))
        rep = commutator_residual(m, ThermalPoint(float(rng.uniform(0.2, 2.0))))
        assert rep.passed, rep


def test_path_derivative_matches_finite_difference(rng):
    m = random_model(rng, 3)
    for fam, lam, pt in [(SA, 1.7, None), (EQA, 0.3, ThermalPoint(0.8)), (QA, 0.5, None)]:
        path = HamiltonianPath(m, fam, pt)
        h = 1e-6
        fd = (path.dense(lam + h) - path.dense(lam - h)) / (2 * h)
        np.testing.assert_allclose(path.derivative_dense(lam), fd, atol=1e-7)
    with pytest.raises(ContractError):
        HamiltonianPath(m, EQA)


def test_frozen_schedule_keeps_ground_state(ising2):
    pt = ThermalPoint(0.5)
    s = make_constant_schedule(EQA, 0.4, 50.0, 2)
    tr = propagate(ising2, EQA, s, IntegratorConfig(n_samples=20), pt)
    assert np.all(tr.column("fidelity") >= 1 - 1e-9)
    assert tr.max_norm_drift <= 1e-12


def test_trace_schema_and_short_sa_run():
    m = ClassicalModel(2, (((0, 1), 1.0),))
    s = make_sa_schedule(1.0, 2, 0.05, 1.0)
    tr = propagate(m, SA, s, IntegratorConfig(n_samples=25))
    assert TRACE_COLUMNS == ("t", "lambda", "gap", "fidelity", "energy", "monitor", "norm_drift")
    assert tr.samples.shape == (26, 7)
    assert tr.column("t")[-1] == pytest.approx(s.total_time)
    assert tr.final_fidelity >= 0.95
    fast = propagate(m, SA, s.compressed(100.0), IntegratorConfig(n_samples=25))
    assert fast.final_fidelity < tr.final_fidelity


def test_plain_qa_annealing_reaches_classical_ground_state():
    m = ClassicalModel(1, (((0,), 0.3),))
    s = make_eqa_schedule(1, 1.0, 0.05, 1.0, 0.05, family=QA)
    tr = propagate(m, QA, s, IntegratorConfig(n_samples=20))
    assert tr.final_fidelity >= 0.95
