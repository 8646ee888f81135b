import numpy as np
import pytest

from gridse.network import Branch, Bus, Gen, Load, NetworkModel, build_admittance, load_case
from gridse.powerflow import (
    ConvergenceError,
    StateVector,
    branch_flows,
    injections,
    solve_power_flow,
)
from gridse.fixtures import load_case_fixture


def two_bus(p_load=0.1, q_load=0.0, x=0.1, r=0.0):
    return NetworkModel(
        buses=[Bus("1", "slack"), Bus("2")],
        branches=[Branch("1", "2", r, x)],
        loads=[Load("2", p_load, q_load)],
        gens=[Gen("1", 0.0, 1.0)],
    )


@pytest.fixture(scope="module")
def ieee14():
    return load_case_fixture("ieee14.json")


def test_zero_injection_flat_start():
    model = NetworkModel(
        buses=[Bus("1", "slack"), Bus("2")],
        branches=[Branch("1", "2", 0.0, 0.1)],
        gens=[Gen("1", 0.0, 1.0)],
    )
    op = solve_power_flow(model)
    assert op.iterations <= 1
    np.testing.assert_allclose(op.state.vm, 1.0, atol=1e-12)
    np.testing.assert_allclose(op.state.va, 0.0, atol=1e-12)


def test_two_bus_against_closed_form():
    # lossless branch, P load only: S2 = V2*conj(y(V2-V1)) with y=-10j gives
    # 10*b = -P and a^2 - a + b^2 = 0 for V2 = a + jb (closed form, no NR)
    p = 0.1
    model = two_bus(p_load=p)
    op = solve_power_flow(model, tolerance=1e-12)
    b = -p / 10.0
    a = 0.5 * (1.0 + np.sqrt(1.0 - 4.0 * b * b))
    assert op.state.vm[1] == pytest.approx(np.hypot(a, b), abs=1e-8)
    assert op.state.va[1] == pytest.approx(np.arctan2(b, a), abs=1e-8)


def test_ieee14_reproduces_specified_loads(ieee14):
    op = solve_power_flow(ieee14, tolerance=1e-10)
    p_spec, q_spec = ieee14.scheduled_injections()
    kinds = ieee14.bus_kinds()
    pq = kinds == "load"
    nonslack = np.arange(ieee14.n_bus) != ieee14.slack_index
    np.testing.assert_allclose(op.p[nonslack], p_spec[nonslack], atol=1e-9)
    np.testing.assert_allclose(op.q[pq], q_spec[pq], atol=1e-9)
    # generator setpoints honored
    vset = ieee14.voltage_setpoints()
    gen = kinds == "generator"
    np.testing.assert_allclose(op.state.vm[gen], vset[gen], atol=1e-12)


def test_nonconvergence_reported():
    model = two_bus(p_load=20.0)  # far beyond the transfer limit
    with pytest.raises(ConvergenceError):
        solve_power_flow(model, max_iter=10)


# -- flows ---------------------------------------------------------------------


def test_flat_state_no_shunt_flows_zero():
    model = two_bus(p_load=0.0)
    flows = branch_flows(model, StateVector.flat(2))
    np.testing.assert_allclose(flows.s_from, 0, atol=1e-14)
    np.testing.assert_allclose(flows.s_to, 0, atol=1e-14)


def test_two_bus_sending_equals_load_plus_losses():
    model = two_bus(p_load=0.2, q_load=0.05, r=0.02)
    op = solve_power_flow(model)
    losses = op.flows.p_from + op.flows.p_to
    assert op.flows.p_from[0] == pytest.approx(0.2 + losses[0], abs=1e-9)


def test_flows_match_branch_removal_oracle(ieee14):
    # at fixed state, removing one branch changes the terminal injections by
    # exactly the branch's terminal flows
    op = solve_power_flow(ieee14)
    state = op.state
    flows = branch_flows(ieee14, state)
    for k in [0, 6, 9, 14, 19]:
        br = ieee14.branches[k]
        reduced = NetworkModel(
            buses=ieee14.buses,
            branches=[
                Branch(b.from_bus, b.to_bus, b.r, b.x, b.b, b.tap, b.shift, b.status and i != k)
                for i, b in enumerate(ieee14.branches)
            ],
            base_mva=ieee14.base_mva,
            loads=ieee14.loads,
            gens=ieee14.gens,
        )
        p0, q0 = injections(ieee14, state)
        p1, q1 = injections(reduced, state)
        f, t = ieee14.index(br.from_bus), ieee14.index(br.to_bus)
        assert (p0 - p1)[f] == pytest.approx(flows.p_from[k], abs=1e-10)
        assert (q0 - q1)[f] == pytest.approx(flows.q_from[k], abs=1e-10)
        assert (p0 - p1)[t] == pytest.approx(flows.p_to[k], abs=1e-10)
        assert (q0 - q1)[t] == pytest.approx(flows.q_to[k], abs=1e-10)


# -- injections ----------------------------------------------------------------


def test_flat_lossless_injections_zero():
    model = NetworkModel(
        buses=[Bus("1", "slack"), Bus("2"), Bus("3")],
        branches=[Branch("1", "2", 0.0, 0.1), Branch("2", "3", 0.0, 0.2)],
    )
    p, q = injections(model, StateVector.flat(3))
    np.testing.assert_allclose(p, 0, atol=1e-14)
    np.testing.assert_allclose(q, 0, atol=1e-14)


def test_injections_equal_incident_flows_plus_shunts(ieee14):
    rng = np.random.default_rng(3)
    state = StateVector(1 + 0.05 * rng.standard_normal(14), 0.1 * rng.standard_normal(14))
    p, q = injections(ieee14, state)
    flows = branch_flows(ieee14, state)
    y = build_admittance(ieee14)
    for i, bus in enumerate(ieee14.buses):
        s = 0j
        for k in range(len(ieee14.branches)):
            if y.f_idx[k] == i:
                s += flows.s_from[k]
            if y.t_idx[k] == i:
                s += flows.s_to[k]
        s += state.vm[i] ** 2 * np.conj(complex(bus.gs, bus.bs))
        assert p[i] == pytest.approx(s.real, abs=1e-10)
        assert q[i] == pytest.approx(s.imag, abs=1e-10)


def test_injections_match_bruteforce(ieee14):
    rng = np.random.default_rng(4)
    state = StateVector(1 + 0.03 * rng.standard_normal(14), 0.2 * rng.standard_normal(14))
    ybar = build_admittance(ieee14).ybus.toarray()
    v = state.v_complex
    p, q = injections(ieee14, state)
    for k in range(14):
        s = v[k] * np.conj(sum(ybar[k, m] * v[m] for m in range(14)))
        assert p[k] == pytest.approx(s.real, abs=1e-12)
        assert q[k] == pytest.approx(s.imag, abs=1e-12)


# -- invariants ----------------------------------------------------------------


def test_power_balance(ieee14):
    tol = 1e-10
    op = solve_power_flow(ieee14, tolerance=tol)
    flows = branch_flows(ieee14, op.state)
    line_losses = (flows.s_from + flows.s_to).real
    shunt = sum(
        op.state.vm[i] ** 2 * bus.gs for i, bus in enumerate(ieee14.buses)
    )
    assert op.p.sum() == pytest.approx(line_losses.sum() + shunt, abs=10 * tol)


def test_gauge_shift_invariance(ieee14):
    rng = np.random.default_rng(5)
    state = StateVector(1 + 0.02 * rng.standard_normal(14), 0.1 * rng.standard_normal(14))
    shifted = StateVector(state.vm, state.va + 0.7)
    p0, q0 = injections(ieee14, state)
    p1, q1 = injections(ieee14, shifted)
    np.testing.assert_allclose(p0, p1, atol=1e-10)
    np.testing.assert_allclose(q0, q1, atol=1e-10)
    f0 = branch_flows(ieee14, state)
    f1 = branch_flows(ieee14, shifted)
    np.testing.assert_allclose(np.abs(f0.s_from), np.abs(f1.s_from), atol=1e-10)


def test_polar_rect_roundtrip():
    rng = np.random.default_rng(6)
    vm = 0.9 + 0.2 * rng.random(40)
    va = np.pi * (2 * rng.random(40) - 1) * 0.99
    s = StateVector(vm, va)
    back = StateVector.from_rectangular(s.e, s.f)
    np.testing.assert_allclose(back.vm, vm, atol=1e-12)
    np.testing.assert_allclose(back.va, va, atol=1e-12)
