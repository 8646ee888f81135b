import numpy as np
import pytest

from gridse.network import Branch, Bus, Gen, Load, NetworkModel, build_admittance
from gridse.powerflow import StateVector, solve_power_flow
from gridse.measurement import (
    MeasurementSet,
    check_observability,
    evaluate_pmu,
    evaluate_scada,
    inject_bad_data,
    load_plan,
    pmu_design_matrix,
    pmu_reachable,
    scada_jacobian,
    synthesize,
)
from gridse.fixtures import load_case_fixture, load_fixture
from gridse.network import load_partition


@pytest.fixture(scope="module")
def ieee14():
    return load_case_fixture("ieee14.json")


@pytest.fixture(scope="module")
def plan14(ieee14):
    return load_plan(load_fixture("ieee14_plan.json"), ieee14)


@pytest.fixture(scope="module")
def part14(ieee14):
    return load_partition(load_fixture("ieee14_areas4.json"), ieee14)


@pytest.fixture(scope="module")
def truth14(ieee14):
    return solve_power_flow(ieee14)


def lossless_three_bus():
    return NetworkModel(
        buses=[Bus("1", "slack"), Bus("2"), Bus("3")],
        branches=[Branch("1", "2", 0.0, 0.1), Branch("2", "3", 0.0, 0.2)],
    )


def plan_doc_three_bus():
    return {
        "scada": [
            {"kind": "vm", "bus": "1", "sigma": 0.004},
            {"kind": "p_inj", "bus": "2", "sigma": 0.01},
            {"kind": "q_inj", "bus": "2", "sigma": 0.01},
            {"kind": "p_flow", "branch": ["1", "2"], "end": "from", "sigma": 0.01},
            {"kind": "q_flow", "branch": ["2", "3"], "end": "to", "sigma": 0.01},
        ],
        "pmu": [{"bus": "2", "currents": [["1", "2"], ["2", "3"]], "sigma_v": 0.001, "sigma_i": 0.001}],
    }


def test_flat_lossless_scada_values():
    model = lossless_three_bus()
    plan = load_plan(plan_doc_three_bus(), model)
    vals = evaluate_scada(model, StateVector.flat(3), plan)
    np.testing.assert_allclose(vals, [1.0, 0, 0, 0, 0], atol=1e-14)


def test_scada_roundtrip_at_solution(ieee14, plan14, truth14):
    vals = evaluate_scada(ieee14, truth14.state, plan14)
    for i, e in enumerate(plan14.scada):
        if e.kind == "vm":
            expected = truth14.state.vm[e.bus]
        elif e.kind == "p_inj":
            expected = truth14.p[e.bus]
        elif e.kind == "q_inj":
            expected = truth14.q[e.bus]
        elif e.kind == "p_flow":
            expected = truth14.flows.p_from[e.branch] if e.from_end else truth14.flows.p_to[e.branch]
        else:
            expected = truth14.flows.q_from[e.branch] if e.from_end else truth14.flows.q_to[e.branch]
        assert vals[i] == pytest.approx(expected, abs=1e-12), plan14.describe(("scada", i))


def dense_scada_oracle(model, state, plan):
    """Textbook trig formulas, independent of the production evaluator."""
    y = build_admittance(model).ybus.toarray()
    g, b = y.real, y.imag
    vm, va = state.vm, state.va
    n = model.n_bus
    out = []
    for e in plan.scada:
        if e.kind == "vm":
            out.append(vm[e.bus])
        elif e.kind in ("p_inj", "q_inj"):
            k = e.bus
            p = sum(
                vm[k] * vm[m] * (g[k, m] * np.cos(va[k] - va[m]) + b[k, m] * np.sin(va[k] - va[m]))
                for m in range(n)
            )
            q = sum(
                vm[k] * vm[m] * (g[k, m] * np.sin(va[k] - va[m]) - b[k, m] * np.cos(va[k] - va[m]))
                for m in range(n)
            )
            out.append(p if e.kind == "p_inj" else q)
        else:
            br = model.branches[e.branch]
            from gridse.network import branch_admittances

            yff, yft, ytf, ytt = branch_admittances(br)
            f, t = model.index(br.from_bus), model.index(br.to_bus)
            vf = vm[f] * np.exp(1j * va[f])
            vt = vm[t] * np.exp(1j * va[t])
            s = vf * np.conj(yff * vf + yft * vt) if e.from_end else vt * np.conj(ytf * vf + ytt * vt)
            out.append(s.real if e.kind == "p_flow" else s.imag)
    return np.array(out)


def test_scada_matches_dense_oracle(ieee14, plan14):
    rng = np.random.default_rng(11)
    state = StateVector(1 + 0.04 * rng.standard_normal(14), 0.15 * rng.standard_normal(14))
    np.testing.assert_allclose(
        evaluate_scada(ieee14, state, plan14),
        dense_scada_oracle(ieee14, state, plan14),
        atol=1e-12,
    )


def fd_jacobian(model, state, plan, step=1e-6):
    slack = model.slack_index
    n = model.n_bus
    theta_cols = [i for i in range(n) if i != slack]

    def h(vm, va):
        return evaluate_scada(model, StateVector(vm, va), plan)

    cols = []
    for i in theta_cols:
        va1, va2 = state.va.copy(), state.va.copy()
        va1[i] += step
        va2[i] -= step
        cols.append((h(state.vm, va1) - h(state.vm, va2)) / (2 * step))
    for i in range(n):
        vm1, vm2 = state.vm.copy(), state.vm.copy()
        vm1[i] += step
        vm2[i] -= step
        cols.append((h(vm1, state.va) - h(vm2, state.va)) / (2 * step))
    return np.array(cols).T


def test_jacobian_matches_finite_differences(ieee14, plan14, truth14):
    h = scada_jacobian(ieee14, truth14.state, plan14)
    fd = fd_jacobian(ieee14, truth14.state, plan14)
    scale = np.maximum(np.abs(fd), 1e-3)
    assert np.max(np.abs(h - fd) / scale) < 1e-5


def test_jacobian_flat_r_zero_network():
    model = lossless_three_bus()
    plan = load_plan({"scada": [{"kind": "p_inj", "bus": "2", "sigma": 0.01}]}, model)
    h = scada_jacobian(model, StateVector.flat(3), plan)
    b = build_admittance(model).ybus.toarray().imag
    # columns: theta_2, theta_3, V1, V2, V3 (slack theta dropped)
    assert h[0, 1] == pytest.approx(-b[1, 2])  # dP2/dtheta3 = -B23
    # vm row is a unit selector
    plan_v = load_plan({"scada": [{"kind": "vm", "bus": "3", "sigma": 0.004}]}, model)
    hv = scada_jacobian(model, StateVector.flat(3), plan_v)
    expected = np.zeros(5)
    expected[4] = 1.0
    np.testing.assert_allclose(hv[0], expected, atol=1e-14)


# -- PMU -------------------------------------------------------------------------


def test_voltage_only_design_is_selector():
    model = lossless_three_bus()
    plan = load_plan({"pmu": [{"bus": "2", "currents": [], "sigma_v": 0.001}]}, model)
    c = pmu_design_matrix(model, plan)
    expected = np.zeros((2, 6))
    expected[0, 1] = 1.0  # e_2
    expected[1, 4] = 1.0  # f_2
    np.testing.assert_allclose(c, expected, atol=1e-14)


def test_two_bus_current_rows():
    model = NetworkModel(
        buses=[Bus("1", "slack"), Bus("2")], branches=[Branch("1", "2", 0.0, 0.1)]
    )
    plan = load_plan({"pmu": [{"bus": "1", "currents": [["1", "2"]], "sigma_v": 0.001}]}, model)
    c = pmu_design_matrix(model, plan)
    # rows: V1 re, V1 im, I12 re, I12 im over [e1 e2 f1 f2]; y = -10j
    np.testing.assert_allclose(c[2], [0, 0, 10, -10], atol=1e-12)
    np.testing.assert_allclose(c[3], [-10, 10, 0, 0], atol=1e-12)


def test_design_times_rect_state_is_noise_free(ieee14, plan14, truth14):
    c = pmu_design_matrix(ieee14, plan14)
    x = np.concatenate([truth14.state.e, truth14.state.f])
    np.testing.assert_allclose(c @ x, evaluate_pmu(ieee14, truth14.state, plan14), atol=1e-12)


def test_pmu_design_state_independent(ieee14, plan14):
    # the polar evaluation at any state equals C applied to that state's (e, f)
    rng = np.random.default_rng(12)
    c = pmu_design_matrix(ieee14, plan14)
    state = StateVector(1 + 0.05 * rng.standard_normal(14), 0.2 * rng.standard_normal(14))
    np.testing.assert_allclose(
        c @ np.concatenate([state.e, state.f]),
        evaluate_pmu(ieee14, state, plan14),
        atol=1e-12,
    )


# -- observability ----------------------------------------------------------------


def test_pmu_globally_observable(ieee14, plan14, part14):
    rep = check_observability(ieee14, plan14, scope="global")
    assert rep.observable("global", "pmu")
    assert rep.observable("global", "scada")
    assert rep.get("global", "pmu").rank == 28


def test_pmu_locally_unobservable_somewhere(ieee14, plan14, part14):
    rep = check_observability(ieee14, plan14, partition=part14, scope="area")
    flags = [rep.observable(name, "pmu") for name in part14.names]
    assert not all(flags)
    # every area remains SCADA-observable with its own measurements
    assert all(rep.observable(name, "scada") for name in part14.names)


def test_no_measurements_all_unobservable(ieee14):
    plan = load_plan({"scada": [], "pmu": []}, ieee14)
    rep = check_observability(ieee14, plan, scope="global")
    assert not rep.observable("global", "scada")
    assert len(rep.get("global", "scada").unobservable_buses) == 14
    assert len(rep.get("global", "pmu").unobservable_buses) == 14


def test_observability_monotone_under_added_measurements(ieee14, plan14):
    rng = np.random.default_rng(13)
    doc = load_fixture("ieee14_plan.json")
    keep = [e for e in doc["scada"] if rng.random() < 0.4]
    small = load_plan({"scada": keep, "pmu": []}, ieee14)
    big = load_plan({"scada": doc["scada"], "pmu": []}, ieee14)
    rep_small = check_observability(ieee14, small, scope="global")
    rep_big = check_observability(ieee14, big, scope="global")
    bad_small = set(rep_small.get("global", "scada").unobservable_buses)
    bad_big = set(rep_big.get("global", "scada").unobservable_buses)
    assert bad_big <= bad_small


def test_pmu_reachable_matches_bfs_oracle(ieee14, plan14):
    reach = pmu_reachable(ieee14, plan14, plan14.pmu_indices())
    # brute force: a bus is reachable iff it has a PMU or shares a measured branch
    # with a reachable bus; iterate to a fixed point
    measured = set()
    for c in plan14.pmu:
        if c.is_current:
            br = ieee14.branches[c.branch]
            measured.add((ieee14.index(br.from_bus), ieee14.index(br.to_bus)))
    have = {c.bus for c in plan14.pmu if not c.is_current}
    while True:
        add = {
            (t if f in have else f)
            for f, t in measured
            if (f in have) != (t in have)
        }
        if not add - have:
            break
        have |= add
    assert reach == have
    assert reach == set(range(14))  # buses 2,6,7,9 with incident currents cover all


# -- synthesis ---------------------------------------------------------------------


def test_sigma_zero_limit(ieee14, truth14):
    doc = load_fixture("ieee14_plan.json")
    for e in doc["scada"]:
        e["sigma"] = 1e-300
    for p in doc["pmu"]:
        p["sigma_v"] = p["sigma_i"] = 1e-300
    plan = load_plan(doc, ieee14)
    mset = synthesize(ieee14, plan, truth14, seed=1)
    np.testing.assert_allclose(mset.z_scada, evaluate_scada(ieee14, truth14.state, plan), atol=1e-12)
    np.testing.assert_allclose(mset.z_pmu, evaluate_pmu(ieee14, truth14.state, plan), atol=1e-12)


def test_synthesis_deterministic(ieee14, plan14, truth14):
    a = synthesize(ieee14, plan14, truth14, seed=42)
    b = synthesize(ieee14, plan14, truth14, seed=42)
    np.testing.assert_array_equal(a.z_scada, b.z_scada)
    np.testing.assert_array_equal(a.z_pmu, b.z_pmu)
    c = synthesize(ieee14, plan14, truth14, seed=43)
    assert not np.array_equal(a.z_scada, c.z_scada)


@pytest.mark.slow
def test_sample_variance(ieee14, plan14, truth14):
    n = 10_000
    entry = 5  # a p_inj entry, sigma 0.01
    clean = evaluate_scada(ieee14, truth14.state, plan14)[entry]
    draws = np.array(
        [synthesize(ieee14, plan14, truth14, seed=s).z_scada[entry] for s in range(n)]
    )
    var = np.var(draws - clean)
    assert abs(var - 0.01**2) / 0.01**2 < 0.05


# -- bad data ------------------------------------------------------------------------


def test_empty_spec_is_identity(ieee14, plan14, truth14):
    mset = synthesize(ieee14, plan14, truth14, seed=3)
    out = inject_bad_data(mset, [], seed=3, model=ieee14)
    np.testing.assert_array_equal(out.z_scada, mset.z_scada)
    assert out.labels == {}


def test_single_sigma_error(ieee14, plan14, truth14):
    mset = synthesize(ieee14, plan14, truth14, seed=4)
    spec = [{"select": {"type": "scada", "kind": "p_flow", "branch": ["9", "14"], "end": "from"},
             "mode": "sigma", "value": 20}]
    out = inject_bad_data(mset, spec, seed=4, model=ieee14)
    assert len(out.labels) == 1
    ((side, i), label), = out.labels.items()
    assert side == "scada"
    assert out.z_scada[i] == pytest.approx(mset.z_scada[i] + 20 * 0.01)
    assert label["original"] == pytest.approx(mset.z_scada[i])


def test_conforming_pair_same_sign(ieee14, plan14, truth14):
    mset = synthesize(ieee14, plan14, truth14, seed=5)
    spec = [{"mode": "conforming", "bus": "5", "branch": ["5", "6"], "end": "from", "value": 25}]
    out = inject_bad_data(mset, spec, seed=5, model=ieee14)
    assert len(out.labels) == 2
    deltas = [lbl["injected"] - lbl["original"] for lbl in out.labels.values()]
    assert np.sign(deltas[0]) == np.sign(deltas[1])
    kinds = {mset.plan.scada[i].kind for (_, i) in out.labels}
    assert kinds == {"p_inj", "p_flow"}


def test_random_selector_deterministic(ieee14, plan14, truth14):
    mset = synthesize(ieee14, plan14, truth14, seed=6)
    spec = [{"select": {"random": "scada"}, "mode": "sigma", "value": 20, "random_sign": True}]
    a = inject_bad_data(mset, spec, seed=6, model=ieee14)
    b = inject_bad_data(mset, spec, seed=6, model=ieee14)
    assert a.labels == b.labels
