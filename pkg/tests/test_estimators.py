import numpy as np
import pytest

from gridse.network import Branch, Bus, NetworkModel
from gridse.powerflow import StateVector, solve_power_flow
from gridse.measurement import MeasurementSet, load_plan, synthesize
from gridse.estimators import (
    ObservabilityError,
    pmu_linear_estimate,
    wls_estimate,
)
from gridse.fixtures import load_case_fixture, load_fixture


@pytest.fixture(scope="module")
def ieee14():
    return load_case_fixture("ieee14.json")


@pytest.fixture(scope="module")
def plan14(ieee14):
    return load_plan(load_fixture("ieee14_plan.json"), ieee14)


@pytest.fixture(scope="module")
def truth14(ieee14):
    return solve_power_flow(ieee14)


def noise_free_set(model, plan, truth):
    from gridse.measurement import evaluate_pmu, evaluate_scada

    return MeasurementSet(
        plan=plan,
        z_scada=evaluate_scada(model, truth.state, plan),
        z_pmu=evaluate_pmu(model, truth.state, plan),
    )


def three_bus():
    model = NetworkModel(
        buses=[Bus("1", "slack"), Bus("2"), Bus("3")],
        branches=[Branch("1", "2", 0.01, 0.1), Branch("2", "3", 0.02, 0.2), Branch("1", "3", 0.015, 0.25)],
    )
    plan = load_plan(
        {
            "scada": [
                {"kind": "vm", "bus": "1", "sigma": 0.004},
                {"kind": "vm", "bus": "2", "sigma": 0.004},
                {"kind": "vm", "bus": "3", "sigma": 0.004},
                {"kind": "p_inj", "bus": "2", "sigma": 0.01},
                {"kind": "q_inj", "bus": "2", "sigma": 0.01},
                {"kind": "p_inj", "bus": "3", "sigma": 0.01},
                {"kind": "q_inj", "bus": "3", "sigma": 0.01},
                {"kind": "p_flow", "branch": ["1", "2"], "end": "from", "sigma": 0.01},
                {"kind": "q_flow", "branch": ["1", "2"], "end": "from", "sigma": 0.01},
                {"kind": "p_flow", "branch": ["1", "3"], "end": "from", "sigma": 0.01},
                {"kind": "q_flow", "branch": ["1", "3"], "end": "from", "sigma": 0.01},
            ]
        },
        model,
    )
    return model, plan


def test_noise_free_recovers_truth(ieee14, plan14, truth14):
    mset = noise_free_set(ieee14, plan14, truth14)
    est = wls_estimate(ieee14, mset)
    assert est.converged
    np.testing.assert_allclose(est.vm, truth14.state.vm, atol=1e-8)
    np.testing.assert_allclose(est.va, truth14.state.va, atol=1e-8)
    assert est.objective < 1e-12


def gauss_newton_oracle(model, plan, z, w, n_iter=60):
    """Plain dense normal-equation iteration, written independently."""
    from gridse.measurement import evaluate_scada, scada_jacobian

    vm = np.ones(model.n_bus)
    va = np.zeros(model.n_bus)
    slack = model.slack_index
    keep = [i for i in range(model.n_bus) if i != slack]
    for _ in range(n_iter):
        state = StateVector(vm, va)
        h = evaluate_scada(model, state, plan)
        jac = scada_jacobian(model, state, plan)
        g = jac.T @ (w * (z - h))
        gain = jac.T @ np.diag(w) @ jac
        dx = np.linalg.solve(gain, g)
        va[keep] += dx[: len(keep)]
        vm += dx[len(keep):]
    return vm, va


def test_matches_dense_normal_equation_oracle():
    model, plan = three_bus()
    rng = np.random.default_rng(21)
    truth = StateVector(np.array([1.02, 0.98, 0.97]), np.array([0.0, -0.05, -0.09]))
    from gridse.measurement import evaluate_scada

    z = evaluate_scada(model, truth, plan) + 0.002 * rng.standard_normal(plan.n_scada)
    mset = MeasurementSet(plan=plan, z_scada=z, z_pmu=np.zeros(0))
    est = wls_estimate(model, mset, tol=1e-12)
    w = 1.0 / plan.scada_sigma() ** 2
    vm_o, va_o = gauss_newton_oracle(model, plan, z, w)
    np.testing.assert_allclose(est.vm, vm_o, atol=1e-8)
    np.testing.assert_allclose(est.va, va_o, atol=1e-8)


def test_single_voltage_only_unobservable(ieee14, plan14, truth14):
    mset = noise_free_set(ieee14, plan14, truth14)
    only_vm = plan14.scada_indices(kinds=("vm",))[:1]
    with pytest.raises(ObservabilityError):
        wls_estimate(ieee14, mset, scada_idx=only_vm)


def test_covariance_psd_and_objective_nonnegative(ieee14, plan14, truth14):
    mset = synthesize(ieee14, plan14, truth14, seed=9)
    est = wls_estimate(ieee14, mset)
    assert est.objective >= 0
    eig = np.linalg.eigvalsh(0.5 * (est.cov + est.cov.T))
    assert eig.min() > -1e-12


def test_gauge_relabel_invariance(ieee14, plan14, truth14):
    # a SCADA-only estimate is identified up to a constant angle shift
    mset = synthesize(ieee14, plan14, truth14, seed=10)
    a = wls_estimate(ieee14, mset, angle_ref="1")
    b = wls_estimate(ieee14, mset, angle_ref="5")
    shift = a.va[ieee14.index("5")] - b.va[ieee14.index("5")]
    np.testing.assert_allclose(a.va, b.va + shift, atol=1e-7)
    np.testing.assert_allclose(a.vm, b.vm, atol=1e-8)


def test_huber_matches_wls_on_clean_data(ieee14, plan14, truth14):
    mset = noise_free_set(ieee14, plan14, truth14)
    est = wls_estimate(ieee14, mset, huber_k=1.5)
    np.testing.assert_allclose(est.vm, truth14.state.vm, atol=1e-7)
    np.testing.assert_allclose(est.va, truth14.state.va, atol=1e-7)


# -- PMU linear --------------------------------------------------------------


def test_pmu_all_buses_exact(ieee14, truth14):
    doc = {"pmu": [{"bus": b, "currents": [], "sigma_v": 0.001} for b in map(str, range(1, 15))]}
    plan = load_plan(doc, ieee14)
    mset = noise_free_set(ieee14, plan, truth14)
    est = pmu_linear_estimate(ieee14, mset)
    assert est.iterations == 1
    np.testing.assert_allclose(est.vm, truth14.state.vm, atol=1e-12)
    np.testing.assert_allclose(est.va, truth14.state.va, atol=1e-12)


def test_pmu_adjacent_bus_recovered_two_bus():
    model = NetworkModel(
        buses=[Bus("1", "slack"), Bus("2")], branches=[Branch("1", "2", 0.0, 0.1)]
    )
    plan = load_plan({"pmu": [{"bus": "1", "currents": [["1", "2"]], "sigma_v": 0.001}]}, model)
    truth = StateVector(np.array([1.0, 0.97]), np.array([0.0, -0.06]))
    from gridse.measurement import evaluate_pmu

    mset = MeasurementSet(plan=plan, z_scada=np.zeros(0), z_pmu=evaluate_pmu(model, truth, plan))
    est = pmu_linear_estimate(model, mset)
    assert set(est.bus_ids) == {"1", "2"}
    np.testing.assert_allclose(est.vm, truth.vm, atol=1e-12)
    np.testing.assert_allclose(est.va, truth.va, atol=1e-12)


def test_pmu_matches_iterated_gauss_newton(ieee14, plan14, truth14):
    # same linear problem solved by the generic polar Gauss-Newton machinery;
    # no angle reference: PMU data identify the gauge by themselves
    from gridse.estimators import PolarSolver

    mset = synthesize(ieee14, plan14, truth14, seed=11)
    est = pmu_linear_estimate(ieee14, mset)
    idx = np.flatnonzero(mset.active_pmu)
    solver = PolarSolver(
        ieee14, plan14, mset.z_pmu[idx], mset.pmu_sigmas()[idx],
        np.array([], dtype=int), idx, np.arange(14), (),
    )
    # with weights of 1e6 a gradient norm of 1e-6 corresponds to state
    # increments around 1e-14, far inside the comparison tolerance
    vm, va, j, it, conv, g = solver.solve(tol=1e-6, max_iter=200)
    assert conv
    np.testing.assert_allclose(est.vm, vm, atol=1e-10)
    np.testing.assert_allclose(est.va, va, atol=1e-10)


def test_pmu_empty_set_rejected(ieee14, plan14, truth14):
    from gridse.estimators import EstimationError

    mset = noise_free_set(ieee14, plan14, truth14)
    with pytest.raises(EstimationError):
        pmu_linear_estimate(ieee14, mset, pmu_idx=np.array([], dtype=int))


def test_gn_step_halving_never_increases_objective(ieee14, plan14, truth14):
    # start far from the optimum and record the objective through iterations
    from gridse.estimators import PolarSolver

    mset = synthesize(ieee14, plan14, truth14, seed=12)
    idx = np.flatnonzero(mset.active_scada)
    z = mset.z_scada[idx]
    sig = mset.scada_sigmas()[idx]
    solver = PolarSolver(ieee14, plan14, z, sig, idx, np.array([], dtype=int),
                         np.arange(14), (ieee14.slack_index,))
    rng = np.random.default_rng(0)
    vm = 1 + 0.08 * rng.standard_normal(14)
    va = 0.3 * rng.standard_normal(14)
    objs = [solver.objective(vm, va)]
    for _ in range(8):
        vm, va, j, it, conv, g = solver.solve(vm, va, tol=1e-14, max_iter=1)
        objs.append(solver.objective(vm, va))
        if conv:
            break
    assert all(b <= a + 1e-9 * max(1, abs(a)) for a, b in zip(objs, objs[1:]))
