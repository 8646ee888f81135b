import numpy as np
import pytest

from gridse.network import load_partition, make_partition
from gridse.powerflow import solve_power_flow
from gridse.measurement import load_plan, synthesize
from gridse.estimators import ObservabilityError, pmu_linear_estimate, wls_estimate
from gridse.admm import AdmmOptions, consensus_residuals, run_admm
from gridse.fixtures import load_case_fixture, load_fixture


@pytest.fixture(scope="module")
def setup14():
    model = load_case_fixture("ieee14.json")
    plan = load_plan(load_fixture("ieee14_plan.json"), model)
    part = load_partition(load_fixture("ieee14_areas4.json"), model)
    truth = solve_power_flow(model)
    mset = synthesize(model, plan, truth, seed=1)
    return model, plan, part, truth, mset


def single_area_setup(model, truth, seed=1):
    doc = load_fixture("ieee14_plan.json")
    for e in doc["scada"]:
        e["area"] = "all"
    for e in doc["pmu"]:
        e["area"] = "all"
    plan = load_plan(doc, model)
    part = make_partition([("all", model.bus_ids)], model)
    return plan, part, synthesize(model, plan, truth, seed=seed)


def test_single_area_equals_centralized(setup14):
    model, _, _, truth, _ = setup14
    plan1, part1, mset1 = single_area_setup(model, truth)
    dse = run_admm(model, part1, mset1, "scada", AdmmOptions(eps=1e-8))
    assert dse.converged and dse.iterations == 1
    pooled = wls_estimate(model, mset1)
    np.testing.assert_allclose(dse.vm, pooled.vm, atol=1e-12)
    np.testing.assert_allclose(dse.va, pooled.va, atol=1e-12)


def test_scada_dse_matches_pooled(setup14):
    model, plan, part, truth, mset = setup14
    dse = run_admm(model, part, mset, "scada",
                   AdmmOptions(eps=1e-8, max_iter=3000, over_relax=1.6))
    assert dse.converged
    pooled = wls_estimate(model, mset, tol=1e-10)
    assert np.max(np.abs(dse.vm - pooled.vm)) < 1e-5
    assert np.max(np.abs(dse.va - pooled.va)) < 1e-5
    assert dse.support.all()


def test_pmu_dse_matches_pooled_on_support(setup14):
    model, plan, part, truth, mset = setup14
    dse = run_admm(model, part, mset, "pmu", AdmmOptions(eps=1e-8, max_iter=5000))
    assert dse.converged
    pooled = pmu_linear_estimate(model, mset)
    gidx = {b: i for i, b in enumerate(pooled.bus_ids)}
    for i, b in enumerate(model.bus_ids):
        if dse.support[i]:
            assert abs(dse.vm[i] - pooled.vm[gidx[b]]) < 1e-5
            assert abs(dse.va[i] - pooled.va[gidx[b]]) < 1e-5
    # owner-reported support excludes buses whose owning area has no
    # phasor route to them; with this plan these are exactly 3 and 11
    missing = {b for i, b in enumerate(model.bus_ids) if not dse.support[i]}
    assert missing == {"3", "11"}


def test_eps_controls_accuracy(setup14):
    model, plan, part, truth, mset = setup14
    pooled = wls_estimate(model, mset, tol=1e-10)
    errs = []
    for eps in (1e-3, 1e-5, 1e-7):
        dse = run_admm(model, part, mset, "scada",
                       AdmmOptions(eps=eps, max_iter=5000, over_relax=1.6))
        assert dse.converged
        errs.append(max(np.max(np.abs(dse.vm - pooled.vm)),
                        np.max(np.abs(dse.va - pooled.va))))
    assert errs[0] >= errs[1] >= errs[2]


def test_consensus_residual_series(setup14):
    model, plan, part, truth, mset = setup14
    opts = AdmmOptions(eps=1e-5, max_iter=2000, over_relax=1.6)
    dse = run_admm(model, part, mset, "scada", opts)
    series = consensus_residuals(dse.trace)
    n = dse.iterations
    assert len(series["primal"]) == len(series["dual"]) == len(series["objective"]) == n
    assert max(series["primal"][-1], series["dual"][-1]) < opts.eps
    assert np.all(series["primal"] >= 0)
    # boundary disagreement at convergence
    assert dse.trace.disagreement[-1].max() < 10 * opts.eps


def test_single_area_residuals_zero(setup14):
    model, _, _, truth, _ = setup14
    plan1, part1, mset1 = single_area_setup(model, truth)
    dse = run_admm(model, part1, mset1, "scada", AdmmOptions(eps=1e-8))
    series = consensus_residuals(dse.trace)
    np.testing.assert_allclose(series["primal"], 0.0, atol=1e-15)


def test_neighbor_only_interactions(setup14):
    model, plan, part, truth, mset = setup14
    for kind in ("scada", "pmu"):
        dse = run_admm(model, part, mset, kind, AdmmOptions(eps=1e-4, max_iter=500))
        for s, r in dse.interactions.pairs:
            assert s != r
            assert r in part.neighbors[s], f"{kind}: non-neighbor message {s}->{r}"


def test_parallel_area_execution_bit_identical(setup14):
    model, plan, part, truth, mset = setup14
    a = run_admm(model, part, mset, "scada",
                 AdmmOptions(eps=1e-6, max_iter=800, over_relax=1.6, parallel_areas=False))
    b = run_admm(model, part, mset, "scada",
                 AdmmOptions(eps=1e-6, max_iter=800, over_relax=1.6, parallel_areas=True))
    np.testing.assert_array_equal(a.vm, b.vm)
    np.testing.assert_array_equal(a.va, b.va)
    np.testing.assert_array_equal(a.trace.primal, b.trace.primal)


def test_warm_start_reduces_iterations(setup14):
    model, plan, part, truth, mset = setup14
    opts = AdmmOptions(eps=1e-6, max_iter=3000, over_relax=1.6)
    cold = run_admm(model, part, mset, "scada", opts)
    warm = run_admm(model, part, mset, "scada", opts, warm=cold)
    assert warm.converged
    assert warm.iterations < max(3, cold.iterations // 4)


def test_unobservable_rejected(setup14):
    model, plan, part, truth, mset = setup14
    crippled = mset.copy()
    crippled.active_scada[:] = False
    vm_idx = plan.scada_indices(kinds=("vm",))
    crippled.active_scada[vm_idx] = True
    with pytest.raises(ObservabilityError):
        run_admm(model, part, crippled, "scada", AdmmOptions())


def test_hybrid_dse_matches_pooled(setup14):
    model, plan, part, truth, mset = setup14
    dse = run_admm(model, part, mset, "hybrid",
                   AdmmOptions(eps=1e-7, max_iter=3000, over_relax=1.6))
    assert dse.converged
    pooled = wls_estimate(model, mset, pmu_idx=plan.pmu_indices(), tol=1e-10)
    assert np.max(np.abs(dse.vm - pooled.vm)) < 1e-5
    assert np.max(np.abs(dse.va - pooled.va)) < 1e-5
