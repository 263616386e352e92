import numpy as np
import pytest

from sddpkit.cuts import Cut, CutPool
from sddpkit.engine import (
    EngineConfig,
    RegularizationSchedule,
    backward_pass,
    estimate_upper_bound,
    forward_pass,
    init_state,
    iterate,
    policy_decision,
    run,
)
from sddpkit.errors import EngineError
from sddpkit.model import (
    MultistageProblem,
    ProcessKind,
    ScenarioPath,
    StageRealization,
    UncertaintyProcess,
    enumerate_paths,
)
from sddpkit.oracle import build_and_solve_extensive_form
from support import newsvendor, random_recourse_instance


def state_with_cut(problem, cuts, config=None):
    state = init_state(problem, config or EngineConfig(iterations=1, ub_every=0))
    for t, info, cut in cuts:
        state.pool.add_cut(t, info, cut)
    return state


def newsvendor_cut(alpha=15.0, beta=-10.0, anchor=0.0):
    return Cut(alpha, np.array([beta]), np.array([anchor]), 0)


def test_forward_pass_iteration_zero_is_myopic():
    p = newsvendor()
    state = init_state(p, EngineConfig(iterations=1, ub_every=0))
    traj = forward_pass(state, ScenarioPath((0,), 0.5), 0)
    assert traj.x[0][0] == pytest.approx(0.0)
    assert traj.resource[0][0] == pytest.approx(0.0)


def test_forward_pass_uses_cuts_at_k1():
    p = newsvendor()
    state = state_with_cut(p, [(0, 0, newsvendor_cut())])
    traj = forward_pass(state, ScenarioPath((0,), 0.5), 1)
    assert traj.x[0][0] == pytest.approx(3.0)
    assert traj.stage_costs[0] == pytest.approx(3.0)
    assert traj.stage_costs[1] == pytest.approx(0.0)  # demand 1 covered by 3


def test_forward_pass_regularized_boundary_minimum():
    p = newsvendor()
    config = EngineConfig(
        iterations=2,
        regularized=True,
        schedule=RegularizationSchedule(1.0, 0.95),
        ub_every=0,
    )
    state = state_with_cut(p, [(0, 0, newsvendor_cut())], config)
    # rho^1 = 0.95; incumbent 0; minimum of x + 15 - 10x + 0.475 x^2 on [0,3]
    traj = forward_pass(state, ScenarioPath((0,), 0.5), 1)
    assert traj.x[0][0] == pytest.approx(3.0, abs=1e-6)
    # stage objective includes the proximal term (up to the strictly-convex
    # floor the engine adds, worth ~rho * 1e-8 * |y|^2 here)
    rho = 0.95
    expected = 3.0 + (15.0 - 30.0) + 0.5 * rho * 9.0
    assert traj.stage_objectives[0] == pytest.approx(expected, abs=1e-5)


def test_backward_pass_newsvendor_cut_values():
    p = newsvendor()
    state = init_state(p, EngineConfig(iterations=1, ub_every=0))
    traj = forward_pass(state, ScenarioPath((0,), 0.5), 0)
    added = backward_pass(state, traj, 0)
    assert added == 1
    cut = state.pool.cuts_at(0, 0)[0]
    assert cut.alpha == pytest.approx(15.0)
    assert cut.beta[0] == pytest.approx(-10.0)
    assert cut.anchor[0] == pytest.approx(0.0)


def test_backward_pass_zero_linkage_gives_constant_cut():
    # stage 1 rhs row has zero cost attached: dual 0, so beta = 0.
    stage0 = StageRealization(
        A=[[1.0, 1.0]], B=[[1.0, 0.0]], b=[3.0], c=[1.0, 0.0]
    )
    stage1 = StageRealization(
        A=[[1.0, -1.0]], B=np.zeros((0, 2)), b=[3.0], c=[0.0, 0.0]
    )
    process = UncertaintyProcess(
        kind=ProcessKind.STAGEWISE_INDEPENDENT,
        outcomes=((stage1,),),
        probs=(np.array([1.0]),),
    )
    p = MultistageProblem(T=1, stage0=stage0, process=process, resource_dims=(1,))
    state = init_state(p, EngineConfig(iterations=1, ub_every=0))
    traj = forward_pass(state, ScenarioPath((0,), 1.0), 0)
    backward_pass(state, traj, 0)
    cut = state.pool.cuts_at(0, 0)[0]
    assert cut.beta[0] == 0.0
    assert cut.alpha == pytest.approx(0.0)


def test_backward_pass_markov_adds_cut_per_info_state():
    p, _ = random_recourse_instance(2, markov=True, T=2)
    state = init_state(p, EngineConfig(iterations=1, ub_every=0))
    traj = forward_pass(state, ScenarioPath((0, 0), 1.0), 0)
    added = backward_pass(state, traj, 0)
    # stage 1 gets one cut per stage-1 info state, stage 0 exactly one
    n1 = p.process.n_outcomes(1)
    assert added == n1 + 1
    for i in range(n1):
        assert state.pool.n_cuts(1, i) == 1
    assert state.pool.n_cuts(0, 0) == 1


def test_backward_pass_decoupled_chain_cuts_use_own_successor():
    # identity transitions: each info state aggregates only its own column
    stage0 = StageRealization(A=[[1.0, 1.0]], B=[[1.0, 0.0]], b=[3.0], c=[1.0, 0.0])
    mid = tuple(
        StageRealization(A=[[1.0, -1.0]], B=[[1.0, 0.0]], b=[d], c=[10.0, 0.0])
        for d in (1.0, 2.0)
    )
    last = tuple(
        StageRealization(A=[[1.0, -1.0]], B=np.zeros((0, 2)), b=[d], c=[10.0, 0.0])
        for d in (1.0, 2.0)
    )
    process = UncertaintyProcess(
        kind=ProcessKind.MARKOV,
        outcomes=(mid, last),
        initial=np.array([0.5, 0.5]),
        transitions=(np.eye(2),),
    )
    p = MultistageProblem(T=2, stage0=stage0, process=process, resource_dims=(1, 1))
    state = init_state(p, EngineConfig(iterations=1, ub_every=0))
    traj = forward_pass(state, ScenarioPath((0, 0), 0.5), 0)
    backward_pass(state, traj, 0)
    c0 = state.pool.cuts_at(1, 0)[0]
    c1 = state.pool.cuts_at(1, 1)[0]
    # anchor R1 = 1 (myopic shortage of 1): own-successor values are
    # 10*max(d - 1, 0), i.e. 0 and 10; any cross-aggregation would give 5.
    assert c0.anchor[0] == pytest.approx(1.0)
    assert c0.alpha == pytest.approx(0.0)
    assert c1.alpha == pytest.approx(10.0)


def test_iterate_newsvendor_bound_sequence():
    p = newsvendor()
    state = init_state(p, EngineConfig(iterations=10, seed=0, ub_every=0))
    stats0 = iterate(state, 0)
    assert stats0.lower_bound == pytest.approx(-12.0)
    bounds = [stats0.lower_bound]
    for k in range(1, 6):
        bounds.append(iterate(state, k).lower_bound)
    assert bounds[-1] == pytest.approx(2.0, abs=1e-9)
    assert all(b2 >= b1 - 1e-9 for b1, b2 in zip(bounds, bounds[1:]))


def test_trajectory_resource_consistency():
    p, _ = random_recourse_instance(3, T=3)
    state = init_state(p, EngineConfig(iterations=3, seed=1, ub_every=0))
    iterate(state, 0)
    path = ScenarioPath(
        tuple(0 for _ in range(p.T)), 1.0
    )
    traj = forward_pass(state, path, 1)
    for t in range(p.T + 1):
        real = p.realization(t, -1 if t == 0 else path.indices[t - 1])
        assert np.abs(real.B @ traj.x[t] - traj.resource[t]).max(initial=0.0) <= 1e-10


def test_run_newsvendor_converges():
    pool, report = run(newsvendor(), EngineConfig(iterations=20, seed=3, ub_every=0))
    assert report.lower_bounds[-1] == pytest.approx(2.0, abs=1e-6)
    assert report.monotone_violations() == []


def test_run_markov_toy_converges_to_extensive_form():
    p, _ = random_recourse_instance(8, markov=True, T=3)
    v_star = build_and_solve_extensive_form(p)
    pool, report = run(
        p, EngineConfig(iterations=200, seed=0, ub_every=0, early_stop_patience=40)
    )
    assert report.lower_bounds[-1] == pytest.approx(v_star, rel=1e-6, abs=1e-6)


def test_run_reports_geometric_rho_exactly():
    p = newsvendor()
    config = EngineConfig(
        iterations=25,
        seed=1,
        regularized=True,
        schedule=RegularizationSchedule(1.0, 0.95),
        ub_every=0,
    )
    _, report = run(p, config)
    for k, rho in zip(report.iterations, report.rhos):
        assert rho == 1.0 * 0.95**k


def test_plain_run_reports_zero_rho():
    _, report = run(newsvendor(), EngineConfig(iterations=5, seed=0, ub_every=0))
    assert all(r == 0.0 for r in report.rhos)


def test_lower_bound_never_exceeds_optimum():
    for seed in (0, 1):
        for markov in (False, True):
            p, _ = random_recourse_instance(seed + 60, markov=markov, T=3)
            v_star = build_and_solve_extensive_form(p)
            _, report = run(p, EngineConfig(iterations=60, seed=seed, ub_every=0))
            tol = 1e-6 * max(1.0, abs(v_star))
            assert all(lb <= v_star + tol for lb in report.lower_bounds)


def test_estimate_upper_bound_deterministic_instance():
    p, _ = random_recourse_instance(13, T=2)
    proc = p.process
    singleton = UncertaintyProcess(
        kind=ProcessKind.STAGEWISE_INDEPENDENT,
        outcomes=tuple((stage[0],) for stage in proc.outcomes),
        probs=tuple(np.array([1.0]) for _ in range(p.T)),
    )
    q = MultistageProblem(
        T=p.T, stage0=p.stage0, process=singleton, resource_dims=p.resource_dims
    )
    pool, _ = run(q, EngineConfig(iterations=10, seed=0, ub_every=0))
    mean, stderr = estimate_upper_bound(q, pool, 16, np.random.default_rng(0))
    assert stderr == 0.0
    exact_cost = build_and_solve_extensive_form(q)
    assert mean == pytest.approx(exact_cost, abs=1e-6)


def test_estimate_upper_bound_newsvendor_converged():
    p = newsvendor()
    pool, report = run(p, EngineConfig(iterations=20, seed=0, ub_every=0))
    mean, stderr = estimate_upper_bound(p, pool, 10_000, np.random.default_rng(5))
    assert abs(mean - 2.0) <= max(3.0 * stderr, 1e-9)


def test_estimate_upper_bound_requires_cuts_everywhere():
    p, _ = random_recourse_instance(4, T=3)
    empty = CutPool.for_problem(p)
    with pytest.raises(EngineError):
        estimate_upper_bound(p, empty, 10, np.random.default_rng(0))


def test_policy_decision_converged_newsvendor():
    p = newsvendor()
    pool, _ = run(p, EngineConfig(iterations=20, seed=0, ub_every=0))
    decision = policy_decision(p, pool, 0, 0, None, -1)
    assert decision.x[0] == pytest.approx(2.0, abs=1e-8)
    assert not decision.myopic_fallback


def test_policy_decision_terminal_stage_is_myopic():
    p = newsvendor()
    pool, _ = run(p, EngineConfig(iterations=5, seed=0, ub_every=0))
    decision = policy_decision(p, pool, 1, 0, np.array([0.0]), 0)
    assert decision.x[0] == pytest.approx(1.0)  # cover demand exactly
    assert not decision.myopic_fallback


def test_policy_decision_empty_pool_flags_fallback():
    p = newsvendor()
    decision = policy_decision(p, CutPool.for_problem(p), 0, 0, None, -1)
    assert decision.myopic_fallback
    assert decision.x[0] == pytest.approx(0.0)


def test_vanishing_regularization_matches_plain_objectives():
    p, _ = random_recourse_instance(19, T=3)
    pool, _ = run(p, EngineConfig(iterations=15, seed=2, ub_every=0))
    path = enumerate_paths(p, 1000)[0]

    tiny = EngineConfig(
        iterations=10,
        seed=2,
        regularized=True,
        schedule=RegularizationSchedule(1e-13, 0.5),
        ub_every=0,
    )
    plain = EngineConfig(iterations=10, seed=2, ub_every=0)
    state_a = init_state(p, tiny)
    state_b = init_state(p, plain)
    state_a.pool = pool
    state_b.pool = pool
    assert tiny.schedule.value(3) < 1e-12
    traj_a = forward_pass(state_a, path, 3)
    traj_b = forward_pass(state_b, path, 3)
    for oa, ob in zip(traj_a.stage_objectives, traj_b.stage_objectives):
        assert abs(oa - ob) <= 1e-8 * (1.0 + abs(ob))


def test_markov_with_identical_rows_matches_stagewise():
    p, _ = random_recourse_instance(29, markov=False, T=3)
    proc = p.process
    transitions = tuple(
        np.tile(proc.probs[t], (proc.n_outcomes(t), 1)) for t in range(1, p.T)
    )
    as_markov = UncertaintyProcess(
        kind=ProcessKind.MARKOV,
        outcomes=proc.outcomes,
        initial=proc.probs[0],
        transitions=transitions,
    )
    q = MultistageProblem(
        T=p.T, stage0=p.stage0, process=as_markov, resource_dims=p.resource_dims
    )
    _, rep_sw = run(p, EngineConfig(iterations=30, seed=7, ub_every=0))
    _, rep_mk = run(q, EngineConfig(iterations=30, seed=7, ub_every=0))
    for a, b in zip(rep_sw.lower_bounds, rep_mk.lower_bounds):
        assert abs(a - b) <= 1e-8 * (1.0 + abs(a))


def test_markov_process_with_independent_flag_rejected():
    p, _ = random_recourse_instance(2, markov=True, T=2)
    with pytest.raises(EngineError):
        init_state(p, EngineConfig(iterations=1, markov=False))


def test_results_independent_of_worker_count():
    p, _ = random_recourse_instance(37, markov=True, T=3)
    pool1, rep1 = run(p, EngineConfig(iterations=25, seed=4, ub_every=5, workers=1))
    pool4, rep4 = run(p, EngineConfig(iterations=25, seed=4, ub_every=5, workers=4))
    assert rep1.lower_bounds == rep4.lower_bounds
    assert rep1.sampled_costs == rep4.sampled_costs
    assert pool1.same_as(pool4)
    assert {k: v[:2] for k, v in rep1.ub_evals.items()} == {
        k: v[:2] for k, v in rep4.ub_evals.items()
    }


def test_report_csv_layout(tmp_path):
    p = newsvendor()
    _, report = run(p, EngineConfig(iterations=12, seed=0, ub_every=10, ub_samples=8))
    path = tmp_path / "bounds.csv"
    report.save_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iter,lower_bound,rho_k,sampled_cost,ub_mean,ub_stderr,wall_ms"
    assert len(lines) == 13
    # UB fields filled only at the cadence
    row_with_ub = lines[10].split(",")
    row_without = lines[1].split(",")
    assert row_with_ub[4] != "" and row_without[4] == ""


def test_early_stop_patience():
    p = newsvendor()
    _, report = run(
        p, EngineConfig(iterations=200, seed=0, ub_every=0, early_stop_patience=10)
    )
    assert len(report.iterations) < 200
    assert report.lower_bounds[-1] == pytest.approx(2.0, abs=1e-9)


def test_multi_path_iterations():
    p, _ = random_recourse_instance(43, T=2)
    _, report = run(
        p, EngineConfig(iterations=15, seed=0, ub_every=0, paths_per_iteration=3)
    )
    v_star = build_and_solve_extensive_form(p)
    assert report.lower_bounds[-1] <= v_star + 1e-6 * max(1.0, abs(v_star))
    assert report.monotone_violations() == []
