"""SDDP iteration loop, with optional quadratic regularization of the
forward pass and optional Markov information states.

One iteration samples a path, runs the forward pass under the current cut
approximations (stabilized around the previous trajectory when
regularization is on), generates one aggregated cut per stage and
information state on the way back, re-solves the first stage for the
deterministic lower bound, and replaces the incumbents with the fresh
trajectory.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cuts import Cut, CutPool
from .errors import (
    EngineError,
    InfeasibleSubproblemError,
    ResidualCheckError,
)
from .model import (
    MultistageProblem,
    ProcessKind,
    ScenarioPath,
    sample_path,
    validate,
)
from .stages import policy_subproblem
from .subproblem import (
    BundledSolver,
    SolveStatus,
    SubproblemSolution,
    SubproblemSpec,
    SubproblemSolver,
    complementarity_gap,
    dump_subproblem,
    verify_residuals,
)


CURVATURE_FLOOR = 1e-8


@dataclass(frozen=True)
class RegularizationSchedule:
    """Geometric penalty sequence rho0 * decay^k."""

    rho0: float
    decay: float

    def __post_init__(self):
        if not self.rho0 > 0.0:
            raise ValueError("rho0 must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")

    def value(self, k: int) -> float:
        return self.rho0 * self.decay**k


@dataclass
class EngineConfig:
    iterations: int = 100
    seed: int = 0
    regularized: bool = False
    markov: bool | None = None  # None: follow the process kind
    schedule: RegularizationSchedule = field(
        default_factory=lambda: RegularizationSchedule(1.0, 0.95)
    )
    q_scale: list | None = None  # per-stage PSD matrices or diagonals; None = identity
    eps_f: float = 1e-8
    eps_c: float = 1e-8  # complementarity tolerance for basic LP solutions
    ub_samples: int = 100
    ub_every: int = 10
    early_stop_patience: int = 0
    paths_per_iteration: int = 1
    workers: int = 1
    solver: SubproblemSolver | None = None
    debug_dump: str | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.ub_samples < 1:
            raise ValueError("ub_samples must be >= 1")
        if self.paths_per_iteration < 1:
            raise ValueError("paths_per_iteration must be >= 1")


@dataclass
class Trajectory:
    """One forward pass: decisions, post-decision resources, realized
    outcome indices, and per-stage costs/objectives."""

    path: ScenarioPath
    x: list[np.ndarray] = field(default_factory=list)
    resource: list[np.ndarray] = field(default_factory=list)
    stage_costs: list[float] = field(default_factory=list)
    stage_objectives: list[float] = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return float(sum(self.stage_costs))


@dataclass
class IterationStats:
    k: int
    lower_bound: float
    sampled_cost: float
    rho: float
    wall_ms: float
    cuts_added: int


@dataclass
class SolveReport:
    iterations: list[int] = field(default_factory=list)
    lower_bounds: list[float] = field(default_factory=list)
    rhos: list[float] = field(default_factory=list)
    sampled_costs: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    ub_evals: dict[int, tuple[float, float, int]] = field(default_factory=dict)

    def append(self, stats: IterationStats) -> None:
        self.iterations.append(stats.k)
        self.lower_bounds.append(stats.lower_bound)
        self.rhos.append(stats.rho)
        self.sampled_costs.append(stats.sampled_cost)
        self.wall_ms.append(stats.wall_ms)

    def add_ub(self, k: int, mean: float, stderr: float, n: int) -> None:
        self.ub_evals[k] = (mean, stderr, n)

    def monotone_violations(self) -> list[int]:
        out = []
        for i in range(1, len(self.lower_bounds)):
            if self.lower_bounds[i] < self.lower_bounds[i - 1] - 1e-9 * (
                1.0 + abs(self.lower_bounds[i - 1])
            ):
                out.append(self.iterations[i])
        return out

    def to_csv_text(self) -> str:
        lines = ["iter,lower_bound,rho_k,sampled_cost,ub_mean,ub_stderr,wall_ms"]
        for i, k in enumerate(self.iterations):
            ub = self.ub_evals.get(k)
            ub_mean = repr(float(ub[0])) if ub else ""
            ub_stderr = repr(float(ub[1])) if ub else ""
            lines.append(
                f"{k},{float(self.lower_bounds[i])!r},{float(self.rhos[i])!r},"
                f"{float(self.sampled_costs[i])!r},{ub_mean},{ub_stderr},"
                f"{float(self.wall_ms[i])!r}"
            )
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        from pathlib import Path

        Path(path).write_text(self.to_csv_text())


@dataclass
class PolicyDecision:
    x: np.ndarray
    objective: float
    stage_cost: float
    myopic_fallback: bool


class SddpState:
    """Mutable run state: cut pool, incumbents, rng, report, warm bases."""

    def __init__(self, problem: MultistageProblem, config: EngineConfig):
        self.problem = problem
        self.config = config
        self.markov = _resolve_markov(problem, config)
        n_info = tuple(
            1 if (t == 0 or not self.markov) else problem.process.n_outcomes(t)
            for t in range(problem.T)
        )
        self.pool = CutPool(resource_dims=problem.resource_dims, n_info=n_info)
        self.q_mats = _resolve_q(problem, config.q_scale)
        self.solver: SubproblemSolver = config.solver or BundledSolver()
        self.incumbents = [
            np.zeros(problem.resource_dims[t]) for t in range(problem.T)
        ]
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
        self.ub_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
        self.report = SolveReport()
        self.warm: dict = {}
        self.next_k = 0

    def info_index(self, t: int, outcome: int) -> int:
        return outcome if (self.markov and t >= 1) else 0


def _resolve_markov(problem: MultistageProblem, config: EngineConfig) -> bool:
    is_markov = problem.process.kind is ProcessKind.MARKOV
    if config.markov is None:
        return is_markov
    if is_markov and not config.markov:
        raise EngineError(
            "a Markov process requires per-information-state cuts; "
            "markov=False would alias distinct conditional distributions"
        )
    return bool(config.markov)


def _resolve_q(problem: MultistageProblem, q_scale) -> list[np.ndarray]:
    mats = []
    for t in range(problem.T):
        r = problem.resource_dims[t]
        if q_scale is None:
            mats.append(np.eye(r))
            continue
        q = np.asarray(q_scale[t], dtype=float)
        if q.ndim == 1:
            if q.shape[0] != r:
                raise EngineError(f"Q diagonal at stage {t} has wrong length")
            q = np.diag(q)
        if q.shape != (r, r):
            raise EngineError(f"Q at stage {t} has shape {q.shape}, expected ({r},{r})")
        sym_gap = np.abs(q - q.T).max(initial=0.0)
        scale = max(1.0, float(np.abs(q).max(initial=0.0)))
        if sym_gap > 1e-10 * scale:
            raise EngineError(f"Q at stage {t} is not symmetric")
        if q.size and np.linalg.eigvalsh(q).min() < -1e-10 * scale:
            raise EngineError(f"Q at stage {t} is not positive semidefinite")
        mats.append(q)
    return mats


def init_state(problem: MultistageProblem, config: EngineConfig) -> SddpState:
    report = validate(problem)
    hard = [
        v for v in report.violations if "non-positive probability" not in v
    ]
    if hard:
        raise EngineError("invalid problem: " + "; ".join(hard))
    return SddpState(problem, config)


def _pmap(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _solve_spec(
    state: SddpState,
    spec: SubproblemSpec,
    key,
    t: int,
    outcome: int,
) -> SubproblemSolution:
    """Solve with warm-started basis bookkeeping and hard-error policy."""
    start = state.warm.get(key)
    if start is not None and start.shape[0] < spec.n_rows:
        extra = spec.n_rows - start.shape[0]
        new_slacks = np.arange(spec.n_cols - extra, spec.n_cols)
        start = np.concatenate([start, new_slacks])
    if start is not None and start.shape[0] != spec.n_rows:
        start = None
    sol = state.solver.solve(spec, start_basis=start)
    if sol.status is SolveStatus.INFEASIBLE:
        _dump_on_error(state, spec, None, key)
        raise InfeasibleSubproblemError(
            f"stage {t} outcome {outcome}: infeasible subproblem "
            "(relatively complete recourse violated)"
        )
    if sol.status is SolveStatus.UNBOUNDED:
        _dump_on_error(state, spec, None, key)
        raise EngineError(f"stage {t} outcome {outcome}: unbounded subproblem")
    if not verify_residuals(sol, spec, state.config.eps_f):
        _dump_on_error(state, spec, sol, key)
        raise ResidualCheckError(
            f"stage {t} outcome {outcome}: primal residual exceeds "
            f"eps_f={state.config.eps_f}"
        )
    if sol.is_basic_dual:
        gap = complementarity_gap(sol)
        if gap > state.config.eps_c * (1.0 + abs(sol.objective)):
            _dump_on_error(state, spec, sol, key)
            raise ResidualCheckError(
                f"stage {t} outcome {outcome}: complementarity gap {gap} "
                f"exceeds eps_c={state.config.eps_c}"
            )
    if sol.basis is not None and sol.basis.max(initial=-1) < spec.n_cols:
        state.warm[key] = sol.basis
    return sol


def _dump_on_error(state, spec, sol, key) -> None:
    if not state.config.debug_dump:
        return
    from pathlib import Path

    tag = "_".join(str(part) for part in key)
    path = Path(state.config.debug_dump) / f"subproblem_{tag}.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_subproblem(spec, sol, path)


def _stage_solve(
    state: SddpState,
    t: int,
    outcome: int,
    R_prev: np.ndarray | None,
    *,
    use_vfa: bool,
    rho: float,
    key,
) -> tuple[SubproblemSolution, int, float]:
    """Build, (optionally) regularize and solve the stage problem.

    Returns (solution, stage variable count, objective constant omitted by
    the solver).
    """
    problem = state.problem
    info = state.info_index(t, outcome)
    pool = state.pool if use_vfa else None
    spec, n_stage = policy_subproblem(problem, pool, t, info, outcome, R_prev)
    const = 0.0
    if rho > 0.0 and t < problem.T:
        real = problem.realization(t, outcome)
        q = state.q_mats[t]
        incumbent = state.incumbents[t]
        B_pad = np.zeros((real.B.shape[0], spec.n_cols))
        B_pad[:, : real.B.shape[1]] = real.B
        H = B_pad.T @ q @ B_pad
        # Tiny strictly-convex floor: keeps the stage QP nondegenerate (a
        # unique minimizer even where the cut model is flat) at a relative
        # objective perturbation of ~1e-8, and it vanishes with rho^k.
        H[np.diag_indices_from(H)] += CURVATURE_FLOOR
        c_adj = spec.c - rho * (B_pad.T @ (q @ incumbent))
        spec = SubproblemSpec(c=c_adj, A=spec.A, rhs=spec.rhs, quad=(rho, H))
        const = 0.5 * rho * float(incumbent @ (q @ incumbent))
    sol = _solve_spec(state, spec, key, t, outcome)
    return sol, n_stage, const


def forward_pass(state: SddpState, path: ScenarioPath, k: int) -> Trajectory:
    """Lines 6-21 of the iteration: myopic at k = 0; otherwise each
    non-terminal stage minimizes cost + approximation + proximal penalty."""
    problem = state.problem
    schedule = state.config.schedule
    regularized = state.config.regularized
    traj = Trajectory(path=path)
    R_prev: np.ndarray | None = None
    for t in range(problem.T + 1):
        outcome = -1 if t == 0 else path.indices[t - 1]
        use_vfa = k >= 1 and t < problem.T
        rho = 0.0
        if regularized and k >= 1 and t < problem.T:
            rho = schedule.value(k)
        sol, n_stage, const = _stage_solve(
            state,
            t,
            outcome,
            R_prev,
            use_vfa=use_vfa,
            rho=rho,
            key=("f", t, outcome),
        )
        real = problem.realization(t, outcome)
        x = sol.y[:n_stage]
        traj.x.append(x)
        R = real.B @ x
        traj.resource.append(R)
        traj.stage_costs.append(float(real.c @ x))
        traj.stage_objectives.append(sol.objective + const)
        R_prev = R
    return traj


def backward_pass(state: SddpState, trajectory: Trajectory, k: int) -> int:
    """Lines 22-31: walk stages T..1, solve every outcome at the trajectory's
    anchor against the already-updated next-stage pool, and add one
    aggregated cut per information state."""
    problem = state.problem
    added = 0
    for t in range(problem.T, 0, -1):
        r_prev = problem.resource_dims[t - 1]
        anchor = trajectory.resource[t - 1]
        n_out = problem.process.n_outcomes(t)

        def solve_outcome(j: int):
            sol, _, _ = _stage_solve(
                state,
                t,
                j,
                anchor,
                use_vfa=t < problem.T,
                rho=0.0,
                key=("b", t, j),
            )
            return sol.objective, -sol.duals[:r_prev]

        results = _pmap(solve_outcome, list(range(n_out)), state.config.workers)
        values = np.array([res[0] for res in results])
        slopes = np.array([res[1] for res in results]).reshape(n_out, r_prev)

        if state.markov and t - 1 >= 1:
            n_info = problem.process.n_outcomes(t - 1)
        else:
            n_info = 1
        for i in range(n_info):
            probs = problem.process.conditional_probs(t, i)
            alpha = float(probs @ values)
            beta = probs @ slopes
            state.pool.add_cut(
                t - 1, i, Cut(alpha=alpha, beta=beta, anchor=anchor, born_iteration=k)
            )
            added += 1
    return added


def lower_bound(state: SddpState) -> float:
    """First-stage optimum under the current stage-0 approximation."""
    sol, _, _ = _stage_solve(
        state, 0, -1, None, use_vfa=True, rho=0.0, key=("lb",)
    )
    return sol.objective


def iterate(state: SddpState, k: int) -> IterationStats:
    """One full iteration: sample, forward, backward, bound, incumbents."""
    t0 = time.perf_counter()
    problem = state.problem
    total_cost = 0.0
    added = 0
    last_traj: Trajectory | None = None
    for _ in range(state.config.paths_per_iteration):
        path = sample_path(problem, state.rng)
        traj = forward_pass(state, path, k)
        added += backward_pass(state, traj, k)
        total_cost += traj.total_cost
        last_traj = traj
    lb = lower_bound(state)
    for t in range(problem.T):
        state.incumbents[t] = last_traj.resource[t]
    rho = state.config.schedule.value(k) if state.config.regularized else 0.0
    stats = IterationStats(
        k=k,
        lower_bound=lb,
        sampled_cost=total_cost / state.config.paths_per_iteration,
        rho=rho,
        wall_ms=(time.perf_counter() - t0) * 1e3,
        cuts_added=added,
    )
    state.report.append(stats)
    state.next_k = k + 1
    return stats


def run(
    problem: MultistageProblem, config: EngineConfig
) -> tuple[CutPool, SolveReport]:
    """Execute the configured number of iterations (plus upper-bound
    evaluations at the configured cadence); deterministic given the seed."""
    state = init_state(problem, config)
    stable = 0
    last_lb = None
    for k in range(config.iterations):
        stats = iterate(state, k)
        if config.ub_every > 0 and (k + 1) % config.ub_every == 0:
            if _pool_covers_all_stages(state.pool, problem):
                mean, stderr = estimate_upper_bound(
                    problem,
                    state.pool,
                    config.ub_samples,
                    state.ub_rng,
                    markov=state.markov,
                    solver=state.solver,
                    eps_f=config.eps_f,
                    workers=config.workers,
                )
                state.report.add_ub(k, mean, stderr, config.ub_samples)
        if config.early_stop_patience > 0:
            if last_lb is not None and abs(stats.lower_bound - last_lb) <= 1e-12 * (
                1.0 + abs(last_lb)
            ):
                stable += 1
                if stable >= config.early_stop_patience:
                    break
            else:
                stable = 0
            last_lb = stats.lower_bound
    return state.pool, state.report


def _pool_covers_all_stages(pool: CutPool, problem: MultistageProblem) -> bool:
    return all(
        pool.n_cuts(t, i) > 0
        for t in range(problem.T)
        for i in range(pool.n_info[t])
    )


def estimate_upper_bound(
    problem: MultistageProblem,
    pool: CutPool,
    n_samples: int,
    rng: np.random.Generator,
    *,
    markov: bool | None = None,
    solver: SubproblemSolver | None = None,
    eps_f: float = 1e-8,
    workers: int = 1,
) -> tuple[float, float]:
    """Monte-Carlo cost of the cut policy (pure argmin of cost + cuts, no
    regularization): sample mean and standard error."""
    if not _pool_covers_all_stages(pool, problem):
        raise EngineError(
            "upper-bound estimation requires at least one cut at every "
            "stage t < T (every information state)"
        )
    if markov is None:
        markov = problem.process.kind is ProcessKind.MARKOV
    solver = solver or BundledSolver()
    paths = [sample_path(problem, rng) for _ in range(n_samples)]

    def simulate(path: ScenarioPath) -> float:
        total = 0.0
        R_prev: np.ndarray | None = None
        for t in range(problem.T + 1):
            outcome = -1 if t == 0 else path.indices[t - 1]
            info = outcome if (markov and 1 <= t < problem.T) else 0
            spec, n_stage = policy_subproblem(
                problem, pool, t, info, outcome, R_prev
            )
            sol = solver.solve(spec)
            if sol.status is not SolveStatus.OPTIMAL:
                raise InfeasibleSubproblemError(
                    f"stage {t} outcome {outcome}: policy simulation hit a "
                    f"{sol.status.value} subproblem"
                )
            if not verify_residuals(sol, spec, eps_f):
                raise ResidualCheckError(
                    f"stage {t} outcome {outcome}: residual check failed in "
                    "policy simulation"
                )
            real = problem.realization(t, outcome)
            x = sol.y[:n_stage]
            total += float(real.c @ x)
            R_prev = real.B @ x
        return total

    costs = np.array(_pmap(simulate, paths, workers))
    mean = float(costs.mean())
    stderr = float(costs.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return mean, stderr


def policy_decision(
    problem: MultistageProblem,
    pool: CutPool,
    t: int,
    info_index: int,
    R_prev: np.ndarray | None,
    outcome: int,
    solver: SubproblemSolver | None = None,
) -> PolicyDecision:
    """Single-stage argmin under the stored approximation; falls back to the
    myopic problem (with a flag) when no cuts exist at a non-terminal stage."""
    solver = solver or BundledSolver()
    myopic = t < problem.T and pool.n_cuts(t, info_index) == 0
    spec, n_stage = policy_subproblem(
        problem, None if myopic else pool, t, info_index, outcome, R_prev
    )
    sol = solver.solve(spec)
    if sol.status is not SolveStatus.OPTIMAL:
        raise InfeasibleSubproblemError(
            f"stage {t} outcome {outcome}: policy subproblem is {sol.status.value}"
        )
    real = problem.realization(t, outcome)
    x = sol.y[:n_stage]
    return PolicyDecision(
        x=x,
        objective=sol.objective,
        stage_cost=float(real.c @ x),
        myopic_fallback=myopic,
    )
