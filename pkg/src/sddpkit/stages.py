"""Assembly of per-stage subproblems from problem data and cut pools."""
from __future__ import annotations

import numpy as np

from .cuts import CutPool
from .model import MultistageProblem
from .subproblem import SubproblemSpec


def stage_subproblem(
    problem: MultistageProblem, t: int, outcome: int, R_prev: np.ndarray | None
) -> SubproblemSpec:
    """Bare stage LP at epoch t with the linking term folded into the first
    ``resource_dims[t-1]`` right-hand side entries."""
    real = problem.realization(t, outcome)
    rhs = real.b.copy()
    if t > 0:
        r_prev = problem.resource_dims[t - 1]
        rhs[:r_prev] -= np.asarray(R_prev, dtype=float)
    return SubproblemSpec(c=real.c, A=real.A, rhs=rhs)


def policy_subproblem(
    problem: MultistageProblem,
    pool: CutPool | None,
    t: int,
    info_index: int,
    outcome: int,
    R_prev: np.ndarray | None,
) -> tuple[SubproblemSpec, int]:
    """Stage LP with the value function approximation embedded.

    Returns the spec and the count of the stage's own variables (the
    embedded spec appends the epigraph and slack columns after them).
    The terminal stage and empty cut collections yield the bare LP.
    """
    spec = stage_subproblem(problem, t, outcome, R_prev)
    n_stage = spec.n_cols
    if pool is None or t >= problem.T:
        return spec, n_stage
    real = problem.realization(t, outcome)
    return pool.embed(t, info_index, spec, real.B), n_stage
