"""Stage subproblem contract: specs, solutions, the bundled solver and the
post-solve residual verification.

The bundled solver pairs the revised simplex (LPs, basic duals) with the
primal active-set method (regularized QPs).  Any replacement only has to
honor :class:`SubproblemSolver`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from . import qp, simplex


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class SubproblemSpec:
    """Standard-form stage problem ``min c.y (+ rho/2 y'Hy) s.t. Ay = rhs,
    y >= 0``.  Any linking contribution is already folded into ``rhs``."""

    c: np.ndarray
    A: np.ndarray
    rhs: np.ndarray
    quad: tuple[float, np.ndarray] | None = None

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "rhs", np.asarray(self.rhs, dtype=float))
        if self.A.ndim != 2:
            raise ValueError("A must be a matrix")
        m, n = self.A.shape
        if self.c.shape != (n,):
            raise ValueError(f"cost has shape {self.c.shape}, expected ({n},)")
        if self.rhs.shape != (m,):
            raise ValueError(f"rhs has shape {self.rhs.shape}, expected ({m},)")
        if self.quad is not None:
            rho, H = self.quad
            H = np.asarray(H, dtype=float)
            object.__setattr__(self, "quad", (float(rho), H))
            if rho < 0.0:
                raise ValueError("quadratic penalty coefficient must be >= 0")
            if H.shape != (n, n):
                raise ValueError(f"H has shape {H.shape}, expected ({n}, {n})")

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_cols(self) -> int:
        return self.A.shape[1]

    def validate(self) -> list[str]:
        """Full invariant check, including the attempted factorization that
        certifies H is symmetric positive semidefinite."""
        out = []
        for name, arr in (("c", self.c), ("A", self.A), ("rhs", self.rhs)):
            if arr.size and not np.all(np.isfinite(arr)):
                out.append(f"{name} contains non-finite entries")
        if self.quad is not None:
            rho, H = self.quad
            if H.size and not np.all(np.isfinite(H)):
                out.append("H contains non-finite entries")
            elif H.size:
                scale = max(1.0, float(np.abs(H).max()))
                if np.abs(H - H.T).max() > 1e-10 * scale:
                    out.append("H is not symmetric")
                else:
                    try:
                        np.linalg.cholesky(H + 1e-10 * scale * np.eye(H.shape[0]))
                    except np.linalg.LinAlgError:
                        out.append("H is not positive semidefinite")
        return out


@dataclass
class SubproblemSolution:
    status: SolveStatus
    y: np.ndarray | None = None
    objective: float = np.nan
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    is_basic_dual: bool = False
    basis: np.ndarray | None = None


class SubproblemSolver(Protocol):
    """Abstract solver contract the engine calls through."""

    def solve(
        self, spec: SubproblemSpec, start_basis: np.ndarray | None = None
    ) -> SubproblemSolution: ...


def solve_lp(
    spec: SubproblemSpec, start_basis: np.ndarray | None = None
) -> SubproblemSolution:
    """Solve a pure LP spec with the revised simplex (basic duals)."""
    if spec.quad is not None and spec.quad[0] > 0.0:
        raise ValueError("solve_lp requires a spec without a quadratic term")
    res = simplex.solve_standard_lp(spec.A, spec.rhs, spec.c, start_basis=start_basis)
    if res.status != "optimal":
        return SubproblemSolution(status=SolveStatus(res.status))
    return SubproblemSolution(
        status=SolveStatus.OPTIMAL,
        y=res.x,
        objective=res.objective,
        duals=res.duals,
        reduced_costs=res.reduced_costs,
        is_basic_dual=True,
        basis=res.basis,
    )


def solve_qp(
    spec: SubproblemSpec, start_basis: np.ndarray | None = None
) -> SubproblemSolution:
    """Solve a regularized spec; a vanished penalty routes to the LP path."""
    if spec.quad is None or spec.quad[0] == 0.0:
        lp_spec = SubproblemSpec(c=spec.c, A=spec.A, rhs=spec.rhs)
        return solve_lp(lp_spec, start_basis=start_basis)
    rho, H = spec.quad
    res = qp.solve_standard_qp(
        spec.A, spec.rhs, spec.c, rho * H, start_basis=start_basis
    )
    if res.status != "optimal":
        return SubproblemSolution(status=SolveStatus(res.status))
    return SubproblemSolution(
        status=SolveStatus.OPTIMAL,
        y=res.x,
        objective=res.objective,
        duals=res.duals,
        reduced_costs=res.reduced_costs,
        is_basic_dual=res.n_superbasic == 0,
        basis=res.basis,
    )


class BundledSolver:
    """Reference implementation of the solver contract."""

    def solve(
        self, spec: SubproblemSpec, start_basis: np.ndarray | None = None
    ) -> SubproblemSolution:
        if spec.quad is not None and spec.quad[0] > 0.0:
            return solve_qp(spec, start_basis=start_basis)
        return solve_lp(spec, start_basis=start_basis)


def verify_residuals(
    sol: SubproblemSolution, spec: SubproblemSpec, eps_f: float
) -> bool:
    """Relative primal feasibility check ||Ay - rhs|| / (1 + ||rhs||) <= eps_f."""
    if sol.status is not SolveStatus.OPTIMAL:
        raise ValueError("residual verification requires an Optimal solution")
    resid = np.linalg.norm(spec.A @ sol.y - spec.rhs)
    return bool(resid / (1.0 + np.linalg.norm(spec.rhs)) <= eps_f)


def complementarity_gap(sol: SubproblemSolution) -> float:
    """Largest elementwise product |y_i * lambda_i|."""
    if sol.y is None or sol.reduced_costs is None:
        return np.nan
    if sol.y.size == 0:
        return 0.0
    return float(np.abs(sol.y * sol.reduced_costs).max())


def kkt_residuals(sol: SubproblemSolution, spec: SubproblemSpec) -> dict[str, float]:
    """Stationarity / feasibility / complementarity residuals of the KKT
    system for the (possibly regularized) spec."""
    y = sol.y
    grad = spec.c.copy()
    if spec.quad is not None:
        rho, H = spec.quad
        grad = grad + rho * (H @ y)
    lam = sol.reduced_costs
    stat = grad - spec.A.T @ sol.duals - lam
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0)),
        "feasibility": float(np.abs(spec.A @ y - spec.rhs).max(initial=0.0)),
        "complementarity": complementarity_gap(sol),
        "dual_sign": float(max(0.0, -(lam.min(initial=0.0)))),
    }


def dump_subproblem(spec: SubproblemSpec, sol: SubproblemSolution | None, path) -> None:
    """Write a human-readable spec/solution pair for failure triage."""
    lines = [
        "subproblem dump",
        f"rows: {spec.n_rows}",
        f"cols: {spec.n_cols}",
        f"c: {spec.c.tolist()}",
        f"rhs: {spec.rhs.tolist()}",
        "A:",
    ]
    for row in spec.A:
        lines.append("  " + " ".join(repr(v) for v in row.tolist()))
    if spec.quad is not None:
        rho, H = spec.quad
        lines.append(f"rho: {rho!r}")
        lines.append("H:")
        for row in H:
            lines.append("  " + " ".join(repr(v) for v in row.tolist()))
    if sol is None:
        lines.append("solution: none")
    else:
        lines.append(f"status: {sol.status.value}")
        if sol.y is not None:
            lines.append(f"y: {sol.y.tolist()}")
            lines.append(f"objective: {sol.objective!r}")
            lines.append(f"duals: {sol.duals.tolist()}")
            lines.append(f"reduced_costs: {sol.reduced_costs.tolist()}")
            lines.append(f"is_basic_dual: {sol.is_basic_dual}")
    Path(path).write_text("\n".join(lines) + "\n")
