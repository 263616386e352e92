"""Command-line interface: generate / solve / verify / evaluate / bench."""
from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

import numpy as np

from . import engine, oracle, storage
from .cuts import load_cuts
from .errors import SddpkitError
from .model import load_instance, save_instance, validate
from .stages import policy_subproblem
from .subproblem import SolveStatus, solve_lp


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iters", type=int, default=100, help="iteration count K")
    p.add_argument("--seed", type=int, default=0)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument(
        "--regularized", action="store_true", help="quadratic proximal forward pass"
    )
    mode.add_argument(
        "--plain", action="store_true", help="unregularized baseline (default)"
    )
    chain = p.add_mutually_exclusive_group()
    chain.add_argument(
        "--markov",
        action="store_true",
        help="force per-information-state cut families",
    )
    chain.add_argument(
        "--independent",
        action="store_true",
        help="force a single cut family per stage",
    )
    p.add_argument("--rho0", type=float, default=1.0)
    p.add_argument("--decay", type=float, default=0.95)
    p.add_argument("--eps-feas", type=float, default=1e-8)
    p.add_argument("--eps-comp", type=float, default=1e-8)
    p.add_argument("--ub-samples", type=int, default=100)
    p.add_argument("--ub-every", type=int, default=10, help="0 disables UB estimation")
    p.add_argument("--q-scale", default="identity", help="identity or diag:<file>")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--early-stop-patience", type=int, default=0)
    p.add_argument("--paths-per-iter", type=int, default=1)
    p.add_argument("--debug-dump", default=None, help="directory for failure dumps")


def _config_from_args(args, iterations=None, regularized=None) -> engine.EngineConfig:
    markov = None
    if args.markov:
        markov = True
    elif args.independent:
        markov = False
    q_scale = None
    if args.q_scale != "identity":
        if not args.q_scale.startswith("diag:"):
            raise SddpkitError(
                f"--q-scale must be 'identity' or 'diag:<file>', got {args.q_scale!r}"
            )
        q_scale = json.loads(Path(args.q_scale[5:]).read_text())
    return engine.EngineConfig(
        iterations=iterations if iterations is not None else args.iters,
        seed=args.seed,
        regularized=regularized if regularized is not None else args.regularized,
        markov=markov,
        schedule=engine.RegularizationSchedule(args.rho0, args.decay),
        q_scale=q_scale,
        eps_f=args.eps_feas,
        eps_c=args.eps_comp,
        ub_samples=args.ub_samples,
        ub_every=args.ub_every,
        early_stop_patience=args.early_stop_patience,
        paths_per_iteration=args.paths_per_iter,
        workers=args.workers,
        debug_dump=args.debug_dump,
    )


def _cmd_generate(args) -> int:
    if args.params:
        params = storage.load_params(args.params)
    else:
        params = storage.StorageNetworkParams()
    if args.n_storage is not None:
        params.n_storage = args.n_storage
    if args.t_periods is not None:
        params.T = args.t_periods
    if args.n_regimes is not None:
        params.n_regimes = args.n_regimes
    if args.p_stay is not None:
        params.p_stay = args.p_stay
    if args.stagewise:
        params.markov = False
    rng = np.random.default_rng(args.seed)
    problem = storage.generate_storage_instance(params, rng)
    report = validate(problem)
    if not report.ok:
        print("generated instance failed validation:", file=sys.stderr)
        for v in report.violations:
            print(f"  {v}", file=sys.stderr)
        return 1
    save_instance(problem, args.out)
    print(f"wrote {args.out} (T={problem.T}, storage={params.n_storage})")
    return 0


def _cmd_solve(args) -> int:
    problem = load_instance(args.instance)
    config = _config_from_args(args)
    pool, report = engine.run(problem, config)
    if args.out_cuts:
        pool.save(args.out_cuts)
    if args.out_table:
        report.save_csv(args.out_table)
    final = report.lower_bounds[-1] if report.lower_bounds else float("nan")
    print(f"iterations: {len(report.iterations)}")
    print(f"final_lower_bound: {final:.6f}")
    print(f"cuts: {pool.total_cuts()}")
    return 0


def _policy_lower_bound(problem, pool) -> float:
    spec, _ = policy_subproblem(problem, pool, 0, 0, -1, None)
    sol = solve_lp(spec)
    if sol.status is not SolveStatus.OPTIMAL:
        raise SddpkitError(f"stage-0 problem is {sol.status.value}")
    return sol.objective


def _cmd_verify(args) -> int:
    problem = load_instance(args.instance)
    pool = load_cuts(args.cuts)
    lb = _policy_lower_bound(problem, pool)
    v_star = oracle.build_and_solve_extensive_form(problem, node_limit=args.node_limit)
    gap = v_star - lb
    ok = lb <= v_star + args.tol
    lines = [
        f"lb: {lb:.6f}",
        f"v_star: {v_star:.6f}",
        f"gap: {gap:.6f}",
        f"status: {'ok' if ok else 'bound-violation'}",
    ]
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0 if ok else 1


def _cmd_evaluate(args) -> int:
    problem = load_instance(args.instance)
    pool = load_cuts(args.cuts)
    if args.exact:
        cost = oracle.evaluate_policy_exact(problem, pool, node_limit=args.node_limit)
        print(f"policy_cost_exact: {cost:.6f}")
        return 0
    rng = np.random.default_rng(args.seed)
    mean, stderr = engine.estimate_upper_bound(
        problem, pool, args.samples, rng, workers=args.workers
    )
    print(f"policy_cost_mean: {mean:.6f}")
    print(f"policy_cost_stderr: {stderr:.6f}")
    print(f"samples: {args.samples}")
    return 0


def _iterations_to_threshold(
    lbs: list[float], fraction: float, reference: float | None = None
) -> int:
    """First iteration where the bound has closed ``fraction`` of the climb
    from its initial value to ``reference`` (the run's own final by
    default).

    Shift-invariant, so constant cost terms don't trivialize it; passing
    the weaker final of a method pair as the reference scores both runs
    against a target they both reach.
    """
    final, first = lbs[-1], lbs[0]
    if reference is None:
        reference = final
    target = first + fraction * (reference - first)
    for k, lb in enumerate(lbs):
        if lb >= target - 1e-12 * (1.0 + abs(target)):
            return k
    return len(lbs) - 1


def _cmd_bench(args) -> int:
    problem = load_instance(args.instance)
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    rho0s = [float(v) for v in args.rho0_grid.split(",")]
    decays = [float(v) for v in args.decay_grid.split(",")]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    summary_rows = ["method,rho0,decay,seed,final_lb,iters_to_threshold"]
    plain_lbs: dict[int, list[float]] = {}
    reg_iters: list[int] = []
    plain_iters: list[int] = []

    for seed in seeds:
        cfg = engine.EngineConfig(
            iterations=args.iters,
            seed=seed,
            regularized=False,
            ub_every=0,
            workers=args.workers,
        )
        _, report = engine.run(problem, cfg)
        plain_lbs[seed] = report.lower_bounds

    for rho0 in rho0s:
        for decay in decays:
            for seed in seeds:
                cfg = engine.EngineConfig(
                    iterations=args.iters,
                    seed=seed,
                    regularized=True,
                    schedule=engine.RegularizationSchedule(rho0, decay),
                    ub_every=0,
                    workers=args.workers,
                )
                _, report = engine.run(problem, cfg)
                lbs = report.lower_bounds
                base = plain_lbs[seed]
                # both methods are scored against the weaker of the two
                # final bounds so a better final is never penalized
                reference = min(base[-1], lbs[-1])
                hit = _iterations_to_threshold(lbs, args.threshold, reference)
                plain_hit = _iterations_to_threshold(
                    base, args.threshold, reference
                )
                if (rho0, decay) == (rho0s[0], decays[0]):
                    reg_iters.append(hit)
                    plain_iters.append(plain_hit)
                    summary_rows.append(
                        f"plain,,,{seed},{base[-1]!r},{plain_hit}"
                    )
                summary_rows.append(
                    f"regularized,{rho0!r},{decay!r},{seed},{lbs[-1]!r},{hit}"
                )
                pair = out_dir / f"bounds_r{rho0:g}_d{decay:g}_s{seed}.csv"
                lines = ["iter,plain_lb,regularized_lb"]
                for k in range(max(len(base), len(lbs))):
                    pl = repr(float(base[k])) if k < len(base) else ""
                    rg = repr(float(lbs[k])) if k < len(lbs) else ""
                    lines.append(f"{k},{pl},{rg}")
                pair.write_text("\n".join(lines) + "\n")

    plain_median = statistics.median(plain_iters)
    reg_median = statistics.median(reg_iters)
    summary = out_dir / "summary.csv"
    summary.write_text("\n".join(summary_rows) + "\n")
    print(f"threshold_fraction: {args.threshold}")
    print(f"plain_median_iters_to_threshold: {plain_median}")
    print(f"regularized_median_iters_to_threshold: {reg_median}")
    print(
        "regularized_not_slower: "
        + ("yes" if reg_median <= plain_median else "no")
    )
    print(f"wrote {summary}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sddpkit",
        description="SDDP solver for multistage stochastic linear programs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a storage benchmark instance")
    g.add_argument("--params", default=None, help="params JSON file")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-storage", type=int, default=None)
    g.add_argument("--t-periods", type=int, default=None)
    g.add_argument("--n-regimes", type=int, default=None)
    g.add_argument("--p-stay", type=float, default=None)
    g.add_argument("--stagewise", action="store_true")
    g.set_defaults(func=_cmd_generate)

    s = sub.add_parser("solve", help="run SDDP on an instance")
    s.add_argument("instance")
    s.add_argument("--out-cuts", default=None)
    s.add_argument("--out-table", default=None)
    _add_engine_flags(s)
    s.set_defaults(func=_cmd_solve)

    v = sub.add_parser("verify", help="compare a cut file against the exact optimum")
    v.add_argument("instance")
    v.add_argument("cuts")
    v.add_argument("--tol", type=float, default=1e-6)
    v.add_argument("--node-limit", type=int, default=oracle.DEFAULT_NODE_LIMIT)
    v.add_argument("--out", default=None)
    v.set_defaults(func=_cmd_verify)

    e = sub.add_parser("evaluate", help="evaluate the cut policy's cost")
    e.add_argument("instance")
    e.add_argument("cuts")
    e.add_argument("--samples", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--exact", action="store_true")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--node-limit", type=int, default=oracle.DEFAULT_NODE_LIMIT)
    e.set_defaults(func=_cmd_evaluate)

    b = sub.add_parser("bench", help="regularized vs plain bound trajectories")
    b.add_argument("instance")
    b.add_argument("--seeds", default="0,1,2,3,4")
    b.add_argument("--iters", type=int, default=40)
    b.add_argument("--rho0-grid", default="1")
    b.add_argument("--decay-grid", default="0.95")
    b.add_argument("--threshold", type=float, default=0.99)
    b.add_argument("--out-dir", required=True)
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=_cmd_bench)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SddpkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
