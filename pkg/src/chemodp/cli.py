"""Command-line front end: seeded pipeline runs and artifact emission.

Subcommands
-----------
run              full pipeline: sample, cluster, solve every controller,
                 evaluate the closed loops, write all artifacts
sample-clusters  sampling + clustering only (clusters.csv)
solve            solve a single controller (qtable/convergence/model CSVs)
evaluate         closed-loop Monte Carlo from previously saved models
diagnose         contraction report from a saved convergence log
simulate         one closed loop, trajectory printed to stdout as CSV rows

Exit codes: 0 success, 2 config error, 3 numerical divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, backends, config as config_mod
from .config import ControllerSpec, RunConfig
from .errors import ConfigError, NumericsError
from .model import ModelParams
from .policy import FeedbackPolicy, evaluate_monte_carlo, simulate_closed_loop
from .regressor import KernelModel
from .solver import ConvergenceLog, SolveResult, contraction_diagnostic, solve
from .uncertainty import ClusterSet, build_clusters


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    return config_mod.from_dict(data)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(cfg: RunConfig, out: Path) -> None:
    versions = {"chemodp": __version__, "python": sys.version.split()[0],
                "numpy": np.__version__}
    try:
        import scipy
        versions["scipy"] = scipy.__version__
    except ImportError:
        pass
    try:
        import numba
        versions["numba"] = numba.__version__
    except ImportError:
        pass
    manifest = {
        "config": config_mod.to_dict(cfg),
        "seed": cfg.seed,
        "stage_seeds": cfg.stage_seeds(),
        "backend": backends.BACKEND,
        "versions": versions,
    }
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _controller_clusters(cfg: RunConfig, spec: ControllerSpec,
                         dispersed: ClusterSet | None) -> ClusterSet:
    if spec.dirac:
        from dataclasses import replace
        model = replace(cfg.uncertainty_model(dirac=True), cluster_count=1)
        return build_clusters(model, cluster_seed=cfg.seed_clustering)
    if dispersed is None:
        raise ValueError("dispersed cluster set required")
    return dispersed


def _solve_controller(cfg: RunConfig, spec: ControllerSpec,
                      clusters: ClusterSet, out: Path) -> SolveResult:
    result = solve(cfg.solver_config(spec.alpha), clusters,
                   cost=cfg.cost, dose_set=cfg.doses, h=cfg.params.h)
    result.qtable.save_csv(out / f"qtable_{spec.id}.csv")
    result.log.save_csv(out / f"convergence_{spec.id}.csv")
    result.model.save_csv(out / f"model_{spec.id}.csv")
    return result


def _evaluate(cfg: RunConfig, policies: dict[str, FeedbackPolicy], out: Path,
              extra: dict) -> None:
    t0 = time.perf_counter()
    report = evaluate_monte_carlo(
        policies, cfg.uncertainty_model(dirac=False),
        n_x0=cfg.evaluation.n_x0, n_p=cfg.evaluation.n_p,
        n_sim=cfg.evaluation.n_sim,
        seed_x0=cfg.seed_eval_x0, seed_p=cfg.seed_eval_p,
        tau=cfg.solver.tau, cost=cfg.cost,
    )
    report.save_csv(out / "eval_report.csv")
    extra.setdefault("wall_ms", {})["evaluate"] = (time.perf_counter() - t0) * 1e3
    report.save_summary(out / "summary.json", extra=extra)


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, cfg)
    write_manifest(cfg, out)
    dispersed = build_clusters(cfg.uncertainty_model(dirac=False),
                               cluster_seed=cfg.seed_clustering)
    dispersed.save_csv(out / "clusters.csv")
    policies: dict[str, FeedbackPolicy] = {}
    converged_flags, iterations, wall_ms = {}, {}, {}
    for spec in cfg.controllers:
        clusters = _controller_clusters(cfg, spec, dispersed)
        result = _solve_controller(cfg, spec, clusters, out)
        policies[spec.id] = FeedbackPolicy(model=result.model, dose_set=cfg.doses)
        converged_flags[spec.id] = result.converged
        iterations[spec.id] = len(result.log)
        wall_ms[spec.id] = float(sum(result.log.wall_ms))
    extra = {"converged_flags": converged_flags, "iterations": iterations,
             "wall_ms": wall_ms}
    _evaluate(cfg, policies, out, extra)
    print(f"run complete: artifacts in {out}")
    return 0


def cmd_sample_clusters(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, cfg)
    clusters = build_clusters(cfg.uncertainty_model(),
                              cluster_seed=cfg.seed_clustering)
    clusters.save_csv(out / "clusters.csv")
    print(f"wrote {len(clusters)} clusters to {out / 'clusters.csv'}")
    return 0


def cmd_solve(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, cfg)
    write_manifest(cfg, out)
    spec = cfg.controller(args.controller) if args.controller else cfg.controllers[0]
    dispersed = None
    if not spec.dirac:
        dispersed = build_clusters(cfg.uncertainty_model(dirac=False),
                                   cluster_seed=cfg.seed_clustering)
    clusters = _controller_clusters(cfg, spec, dispersed)
    clusters.save_csv(out / "clusters.csv")
    result = _solve_controller(cfg, spec, clusters, out)
    if result.log.diff_inf:
        status = "converged" if result.converged else "not converged"
        print(f"controller {spec.id}: {status} after {len(result.log)} iterations "
              f"(final diff {result.log.diff_inf[-1]:.3e})")
    else:
        print(f"controller {spec.id}: no iterations run")
    return 0


def _load_policy(cfg: RunConfig, out: Path, cid: str) -> FeedbackPolicy:
    path = out / f"model_{cid}.csv"
    if not path.exists():
        raise FileNotFoundError(f"missing model artifact {path}; run 'solve' first")
    return FeedbackPolicy(model=KernelModel.load_csv(path), dose_set=cfg.doses)


def cmd_evaluate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, cfg)
    policies = {spec.id: _load_policy(cfg, out, spec.id) for spec in cfg.controllers}
    converged_flags, iterations, wall_ms = {}, {}, {}
    for spec in cfg.controllers:
        log_path = out / f"convergence_{spec.id}.csv"
        if log_path.exists():
            log = ConvergenceLog.load_csv(log_path)
            converged_flags[spec.id] = bool(log.diff_inf and
                                            log.diff_inf[-1] < cfg.solver.tol_inf)
            iterations[spec.id] = len(log)
            wall_ms[spec.id] = float(sum(log.wall_ms))
        else:
            converged_flags[spec.id] = None
            iterations[spec.id] = None
            wall_ms[spec.id] = None
    extra = {"converged_flags": converged_flags, "iterations": iterations,
             "wall_ms": wall_ms}
    _evaluate(cfg, policies, out, extra)
    print(f"evaluation complete: {out / 'eval_report.csv'}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, cfg)
    spec = cfg.controller(args.controller) if args.controller else cfg.controllers[0]
    log_path = out / f"convergence_{spec.id}.csv"
    if not log_path.exists():
        raise FileNotFoundError(f"missing convergence log {log_path}")
    log = ConvergenceLog.load_csv(log_path)
    report = contraction_diagnostic(log, log.b_hat[-1] if log.b_hat else 0.0,
                                    cfg.solver_config(spec.alpha))
    print(f"controller={spec.id} rho_hat={report.rho_hat!r} "
          f"rho_star={report.rho_star!r} within_bound={report.within_bound}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, cfg)
    spec = cfg.controller(args.controller) if args.controller else cfg.controllers[0]
    policy = _load_policy(cfg, out, spec.id)
    try:
        x0 = np.array([float(v) for v in args.x0.split(",")])
    except ValueError as err:
        raise ConfigError(f"--x0 must be four comma-separated numbers: {err}") from err
    if x0.shape != (4,):
        raise ConfigError("--x0 must have exactly four components")
    n_sim = cfg.evaluation.n_sim if args.n_sim is None else args.n_sim
    params = cfg.params if args.param_seed is None else _draw_param(cfg, args.param_seed)
    result = simulate_closed_loop(x0, params, policy, n_sim,
                                  tau=cfg.solver.tau, cost=cfg.cost)
    for k, row in enumerate(result.states):
        print("state," + str(k) + "," + ",".join(repr(float(v)) for v in row))
    for k, row in enumerate(result.doses):
        print("dose," + str(k) + "," + ",".join(repr(float(v)) for v in row))
    print(f"# j_cl={result.j_cl!r} min_x2={result.min_x2!r} "
          f"constraint_ok={result.constraint_ok}")
    return 0


def _draw_param(cfg: RunConfig, seed: int) -> ModelParams:
    from .uncertainty import sample_params
    return sample_params(cfg.uncertainty_model(dirac=False), 1, seed=seed)[0]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chemodp",
        description="Stochastic optimal dosing policies for combined therapy",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None,
                       help="output directory (default: config out_dir)")
        p.add_argument("--threads", type=int, default=None,
                       help="cap numba worker threads (results unchanged)")

    p_run = sub.add_parser("run", help="full pipeline")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sc = sub.add_parser("sample-clusters", help="sample and cluster only")
    common(p_sc)
    p_sc.set_defaults(func=cmd_sample_clusters)

    p_solve = sub.add_parser("solve", help="solve one controller")
    common(p_solve)
    p_solve.add_argument("--controller", default=None, help="controller id")
    p_solve.set_defaults(func=cmd_solve)

    p_eval = sub.add_parser("evaluate", help="Monte Carlo from saved models")
    common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_diag = sub.add_parser("diagnose", help="contraction report from logs")
    common(p_diag)
    p_diag.add_argument("--controller", default=None, help="controller id")
    p_diag.set_defaults(func=cmd_diagnose)

    p_sim = sub.add_parser("simulate", help="single closed loop to stdout")
    common(p_sim)
    p_sim.add_argument("--controller", default=None, help="controller id")
    p_sim.add_argument("--x0", default="0.5,0.5,0.0,0.5",
                       help="normalized initial state, comma separated")
    p_sim.add_argument("--n-sim", type=int, default=None, help="horizon override")
    p_sim.add_argument("--param-seed", type=int, default=None,
                       help="draw the true parameters from the dispersion model")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        backends.set_thread_count(args.threads)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericsError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
