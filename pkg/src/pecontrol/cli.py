"""Command-line interface: one subcommand per experiment family.

Exit codes: 0 success, 1 unknown subcommand (usage printed), 2 config or
validation error (message names the offending key or path), 3 solver
failure. Every run writes its CSV artifacts plus a manifest.json into
the output directory.
"""

import argparse
import sys

import numpy as np

from . import acceptance as acceptance_mod
from . import kernels
from .coefficients import CoefficientError
from .config import ConfigError, Experiment, apply_overrides, load_config
from .csvio import (
    RunManifest,
    write_csv,
    write_trajectory_binary,
    write_trajectory_csv,
)
from .fixedpoint import FixedPointOptions, run_fixed_point
from .galerkin import solve_galerkin, wellposedness_suite
from .hum import HumProblem, penalty_sweep, solve_hum, verify_optimality_system
from .mesh import EigensolverError, MeshError
from .relax import eps_sweep
from .stepping import SolverError, solve_adjoint_linear, solve_forward_linear
from .weights import (
    WeightError,
    build_weight_fields,
    estimate_observability_quotient,
    eval_carleman_functionals,
)

USAGE = """usage: pecontrol SUBCOMMAND [--config FILE] [--output-dir DIR] [--set key=value ...]

subcommands:
  solve-forward    march the linear coupled system and dump the trajectory
  solve-adjoint    march the adjoint system backward from the configured datum
  hum              compute a penalized null control (dual conjugate gradient)
  penalty-sweep    run hum over a decreasing penalty list
  semilinear       frozen-coefficient fixed-point control of the semilinear system
  eps-sweep        relaxed-system controls over decreasing mass, with limit comparison
  observability    Monte-Carlo observability quotient statistics
  carleman-probe   dump weight fields and probe the weighted adjoint functionals
  galerkin-check   spectral-oracle equivalence and well-posedness estimates
  all-acceptance   run the full acceptance suite on the pinned baseline
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3

_CONFIG_ERRORS = (ConfigError, MeshError, WeightError, CoefficientError, ValueError)
_SOLVER_ERRORS = (SolverError, EigensolverError, np.linalg.LinAlgError)


def _parse_common(argv, need_config=True):
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config")
    parser.add_argument("--output-dir")
    parser.add_argument("--set", action="append", default=[], dest="overrides")
    args = parser.parse_args(argv)
    if need_config:
        if args.config is None:
            raise ConfigError("--config", "a config file is required")
        cfg = load_config(args.config)
    else:
        from .config import DEFAULTS, validate_config
        import copy
        cfg = copy.deepcopy(DEFAULTS)
        validate_config(cfg)
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    if args.output_dir:
        cfg["output_dir"] = args.output_dir
    return cfg


def _manifest(cfg):
    flavor = "compiled" if kernels.USING_COMPILED else "fallback"
    tolerances = {
        "cg_tol": cfg["hum"]["cg_tol"],
        "cg_max_iter": cfg["hum"]["cg_max_iter"],
        "fixed_point_tol": cfg["fixed_point"]["tol"],
        "fixed_point_max_iter": cfg["fixed_point"]["max_iter"],
    }
    return RunManifest(cfg, flavor, tolerances=tolerances)


def _outdir(cfg):
    from pathlib import Path

    p = Path(cfg["output_dir"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_solve_forward(cfg):
    exp = Experiment(cfg)
    man = _manifest(cfg)
    out = _outdir(cfg)
    man.start("solve")
    traj = solve_forward_linear(exp.lap, exp.coefficients(), exp.initial_y(), exp.t)
    man.stop("solve")
    man.start("emit")
    man.add_file(write_trajectory_csv(out / "trajectory.csv", traj))
    man.add_file(write_trajectory_binary(out / "trajectory.bin", traj))
    norms = [(tn, traj.y_norms()[n], traj.z_h1_norms(exp.lap)[n])
             for n, tn in enumerate(traj.t)]
    man.add_file(write_csv(out / "norms.csv", ["t", "y_l2", "z_h1"], norms))
    man.stop("emit")
    man.write(out / "manifest.json")
    return EXIT_OK


def cmd_solve_adjoint(cfg):
    exp = Experiment(cfg)
    man = _manifest(cfg)
    out = _outdir(cfg)
    man.start("solve")
    traj = solve_adjoint_linear(exp.lap, exp.coefficients(), exp.initial_y(), exp.t)
    man.stop("solve")
    man.add_file(write_trajectory_csv(out / "adjoint.csv", traj))
    man.add_file(write_trajectory_binary(out / "adjoint.bin", traj))
    man.write(out / "manifest.json")
    return EXIT_OK


def _hum_problem(exp, cfg, y0=None):
    hb = cfg["hum"]
    return HumProblem(lap=exp.lap, coeffs=exp.coefficients(), region=exp.region,
                      params=exp.params, t=exp.t,
                      y0=exp.initial_y() if y0 is None else y0,
                      penalty=hb["penalty"], placement=hb["placement"],
                      cg_tol=hb["cg_tol"], cg_max_iter=hb["cg_max_iter"],
                      method=hb["method"])


def cmd_hum(cfg):
    exp = Experiment(cfg)
    man = _manifest(cfg)
    out = _outdir(cfg)
    man.start("solve")
    prob = _hum_problem(exp, cfg)
    cg_log = []
    res = solve_hum(prob, cg_log=cg_log)
    man.stop("solve")
    report = verify_optimality_system(res, prob)
    man.start("emit")
    man.add_file(write_csv(out / "cg_log.csv", ["iter", "residual", "functional"],
                           cg_log))
    summary = [{
        "penalty": prob.penalty, "terminal_norm": res.terminal_norm,
        "control_norm": res.control_norm, "weighted_norm_sq": res.weighted_norm_sq,
        "functional": res.functional_value, "cg_iters": res.cg_iters,
        "converged": res.converged, "z_tail_max": res.z_tail_max,
        "terminal_residual": report["terminal_residual"],
        "optimality_ok": report["all_ok"],
    }]
    man.add_file(write_csv(out / "hum_summary.csv", list(summary[0]), summary))
    ctrl = res.control
    rows = []
    pts = exp.mesh.coords()
    idx = np.flatnonzero(ctrl.mask)
    for n in range(1, len(exp.t)):
        for i in idx:
            rows.append([exp.t[n]] + list(pts[i]) + [ctrl.values[n, i]])
    axes = ["x"] if exp.mesh.dimension == 1 else [f"x{a}"
                                                  for a in range(exp.mesh.dimension)]
    man.add_file(write_csv(out / "control.csv", ["t"] + axes + ["value"], rows))
    man.stop("emit")
    man.write(out / "manifest.json")
    return EXIT_OK if res.converged else EXIT_SOLVER


def cmd_penalty_sweep(cfg):
    exp = Experiment(cfg)
    man = _manifest(cfg)
    out = _outdir(cfg)
    plist = cfg["hum"]["penalty_list"]
    if plist is None:
        raise ConfigError("hum.penalty_list", "penalty-sweep needs a penalty list")
    man.start("solve")
    prob = _hum_problem(exp, cfg)
    rows, _ = penalty_sweep(prob, plist)
    man.stop("solve")
    man.add_file(write_csv(out / "penalty_sweep.csv", list(rows[0]), rows))
    man.write(out / "manifest.json")
    return EXIT_OK


def cmd_semilinear(cfg):
    exp = Experiment(cfg)
    man = _manifest(cfg)
    out = _outdir(cfg)
    fb = cfg["fixed_point"]
    man.start("solve")
    st = run_fixed_point(exp.lap, exp.region, exp.params, exp.nonlinearity(),
                         exp.initial_y(), exp.t, fb["variant"],
                         penalty=cfg["hum"]["penalty"],
                         cg_tol=cfg["hum"]["cg_tol"],
                         cg_max_iter=cfg["hum"]["cg_max_iter"],
                         options=FixedPointOptions(theta=fb["theta"], tol=fb["tol"],
                                                   max_iter=fb["max_iter"]))
    man.stop("solve")
    rows = [
        [n + 1, st.diff_norms[n], st.control_norms[n], st.terminal_norms[n],
         st.cg_iters[n]]
        for n in range(len(st.diff_norms))
    ]
    man.add_file(write_csv(out / "fixed_point_log.csv",
                           ["iteration", "diff_norm", "control_norm",
                            "terminal_norm", "cg_iters"], rows))
    summary = [{
        "converged": st.converged, "iterations": st.iteration,
        "theta": st.theta,
        "replay_terminal_norm": (st.replay_terminal_norm
                                 if st.replay_terminal_norm is not None else ""),
    }]
    man.add_file(write_csv(out / "fixed_point_summary.csv", list(summary[0]), summary))
    man.write(out / "manifest.json")
    return EXIT_OK if st.converged else EXIT_SOLVER


def cmd_eps_sweep(cfg):
    exp = Experiment(cfg)
    man = _manifest(cfg)
    out = _outdir(cfg)
    eb = cfg["eps_relax"]
    man.start("solve")
    nonlinear = exp.nonlinearity() if eb["semilinear"] else None
    sw = eps_sweep(exp.lap, exp.coefficients(), exp.region, exp.params, exp.t,
                   exp.initial_y(), exp.initial_z(), eb["eps_list"],
                   penalty=eb["penalty"], cg_tol=cfg["hum"]["cg_tol"],
                   cg_max_iter=cfg["hum"]["cg_max_iter"], nonlinear=nonlinear)
    man.stop("solve")
    man.add_file(write_csv(out / "eps_sweep.csv", list(sw.rows[0]), sw.rows))
    cau = [[i, d] for i, d in enumerate(sw.cauchy_distances)]
    man.add_file(write_csv(out / "cauchy_distances.csv", ["pair", "distance"], cau))
    man.write(out / "manifest.json")
    return EXIT_OK


def cmd_observability(cfg):
    exp = Experiment(cfg)
    man = _manifest(cfg)
    out = _outdir(cfg)
    ob = cfg["observability"]
    from .stepping import make_sweeper

    co = exp.coefficients()
    sw = make_sweeper(exp.lap, co, exp.t)

    def solver(phiT):
        return solve_adjoint_linear(exp.lap, co, phiT, exp.t, sweeper=sw)

    man.start("solve")
    stats, samples = estimate_observability_quotient(
        solver, exp.mesh, exp.region, exp.params, exp.t, ob["variant"],
        ob["samples"], seed=cfg["seed"])
    man.stop("solve")
    man.add_file(write_csv(out / "observability_samples.csv",
                           ["sample", "quotient", "denominator"], samples))
    man.add_file(write_csv(out / "observability_stats.csv", list(stats), [stats]))
    man.write(out / "manifest.json")
    return EXIT_OK


def cmd_carleman_probe(cfg):
    exp = Experiment(cfg)
    man = _manifest(cfg)
    out = _outdir(cfg)
    man.start("solve")
    wf = build_weight_fields(exp.params, exp.mesh, exp.t[1:-1])
    co = exp.coefficients()
    rng = np.random.default_rng(cfg["seed"])
    phiT = rng.standard_normal(exp.mesh.ndof)
    adj = solve_adjoint_linear(exp.lap, co, phiT, exp.t)
    variant = cfg["observability"]["variant"]
    report = eval_carleman_functionals(exp.params, exp.lap, adj, exp.region, variant)
    man.stop("solve")
    pts = exp.mesh.coords()
    axes = ["x"] if exp.mesh.dimension == 1 else [f"x{a}"
                                                  for a in range(exp.mesh.dimension)]
    rows = []
    for k, tn in enumerate(wf.t):
        for i in range(exp.mesh.ndof):
            rows.append(list(pts[i]) + [tn, wf.beta[k], wf.phi[k, i],
                                        wf.alpha[k, i], wf.rho[k]])
    man.add_file(write_csv(out / "weight_fields.csv",
                           axes + ["t", "beta", "phi", "alpha", "rho"], rows))
    rep_row = [{
        "variant": report.variant,
        "log_lhs_parabolic": report.log_lhs_parabolic,
        "log_lhs_elliptic": report.log_lhs_elliptic,
        "log_lhs": report.log_lhs,
        "log_rhs": report.log_rhs,
        "log_quotient": report.log_quotient,
        "quotient_defined": report.quotient_defined,
    }]
    man.add_file(write_csv(out / "carleman_report.csv", list(rep_row[0]), rep_row))
    man.write(out / "manifest.json")
    return EXIT_OK


def cmd_galerkin_check(cfg):
    exp = Experiment(cfg)
    man = _manifest(cfg)
    out = _outdir(cfg)
    orders = cfg["galerkin"]["orders"]
    man.start("solve")
    spec = exp.nonlinearity()
    rep = wellposedness_suite(exp.lap, spec, exp.initial_y(), exp.t, orders=orders)
    N = min(max(orders), exp.mesh.ndof)
    traj, yc, zc, sys_ = solve_galerkin(exp.lap, spec, exp.initial_y(), exp.t,
                                        order=N)
    man.stop("solve")
    vals, _ = exp.lap.eigenbasis()
    man.add_file(write_csv(out / "eigenvalues.csv", ["index", "eigenvalue"],
                           [[j, vals[j]] for j in range(len(vals))]))
    rows = []
    for n, tn in enumerate(exp.t):
        for j in range(N):
            rows.append([tn, j, yc[n, j], zc[n, j]])
    man.add_file(write_csv(out / "galerkin_coefficients.csv",
                           ["t", "mode", "y_coef", "z_coef"], rows))
    summary = [{
        "orders": " ".join(str(o) for o in rep["orders"]),
        "distances_decreasing": rep["distances_decreasing"],
        "c_energy": rep["energy"]["c_energy"],
        "c_zbound": rep["energy"]["c_zbound"],
        "c_dual": rep["c_dual"],
        "uniqueness_gap": rep["uniqueness_gap"],
    }]
    man.add_file(write_csv(out / "wellposedness.csv", list(summary[0]), summary))
    man.write(out / "manifest.json")
    return EXIT_OK


def cmd_all_acceptance(cfg):
    man = _manifest(cfg)
    out = _outdir(cfg)
    man.start("acceptance")
    results = acceptance_mod.run_all()
    man.stop("acceptance")
    rows = [[r.index, r.name, r.passed, r.elapsed] for r in results]
    man.add_file(write_csv(out / "acceptance.csv",
                           ["criterion", "name", "passed", "elapsed_s"], rows))
    man.write(out / "manifest.json")
    return EXIT_OK if all(r.passed for r in results) else EXIT_SOLVER


COMMANDS = {
    "solve-forward": (cmd_solve_forward, True),
    "solve-adjoint": (cmd_solve_adjoint, True),
    "hum": (cmd_hum, True),
    "penalty-sweep": (cmd_penalty_sweep, True),
    "semilinear": (cmd_semilinear, True),
    "eps-sweep": (cmd_eps_sweep, True),
    "observability": (cmd_observability, True),
    "carleman-probe": (cmd_carleman_probe, True),
    "galerkin-check": (cmd_galerkin_check, True),
    "all-acceptance": (cmd_all_acceptance, False),
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return EXIT_USAGE if not argv else EXIT_OK
    sub = argv[0]
    if sub not in COMMANDS:
        print(f"unknown subcommand {sub!r}", file=sys.stderr)
        print(USAGE, file=sys.stderr)
        return EXIT_USAGE
    handler, need_config = COMMANDS[sub]
    try:
        cfg = _parse_common(argv[1:], need_config=need_config)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return handler(cfg)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
