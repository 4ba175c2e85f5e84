"""Acceptance suite: nine desk-scale quantitative criteria with pinned tolerances.

Baseline problem: 1D unit interval, 100 interior nodes, T = 0.5 with 200
steps, control region (0.2, 0.5) with inner box (0.3, 0.4), weight
exponent K = 1, lambda = 2, sigma = 1, seed 42. Each criterion returns a
CriterionResult and the runner prints one pass/fail line per criterion.
"""

import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .coefficients import (
    HYP_B_CONST,
    HYP_C_CONST,
    make_coefficients,
    make_nonlinear_spec,
    random_smooth_field,
)
from .fixedpoint import FixedPointOptions, run_fixed_point
from .galerkin import l2q_distance, solve_galerkin, wellposedness_suite
from .hum import HumProblem, dual_gradient_check, penalty_sweep, solve_hum
from .mesh import assemble_laplacian, build_control_region, build_mesh
from .relax import eps_sweep
from .stepping import (
    IN_ELLIPTIC,
    IN_PARABOLIC,
    make_sweeper,
    solve_adjoint_linear,
    solve_forward_linear,
    solve_forward_semilinear,
    time_nodes,
    trapezoid_weights,
)
from .weights import (
    build_weight_fields,
    control_weight,
    control_weight_midpoints,
    estimate_observability_quotient,
    make_weight_params,
    weighted_observation_energy,
)

SEED = 42


@dataclass
class CriterionResult:
    index: int
    name: str
    passed: bool
    elapsed: float
    details: dict = field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.index}: {self.name} ({self.elapsed:.1f}s)"


class Baseline:
    """Shared baseline objects, built once."""

    def __init__(self):
        self.mesh = build_mesh(1, [1.0], [100])
        self.lap = assemble_laplacian(self.mesh)
        self.region = build_control_region(self.mesh, [(0.2, 0.5)], [(0.3, 0.4)])
        self.T = 0.5
        self.nt = 200
        self.t = time_nodes(self.T, self.nt)
        self.params = make_weight_params(self.mesh, self.region, self.T,
                                         lam=2.0, sigma=1.0, K=1.0)
        x = self.mesh.coords()[:, 0]
        self.x = x
        self.y0 = np.sin(np.pi * x)
        self.z0 = np.sin(2 * np.pi * x)

    def coeffs(self, tag, a=0.0):
        return make_coefficients(self.mesh.ndof, self.nt, a=a, b=1.0, c=1.0, d=0.0,
                                 tag=tag)


_baseline = None


def baseline():
    global _baseline
    if _baseline is None:
        _baseline = Baseline()
    return _baseline


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def criterion_1():
    """Discrete duality identity across the three system variants."""
    b = baseline()
    a_field = random_smooth_field(b.mesh, b.t, seed=SEED, amplitude=1.5)
    co = make_coefficients(b.mesh.ndof, b.nt, a=a_field, b=1.0, c=1.0, d=0.0)
    dt = b.t[1] - b.t[0]
    mask = b.region.mask
    tol = 1e-10

    def residuals():
        out = {"parabolic": 0.0, "elliptic": 0.0, "eps": 0.0}
        sw0 = make_sweeper(b.lap, co, b.t, eps_mass=0.0)
        swe = make_sweeper(b.lap, co, b.t, eps_mass=1e-2)
        for i in range(50):
            rng = np.random.default_rng([SEED, i])
            y0 = rng.standard_normal(b.mesh.ndof)
            ctrl = rng.standard_normal((b.nt + 1, b.mesh.ndof))
            ctrl[:, ~mask] = 0.0
            phiT = rng.standard_normal(b.mesh.ndof)

            fwd = solve_forward_linear(b.lap, co, y0, b.t, v=ctrl, sweeper=sw0,
                                       init_z=False)
            adj = solve_adjoint_linear(b.lap, co, phiT, b.t, sweeper=sw0)
            lhs = fwd.y[-1] @ phiT
            rhs = y0 @ adj.y[0] + dt * np.sum(ctrl[1:] * adj.y[0:b.nt])
            out["parabolic"] = max(out["parabolic"],
                                   abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))

            fwd = solve_forward_linear(b.lap, co, y0, b.t, w=ctrl, sweeper=sw0,
                                       init_z=False)
            rhs = y0 @ adj.y[0] + dt * np.sum(ctrl[1:] * adj.z[0:b.nt])
            lhs = fwd.y[-1] @ phiT
            out["elliptic"] = max(out["elliptic"],
                                  abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))

            z0 = rng.standard_normal(b.mesh.ndof)
            psiT = rng.standard_normal(b.mesh.ndof)
            eps = 1e-2
            fwd = solve_forward_linear(b.lap, co, y0, b.t, w=ctrl, eps_mass=eps,
                                       z0=z0, sweeper=swe)
            adje = solve_adjoint_linear(b.lap, co, phiT, b.t, psiT=psiT,
                                        eps_mass=eps, sweeper=swe)
            lhs = fwd.y[-1] @ phiT + eps * (fwd.z[-1] @ psiT)
            rhs = (y0 @ adje.y[0] + eps * (z0 @ adje.z[0])
                   + dt * np.sum(ctrl[1:] * adje.z[0:b.nt]))
            out["eps"] = max(out["eps"],
                             abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
        return out

    res, elapsed = _timed(residuals)
    passed = all(v <= tol for v in res.values()) and elapsed <= 60.0
    details = {f"max_residual_{k}": v for k, v in res.items()}
    details["tolerance"] = tol
    return CriterionResult(1, "duality identity (50 random triples, 3 variants)",
                           passed, elapsed, details)


def criterion_2():
    """Penalized HUM control on the baseline at penalty 1e-6."""
    b = baseline()
    co = b.coeffs(HYP_C_CONST)

    def run():
        prob = HumProblem(lap=b.lap, coeffs=co, region=b.region, params=b.params,
                          t=b.t, y0=b.y0, penalty=1e-6, cg_tol=1e-8, cg_max_iter=500)
        res = solve_hum(prob)
        gmax, _ = dual_gradient_check(prob, res, directions=5, seed=SEED)
        return prob, res, gmax

    (prob, res, gmax), elapsed = _timed(run)
    ratio = res.terminal_norm / b.mesh.norm(b.y0)
    passed = (ratio <= 1e-3 and res.converged and res.cg_iters <= 500
              and gmax <= 1e-6 and elapsed <= 120.0)
    return CriterionResult(2, "HUM null control at penalty 1e-6", passed, elapsed, {
        "terminal_over_initial": ratio,
        "cg_iters": res.cg_iters,
        "gradient_check_max_rel_err": gmax,
        "control_norm": res.control_norm,
    })


def criterion_3():
    """Penalization convergence over seven decades."""
    b = baseline()
    co = b.coeffs(HYP_C_CONST)
    plist = [10.0**-k for k in range(2, 9)]

    def run():
        prob = HumProblem(lap=b.lap, coeffs=co, region=b.region, params=b.params,
                          t=b.t, y0=b.y0, penalty=plist[0], cg_tol=1e-8,
                          cg_max_iter=2000)
        return penalty_sweep(prob, plist)

    (rows, _), elapsed = _timed(run)
    terms = [r["terminal_norm"] for r in rows]
    wsqs = [r["weighted_norm_sq"] for r in rows]
    decrease = terms[0] / terms[-1]
    band = max(wsqs) / wsqs[-1] if wsqs[-1] > 0 else np.inf
    passed = (decrease >= 10.0 and band <= 10.0
              and all(r["converged"] for r in rows))
    return CriterionResult(3, "penalization convergence sweep", passed, elapsed, {
        "terminal_decrease_factor": decrease,
        "weighted_norm_band": band,
        "terminal_first": terms[0],
        "terminal_last": terms[-1],
    })


def criterion_4():
    """Control-cost linearity and empirical operator norm."""
    b = baseline()
    co = b.coeffs(HYP_C_CONST)
    dt = b.t[1] - b.t[0]

    def ctrl_norm(vals):
        return float(np.sqrt(dt * b.mesh.mass * np.sum(vals[1:] ** 2)))

    def solve_for(y0):
        prob = HumProblem(lap=b.lap, coeffs=co, region=b.region, params=b.params,
                          t=b.t, y0=y0, penalty=1e-6, cg_tol=1e-10,
                          cg_max_iter=2000)
        return solve_hum(prob)

    def run():
        rng = np.random.default_rng(SEED)
        y01 = rng.standard_normal(b.mesh.ndof)
        y02 = rng.standard_normal(b.mesh.ndof)
        r1, r2, r12 = solve_for(y01), solve_for(y02), solve_for(y01 + y02)
        defect = r12.control.values - r1.control.values - r2.control.values
        rel = ctrl_norm(defect) / ctrl_norm(r12.control.values)
        gains = []
        for i in range(20):
            rng_i = np.random.default_rng([SEED, 100 + i])
            y0 = rng_i.standard_normal(b.mesh.ndof)
            res = solve_for(y0)
            gains.append(res.control_norm / b.mesh.norm(y0))
        return rel, gains

    (rel, gains), elapsed = _timed(run)
    passed = rel <= 1e-10
    return CriterionResult(4, "control-cost linearity (superposition)", passed,
                           elapsed, {
                               "superposition_rel_err": rel,
                               "operator_norm_estimate": max(gains),
                               "operator_norm_mean": float(np.mean(gains)),
                           })


def criterion_5():
    """Observability quotient statistics for both observation variants."""
    b = baseline()

    def run():
        out = {}
        for variant, tag in (("phi_observation", HYP_C_CONST),
                             ("psi_observation", HYP_B_CONST)):
            co = b.coeffs(tag)
            sw = make_sweeper(b.lap, co, b.t)

            def solver(phiT, sw=sw, co=co):
                return solve_adjoint_linear(b.lap, co, phiT, b.t, sweeper=sw)

            s64, _ = estimate_observability_quotient(
                solver, b.mesh, b.region, b.params, b.t, variant, 64, seed=SEED)
            s128, _ = estimate_observability_quotient(
                solver, b.mesh, b.region, b.params, b.t, variant, 128, seed=SEED)

            # scale invariance on one sample
            rng = np.random.default_rng([SEED, 0])
            phiT = rng.standard_normal(b.mesh.ndof)
            rho_mid = control_weight_midpoints(b.params, b.t)

            def quotient(q):
                traj = solver(q)
                obs = traj.y if variant == "phi_observation" else traj.z
                num = (b.mesh.norm(traj.y[0]) ** 2
                       + (b.mesh.norm(traj.z[0]) ** 2 if variant == "phi_observation"
                          else b.mesh.norm(traj.z[1]) ** 2))
                den = weighted_observation_energy(b.mesh, b.t, rho_mid, obs,
                                                  b.region.mask)
                return num / den

            q1, q10 = quotient(phiT), quotient(10.0 * phiT)
            out[variant] = {
                "max64": s64["max"], "max128": s128["max"],
                "doubling_ratio": s128["max"] / s64["max"],
                "scale_invariance_err": abs(q10 - q1) / q1,
                "discarded": s64["discarded"],
            }
        return out

    stats, elapsed = _timed(run)
    passed = True
    for v in stats.values():
        passed &= np.isfinite(v["max64"]) and np.isfinite(v["max128"])
        passed &= 0.5 <= v["doubling_ratio"] <= 2.0
        passed &= v["scale_invariance_err"] <= 1e-10
    return CriterionResult(5, "observability quotient Monte-Carlo", bool(passed),
                           elapsed, {k: v for k, v in stats.items()})


def criterion_6():
    """Semilinear fixed point, both control placements."""
    b = baseline()

    def run_variant(placement, spec):
        opts = FixedPointOptions(theta=1.0, tol=1e-6, max_iter=30)
        st = run_fixed_point(b.lap, b.region, b.params, spec, b.y0, b.t, placement,
                             penalty=1e-6, options=opts)
        fallback = False
        if not st.converged:
            fallback = True
            opts = FixedPointOptions(theta=0.5, tol=1e-6, max_iter=30)
            st = run_fixed_point(b.lap, b.region, b.params, spec, b.y0, b.t,
                                 placement, penalty=1e-6, options=opts)
        ratio = (st.replay_terminal_norm / st.terminal_norms[-1]
                 if st.converged and st.terminal_norms[-1] > 0 else np.inf)
        return {
            "converged": st.converged,
            "iterations": st.iteration,
            "final_diff": st.diff_norms[-1] if st.diff_norms else np.inf,
            "replay_over_linear": ratio,
            "theta_fallback": fallback,
        }

    def run():
        spec_v = make_nonlinear_spec("sin", "linear", b=1.0, d=0.0, f0_scale=1.0)
        spec_w = make_nonlinear_spec("sin", "arctan", b=1.0, d=0.0)
        return {
            "parabolic_control": run_variant(IN_PARABOLIC, spec_v),
            "elliptic_control": run_variant(IN_ELLIPTIC, spec_w),
        }

    stats, elapsed = _timed(run)
    passed = all(
        v["converged"] and v["iterations"] <= 30 and v["final_diff"] <= 1e-6
        and v["replay_over_linear"] <= 2.0
        for v in stats.values()
    ) and elapsed <= 1200.0
    return CriterionResult(6, "semilinear fixed point (sin / arctan)", passed,
                           elapsed, stats)


def criterion_7():
    """Relaxed-system sweep: uniform cost bound and convergence to the limit."""
    b = baseline()
    co = b.coeffs(HYP_B_CONST)
    eps_list = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4]

    def run():
        sw = eps_sweep(b.lap, co, b.region, b.params, b.t, b.y0, b.z0, eps_list,
                       penalty=1e-6)
        sw0 = eps_sweep(b.lap, co, b.region, b.params, b.t,
                        np.zeros(b.mesh.ndof), b.z0, eps_list, penalty=1e-6)
        zero_ratios = [r["control_norm"] / (r["eps"] * b.mesh.norm(b.z0))
                       for r in sw0.rows]
        return sw, zero_ratios

    (sw, zero_ratios), elapsed = _timed(run)
    band = max(sw.bound_ratios) / min(sw.bound_ratios)
    dist_drop = (sw.limit_distances[0] / sw.limit_distances[-1]
                 if sw.limit_distances[-1] > 0 else np.inf)
    zero_band = max(zero_ratios) / min(zero_ratios)
    passed = band <= 10.0 and dist_drop >= 5.0 and zero_band <= 3.0
    return CriterionResult(7, "eps-relaxation sweep", passed, elapsed, {
        "bound_ratio_band": band,
        "limit_distance_drop": dist_drop,
        "zero_data_scaling_band": zero_band,
        "limit_distances": sw.limit_distances,
    })


def _manufactured_error(N, nt, T=0.5):
    mesh = build_mesh(1, [1.0], [N])
    lap = assemble_laplacian(mesh)
    t = time_nodes(T, nt)
    x = mesh.coords()[:, 0]
    a, bb, c, d = 0.3, 1.0, 1.0, 0.0
    co = make_coefficients(mesh.ndof, nt, a=a, b=bb, c=c, d=d)
    sin1, sin2 = np.sin(np.pi * x), np.sin(2 * np.pi * x)
    decay = np.exp(-t)
    yex = decay[:, None] * sin1[None, :]
    zex = decay[:, None] * sin2[None, :]
    gy = (-1 + np.pi**2 - a) * yex - zex
    gz = 4 * np.pi**2 * zex - c * yex
    traj = solve_forward_linear(lap, co, yex[0], t, source_y=gy, source_z=gz)
    w = trapezoid_weights(t)
    err = np.sqrt(np.sum(w * mesh.mass * np.sum((traj.y - yex) ** 2, axis=1)))
    ref = np.sqrt(np.sum(w * mesh.mass * np.sum(yex**2, axis=1)))
    return err / ref


def criterion_8():
    """Galerkin oracle equivalence, energy estimates, convergence rates."""
    b = baseline()

    def run():
        out = {}
        co = make_coefficients(b.mesh.ndof, b.nt, a=0.5, b=1.0, c=1.0, d=0.0)
        ft = solve_forward_linear(b.lap, co, b.y0, b.t)
        gt, *_ = solve_galerkin(b.lap, co, b.y0, b.t)
        out["linear_gap"] = l2q_distance(b.mesh, b.t, gt.y, ft.y) / ft.l2q_norm("y")

        spec = make_nonlinear_spec("sin", "linear", b=1.0, d=0.0)
        fts = solve_forward_semilinear(b.lap, spec, b.y0, b.t)
        gts, *_ = solve_galerkin(b.lap, spec, b.y0, b.t)
        out["semilinear_gap"] = (l2q_distance(b.mesh, b.t, gts.y, fts.y)
                                 / fts.l2q_norm("y"))

        rep = wellposedness_suite(b.lap, spec, b.y0, b.t, orders=(4, 8, 16, 32))
        out["energy_constant"] = rep["energy"]["c_energy"]
        out["zbound_constant"] = rep["energy"]["c_zbound"]
        out["dual_constant"] = rep["c_dual"]
        out["energy_violations"] = len(rep["energy"]["violations"])
        out["truncation_decreasing"] = rep["distances_decreasing"]

        e_t = [_manufactured_error(300, nt) for nt in (25, 50, 100)]
        e_x = [_manufactured_error(N, 4000) for N in (10, 20, 40)]
        out["time_rates"] = [float(np.log2(e_t[i] / e_t[i + 1])) for i in range(2)]
        out["space_rates"] = [float(np.log2(e_x[i] / e_x[i + 1])) for i in range(2)]
        return out

    out, elapsed = _timed(run)
    finite = all(np.isfinite(out[k]) for k in
                 ("energy_constant", "zbound_constant", "dual_constant"))
    rates_ok = (all(0.8 <= r <= 1.2 for r in out["time_rates"])
                and all(1.6 <= r <= 2.4 for r in out["space_rates"]))
    passed = (out["linear_gap"] <= 1e-8 and out["semilinear_gap"] <= 1e-8
              and finite and out["energy_violations"] == 0
              and out["truncation_decreasing"] and rates_ok)
    return CriterionResult(8, "Galerkin oracle equivalence and estimates", passed,
                           elapsed, out)


def criterion_9():
    """Weight-family machinery: exact structural assertions."""
    b = baseline()

    def run():
        out = {}
        p = b.params
        wf = build_weight_fields(p, b.mesh, b.t[1:-1])
        out["alpha_bar_min"] = float(np.min(wf.alpha_bar))
        mid = b.nt // 2
        beta_mid = b.t[mid] * (p.T - b.t[mid])
        out["beta_vertex_exact"] = bool(beta_mid == p.T**2 / 4.0)
        hat_ok = True
        star_ok = True
        for k in range(len(wf.t)):
            hat_ok &= wf.alpha_hat[k] == wf.alpha[k].min()
            star_ok &= wf.alpha_star[k] == wf.alpha[k].max()
            hat_ok &= wf.phi_hat[k] == wf.phi[k].min()
            star_ok &= wf.phi_star[k] == wf.phi[k].max()
            hat_ok &= bool(np.all(wf.alpha_hat[k] <= wf.alpha[k])
                           and np.all(wf.alpha[k] <= wf.alpha_star[k]))
        out["extrema_exact"] = bool(hat_ok and star_ok)
        rho = control_weight(p, b.t)
        out["rho_at_0_exact"] = bool(rho[0] == np.exp(-2.0 * p.K / p.T))
        out["rho_strictly_decreasing"] = bool(np.all(np.diff(rho[:-1]) < 0.0)
                                              and rho[-1] == 0.0)
        return out

    out, elapsed = _timed(run)
    passed = (out["alpha_bar_min"] > 0.0 and out["beta_vertex_exact"]
              and out["extrema_exact"] and out["rho_at_0_exact"]
              and out["rho_strictly_decreasing"])
    return CriterionResult(9, "Carleman weight machinery", passed, elapsed, out)


ALL_CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
    5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8,
    9: criterion_9,
}


def run_all(indices=None, stream=sys.stdout):
    """Run the selected criteria (all by default); print one line each."""
    indices = sorted(indices or ALL_CRITERIA)
    results = []
    for i in indices:
        res = ALL_CRITERIA[i]()
        results.append(res)
        print(res.line(), file=stream)
        stream.flush()
    return results
