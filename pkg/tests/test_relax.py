import numpy as np
import pytest

import pecontrol as pc
from pecontrol.coefficients import HYP_B_CONST
from pecontrol.hum import HumError
from pecontrol.relax import (
    EpsProblem,
    control_distance,
    dual_functional_value_eps,
    eps_sweep,
    solve_hum_eps,
)
from pecontrol.weights import make_weight_params


@pytest.fixture(scope="module")
def relax_setup():
    mesh = pc.build_mesh(1, [1.0], [50])
    lap = pc.assemble_laplacian(mesh)
    region = pc.build_control_region(mesh, [(0.2, 0.5)], [(0.3, 0.4)])
    nt = 80
    t = pc.time_nodes(0.5, nt)
    params = make_weight_params(mesh, region, T=0.5, K=1.0)
    co = pc.make_coefficients(mesh.ndof, nt, b=1.0, c=1.0, d=0.0, tag=HYP_B_CONST)
    x = mesh.coords()[:, 0]
    return mesh, lap, region, t, params, co, np.sin(np.pi * x), np.sin(2 * np.pi * x)


def make_eps_problem(s, **kw):
    mesh, lap, region, t, params, co, y0, z0 = s
    args = dict(lap=lap, coeffs=co, region=region, params=params, t=t, y0=y0,
                z0=z0, eps_mass=1e-2, penalty=1e-6)
    args.update(kw)
    return EpsProblem(**args)


class TestSolveHumEps:
    def test_zero_data_zero_control(self, relax_setup):
        mesh = relax_setup[0]
        prob = make_eps_problem(relax_setup, y0=np.zeros(mesh.ndof),
                                z0=np.zeros(mesh.ndof))
        res = solve_hum_eps(prob)
        assert np.all(res.control.values == 0.0)
        assert res.cg_iters == 0

    def test_baseline_controls_both_terminals(self, relax_setup):
        mesh, lap, region, t, params, co, y0, z0 = relax_setup
        free = pc.solve_forward_linear(lap, co, y0, t, eps_mass=1e-2, z0=z0)
        res = solve_hum_eps(make_eps_problem(relax_setup))
        assert res.converged
        assert res.terminal_norm < mesh.norm(free.y[-1])
        assert res.terminal_norm_z is not None
        assert np.all(res.control.values[:, ~region.mask] == 0.0)

    def test_pair_terminal_condition(self, relax_setup):
        # r = -(1/eta) (y(T), z(T)) at the optimum
        mesh = relax_setup[0]
        prob = make_eps_problem(relax_setup, cg_tol=1e-12, cg_max_iter=2000)
        res = solve_hum_eps(prob)
        n = mesh.ndof
        stacked = np.concatenate([res.trajectory.y[-1], res.trajectory.z[-1]])
        resid = np.linalg.norm(res.phiT + stacked / prob.eta)
        assert resid <= 1e-6 * np.linalg.norm(res.phiT)

    def test_dual_gradient_matches_central_differences(self, relax_setup):
        from pecontrol.relax import _EpsDualOperator

        mesh = relax_setup[0]
        prob = make_eps_problem(relax_setup)
        op = _EpsDualOperator(prob)
        rng = np.random.default_rng(21)
        r = rng.standard_normal(2 * mesh.ndof)
        grad = op.apply(r) + op.free_terminal()
        for i in range(3):
            d = np.random.default_rng([21, i]).standard_normal(2 * mesh.ndof)
            d /= np.linalg.norm(d)
            tau = 1e-2
            jp = dual_functional_value_eps(prob, r + tau * d, op)
            jm = dual_functional_value_eps(prob, r - tau * d, op)
            fd = (jp - jm) / (2 * tau)
            an = mesh.mass * float(grad @ d)
            assert abs(fd - an) <= 1e-6 * max(abs(fd), abs(an))

    def test_functional_identity(self, relax_setup):
        mesh = relax_setup[0]
        prob = make_eps_problem(relax_setup)
        res = solve_hum_eps(prob)
        recomputed = (res.control.weighted_norm_sq(mesh)
                      + (res.terminal_norm**2 + res.terminal_norm_z**2) / prob.eta)
        assert abs(res.functional_value - recomputed) <= 1e-10 * res.functional_value

    def test_rejects_zero_mass(self, relax_setup):
        with pytest.raises(HumError):
            make_eps_problem(relax_setup, eps_mass=0.0)

    def test_hypothesis_gate(self, relax_setup):
        mesh, lap, region, t, params, _, y0, z0 = relax_setup
        co_bad = pc.make_coefficients(mesh.ndof, len(t) - 1, b=1.0, c=1.0, d=0.0)
        with pytest.raises(HumError):
            EpsProblem(lap=lap, coeffs=co_bad, region=region, params=params, t=t,
                       y0=y0, z0=z0, eps_mass=1e-2, penalty=1e-6)


class TestEpsSweep:
    def test_sweep_structure_and_bounds(self, relax_setup):
        mesh, lap, region, t, params, co, y0, z0 = relax_setup
        eps_list = [1e-1, 1e-2, 1e-3]
        sw = eps_sweep(lap, co, region, params, t, y0, z0, eps_list, penalty=1e-6)
        assert len(sw.rows) == 3
        assert len(sw.cauchy_distances) == 2
        assert all(np.isfinite(r["control_norm"]) for r in sw.rows)
        band = max(sw.bound_ratios) / min(sw.bound_ratios)
        assert band <= 10.0
        assert sw.limit_distances[-1] < sw.limit_distances[0]

    def test_single_entry_no_cauchy(self, relax_setup):
        mesh, lap, region, t, params, co, y0, z0 = relax_setup
        sw = eps_sweep(lap, co, region, params, t, y0, z0, [1e-2], penalty=1e-6)
        assert len(sw.rows) == 1 and not sw.cauchy_distances

    def test_zero_y0_control_scales_with_eps(self, relax_setup):
        mesh, lap, region, t, params, co, _, z0 = relax_setup
        eps_list = [1e-1, 1e-2, 1e-3]
        sw = eps_sweep(lap, co, region, params, t, np.zeros(mesh.ndof), z0,
                       eps_list, penalty=1e-6)
        ratios = [r["control_norm"] / (r["eps"] * mesh.norm(z0)) for r in sw.rows]
        assert max(ratios) / min(ratios) <= 3.0

    def test_rejects_increasing_list(self, relax_setup):
        mesh, lap, region, t, params, co, y0, z0 = relax_setup
        with pytest.raises(HumError):
            eps_sweep(lap, co, region, params, t, y0, z0, [1e-3, 1e-2])

    def test_control_distance_zero_for_identical(self, relax_setup):
        mesh, _, region, t, *_ = relax_setup
        vals = np.zeros((len(t), mesh.ndof))
        vals[1:, region.mask] = 1.0
        assert control_distance(mesh, t, vals, vals, region.mask) == 0.0


class TestSemilinearSweep:
    def test_fixed_point_eps_converges(self, relax_setup):
        from pecontrol.relax import run_fixed_point_eps

        mesh, lap, region, t, params, _, y0, z0 = relax_setup
        spec = pc.make_nonlinear_spec("sin", "arctan", b=1.0, d=0.0)
        st = run_fixed_point_eps(lap, region, params, spec, y0, z0, t,
                                 eps_mass=1e-2)
        assert st.converged and st.diff_norms[-1] <= 1e-6
        assert st.replay_terminal_norm is not None
        # replayed semilinear state close to the linear-stage one
        assert st.replay_terminal_norm <= 2.0 * st.terminal_norms[-1] + 1e-12

    def test_semilinear_sweep_flag(self, relax_setup):
        mesh, lap, region, t, params, co, y0, z0 = relax_setup
        spec = pc.make_nonlinear_spec("sin", "arctan", b=1.0, d=0.0)
        sw = eps_sweep(lap, co, region, params, t, y0, z0, [1e-1, 1e-2],
                       penalty=1e-6, nonlinear=spec)
        assert len(sw.rows) == 2
        assert sw.limit_distances[1] < sw.limit_distances[0]
        band = max(sw.bound_ratios) / min(sw.bound_ratios)
        assert band <= 10.0


class TestEnergyEstimate:
    def test_relaxed_energy_bound_finite(self, relax_setup):
        # |y(t)|^2 + eps |z(t)|^2 + dissipation <= data + C |w|^2 + C int |y|^2
        mesh, lap, region, t, params, co, y0, z0 = relax_setup
        eps = 1e-2
        res = solve_hum_eps(make_eps_problem(relax_setup, eps_mass=eps))
        traj = res.trajectory
        dt = t[1] - t[0]
        w = res.control.values
        c_needed = 0.0
        lhs_acc = 0.0
        for m in range(1, traj.nt + 1):
            lhs_acc += dt * (lap.h1_norm(traj.y[m]) ** 2
                             + lap.h1_norm(traj.z[m]) ** 2)
            lhs = (mesh.norm(traj.y[m]) ** 2 + eps * mesh.norm(traj.z[m]) ** 2
                   + lhs_acc)
            data = mesh.norm(y0) ** 2 + eps * mesh.norm(z0) ** 2
            wterm = dt * mesh.mass * np.sum(w[1:m + 1] ** 2)
            yterm = dt * sum(mesh.norm(traj.y[k]) ** 2 for k in range(1, m + 1))
            denom = wterm + yterm
            if lhs > data and denom > 0:
                c_needed = max(c_needed, (lhs - data) / denom)
        assert np.isfinite(c_needed)
