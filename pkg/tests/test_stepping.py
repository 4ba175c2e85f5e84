import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pecontrol as pc
from pecontrol.coefficients import CoefficientError, random_smooth_field
from pecontrol.stepping import NewtonOptions, SolverError, trapezoid_weights


def duality_residual(lap, co, t, y0, v, w, phiT, psiT=None, eps=0.0, z0=None):
    sw = pc.make_sweeper(lap, co, t, eps_mass=eps)
    fwd = pc.solve_forward_linear(lap, co, y0, t, v=v, w=w, eps_mass=eps, z0=z0,
                                  sweeper=sw, init_z=False)
    adj = pc.solve_adjoint_linear(lap, co, phiT, t, psiT=psiT, eps_mass=eps,
                                  sweeper=sw)
    nt = len(t) - 1
    dt = t[1] - t[0]
    lhs = fwd.y[-1] @ phiT
    rhs = y0 @ adj.y[0]
    if eps > 0:
        lhs += eps * (fwd.z[-1] @ psiT)
        rhs += eps * (z0 @ adj.z[0])
    if v is not None:
        rhs += dt * np.sum(v[1:] * adj.y[0:nt])
    if w is not None:
        rhs += dt * np.sum(w[1:] * adj.z[0:nt])
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


class TestForwardLinear:
    def test_zero_data_zero_solution(self, lap1d, mesh1d):
        t = pc.time_nodes(0.5, 40)
        co = pc.make_coefficients(mesh1d.ndof, 40, b=1.0, c=1.0)
        traj = pc.solve_forward_linear(lap1d, co, np.zeros(mesh1d.ndof), t)
        assert np.all(traj.y == 0.0) and np.all(traj.z == 0.0)

    def test_initial_datum_stored_exactly(self, lap1d, mesh1d, rng):
        t = pc.time_nodes(0.5, 20)
        co = pc.make_coefficients(mesh1d.ndof, 20, b=1.0, c=1.0)
        y0 = rng.standard_normal(mesh1d.ndof)
        traj = pc.solve_forward_linear(lap1d, co, y0, t)
        np.testing.assert_array_equal(traj.y[0], y0)

    def test_eigenvector_decay_recursion(self, lap1d, mesh1d):
        nt = 80
        t = pc.time_nodes(0.5, nt)
        dt = t[1] - t[0]
        co = pc.make_coefficients(mesh1d.ndof, nt)
        traj = pc.solve_forward_linear(lap1d, co, lap1d.first_eigenvector, t)
        for n in (1, nt // 2, nt):
            pred = (1 + dt * lap1d.mu1) ** (-n)
            assert abs(mesh1d.norm(traj.y[n]) - pred) < 1e-12
        assert np.max(np.abs(traj.z)) == 0.0

    def test_elliptic_slaving_on_eigenvector(self, lap1d, mesh1d):
        nt = 60
        t = pc.time_nodes(0.5, nt)
        co = pc.make_coefficients(mesh1d.ndof, nt, c=1.0)
        traj = pc.solve_forward_linear(lap1d, co, lap1d.first_eigenvector, t)
        for n in (0, 10, nt):
            np.testing.assert_allclose(traj.z[n], traj.y[n] / lap1d.mu1,
                                       rtol=1e-12, atol=1e-15)

    def test_z_slaving_recompute(self, lap1d, mesh1d, rng):
        nt = 30
        t = pc.time_nodes(0.4, nt)
        co = pc.make_coefficients(mesh1d.ndof, nt, a=0.3, b=0.5, c=1.2, d=1.0)
        y0 = rng.standard_normal(mesh1d.ndof)
        traj = pc.solve_forward_linear(lap1d, co, y0, t)
        import scipy.sparse as sp
        import scipy.sparse.linalg as spla
        M = (lap1d.matrix - sp.diags(co.d.at(5))).tocsc()
        z5 = spla.spsolve(M, co.c.at(5) * traj.y[5])
        np.testing.assert_allclose(traj.z[5], z5, rtol=1e-12, atol=1e-14)

    def test_forward_map_linearity(self, lap1d, mesh1d, rng):
        nt = 25
        t = pc.time_nodes(0.3, nt)
        a = random_smooth_field(mesh1d, t, seed=2)
        co = pc.make_coefficients(mesh1d.ndof, nt, a=a, b=1.0, c=1.0)
        sw = pc.make_sweeper(lap1d, co, t)
        y1 = rng.standard_normal(mesh1d.ndof)
        y2 = rng.standard_normal(mesh1d.ndof)
        v1 = rng.standard_normal((nt + 1, mesh1d.ndof))
        v2 = rng.standard_normal((nt + 1, mesh1d.ndof))
        t1 = pc.solve_forward_linear(lap1d, co, y1, t, v=v1, sweeper=sw)
        t2 = pc.solve_forward_linear(lap1d, co, y2, t, v=v2, sweeper=sw)
        t12 = pc.solve_forward_linear(lap1d, co, y1 + y2, t, v=v1 + v2, sweeper=sw)
        np.testing.assert_allclose(t12.y, t1.y + t2.y, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("ratio", [0.1, 10.0, 1000.0])
    def test_unconditional_stability(self, ratio):
        mesh = pc.build_mesh(1, [1.0], [30])
        lap = pc.assemble_laplacian(mesh)
        h2 = mesh.spacings[0] ** 2
        dt = ratio * h2
        nt = 20
        t = np.linspace(0.0, nt * dt, nt + 1)
        co = pc.make_coefficients(mesh.ndof, nt, b=1.0, c=1.0)
        y0 = np.random.default_rng(0).standard_normal(mesh.ndof)
        traj = pc.solve_forward_linear(lap, co, y0, t)
        norms = traj.y_norms()
        assert np.all(np.isfinite(norms))
        assert norms[-1] <= norms[0]

    def test_monotone_decay_no_input(self, lap1d, mesh1d, rng):
        nt = 50
        t = pc.time_nodes(1.0, nt)
        co = pc.make_coefficients(mesh1d.ndof, nt, c=1.0, d=2.0)
        y0 = rng.standard_normal(mesh1d.ndof)
        traj = pc.solve_forward_linear(lap1d, co, y0, t)
        norms = traj.y_norms()
        assert np.all(np.diff(norms) <= 1e-15)

    def test_spectral_gate_rejects_large_d(self, lap1d, mesh1d):
        nt = 10
        t = pc.time_nodes(0.1, nt)
        with pytest.raises(CoefficientError):
            co = pc.make_coefficients(mesh1d.ndof, nt, c=1.0, d=lap1d.mu1 + 1.0)
            pc.solve_forward_linear(lap1d, co, np.zeros(mesh1d.ndof), t)


class TestDuality:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_duality_parabolic_random(self, seed):
        mesh = pc.build_mesh(1, [1.0], [24])
        lap = pc.assemble_laplacian(mesh)
        nt = 20
        t = pc.time_nodes(0.3, nt)
        rng = np.random.default_rng(seed)
        a = random_smooth_field(mesh, t, seed=seed, amplitude=2.0)
        co = pc.make_coefficients(mesh.ndof, nt, a=a, b=0.8, c=1.1, d=0.5)
        y0 = rng.standard_normal(mesh.ndof)
        v = rng.standard_normal((nt + 1, mesh.ndof))
        phiT = rng.standard_normal(mesh.ndof)
        assert duality_residual(lap, co, t, y0, v, None, phiT) <= 1e-10

    def test_duality_elliptic_and_eps(self, lap1d, mesh1d, rng):
        nt = 30
        t = pc.time_nodes(0.4, nt)
        a = random_smooth_field(mesh1d, t, seed=3)
        co = pc.make_coefficients(mesh1d.ndof, nt, a=a, b=1.0, c=1.0)
        y0 = rng.standard_normal(mesh1d.ndof)
        w = rng.standard_normal((nt + 1, mesh1d.ndof))
        phiT = rng.standard_normal(mesh1d.ndof)
        assert duality_residual(lap1d, co, t, y0, None, w, phiT) <= 1e-10
        z0 = rng.standard_normal(mesh1d.ndof)
        psiT = rng.standard_normal(mesh1d.ndof)
        r = duality_residual(lap1d, co, t, y0, None, w, phiT, psiT=psiT,
                             eps=1e-2, z0=z0)
        assert r <= 1e-10

    def test_duality_2d(self, lap2d, mesh2d, rng):
        nt = 15
        t = pc.time_nodes(0.2, nt)
        co = pc.make_coefficients(mesh2d.ndof, nt, a=0.4, b=0.6, c=1.0, d=1.5)
        y0 = rng.standard_normal(mesh2d.ndof)
        v = rng.standard_normal((nt + 1, mesh2d.ndof))
        phiT = rng.standard_normal(mesh2d.ndof)
        assert duality_residual(lap2d, co, t, y0, v, None, phiT) <= 1e-10

    def test_adjoint_decouples_without_coupling(self, lap1d, mesh1d, rng):
        nt = 20
        t = pc.time_nodes(0.2, nt)
        co = pc.make_coefficients(mesh1d.ndof, nt, b=1.0)  # a = c = 0
        phiT = rng.standard_normal(mesh1d.ndof)
        adj = pc.solve_adjoint_linear(lap1d, co, phiT, t)
        co_heat = pc.make_coefficients(mesh1d.ndof, nt)
        heat = pc.solve_adjoint_linear(lap1d, co_heat, phiT, t)
        np.testing.assert_allclose(adj.y, heat.y, rtol=1e-13, atol=1e-14)

    def test_zero_terminal_zero_adjoint(self, lap1d, mesh1d):
        nt = 12
        t = pc.time_nodes(0.2, nt)
        co = pc.make_coefficients(mesh1d.ndof, nt, b=1.0, c=1.0)
        adj = pc.solve_adjoint_linear(lap1d, co, np.zeros(mesh1d.ndof), t)
        assert np.all(adj.y == 0.0) and np.all(adj.z == 0.0)


class TestDirectTranspose:
    def test_adjoint_map_is_matrix_transpose(self):
        # assemble the dense maps column by column on a coarse grid and
        # compare the adjoint against the literal transpose
        mesh = pc.build_mesh(1, [1.0], [8])
        lap = pc.assemble_laplacian(mesh)
        nt = 6
        t = pc.time_nodes(0.2, nt)
        a = random_smooth_field(mesh, t, seed=4, amplitude=1.0)
        co = pc.make_coefficients(mesh.ndof, nt, a=a, b=0.7, c=1.2, d=0.3)
        sw = pc.make_sweeper(lap, co, t)
        n = mesh.ndof
        F = np.zeros((n, n))   # y0 -> y(T)
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            tr = pc.solve_forward_linear(lap, co, e, t, sweeper=sw, init_z=False)
            F[:, j] = tr.y[-1]
        G = np.zeros((n, n))   # phiT -> phi(0)
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            ad = pc.solve_adjoint_linear(lap, co, e, t, sweeper=sw)
            G[:, j] = ad.y[0]
        np.testing.assert_allclose(G, F.T, rtol=1e-12, atol=1e-14)


class TestEpsForward:
    def test_eps_zero_degenerates_to_elliptic_path(self, lap1d, mesh1d, rng):
        nt = 25
        t = pc.time_nodes(0.3, nt)
        co = pc.make_coefficients(mesh1d.ndof, nt, a=0.2, b=1.0, c=1.0, d=0.0)
        y0 = rng.standard_normal(mesh1d.ndof)
        w = rng.standard_normal((nt + 1, mesh1d.ndof))
        t0 = pc.solve_forward_linear(lap1d, co, y0, t, w=w)
        t1 = pc.solve_forward_linear(lap1d, co, y0, t, w=w, eps_mass=0.0)
        np.testing.assert_allclose(t0.y, t1.y, rtol=0, atol=1e-12)
        np.testing.assert_allclose(t0.z, t1.z, rtol=0, atol=1e-12)

    def test_eps_decoupled_scalar_recursion(self, lap1d, mesh1d):
        nt = 40
        eps = 0.05
        t = pc.time_nodes(0.2, nt)
        dt = t[1] - t[0]
        co = pc.make_coefficients(mesh1d.ndof, nt)
        traj = pc.solve_forward_linear(lap1d, co, np.zeros(mesh1d.ndof), t,
                                       eps_mass=eps, z0=lap1d.first_eigenvector)
        for n in (1, 10, nt):
            pred = (1 + (dt / eps) * lap1d.mu1) ** (-n)
            assert abs(mesh1d.norm(traj.z[n]) - pred) < 1e-12
        assert np.max(np.abs(traj.y)) == 0.0

    def test_zero_data_zero(self, lap1d, mesh1d):
        nt = 10
        t = pc.time_nodes(0.2, nt)
        co = pc.make_coefficients(mesh1d.ndof, nt, b=1.0, c=1.0)
        traj = pc.solve_forward_linear(lap1d, co, np.zeros(mesh1d.ndof), t,
                                       eps_mass=1e-2)
        assert np.all(traj.y == 0.0) and np.all(traj.z == 0.0)


class TestSemilinear:
    def test_degenerate_matches_linear(self, lap1d, mesh1d):
        nt = 40
        t = pc.time_nodes(0.5, nt)
        x = mesh1d.coords()[:, 0]
        y0 = np.sin(np.pi * x)
        spec = pc.make_nonlinear_spec("zero", "linear", b=1.0, d=0.0)
        co = pc.make_coefficients(mesh1d.ndof, nt, b=1.0, c=1.0, d=0.0)
        ts = pc.solve_forward_semilinear(lap1d, spec, y0, t)
        tl = pc.solve_forward_linear(lap1d, co, y0, t)
        np.testing.assert_allclose(ts.y, tl.y, rtol=1e-12, atol=1e-13)

    def test_zero_state_fixed(self, lap1d, mesh1d):
        t = pc.time_nodes(0.5, 30)
        spec = pc.make_nonlinear_spec("sin", "arctan", b=1.0, d=0.0)
        traj = pc.solve_forward_semilinear(lap1d, spec, np.zeros(mesh1d.ndof), t)
        assert np.all(traj.y == 0.0) and np.all(traj.z == 0.0)

    def test_newton_converges_quickly(self, lap1d, mesh1d):
        nt = 50
        t = pc.time_nodes(0.5, nt)
        x = mesh1d.coords()[:, 0]
        y0 = np.sin(np.pi * x)
        spec = pc.make_nonlinear_spec("sin", "arctan", b=1.0, d=0.0)
        traj = pc.solve_forward_semilinear(lap1d, spec, y0, t,
                                           newton=NewtonOptions(tol=1e-10))
        assert np.all(np.isfinite(traj.y))
        assert traj.info["max_newton_iters"] <= 8

    def test_semilinear_2d(self, lap2d, mesh2d):
        nt = 12
        t = pc.time_nodes(0.2, nt)
        pts = mesh2d.coords()
        y0 = np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1])
        spec = pc.make_nonlinear_spec("tanh", "linear", b=0.5, d=0.0)
        traj = pc.solve_forward_semilinear(lap2d, spec, y0, t)
        assert np.all(np.isfinite(traj.y))

    def test_rejects_supercritical_d(self, lap1d, mesh1d):
        t = pc.time_nodes(0.1, 5)
        spec = pc.make_nonlinear_spec("zero", "linear", b=0.0, d=lap1d.mu1 + 1)
        with pytest.raises(SolverError):
            pc.solve_forward_semilinear(lap1d, spec, np.zeros(mesh1d.ndof), t)


class TestEnergyAudit:
    def test_zero_data_trivial(self, lap1d, mesh1d):
        nt = 20
        t = pc.time_nodes(0.3, nt)
        co = pc.make_coefficients(mesh1d.ndof, nt, c=1.0)
        traj = pc.solve_forward_linear(lap1d, co, np.zeros(mesh1d.ndof), t)
        rep = pc.energy_audit(traj, lap1d, mu=co.mu)
        assert rep["c_energy"] == 0.0 and not rep["violations"]

    def test_linear_run_finite_constants(self, lap1d, mesh1d, region1d, rng):
        nt = 40
        t = pc.time_nodes(0.5, nt)
        co = pc.make_coefficients(mesh1d.ndof, nt, a=0.3, b=1.0, c=1.0, d=1.0)
        y0 = rng.standard_normal(mesh1d.ndof)
        w = np.zeros((nt + 1, mesh1d.ndof))
        w[:, region1d.mask] = 0.5
        traj = pc.solve_forward_linear(lap1d, co, y0, t, w=w)
        rep = pc.energy_audit(traj, lap1d, mu=co.mu, w=w,
                              region_mask=region1d.mask)
        assert np.isfinite(rep["c_energy"]) and np.isfinite(rep["c_zbound"])
        assert not rep["violations"]
        assert rep["gamma"] == 1.0 - (co.mu + rep["delta"]) / lap1d.mu1


class TestControlField:
    def test_support_enforced(self, mesh1d, region1d):
        nt = 10
        t = pc.time_nodes(0.2, nt)
        vals = np.ones((nt + 1, mesh1d.ndof))
        with pytest.raises(ValueError):
            pc.ControlField(values=vals, mask=region1d.mask, placement="parabolic",
                            t=t)

    def test_weighted_norm_from_observation(self, mesh1d, region1d):
        nt = 20
        t = pc.time_nodes(0.5, nt)
        K = 1.0
        from pecontrol.weights import control_weight_midpoints, make_weight_params
        params = make_weight_params(mesh1d, region1d, 0.5, K=K)
        rho = control_weight_midpoints(params, t)
        rng = np.random.default_rng(0)
        obs = rng.standard_normal((nt + 1, mesh1d.ndof))
        vals = np.zeros_like(obs)
        vals[1:, region1d.mask] = rho[1:, None] * obs[1:, region1d.mask]
        cf = pc.ControlField(values=vals, mask=region1d.mask, placement="parabolic",
                             t=t, K=K, obs=obs, rho_mid=rho)
        direct = cf.weighted_norm_sq(mesh1d)
        dt = t[1] - t[0]
        expect = dt * mesh1d.mass * np.sum(rho[1:, None]
                                           * obs[1:, region1d.mask] ** 2)
        assert abs(direct - expect) <= 1e-12 * expect


def test_nonlinear_spec_validation():
    from pecontrol.coefficients import NonlinearSpec

    bad = NonlinearSpec(F0=lambda s: 2.0 * np.sin(s), dF0=lambda s: 2 * np.cos(s),
                        lip_F=1.0, f0=lambda s: 0.0 * s, df0=lambda s: 0.0 * s,
                        lip_f=0.0, b=0.0, d=0.0)
    with pytest.raises(CoefficientError):
        bad.validate()
    shifted = NonlinearSpec(F0=lambda s: np.sin(s) + 0.5,
                            dF0=np.cos, lip_F=1.0,
                            f0=lambda s: 0.0 * s, df0=lambda s: 0.0 * s,
                            lip_f=0.0, b=0.0, d=0.0)
    with pytest.raises(CoefficientError):
        shifted.validate()


def test_trajectory_l2q_norm_consistency(lap1d, mesh1d, rng):
    nt = 16
    t = pc.time_nodes(0.2, nt)
    co = pc.make_coefficients(mesh1d.ndof, nt, c=1.0)
    y0 = rng.standard_normal(mesh1d.ndof)
    traj = pc.solve_forward_linear(lap1d, co, y0, t)
    w = trapezoid_weights(t)
    manual = np.sqrt(np.sum(w * traj.y_norms() ** 2))
    assert abs(traj.l2q_norm("y") - manual) < 1e-12 * manual
