import math

import numpy as np
import pytest

import pecontrol as pc
from pecontrol.weights import (
    WeightError,
    build_alpha0,
    build_weight_fields,
    control_weight,
    control_weight_midpoints,
    estimate_observability_quotient,
    eval_carleman_functionals,
    exponents_for_peak,
    gradient_magnitude,
    make_weight_params,
    weighted_observation_energy,
)


class TestAlpha0:
    def test_peak_placement(self, mesh1d, region1d):
        p, q = exponents_for_peak(0.35)
        alpha0 = build_alpha0(mesh1d, region1d, [(p, q)])
        x = mesh1d.coords()[:, 0]
        peak = x[np.argmax(alpha0)]
        assert 0.3 < peak < 0.4
        assert np.max(alpha0) == 1.0
        assert np.all(alpha0 > 0.0)

    def test_symmetric_quadratic(self, mesh1d):
        region = pc.build_control_region(mesh1d, [(0.35, 0.65)], [(0.45, 0.55)])
        alpha0 = build_alpha0(mesh1d, region, [(1.0, 1.0)])
        x = mesh1d.coords()[:, 0]
        expected = x * (1 - x)
        expected /= expected.max()
        np.testing.assert_allclose(alpha0, expected, rtol=1e-12)

    def test_rejects_peak_outside_inner_box(self, mesh1d, region1d):
        p, q = exponents_for_peak(0.9)
        with pytest.raises(WeightError):
            build_alpha0(mesh1d, region1d, [(p, q)])

    def test_gradient_positive_outside_inner_box(self, mesh1d, region1d):
        alpha0 = build_alpha0(mesh1d, region1d)
        grad = gradient_magnitude(mesh1d, alpha0)
        assert np.min(grad[~region1d.inner_mask]) > 1e-6

    def test_2d_tensor_profile(self, mesh2d):
        region = pc.build_control_region(mesh2d, [(0.2, 0.6), (0.2, 0.7)],
                                         [(0.3, 0.5), (0.35, 0.55)])
        alpha0 = build_alpha0(mesh2d, region)
        assert np.max(alpha0) == 1.0
        pts = mesh2d.coords()
        peak = pts[np.argmax(alpha0)]
        assert 0.3 < peak[0] < 0.5 and 0.35 < peak[1] < 0.55


class TestWeightParams:
    def test_k_condition_enforced(self, mesh1d, region1d):
        params = make_weight_params(mesh1d, region1d, T=0.5, k_margin=0.1)
        assert params.k > params.alpha0_sup + math.log(2.0)
        with pytest.raises(WeightError):
            make_weight_params(mesh1d, region1d, T=0.5, k_margin=-0.2)

    def test_s_default(self, mesh1d, region1d):
        params = make_weight_params(mesh1d, region1d, T=0.5, sigma=2.0)
        assert params.s == 2.0 * (0.5 + 0.25)


class TestWeightFields:
    def test_beta_vertex(self, mesh1d, region1d):
        params = make_weight_params(mesh1d, region1d, T=0.5)
        t = pc.time_nodes(0.5, 10)
        wf = build_weight_fields(params, mesh1d, t[1:-1])
        mid = np.argmin(np.abs(wf.t - 0.25))
        assert wf.beta[mid] == 0.25 * 0.25

    def test_rejects_endpoints(self, mesh1d, region1d):
        params = make_weight_params(mesh1d, region1d, T=0.5)
        t = pc.time_nodes(0.5, 10)
        with pytest.raises(WeightError):
            build_weight_fields(params, mesh1d, t)

    def test_lambda_zero_flat_in_space(self, mesh1d, region1d):
        params = make_weight_params(mesh1d, region1d, T=0.5, lam=0.0)
        t = pc.time_nodes(0.5, 8)
        wf = build_weight_fields(params, mesh1d, t[1:-1])
        flat = np.broadcast_to(1.0 / wf.beta[:, None], wf.phi.shape)
        np.testing.assert_allclose(wf.phi, flat, rtol=1e-15)
        np.testing.assert_allclose(wf.phi_hat, wf.phi_star, rtol=1e-15)

    def test_phi_star_brute_force(self, mesh1d, region1d):
        params = make_weight_params(mesh1d, region1d, T=0.5, lam=1.0)
        t = pc.time_nodes(0.5, 4)
        wf = build_weight_fields(params, mesh1d, t[1:-1])
        mid = np.argmin(np.abs(wf.t - 0.25))
        expected = np.exp(1.0 * params.alpha0.max()) / (0.25 * 0.25)
        assert wf.phi_star[mid] == pytest.approx(expected, rel=1e-14)
        assert wf.phi_star[mid] == np.max(wf.phi[mid])

    def test_alpha_bar_positive(self, mesh1d, region1d):
        params = make_weight_params(mesh1d, region1d, T=0.5)
        t = pc.time_nodes(0.5, 8)
        wf = build_weight_fields(params, mesh1d, t[1:-1])
        assert np.min(wf.alpha_bar) > 0.0

    def test_extrema_sandwich(self, mesh1d, region1d):
        params = make_weight_params(mesh1d, region1d, T=0.5)
        t = pc.time_nodes(0.5, 16)
        wf = build_weight_fields(params, mesh1d, t[1:-1])
        assert np.all(wf.alpha_hat[:, None] <= wf.alpha)
        assert np.all(wf.alpha <= wf.alpha_star[:, None])
        assert np.all(wf.phi_hat[:, None] <= wf.phi)
        assert np.all(wf.phi <= wf.phi_star[:, None])

    def test_rho_monotone_and_endpoints(self, mesh1d, region1d):
        params = make_weight_params(mesh1d, region1d, T=0.5, K=1.0)
        t = pc.time_nodes(0.5, 50)
        rho = control_weight(params, t)
        assert rho[0] == np.exp(-2.0 * 1.0 / 0.5)
        assert rho[-1] == 0.0
        assert np.all(np.diff(rho[:-1]) < 0.0)


def _adjoint_solver(lap, co, t):
    sw = pc.make_sweeper(lap, co, t)

    def solver(phiT):
        return pc.solve_adjoint_linear(lap, co, phiT, t, sweeper=sw)

    return solver


class TestCarlemanFunctionals:
    def _setup(self, mesh, lap, region):
        nt = 40
        t = pc.time_nodes(0.5, nt)
        params = make_weight_params(mesh, region, T=0.5)
        co = pc.make_coefficients(mesh.ndof, nt, b=1.0, c=1.0, d=0.0)
        return t, params, co

    def test_zero_trajectory_all_zero(self, mesh1d, lap1d, region1d):
        t, params, co = self._setup(mesh1d, lap1d, region1d)
        adj = pc.solve_adjoint_linear(lap1d, co, np.zeros(mesh1d.ndof), t)
        rep = eval_carleman_functionals(params, lap1d, adj, region1d,
                                        "phi_observation")
        assert rep.lhs == 0.0 and rep.rhs == 0.0
        assert math.isnan(rep.log_quotient)
        assert not rep.quotient_defined

    def test_random_datum_finite_quotient(self, mesh1d, lap1d, region1d, rng):
        t, params, co = self._setup(mesh1d, lap1d, region1d)
        phiT = rng.standard_normal(mesh1d.ndof)
        adj = pc.solve_adjoint_linear(lap1d, co, phiT, t)
        for variant in ("phi_observation", "psi_observation"):
            rep = eval_carleman_functionals(params, lap1d, adj, region1d, variant)
            assert rep.quotient_defined
            assert np.isfinite(rep.log_quotient)

    def test_quotient_scale_invariant(self, mesh1d, lap1d, region1d, rng):
        t, params, co = self._setup(mesh1d, lap1d, region1d)
        phiT = rng.standard_normal(mesh1d.ndof)
        a1 = pc.solve_adjoint_linear(lap1d, co, phiT, t)
        a2 = pc.solve_adjoint_linear(lap1d, co, 7.0 * phiT, t)
        r1 = eval_carleman_functionals(params, lap1d, a1, region1d,
                                       "phi_observation")
        r2 = eval_carleman_functionals(params, lap1d, a2, region1d,
                                       "phi_observation")
        assert r1.log_quotient == pytest.approx(r2.log_quotient, abs=1e-10)

    def test_weight_decreases_with_s(self, mesh1d, region1d):
        t = pc.time_nodes(0.5, 20)
        p1 = make_weight_params(mesh1d, region1d, T=0.5, s=0.75)
        p2 = make_weight_params(mesh1d, region1d, T=0.5, s=1.5)
        wf1 = build_weight_fields(p1, mesh1d, t[1:-1])
        wf2 = build_weight_fields(p2, mesh1d, t[1:-1])
        # e^{-2 s alpha} node-wise monotone in s
        assert np.all(-2 * p2.s * wf2.alpha <= -2 * p1.s * wf1.alpha)


class TestObservability:
    def _problem(self, mesh, lap):
        nt = 60
        t = pc.time_nodes(0.5, nt)
        co = pc.make_coefficients(mesh.ndof, nt, b=1.0, c=1.0, d=0.0)
        return t, co

    def test_baseline_statistics(self, mesh1d, lap1d, region1d):
        t, co = self._problem(mesh1d, lap1d)
        params = make_weight_params(mesh1d, region1d, T=0.5)
        solver = _adjoint_solver(lap1d, co, t)
        stats, samples = estimate_observability_quotient(
            solver, mesh1d, region1d, params, t, "phi_observation", 16, seed=9)
        assert stats["count"] == 16 and stats["discarded"] == 0
        assert np.isfinite(stats["max"]) and stats["max"] >= stats["mean"]
        assert all(s["denominator"] > 0 for s in samples)

    def test_determinism(self, mesh1d, lap1d, region1d):
        t, co = self._problem(mesh1d, lap1d)
        params = make_weight_params(mesh1d, region1d, T=0.5)
        solver = _adjoint_solver(lap1d, co, t)
        s1, _ = estimate_observability_quotient(
            solver, mesh1d, region1d, params, t, "psi_observation", 8, seed=3)
        s2, _ = estimate_observability_quotient(
            solver, mesh1d, region1d, params, t, "psi_observation", 8, seed=3)
        assert s1 == s2

    def test_scale_invariance_of_quotient(self, mesh1d, lap1d, region1d, rng):
        t, co = self._problem(mesh1d, lap1d)
        params = make_weight_params(mesh1d, region1d, T=0.5)
        solver = _adjoint_solver(lap1d, co, t)
        rho = control_weight_midpoints(params, t)
        phiT = rng.standard_normal(mesh1d.ndof)

        def quot(q):
            traj = solver(q)
            num = mesh1d.norm(traj.y[0]) ** 2 + mesh1d.norm(traj.z[0]) ** 2
            den = weighted_observation_energy(mesh1d, t, rho, traj.y,
                                              region1d.mask)
            return num / den

        assert quot(phiT) == pytest.approx(quot(10 * phiT), rel=1e-10)

    def test_zero_observations_discarded(self, mesh1d, lap1d, region1d):
        t, co = self._problem(mesh1d, lap1d)
        params = make_weight_params(mesh1d, region1d, T=0.5)
        from pecontrol.stepping import Trajectory

        def zero_solver(phiT):
            shape = (len(t), mesh1d.ndof)
            return Trajectory(t, np.zeros(shape), np.zeros(shape), mesh1d)

        stats, samples = estimate_observability_quotient(
            zero_solver, mesh1d, region1d, params, t, "phi_observation", 4)
        assert stats["count"] == 0 and stats["discarded"] == 4
        assert np.isnan(stats["max"]) and not samples

    def test_rejects_bad_variant(self, mesh1d, lap1d, region1d):
        t, co = self._problem(mesh1d, lap1d)
        params = make_weight_params(mesh1d, region1d, T=0.5)
        with pytest.raises(WeightError):
            estimate_observability_quotient(
                _adjoint_solver(lap1d, co, t), mesh1d, region1d, params, t,
                "bogus", 4)
