"""Uniform null control of the eps-relaxed system and its vanishing-mass limit.

The elliptic row gains a small time-derivative mass eps, both terminal
states are penalized (same nodal-sum convention as the plain solver),
and the dual variable becomes the stacked pair of terminal co-states.
The adjoint z-seed carries a 1/eps factor so that the dual pairs with
the plain terminal values; the sweeps themselves are the exact
transposes of the eps-forward steps.
"""

from dataclasses import dataclass

import numpy as np

from .coefficients import HYP_B_CONST
from .hum import HumError, HumResult, _conjugate_gradient
from .stepping import ControlField, IN_ELLIPTIC, make_sweeper, solve_forward_linear
from .weights import control_weight_midpoints


@dataclass
class EpsProblem:
    """Pair-penalized null-control problem for the eps-relaxed system."""

    lap: object
    coeffs: object
    region: object
    params: object
    t: np.ndarray
    y0: np.ndarray
    z0: np.ndarray
    eps_mass: float
    penalty: float
    z_penalty_weight: float = 1.0
    cg_tol: float = 1e-8
    cg_max_iter: int = 500
    enforce_hypothesis: bool = True

    def __post_init__(self):
        if self.eps_mass <= 0:
            raise HumError("relaxation mass must be positive (use hum for eps = 0)")
        if self.penalty <= 0:
            raise HumError("penalty must be positive")
        if self.enforce_hypothesis and self.coeffs.tag != HYP_B_CONST:
            raise HumError("eps-relaxed control requires the constant-b hypothesis tag")
        self.coeffs.check_spectral_gate(self.lap)

    @property
    def eta(self):
        return self.penalty * self.lap.mesh.mass


class _EpsDualOperator:
    """Gramian-plus-penalty over stacked terminal co-state pairs."""

    def __init__(self, problem: EpsProblem):
        self.p = problem
        self.mesh = problem.lap.mesh
        self.sweeper = make_sweeper(problem.lap, problem.coeffs, problem.t,
                                    eps_mass=problem.eps_mass)
        self.rho_mid = control_weight_midpoints(problem.params, problem.t)
        self.mask = problem.region.mask
        self.nt = len(problem.t) - 1

    def split(self, r):
        n = self.mesh.ndof
        return r[:n], r[n:]

    def observation(self, r):
        ry, rz = self.split(r)
        P, Q = self.sweeper.transpose(ry, rz / self.p.eps_mass)
        return Q, (P, Q)

    def control_from_obs(self, obs):
        w = np.zeros((self.nt + 1, self.mesh.ndof))
        w[1:, self.mask] = self.rho_mid[1:, None] * obs[0:self.nt, :][:, self.mask]
        return w

    def terminal_pair(self, w, y0, z0):
        Y, Z = self.sweeper.forward(y0, z0, None, w)
        return np.concatenate([Y[-1], Z[-1]]), (Y, Z)

    def apply(self, r):
        # gradient of the pair-penalized dual: Gramian + diag(eta, eta/w_z)
        obs, _ = self.observation(r)
        w = self.control_from_obs(obs)
        zero = np.zeros(self.mesh.ndof)
        term, _ = self.terminal_pair(w, zero, zero)
        n = self.mesh.ndof
        pen = np.empty_like(r)
        pen[:n] = self.p.eta * r[:n]
        pen[n:] = (self.p.eta / self.p.z_penalty_weight) * r[n:]
        return term + pen

    def free_terminal(self):
        traj = solve_forward_linear(self.p.lap, self.p.coeffs, self.p.y0, self.p.t,
                                    eps_mass=self.p.eps_mass, z0=self.p.z0,
                                    sweeper=self.sweeper)
        return np.concatenate([traj.y[-1], traj.z[-1]])


def solve_hum_eps(problem: EpsProblem) -> HumResult:
    """Minimize the pair-penalized dual functional for the eps-relaxed system."""
    op = _EpsDualOperator(problem)
    mesh = op.mesh
    g0 = op.free_terminal()
    r, iters, res, res0, ok = _conjugate_gradient(
        op.apply, -g0, mesh, problem.cg_tol, problem.cg_max_iter)

    obs, (P, Q) = op.observation(r)
    w = op.control_from_obs(obs)
    traj = solve_forward_linear(problem.lap, problem.coeffs, problem.y0, problem.t,
                                w=w, eps_mass=problem.eps_mass, z0=problem.z0,
                                sweeper=op.sweeper)
    obs_ctrl = np.zeros_like(w)
    obs_ctrl[1:] = obs[0:op.nt]
    control = ControlField(values=w, mask=op.mask, placement=IN_ELLIPTIC,
                           t=np.asarray(problem.t, dtype=float), K=problem.params.K,
                           obs=obs_ctrl, rho_mid=op.rho_mid)
    terminal = mesh.norm(traj.y[-1])
    terminal_z = mesh.norm(traj.z[-1])
    tail = max(1, op.nt // 10)
    z_norms = np.sqrt(mesh.mass) * np.linalg.norm(traj.z[-tail:], axis=1)
    wsq = control.weighted_norm_sq(mesh)
    return HumResult(
        control=control, trajectory=traj, phiT=r, phi0=np.concatenate([P[0], Q[0]]),
        terminal_norm=terminal, z_tail_max=float(z_norms.max()),
        control_norm=control.l2_norm(mesh), weighted_norm_sq=wsq,
        functional_value=wsq + (terminal**2
                                + problem.z_penalty_weight * terminal_z**2) / problem.eta,
        cg_iters=iters, cg_residual=res, cg_residual0=res0, converged=ok,
        terminal_norm_z=terminal_z,
    )


def control_distance(mesh, t, c1, c2, mask):
    """L2(omega x (0,T)) distance between two control fields."""
    dt = float(t[1] - t[0])
    diff = c1[1:, mask] - c2[1:, mask]
    return float(np.sqrt(dt * mesh.mass * np.sum(diff**2)))


def dual_functional_value_eps(problem: EpsProblem, r, op=None):
    """Pair-penalized dual functional at the stacked co-state r.

    Evaluated through the weighted observation energy and the adjoint
    initial values (one backward sweep), independently of the operator
    application path, so it can cross-check the gradient.
    """
    from .weights import weighted_observation_energy

    op = op or _EpsDualOperator(problem)
    mesh = op.mesh
    obs, (P, Q) = op.observation(r)
    a = weighted_observation_energy(mesh, problem.t, op.rho_mid, obs, op.mask)
    ry, rz = op.split(np.asarray(r, dtype=float))
    pen = 0.5 * problem.eta * (mesh.norm(ry) ** 2
                               + mesh.norm(rz) ** 2 / problem.z_penalty_weight)
    y0 = np.asarray(problem.y0, dtype=float)
    z0 = np.asarray(problem.z0, dtype=float)
    data = mesh.inner(y0, P[0]) + problem.eps_mass * mesh.inner(z0, Q[0])
    return 0.5 * a + pen + data


def run_fixed_point_eps(lap, region, params, nonlin, y0, z0, t, eps_mass,
                        penalty=1e-6, cg_tol=1e-8, cg_max_iter=500, options=None):
    """Frozen-coefficient fixed point with the eps-relaxed dual solve inside.

    Semilinear analogue of solve_hum_eps: both nonlinearities are frozen
    along the iterate through their difference quotients and the linear
    pair-penalized problem is re-solved until the linearization point
    fixes. On success the control is replayed through the semilinear
    eps-forward solver.
    """
    from .coefficients import make_coefficients
    from .fixedpoint import FixedPointOptions, FixedPointState, _l2q_norm, \
        quotient_coefficient
    from .stepping import solve_forward_semilinear

    options = options or FixedPointOptions()
    mesh = lap.mesh
    nt = len(t) - 1
    y0 = np.asarray(y0, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    k = np.zeros((nt + 1, mesh.ndof))
    diff_norms, terminal_norms, control_norms, cg_iters = [], [], [], []
    result = None
    converged = False
    for _ in range(options.max_iter):
        a_field = quotient_coefficient(nonlin.F0, nonlin.dF0, k)
        c_field = quotient_coefficient(nonlin.f0, nonlin.df0, k)
        coeffs = make_coefficients(mesh.ndof, nt, a=a_field, b=nonlin.b,
                                   c=c_field, d=nonlin.d, tag=HYP_B_CONST)
        prob = EpsProblem(lap=lap, coeffs=coeffs, region=region, params=params,
                          t=t, y0=y0, z0=z0, eps_mass=eps_mass, penalty=penalty,
                          cg_tol=cg_tol, cg_max_iter=cg_max_iter)
        result = solve_hum_eps(prob)
        k_next = (1.0 - options.theta) * k + options.theta * result.trajectory.y
        diff = _l2q_norm(mesh, t, k_next - k)
        diff_norms.append(diff)
        terminal_norms.append(result.terminal_norm)
        control_norms.append(result.control_norm)
        cg_iters.append(result.cg_iters)
        k = k_next
        if diff <= options.tol:
            converged = True
            break
    state = FixedPointState(
        iteration=len(diff_norms), frozen=k, hum_result=result,
        diff_norms=diff_norms, terminal_norms=terminal_norms,
        control_norms=control_norms, cg_iters=cg_iters,
        theta=options.theta, converged=converged,
    )
    if converged and result is not None:
        traj = solve_forward_semilinear(lap, nonlin, y0, t,
                                        w=result.control.values,
                                        eps_mass=eps_mass, z0=z0)
        state.replay_trajectory = traj
        state.replay_terminal_norm = mesh.norm(traj.y[-1])
    return state


@dataclass
class EpsSweepResult:
    eps_values: list
    rows: list                # per-eps dicts
    cauchy_distances: list    # consecutive control distances
    limit_distances: list     # distance to the eps = 0 control
    bound_ratios: list        # |w| / (|y0| + eps |z0|)
    limit_result: object
    results: list
    flags: list


def eps_sweep(lap, coeffs, region, params, t, y0, z0, eps_values, penalty=1e-6,
              cg_tol=1e-8, cg_max_iter=500, limit_coeffs=None, nonlinear=None,
              fp_options=None):
    """Solve the relaxed problem over decreasing eps and compare to the limit.

    The limit control solves the parabolic-elliptic problem (eps = 0)
    with the same grids, weight and penalty via the elliptic-placement
    dual solve. Passing a NonlinearSpec as nonlinear switches every
    solve (including the limit) to the frozen-coefficient fixed-point
    loop for the semilinear systems; coeffs is then ignored.
    """
    eps_values = [float(e) for e in eps_values]
    if any(e <= 0 for e in eps_values):
        raise HumError("relaxation masses must be positive")
    if any(b >= a for a, b in zip(eps_values, eps_values[1:])):
        raise HumError("eps list must be strictly decreasing")
    from .hum import HumProblem, solve_hum

    mesh = lap.mesh
    if nonlinear is not None:
        from .fixedpoint import run_fixed_point

        limit_state = run_fixed_point(lap, region, params, nonlinear, y0, t,
                                      IN_ELLIPTIC, penalty=penalty, cg_tol=cg_tol,
                                      cg_max_iter=cg_max_iter, options=fp_options,
                                      replay=False)
        if not limit_state.converged:
            raise HumError("fixed point for the limit problem did not converge")
        limit_result = limit_state.hum_result
    else:
        limit_problem = HumProblem(lap=lap, coeffs=limit_coeffs or coeffs,
                                   region=region, params=params, t=t, y0=y0,
                                   penalty=penalty, placement=IN_ELLIPTIC,
                                   cg_tol=cg_tol, cg_max_iter=cg_max_iter)
        limit_result = solve_hum(limit_problem)

    y0n = mesh.norm(np.asarray(y0, dtype=float))
    z0n = mesh.norm(np.asarray(z0, dtype=float))
    rows, results, ratios, limit_d = [], [], [], []
    for eps in eps_values:
        if nonlinear is not None:
            state = run_fixed_point_eps(lap, region, params, nonlinear, y0, z0,
                                        t, eps, penalty=penalty, cg_tol=cg_tol,
                                        cg_max_iter=cg_max_iter,
                                        options=fp_options)
            if not state.converged:
                raise HumError(f"fixed point at eps = {eps} did not converge")
            res = state.hum_result
        else:
            prob = EpsProblem(lap=lap, coeffs=coeffs, region=region, params=params,
                              t=t, y0=y0, z0=z0, eps_mass=eps, penalty=penalty,
                              cg_tol=cg_tol, cg_max_iter=cg_max_iter)
            res = solve_hum_eps(prob)
        wn = res.control_norm
        denom = y0n + eps * z0n
        ratios.append(wn / denom if denom > 0 else np.inf)
        dist = control_distance(mesh, t, res.control.values,
                                limit_result.control.values, region.mask)
        limit_d.append(dist)
        rows.append({
            "eps": eps,
            "control_norm": wn,
            "weighted_norm_sq": res.weighted_norm_sq,
            "terminal_norm_y": res.terminal_norm,
            "terminal_norm_z": res.terminal_norm_z,
            "bound_ratio": ratios[-1],
            "limit_distance": dist,
            "cg_iters": res.cg_iters,
            "converged": res.converged,
        })
        results.append(res)

    cauchy = [control_distance(mesh, t, results[i + 1].control.values,
                               results[i].control.values, region.mask)
              for i in range(len(results) - 1)]
    flags = []
    for i in range(1, len(cauchy)):
        if cauchy[i] > cauchy[i - 1]:
            flags.append(f"cauchy distance increased at index {i}")
    for i in range(1, len(limit_d)):
        if limit_d[i] > limit_d[i - 1]:
            flags.append(f"limit distance increased at index {i}")
    return EpsSweepResult(eps_values, rows, cauchy, limit_d, ratios,
                          limit_result, results, flags)
