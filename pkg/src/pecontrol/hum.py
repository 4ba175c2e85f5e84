"""Penalized null control by conjugate gradient on the dual problem.

The dual unknown is the adjoint terminal datum. Each operator
application is one backward (transpose) sweep followed by one forward
sweep: the adjoint observation on the control region, weighted by
rho(t) = exp(-2K/(T-t)) at step midpoints, is exactly the control the
optimality system prescribes, and the Gramian so defined is symmetric
positive semidefinite to rounding because the sweeps share one set of
factorizations.

Penalty convention: the minimized functional is

    J_eps(v) = integral of e^{2K/(T-t)} |v|^2  +  (1/eps) * sum_i y_i(T)^2,

i.e. the terminal penalty weights the plain nodal sum of squares. In
terms of the discrete L2 norm this is a penalty of strength
1/(eps * mass) with mass the node weight h^dim; internally the dual
solve uses eta = eps * mass against L2 quantities, which is the same
functional.
"""

from dataclasses import dataclass, field

import numpy as np

from .coefficients import HYP_B_CONST, HYP_C_CONST
from .stepping import (
    IN_ELLIPTIC,
    IN_PARABOLIC,
    ControlField,
    SolverError,
    make_sweeper,
    solve_forward_linear,
)
from .weights import control_weight_midpoints, weighted_observation_energy


class HumError(ValueError):
    pass


@dataclass
class HumProblem:
    """Penalized null-control problem for the linear coupled system."""

    lap: object
    coeffs: object
    region: object
    params: object            # WeightParams (supplies K and T)
    t: np.ndarray
    y0: np.ndarray
    penalty: float
    placement: str = IN_PARABOLIC
    cg_tol: float = 1e-8
    cg_max_iter: int = 500
    method: str = "cg"        # "cg" (matrix-free) or "direct" (dense dual solve)
    enforce_hypothesis: bool = True

    def __post_init__(self):
        if self.penalty <= 0:
            raise HumError("penalty must be positive")
        if self.placement not in (IN_PARABOLIC, IN_ELLIPTIC):
            raise HumError(f"unknown control placement {self.placement!r}")
        if self.method not in ("cg", "direct"):
            raise HumError(f"unknown method {self.method!r}")
        if self.enforce_hypothesis:
            want = HYP_C_CONST if self.placement == IN_PARABOLIC else HYP_B_CONST
            if self.coeffs.tag != want:
                raise HumError(
                    f"placement {self.placement} requires coefficient tag {want}, "
                    f"got {self.coeffs.tag}"
                )
        self.coeffs.check_spectral_gate(self.lap)

    @property
    def eta(self):
        """L2-penalty strength equivalent to the nodal-sum penalty."""
        return self.penalty * self.lap.mesh.mass


@dataclass
class HumResult:
    control: ControlField
    trajectory: object
    phiT: np.ndarray
    phi0: np.ndarray
    terminal_norm: float
    z_tail_max: float
    control_norm: float
    weighted_norm_sq: float
    functional_value: float
    cg_iters: int
    cg_residual: float
    cg_residual0: float
    converged: bool
    terminal_norm_z: float | None = None
    diagnostics: dict = field(default_factory=dict)


class _DualOperator:
    """Matrix-free Gramian-plus-penalty of the dual functional."""

    def __init__(self, problem: HumProblem):
        self.p = problem
        self.mesh = problem.lap.mesh
        self.sweeper = make_sweeper(problem.lap, problem.coeffs, problem.t)
        self.rho_mid = control_weight_midpoints(problem.params, problem.t)
        self.mask = problem.region.mask
        self.nt = len(problem.t) - 1
        self.applications = 0

    def observation(self, q):
        """Backward sweep from terminal datum q; returns (obs rows, adjoint pair)."""
        P, Q = self.sweeper.transpose(q, np.zeros(self.mesh.ndof))
        obs = P if self.p.placement == IN_PARABOLIC else Q
        return obs, (P, Q)

    def control_from_obs(self, obs):
        """Control-node indexed values rho_mid[n] * obs[n-1] on the mask."""
        v = np.zeros((self.nt + 1, self.mesh.ndof))
        v[1:, self.mask] = self.rho_mid[1:, None] * obs[0:self.nt, :][:, self.mask]
        return v

    def forward_terminal(self, v):
        sy = v if self.p.placement == IN_PARABOLIC else None
        sz = v if self.p.placement == IN_ELLIPTIC else None
        zero = np.zeros(self.mesh.ndof)
        Y, _ = self.sweeper.forward(zero, zero, sy, sz)
        return Y[-1]

    def apply(self, q):
        """(Gramian + penalty) q."""
        self.applications += 1
        obs, _ = self.observation(q)
        v = self.control_from_obs(obs)
        return self.forward_terminal(v) + self.p.eta * q

    def free_terminal(self):
        traj = solve_forward_linear(self.p.lap, self.p.coeffs, self.p.y0, self.p.t,
                                    sweeper=self.sweeper, init_z=False)
        return traj.y[-1]


def _conjugate_gradient(apply_fn, rhs, mesh, tol, max_iter, log=None):
    """Plain CG in the discrete L2 geometry; returns (x, iters, res, res0, ok).

    When log is a list, appends one (iteration, residual, functional)
    row per iteration; the functional value of the minimized quadratic
    is tracked by the exact CG decrement recurrence.
    """
    def ip(u, w):
        return mesh.mass * float(np.dot(u, w))

    x = np.zeros_like(rhs)
    r = rhs.copy()
    res0 = np.sqrt(ip(r, r))
    if log is not None:
        log.append((0, res0, 0.0))
    if res0 == 0.0:
        return x, 0, 0.0, 0.0, True
    p = r.copy()
    rr = res0**2
    res = res0
    fval = 0.0
    for it in range(1, max_iter + 1):
        Ap = apply_fn(p)
        pAp = ip(p, Ap)
        if pAp <= 0:
            raise SolverError(f"dual operator lost positivity at CG iteration {it}")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        fval -= 0.5 * alpha * rr
        rr_new = ip(r, r)
        res = np.sqrt(rr_new)
        if log is not None:
            log.append((it, res, fval))
        if res <= tol * res0:
            return x, it, res, res0, True
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, max_iter, res, res0, False


def _dense_dual_solve(op, rhs):
    """Assemble the dual operator column by column and solve directly.

    Exactly linear in the data up to rounding; used where superposition
    at tolerances beyond iterative-solver truncation is required.
    """
    n = len(rhs)
    A = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[:] = 0.0
        e[j] = 1.0
        A[:, j] = op.apply(e)
    A = 0.5 * (A + A.T)
    x = np.linalg.solve(A, rhs)
    res = np.linalg.norm(A @ x - rhs) * np.sqrt(op.mesh.mass)
    res0 = np.linalg.norm(rhs) * np.sqrt(op.mesh.mass)
    return x, n, float(res), float(res0), True


def solve_hum(problem: HumProblem, cg_log=None) -> HumResult:
    """Minimize the penalized dual functional and extract the control."""
    op = _DualOperator(problem)
    mesh = op.mesh
    g0 = op.free_terminal()
    if problem.method == "direct":
        q, iters, res, res0, ok = _dense_dual_solve(op, -g0)
    else:
        q, iters, res, res0, ok = _conjugate_gradient(
            op.apply, -g0, mesh, problem.cg_tol, problem.cg_max_iter, log=cg_log)

    obs, (P, Q) = op.observation(q)
    v = op.control_from_obs(obs)
    kw = {"v": v} if problem.placement == IN_PARABOLIC else {"w": v}
    traj = solve_forward_linear(problem.lap, problem.coeffs, problem.y0, problem.t,
                                sweeper=op.sweeper, **kw)

    obs_ctrl = np.zeros_like(v)
    obs_ctrl[1:] = obs[0:op.nt]
    control = ControlField(values=v, mask=op.mask, placement=problem.placement,
                           t=np.asarray(problem.t, dtype=float), K=problem.params.K,
                           obs=obs_ctrl, rho_mid=op.rho_mid)

    terminal = mesh.norm(traj.y[-1])
    nt = op.nt
    tail = max(1, nt // 10)
    z_norms = np.sqrt(mesh.mass) * np.linalg.norm(traj.z[-tail:], axis=1)
    wsq = control.weighted_norm_sq(mesh)
    result = HumResult(
        control=control,
        trajectory=traj,
        phiT=q,
        phi0=P[0],
        terminal_norm=terminal,
        z_tail_max=float(z_norms.max()),
        control_norm=control.l2_norm(mesh),
        weighted_norm_sq=wsq,
        functional_value=wsq + terminal**2 / problem.eta,
        cg_iters=iters,
        cg_residual=res,
        cg_residual0=res0,
        converged=ok,
    )
    return result


def verify_optimality_system(result: HumResult, problem: HumProblem):
    """Recompute the three first-order optimality relations.

    Returns a report with the terminal-condition residual (compared to a
    CG-consistent threshold), the control-extraction identity, and the
    duality bookkeeping inequality.
    """
    mesh = problem.lap.mesh
    eta = problem.eta
    phiT_norm = mesh.norm(result.phiT)
    yT = result.trajectory.y[-1]
    if phiT_norm == 0.0:
        terminal_residual = 0.0
        threshold = 0.0
    else:
        terminal_residual = mesh.norm(result.phiT + yT / eta) / phiT_norm
        # what the residual would be had CG met its requested tolerance
        # (floored at rounding level); an under-converged run exceeds this
        threshold = (10.0 * max(problem.cg_tol, 1e-13) * result.cg_residual0
                     / (eta * phiT_norm))
    rho_mid = control_weight_midpoints(problem.params, problem.t)
    expected = np.zeros_like(result.control.values)
    expected[1:, problem.region.mask] = (
        rho_mid[1:, None] * result.control.obs[1:, problem.region.mask])
    extraction_exact = bool(np.array_equal(expected, result.control.values))

    lhs = result.weighted_norm_sq + result.terminal_norm**2 / eta
    y0_norm = mesh.norm(np.asarray(problem.y0, dtype=float))
    rhs = y0_norm * mesh.norm(result.phi0)
    duality_ok = lhs <= rhs * (1 + 1e-8) + 1e-30

    return {
        "terminal_residual": terminal_residual,
        "terminal_threshold": threshold,
        "terminal_ok": terminal_residual <= threshold,
        "extraction_exact": extraction_exact,
        "duality_lhs": lhs,
        "duality_rhs": rhs,
        "duality_ok": duality_ok,
        "all_ok": (terminal_residual <= threshold) and extraction_exact and duality_ok,
    }


def dual_functional_value(problem: HumProblem, q, op=None):
    """Value of the dual functional at terminal datum q (one backward sweep)."""
    op = op or _DualOperator(problem)
    mesh = op.mesh
    obs, (P, _) = op.observation(q)
    a = weighted_observation_energy(mesh, problem.t, op.rho_mid, obs, op.mask)
    y0 = np.asarray(problem.y0, dtype=float)
    return (0.5 * a + 0.5 * problem.eta * mesh.norm(q) ** 2
            + mesh.inner(y0, P[0]))


def dual_gradient_check(problem: HumProblem, result: HumResult = None,
                        directions=5, seed=0, step_scale=1e-2):
    """Directional derivatives of the dual functional vs central differences.

    Checked at a reproducible random base point scaled like the solution
    (at the minimizer itself the derivative vanishes and a relative
    comparison is meaningless). The functional is quadratic, so central
    differences are exact up to cancellation; returns the max relative
    error over the random directions.
    """
    op = _DualOperator(problem)
    mesh = op.mesh
    scale = 1.0
    if result is not None and mesh.norm(result.phiT) > 0:
        scale = mesh.norm(result.phiT)
    rng = np.random.default_rng([seed, 987])
    q = rng.standard_normal(mesh.ndof)
    q *= scale / mesh.norm(q)
    grad = op.apply(q) + op.free_terminal()
    errs = []
    for i in range(directions):
        rng = np.random.default_rng([seed, i])
        d = rng.standard_normal(len(q))
        d /= mesh.norm(d)
        tau = step_scale * scale
        jp = dual_functional_value(problem, q + tau * d, op)
        jm = dual_functional_value(problem, q - tau * d, op)
        fd = (jp - jm) / (2 * tau)
        an = mesh.inner(grad, d)
        denom = max(abs(an), abs(fd), 1e-300)
        errs.append(abs(fd - an) / denom)
    return max(errs), errs


def penalty_sweep(problem: HumProblem, penalty_list, monotone_slack=0.05):
    """Run solve_hum over decreasing penalties; flag non-monotone rows."""
    penalties = [float(e) for e in penalty_list]
    if any(e <= 0 for e in penalties):
        raise HumError("penalties must be positive")
    if any(b >= a for a, b in zip(penalties, penalties[1:])):
        raise HumError("penalty list must be strictly decreasing")
    rows = []
    results = []
    prev_terminal = None
    for eps in penalties:
        p = HumProblem(lap=problem.lap, coeffs=problem.coeffs, region=problem.region,
                       params=problem.params, t=problem.t, y0=problem.y0,
                       penalty=eps, placement=problem.placement,
                       cg_tol=problem.cg_tol, cg_max_iter=problem.cg_max_iter,
                       method=problem.method,
                       enforce_hypothesis=problem.enforce_hypothesis)
        res = solve_hum(p)
        flagged = (prev_terminal is not None
                   and res.terminal_norm > prev_terminal * (1 + monotone_slack))
        rows.append({
            "penalty": eps,
            "terminal_norm": res.terminal_norm,
            "control_norm": res.control_norm,
            "weighted_norm_sq": res.weighted_norm_sq,
            "cg_iters": res.cg_iters,
            "converged": res.converged,
            "monotone_flag": flagged,
        })
        results.append(res)
        prev_terminal = res.terminal_norm
    return rows, results
