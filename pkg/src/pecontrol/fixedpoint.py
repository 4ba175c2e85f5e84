"""Semilinear null control by damped Picard iteration on frozen coefficients.

Each pass freezes the nonlinearities along the current iterate through
their difference quotients, solves the resulting linear null-control
problem, and feeds the controlled state back as the next linearization
point. Convergence of the iteration is reported, never assumed; on
success the final control is replayed through the true semilinear
forward solver.
"""

from dataclasses import dataclass, field

import numpy as np

from .coefficients import HYP_B_CONST, HYP_C_CONST, make_coefficients
from .hum import HumProblem, solve_hum
from .stepping import (
    IN_ELLIPTIC,
    IN_PARABOLIC,
    solve_forward_semilinear,
    trapezoid_weights,
)


class FixedPointError(RuntimeError):
    pass


def quotient_coefficient(fn, dfn, k, rel_threshold=1e-12):
    """Node-wise difference quotient fn(k)/k with the derivative at 0 filling in.

    The switch threshold is relative to the field scale so a uniformly
    tiny field falls back to the derivative everywhere.
    """
    k = np.asarray(k, dtype=float)
    scale = float(np.max(np.abs(k))) if k.size else 0.0
    tau = rel_threshold * max(scale, 1e-300)
    small = np.abs(k) <= tau
    safe = np.where(small, 1.0, k)
    out = np.where(small, dfn(np.zeros_like(k)), fn(safe) / safe)
    return out


@dataclass
class FixedPointOptions:
    theta: float = 1.0          # damping factor in (0, 1]
    tol: float = 1e-6           # successive-difference norm in L2(Q)
    max_iter: int = 30

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise FixedPointError("theta must lie in (0, 1]")


@dataclass
class FixedPointState:
    iteration: int
    frozen: np.ndarray
    hum_result: object
    diff_norms: list
    terminal_norms: list
    control_norms: list
    cg_iters: list
    theta: float
    converged: bool
    replay_terminal_norm: float | None = None
    replay_trajectory: object = None
    diagnostics: dict = field(default_factory=dict)


def _l2q_norm(mesh, t, field_arr):
    w = trapezoid_weights(t)
    return float(np.sqrt(np.sum(w * mesh.mass * np.sum(field_arr**2, axis=1))))


def run_fixed_point(lap, region, params, nonlin, y0, t, placement,
                    penalty=1e-6, cg_tol=1e-8, cg_max_iter=500,
                    options: FixedPointOptions = None, replay=True):
    """Iterate frozen-coefficient null control until the linearization point fixes.

    placement selects which equation carries the control: the parabolic
    row (with a linear elliptic nonlinearity f0) or the elliptic row
    (both nonlinearities frozen).
    """
    options = options or FixedPointOptions()
    mesh = lap.mesh
    nt = len(t) - 1
    y0 = np.asarray(y0, dtype=float)
    k = np.zeros((nt + 1, mesh.ndof))
    diff_norms, terminal_norms, control_norms, cg_iters = [], [], [], []
    state = None
    converged = False
    result = None

    for it in range(1, options.max_iter + 1):
        a_field = quotient_coefficient(nonlin.F0, nonlin.dF0, k)
        c_field = quotient_coefficient(nonlin.f0, nonlin.df0, k)
        if placement == IN_PARABOLIC:
            # linear f0 required: its quotient must be constant
            c_val = float(c_field.ravel()[0])
            if not np.allclose(c_field, c_val, rtol=0, atol=1e-12 * max(1, abs(c_val))):
                raise FixedPointError(
                    "parabolic-control variant needs a linear elliptic nonlinearity"
                )
            coeffs = make_coefficients(mesh.ndof, nt, a=a_field, b=nonlin.b,
                                       c=c_val, d=nonlin.d, tag=HYP_C_CONST)
        elif placement == IN_ELLIPTIC:
            coeffs = make_coefficients(mesh.ndof, nt, a=a_field, b=nonlin.b,
                                       c=c_field, d=nonlin.d, tag=HYP_B_CONST)
        else:
            raise FixedPointError(f"unknown placement {placement!r}")

        problem = HumProblem(lap=lap, coeffs=coeffs, region=region, params=params,
                             t=t, y0=y0, penalty=penalty, placement=placement,
                             cg_tol=cg_tol, cg_max_iter=cg_max_iter)
        result = solve_hum(problem)
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
    if converged and replay and result is not None:
        ctrl = result.control.values
        kw = {"v": ctrl} if placement == IN_PARABOLIC else {"w": ctrl}
        traj = solve_forward_semilinear(lap, nonlin, y0, t, **kw)
        state.replay_trajectory = traj
        state.replay_terminal_norm = mesh.norm(traj.y[-1])
    return state
