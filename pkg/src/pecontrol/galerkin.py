"""Spectral Galerkin cross-validation oracle on the Laplacian eigenbasis.

Independent of the banded/sparse steppers: the coupled system is
advanced in eigenfunction coordinates with dense linear algebra, the
nonlinear terms evaluated nodally and projected back (pseudo-spectral).
At full order it reproduces the finite-difference solution in rotated
coordinates, which makes the comparison an exact cross-check; truncated
orders provide the well-posedness estimates.
"""

from dataclasses import dataclass

import numpy as np

from .stepping import SolverError, Trajectory


@dataclass
class GalerkinSystem:
    """Truncated eigenbasis with the discrete-L2 orthogonal projector."""

    mesh: object
    order: int
    eigenvalues: np.ndarray    # (order,)
    basis: np.ndarray          # (ndof, order), orthonormal in mass inner product

    @classmethod
    def from_laplacian(cls, lap, order):
        if order < 1 or order > lap.mesh.ndof:
            raise SolverError(f"Galerkin order {order} outside 1..{lap.mesh.ndof}")
        vals, vecs = lap.eigenbasis()
        return cls(lap.mesh, order, vals[:order].copy(), vecs[:, :order].copy())

    def project(self, u):
        """Coefficients of the orthogonal projection onto the first modes."""
        return self.mesh.mass * (self.basis.T @ u)

    def lift(self, coef):
        return self.basis @ coef

    def h1_norm_sq(self, coef):
        return float(np.sum(self.eigenvalues * coef**2))

    def hminus1_norm_sq(self, coef):
        return float(np.sum(coef**2 / self.eigenvalues))


class _NodalRHS:
    """Nodal right-hand sides F(y, z), f(y, z) and their partial derivatives."""

    def __init__(self, Fy, Fz, fy, fz, dFy, dfy):
        self.Fy, self.Fz, self.fy, self.fz = Fy, Fz, fy, fz
        self.dFy, self.dfy = dFy, dfy


def _rhs_from_nonlinear(nonlin, ndof):
    return _NodalRHS(
        Fy=lambda n, y: nonlin.F0(y), Fz=lambda n: np.full(ndof, nonlin.b),
        fy=lambda n, y: nonlin.f0(y), fz=lambda n: np.full(ndof, nonlin.d),
        dFy=lambda n, y: nonlin.dF0(y), dfy=lambda n, y: nonlin.df0(y),
    )


def _rhs_from_coeffs(coeffs):
    return _NodalRHS(
        Fy=lambda n, y: coeffs.a.at(n) * y, Fz=lambda n: coeffs.b.at(n),
        fy=lambda n, y: coeffs.c.at(n) * y, fz=lambda n: coeffs.d.at(n),
        dFy=lambda n, y: coeffs.a.at(n) * np.ones_like(y),
        dfy=lambda n, y: coeffs.c.at(n) * np.ones_like(y),
    )


def solve_galerkin(lap, model, y0, t, v=None, w=None, order=None, eps_mass=0.0,
                   z0=None, newton_tol=1e-11, newton_max=30, start_noise=None):
    """Advance the coupled system in eigencoordinates (implicit Euler).

    model is a CoefficientSet or NonlinearSpec. Returns the lifted nodal
    Trajectory together with the coefficient history.
    """
    mesh = lap.mesh
    order = mesh.ndof if order is None else int(order)
    sys = GalerkinSystem.from_laplacian(lap, order)
    rhs = (_rhs_from_nonlinear(model, mesh.ndof) if hasattr(model, "F0")
           else _rhs_from_coeffs(model))

    t = np.asarray(t, dtype=float)
    nt = len(t) - 1
    dt = float(t[1] - t[0])
    N = order
    D = np.diag(sys.eigenvalues)
    eye = np.eye(N)
    scale = np.sqrt(mesh.mass)

    yc = np.empty((nt + 1, N))
    zc = np.empty((nt + 1, N))
    yc[0] = sys.project(np.asarray(y0, dtype=float))

    def control_coef(ctrl, n):
        if ctrl is None:
            return np.zeros(N)
        return sys.project(ctrl[n])

    def step_residual(n, yk, zk, yprev, zprev):
        yf = sys.lift(yk)
        zf = sys.lift(zk)
        bz = rhs.Fz(n)
        dz = rhs.fz(n)
        Fc = sys.project(rhs.Fy(n, yf) + bz * zf)
        fc = sys.project(rhs.fy(n, yf) + dz * zf)
        ry = yk - yprev + dt * (sys.eigenvalues * yk - Fc - control_coef(v, n))
        rz = (eps_mass * (zk - zprev)
              + dt * (sys.eigenvalues * zk - fc - control_coef(w, n)))
        return ry, rz

    def projected_diag(field_vals):
        # mass-weighted V^T diag(field) V, the pseudo-spectral Jacobian block
        return mesh.mass * (sys.basis.T @ (field_vals[:, None] * sys.basis))

    # elliptic initialization for the slaved field
    if eps_mass == 0.0:
        yf0 = sys.lift(yc[0])
        def ell_res(zk):
            zf = sys.lift(zk)
            fc = sys.project(rhs.fy(0, yf0) + rhs.fz(0) * zf)
            return sys.eigenvalues * zk - fc - control_coef(w, 0)
        zk = np.zeros(N)
        for _ in range(newton_max):
            r = ell_res(zk)
            if scale * np.linalg.norm(r) <= newton_tol:
                break
            J = D - projected_diag(rhs.fz(0))
            zk = zk - np.linalg.solve(J, r)
        zc[0] = zk
    else:
        zc[0] = sys.project(np.zeros(mesh.ndof) if z0 is None else np.asarray(z0, float))

    for n in range(1, nt + 1):
        yk, zk = yc[n - 1].copy(), zc[n - 1].copy()
        if start_noise is not None:
            scale_noise, rng = start_noise
            yk = yk + scale_noise * rng.standard_normal(N)
            zk = zk + scale_noise * rng.standard_normal(N)
        ry, rz = step_residual(n, yk, zk, yc[n - 1], zc[n - 1])
        rnorm = scale * np.sqrt(np.sum(ry**2) + np.sum(rz**2))
        for _ in range(newton_max):
            if rnorm <= newton_tol:
                break
            yf = sys.lift(yk)
            J11 = eye + dt * (D - projected_diag(rhs.dFy(n, yf)))
            J12 = -dt * projected_diag(rhs.Fz(n))
            J21 = -dt * projected_diag(rhs.dfy(n, yf))
            J22 = eps_mass * eye + dt * (D - projected_diag(rhs.fz(n)))
            J = np.block([[J11, J12], [J21, J22]])
            delta = np.linalg.solve(J, np.concatenate([ry, rz]))
            step = 1.0
            for _ in range(9):
                y_try = yk - step * delta[:N]
                z_try = zk - step * delta[N:]
                ry2, rz2 = step_residual(n, y_try, z_try, yc[n - 1], zc[n - 1])
                rnorm2 = scale * np.sqrt(np.sum(ry2**2) + np.sum(rz2**2))
                if rnorm2 < rnorm or rnorm2 <= newton_tol:
                    break
                step *= 0.5
            yk, zk, ry, rz, rnorm = y_try, z_try, ry2, rz2, rnorm2
        if rnorm > newton_tol:
            raise SolverError(
                f"Galerkin Newton stalled at step {n}: residual {rnorm:.3e}")
        yc[n], zc[n] = yk, zk

    traj = Trajectory(t, yc @ sys.basis.T, zc @ sys.basis.T, mesh)
    return traj, yc, zc, sys


def l2q_distance(mesh, t, A, B):
    from .stepping import trapezoid_weights

    w = trapezoid_weights(t)
    return float(np.sqrt(np.sum(w * mesh.mass * np.sum((A - B) ** 2, axis=1))))


def wellposedness_suite(lap, model, y0, t, v=None, w=None, orders=(4, 8, 16, 32),
                        mu=None, region_mask=None):
    """Truncation convergence, energy bounds, dual-norm bound, uniqueness probe."""
    from .stepping import energy_audit

    mesh = lap.mesh
    orders = sorted(int(N) for N in orders)
    if orders[-1] > mesh.ndof:
        raise SolverError("largest order exceeds the number of dof")
    if mu is None:
        mu = model.d if hasattr(model, "F0") else model.mu

    solutions = {}
    for N in orders:
        traj, yc, zc, sys = solve_galerkin(lap, model, y0, t, v=v, w=w, order=N)
        solutions[N] = (traj, yc, zc, sys)

    distances = [
        l2q_distance(mesh, t, solutions[a][0].y, solutions[b][0].y)
        for a, b in zip(orders, orders[1:])
    ]

    top = solutions[orders[-1]]
    traj, yc, zc, sys = top
    audit = energy_audit(traj, lap, mu, v=v, w=w, region_mask=region_mask)

    dt = float(t[1] - t[0])
    c_dual = 0.0
    for n in range(1, len(t)):
        dy = (yc[n] - yc[n - 1]) / dt
        lhs = np.sqrt(sys.hminus1_norm_sq(dy))
        rhs_n = np.sqrt(sys.h1_norm_sq(yc[n]))
        if v is not None:
            vn = v[n] if region_mask is None else v[n] * region_mask
            rhs_n += mesh.norm(vn)
        if w is not None:
            wn = w[n] if region_mask is None else w[n] * region_mask
            rhs_n += mesh.norm(wn)
        if rhs_n > 1e-300:
            c_dual = max(c_dual, lhs / rhs_n)

    # uniqueness probe: perturbed Newton starts must land on the same trajectory
    N = orders[-1]
    rng = np.random.default_rng(1234)
    traj3, _, _, _ = solve_galerkin(lap, model, y0, t, v=v, w=w, order=N,
                                    newton_tol=1e-11, start_noise=(0.1, rng))
    uniq = l2q_distance(mesh, t, traj.y, traj3.y)

    return {
        "orders": orders,
        "distances": distances,
        "distances_decreasing": all(b < a for a, b in zip(distances, distances[1:])),
        "energy": audit,
        "c_dual": c_dual,
        "uniqueness_gap": uniq,
    }
