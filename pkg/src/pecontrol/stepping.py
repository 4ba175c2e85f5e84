"""Implicit-Euler solvers for the coupled parabolic-elliptic systems.

One fully implicit block solve per time step couples the parabolic field
y and the elliptic (or eps-relaxed) field z. The backward solver is the
exact transpose of the forward one-step map, so discrete duality holds
to rounding. In 1D the block system is banded (fields interleaved,
kl = ku = 2) and the sweeps run through the selected kernels; otherwise
each step is solved by sparse LU with transpose solves from the same
factorization.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .coefficients import NonlinearSpec

IN_PARABOLIC = "parabolic"
IN_ELLIPTIC = "elliptic"


class SolverError(RuntimeError):
    pass


def time_nodes(T, nt):
    """Uniform time grid with nt steps on [0, T]."""
    if nt < 1 or T <= 0:
        raise ValueError("need T > 0 and nt >= 1")
    return np.linspace(0.0, float(T), int(nt) + 1)


def trapezoid_weights(t):
    w = np.full(len(t), t[1] - t[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass
class Trajectory:
    """Time-indexed pair of fields on the interior grid."""

    t: np.ndarray
    y: np.ndarray          # (nt+1, ndof)
    z: np.ndarray
    mesh: object
    info: dict | None = None

    @property
    def nt(self):
        return len(self.t) - 1

    def y_norms(self):
        return np.sqrt(self.mesh.mass) * np.linalg.norm(self.y, axis=1)

    def z_norms(self):
        return np.sqrt(self.mesh.mass) * np.linalg.norm(self.z, axis=1)

    def z_h1_norms(self, lap):
        return np.array([lap.h1_norm(self.z[n]) for n in range(self.nt + 1)])

    def l2q_norm(self, which="y"):
        """Space-time L2 norm (trapezoid in time) of y, z or their pair."""
        w = trapezoid_weights(self.t)
        total = 0.0
        if which in ("y", "pair"):
            total += float(np.sum(w * self.mesh.mass * np.sum(self.y**2, axis=1)))
        if which in ("z", "pair"):
            total += float(np.sum(w * self.mesh.mass * np.sum(self.z**2, axis=1)))
        return float(np.sqrt(total))


@dataclass
class ControlField:
    """Space-time control supported on the region mask.

    values[n] is the control applied on the step to node n (n = 1..nt);
    row 0 only feeds the elliptic initialization. When the control was
    extracted from an adjoint observation, obs and rho_mid are kept so
    the singular weighted norm can be evaluated without overflow.
    """

    values: np.ndarray     # (nt+1, ndof), zero outside mask
    mask: np.ndarray
    placement: str
    t: np.ndarray
    K: float | None = None
    obs: np.ndarray | None = None       # (nt+1, ndof) observation, control-node indexed
    rho_mid: np.ndarray | None = None   # (nt+1,) weight at step midpoints

    def __post_init__(self):
        if np.any(self.values[:, ~self.mask] != 0.0):
            raise ValueError("control field has support outside the region mask")

    def l2_norm_sq(self, mesh):
        dt = self.t[1] - self.t[0]
        return float(dt * mesh.mass * np.sum(self.values[1:] ** 2))

    def l2_norm(self, mesh):
        return float(np.sqrt(self.l2_norm_sq(mesh)))

    def weighted_norm_sq(self, mesh):
        """Integral of e^{2K/(T-t)} |control|^2, midpoint rule in time."""
        dt = self.t[1] - self.t[0]
        if self.obs is not None and self.rho_mid is not None:
            s = np.sum(self.obs[1:, self.mask] ** 2, axis=1)
            return float(dt * mesh.mass * np.sum(self.rho_mid[1:] * s))
        if self.K is None:
            raise ValueError("weighted norm needs K or a stored observation")
        T = self.t[-1]
        mids = 0.5 * (self.t[:-1] + self.t[1:])
        with np.errstate(over="ignore"):
            growth = np.exp(2.0 * self.K / (T - mids))
        s = np.sum(self.values[1:] ** 2, axis=1)
        return float(dt * mesh.mass * np.sum(growth * s))


def _band_rows(mesh, dt, eps_mass, a, b, c, d):
    """Banded step matrix (gbtrf storage) for the interleaved 1D block system."""
    n = mesh.ndof
    h2 = mesh.spacings[0] ** 2
    n2 = 2 * n
    ab = np.zeros((2 * kernels.KL + kernels.KU + 1, n2))
    off = kernels.KL + kernels.KU
    diag = np.empty(n2)
    diag[0::2] = 1.0 + dt * (2.0 / h2 - a)
    diag[1::2] = eps_mass + dt * (2.0 / h2 - d)
    ab[off, :] = diag
    ab[off - 1, 1::2] = -dt * b          # y-row coupling to z
    ab[off + 1, 0:n2 - 1:2] = -dt * c    # z-row coupling to y
    ab[off - 2, 2:] = -dt / h2           # super-diagonal neighbors
    ab[off + 2, :n2 - 2] = -dt / h2      # sub-diagonal neighbors
    return ab


def _sparse_step_matrix(lap, dt, eps_mass, a, b, c, d):
    """Sparse step matrix in [y; z] block ordering (any dimension)."""
    n = lap.mesh.ndof
    A = lap.matrix
    eye = sp.identity(n, format="csr")
    top = sp.hstack([eye + dt * (A - sp.diags(a)), -dt * sp.diags(b)])
    bot = sp.hstack([-dt * sp.diags(c), eps_mass * eye + dt * (A - sp.diags(d))])
    return sp.vstack([top, bot]).tocsc()


def _coeff_fields(coeffs, n):
    return (coeffs.a.at(n), coeffs.b.at(n), coeffs.c.at(n), coeffs.d.at(n))


class BandSweeper:
    """1D time marcher over pre-factored banded step matrices."""

    def __init__(self, lap, coeffs, t, eps_mass=0.0):
        mesh = lap.mesh
        if mesh.dimension != 1:
            raise SolverError("banded sweeper handles 1D meshes only")
        self.mesh = mesh
        self.t = np.asarray(t, dtype=float)
        self.nt = len(t) - 1
        self.dt = float(t[1] - t[0])
        self.eps_mass = float(eps_mass)
        n2 = 2 * mesh.ndof
        if coeffs.is_time_varying:
            self.step_factor = np.arange(-1, self.nt, dtype=np.int32)
            bands = np.empty((self.nt, ab_rows(), n2))
            for k, n in enumerate(range(1, self.nt + 1)):
                bands[k] = _band_rows(mesh, self.dt, self.eps_mass, *_coeff_fields(coeffs, n))
        else:
            self.step_factor = np.zeros(self.nt + 1, dtype=np.int32)
            bands = np.empty((1, ab_rows(), n2))
            bands[0] = _band_rows(mesh, self.dt, self.eps_mass, *_coeff_fields(coeffs, 1))
        try:
            self.lu, self.ipiv = kernels.factor_bands(bands)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"block step factorization failed: {exc}") from exc

    def _pack_sources(self, sy, sz):
        if sy is None and sz is None:
            return None
        src = np.zeros((self.nt + 1, 2 * self.mesh.ndof))
        if sy is not None:
            src[:, 0::2] = self.dt * sy
        if sz is not None:
            src[:, 1::2] = self.dt * sz
        return src

    def forward(self, y0, z0, sy=None, sz=None):
        n2 = 2 * self.mesh.ndof
        u0 = np.empty(n2)
        u0[0::2] = y0
        u0[1::2] = z0
        out = np.empty((self.nt + 1, n2))
        kernels.sweep_forward(self.lu, self.ipiv, self.step_factor, self.eps_mass,
                              self._pack_sources(sy, sz), u0, out)
        return np.ascontiguousarray(out[:, 0::2]), np.ascontiguousarray(out[:, 1::2])

    def transpose(self, phiT, psiT, sy=None, sz=None):
        n2 = 2 * self.mesh.ndof
        term = np.empty(n2)
        term[0::2] = phiT
        term[1::2] = psiT
        out = np.empty((self.nt + 1, n2))
        kernels.sweep_transpose(self.lu, self.ipiv, self.step_factor, self.eps_mass,
                                self._pack_sources(sy, sz), term, out)
        return np.ascontiguousarray(out[:, 0::2]), np.ascontiguousarray(out[:, 1::2])


def ab_rows():
    return 2 * kernels.KL + kernels.KU + 1


class SparseSweeper:
    """Generic time marcher using sparse LU with transpose solves."""

    def __init__(self, lap, coeffs, t, eps_mass=0.0):
        self.mesh = lap.mesh
        self.t = np.asarray(t, dtype=float)
        self.nt = len(t) - 1
        self.dt = float(t[1] - t[0])
        self.eps_mass = float(eps_mass)
        try:
            if coeffs.is_time_varying:
                self.factors = [
                    spla.splu(_sparse_step_matrix(lap, self.dt, self.eps_mass,
                                                  *_coeff_fields(coeffs, n)))
                    for n in range(1, self.nt + 1)
                ]
                self.step_factor = np.arange(-1, self.nt, dtype=np.int32)
            else:
                self.factors = [
                    spla.splu(_sparse_step_matrix(lap, self.dt, self.eps_mass,
                                                  *_coeff_fields(coeffs, 1)))
                ]
                self.step_factor = np.zeros(self.nt + 1, dtype=np.int32)
        except RuntimeError as exc:
            raise SolverError(f"block step factorization failed: {exc}") from exc

    def forward(self, y0, z0, sy=None, sz=None):
        n = self.mesh.ndof
        Y = np.empty((self.nt + 1, n))
        Z = np.empty((self.nt + 1, n))
        Y[0], Z[0] = y0, z0
        rhs = np.empty(2 * n)
        for k in range(1, self.nt + 1):
            rhs[:n] = Y[k - 1]
            rhs[n:] = self.eps_mass * Z[k - 1]
            if sy is not None:
                rhs[:n] += self.dt * sy[k]
            if sz is not None:
                rhs[n:] += self.dt * sz[k]
            u = self.factors[self.step_factor[k]].solve(rhs)
            Y[k], Z[k] = u[:n], u[n:]
        return Y, Z

    def transpose(self, phiT, psiT, sy=None, sz=None):
        n = self.mesh.ndof
        P = np.empty((self.nt + 1, n))
        Q = np.empty((self.nt + 1, n))
        P[self.nt], Q[self.nt] = phiT, psiT
        rhs = np.empty(2 * n)
        for k in range(self.nt, 0, -1):
            rhs[:n] = P[k]
            rhs[n:] = self.eps_mass * Q[k]
            if sy is not None:
                rhs[:n] += self.dt * sy[k]
            if sz is not None:
                rhs[n:] += self.dt * sz[k]
            u = self.factors[self.step_factor[k]].solve(rhs, trans="T")
            P[k - 1], Q[k - 1] = u[:n], u[n:]
        return P, Q


def make_sweeper(lap, coeffs, t, eps_mass=0.0):
    if lap.mesh.dimension == 1:
        return BandSweeper(lap, coeffs, t, eps_mass)
    return SparseSweeper(lap, coeffs, t, eps_mass)


def _elliptic_solve(lap, d_field, rhs):
    """Solve (A - diag d) z = rhs; requires the spectral gate sup d < mu1."""
    M = (lap.matrix - sp.diags(d_field)).tocsc()
    try:
        return spla.spsolve(M, rhs)
    except RuntimeError as exc:
        raise SolverError(f"elliptic row solve failed: {exc}") from exc


def solve_forward_linear(lap, coeffs, y0, t, v=None, w=None, source_y=None,
                         source_z=None, eps_mass=0.0, z0=None, sweeper=None,
                         init_z=True):
    """March the linear coupled system forward.

    v, w, source_y, source_z are optional (nt+1, ndof) arrays; controls
    must already be masked to the region. For eps_mass == 0 the z field
    is slaved and z0 is obtained from the elliptic row; for eps_mass > 0
    z0 is initial data (defaults to zero).
    """
    mesh = lap.mesh
    coeffs.check_spectral_gate(lap)
    if sweeper is None:
        sweeper = make_sweeper(lap, coeffs, t, eps_mass)
    sy = _sum_sources(v, source_y)
    sz = _sum_sources(w, source_z)
    y0 = np.asarray(y0, dtype=float)
    if eps_mass == 0.0:
        if init_z:
            rhs = coeffs.c.at(0) * y0
            if sz is not None:
                rhs = rhs + sz[0]
            z0 = _elliptic_solve(lap, coeffs.d.at(0), rhs)
        else:
            z0 = np.zeros(mesh.ndof)
    else:
        z0 = np.zeros(mesh.ndof) if z0 is None else np.asarray(z0, dtype=float)
    Y, Z = sweeper.forward(y0, z0, sy, sz)
    return Trajectory(np.asarray(t, dtype=float), Y, Z, mesh)


def _sum_sources(*parts):
    total = None
    for p in parts:
        if p is None:
            continue
        total = p if total is None else total + p
    return total


def solve_adjoint_linear(lap, coeffs, phiT, t, psiT=None, source_y=None,
                         source_z=None, eps_mass=0.0, sweeper=None):
    """March the adjoint (transpose) system backward from terminal data.

    Returns a Trajectory (phi, psi). Row n holds the adjoint pair paired
    in the duality identity with the control at node n+1; row 0 is the
    duality-exact value tested against the initial state. Row nt holds
    the terminal datum (for eps_mass == 0, psi at nt solves its elliptic
    row against phiT).
    """
    mesh = lap.mesh
    coeffs.check_spectral_gate(lap)
    if sweeper is None:
        sweeper = make_sweeper(lap, coeffs, t, eps_mass)
    phiT = np.asarray(phiT, dtype=float)
    psiT = np.zeros(mesh.ndof) if psiT is None else np.asarray(psiT, dtype=float)
    P, Q = sweeper.transpose(phiT, psiT, source_y, source_z)
    if eps_mass == 0.0:
        nt = len(t) - 1
        Q[nt] = _elliptic_solve(lap, coeffs.d.at(nt), coeffs.b.at(nt) * phiT)
    return Trajectory(np.asarray(t, dtype=float), P, Q, mesh)


@dataclass
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 25
    max_damping: int = 8


def solve_forward_semilinear(lap, nonlin: NonlinearSpec, y0, t, v=None, w=None,
                             eps_mass=0.0, z0=None, newton: NewtonOptions = None):
    """March the semilinear system with a damped Newton solve per step."""
    mesh = lap.mesh
    newton = newton or NewtonOptions()
    if not nonlin.d < lap.mu1:
        raise SolverError(f"spectral condition violated: d = {nonlin.d} >= mu1 = {lap.mu1}")
    t = np.asarray(t, dtype=float)
    nt = len(t) - 1
    dt = float(t[1] - t[0])
    n = mesh.ndof
    A = lap.matrix
    scale = np.sqrt(mesh.mass)
    banded = mesh.dimension == 1

    Y = np.empty((nt + 1, n))
    Z = np.empty((nt + 1, n))
    Y[0] = np.asarray(y0, dtype=float)
    if eps_mass == 0.0:
        rhs = nonlin.f0(Y[0])
        if w is not None:
            rhs = rhs + w[0]
        Z[0] = _elliptic_solve(lap, np.full(n, nonlin.d), rhs)
    else:
        Z[0] = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float)

    b_arr = np.full(n, nonlin.b)
    d_arr = np.full(n, nonlin.d)
    max_newton = 0

    def residual(yk, zk, yp, zp, sy, sz):
        ry = yk - yp + dt * (A @ yk - nonlin.F0(yk) - nonlin.b * zk - sy)
        rz = eps_mass * (zk - zp) + dt * (A @ zk - nonlin.f0(yk) - nonlin.d * zk - sz)
        return ry, rz

    for k in range(1, nt + 1):
        sy = v[k] if v is not None else np.zeros(n)
        sz = w[k] if w is not None else np.zeros(n)
        yk, zk = Y[k - 1].copy(), Z[k - 1].copy()
        ry, rz = residual(yk, zk, Y[k - 1], Z[k - 1], sy, sz)
        rnorm = scale * np.sqrt(np.sum(ry**2) + np.sum(rz**2))
        converged = rnorm <= newton.tol
        iters = 0
        for _ in range(newton.max_iter):
            if converged:
                break
            iters += 1
            if banded:
                ab = _band_rows(mesh, dt, eps_mass, nonlin.dF0(yk), b_arr,
                                nonlin.df0(yk), d_arr)
                lu, piv = kernels.factor_bands(ab[None, :, :])
                packed = np.empty(2 * n)
                packed[0::2], packed[1::2] = ry, rz
                delta = _gbtrs_single(lu[0], piv[0], packed)
                dy, dz = delta[0::2], delta[1::2]
            else:
                J = _sparse_step_matrix(lap, dt, eps_mass, nonlin.dF0(yk), b_arr,
                                        nonlin.df0(yk), d_arr)
                delta = spla.splu(J).solve(np.concatenate([ry, rz]))
                dy, dz = delta[:n], delta[n:]
            step = 1.0
            for _ in range(newton.max_damping + 1):
                y_try = yk - step * dy
                z_try = zk - step * dz
                ry2, rz2 = residual(y_try, z_try, Y[k - 1], Z[k - 1], sy, sz)
                rnorm2 = scale * np.sqrt(np.sum(ry2**2) + np.sum(rz2**2))
                if rnorm2 < rnorm or rnorm2 <= newton.tol:
                    break
                step *= 0.5
            yk, zk, ry, rz, rnorm = y_try, z_try, ry2, rz2, rnorm2
            converged = rnorm <= newton.tol
        if not converged:
            raise SolverError(
                f"Newton stalled at step {k}: residual {rnorm:.3e} > tol {newton.tol:.1e}"
            )
        max_newton = max(max_newton, iters)
        Y[k], Z[k] = yk, zk
    return Trajectory(t, Y, Z, mesh, info={"max_newton_iters": max_newton})


def _gbtrs_single(lu, piv, rhs):
    from scipy.linalg import lapack

    x, info = lapack.dgbtrs(lu, kernels.KL, kernels.KU, rhs.reshape(-1, 1), piv, trans=0)
    if info != 0:
        raise SolverError(f"Newton linear solve failed (info={info})")
    return x[:, 0]


def energy_audit(traj: Trajectory, lap, mu, v=None, w=None, region_mask=None,
                 delta=None):
    """Evaluate the discrete energy inequality and the per-node z bound.

    Returns the smallest admissible constants and any node where the
    left side is positive while the right side vanishes.
    """
    mesh = traj.mesh
    mu1 = lap.mu1
    if delta is None:
        delta = 0.1 * (mu1 - mu)
    gamma = 1.0 - (mu + delta) / mu1
    t = traj.t
    dt = float(t[1] - t[0])
    nt = traj.nt

    ynorm2 = mesh.mass * np.sum(traj.y**2, axis=1)
    yh1 = np.array([lap.h1_norm(traj.y[k]) ** 2 for k in range(nt + 1)])
    zh1 = np.array([lap.h1_norm(traj.z[k]) ** 2 for k in range(nt + 1)])

    def masked_sq(ctrl, k):
        if ctrl is None:
            return 0.0
        row = ctrl[k] if region_mask is None else ctrl[k][region_mask]
        return mesh.mass * float(np.sum(row**2))

    ctrl_step = np.array([dt * (masked_sq(v, k) + masked_sq(w, k)) for k in range(nt + 1)])
    c_energy = 0.0
    violations = []
    lhs_c = 0.0
    rhs_c = 0.0
    for m in range(1, nt + 1):
        lhs_c += dt * (yh1[m] + gamma * zh1[m])
        rhs_c += ctrl_step[m] + dt * ynorm2[m]
        lhs = 0.5 * ynorm2[m] + lhs_c - 0.5 * ynorm2[0]
        if rhs_c > 1e-300:
            c_energy = max(c_energy, lhs / rhs_c)
        elif lhs > 1e-12 * max(1.0, ynorm2[0]):
            violations.append(m)

    c_zbound = 0.0
    for m in range(nt + 1):
        lhs = gamma * np.sqrt(zh1[m])
        wn = np.sqrt(masked_sq(w, m))
        rhs = np.sqrt(ynorm2[m]) + wn
        if rhs > 1e-300:
            c_zbound = max(c_zbound, lhs / rhs)
        elif lhs > 1e-14:
            violations.append(m)

    return {
        "delta": delta,
        "gamma": gamma,
        "c_energy": c_energy,
        "c_zbound": c_zbound,
        "violations": violations,
    }
