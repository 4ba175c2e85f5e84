"""Carleman-type weight construction and weighted-inequality probes.

The spatial profile alpha0 is a normalized product of per-axis power
profiles x^p (L-x)^q, positive inside, zero on the boundary, with its
only interior critical point inside the inner control box. From it the
usual family of singular-in-time weights is built, together with the
bounded control weight rho(t) = exp(-2K/(T-t)).

The weighted space-time integrals underflow double precision for
realistic parameter choices, so every integral is accumulated with its
exponent factored out and reported in log form alongside the (possibly
underflowed) plain value.
"""

import math
from dataclasses import dataclass

import numpy as np

from .stepping import Trajectory


class WeightError(ValueError):
    pass


def power_profile(x, L, p, q):
    """x^p (L-x)^q on (0, L), vanishing at both ends."""
    return x**p * (L - x) ** q


def exponents_for_peak(x0, L=1.0, q=2.0):
    """Per-axis (p, q) placing the profile's critical point at x0."""
    if not 0 < x0 < L:
        raise WeightError(f"peak {x0} outside (0, {L})")
    return (q * x0 / (L - x0), q)


def build_alpha0(mesh, region, shape_exponents=None):
    """Spatial weight profile, normalized to unit discrete sup norm.

    shape_exponents: per-axis (p, q) pairs; defaults put the critical
    point at the center of the inner box. The critical point
    p L/(p+q) must fall inside the inner box on every axis.
    """
    if shape_exponents is None:
        shape_exponents = tuple(
            exponents_for_peak(0.5 * (lo + hi), mesh.extents[a])
            for a, (lo, hi) in enumerate(region.omega0_bounds)
        )
    shape_exponents = tuple(tuple(map(float, pq)) for pq in np.atleast_2d(shape_exponents))
    if len(shape_exponents) != mesh.dimension:
        raise WeightError("need one (p, q) exponent pair per axis")
    pts = mesh.coords()
    field = np.ones(mesh.ndof)
    for a, (p, q) in enumerate(shape_exponents):
        if p <= 0 or q <= 0:
            raise WeightError("profile exponents must be positive")
        L = mesh.extents[a]
        crit = p * L / (p + q)
        lo, hi = region.omega0_bounds[a]
        if not (lo < crit < hi):
            raise WeightError(
                f"critical point {crit:.4f} falls outside the inner box ({lo}, {hi}) on axis {a}"
            )
        field = field * power_profile(pts[:, a], L, p, q)
    m = float(field.max())
    if m <= 0:
        raise WeightError("profile vanished on the grid")
    return field / m


def gradient_magnitude(mesh, field):
    """Central-difference gradient magnitude with Dirichlet zero padding."""
    shaped = field.reshape(mesh.counts)
    total = np.zeros_like(shaped)
    for a in range(mesh.dimension):
        h = mesh.spacings[a]
        padded = np.concatenate(
            [np.zeros_like(np.take(shaped, [0], axis=a)), shaped,
             np.zeros_like(np.take(shaped, [0], axis=a))], axis=a)
        upper = np.take(padded, range(2, padded.shape[a]), axis=a)
        lower = np.take(padded, range(0, padded.shape[a] - 2), axis=a)
        total += ((upper - lower) / (2 * h)) ** 2
    return np.sqrt(total).ravel()


@dataclass(frozen=True)
class WeightParams:
    """Parameters generating the weight family on a fixed mesh."""

    alpha0: np.ndarray
    k: float
    lam: float
    sigma: float
    s: float
    K: float
    T: float

    @property
    def alpha0_sup(self):
        return float(np.max(self.alpha0))

    def __post_init__(self):
        if np.any(self.alpha0 <= 0):
            raise WeightError("alpha0 must be strictly positive on interior nodes")
        if not self.k > self.alpha0_sup + math.log(2.0):
            raise WeightError(
                f"k = {self.k} violates k > sup alpha0 + log 2 = "
                f"{self.alpha0_sup + math.log(2.0):.6f}"
            )
        if self.lam < 0 or self.sigma <= 0 or self.K <= 0 or self.T <= 0:
            raise WeightError("need lam >= 0, sigma > 0, K > 0, T > 0")
        if self.s < self.sigma * (self.T + self.T**2) - 1e-12:
            raise WeightError("s must be at least sigma (T + T^2)")


def make_weight_params(mesh, region, T, lam=2.0, sigma=1.0, K=1.0, k_margin=0.1,
                       shape_exponents=None, s=None):
    alpha0 = build_alpha0(mesh, region, shape_exponents)
    grad = gradient_magnitude(mesh, alpha0)
    if np.min(grad[~region.inner_mask]) <= 1e-10:
        raise WeightError("alpha0 gradient vanishes outside the inner box")
    k = float(np.max(alpha0)) + math.log(2.0) + float(k_margin)
    if s is None:
        s = float(sigma) * (T + T**2)
    return WeightParams(alpha0, k, float(lam), float(sigma), float(s), float(K), float(T))


def control_weight(params, t):
    """rho(t) = exp(-2K/(T-t)); 0 at t = T, exp(-2K/T) at t = 0."""
    t = np.asarray(t, dtype=float)
    gap = params.T - t
    out = np.zeros_like(gap)
    pos = gap > 0
    out[pos] = np.exp(-2.0 * params.K / gap[pos])
    return out


def control_weight_midpoints(params, t):
    """rho at step midpoints, indexed by the control node (entry 0 unused)."""
    t = np.asarray(t, dtype=float)
    mids = 0.5 * (t[:-1] + t[1:])
    out = np.zeros(len(t))
    out[1:] = control_weight(params, mids)
    return out


@dataclass(frozen=True)
class WeightFields:
    """Weight family evaluated on interior time nodes of a grid."""

    t: np.ndarray            # interior time nodes only
    beta: np.ndarray         # t (T - t)
    phi: np.ndarray          # (len(t), ndof)
    alpha: np.ndarray        # (len(t), ndof)
    alpha_hat: np.ndarray    # per-time min of alpha
    alpha_star: np.ndarray   # per-time max of alpha
    phi_hat: np.ndarray
    phi_star: np.ndarray
    rho: np.ndarray          # control weight on the same nodes
    alpha_bar: np.ndarray    # spatial factor e^{k lam} - e^{lam alpha0}


def build_weight_fields(params, mesh, t_interior):
    """Evaluate beta, phi, alpha and their per-time extrema.

    t_interior must avoid the endpoints 0 and T exactly (the fields
    blow up there).
    """
    t = np.asarray(t_interior, dtype=float)
    if np.any(t <= 0.0) or np.any(t >= params.T):
        raise WeightError("weight fields require time nodes strictly inside (0, T)")
    beta = t * (params.T - t)
    e_spatial = np.exp(params.lam * params.alpha0)
    alpha_bar = np.exp(params.k * params.lam) - e_spatial
    phi = e_spatial[None, :] / beta[:, None]
    alpha = alpha_bar[None, :] / beta[:, None]
    return WeightFields(
        t=t, beta=beta, phi=phi, alpha=alpha,
        alpha_hat=alpha.min(axis=1), alpha_star=alpha.max(axis=1),
        phi_hat=phi.min(axis=1), phi_star=phi.max(axis=1),
        rho=control_weight(params, t), alpha_bar=alpha_bar,
    )


def _logsumexp_weighted(log_w, vals):
    """log of sum(exp(log_w) * vals) with vals >= 0; -inf when the sum is 0."""
    mask = vals > 0
    if not np.any(mask):
        return -np.inf
    lw = log_w[mask] + np.log(vals[mask])
    m = np.max(lw)
    return float(m + np.log(np.sum(np.exp(lw - m))))


@dataclass
class CarlemanReport:
    """Both sides of a weighted adjoint inequality, in log scale."""

    log_lhs_parabolic: float   # functional of the parabolic adjoint component
    log_lhs_elliptic: float    # functional of the elliptic adjoint component
    log_rhs: float             # localized observation side
    variant: str

    @property
    def log_lhs(self):
        parts = [p for p in (self.log_lhs_parabolic, self.log_lhs_elliptic) if p > -np.inf]
        if not parts:
            return -np.inf
        m = max(parts)
        return m + math.log(sum(math.exp(p - m) for p in parts))

    @property
    def lhs(self):
        return math.exp(self.log_lhs) if self.log_lhs > -np.inf else 0.0

    @property
    def rhs(self):
        return math.exp(self.log_rhs) if self.log_rhs > -np.inf else 0.0

    @property
    def log_quotient(self):
        if self.log_rhs == -np.inf:
            return math.nan
        if self.log_lhs == -np.inf:
            return -np.inf
        return self.log_lhs - self.log_rhs

    @property
    def quotient(self):
        lq = self.log_quotient
        if math.isnan(lq):
            return math.nan
        return math.exp(lq) if lq > -np.inf else 0.0

    @property
    def quotient_defined(self):
        return self.log_rhs > -np.inf


def _time_derivative(field, dt):
    """Centered time derivative at interior nodes of a full-grid field."""
    return (field[2:] - field[:-2]) / (2.0 * dt)


def eval_carleman_functionals(params, lap, traj: Trajectory, region, variant):
    """Evaluate the weighted adjoint functionals and the observation side.

    traj is an adjoint trajectory (phi, psi) on the full time grid;
    variant 'phi_observation' localizes |phi|^2 with the shifted-extrema
    weight, 'psi_observation' localizes |psi|^2 with the plain weight.
    """
    if variant not in ("phi_observation", "psi_observation"):
        raise WeightError(f"unknown variant {variant!r}")
    mesh = traj.mesh
    t_full = traj.t
    dt = float(t_full[1] - t_full[0])
    wf = build_weight_fields(params, mesh, t_full[1:-1])
    s, lam = params.s, params.lam

    phi_a = traj.y[1:-1]
    psi_a = traj.z[1:-1]
    dphi_dt = _time_derivative(traj.y, dt)
    lap_phi = phi_a @ lap.matrix.T
    lap_psi = psi_a @ lap.matrix.T
    grad2_phi = np.array([gradient_magnitude(mesh, row) ** 2 for row in phi_a])
    grad2_psi = np.array([gradient_magnitude(mesh, row) ** 2 for row in psi_a])

    sphi = s * wf.phi
    log_w = -2.0 * s * wf.alpha + np.log(dt * mesh.mass)

    def functional(dt_term, lap_term, grad2, sq):
        vals = (lap_term**2) / sphi + lam**2 * sphi * grad2 + lam**4 * sphi**3 * sq
        if dt_term is not None:
            vals = vals + (dt_term**2) / sphi
        return _logsumexp_weighted(log_w.ravel(), vals.ravel())

    log_para = functional(dphi_dt, lap_phi, grad2_phi, phi_a**2)
    log_elli = functional(None, lap_psi, grad2_psi, psi_a**2)

    mask = region.mask
    if variant == "phi_observation":
        log_w_rhs = (-4.0 * s * wf.alpha_hat + 2.0 * s * wf.alpha_star
                     + np.log(dt * mesh.mass))
        weight_poly = lam**8 * (s * wf.phi_star) ** 7
        obs = np.sum(phi_a[:, mask] ** 2, axis=1)
        log_rhs = _logsumexp_weighted(log_w_rhs, weight_poly * obs)
    else:
        vals = lam**8 * sphi[:, mask] ** 7 * psi_a[:, mask] ** 2
        log_rhs = _logsumexp_weighted(log_w[:, mask].ravel(), vals.ravel())

    return CarlemanReport(log_para, log_elli, log_rhs, variant)


def weighted_observation_energy(mesh, t, rho_mid, obs_rows, mask):
    """Sum over control nodes of dt * rho_mid * |obs|^2 restricted to the mask.

    obs_rows[n-1] is the adjoint row paired with control node n.
    """
    dt = float(t[1] - t[0])
    nt = len(t) - 1
    s = np.sum(obs_rows[0:nt, :][:, mask] ** 2, axis=1)
    return float(dt * mesh.mass * np.sum(rho_mid[1:] * s))


def estimate_observability_quotient(adjoint_solver, mesh, region, params, t,
                                    variant, sample_count, seed=0,
                                    tiny=1e-300):
    """Monte-Carlo estimate of the observability quotient.

    adjoint_solver(phiT) must return an adjoint Trajectory. The quotient
    compares initial adjoint energy against the rho-weighted observation
    on the control region; samples with denominator below tiny are
    discarded and counted.
    """
    if variant not in ("phi_observation", "psi_observation"):
        raise WeightError(f"unknown variant {variant!r}")
    if sample_count < 1:
        raise WeightError("need at least one sample")
    rho_mid = control_weight_midpoints(params, t)
    samples = []
    discarded = 0
    for i in range(sample_count):
        rng = np.random.default_rng([seed, i])
        phiT = rng.standard_normal(mesh.ndof)
        traj = adjoint_solver(phiT)
        if variant == "phi_observation":
            num = mesh.norm(traj.y[0]) ** 2 + mesh.norm(traj.z[0]) ** 2
            obs = traj.y
        else:
            num = mesh.norm(traj.y[0]) ** 2 + mesh.norm(traj.z[1]) ** 2
            obs = traj.z
        den = weighted_observation_energy(mesh, t, rho_mid, obs, region.mask)
        if den < tiny:
            discarded += 1
            continue
        samples.append({"sample": i, "quotient": num / den, "denominator": den})
    quotients = [s["quotient"] for s in samples]
    stats = {
        "count": len(quotients),
        "discarded": discarded,
        "max": max(quotients) if quotients else math.nan,
        "min": min(quotients) if quotients else math.nan,
        "mean": float(np.mean(quotients)) if quotients else math.nan,
    }
    return stats, samples
