"""Coefficient sets for the linearized systems and the nonlinearity registry."""

from dataclasses import dataclass

import numpy as np

HYP_C_CONST = "HYP_C_CONST"   # c constant nonzero; b, d space-only
HYP_B_CONST = "HYP_B_CONST"   # b constant nonzero
GENERAL = "GENERAL"

_TAGS = (HYP_C_CONST, HYP_B_CONST, GENERAL)


class CoefficientError(ValueError):
    pass


class Coefficient:
    """Scalar, space-only or space-time coefficient on the interior grid."""

    def __init__(self, value, ndof, nt):
        self.ndof = ndof
        self.nt = nt
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            self.kind = "scalar"
        elif arr.shape == (ndof,):
            self.kind = "space"
        elif arr.shape == (nt + 1, ndof):
            self.kind = "spacetime"
        else:
            raise CoefficientError(
                f"coefficient shape {arr.shape} matches neither ({ndof},) nor ({nt + 1}, {ndof})"
            )
        self.data = arr

    @property
    def is_time_varying(self):
        return self.kind == "spacetime"

    @property
    def is_scalar(self):
        return self.kind == "scalar"

    @property
    def scalar(self):
        if not self.is_scalar:
            raise CoefficientError("coefficient is not a scalar")
        return float(self.data)

    @property
    def sup(self):
        return float(np.max(self.data))

    @property
    def sup_abs(self):
        return float(np.max(np.abs(self.data)))

    def at(self, n):
        """Coefficient field at time node n as an (ndof,) array."""
        if self.kind == "scalar":
            return np.full(self.ndof, float(self.data))
        if self.kind == "space":
            return self.data
        return self.data[n]


@dataclass
class CoefficientSet:
    """Coefficients a, b, c, d of a linear coupled system plus its hypothesis tag."""

    a: Coefficient
    b: Coefficient
    c: Coefficient
    d: Coefficient
    tag: str = GENERAL
    mu: float | None = None   # bound on sup d; defaults to sup d

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise CoefficientError(f"unknown hypothesis tag {self.tag!r}")
        if self.mu is None:
            self.mu = self.d.sup
        if self.tag == HYP_C_CONST:
            if not (self.c.is_scalar and self.c.scalar != 0.0):
                raise CoefficientError("tag HYP_C_CONST needs a nonzero constant c")
            if self.b.is_time_varying or self.d.is_time_varying:
                raise CoefficientError("tag HYP_C_CONST needs b, d without time variation")
        if self.tag == HYP_B_CONST:
            if not (self.b.is_scalar and self.b.scalar != 0.0):
                raise CoefficientError("tag HYP_B_CONST needs a nonzero constant b")
        if self.d.sup > self.mu + 1e-15:
            raise CoefficientError(f"sup d = {self.d.sup} exceeds declared mu = {self.mu}")

    @property
    def is_time_varying(self):
        return any(c.is_time_varying for c in (self.a, self.b, self.c, self.d))

    def check_spectral_gate(self, laplacian):
        if not self.mu < laplacian.mu1:
            raise CoefficientError(
                f"spectral condition violated: mu = {self.mu} >= mu1 = {laplacian.mu1}"
            )


def make_coefficients(ndof, nt, a=0.0, b=0.0, c=0.0, d=0.0, tag=GENERAL, mu=None):
    """Convenience constructor accepting scalars or arrays for each coefficient."""
    return CoefficientSet(
        Coefficient(a, ndof, nt), Coefficient(b, ndof, nt),
        Coefficient(c, ndof, nt), Coefficient(d, ndof, nt),
        tag=tag, mu=mu,
    )


@dataclass(frozen=True)
class NonlinearSpec:
    """Separated nonlinearities F(y,z) = F0(y) + b z and f(y,z) = f0(y) + d z."""

    F0: callable
    dF0: callable
    lip_F: float
    f0: callable
    df0: callable
    lip_f: float
    b: float
    d: float

    def validate(self, sample_count=200, seed=0):
        if abs(self.F0(0.0)) > 1e-14 or abs(self.f0(0.0)) > 1e-14:
            raise CoefficientError("nonlinearities must vanish at 0")
        rng = np.random.default_rng(seed)
        s1 = rng.normal(scale=3.0, size=sample_count)
        s2 = rng.normal(scale=3.0, size=sample_count)
        gap = np.abs(s1 - s2) + 1e-300
        if np.any(np.abs(self.F0(s1) - self.F0(s2)) > self.lip_F * gap * (1 + 1e-9)):
            raise CoefficientError("F0 violates its declared Lipschitz constant")
        if np.any(np.abs(self.f0(s1) - self.f0(s2)) > self.lip_f * gap * (1 + 1e-9)):
            raise CoefficientError("f0 violates its declared Lipschitz constant")
        return True


def _named_scalar_fn(name, amp):
    amp = float(amp)
    if name == "zero":
        return (lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                lambda s: np.zeros_like(np.asarray(s, dtype=float)), 0.0)
    if name == "sin":
        return (lambda s: amp * np.sin(s), lambda s: amp * np.cos(s), abs(amp))
    if name == "arctan":
        return (lambda s: amp * np.arctan(s),
                lambda s: amp / (1.0 + np.asarray(s, dtype=float) ** 2), abs(amp))
    if name == "tanh":
        return (lambda s: amp * np.tanh(s),
                lambda s: amp / np.cosh(np.asarray(s, dtype=float)) ** 2, abs(amp))
    if name == "linear":
        return (lambda s: amp * np.asarray(s, dtype=float),
                lambda s: np.full_like(np.asarray(s, dtype=float), amp), abs(amp))
    raise CoefficientError(f"unknown nonlinearity {name!r}")


def make_nonlinear_spec(F0="zero", f0="zero", b=0.0, d=0.0, F0_scale=1.0, f0_scale=1.0):
    """Build a NonlinearSpec from registry names (zero, sin, arctan, tanh, linear)."""
    F, dF, LF = _named_scalar_fn(F0, F0_scale)
    f, df, Lf = _named_scalar_fn(f0, f0_scale)
    spec = NonlinearSpec(F, dF, LF, f, df, Lf, float(b), float(d))
    spec.validate()
    return spec


def random_smooth_field(mesh, t, seed, amplitude=1.0, modes=3):
    """Smooth random space-time field built from a few low Fourier modes.

    Returns an (nt+1, ndof) array; deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    pts = mesh.coords()
    nt = len(t) - 1
    T = t[-1] if t[-1] > 0 else 1.0
    out = np.zeros((nt + 1, mesh.ndof))
    for _ in range(modes):
        coef = rng.normal()
        om = rng.integers(0, 3)
        phase = rng.uniform(0, 2 * np.pi)
        spatial = np.ones(mesh.ndof)
        for a in range(mesh.dimension):
            k = rng.integers(1, 4)
            spatial = spatial * np.sin(np.pi * k * pts[:, a] / mesh.extents[a])
        temporal = np.cos(om * np.pi * t / T + phase)
        out += coef * temporal[:, None] * spatial[None, :]
    scale = np.max(np.abs(out))
    if scale > 0:
        out *= amplitude / scale
    return out
