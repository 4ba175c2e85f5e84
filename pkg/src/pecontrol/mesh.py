"""Uniform Dirichlet grids, discrete Laplacians and control-region masks.

Boundary nodes are eliminated: all fields live on interior nodes only,
state vectors are flat with the last axis fastest. The L2 inner product
carries the mass weight h^dim so norms are consistent across refinement.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class MeshError(ValueError):
    pass


class EigensolverError(RuntimeError):
    """Eigensolver did not converge; carries the last residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SpatialMesh:
    """Uniform grid on a rectangle with Dirichlet boundary eliminated."""

    dimension: int
    extents: tuple
    counts: tuple          # interior points per axis
    spacings: tuple        # h per axis

    @property
    def ndof(self):
        n = 1
        for c in self.counts:
            n *= c
        return n

    @property
    def mass(self):
        """Weight of one node in the discrete L2 inner product."""
        m = 1.0
        for h in self.spacings:
            m *= h
        return m

    def axis_coords(self, axis):
        """Interior node coordinates along one axis."""
        h = self.spacings[axis]
        return h * np.arange(1, self.counts[axis] + 1)

    def coords(self):
        """(ndof, dimension) array of interior node coordinates."""
        axes = [self.axis_coords(a) for a in range(self.dimension)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def inner(self, u, w):
        return self.mass * float(np.dot(u, w))

    def norm(self, u):
        return float(np.sqrt(self.mass) * np.linalg.norm(u))


def build_mesh(dimension, extents, interior_counts):
    """Build a 1D or 2D uniform mesh; h = extent/(count+1) per axis."""
    if dimension not in (1, 2):
        raise MeshError(f"dimension must be 1 or 2, got {dimension}")
    extents = tuple(float(e) for e in np.atleast_1d(extents))
    counts = tuple(int(c) for c in np.atleast_1d(interior_counts))
    if len(extents) != dimension or len(counts) != dimension:
        raise MeshError(
            f"need {dimension} extents and counts, got {len(extents)}/{len(counts)}"
        )
    if any(e <= 0 for e in extents):
        raise MeshError(f"extents must be positive, got {extents}")
    if any(c < 3 for c in counts):
        raise MeshError(f"interior counts must be >= 3, got {counts}")
    spacings = tuple(e / (c + 1) for e, c in zip(extents, counts))
    return SpatialMesh(dimension, extents, counts, spacings)


def _laplacian_matrix(mesh):
    """Sparse 3-point / 5-point negative Laplacian (SPD)."""
    blocks = []
    for a in range(mesh.dimension):
        n, h = mesh.counts[a], mesh.spacings[a]
        main = np.full(n, 2.0 / h**2)
        off = np.full(n - 1, -1.0 / h**2)
        blocks.append(sp.diags([off, main, off], [-1, 0, 1], format="csr"))
    if mesh.dimension == 1:
        return blocks[0].tocsr()
    ix = sp.identity(mesh.counts[0], format="csr")
    iy = sp.identity(mesh.counts[1], format="csr")
    return (sp.kron(blocks[0], iy) + sp.kron(ix, blocks[1])).tocsr()


@dataclass(frozen=True)
class DiscreteLaplacian:
    """Discrete Dirichlet Laplacian with its first eigenpair."""

    mesh: SpatialMesh
    matrix: sp.csr_matrix
    mu1: float
    first_eigenvector: np.ndarray     # unit discrete-L2 norm, positive
    _full_basis: dict = field(default_factory=dict, repr=False)

    def apply(self, u):
        return self.matrix @ u

    def h1_norm(self, u):
        """Discrete H1_0 seminorm sqrt(<Au, u>)."""
        q = float(u @ (self.matrix @ u))
        return float(np.sqrt(self.mesh.mass * max(q, 0.0)))

    def eigenbasis(self):
        """Full symmetric eigendecomposition, computed once on demand.

        Returns (eigenvalues ascending, columns orthonormal in the
        discrete L2 inner product).
        """
        if "pairs" not in self._full_basis:
            dense = self.matrix.toarray()
            vals, vecs = np.linalg.eigh(dense)
            vecs = vecs / np.sqrt(self.mesh.mass)
            # sign convention: first nonzero component positive
            for j in range(vecs.shape[1]):
                k = np.argmax(np.abs(vecs[:, j]))
                if vecs[k, j] < 0:
                    vecs[:, j] = -vecs[:, j]
            self._full_basis["pairs"] = (vals, vecs)
        return self._full_basis["pairs"]


def _inverse_power_first_pair(A, max_iter=200, rtol=1e-13):
    """First eigenpair by inverse power iteration with a prefactored LU."""
    n = A.shape[0]
    lu = spla.splu(A.tocsc())
    v = np.ones(n)
    v /= np.linalg.norm(v)
    mu = float(v @ (A @ v))
    for _ in range(max_iter):
        v = lu.solve(v)
        v /= np.linalg.norm(v)
        mu = float(v @ (A @ v))
        resid = np.linalg.norm(A @ v - mu * v)
        if resid <= rtol * mu:
            return mu, v, resid
    return mu, v, resid


def assemble_laplacian(mesh):
    """Assemble the stencil operator and compute its first eigenpair."""
    A = _laplacian_matrix(mesh)
    mu1, e1, _ = _inverse_power_first_pair(A)
    if e1.sum() < 0:
        e1 = -e1
    e1 = e1 / (np.sqrt(mesh.mass) * np.linalg.norm(e1))
    resid = np.linalg.norm(A @ e1 - mu1 * e1)
    if resid > 1e-10 * mu1:
        raise EigensolverError(
            f"first eigenpair residual {resid:.3e} exceeds tolerance", residual=resid
        )
    return DiscreteLaplacian(mesh, A, mu1, e1)


@dataclass(frozen=True)
class ControlRegion:
    """Open control sub-box and a strictly nested inner sub-box."""

    omega_bounds: tuple    # per-axis (lo, hi)
    omega0_bounds: tuple
    mask: np.ndarray       # boolean over interior nodes, control region
    inner_mask: np.ndarray

    @property
    def count(self):
        return int(self.mask.sum())

    @property
    def inner_count(self):
        return int(self.inner_mask.sum())


def _box_mask(mesh, bounds):
    pts = mesh.coords()
    m = np.ones(mesh.ndof, dtype=bool)
    for a, (lo, hi) in enumerate(bounds):
        m &= (pts[:, a] > lo) & (pts[:, a] < hi)
    return m


def build_control_region(mesh, omega_bounds, omega0_bounds, margin_cells=1):
    """Build masks for omega and the nested omega0.

    Nesting must hold with a margin of margin_cells grid cells on every
    side, and omega must stay strictly inside the domain by the same
    margin.
    """
    omega_bounds = tuple((float(lo), float(hi)) for lo, hi in np.atleast_2d(omega_bounds))
    omega0_bounds = tuple((float(lo), float(hi)) for lo, hi in np.atleast_2d(omega0_bounds))
    if len(omega_bounds) != mesh.dimension or len(omega0_bounds) != mesh.dimension:
        raise MeshError("region bounds must match the mesh dimension")
    for a in range(mesh.dimension):
        h = mesh.spacings[a]
        gap = margin_cells * h
        (olo, ohi) = omega_bounds[a]
        (ilo, ihi) = omega0_bounds[a]
        if not (olo < ohi and ilo < ihi):
            raise MeshError(f"degenerate interval on axis {a}")
        if olo < gap - 1e-12 or ohi > mesh.extents[a] - gap + 1e-12:
            raise MeshError(
                f"control region must be strictly interior by {margin_cells} cell(s) on axis {a}"
            )
        if ilo < olo + gap - 1e-12 or ihi > ohi - gap + 1e-12:
            raise MeshError(
                f"inner region not nested with a {margin_cells}-cell margin on axis {a}"
            )
    mask = _box_mask(mesh, omega_bounds)
    inner = _box_mask(mesh, omega0_bounds)
    if not mask.any() or not inner.any():
        raise MeshError("control-region mask is empty on this mesh")
    if not np.all(mask[inner]):
        raise MeshError("inner mask escapes the control mask")
    return ControlRegion(omega_bounds, omega0_bounds, mask, inner)


def check_spectral_condition(laplacian, d_bound):
    """Gate report: is sup d below the first Laplacian eigenvalue?"""
    mu1 = laplacian.mu1
    margin = mu1 - float(d_bound)
    return {"mu1": mu1, "d_bound": float(d_bound), "margin": margin, "ok": margin > 0.0}
