"""Pure SciPy implementation of the banded time-sweep kernels.

Same contract as the compiled module ``pecontrol._band_kernels``; the
time loop runs in Python and each step calls LAPACK ``gbtrs`` through
SciPy. State vectors interleave the two fields: even entries carry the
parabolic component, odd entries the elliptic/relaxed one, so the block
system is banded with kl = ku = 2 in 1D.
"""

import numpy as np
from scipy.linalg import lapack

KL = 2
KU = 2


def factor_bands(bands):
    """LU-factor a stack of band matrices (LAPACK gbtrf storage).

    bands: (nf, 2*KL+KU+1, n) with the matrix occupying the lower
    KL+KU+1 rows; the top KL rows are fill space for the factorization.
    Returns (lu, ipiv) with 0-based pivots (SciPy convention).
    """
    nf, ldab, n = bands.shape
    lu = np.empty_like(bands)
    ipiv = np.empty((nf, n), dtype=np.int32)
    for f in range(nf):
        lu_f, piv_f, info = lapack.dgbtrf(bands[f], KL, KU)
        if info != 0:
            raise np.linalg.LinAlgError(
                f"band factorization failed at factor {f} (gbtrf info={info})"
            )
        lu[f] = lu_f
        ipiv[f] = piv_f
    return lu, ipiv


def _solve(lu, ipiv, rhs, trans):
    x, info = lapack.dgbtrs(lu, KL, KU, rhs.reshape(-1, 1), ipiv, trans=trans)
    if info != 0:
        raise np.linalg.LinAlgError(f"band solve failed (gbtrs info={info})")
    return x[:, 0]


def sweep_forward(lu, ipiv, step_factor, eps_mass, sources, u0, out):
    """March the factored block systems forward in time.

    Solves S_n u^n = M u^{n-1} + sources[n] for n = 1..nt where the mass
    M is 1 on even (parabolic) entries and eps_mass on odd entries.
    out: (nt+1, n2), row 0 receives u0.
    """
    nt = out.shape[0] - 1
    out[0] = u0
    rhs = np.empty_like(u0)
    for n in range(1, nt + 1):
        rhs[0::2] = out[n - 1, 0::2]
        rhs[1::2] = eps_mass * out[n - 1, 1::2]
        if sources is not None:
            rhs += sources[n]
        f = step_factor[n]
        out[n] = _solve(lu[f], ipiv[f], rhs, trans=0)
    return out


def sweep_transpose(lu, ipiv, step_factor, eps_mass, sources, terminal, out):
    """March the transposed systems backward in time.

    Solves S_n^T p^{n-1} = M p^n + sources[n] for n = nt..1; row nt of
    out receives the terminal pair. This is the exact adjoint of
    sweep_forward: <sweep_forward output at nt, w> pairs with the
    transpose sweep seeded by w.
    """
    nt = out.shape[0] - 1
    out[nt] = terminal
    rhs = np.empty_like(terminal)
    for n in range(nt, 0, -1):
        rhs[0::2] = out[n, 0::2]
        rhs[1::2] = eps_mass * out[n, 1::2]
        if sources is not None:
            rhs += sources[n]
        f = step_factor[n]
        out[n - 1] = _solve(lu[f], ipiv[f], rhs, trans=1)
    return out
