"""Compiled sweep kernels against the pure SciPy reference."""

import numpy as np
import pytest

from pecontrol import kernels
from pecontrol._band_kernels_py import factor_bands


def _random_band_system(rng, n2, nf):
    rows = 2 * kernels.KL + kernels.KU + 1
    bands = np.zeros((nf, rows, n2))
    off = kernels.KL + kernels.KU
    for f in range(nf):
        bands[f, off] = 10.0 + rng.standard_normal(n2)
        for o in (1, 2):
            bands[f, off - o, o:] = rng.standard_normal(n2 - o)
            bands[f, off + o, :n2 - o] = rng.standard_normal(n2 - o)
    return bands


@pytest.fixture()
def system(rng):
    nt, n2 = 17, 24
    bands = _random_band_system(rng, n2, nt)
    lu, piv = factor_bands(bands)
    stepf = np.arange(-1, nt, dtype=np.int32)
    src = rng.standard_normal((nt + 1, n2))
    u0 = rng.standard_normal(n2)
    return nt, n2, lu, piv, stepf, src, u0


@pytest.mark.skipif(kernels.compiled is None, reason="extension not built")
@pytest.mark.parametrize("eps", [0.0, 0.37])
@pytest.mark.parametrize("with_sources", [True, False])
def test_forward_sweep_matches_fallback(system, eps, with_sources):
    nt, n2, lu, piv, stepf, src, u0 = system
    sources = src if with_sources else None
    out_c = np.empty((nt + 1, n2))
    out_p = np.empty((nt + 1, n2))
    kernels.compiled.sweep_forward(lu, piv, stepf, eps, sources, u0, out_c)
    kernels.fallback.sweep_forward(lu, piv, stepf, eps, sources, u0, out_p)
    np.testing.assert_allclose(out_c, out_p, rtol=1e-13, atol=1e-13)


@pytest.mark.skipif(kernels.compiled is None, reason="extension not built")
@pytest.mark.parametrize("eps", [0.0, 0.37])
@pytest.mark.parametrize("with_sources", [True, False])
def test_transpose_sweep_matches_fallback(system, eps, with_sources):
    nt, n2, lu, piv, stepf, src, u0 = system
    sources = src if with_sources else None
    out_c = np.empty((nt + 1, n2))
    out_p = np.empty((nt + 1, n2))
    kernels.compiled.sweep_transpose(lu, piv, stepf, eps, sources, u0, out_c)
    kernels.fallback.sweep_transpose(lu, piv, stepf, eps, sources, u0, out_p)
    np.testing.assert_allclose(out_c, out_p, rtol=1e-13, atol=1e-13)


def test_fallback_forward_solves_the_systems(system):
    # reconstruct the dense matrices and check each step equation
    nt, n2, lu, piv, stepf, src, u0 = system
    rng = np.random.default_rng(5)
    bands = _random_band_system(rng, n2, nt)
    lu, piv = factor_bands(bands)
    out = np.empty((nt + 1, n2))
    eps = 0.25
    kernels.fallback.sweep_forward(lu, piv, stepf, eps, src, u0, out)
    off = kernels.KL + kernels.KU
    for n in (1, nt // 2, nt):
        f = stepf[n]
        A = np.zeros((n2, n2))
        for o in range(-kernels.KL, kernels.KU + 1):
            for j in range(n2):
                i = j + o
                if 0 <= i < n2:
                    A[i, j] = bands[f, off + o, j]
        rhs = np.empty(n2)
        rhs[0::2] = out[n - 1, 0::2]
        rhs[1::2] = eps * out[n - 1, 1::2]
        rhs += src[n]
        np.testing.assert_allclose(A @ out[n], rhs, rtol=1e-10, atol=1e-10)


def test_transpose_sweep_is_exact_adjoint(system):
    # <forward(u0, src)[nt], M w> == <u0, M p[0]> + sum <src[n], p[n-1]>
    nt, n2, lu, piv, stepf, src, u0 = system
    rng = np.random.default_rng(11)
    w = rng.standard_normal(n2)
    eps = 0.6
    U = np.empty((nt + 1, n2))
    kernels.fallback.sweep_forward(lu, piv, stepf, eps, src, u0, U)
    P = np.empty((nt + 1, n2))
    kernels.fallback.sweep_transpose(lu, piv, stepf, eps, None, w, P)
    mw = w.copy()
    mw[1::2] *= eps
    lhs = U[nt] @ mw
    mp0 = P[0].copy()
    mp0[1::2] *= eps
    rhs = u0 @ mp0 + sum(src[n] @ P[n - 1] for n in range(1, nt + 1))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs))


def test_factor_bands_rejects_singular():
    bands = np.zeros((1, 2 * kernels.KL + kernels.KU + 1, 6))
    with pytest.raises(np.linalg.LinAlgError):
        factor_bands(bands)
