"""Kernel selection: compiled banded sweeps when available, SciPy otherwise.

Set the environment variable ``PECONTROL_PURE=1`` before import to force
the pure SciPy path (used by the benchmark and for debugging).
"""

import os

from . import _band_kernels_py as fallback

factor_bands = fallback.factor_bands
KL = fallback.KL
KU = fallback.KU

try:
    from . import _band_kernels as compiled
except ImportError:
    compiled = None

if compiled is not None and not os.environ.get("PECONTROL_PURE"):
    _active = compiled
    USING_COMPILED = True
else:
    _active = fallback
    USING_COMPILED = False

sweep_forward = _active.sweep_forward
sweep_transpose = _active.sweep_transpose


def implementations():
    """Name -> module map of the available sweep implementations."""
    impls = {"fallback": fallback}
    if compiled is not None:
        impls["compiled"] = compiled
    return impls
