"""Exact Euclidean distance transforms and signed level-set fields.

The squared-distance kernel exists twice: a compiled Cython extension
(``hierseg._edt_fast``) and a pure-NumPy fallback (``hierseg._edt_py``)
implementing the identical separable lower-envelope algorithm.  The
compiled backend is preferred when importable; set ``HIERSEG_EDT=python``
to force the fallback.  ``EDT_BACKEND`` names the selected backend.

Distances are measured between pixel centers with unit spacing.  The
signed field follows the discrete convention φ(q∉G) = dist(q, G) and
φ(q∈G) = −dist(q, Gᶜ), so pixels adjacent to the region border carry
|φ| = 1 and φ never takes the value 0.
"""

from __future__ import annotations

import os

import numpy as np

from . import _edt_py
from .grids import BinaryMask, binary_mask

if os.environ.get("HIERSEG_EDT", "").lower() == "python":
    _squared_edt = _edt_py.squared_edt
    EDT_BACKEND = "python"
else:
    try:
        from . import _edt_fast

        _squared_edt = _edt_fast.squared_edt
        EDT_BACKEND = "compiled"
    except ImportError:  # extension not built; fall back silently
        _squared_edt = _edt_py.squared_edt
        EDT_BACKEND = "python"

DistanceField = np.ndarray  # 2-D float64 ≥ 0
LevelSetField = np.ndarray  # 2-D float64, signed


def edt(reference: BinaryMask) -> DistanceField:
    """Exact Euclidean distance from every pixel to the reference set.

    Zero exactly on reference pixels.  Raises if the reference set is
    empty (every distance would be unbounded).
    """
    ref = binary_mask(reference)
    if not ref.any():
        raise ValueError("empty reference set")
    return np.sqrt(_squared_edt(ref))


def level_set(g: BinaryMask) -> LevelSetField:
    """Signed distance field of a region: negative inside, positive outside."""
    mask = binary_mask(g)
    if mask.all() or not mask.any():
        raise ValueError("degenerate ground truth")
    phi = np.empty(mask.shape, dtype=np.float64)
    outside = ~mask
    phi[outside] = np.sqrt(_squared_edt(mask))[outside]
    phi[mask] = -np.sqrt(_squared_edt(outside))[mask]
    return phi
