"""Pure-NumPy exact Euclidean distance transform (fallback backend).

Same two-pass separable scheme as the compiled kernel in ``_edt_fast``:

  1. per-column linear distance to the nearest reference pixel in that
     column (two vectorized sweeps), squared afterwards;
  2. per-row lower envelope of parabolas over the column results, which
     turns the 1-D squared distances into exact 2-D squared distances.

Squared distances between pixel centers are integers, so float64 holds
them exactly and the final square root is correctly rounded; the output
matches a brute-force all-pairs search to machine precision.
"""

from __future__ import annotations

import numpy as np

# Stand-in for +inf in columns without reference pixels; large enough to
# lose every envelope comparison, small enough that intersections of
# parabolas stay finite.
_FAR = 1e15


def _column_pass(reference: np.ndarray) -> np.ndarray:
    """Squared distance to the nearest reference pixel within each column."""
    h, w = reference.shape
    dist = np.full((h, w), np.inf)
    dist[reference] = 0.0
    for r in range(1, h):
        np.minimum(dist[r], dist[r - 1] + 1.0, out=dist[r])
    for r in range(h - 2, -1, -1):
        np.minimum(dist[r], dist[r + 1] + 1.0, out=dist[r])
    return np.where(np.isfinite(dist), dist * dist, _FAR)


def _envelope_1d(f: np.ndarray) -> np.ndarray:
    """Exact 1-D squared distance transform of a sampled function.

    Computes out[q] = min_p ((q - p)^2 + f[p]) by maintaining the lower
    envelope of the parabolas rooted at each sample.
    """
    n = f.shape[0]
    v = np.zeros(n, dtype=np.intp)  # sites of envelope parabolas
    z = np.empty(n + 1)  # boundaries between envelope segments
    z[0] = -np.inf
    z[1] = np.inf
    k = 0
    for q in range(1, n):
        fq = f[q] + q * q
        s = (fq - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = (fq - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    out = np.empty(n)
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        out[q] = (q - v[k]) * (q - v[k]) + f[v[k]]
    return out


def squared_edt(reference: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest true pixel."""
    ref = np.ascontiguousarray(reference, dtype=bool)
    colsq = _column_pass(ref)
    out = np.empty_like(colsq)
    for r in range(ref.shape[0]):
        out[r] = _envelope_1d(colsq[r])
    return out
