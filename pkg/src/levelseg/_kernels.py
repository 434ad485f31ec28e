"""Exact Euclidean distance-transform kernels.

The transform is the two-pass separable lower-envelope-of-parabolas method,
extended with per-axis weights so distances can be measured in anisotropic
physical units. These are the hot inner loops of the package: by default they
are JIT-compiled with numba, with a pure-Python fallback selected by setting
the environment variable ``LEVELSEG_NO_NUMBA=1`` (or when numba is not
installed). ``python -m levelseg.benchmark`` compares both paths.
"""

import os
import warnings

import numpy as np

NUMBA_ENV_FLAG = "LEVELSEG_NO_NUMBA"

#: Large finite stand-in for +inf; safe because any true squared distance on a
#: grid is bounded by (H^2 + W^2) * max_spacing^2, far below this.
BIG = 1e20


def _dt1d_impl(f, d, v, z, n, w2):
    # 1-D squared-distance transform d[x] = min_q f[q] + w2*(x-q)^2 over the
    # first n entries, via the lower envelope of parabolas rooted at (q, f[q]).
    # f is finite everywhere (BIG stands in for inf), so every intersection s
    # is finite and the -inf/+inf rail sentinels in z bound the while loops.
    k = 0
    v[0] = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        vk = v[k]
        s = (f[q] + w2 * q * q - (f[vk] + w2 * vk * vk)) / (2.0 * w2 * (q - vk))
        while s <= z[k]:
            k -= 1
            vk = v[k]
            s = (f[q] + w2 * q * q - (f[vk] + w2 * vk * vk)) / (2.0 * w2 * (q - vk))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        vk = v[k]
        d[q] = f[vk] + w2 * (q - vk) * (q - vk)


def _build_edt(dt1d):
    def edt_squared(cost, w_row2, w_col2):
        h, w = cost.shape
        out = np.empty((h, w), np.float64)
        n = max(h, w)
        f = np.empty(n, np.float64)
        d = np.empty(n, np.float64)
        v = np.empty(n, np.int64)
        z = np.empty(n + 1, np.float64)
        for j in range(w):
            for i in range(h):
                f[i] = cost[i, j]
            dt1d(f, d, v, z, h, w_row2)
            for i in range(h):
                out[i, j] = d[i]
        for i in range(h):
            for j in range(w):
                f[j] = out[i, j]
            dt1d(f, d, v, z, w, w_col2)
            for j in range(w):
                out[i, j] = d[j]
        return out

    return edt_squared


def _resolve_numba():
    if os.environ.get(NUMBA_ENV_FLAG, "").strip() not in ("", "0"):
        return None
    try:
        from numba import njit
    except ImportError:
        warnings.warn(
            "numba not available; distance transforms will run in pure Python "
            "(slow). Install numba or ignore this if that is intended.",
            stacklevel=2,
        )
        return None
    return njit


_njit = _resolve_numba()

edt_squared_python = _build_edt(_dt1d_impl)

if _njit is not None:
    edt_squared_compiled = _njit(_build_edt(_njit(_dt1d_impl)))
else:
    edt_squared_compiled = None

edt_squared = edt_squared_compiled if edt_squared_compiled is not None else edt_squared_python


def numba_enabled():
    """True when the compiled kernel path is active."""
    return edt_squared_compiled is not None


def distance_to_sites(sites, spacing=(1.0, 1.0)):
    """Exact Euclidean distance from every pixel to the nearest site pixel.

    Distances are measured between pixel centers, scaled per axis by
    ``spacing`` (row step, column step). ``sites`` must contain at least one
    True entry; pixels on a site get distance 0.
    """
    sites = np.asarray(sites, dtype=bool)
    if sites.ndim != 2:
        raise ValueError("sites must be a 2-D array")
    if not sites.any():
        raise ValueError("sites must contain at least one True pixel")
    cost = np.where(sites, 0.0, BIG)
    w_row, w_col = float(spacing[0]), float(spacing[1])
    sq = edt_squared(cost, w_row * w_row, w_col * w_col)
    return np.sqrt(sq)
