"""Batched closed-form eigenvalues of symmetric 2x2 / 3x3 matrices.

The 3x3 path uses the trigonometric (Cardano) solution of the characteristic
polynomial followed by one Newton polish step per root. It is branch-free
over arrays, which makes sweeping thousands of candidate neighborhoods per
point cheap compared to a LAPACK call per matrix.

Matrices are passed as their unique entries::

    [[a, d, e],
     [d, b, f],
     [e, f, c]]

All functions broadcast over any leading shape and return eigenvalues in
descending order.
"""

from __future__ import annotations

import numpy as np

_TWO_PI_3 = 2.0 * np.pi / 3.0


def eigvals2_sym(a, b, d):
    """Eigenvalues (descending) of symmetric [[a, d], [d, b]]."""
    t = 0.5 * (a + b)
    s = np.sqrt((0.5 * (a - b)) ** 2 + d * d)
    return t + s, t - s


def _det3_sym(a, b, c, d, e, f):
    return a * (b * c - f * f) - d * (d * c - f * e) + e * (d * f - b * e)


def eigvals3_sym(a, b, c, d, e, f, polish: bool = True):
    """Eigenvalues (descending) of the symmetric 3x3 with entries a..f."""
    a, b, c, d, e, f = np.broadcast_arrays(
        *(np.asarray(x, dtype=np.float64) for x in (a, b, c, d, e, f))
    )
    q = (a + b + c) / 3.0
    p2 = (a - q) ** 2 + (b - q) ** 2 + (c - q) ** 2 + 2.0 * (d * d + e * e + f * f)
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0.0, p, 1.0)

    ba = (a - q) / safe_p
    bb = (b - q) / safe_p
    bc = (c - q) / safe_p
    bd = d / safe_p
    be = e / safe_p
    bf = f / safe_p
    r = np.clip(0.5 * _det3_sym(ba, bb, bc, bd, be, bf), -1.0, 1.0)

    phi = np.arccos(r) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + _TWO_PI_3)
    l2 = 3.0 * q - l1 - l3

    if polish:
        tr = a + b + c
        m2 = a * b + a * c + b * c - d * d - e * e - f * f
        det = _det3_sym(a, b, c, d, e, f)
        l1 = _newton_root(l1, tr, m2, det)
        l2 = _newton_root(l2, tr, m2, det)
        l3 = _newton_root(l3, tr, m2, det)
        # Polishing can reorder nearly-equal roots; restore descending order.
        lo = np.minimum(l1, l2)
        l1 = np.maximum(l1, l2)
        l2 = np.maximum(lo, l3)
        l3 = np.minimum(lo, l3)
        lo = np.minimum(l1, l2)
        l1 = np.maximum(l1, l2)
        l2 = lo

    isotropic = p2 <= 0.0
    if np.any(isotropic):
        l1 = np.where(isotropic, q, l1)
        l2 = np.where(isotropic, q, l2)
        l3 = np.where(isotropic, q, l3)
    return l1, l2, l3


def _newton_root(lam, tr, m2, det):
    val = ((lam - tr) * lam + m2) * lam - det
    der = (3.0 * lam - 2.0 * tr) * lam + m2
    step = np.where(der != 0.0, val / np.where(der != 0.0, der, 1.0), 0.0)
    return lam - step
