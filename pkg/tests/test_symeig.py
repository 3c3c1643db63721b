"""Closed-form eigenvalues against the LAPACK oracle."""

import numpy as np

from c2cpred.symeig import eigvals2_sym, eigvals3_sym


def _assemble(a, b, c, d, e, f):
    return np.array([[a, d, e], [d, b, f], [e, f, c]])


def _check_against_lapack(entries, rtol=1e-10):
    a, b, c, d, e, f = entries
    l1, l2, l3 = eigvals3_sym(a, b, c, d, e, f)
    mats = np.stack([_assemble(*row) for row in zip(a, b, c, d, e, f)])
    ref = np.linalg.eigvalsh(mats)[:, ::-1]
    got = np.stack([l1, l2, l3], axis=1)
    scale = np.maximum(np.abs(ref).max(axis=1, keepdims=True), 1e-300)
    np.testing.assert_allclose(got / scale, ref / scale, rtol=0, atol=rtol)


def test_random_matrices_match_lapack(rng):
    m = rng.standard_normal((500, 3, 3))
    sym = m + m.transpose(0, 2, 1)
    entries = (sym[:, 0, 0], sym[:, 1, 1], sym[:, 2, 2],
               sym[:, 0, 1], sym[:, 0, 2], sym[:, 1, 2])
    _check_against_lapack(entries)


def test_covariance_like_matrices(rng):
    v = rng.standard_normal((300, 8, 3))
    cov = np.einsum("nki,nkj->nij", v, v) / 7.0
    entries = (cov[:, 0, 0], cov[:, 1, 1], cov[:, 2, 2],
               cov[:, 0, 1], cov[:, 0, 2], cov[:, 1, 2])
    _check_against_lapack(entries)


def test_extreme_scales(rng):
    for scale in (1e-18, 1e-6, 1e6, 1e12):
        m = rng.standard_normal((50, 3, 3)) * scale
        sym = m + m.transpose(0, 2, 1)
        entries = (sym[:, 0, 0], sym[:, 1, 1], sym[:, 2, 2],
                   sym[:, 0, 1], sym[:, 0, 2], sym[:, 1, 2])
        _check_against_lapack(entries)


def test_diagonal_and_isotropic():
    l1, l2, l3 = eigvals3_sym(3.0, 1.0, 2.0, 0.0, 0.0, 0.0)
    np.testing.assert_allclose([l1, l2, l3], [3.0, 2.0, 1.0], atol=1e-14)
    l1, l2, l3 = eigvals3_sym(2.0, 2.0, 2.0, 0.0, 0.0, 0.0)
    np.testing.assert_allclose([l1, l2, l3], [2.0, 2.0, 2.0])


def test_rank_deficient_small_root_is_tiny():
    # exact rank-2 block matrix: smallest eigenvalue must come out ~0
    l1, l2, l3 = eigvals3_sym(2.0, 1.0, 0.0, 0.5, 0.0, 0.0)
    assert abs(l3) < 1e-15 * l1
    # exact rank-1 (outer product of (1, 1, 1))
    l1, l2, l3 = eigvals3_sym(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    assert l1 == (3.0)
    assert abs(l2) < 1e-14 and abs(l3) < 1e-14


def test_ordering_always_descending(rng):
    m = rng.standard_normal((2000, 3, 3))
    sym = m + m.transpose(0, 2, 1)
    l1, l2, l3 = eigvals3_sym(sym[:, 0, 0], sym[:, 1, 1], sym[:, 2, 2],
                              sym[:, 0, 1], sym[:, 0, 2], sym[:, 1, 2])
    assert (l1 >= l2).all() and (l2 >= l3).all()


def test_2x2_against_lapack(rng):
    m = rng.standard_normal((400, 2, 2))
    sym = m + m.transpose(0, 2, 1)
    m1, m2 = eigvals2_sym(sym[:, 0, 0], sym[:, 1, 1], sym[:, 0, 1])
    ref = np.linalg.eigvalsh(sym)[:, ::-1]
    np.testing.assert_allclose(np.stack([m1, m2], axis=1), ref, rtol=1e-10, atol=1e-12)
