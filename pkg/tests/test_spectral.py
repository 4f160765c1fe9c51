import numpy as np
import pytest

from geodv import spectral


def test_lobatto_nodes_span_unit_interval():
    s = spectral.lobatto_nodes(9)
    assert s[0] == 0.0 and s[-1] == 1.0
    assert np.all(np.diff(s) > 0)
    # symmetric about 1/2
    np.testing.assert_allclose(s + s[::-1], 1.0, atol=1e-15)


@pytest.mark.parametrize("n", [5, 12, 25, 30])
def test_diff_matrix_exact_on_polynomials(n):
    s = spectral.lobatto_nodes(n)
    D = spectral.diff_matrix(s)
    for k in range(n):
        deriv = D @ s**k
        expected = k * s ** max(k - 1, 0) if k > 0 else np.zeros(n)
        np.testing.assert_allclose(deriv, expected, atol=1e-9 * max(1, k))


def test_diff_matrix_spectral_accuracy_on_smooth_function():
    f = lambda s: np.exp(np.sin(2.0 * np.pi * s))
    fp = lambda s: 2.0 * np.pi * np.cos(2.0 * np.pi * s) * f(s)
    errs = []
    for n in (20, 40):
        s = spectral.lobatto_nodes(n)
        D = spectral.diff_matrix(s)
        errs.append(np.max(np.abs(D @ f(s) - fp(s))))
    assert errs[1] < 1e-9           # resolved
    assert errs[1] < 1e-5 * errs[0]  # and convergence is spectral, not algebraic


@pytest.mark.parametrize("n", [5, 17, 25, 31])
def test_quadrature_weights_integrate_polynomials(n):
    s = spectral.lobatto_nodes(n)
    w = spectral.quadrature_weights(s)
    assert np.all(w > 0)  # Clenshaw-Curtis weights are positive
    for k in range(n):
        np.testing.assert_allclose(w @ s**k, 1.0 / (k + 1), rtol=1e-12, atol=1e-14)


def test_quadrature_spectral_accuracy():
    s = spectral.lobatto_nodes(25)
    w = spectral.quadrature_weights(s)
    # int_0^1 exp(s) ds = e - 1
    assert abs(w @ np.exp(s) - (np.e - 1.0)) < 1e-14


def test_barycentric_resample_exact_for_polynomials():
    src = spectral.lobatto_nodes(12)
    dst = np.linspace(0.0, 1.0, 40)
    vals = 3.0 * src**7 - src**3 + 0.5
    out = spectral.resample_values(src, vals, dst)
    np.testing.assert_allclose(out, 3.0 * dst**7 - dst**3 + 0.5, atol=1e-12)


def test_barycentric_resample_hits_source_nodes_exactly():
    src = spectral.lobatto_nodes(9)
    vals = np.sin(src)
    out = spectral.resample_values(src, vals, src)
    np.testing.assert_array_equal(out, vals)


def test_resample_columns():
    src = spectral.lobatto_nodes(10)
    dst = spectral.lobatto_nodes(16)
    vals = np.stack([src**2, np.cos(src)], axis=1)
    out = spectral.resample_values(src, vals, dst)
    np.testing.assert_allclose(out[:, 0], dst**2, atol=1e-13)
    assert np.max(np.abs(out[:, 1] - np.cos(dst))) < 1e-12
