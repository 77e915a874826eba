import numpy as np
import pytest

from mimogpr._core import BACKEND, _kernels_py, sqdist_and_dot

try:
    from mimogpr._core import _kernels_cy
except ImportError:
    _kernels_cy = None


def loop_oracle(a, b):
    na, nb, p = a.shape[0], b.shape[0], a.shape[1]
    d = np.zeros((na, nb))
    g = np.zeros((na, nb))
    for i in range(na):
        for j in range(nb):
            for k in range(p):
                d[i, j] += (a[i, k] - b[j, k]) ** 2
                g[i, j] += a[i, k] * b[j, k]
    return d, g


@pytest.fixture(params=[pytest.param(_kernels_py, id="python")]
                + ([pytest.param(_kernels_cy, id="cython")] if _kernels_cy else []))
def backend(request):
    return request.param


def test_matches_loop_oracle(backend):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(7, 4))
    b = rng.normal(size=(5, 4))
    d, g = backend.sqdist_and_dot(a, b)
    d0, g0 = loop_oracle(a, b)
    np.testing.assert_allclose(d, d0, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(g, g0, rtol=1e-12, atol=1e-12)


def test_self_distance_diagonal_zero(backend):
    rng = np.random.default_rng(1)
    a = rng.normal(size=(9, 3))
    d, _ = backend.sqdist_and_dot(a, a)
    assert np.all(np.diag(d) == 0.0) or np.all(np.abs(np.diag(d)) < 1e-12)
    np.testing.assert_allclose(d, d.T, atol=1e-12)


def test_dimension_mismatch_rejected(backend):
    with pytest.raises(ValueError, match="column dimension"):
        backend.sqdist_and_dot(np.zeros((2, 3)), np.zeros((2, 4)))


def test_distances_never_negative(backend):
    # near-duplicate rows provoke cancellation in broadcast implementations
    base = np.full((40, 6), 1e6)
    a = base + np.random.default_rng(2).normal(scale=1e-4, size=base.shape)
    d, _ = backend.sqdist_and_dot(a, a)
    assert np.all(d >= 0.0)


@pytest.mark.skipif(_kernels_cy is None, reason="compiled core not built")
def test_backend_parity():
    rng = np.random.default_rng(3)
    a = rng.normal(scale=3.0, size=(30, 12))
    b = rng.normal(scale=3.0, size=(17, 12))
    d_py, g_py = _kernels_py.sqdist_and_dot(a, b)
    d_cy, g_cy = _kernels_cy.sqdist_and_dot(a, b)
    np.testing.assert_allclose(d_cy, d_py, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(g_cy, g_py, rtol=1e-10, atol=1e-12)


def test_selected_backend_exposed():
    assert BACKEND in ("cython", "python")
    d, g = sqdist_and_dot(np.eye(2), np.eye(2))
    np.testing.assert_allclose(d, [[0.0, 2.0], [2.0, 0.0]])
    np.testing.assert_allclose(g, [[1.0, 0.0], [0.0, 1.0]])
