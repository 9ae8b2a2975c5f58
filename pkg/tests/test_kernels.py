import numpy as np
import pytest

from ustra import _kernels
from ustra._kernels import _pykernels

try:
    from ustra._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _conv_inputs(rng, with_adj):
    n, p, q = 7, 5, 4
    A = rng.random((n, n)) if with_adj else None
    X = rng.standard_normal((n, p))
    W = rng.standard_normal((p, q))
    b = rng.standard_normal(q)
    return A, X, W, b


class TestBackendSelection:
    def test_backend_is_reported(self):
        assert _kernels.BACKEND in ("cython", "python")

    def test_env_var_forces_fallback(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c", "from ustra import _kernels; print(_kernels.BACKEND)"],
            env={"USTRA_PURE_PYTHON": "1", "PATH": ""},
            capture_output=True, text=True, check=True,
        )
        assert out.stdout.strip() == "python"


@needs_ext
class TestParity:
    @pytest.mark.parametrize("act", [0, 1, 2, 3])
    @pytest.mark.parametrize("with_adj", [True, False])
    def test_graph_conv(self, rng, act, with_adj):
        A, X, W, b = _conv_inputs(rng, with_adj)
        py = _pykernels.graph_conv_forward(A, X, W, b, act)
        cy = _ckernels.graph_conv_forward(A, X, W, b, act)
        np.testing.assert_allclose(cy, py, rtol=1e-13, atol=1e-14)
        g = rng.standard_normal(py.shape)
        for a, c in zip(
            _pykernels.graph_conv_backward(A, X, W, py, g, act),
            _ckernels.graph_conv_backward(A, X, W, cy, g, act),
        ):
            np.testing.assert_allclose(c, a, rtol=1e-12, atol=1e-13)

    def test_segment_max_with_ties(self, rng):
        x = rng.integers(0, 3, size=(12, 5)).astype(float)
        (py, pi), (cy, ci) = _pykernels.segment_max_forward(x, 4), _ckernels.segment_max_forward(x, 4)
        np.testing.assert_array_equal(cy, py)
        np.testing.assert_array_equal(ci, pi)
        g = rng.standard_normal(py.shape)
        np.testing.assert_array_equal(
            _ckernels.segment_max_backward(g, ci, 12), _pykernels.segment_max_backward(g, pi, 12)
        )

    def test_softmax(self, rng):
        x = rng.standard_normal((6, 4)) * 30
        y = _pykernels.softmax_rows(x)
        np.testing.assert_allclose(_ckernels.softmax_rows(x), y, rtol=1e-13, atol=1e-300)
        gy = rng.standard_normal(y.shape)
        np.testing.assert_allclose(
            _ckernels.softmax_rows_backward(y, gy), _pykernels.softmax_rows_backward(y, gy),
            rtol=1e-12, atol=1e-14,
        )

    def test_gated_update(self, rng):
        z, h, c, g = (rng.standard_normal((5, 3)) for _ in range(4))
        np.testing.assert_allclose(
            _ckernels.gated_update_forward(z, h, c), _pykernels.gated_update_forward(z, h, c), rtol=1e-14
        )
        for a, b in zip(
            _ckernels.gated_update_backward(z, h, c, g), _pykernels.gated_update_backward(z, h, c, g)
        ):
            np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


class TestReferenceKernels:
    def test_graph_conv_triple_loop(self, rng):
        A, X, W, b = _conv_inputs(rng, True)
        out = _pykernels.graph_conv_forward(A, X, W, b, 0)
        n, q = A.shape[0], W.shape[1]
        ref = np.zeros((n, q))
        for i in range(n):
            for j in range(q):
                s = b[j]
                for k in range(n):
                    for m in range(X.shape[1]):
                        s += A[i, k] * X[k, m] * W[m, j]
                ref[i, j] = s
        np.testing.assert_allclose(out, ref, rtol=1e-12)

    def test_sigmoid_is_stable(self):
        A, X, W, b = None, np.array([[-800.0], [800.0]]), np.eye(1), np.zeros(1)
        out = _pykernels.graph_conv_forward(A, X, W, b, 2)
        assert np.all(np.isfinite(out))
        np.testing.assert_array_equal(out.ravel(), [0.0, 1.0])
