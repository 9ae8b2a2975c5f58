# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same API and semantics as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm(bint ta, bint tb, int m, int n, int k,
                double* A, int lda, double* B, int ldb,
                double* C, double beta) noexcept nogil:
    # Row-major C(m x n) = op(A) @ op(B) + beta*C via column-major dgemm on
    # the transposed problem.
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    cdef double alpha = 1.0
    cdef int ldc = n
    dgemm(&cb, &ca, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline double _act(double v, int act) noexcept nogil:
    if act == 1:
        return v if v > 0.0 else 0.0
    if act == 2:
        if v >= 0.0:
            return 1.0 / (1.0 + exp(-v))
        v = exp(v)
        return v / (1.0 + v)
    if act == 3:
        return tanh(v)
    return v


cdef inline double _act_grad(double o, double g, int act) noexcept nogil:
    if act == 1:
        return g if o > 0.0 else 0.0
    if act == 2:
        return g * o * (1.0 - o)
    if act == 3:
        return g * (1.0 - o * o)
    return g


def graph_conv_forward(A, X, W, b, int act):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[::1] bias = np.ascontiguousarray(b, dtype=np.float64).reshape(-1)
    cdef int n = x.shape[0], p = x.shape[1], q = w.shape[1]
    if w.shape[0] != p or bias.shape[0] != q:
        raise ValueError("graph_conv_forward: inconsistent shapes")
    out_arr = np.empty((n, q))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] a
    cdef double[:, ::1] xw
    cdef int i, j
    if A is None:
        _gemm(False, False, n, q, p, &x[0, 0], p, &w[0, 0], q, &out[0, 0], 0.0)
    else:
        a = np.ascontiguousarray(A, dtype=np.float64)
        if a.shape[0] != n or a.shape[1] != n:
            raise ValueError("graph_conv_forward: adjacency shape mismatch")
        xw = np.empty((n, q))
        _gemm(False, False, n, q, p, &x[0, 0], p, &w[0, 0], q, &xw[0, 0], 0.0)
        _gemm(False, False, n, q, n, &a[0, 0], n, &xw[0, 0], q, &out[0, 0], 0.0)
    with nogil:
        for i in range(n):
            for j in range(q):
                out[i, j] = _act(out[i, j] + bias[j], act)
    return out_arr


def graph_conv_backward(A, X, W, out, gout, int act):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef double[:, ::1] o = np.ascontiguousarray(out, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(gout, dtype=np.float64)
    cdef int n = x.shape[0], p = x.shape[1], q = w.shape[1]
    gpre_arr = np.empty((n, q))
    gb_arr = np.zeros(q)
    gx_arr = np.empty((n, p))
    gw_arr = np.empty((p, q))
    cdef double[:, ::1] gpre = gpre_arr
    cdef double[::1] gb = gb_arr
    cdef double[:, ::1] gx = gx_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[:, ::1] a
    cdef double[:, ::1] gxw
    cdef int i, j
    with nogil:
        for i in range(n):
            for j in range(q):
                gpre[i, j] = _act_grad(o[i, j], g[i, j], act)
                gb[j] += gpre[i, j]
    if A is None:
        gxw = gpre
    else:
        a = np.ascontiguousarray(A, dtype=np.float64)
        gxw = np.empty((n, q))
        _gemm(True, False, n, q, n, &a[0, 0], n, &gpre[0, 0], q, &gxw[0, 0], 0.0)
    _gemm(False, True, n, p, q, &gxw[0, 0], q, &w[0, 0], q, &gx[0, 0], 0.0)
    _gemm(True, False, p, q, n, &x[0, 0], p, &gxw[0, 0], q, &gw[0, 0], 0.0)
    return gx_arr, gw_arr, gb_arr


def segment_max_forward(X, int size):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef int rows = x.shape[0], h = x.shape[1]
    cdef int k = rows // size
    out_arr = np.empty((k, h))
    idx_arr = np.empty((k, h), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    cdef int s, r, j, base
    cdef double best
    with nogil:
        for s in range(k):
            base = s * size
            for j in range(h):
                best = x[base, j]
                idx[s, j] = base
                for r in range(base + 1, base + size):
                    if x[r, j] > best:
                        best = x[r, j]
                        idx[s, j] = r
                out[s, j] = best
    return out_arr, idx_arr


def segment_max_backward(gout, idx_in, int nrows):
    cdef double[:, ::1] g = np.ascontiguousarray(gout, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] idx = np.ascontiguousarray(idx_in, dtype=np.int64)
    gx_arr = np.zeros((nrows, g.shape[1]))
    cdef double[:, ::1] gx = gx_arr
    cdef int s, j
    with nogil:
        for s in range(g.shape[0]):
            for j in range(g.shape[1]):
                gx[idx[s, j], j] += g[s, j]
    return gx_arr


def softmax_rows(X):
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef int n = x.shape[0], m = x.shape[1]
    y_arr = np.empty((n, m))
    cdef double[:, ::1] y = y_arr
    cdef int i, j
    cdef double mx, total
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            total = 0.0
            for j in range(m):
                y[i, j] = exp(x[i, j] - mx)
                total += y[i, j]
            for j in range(m):
                y[i, j] /= total
    return y_arr


def softmax_rows_backward(Y, GY):
    cdef double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef double[:, ::1] gy = np.ascontiguousarray(GY, dtype=np.float64)
    cdef int n = y.shape[0], m = y.shape[1]
    gx_arr = np.empty((n, m))
    cdef double[:, ::1] gx = gx_arr
    cdef int i, j
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += gy[i, j] * y[i, j]
            for j in range(m):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return gx_arr


def gated_update_forward(Z, H, C):
    cdef double[:, ::1] z = np.ascontiguousarray(Z, dtype=np.float64)
    cdef double[:, ::1] h = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    out_arr = np.empty((z.shape[0], z.shape[1]))
    cdef double[:, ::1] out = out_arr
    cdef int i, j
    with nogil:
        for i in range(z.shape[0]):
            for j in range(z.shape[1]):
                out[i, j] = h[i, j] + z[i, j] * (c[i, j] - h[i, j])
    return out_arr


def gated_update_backward(Z, H, C, G):
    cdef double[:, ::1] z = np.ascontiguousarray(Z, dtype=np.float64)
    cdef double[:, ::1] h = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef int n = z.shape[0], m = z.shape[1]
    gz_arr = np.empty((n, m))
    gh_arr = np.empty((n, m))
    gc_arr = np.empty((n, m))
    cdef double[:, ::1] gz = gz_arr
    cdef double[:, ::1] gh = gh_arr
    cdef double[:, ::1] gc = gc_arr
    cdef int i, j
    with nogil:
        for i in range(n):
            for j in range(m):
                gz[i, j] = g[i, j] * (c[i, j] - h[i, j])
                gh[i, j] = g[i, j] * (1.0 - z[i, j])
                gc[i, j] = g[i, j] * z[i, j]
    return gz_arr, gh_arr, gc_arr
