"""numpy reference implementation of the kernel API (see package docstring)."""
import numpy as np


def _activate(pre, act):
    if act == 0:
        return pre
    if act == 1:
        return np.maximum(pre, 0.0)
    if act == 2:
        out = np.empty_like(pre)
        pos = pre >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-pre[pos]))
        e = np.exp(pre[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if act == 3:
        return np.tanh(pre)
    raise ValueError(f"unknown activation code {act}")


def _activation_grad(out, gout, act):
    if act == 0:
        return gout
    if act == 1:
        return gout * (out > 0)
    if act == 2:
        return gout * out * (1.0 - out)
    if act == 3:
        return gout * (1.0 - out * out)
    raise ValueError(f"unknown activation code {act}")


def graph_conv_forward(A, X, W, b, act):
    """act(A @ X @ W + b); ``A=None`` drops the graph mixing."""
    xw = X @ W
    pre = xw if A is None else A @ xw
    return _activate(pre + b, act)


def graph_conv_backward(A, X, W, out, gout, act):
    """Gradients (gX, gW, gb) of graph_conv_forward. A is a constant."""
    gpre = _activation_grad(out, gout, act)
    gb = gpre.sum(axis=0)
    gxw = gpre if A is None else A.T @ gpre
    return gxw @ W.T, X.T @ gxw, gb


def segment_max_forward(x, size):
    """Max over consecutive row blocks of ``size`` rows.

    Returns the pooled (K, h) matrix and the absolute row index that won each
    entry; ties resolve to the first row of the block.
    """
    k = x.shape[0] // size
    blocks = x.reshape(k, size, x.shape[1])
    arg = blocks.argmax(axis=1)
    out = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]
    idx = arg + (np.arange(k) * size)[:, None]
    return out, idx


def segment_max_backward(gout, idx, nrows):
    gx = np.zeros((nrows, gout.shape[1]))
    cols = np.broadcast_to(np.arange(gout.shape[1]), idx.shape)
    np.add.at(gx, (idx, cols), gout)
    return gx


def softmax_rows(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def gated_update_forward(z, h, c):
    """(1 - z) * h + z * c, the recurrent state update."""
    return h + z * (c - h)


def gated_update_backward(z, h, c, g):
    return g * (c - h), g * (1.0 - z), g * z
