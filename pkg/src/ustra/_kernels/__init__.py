"""Hot numeric kernels behind the autodiff engine.

Two interchangeable implementations exist: ``_ckernels`` (Cython, BLAS-backed,
built at install time) and ``_pykernels`` (numpy). The compiled one is chosen
at import when available; set ``USTRA_PURE_PYTHON=1`` to force the fallback.

Activation codes shared by both backends: 0 identity, 1 rectifier,
2 sigmoid, 3 tanh.
"""
import os

from . import _pykernels

ACTIVATIONS = {"identity": 0, "relu": 1, "sigmoid": 2, "tanh": 3}

_impl = _pykernels
BACKEND = "python"
if not os.environ.get("USTRA_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

graph_conv_forward = _impl.graph_conv_forward
graph_conv_backward = _impl.graph_conv_backward
segment_max_forward = _impl.segment_max_forward
segment_max_backward = _impl.segment_max_backward
softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
gated_update_forward = _impl.gated_update_forward
gated_update_backward = _impl.gated_update_backward

__all__ = [
    "ACTIVATIONS",
    "BACKEND",
    "graph_conv_forward",
    "graph_conv_backward",
    "segment_max_forward",
    "segment_max_backward",
    "softmax_rows",
    "softmax_rows_backward",
    "gated_update_forward",
    "gated_update_backward",
]
