"""Spatial (stacked graph convolution) and temporal (graph-convolutional GRU)
relational learning.

Parameters are passed as mappings of name -> Node (or array). With
``gcn=False`` every graph convolution degenerates to the same-shape affine
map that ignores the adjacency.
"""
import numpy as np

from . import autodiff as ad
from .errors import DimensionError


def _as_node(x, tape):
    return x if isinstance(x, ad.Node) else tape.constant(x)


def _tape(*xs):
    for x in xs:
        if isinstance(x, ad.Node):
            return x.tape
    return ad.Tape()


def gcn_layer(X, A, W, b, activation="relu", gcn=True):
    """act(A X W + b). A is used as given, with no renormalization."""
    tape = _tape(X, W, b)
    X, W, b = (_as_node(v, tape) for v in (X, W, b))
    return ad.graph_conv(A if gcn else None, X, W, b, activation)


def spatial_relational(X, A, h, params, fusion=True, gcn=True):
    """Z = GCN2([GCN1(X, A), h], A); without fusion Z = GCN2(GCN1(X, A), A)."""
    tape = _tape(X, h, *params.values())
    X = _as_node(X, tape)
    g1 = gcn_layer(X, A, params["gcn1_w"], params["gcn1_b"], gcn=gcn)
    if fusion:
        h = _as_node(h, tape)
        if h.value.shape[0] != X.value.shape[0]:
            raise DimensionError(f"hidden state {h.value.shape} vs {X.value.shape[0]} nodes")
        g1 = ad.concat([g1, h], axis=1)
    return gcn_layer(g1, A, params["gcn2_w"], params["gcn2_b"], gcn=gcn)


def gcrn_cell(inp, h, A, params, gcn=True):
    """Gated recurrent update with graph convolutions in place of dense maps.

    z, r = sigmoid(GC([inp, h])); c = tanh(GC([inp, r * h]));
    h' = (1 - z) * h + z * c. The update and reset gates share one
    convolution whose output columns are [z | r].
    """
    tape = _tape(inp, h, *params.values())
    inp, h = _as_node(inp, tape), _as_node(h, tape)
    hd = h.value.shape[1]
    if params["gru_gate_w"].shape[1] != 2 * hd:
        raise DimensionError(f"gate weights {params['gru_gate_w'].shape} for hidden size {hd}")
    gates = gcn_layer(
        ad.concat([inp, h], axis=1), A, params["gru_gate_w"], params["gru_gate_b"], "sigmoid", gcn
    )
    z = ad.cols(gates, 0, hd)
    r = ad.cols(gates, hd, 2 * hd)
    c = gcn_layer(
        ad.concat([inp, ad.mul(r, h)], axis=1),
        A,
        params["gru_cand_w"],
        params["gru_cand_b"],
        "tanh",
        gcn,
    )
    return ad.gated_update(z, h, c)


def relational_step(X, A, h, params, fusion=True, gcn=True):
    """One frame of the coupled cycle: returns (Z_t, h_{t+1})."""
    Z = spatial_relational(X, A, h, params, fusion=fusion, gcn=gcn)
    inp = ad.concat([Z, X], axis=1) if fusion else Z
    return Z, gcrn_cell(inp, h, A, params, gcn=gcn)


def relational_shapes(embed_dim, hidden_dim, fusion=True):
    """Parameter shapes for the relational core. X has 2 * embed_dim columns."""
    x_dim = 2 * embed_dim
    inp_dim = hidden_dim + x_dim if fusion else hidden_dim
    return {
        "gcn1_w": (x_dim, hidden_dim),
        "gcn1_b": (hidden_dim,),
        "gcn2_w": (2 * hidden_dim if fusion else hidden_dim, hidden_dim),
        "gcn2_b": (hidden_dim,),
        "gru_gate_w": (inp_dim + hidden_dim, 2 * hidden_dim),
        "gru_gate_b": (2 * hidden_dim,),
        "gru_cand_w": (inp_dim + hidden_dim, hidden_dim),
        "gru_cand_b": (hidden_dim,),
    }


def glorot(rng, shape):
    if len(shape) == 1:
        return np.zeros(shape)
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)
