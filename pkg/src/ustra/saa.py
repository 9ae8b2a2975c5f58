"""Training-only video-level head: pooled hidden states, projection-free
self-attention, learned temporal aggregation, two FC layers, softmax.
"""
import math

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError

PROB_FLOOR = 1e-12


def saa_shapes(hidden_dim, seq_len):
    return {
        "saa_agg": (1, seq_len),
        "saa_fc1_w": (2 * hidden_dim, hidden_dim),
        "saa_fc1_b": (hidden_dim,),
        "saa_fc2_w": (hidden_dim, 2),
        "saa_fc2_b": (2,),
    }


def pool_states(states, n_nodes=None):
    """Row t = [mean over nodes of H_t, max over nodes of H_t].

    ``states`` is a list of (N, h) Nodes, or a single (T*N, h) Node with
    ``n_nodes`` given. Returns a (T, 2h) Node.
    """
    if isinstance(states, ad.Node):
        stacked = states
    else:
        if not states:
            raise ContractError("pool_states needs at least one hidden state")
        n_nodes = states[0].value.shape[0]
        if any(s.value.shape != states[0].value.shape for s in states):
            raise DimensionError("hidden states differ in shape")
        stacked = ad.concat(states, axis=0) if len(states) > 1 else states[0]
    return ad.concat(
        [ad.segment_mean(stacked, n_nodes), ad.segment_max(stacked, n_nodes)], axis=1
    )


def self_attention(S):
    """softmax_rows(S S^T / sqrt(d)) S with queries = keys = values = S."""
    d = S.value.shape[1]
    scores = ad.mul(ad.matmul(S, ad.transpose(S)), 1.0 / math.sqrt(d))
    return ad.matmul(ad.softmax(scores), S)


def aggregate_and_score(S, agg, params):
    """v = agg @ S (one weight per step), then 2h -> h relu -> 2, softmax."""
    t = S.value.shape[0]
    if agg.shape != (1, t):
        raise DimensionError(f"aggregation weights {agg.shape} for {t} steps")
    v = ad.matmul(agg, S)
    h = ad.graph_conv(None, v, params["saa_fc1_w"], params["saa_fc1_b"], "relu")
    logits = ad.graph_conv(None, h, params["saa_fc2_w"], params["saa_fc2_b"], "identity")
    return ad.softmax(logits)


def video_bce(a, positive):
    """-log a_p for positives, -log a_n for negatives (clamped)."""
    col = 1 if positive else 0
    if isinstance(a, ad.Node):
        p = ad.cols(a, col, col + 1) if a.value.ndim == 2 else None
        if p is None:
            raise DimensionError("video score must be a (1, 2) row")
        return ad.neg(ad.sum(ad.log(ad.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR))))
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    return float(-np.log(np.clip(a[col], PROB_FLOOR, 1.0 - PROB_FLOOR)))


def saa_video_score(S, params):
    """Full head on one video's pooled states (T, 2h)."""
    return aggregate_and_score(self_attention(S), params["saa_agg"], params)


def init_saa(rng, hidden_dim, seq_len, glorot):
    shapes = saa_shapes(hidden_dim, seq_len)
    params = {name: glorot(rng, shape) for name, shape in shapes.items() if name != "saa_agg"}
    params["saa_agg"] = np.full((1, seq_len), 1.0 / seq_len)
    return params
