"""Full accident-anticipation network over a batch of videos.

Videos in a batch are stacked node-wise: the per-frame node matrix has
B*N rows (video-major) and the adjacency is block diagonal, so every op
stays rank-2. Each Monte-Carlo pass draws one set of head weights that is
shared by all videos of the batch and all time steps.
"""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import bayes, saa
from .graph import build_adjacency
from .relational import glorot, relational_shapes, relational_step
from .uncertainty import ensemble_moments


def param_shapes(mcfg):
    d, h = mcfg.embed_dim, mcfg.hidden_dim
    shapes = {
        "embed_obj_w": (mcfg.d_obj, d),
        "embed_obj_b": (d,),
        "embed_frame_w": (mcfg.d_frame, d),
        "embed_frame_b": (d,),
    }
    shapes.update(relational_shapes(d, h, fusion=mcfg.fusion))
    for name, shape in bayes.head_shapes(h).items():
        if mcfg.bnn:
            shapes[f"{name}_mu"] = shape
            shapes[f"{name}_rho"] = shape
        else:
            shapes[name] = shape
    if mcfg.saa:
        shapes.update(saa.saa_shapes(h, mcfg.seq_len))
    return shapes


def init_params(mcfg, rng):
    """Deterministic initialization given ``rng``; returns name -> array."""
    params = {}
    shapes = param_shapes(mcfg)
    for name, shape in shapes.items():
        if name.startswith("bnn") or name.startswith("saa"):
            continue
        params[name] = glorot(rng, shape)
    if mcfg.bnn:
        mu, rho = bayes.init_posterior(rng, mcfg.hidden_dim)
        for name in bayes.HEAD_NAMES:
            params[f"{name}_mu"] = mu[name]
            params[f"{name}_rho"] = rho[name]
    else:
        for name, shape in bayes.head_shapes(mcfg.hidden_dim).items():
            params[name] = rng.uniform(-0.1, 0.1, size=shape)
    if mcfg.saa:
        params.update(saa.init_saa(rng, mcfg.hidden_dim, mcfg.seq_len, glorot))
    return {k: params[k] for k in shapes}


def head_posterior(P):
    mu = {n: P[f"{n}_mu"] for n in bayes.HEAD_NAMES}
    rho = {n: P[f"{n}_rho"] for n in bayes.HEAD_NAMES}
    return mu, rho


def prior_of(mcfg):
    return bayes.PriorSpec(
        mcfg.prior_pi, mcfg.prior_sigma1, mcfg.prior_sigma2, mcfg.prior_as_variance
    )


@dataclass
class Batch:
    obj: np.ndarray  # (T*B*N, d_obj), time-major then video then node
    frame: np.ndarray  # (T*B, d_frame)
    adjacency: np.ndarray  # (T, B*N, B*N) block diagonal
    positive: np.ndarray  # (B,) bool
    accident_frame: np.ndarray  # (B,) 1-based, 0 for negatives
    fps: np.ndarray  # (B,)
    T: int
    B: int
    N: int


def make_batch(samples, adjacency_cache=None):
    """Stack equal-shape videos into one Batch.

    ``adjacency_cache`` maps video_id -> (T, N, N) arrays to skip
    recomputing distance softmaxes across epochs.
    """
    T, N = samples[0].T, samples[0].N
    B = len(samples)
    obj = np.stack([s.object_features for s in samples], axis=1)  # (T, B, N, d)
    frame = np.stack([s.frame_features for s in samples], axis=1)  # (T, B, d)
    adj = np.zeros((T, B * N, B * N))
    for b, s in enumerate(samples):
        a = None if adjacency_cache is None else adjacency_cache.get(s.video_id)
        if a is None:
            a = build_adjacency(s.boxes, s.frame_size)
            if adjacency_cache is not None:
                adjacency_cache[s.video_id] = a
        adj[:, b * N : (b + 1) * N, b * N : (b + 1) * N] = a
    return Batch(
        obj=obj.reshape(T * B * N, -1),
        frame=frame.reshape(T * B, -1),
        adjacency=adj,
        positive=np.array([s.positive for s in samples]),
        accident_frame=np.array([s.accident_frame or 0 for s in samples]),
        fps=np.array([s.fps for s in samples], dtype=np.float64),
        T=T,
        B=B,
        N=N,
    )


@dataclass
class ForwardResult:
    means: list  # T Nodes, (B, 2) ensemble means
    epistemic: list  # T Nodes (B, 1), or None when M == 1
    passes: list  # T lists of M Nodes (B, 2)
    thetas: list  # M weight dicts (None for a deterministic head)
    saa_scores: list  # B Nodes (1, 2), or None


def forward(tape, P, batch, mcfg, n_passes, rng, with_saa=True):
    """Unroll the network over the batch.

    ``P`` maps names to Nodes (training) or arrays (inference).
    """
    T, B, N = batch.T, batch.B, batch.N
    BN = B * N
    obj_e = ad.graph_conv(None, tape.constant(batch.obj), P["embed_obj_w"], P["embed_obj_b"])
    frame_e = ad.graph_conv(
        None, tape.constant(batch.frame), P["embed_frame_w"], P["embed_frame_b"]
    )
    X_all = ad.concat([obj_e, ad.repeat_rows(frame_e, N)], axis=1)

    if mcfg.bnn:
        mu, rho = head_posterior(P)
        shapes = bayes.head_shapes(mcfg.hidden_dim)
        thetas = [bayes.sample_weights(mu, rho, bayes.draw_noise(rng, shapes)) for _ in range(n_passes)]
    else:
        thetas = [{n: P[n] for n in bayes.HEAD_NAMES}] * n_passes

    h = tape.constant(np.zeros((BN, mcfg.hidden_dim)))
    means, epistemic, passes, states = [], [], [], []
    for t in range(T):
        X = ad.rows(X_all, t * BN, (t + 1) * BN)
        A = batch.adjacency[t]
        Z, h = relational_step(X, A, h, P, fusion=mcfg.fusion, gcn=mcfg.gcn)
        pooled = ad.segment_mean(Z, N)
        outs = [bayes.head_probs(pooled, theta) for theta in thetas]
        mean, ept = ensemble_moments(outs, n_passes)
        if not mcfg.bnn and ept is not None:
            ept = tape.constant(np.zeros((B, 1)))  # identical passes
        means.append(mean)
        epistemic.append(ept)
        passes.append(outs)
        states.append(h)

    saa_scores = None
    if mcfg.saa and with_saa:
        pooled_steps = [saa.pool_states(s, N) for s in states]  # T x (B, 2h)
        wide = ad.concat(pooled_steps, axis=1) if T > 1 else pooled_steps[0]
        saa_scores = []
        for b in range(B):
            S = ad.reshape(ad.rows(wide, b, b + 1), (T, 2 * mcfg.hidden_dim))
            saa_scores.append(saa.saa_video_score(S, P))
    return ForwardResult(
        means=means,
        epistemic=epistemic,
        passes=passes,
        thetas=thetas if mcfg.bnn else None,
        saa_scores=saa_scores,
    )


def predict_samples(params, mcfg, samples, n_passes, seed, eval_batch=30):
    """Per-video Monte-Carlo predictions, each an array (M, T, 2).

    Chunk c of ``eval_batch`` videos draws its head weights from
    ``default_rng([seed, c])``, so results depend only on seed and order.
    """
    out = []
    for c, start in enumerate(range(0, len(samples), eval_batch)):
        chunk = samples[start : start + eval_batch]
        batch = make_batch(chunk)
        rng = np.random.default_rng([seed, c])
        res = forward(ad.Tape(), params, batch, mcfg, n_passes, rng, with_saa=False)
        arr = np.stack([[o.value for o in step] for step in res.passes])  # (T, M, B, 2)
        for b in range(batch.B):
            out.append(np.ascontiguousarray(arr[:, :, b, :].transpose(1, 0, 2)))
    return out
