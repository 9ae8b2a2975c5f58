"""Aleatoric/epistemic decomposition of Monte-Carlo predictions and the
epistemic ranking loss."""
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError


@dataclass
class PredictionStep:
    samples: np.ndarray  # (M, 2)
    mean: np.ndarray = field(init=False)
    U_alt: np.ndarray = field(init=False)
    U_ept: np.ndarray = field(init=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.mean = self.samples.mean(axis=0)
        self.U_alt, self.U_ept = decompose(self.samples)

    @property
    def aleatoric(self):
        return float(np.trace(self.U_alt))

    @property
    def epistemic(self):
        return float(np.trace(self.U_ept))


def decompose(samples):
    """Split the predictive covariance of M simplex samples.

    U_alt = mean_i[diag(a_i) - a_i a_i^T]
    U_ept = mean_i[(a_i - abar)(a_i - abar)^T]

    ``samples`` is (M, C) or batched (M, ..., C); the matrices come back with
    shape (..., C, C).
    """
    a = np.asarray(samples, dtype=np.float64)
    if a.ndim < 2 or a.shape[0] < 1:
        raise ContractError("decompose needs at least one sample")
    m = a.shape[0]
    outer = a[..., :, None] * a[..., None, :]
    diag = np.zeros_like(outer)
    idx = np.arange(a.shape[-1])
    diag[..., idx, idx] = a
    u_alt = (diag - outer).sum(axis=0) / m
    dev = _deviations(a)
    u_ept = (dev[..., :, None] * dev[..., None, :]).sum(axis=0) / m
    return u_alt, u_ept


def uncertainty_traces(samples):
    """(trace U_alt, trace U_ept) without forming the matrices.

    trace U_alt = mean_i(1 - |a_i|^2), trace U_ept = mean_i |a_i - abar|^2.
    """
    a = np.asarray(samples, dtype=np.float64)
    if a.shape[0] < 1:
        raise ContractError("need at least one sample")
    alt = (a.sum(axis=-1) - (a * a).sum(axis=-1)).mean(axis=0)
    dev = _deviations(a)
    ept = (dev * dev).sum(axis=-1).mean(axis=0)
    return alt, ept


def _deviations(a):
    """a_i - abar, shifted by the first sample first so identical samples
    give exactly zero (a plain mean of equal floats can round)."""
    d = a - a[0]
    return d - d.mean(axis=0)


def ranking_loss(ept_traces):
    """Sum over consecutive steps of max(0, tr_t - tr_{t-1})."""
    tr = np.asarray(ept_traces, dtype=np.float64)
    if tr.shape[-1] < 2:
        return 0.0 if tr.ndim == 1 else np.zeros(tr.shape[:-1])
    return np.maximum(0.0, np.diff(tr, axis=-1)).sum(axis=-1)


def ensemble_moments(samples, n_passes):
    """Ensemble mean (B, C) and epistemic trace (B, 1) from pass outputs.

    ``samples`` is a list of ``n_passes`` Nodes, each (B, C). Everything is
    expressed with matmuls against constant matrices so the op count does
    not grow with the number of passes.
    """
    c = samples[0].value.shape[1]
    stacked = ad.concat(samples, axis=1) if n_passes > 1 else samples[0]
    eye = np.eye(c)
    avg = np.tile(eye, (n_passes, 1)) / n_passes  # (M*C, C)
    mean = ad.matmul(stacked, avg)
    if n_passes == 1:
        return mean, None
    rep = np.tile(eye, (1, n_passes))  # (C, M*C)
    dev = ad.sub(stacked, ad.matmul(mean, rep))
    ept = ad.matmul(ad.square(dev), np.full((n_passes * c, 1), 1.0 / n_passes))
    return mean, ept


def ranking_loss_node(traces):
    """Differentiable ranking loss, summed over videos.

    ``traces`` is a (B, T) Node of per-step epistemic traces.
    """
    t = traces.value.shape[1]
    if t < 2:
        return None
    diff = np.zeros((t, t - 1))
    diff[np.arange(t - 1), np.arange(t - 1)] = -1.0
    diff[np.arange(1, t), np.arange(t - 1)] = 1.0
    return ad.sum(ad.max0(ad.matmul(traces, diff)))


def mean_uncertainties(alt_traces, ept_traces):
    """(mAU, mEU): flat means over every evaluated frame."""
    alt, ept = _flatten(alt_traces), _flatten(ept_traces)
    if alt.size == 0 or ept.size == 0:
        raise ContractError("mean_uncertainties needs at least one frame")
    return float(alt.mean()), float(ept.mean())


def _flatten(traces):
    if isinstance(traces, (list, tuple)):
        if not traces:
            return np.empty(0)
        return np.concatenate([np.ravel(t) for t in traces])
    return np.ravel(traces)


def mean_uncertainties_of_steps(steps):
    steps = list(steps)
    if not steps:
        raise ContractError("mean_uncertainties needs at least one step")
    return mean_uncertainties([s.aleatoric for s in steps], [s.epistemic for s in steps])
