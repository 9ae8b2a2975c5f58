"""Objective, optimizer, scheduler and the training loop."""
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import bayes, saa
from .config import ModelConfig, TrainConfig
from .errors import ContractError, NumericError, ValidationError
from .metrics import average_precision
from .model import forward, head_posterior, init_params, make_batch, predict_samples, prior_of
from .uncertainty import ranking_loss_node

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


# -- losses --------------------------------------------------------------------


def exp_weights(T, positive, accident_frame, fps):
    """Per-frame weights (T, 2) over the (a_n, a_p) columns.

    Positive videos weight the accident column by exp(-max(0, (y - t) / f));
    negative videos weight the no-accident column by 1.
    """
    w = np.zeros((T, 2))
    if positive:
        if accident_frame is None:
            raise ValidationError("positive video without an accident frame")
        t = np.arange(1, T + 1)
        w[:, 1] = np.exp(-np.maximum(0.0, (accident_frame - t) / fps))
    else:
        w[:, 0] = 1.0
    return w


def exp_loss(mean_scores, positive, accident_frame, fps):
    """Exponentially weighted frame cross-entropy for one video.

    ``mean_scores`` is (T, 2) rows of ensemble-mean (a_n, a_p). Negative
    videos are charged -log(1 - p_t) = -log a_n.
    """
    a = np.asarray(mean_scores, dtype=np.float64)
    w = exp_weights(a.shape[0], positive, accident_frame, fps)
    return float(-(w * np.log(np.clip(a, PROB_FLOOR, 1.0))).sum())


def exp_loss_node(means, batch):
    """Batch sum of exp_loss over (B, 2) per-step mean Nodes."""
    T = len(means)
    wide = ad.concat(means, axis=1) if T > 1 else means[0]  # (B, 2T)
    W = np.stack(
        [
            exp_weights(T, p, y if p else None, f).reshape(-1)
            for p, y, f in zip(batch.positive, batch.accident_frame, batch.fps)
        ]
    )
    return ad.neg(ad.sum(ad.mul(ad.log(ad.clip(wide, PROB_FLOOR, 1.0)), W)))


@dataclass
class LossBreakdown:
    l_exp: float = 0.0
    l_vpos: float = 0.0
    l_pri: float = 0.0
    l_rank: float = 0.0
    l_bce: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return asdict(self)


def total_loss(l_exp, l_vpos, l_pri, l_rank, l_bce, w1, w2, w3):
    """L_EXP + w1 (L_VPOS - L_PRI) + w2 L_RANK + w3 L_BCE (floats or Nodes)."""
    return l_exp + w1 * (l_vpos - l_pri) + w2 * l_rank + w3 * l_bce


def batch_objective(tape, P, batch, mcfg, cfg, rng):
    """Build the batch objective; returns (total Node, LossBreakdown).

    Data terms are averaged over the videos of the batch, the complexity
    terms over the Monte-Carlo passes. Disabled terms contribute exactly 0.
    """
    res = forward(tape, P, batch, mcfg, cfg.m_train, rng, with_saa=mcfg.saa)
    B = batch.B
    inv_b = 1.0 / B
    l_exp = ad.mul(exp_loss_node(res.means, batch), inv_b)
    total = l_exp
    parts = LossBreakdown(l_exp=float(l_exp.value))

    if mcfg.bnn:
        mu, rho = head_posterior(P)
        prior = prior_of(mcfg)
        vpos = [bayes.variational_posterior_loss(th, mu, rho) for th in res.thetas]
        pri = [bayes.prior_loss(th, prior) for th in res.thetas]
        inv_m = 1.0 / len(res.thetas)
        l_vpos = ad.mul(_sum_nodes(vpos), inv_m)
        l_pri = ad.mul(_sum_nodes(pri), inv_m)
        parts.l_vpos, parts.l_pri = float(l_vpos.value), float(l_pri.value)
        if cfg.w1:
            total = ad.add(total, ad.mul(ad.sub(l_vpos, l_pri), cfg.w1))

    if mcfg.bnn and cfg.rankloss_enabled and res.epistemic[0] is not None:
        traces = ad.concat(res.epistemic, axis=1)  # (B, T)
        rank = ranking_loss_node(traces)
        if rank is not None:
            l_rank = ad.mul(rank, inv_b)
            parts.l_rank = float(l_rank.value)
            if cfg.w2:
                total = ad.add(total, ad.mul(l_rank, cfg.w2))

    if mcfg.saa and res.saa_scores is not None:
        bces = [saa.video_bce(a, bool(p)) for a, p in zip(res.saa_scores, batch.positive)]
        l_bce = ad.mul(_sum_nodes(bces), inv_b)
        parts.l_bce = float(l_bce.value)
        if cfg.w3:
            total = ad.add(total, ad.mul(l_bce, cfg.w3))

    parts.total = float(total.value)
    return total, parts


def _sum_nodes(nodes):
    out = nodes[0]
    for n in nodes[1:]:
        out = ad.add(out, n)
    return out


# -- optimizer -----------------------------------------------------------------


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, name="param"):
    """One bias-corrected Adam update; returns (param, m, v) as new arrays."""
    if t < 1:
        raise ContractError("Adam step counter starts at 1")
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for {name}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        out = {}
        for name, p in params.items():
            out[name], self.m[name], self.v[name] = adam_step(
                p, grads[name], self.m[name], self.v[name], self.t, lr,
                self.beta1, self.beta2, self.eps, name,
            )
        return out


class PlateauScheduler:
    """Multiply lr by ``factor`` once the monitored loss has failed to improve
    for more than ``patience`` consecutive epochs; never go below ``min_lr``."""

    def __init__(self, lr, factor=0.5, patience=5, min_lr=1e-6):
        self.lr = lr
        self.factor, self.patience, self.min_lr = factor, patience, min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric):
        if metric < self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.lr


def reduce_lr_on_plateau(history, lr, factor=0.5, patience=5, min_lr=1e-6):
    """Learning rate after replaying ``history`` through a PlateauScheduler."""
    if len(history) == 0:
        raise ContractError("need at least one epoch of history")
    sched = PlateauScheduler(lr, factor, patience, min_lr)
    for value in history:
        sched.step(value)
    return sched.lr


# -- training loop -------------------------------------------------------------


@dataclass
class TrainResult:
    model_config: ModelConfig
    params: dict  # last epoch
    best_params: dict
    best_epoch: int | None
    best_ap: float | None
    logs: list = field(default_factory=list)


def _check_uniform(samples):
    first = samples[0]
    for s in samples:
        if (s.T, s.N, s.d_obj, s.d_frame) != (first.T, first.N, first.d_obj, first.d_frame):
            raise ValidationError(f"{s.video_id}: shape differs from {first.video_id}")


def validation_ap(params, mcfg, samples, cfg, seed):
    if not samples or not any(s.positive for s in samples):
        return None
    preds = predict_samples(params, mcfg, samples, cfg.m_test, seed, cfg.eval_batch)
    scores = np.concatenate([p[:, :, 1].mean(axis=0) for p in preds])
    labels = np.concatenate([np.full(s.T, int(s.positive)) for s in samples])
    return average_precision(scores, labels)


def train(train_set, cfg=None, val_set=None, on_epoch=None):
    """Train on ``train_set``; keep last-epoch and best-validation-AP weights.

    With no ``val_set`` the training set doubles as validation data.
    ``on_epoch(record)`` is called with each epoch's log record.
    """
    cfg = cfg or TrainConfig()
    if not train_set:
        raise ValidationError("empty training set")
    _check_uniform(train_set)
    mcfg = ModelConfig.for_data(train_set[0], cfg)
    params = init_params(mcfg, np.random.default_rng([cfg.seed, 0]))
    if cfg.epochs == 0:
        snapshot = {k: v.copy() for k, v in params.items()}
        return TrainResult(mcfg, params, snapshot, None, None, [])
    val = val_set if val_set is not None else train_set
    _check_uniform(list(train_set) + list(val))

    adam = Adam(params)
    sched = PlateauScheduler(cfg.lr, cfg.lr_factor, cfg.lr_patience, cfg.min_lr)
    lr = cfg.lr
    cache = {}
    logs = []
    best_ap, best_epoch, best_params = -1.0, None, None
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(n)
        sums = LossBreakdown()
        n_batches = 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            chunk = [train_set[i] for i in order[start : start + cfg.batch_size]]
            batch = make_batch(chunk, cache)
            tape = ad.Tape()
            P = {k: tape.variable(v) for k, v in params.items()}
            rng = np.random.default_rng([cfg.seed, 2, epoch, bi])
            total, parts = batch_objective(tape, P, batch, mcfg, cfg, rng)
            if not math.isfinite(parts.total):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads = tape.backward(total)
            try:
                params = adam.step(params, {k: grads[P[k]] for k in params}, lr)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {bi}: {exc}") from None
            for key, value in parts.as_dict().items():
                setattr(sums, key, getattr(sums, key) + value)
            n_batches += 1
        epoch_loss = LossBreakdown(**{k: v / n_batches for k, v in sums.as_dict().items()})
        ap = validation_ap(params, mcfg, val, cfg, seed=cfg.seed)
        record = {"epoch": epoch, **epoch_loss.as_dict(), "lr": lr, "val_ap": ap}
        logs.append(record)
        log.info(
            "epoch %d total %.4f exp %.4f rank %.4f bce %.4f lr %.2e val_ap %s",
            epoch, epoch_loss.total, epoch_loss.l_exp, epoch_loss.l_rank, epoch_loss.l_bce,
            lr, "n/a" if ap is None else f"{ap:.4f}",
        )
        if on_epoch is not None:
            on_epoch(record)
        if ap is not None and ap > best_ap:
            best_ap, best_epoch = ap, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        lr = sched.step(epoch_loss.total)
    if best_params is None:
        best_params = {k: v.copy() for k, v in params.items()}
        best_epoch, best_ap = cfg.epochs, None
    return TrainResult(mcfg, params, best_params, best_epoch, best_ap, logs)
