"""Two-layer Bayes-by-backprop prediction head.

Every weight and bias has a Gaussian posterior N(mu, softplus(rho)^2);
concrete weights are drawn with the reparameterization
theta = mu + softplus(rho) * eps so gradients reach mu and rho.
The prior is a zero-mean two-Gaussian (spike-and-slab) mixture.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError, ValidationError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

HEAD_NAMES = ("bnn1_w", "bnn1_b", "bnn2_w", "bnn2_b")


@dataclass(frozen=True)
class PriorSpec:
    """Mixture prior pi * N(0, sigma1^2) + (1 - pi) * N(0, sigma2^2).

    sigma1 and sigma2 are standard deviations; set ``as_variance`` to read
    them as variances instead.
    """

    pi: float = 0.5
    sigma1: float = 1.0
    sigma2: float = math.exp(-6.0)
    as_variance: bool = False

    def __post_init__(self):
        if not 0.0 <= self.pi <= 1.0:
            raise ValidationError(f"prior mixture ratio must be in [0, 1], got {self.pi}")
        if not self.sigma1 > self.sigma2 > 0.0:
            raise ValidationError("prior needs sigma1 > sigma2 > 0")

    @property
    def stds(self):
        if self.as_variance:
            return math.sqrt(self.sigma1), math.sqrt(self.sigma2)
        return self.sigma1, self.sigma2


def head_shapes(hidden_dim):
    half = hidden_dim // 2
    if half < 1:
        raise ValidationError("hidden_dim must be at least 2")
    return {
        "bnn1_w": (hidden_dim, half),
        "bnn1_b": (half,),
        "bnn2_w": (half, 2),
        "bnn2_b": (2,),
    }


def init_posterior(rng, hidden_dim, rho_init=-3.0, mu_range=0.1):
    """mu ~ U(-mu_range, mu_range), rho constant (sigma ~ 0.049 at -3)."""
    mu, rho = {}, {}
    for name, shape in head_shapes(hidden_dim).items():
        mu[name] = rng.uniform(-mu_range, mu_range, size=shape)
        rho[name] = np.full(shape, float(rho_init))
    return mu, rho


def softplus(x):
    return np.logaddexp(0.0, x)


def draw_noise(rng, shapes):
    return {name: rng.standard_normal(shape) for name, shape in shapes.items()}


def sample_weights(mu, rho, noise):
    """theta_j = mu_j + softplus(rho_j) * eps_j for every named parameter.

    Works on Nodes (differentiable) or plain arrays.
    """
    if set(noise) != set(mu) or set(rho) != set(mu):
        raise ContractError("need exactly one noise draw and one rho per parameter")
    theta = {}
    for name in mu:
        m, r, e = mu[name], rho[name], noise[name]
        if np.shape(e) != _shape(m) or _shape(r) != _shape(m):
            raise ContractError(f"noise/rho shape mismatch for {name}")
        if isinstance(m, ad.Node) or isinstance(r, ad.Node):
            tape = (m if isinstance(m, ad.Node) else r).tape
            r = r if isinstance(r, ad.Node) else tape.constant(r)
            theta[name] = ad.add(m, ad.mul(ad.softplus(r), e))
        else:
            theta[name] = m + softplus(r) * e
    return theta


def _shape(x):
    return x.value.shape if isinstance(x, ad.Node) else np.shape(x)


def bnn_forward(Z, theta, pool_size=None):
    """Mean-pool node features, then affine+relu, affine, softmax.

    ``Z`` is (R, h) with R = groups * pool_size; each block of ``pool_size``
    rows is one frame. Returns (groups, 2) rows of (a_n, a_p). A plain array
    input gives an array output.
    """
    as_array = not isinstance(Z, ad.Node) and not any(isinstance(v, ad.Node) for v in theta.values())
    tape = Z.tape if isinstance(Z, ad.Node) else next(
        (v.tape for v in theta.values() if isinstance(v, ad.Node)), ad.Tape()
    )
    if not isinstance(Z, ad.Node):
        Z = tape.constant(np.atleast_2d(Z))
    size = pool_size or Z.value.shape[0]
    if Z.value.shape[1] != _shape(theta["bnn1_w"])[0]:
        raise DimensionError(f"features {Z.value.shape} vs layer-1 weight {_shape(theta['bnn1_w'])}")
    out = head_probs(ad.segment_mean(Z, size), theta)
    return out.value if as_array else out


def head_probs(pooled, theta):
    """Affine + relu, affine, softmax on already pooled (G, h) features."""
    h1 = ad.graph_conv(None, pooled, theta["bnn1_w"], theta["bnn1_b"], "relu")
    logits = ad.graph_conv(None, h1, theta["bnn2_w"], theta["bnn2_b"], "identity")
    return ad.softmax(logits)


def gaussian_log_density(x, mean, std):
    return -LOG_SQRT_2PI - np.log(std) - 0.5 * ((x - mean) / std) ** 2


def variational_posterior_loss(theta, mu, rho):
    """Sum over parameters of log N(theta | mu, softplus(rho)^2)."""
    tape = _first_tape(theta, mu, rho)
    if tape is None:
        return float(
            sum(gaussian_log_density(theta[k], mu[k], softplus(rho[k])).sum() for k in theta)
        )
    total = None
    for name in theta:
        t, m, r = (_node(d[name], tape) for d in (theta, mu, rho))
        sigma = ad.softplus(r)
        # log N = -log(2 pi)/2 - log sigma - (t - m)^2 / (2 sigma^2)
        z = ad.mul(ad.sub(t, m), ad.reciprocal(sigma))
        term = ad.sum(ad.add(ad.log(sigma), ad.mul(ad.square(z), 0.5)))
        term = ad.sub(-LOG_SQRT_2PI * t.value.size, term)
        total = term if total is None else ad.add(total, term)
    return total


def prior_loss(theta, prior=PriorSpec()):
    """Sum over parameters of log[pi N(theta|0,s1^2) + (1-pi) N(theta|0,s2^2)]."""
    s1, s2 = prior.stds
    tape = _first_tape(theta)
    if tape is None:
        total = 0.0
        for v in theta.values():
            total += float(_mixture_log_density_np(np.asarray(v), prior.pi, s1, s2).sum())
        return total
    total = None
    for v in theta.values():
        v = _node(v, tape)
        sq = ad.square(v)
        parts = []
        for weight, s in ((prior.pi, s1), (1.0 - prior.pi, s2)):
            if weight <= 0.0:
                continue
            c = math.log(weight) - LOG_SQRT_2PI - math.log(s)
            parts.append(ad.add(ad.mul(sq, -0.5 / (s * s)), c))
        term = parts[0] if len(parts) == 1 else ad.logaddexp(parts[0], parts[1])
        term = ad.sum(term)
        total = term if total is None else ad.add(total, term)
    return total


def _mixture_log_density_np(x, pi, s1, s2):
    parts = []
    for weight, s in ((pi, s1), (1.0 - pi, s2)):
        if weight > 0.0:
            parts.append(math.log(weight) + gaussian_log_density(x, 0.0, s))
    return parts[0] if len(parts) == 1 else np.logaddexp(parts[0], parts[1])


def complexity_loss(theta, mu, rho, prior=PriorSpec()):
    """L_VPOS - L_PRI for one weight draw."""
    vpos = variational_posterior_loss(theta, mu, rho)
    pri = prior_loss(theta, prior)
    if isinstance(vpos, ad.Node) or isinstance(pri, ad.Node):
        return ad.sub(vpos, pri)
    return vpos - pri


def predict_multi(Z, mu, rho, n_passes, rng, pool_size=None, deterministic=False):
    """M independent weight draws, each followed by bnn_forward.

    Returns an array (M, groups, 2). With ``deterministic`` the posterior
    means are used for every pass (the plain-layer ablation).
    """
    if n_passes < 1:
        raise ContractError(f"need at least one forward pass, got {n_passes}")
    shapes = {k: np.shape(v) for k, v in mu.items()}
    out = []
    for _ in range(n_passes):
        if deterministic:
            theta = mu
        else:
            theta = sample_weights(mu, rho, draw_noise(rng, shapes))
        out.append(bnn_forward(np.asarray(Z), theta, pool_size))
    return np.stack(out)


def _first_tape(*dicts):
    for d in dicts:
        for v in d.values():
            if isinstance(v, ad.Node):
                return v.tape
    return None


def _node(x, tape):
    return x if isinstance(x, ad.Node) else tape.constant(x)
