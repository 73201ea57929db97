"""Reparameterized samplers and analytic KL terms for the model's latents.

Three latent families: per-block winner indicators (relaxed categorical via
Gumbel-Softmax), connection/block inclusion variables (relaxed Bernoulli via
the binary Concrete), and stick variables on (0,1) (Kumaraswamy posterior
against a Beta(alpha,1) stick prior). Samplers accept Tensors so pathwise
gradients flow to the posterior parameters; every draw is a deterministic
function of (parameters, rng state).
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_EPS = 1e-6
NOISE_EPS = 1e-20


class RngStream:
    """Counter-based random stream: same seed, same sequence, always."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, name: str) -> "RngStream":
        """Derive an independent stream from a stable name."""
        digest = hashlib.blake2b(f"{self.seed}/{name}".encode(), digest_size=8).digest()
        return RngStream(int.from_bytes(digest, "little"))

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gumbel_noise(shape, rng: RngStream) -> np.ndarray:
    v = rng.uniform(shape)
    return -np.log(-np.log(v + NOISE_EPS) + NOISE_EPS)


def logistic_noise(shape, rng: RngStream) -> np.ndarray:
    v = rng.uniform(shape)
    v = np.clip(v, NOISE_EPS, 1.0 - 1e-16)
    return np.log(v) - np.log1p(-v)


def sample_gumbel_softmax(logits, temperature: float, rng: RngStream | None,
                          noise: np.ndarray | None = None) -> Tensor:
    """Relaxed one-hot sample: softmax((logits + Gumbel)/temperature), last axis."""
    logits = ad.ensure_tensor(logits)
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("sample_gumbel_softmax: non-finite logits")
    if temperature <= 0:
        raise ValueError("sample_gumbel_softmax: temperature must be positive")
    g = gumbel_noise(logits.shape, rng) if noise is None else noise
    return ad.softmax(ad.div(ad.add(logits, Tensor(g)), temperature), axis=-1)


def sample_bin_concrete(logit, temperature: float, rng: RngStream | None,
                        noise: np.ndarray | None = None) -> Tensor:
    """Relaxed Bernoulli in (0,1): sigmoid((logit + logistic noise)/temperature)."""
    logit = ad.ensure_tensor(logit)
    if not np.all(np.isfinite(logit.data)):
        raise ValueError("sample_bin_concrete: non-finite logit")
    if temperature <= 0:
        raise ValueError("sample_bin_concrete: temperature must be positive")
    eps = logistic_noise(logit.shape, rng) if noise is None else noise
    return ad.sigmoid(ad.div(ad.add(logit, Tensor(eps)), temperature))


def sample_kumaraswamy(a, b, rng: RngStream | None,
                       noise: np.ndarray | None = None) -> Tensor:
    """Inverse-CDF draw u = (1 - (1 - v)^(1/b))^(1/a), differentiable in a, b."""
    a = ad.ensure_tensor(a)
    b = ad.ensure_tensor(b)
    v = rng.uniform(a.shape) if noise is None else noise
    v = np.clip(v, 1e-12, 1.0 - 1e-12)
    # (1-v)^(1/b) = exp(log(1-v)/b); the outer root is taken the same way
    t = ad.exp(ad.div(Tensor(np.log1p(-v)), b))
    inner = ad.clamp(ad.sub(1.0, t), 1e-12, 1.0)
    return ad.exp(ad.div(ad.log(inner), a))


def sample_discrete_hard(probs, rng: RngStream) -> np.ndarray:
    """Exact categorical draw over the last axis, returned one-hot."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(p, axis=-1)
    v = rng.uniform(p.shape[:-1])[..., None]
    idx = np.minimum((v >= cdf).sum(axis=-1), p.shape[-1] - 1)
    out = np.zeros_like(p)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def sample_bernoulli_hard(prob: np.ndarray, rng: RngStream) -> np.ndarray:
    """Exact Bernoulli draw, elementwise."""
    p = np.asarray(prob, dtype=np.float64)
    return (rng.uniform(p.shape) < p).astype(np.float64)


def stick_products(u) -> Tensor:
    """Cumulative stick products pi_k = prod_{i<=k} u_i, nonincreasing in k."""
    u = ad.ensure_tensor(u)
    k = u.shape[-1] if u.ndim else 1
    if u.ndim != 1:
        raise ad.ShapeError("stick-products", u.shape)
    if k == 1:
        return u
    lower = np.tril(np.ones((k, k)))
    log_u = ad.log(ad.clamp(u, 1e-300, 1.0))
    cum = ad.matmul(Tensor(lower), ad.reshape(log_u, (k, 1)))
    return ad.reshape(ad.exp(cum), (k,))


# ---------------------------------------------------------------------------
# KL divergences

def kl_categorical_uniform(probs) -> Tensor:
    """KL(Categorical(p) || Discrete(1/U)) over the last axis: sum p log(p U)."""
    probs = ad.ensure_tensor(probs)
    u = probs.shape[-1]
    p = ad.clamp(probs, PROB_EPS, 1.0)
    return ad.tsum(ad.mul(p, ad.add(ad.log(p), float(np.log(u)))), axis=-1)


def kl_bernoulli(q, p) -> Tensor:
    """KL(Bernoulli(q) || Bernoulli(p)), both clamped into (0,1)."""
    q = ad.clamp(ad.ensure_tensor(q), PROB_EPS, 1.0 - PROB_EPS)
    p = ad.clamp(ad.ensure_tensor(p), PROB_EPS, 1.0 - PROB_EPS)
    one_q = ad.sub(1.0, q)
    one_p = ad.sub(1.0, p)
    return ad.add(ad.mul(q, ad.sub(ad.log(q), ad.log(p))),
                  ad.mul(one_q, ad.sub(ad.log(one_q), ad.log(one_p))))


def kl_kumaraswamy_beta(a, b, alpha: float) -> Tensor:
    """KL(Kumaraswamy(a,b) || Beta(alpha,1)), elementwise closed form.

    With the prior's second shape fixed at 1 the infinite-series term of the
    general Kumaraswamy-vs-Beta divergence vanishes, leaving

        (a-alpha)/a * (-gamma - psi(b) - 1/b) + log(a b) - log(alpha) - (b-1)/b
    """
    a = ad.ensure_tensor(a)
    b = ad.ensure_tensor(b)
    alpha = float(alpha)
    if alpha <= 0 or np.any(a.data <= 0) or np.any(b.data <= 0):
        raise ValueError("kl_kumaraswamy_beta: parameters must be positive")
    front = ad.div(ad.sub(a, alpha), a)
    inner = ad.sub(ad.neg(ad.digamma(b)), ad.add(ad.div(1.0, b), ad.EULER_GAMMA))
    logs = ad.sub(ad.add(ad.log(a), ad.log(b)), float(np.log(alpha)))
    tail = ad.div(ad.sub(b, 1.0), b)
    return ad.sub(ad.add(ad.mul(front, inner), logs), tail)
