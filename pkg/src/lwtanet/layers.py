"""Network layers: stochastic LWTA blocks, IBP-masked output, plain baselines.

A dense LWTA layer groups its K*U linear units into K blocks of U competitors.
Each unit computes a z-masked inner product; the block winner is selected from
a softmax over the block's activations and only the winner's value leaves the
block. Inclusion variables z carry an IBP stick-breaking prior so unused
connections (dense) or whole kernels (conv) can be switched off.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import stochastic as st
from .autodiff import Tensor
from .stochastic import RngStream


class Mode(enum.Enum):
    TRAIN_RELAXED = "train_relaxed"
    EVAL_SAMPLE = "eval_sample"
    DETERMINISTIC_MAX = "deterministic_max"


@dataclass(frozen=True)
class LayerMode:
    """Forward-pass mode: winner rule, IBP switch, relaxation temperature.

    ``relax_z`` applies only under DETERMINISTIC_MAX and requests Concrete z
    draws (needed to train a max-winner model that still carries the IBP).
    """

    kind: Mode
    ibp_enabled: bool = True
    temperature: float = 0.67
    relax_z: bool = False

    @staticmethod
    def train_relaxed(ibp_enabled=True, temperature=0.67):
        return LayerMode(Mode.TRAIN_RELAXED, ibp_enabled, temperature)

    @staticmethod
    def eval_sample(ibp_enabled=True):
        return LayerMode(Mode.EVAL_SAMPLE, ibp_enabled)

    @staticmethod
    def deterministic_max(ibp_enabled=True, temperature=0.67, relax_z=False):
        return LayerMode(Mode.DETERMINISTIC_MAX, ibp_enabled, temperature, relax_z)


class NoiseCache(dict):
    """Keyed store of frozen draws; reuse a cache to replay identical noise."""

    def take(self, key, draw):
        if key not in self:
            self[key] = draw()
        return self[key]


def _zero() -> Tensor:
    return Tensor(0.0)


class IbpVariationalState:
    """Per-layer IBP posterior: Bernoulli inclusion logits + Kumaraswamy sticks."""

    def __init__(self, z_shape, n_sticks: int, name: str):
        self.name = name
        self.z_logits = Tensor(np.full(z_shape, 3.0), requires_grad=True)
        self.stick_log_a = Tensor(np.full(n_sticks, np.log(float(n_sticks))), requires_grad=True)
        self.stick_log_b = Tensor(np.zeros(n_sticks), requires_grad=True)

    def params(self):
        return [(f"{self.name}.z_logits", self.z_logits),
                (f"{self.name}.stick_log_a", self.stick_log_a),
                (f"{self.name}.stick_log_b", self.stick_log_b)]

    def pi_tilde(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.z_logits.data))

    def draw_z(self, mode: LayerMode, rng: RngStream, noise: NoiseCache | None) -> Tensor:
        """One z realization per forward pass, shared across the batch."""
        relaxed = mode.kind is Mode.TRAIN_RELAXED or (
            mode.kind is Mode.DETERMINISTIC_MAX and mode.relax_z)
        if relaxed:
            key = f"{self.name}.z_noise"
            draw = lambda: st.logistic_noise(self.z_logits.shape, rng)
            eps = noise.take(key, draw) if noise is not None else draw()
            return st.sample_bin_concrete(self.z_logits, mode.temperature, None, noise=eps)
        key = f"{self.name}.z_sample"
        draw = lambda: st.sample_bernoulli_hard(self.pi_tilde(), rng)
        z = noise.take(key, draw) if noise is not None else draw()
        return Tensor(z)

    def kl(self, rng: RngStream, alpha: float, noise: NoiseCache | None):
        """(kl_z, kl_u): z against Bernoulli(pi_k(u-draw)), sticks in closed form."""
        a = ad.exp(self.stick_log_a)
        b = ad.exp(self.stick_log_b)
        kl_u = ad.tsum(st.kl_kumaraswamy_beta(a, b, alpha))
        key = f"{self.name}.u_noise"
        draw = lambda: rng.uniform(a.shape)
        v = noise.take(key, draw) if noise is not None else draw()
        u = st.sample_kumaraswamy(a, b, None, noise=v)
        pi = st.stick_products(u)
        pi_tilde = ad.sigmoid(self.z_logits)
        kl_z = ad.tsum(st.kl_bernoulli(pi_tilde, ad.broadcast_to(pi, self.z_logits.shape)))
        return kl_z, kl_u


def _draw_winner(h: Tensor, probs: Tensor, mode: LayerMode, rng: RngStream,
                 noise: NoiseCache | None, name: str) -> Tensor:
    """Winner mask [B,K,U]: relaxed sample, hard sample, or argmax one-hot."""
    if mode.kind is Mode.TRAIN_RELAXED:
        key = f"{name}.xi_noise"
        draw = lambda: st.gumbel_noise(h.shape, rng)
        g = noise.take(key, draw) if noise is not None else draw()
        return st.sample_gumbel_softmax(h, mode.temperature, None, noise=g)
    if mode.kind is Mode.EVAL_SAMPLE:
        key = f"{name}.xi_sample"
        draw = lambda: st.sample_discrete_hard(probs.data, rng)
        return Tensor(noise.take(key, draw) if noise is not None else draw())
    # deterministic max, ties to the lowest unit index
    arg = h.data.argmax(axis=-1)
    hard = np.zeros_like(h.data)
    np.put_along_axis(hard, arg[..., None], 1.0, axis=-1)
    return Tensor(hard)


class DenseLwtaLayer:
    """Fully connected LWTA layer: weights [J,K,U], IBP mask over (j,k)."""

    def __init__(self, n_in: int, blocks: int, units: int, rng: RngStream,
                 bias: bool = False, ibp: bool = True, name: str = "dense_lwta"):
        self.n_in, self.blocks, self.units = int(n_in), int(blocks), int(units)
        self.name = name
        scale = np.sqrt(2.0 / (self.n_in * self.units))
        self.W = Tensor(rng.normal((self.n_in, self.blocks, self.units)) * scale,
                        requires_grad=True)
        self.bias = Tensor(np.zeros((self.blocks, self.units)), requires_grad=True) if bias else None
        self.ibp = IbpVariationalState((self.n_in, self.blocks), self.blocks, name) if ibp else None
        self.last_winner_probs: Tensor | None = None

    @property
    def out_width(self) -> int:
        return self.blocks * self.units

    def params(self):
        out = [(f"{self.name}.W", self.W)]
        if self.bias is not None:
            out.append((f"{self.name}.bias", self.bias))
        if self.ibp is not None:
            out.extend(self.ibp.params())
        return out

    def forward(self, x: Tensor, mode: LayerMode, rng: RngStream,
                noise: NoiseCache | None = None) -> Tensor:
        x = ad.ensure_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ad.ShapeError(f"{self.name}.forward", x.shape, self.W.shape)
        J, K, U = self.n_in, self.blocks, self.units
        if self.ibp is not None and mode.ibp_enabled:
            z = self.ibp.draw_z(mode, rng, noise)
            wm = ad.mul(self.W, ad.reshape(z, (J, K, 1)))
        else:
            wm = self.W
        h = ad.reshape(ad.matmul(x, ad.reshape(wm, (J, K * U))), (-1, K, U))
        if self.bias is not None:
            h = ad.add(h, ad.reshape(self.bias, (1, K, U)))
        probs = ad.softmax(h, axis=-1)
        self.last_winner_probs = probs
        xi = _draw_winner(h, probs, mode, rng, noise, self.name)
        return ad.reshape(ad.mul(xi, h), (-1, K * U))


class ConvLwtaLayer:
    """Convolutional LWTA layer: K kernels, each an LWTA block of U feature maps.

    Inclusion z masks whole kernels; the block winner is driven by the spatial
    sum of each competing feature map and multiplies the entire map.
    """

    def __init__(self, kernel: tuple[int, int], in_channels: int, blocks: int,
                 units: int, rng: RngStream, stride: int = 1, padding: str = "same",
                 ibp: bool = True, name: str = "conv_lwta"):
        self.kh, self.kw = int(kernel[0]), int(kernel[1])
        self.in_channels = int(in_channels)
        self.blocks, self.units = int(blocks), int(units)
        self.stride, self.padding = int(stride), padding
        self.name = name
        scale = np.sqrt(2.0 / (self.kh * self.kw * self.in_channels * self.units))
        self.W = Tensor(rng.normal((self.kh, self.kw, self.in_channels,
                                    self.blocks * self.units)) * scale,
                        requires_grad=True)
        self.ibp = IbpVariationalState((self.blocks,), self.blocks, name) if ibp else None
        self.last_winner_probs: Tensor | None = None

    @property
    def out_channels(self) -> int:
        return self.blocks * self.units

    def params(self):
        out = [(f"{self.name}.W", self.W)]
        if self.ibp is not None:
            out.extend(self.ibp.params())
        return out

    def forward(self, x: Tensor, mode: LayerMode, rng: RngStream,
                noise: NoiseCache | None = None) -> Tensor:
        x = ad.ensure_tensor(x)
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ad.ShapeError(f"{self.name}.forward", x.shape, self.W.shape)
        K, U = self.blocks, self.units
        if self.ibp is not None and mode.ibp_enabled:
            z = self.ibp.draw_z(mode, rng, noise)                     # [K]
            z_maps = ad.index_select(z, 0, np.repeat(np.arange(K), U))
            w = ad.mul(self.W, ad.reshape(z_maps, (1, 1, 1, K * U)))
        else:
            w = self.W
        y = ad.conv2d(x, w, stride=self.stride, padding=self.padding)
        B, oh, ow = y.shape[0], y.shape[1], y.shape[2]
        y5 = ad.reshape(y, (B, oh, ow, K, U))
        s = ad.tsum(y5, axis=(1, 2))                                  # [B,K,U]
        probs = ad.softmax(s, axis=-1)
        self.last_winner_probs = probs
        xi = _draw_winner(s, probs, mode, rng, noise, self.name)
        out5 = ad.mul(y5, ad.reshape(xi, (B, 1, 1, K, U)))
        return ad.reshape(out5, (B, oh, ow, K * U))


class IbpDenseOutput:
    """Output layer: raw code-bit activations t_c = sum_j w_jc z_jc x_j.

    No winner sampling here; the head nonlinearity is applied downstream by
    the codes module.
    """

    def __init__(self, n_in: int, n_bits: int, rng: RngStream,
                 ibp: bool = True, name: str = "output"):
        self.n_in, self.n_bits = int(n_in), int(n_bits)
        self.name = name
        scale = np.sqrt(2.0 / self.n_in)
        self.W = Tensor(rng.normal((self.n_in, self.n_bits)) * scale, requires_grad=True)
        self.ibp = IbpVariationalState((self.n_in, self.n_bits), self.n_bits, name) if ibp else None
        self.last_winner_probs = None

    @property
    def out_width(self) -> int:
        return self.n_bits

    def params(self):
        out = [(f"{self.name}.W", self.W)]
        if self.ibp is not None:
            out.extend(self.ibp.params())
        return out

    def forward(self, x: Tensor, mode: LayerMode, rng: RngStream,
                noise: NoiseCache | None = None) -> Tensor:
        x = ad.ensure_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ad.ShapeError(f"{self.name}.forward", x.shape, self.W.shape)
        if self.ibp is not None and mode.ibp_enabled:
            z = self.ibp.draw_z(mode, rng, noise)
            wm = ad.mul(self.W, z)
        else:
            wm = self.W
        return ad.matmul(x, wm)


class DenseLayer:
    """Plain dense layer for the ReLU baseline; optional IBP masking."""

    def __init__(self, n_in: int, n_out: int, rng: RngStream, activation: str = "relu",
                 bias: bool = False, ibp: bool = False, name: str = "dense"):
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.activation = activation
        self.name = name
        scale = np.sqrt(2.0 / self.n_in)
        self.W = Tensor(rng.normal((self.n_in, self.n_out)) * scale, requires_grad=True)
        self.bias = Tensor(np.zeros(self.n_out), requires_grad=True) if bias else None
        self.ibp = IbpVariationalState((self.n_in, self.n_out), self.n_out, name) if ibp else None
        self.last_winner_probs = None

    @property
    def out_width(self) -> int:
        return self.n_out

    def params(self):
        out = [(f"{self.name}.W", self.W)]
        if self.bias is not None:
            out.append((f"{self.name}.bias", self.bias))
        if self.ibp is not None:
            out.extend(self.ibp.params())
        return out

    def forward(self, x: Tensor, mode: LayerMode, rng: RngStream,
                noise: NoiseCache | None = None) -> Tensor:
        x = ad.ensure_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ad.ShapeError(f"{self.name}.forward", x.shape, self.W.shape)
        if self.ibp is not None and mode.ibp_enabled:
            z = self.ibp.draw_z(mode, rng, noise)
            wm = ad.mul(self.W, z)
        else:
            wm = self.W
        h = ad.matmul(x, wm)
        if self.bias is not None:
            h = ad.add(h, self.bias)
        return ad.relu(h) if self.activation == "relu" else h


class ConvLayer:
    """Plain convolution + ReLU for the baseline; optional per-kernel IBP."""

    def __init__(self, kernel: tuple[int, int], in_channels: int, n_filters: int,
                 rng: RngStream, stride: int = 1, padding: str = "same",
                 ibp: bool = False, name: str = "conv"):
        self.kh, self.kw = int(kernel[0]), int(kernel[1])
        self.in_channels, self.n_filters = int(in_channels), int(n_filters)
        self.stride, self.padding = int(stride), padding
        self.name = name
        scale = np.sqrt(2.0 / (self.kh * self.kw * self.in_channels))
        self.W = Tensor(rng.normal((self.kh, self.kw, self.in_channels, self.n_filters)) * scale,
                        requires_grad=True)
        self.ibp = IbpVariationalState((self.n_filters,), self.n_filters, name) if ibp else None
        self.last_winner_probs = None

    @property
    def out_channels(self) -> int:
        return self.n_filters

    def params(self):
        out = [(f"{self.name}.W", self.W)]
        if self.ibp is not None:
            out.extend(self.ibp.params())
        return out

    def forward(self, x: Tensor, mode: LayerMode, rng: RngStream,
                noise: NoiseCache | None = None) -> Tensor:
        x = ad.ensure_tensor(x)
        if self.ibp is not None and mode.ibp_enabled:
            z = self.ibp.draw_z(mode, rng, noise)
            w = ad.mul(self.W, ad.reshape(z, (1, 1, 1, self.n_filters)))
        else:
            w = self.W
        return ad.relu(ad.conv2d(x, w, stride=self.stride, padding=self.padding))


class MaxPool2d:
    def __init__(self, size: int = 2, stride: int | None = None, name: str = "maxpool"):
        self.size, self.stride = int(size), stride
        self.name = name
        self.ibp = None
        self.last_winner_probs = None

    def params(self):
        return []

    def forward(self, x, mode, rng, noise=None):
        return ad.maxpool2d(x, self.size, self.stride)


class Flatten:
    def __init__(self, name: str = "flatten"):
        self.name = name
        self.ibp = None
        self.last_winner_probs = None

    def params(self):
        return []

    def forward(self, x, mode, rng, noise=None):
        return ad.reshape(x, (x.shape[0], -1))


@dataclass
class KlTerms:
    """Per-layer KL pieces; kl_xi_fn maps batch winner probabilities to a scalar."""

    kl_xi_fn: object
    kl_z: Tensor = field(default_factory=_zero)
    kl_u: Tensor = field(default_factory=_zero)


def layer_kl(layer, rng: RngStream, alpha: float = 1.0,
             noise: NoiseCache | None = None) -> KlTerms:
    """Assemble a layer's KL contributions for the training objective."""
    if layer.ibp is not None:
        kl_z, kl_u = layer.ibp.kl(rng, alpha, noise)
    else:
        kl_z, kl_u = _zero(), _zero()

    def kl_xi_fn(winner_probs):
        if winner_probs is None:
            return _zero()
        per_block = st.kl_categorical_uniform(winner_probs)   # [B,K]
        return ad.tmean(ad.tsum(per_block, axis=-1))

    return KlTerms(kl_xi_fn=kl_xi_fn, kl_z=kl_z, kl_u=kl_u)
