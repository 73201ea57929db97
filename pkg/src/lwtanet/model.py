"""Declarative model specs, network assembly, and the standard preset menu.

A ModelSpec lists hidden layers (dense/conv LWTA blocks, pooling) plus the
output code, head, ablation mode (relu | lwta_max | lwta) and IBP switch.
``build_model`` turns the spec into one network per ensemble member; the
output layer is appended automatically with each member's bit-group width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import codes
from .autodiff import Tensor
from .layers import (ConvLayer, ConvLwtaLayer, DenseLayer, DenseLwtaLayer, Flatten,
                     IbpDenseOutput, LayerMode, MaxPool2d, NoiseCache, layer_kl)
from .stochastic import RngStream

ACTIVATIONS = ("lwta", "lwta_max", "relu")


@dataclass(frozen=True)
class LayerSpec:
    """One hidden layer: kind plus the fields that kind needs (K, U, kernel...)."""

    kind: str
    blocks: int = 0
    units: int = 0
    kernel: tuple = (3, 3)
    stride: int = 1
    padding: str = "same"
    size: int = 2
    bias: bool = False

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("dense_lwta", "conv_lwta"):
            out["K"] = self.blocks
            out["U"] = self.units
        if self.kind == "conv_lwta":
            out.update(kernel=list(self.kernel), stride=self.stride, padding=self.padding)
        if self.kind == "maxpool":
            out["size"] = self.size
        if self.bias:
            out["bias"] = True
        return out

    @staticmethod
    def from_json(d: dict) -> "LayerSpec":
        return LayerSpec(
            kind=d["kind"],
            blocks=int(d.get("K", 0)),
            units=int(d.get("U", 0)),
            kernel=tuple(d.get("kernel", (3, 3))),
            stride=int(d.get("stride", 1)),
            padding=d.get("padding", "same"),
            size=int(d.get("size", 2)),
            bias=bool(d.get("bias", False)),
        )


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple
    layers: tuple
    n_classes: int = 10
    code: str = "identity"
    code_length: int | None = None
    head: str = "softmax"
    activation: str = "lwta"
    ibp: bool = True
    ensemble: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation mode {self.activation!r}")

    @property
    def bits(self) -> int:
        return self.code_length or self.n_classes

    def to_json(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [l.to_json() for l in self.layers],
            "n_classes": self.n_classes,
            "code": self.code,
            "code_length": self.code_length,
            "head": self.head,
            "activation": self.activation,
            "ibp": self.ibp,
            "ensemble": self.ensemble,
        }

    @staticmethod
    def from_json(d: dict) -> "ModelSpec":
        return ModelSpec(
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec.from_json(l) for l in d["layers"]),
            n_classes=int(d.get("n_classes", 10)),
            code=d.get("code", "identity"),
            code_length=d.get("code_length"),
            head=d.get("head", "softmax"),
            activation=d.get("activation", "lwta"),
            ibp=bool(d.get("ibp", True)),
            ensemble=d.get("ensemble"),
        )


# The standard four-network menu: code + head + ensemble arrangement.
PRESETS = {
    "Softmax": dict(code="identity", code_length=None, head="softmax", ensemble=None),
    "Logistic": dict(code="identity", code_length=None, head="logistic", ensemble=None),
    "LogisticEns10": dict(code="identity", code_length=None, head="logistic", ensemble=10),
    "Tanh16": dict(code="hadamard", code_length=16, head="tanh", ensemble=None),
}


def default_layers() -> tuple:
    return (LayerSpec("dense_lwta", blocks=64, units=2),
            LayerSpec("dense_lwta", blocks=32, units=2))


class Network:
    """One member: the hidden stack plus its output layer."""

    def __init__(self, spec: ModelSpec, n_bits: int, rng: RngStream, prefix: str):
        self.layers = []
        shape = spec.input_shape
        lwta = spec.activation in ("lwta", "lwta_max")
        for i, ls in enumerate(spec.layers):
            name = f"{prefix}layer{i}_{ls.kind}"
            if ls.kind in ("dense_lwta", "dense"):
                if len(shape) > 1:
                    self.layers.append(Flatten(name=f"{prefix}layer{i}_flatten"))
                    shape = (int(np.prod(shape)),)
                width = ls.blocks * ls.units
                if ls.kind == "dense_lwta" and lwta:
                    layer = DenseLwtaLayer(shape[0], ls.blocks, ls.units, rng,
                                           bias=ls.bias, ibp=spec.ibp, name=name)
                else:
                    layer = DenseLayer(shape[0], width, rng, activation="relu",
                                       bias=ls.bias, ibp=spec.ibp, name=name)
                self.layers.append(layer)
                shape = (width,)
            elif ls.kind in ("conv_lwta", "conv"):
                if len(shape) != 3:
                    raise ValueError(f"{name}: convolution needs a 3-d input, have {shape}")
                width = ls.blocks * ls.units
                if ls.kind == "conv_lwta" and lwta:
                    layer = ConvLwtaLayer(ls.kernel, shape[2], ls.blocks, ls.units, rng,
                                          stride=ls.stride, padding=ls.padding,
                                          ibp=spec.ibp, name=name)
                else:
                    layer = ConvLayer(ls.kernel, shape[2], width, rng, stride=ls.stride,
                                      padding=ls.padding, ibp=spec.ibp, name=name)
                self.layers.append(layer)
                shape = (_conv_extent(shape[0], ls.kernel[0], ls.stride, ls.padding),
                         _conv_extent(shape[1], ls.kernel[1], ls.stride, ls.padding),
                         width)
            elif ls.kind == "maxpool":
                self.layers.append(MaxPool2d(ls.size, name=f"{prefix}layer{i}_maxpool"))
                shape = ((shape[0] - ls.size) // ls.size + 1,
                         (shape[1] - ls.size) // ls.size + 1, shape[2])
            elif ls.kind == "flatten":
                self.layers.append(Flatten(name=f"{prefix}layer{i}_flatten"))
                shape = (int(np.prod(shape)),)
            else:
                raise ValueError(f"unknown layer kind {ls.kind!r}")
        if len(shape) > 1:
            self.layers.append(Flatten(name=f"{prefix}flatten_out"))
            shape = (int(np.prod(shape)),)
        self.output = IbpDenseOutput(shape[0], n_bits, rng, ibp=spec.ibp,
                                     name=f"{prefix}output")

    def forward(self, x: Tensor, mode: LayerMode, rng: RngStream,
                noise: NoiseCache | None = None) -> Tensor:
        h = x
        for layer in self.layers:
            h = layer.forward(h, mode, rng, noise)
        return self.output.forward(h, mode, rng, noise)

    def all_layers(self):
        return [*self.layers, self.output]

    def params(self):
        out = []
        for layer in self.all_layers():
            out.extend(layer.params())
        return out


def _conv_extent(extent: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-extent // stride)
    return (extent - k) // stride + 1


class Model:
    """Full classifier: ensemble members, code matrix, and output head."""

    def __init__(self, spec: ModelSpec, rng: RngStream):
        self.spec = spec
        self.code = codes.make_code(spec.code, spec.n_classes, spec.code_length)
        self.head = codes.OutputHead.from_string(spec.head)
        codes.check_head_code(self.head, self.code)
        n = spec.ensemble or 1
        self.ensemble_spec = codes.EnsembleSpec.contiguous(self.code.length, n)
        self.members = []
        for m, (a, b) in enumerate(self.ensemble_spec.groups):
            prefix = f"m{m}_" if n > 1 else ""
            self.members.append(Network(spec, b - a, rng.child(f"member{m}"), prefix))

    # -- forward passes -----------------------------------------------------
    def train_mode(self, temperature: float = 0.67) -> LayerMode:
        if self.spec.activation == "lwta_max":
            return LayerMode.deterministic_max(self.spec.ibp, temperature, relax_z=True)
        return LayerMode.train_relaxed(self.spec.ibp, temperature)

    def eval_mode(self) -> LayerMode:
        if self.spec.activation == "lwta_max":
            return LayerMode.deterministic_max(self.spec.ibp)
        if self.spec.activation == "relu":
            return LayerMode.eval_sample(self.spec.ibp)
        return LayerMode.eval_sample(self.spec.ibp)

    def bits(self, x, mode: LayerMode, rng: RngStream,
             noise: NoiseCache | None = None) -> Tensor:
        x = ad.ensure_tensor(x)
        if x.ndim != len(self.spec.input_shape) + 1:
            x = ad.reshape(x, (x.shape[0], *self.spec.input_shape))
        members = [lambda inp, net=net: net.forward(inp, mode, rng, noise)
                   for net in self.members]
        return codes.ensemble_forward(members, self.ensemble_spec, x)

    def averaged_bits(self, images: np.ndarray, n_samples: int, rng: RngStream,
                      batch_size: int = 512) -> np.ndarray:
        """Mean of n_samples pre-decode bit sets, computed in chunks."""
        images = np.asarray(images, dtype=np.float64)
        n = images.shape[0]
        out = np.zeros((n, self.code.length))
        mode = self.eval_mode()
        for start in range(0, n, batch_size):
            chunk = Tensor(images[start:start + batch_size])
            acc = np.zeros((chunk.shape[0], self.code.length))
            for _ in range(max(1, int(n_samples))):
                acc += self.bits(chunk, mode, rng).data
            out[start:start + batch_size] = acc / max(1, int(n_samples))
        return out

    def predict_probs(self, images: np.ndarray, n_samples: int, rng: RngStream,
                      batch_size: int = 512) -> np.ndarray:
        bits = self.averaged_bits(images, n_samples, rng, batch_size)
        return codes.decode(Tensor(bits), self.head, self.code).data

    # -- parameters and KL --------------------------------------------------
    def named_parameters(self):
        out = []
        for net in self.members:
            out.extend(net.params())
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def all_layers(self):
        out = []
        for net in self.members:
            out.extend(net.all_layers())
        return out

    def kl_terms(self, rng: RngStream, alpha: float = 1.0,
                 noise: NoiseCache | None = None):
        """(kl_xi, kl_z, kl_u) after a forward pass has stashed winner probs."""
        kl_xi = Tensor(0.0)
        kl_z = Tensor(0.0)
        kl_u = Tensor(0.0)
        for layer in self.all_layers():
            terms = layer_kl(layer, rng, alpha, noise)
            kl_xi = ad.add(kl_xi, terms.kl_xi_fn(layer.last_winner_probs))
            kl_z = ad.add(kl_z, terms.kl_z)
            kl_u = ad.add(kl_u, terms.kl_u)
        return kl_xi, kl_z, kl_u


def build_model(spec: ModelSpec, rng: RngStream) -> Model:
    return Model(spec, rng)


def preset_spec(name: str, input_shape, layers=None, n_classes: int = 10,
                activation: str = "lwta", ibp: bool = True) -> ModelSpec:
    """ModelSpec for one of the named presets (Softmax, Logistic, ...)."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[name]
    return ModelSpec(
        input_shape=tuple(input_shape),
        layers=tuple(layers) if layers is not None else default_layers(),
        n_classes=n_classes,
        code=cfg["code"],
        code_length=cfg["code_length"],
        head=cfg["head"],
        activation=activation,
        ibp=ibp,
        ensemble=cfg["ensemble"],
    )
