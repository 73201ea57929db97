"""Error-correcting output codes: code matrices, heads, decoding, ensembles.

Classes are mapped to rows of a {+1,-1} code matrix (identity stored as
2I - 1, or Sylvester-Hadamard rows). Networks emit raw code-bit activations;
the head nonlinearity and the decoding back to class probabilities live here.
Decoding uses clipped correlations: activate the bits, correlate with every
codeword, zero out negative correlations and renormalize (uniform if nothing
is positive).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class OutputHead(enum.Enum):
    SOFTMAX = "softmax"
    LOGISTIC = "logistic"
    TANH = "tanh"

    @staticmethod
    def from_string(s: str) -> "OutputHead":
        try:
            return OutputHead(s.lower())
        except ValueError:
            raise ValueError(f"unknown output head {s!r}") from None


@dataclass(frozen=True)
class CodeMatrix:
    """C x L matrix of +/-1 codewords; rows are the class codewords."""

    matrix: np.ndarray
    kind: str

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or not np.all(np.abs(m) == 1.0):
            raise ValueError("code matrix entries must be +/-1")
        if len({tuple(r) for r in m}) != m.shape[0]:
            raise ValueError("code matrix rows must be distinct")

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def length(self) -> int:
        return self.matrix.shape[1]


def hadamard(k: int) -> np.ndarray:
    """Sylvester Hadamard matrix H_k, k a power of two."""
    k = int(k)
    if k < 1 or (k & (k - 1)) != 0:
        raise ValueError(f"hadamard: {k} is not a power of two")
    h = np.ones((1, 1))
    while h.shape[0] < k:
        h = np.block([[h, h], [h, -h]])
    return h


def hadamard_code(n_classes: int, length: int) -> CodeMatrix:
    """First n_classes rows of the length x length Sylvester matrix."""
    h = hadamard(length)
    if n_classes > length:
        raise ValueError(f"hadamard_code: {n_classes} classes exceed code length {length}")
    return CodeMatrix(h[:n_classes], kind="hadamard")


def identity_code(n_classes: int) -> CodeMatrix:
    return CodeMatrix(2.0 * np.eye(n_classes) - 1.0, kind="identity")


def make_code(kind: str, n_classes: int, length: int | None = None) -> CodeMatrix:
    if kind == "identity":
        if length not in (None, n_classes):
            raise ValueError("identity code length must equal the class count")
        return identity_code(n_classes)
    if kind == "hadamard":
        return hadamard_code(n_classes, length or n_classes)
    raise ValueError(f"unknown code kind {kind!r}")


def check_head_code(head: OutputHead, code: CodeMatrix) -> None:
    if head is OutputHead.SOFTMAX and code.kind != "identity":
        raise ValueError("softmax head requires the identity code")


def _activate_bits(bits: Tensor, head: OutputHead) -> Tensor:
    if head is OutputHead.LOGISTIC:
        return ad.sub(ad.mul(ad.sigmoid(bits), 2.0), 1.0)
    if head is OutputHead.TANH:
        return ad.tanh(bits)
    raise ValueError(f"no bit activation for head {head}")


def decode(bits, head: OutputHead, code: CodeMatrix) -> Tensor:
    """Class probabilities [B,C] from raw code-bit activations [B,L]."""
    bits = ad.ensure_tensor(bits)
    if bits.ndim != 2 or bits.shape[1] != code.length:
        raise ad.ShapeError("decode", bits.shape, code.matrix.shape)
    check_head_code(head, code)
    if head is OutputHead.SOFTMAX:
        return ad.softmax(bits, axis=-1)
    t = _activate_bits(bits, head)
    s = ad.div(ad.matmul(t, Tensor(code.matrix.T)), float(code.length))
    r = ad.relu(s)
    denom = ad.tsum(r, axis=-1, keepdims=True)
    has_mass = (denom.data > 0).astype(np.float64)          # [B,1], constant
    safe = ad.add(denom, Tensor(1.0 - has_mass))
    uniform = (1.0 - has_mass) / code.n_classes
    return ad.add(ad.mul(ad.div(r, safe), Tensor(has_mass)), Tensor(uniform))


def class_scores(bits, head: OutputHead, code: CodeMatrix) -> Tensor:
    """Per-class scores before normalization: logits, or codeword correlations."""
    bits = ad.ensure_tensor(bits)
    check_head_code(head, code)
    if head is OutputHead.SOFTMAX:
        return bits
    t = _activate_bits(bits, head)
    return ad.div(ad.matmul(t, Tensor(code.matrix.T)), float(code.length))


def encode_labels(labels, code: CodeMatrix, head: OutputHead) -> np.ndarray:
    """Training targets [B,L] for each head's codomain."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= code.n_classes):
        raise ValueError(f"encode_labels: label out of range 0..{code.n_classes - 1}")
    rows = code.matrix[labels]
    if head is OutputHead.SOFTMAX:
        return (rows + 1.0) / 2.0          # identity code rows are one-hot in 0/1 form
    if head is OutputHead.LOGISTIC:
        return (rows + 1.0) / 2.0
    return rows.copy()


def training_loss(bits, labels, code: CodeMatrix, head: OutputHead) -> Tensor:
    """Batch-mean data term: cross-entropy (softmax/logistic) or squared error (tanh)."""
    bits = ad.ensure_tensor(bits)
    targets = Tensor(encode_labels(labels, code, head))
    if head is OutputHead.SOFTMAX:
        log_p = ad.sub(bits, ad.logsumexp(bits, axis=-1, keepdims=True))
        return ad.neg(ad.tmean(ad.tsum(ad.mul(targets, log_p), axis=-1)))
    if head is OutputHead.LOGISTIC:
        p = ad.clamp(ad.sigmoid(bits), 1e-12, 1.0 - 1e-12)
        per_bit = ad.add(ad.mul(targets, ad.log(p)),
                         ad.mul(ad.sub(1.0, targets), ad.log(ad.sub(1.0, p))))
        return ad.neg(ad.tmean(ad.tsum(per_bit, axis=-1)))
    err = ad.sub(ad.tanh(bits), targets)
    return ad.tmean(ad.tsum(ad.mul(err, err), axis=-1))


@dataclass(frozen=True)
class EnsembleSpec:
    """Partition of the L code bits into contiguous per-member groups."""

    groups: tuple

    def __post_init__(self):
        groups = tuple((int(a), int(b)) for a, b in self.groups)
        object.__setattr__(self, "groups", groups)
        pos = 0
        for a, b in groups:
            if a != pos or b <= a:
                raise ValueError(f"ensemble groups must tile the code bits, got {groups}")
            pos = b
        object.__setattr__(self, "length", pos)

    @property
    def n_members(self) -> int:
        return len(self.groups)

    @staticmethod
    def contiguous(length: int, n_members: int) -> "EnsembleSpec":
        """Split L bits into n contiguous groups, earlier groups one larger on remainder."""
        if not 1 <= n_members <= length:
            raise ValueError(f"cannot split {length} bits into {n_members} members")
        base, extra = divmod(length, n_members)
        groups, pos = [], 0
        for i in range(n_members):
            width = base + (1 if i < extra else 0)
            groups.append((pos, pos + width))
            pos += width
        return EnsembleSpec(tuple(groups))


def ensemble_forward(members, spec: EnsembleSpec, x) -> Tensor:
    """Concatenate member outputs in bit-group order; members are callables."""
    if len(members) != spec.n_members:
        raise ValueError(f"{len(members)} members for {spec.n_members} bit groups")
    outs = []
    for fn, (a, b) in zip(members, spec.groups):
        bits = ad.ensure_tensor(fn(x))
        if bits.shape[-1] != b - a:
            raise ad.ShapeError("ensemble_forward", bits.shape, (bits.shape[0], b - a))
        outs.append(bits)
    return outs[0] if len(outs) == 1 else ad.concat(outs, axis=-1)


def export_code_csv(code: CodeMatrix, path) -> None:
    with open(path, "w") as fh:
        fh.write("class," + ",".join(f"bit{i}" for i in range(code.length)) + "\n")
        for c, row in enumerate(code.matrix):
            fh.write(f"{c}," + ",".join(str(int(v)) for v in row) + "\n")
