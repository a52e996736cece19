"""The five evaluated architectures, assembled from layers.

Architecture ids:

* ``BL``   stacked pair of BiLSTMs with a low-dimensional projection between
           them, softmax head on top
* ``BL_I`` BL with multi-head self-attention on the raw input vectors
* ``BL_E`` BL with multi-head self-attention between the two BiLSTMs (the
           attention therefore operates on the narrow inter-stage space)
* ``SB``   a single BiLSTM with the softmax head
* ``SB_I`` SB with additive self-attention on the raw input vectors

The BL family uses multi-head attention, the SB family additive attention.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError
from .layers import (
    AdditiveSelfAttention,
    BiLstm,
    DenseSoftmax,
    Layer,
    MultiHeadSelfAttention,
    TimeDistributedLinear,
    choose_heads,
)
from .numeric import BatchTensor, Parameter, make_rng

LABELS = ("B", "I", "O")


class ArchitectureId(Enum):
    BL = "bl"
    BL_I = "bl-i"
    BL_E = "bl-e"
    SB = "sb"
    SB_I = "sb-i"

    @property
    def is_stacked(self) -> bool:
        return self in (ArchitectureId.BL, ArchitectureId.BL_I, ArchitectureId.BL_E)

    @classmethod
    def from_string(cls, s: str) -> "ArchitectureId":
        try:
            return cls(s.lower().replace("_", "-"))
        except ValueError:
            raise ConfigurationError(
                f"unknown architecture {s!r}; choose from {[a.value for a in cls]}"
            ) from None


_ATTENTION_KIND = {True: "multi_head", False: "additive"}


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to build one architecture deterministically.

    ``inter_stage_dim`` is the width of the linear projection between the two
    BiLSTMs of the BL family; ``None`` removes the projection so the first
    BiLSTM feeds the second directly.  ``attention`` is fixed by the family
    (multi_head for BL*, additive for SB*) and only validated if supplied.
    """

    arch: ArchitectureId
    input_dim: int
    hidden: int = 64
    inter_stage_dim: int | None = 4
    attention: str = ""
    heads_cap: int = 6
    seed: int = 0
    attn_dim: int = 32  # width of the additive scorer

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden < 1:
            raise ConfigurationError(
                f"input_dim and hidden must be >= 1, got {self.input_dim}, {self.hidden}"
            )
        if self.inter_stage_dim is not None and self.inter_stage_dim < 1:
            raise ConfigurationError("inter_stage_dim must be >= 1 or None")
        expected = _ATTENTION_KIND[self.arch.is_stacked]
        if self.attention and self.attention != expected:
            raise ConfigurationError(
                f"{self.arch.value} uses {expected} attention, not {self.attention!r}"
            )
        object.__setattr__(self, "attention", expected)


class Model:
    """An ordered layer stack with chained forward/backward passes.

    ``forward`` returns the caches the caller must hand back to ``backward``;
    a model used for inference only never touches them.
    """

    def __init__(self, spec: ModelSpec, layers: list[Layer]):
        self.spec = spec
        self.layers = layers

    def params(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, batch: BatchTensor):
        if batch.features != self.spec.input_dim:
            raise DimensionError(
                f"model expects {self.spec.input_dim} input features, "
                f"batch has {batch.features}"
            )
        caches = []
        x = batch
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, grad_out: np.ndarray) -> np.ndarray:
        g = grad_out
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g = layer.backward(cache, g)
        return g

    def predict_proba(self, batch: BatchTensor) -> BatchTensor:
        out, _ = self.forward(batch)
        return out

    def get_values(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.params()]

    def set_values(self, values: list[np.ndarray]):
        for p, v in zip(self.params(), values, strict=True):
            p.value[...] = v


def build_model(spec: ModelSpec) -> Model:
    """Assemble and initialize the layer stack for ``spec``.

    Initialization is driven entirely by ``spec.seed``, so the same spec
    always yields bit-identical parameters.
    """
    rng = make_rng(spec.seed)
    layers: list[Layer] = []
    arch = spec.arch

    if arch is ArchitectureId.BL_I:
        heads = choose_heads(spec.input_dim, spec.heads_cap)
        layers.append(MultiHeadSelfAttention(spec.input_dim, heads, rng, "attn_in"))
    elif arch is ArchitectureId.SB_I:
        layers.append(AdditiveSelfAttention(spec.input_dim, rng, spec.attn_dim, "attn_in"))

    layers.append(BiLstm(spec.input_dim, spec.hidden, rng, "bilstm_1"))

    if arch.is_stacked:
        stage_dim = 2 * spec.hidden
        if spec.inter_stage_dim is not None:
            layers.append(
                TimeDistributedLinear(stage_dim, spec.inter_stage_dim, rng, "bridge")
            )
            stage_dim = spec.inter_stage_dim
        if arch is ArchitectureId.BL_E:
            heads = choose_heads(stage_dim, spec.heads_cap)
            layers.append(MultiHeadSelfAttention(stage_dim, heads, rng, "attn_mid"))
        layers.append(BiLstm(stage_dim, spec.hidden, rng, "bilstm_2"))

    layers.append(DenseSoftmax(2 * spec.hidden, rng, "head"))
    return Model(spec, layers)


def forward(model: Model, batch: BatchTensor) -> BatchTensor:
    """Per-token distributions over {B, I, O}."""
    return model.predict_proba(batch)


def predict_labels(model: Model, batch: BatchTensor) -> np.ndarray:
    """(batch, time) label indices; argmax per token, ties resolved B < I < O.

    Padded positions are filled with the O index; the mask decides what is
    meaningful downstream.
    """
    probs = model.predict_proba(batch)
    labels = np.argmax(probs.values, axis=2)
    labels[~batch.mask] = LABELS.index("O")
    return labels


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"ARGSEG-CKPT"
_CKPT_VERSION = 1


def _spec_to_lines(spec: ModelSpec) -> list[str]:
    inter = "none" if spec.inter_stage_dim is None else str(spec.inter_stage_dim)
    return [
        f"arch {spec.arch.value}",
        f"input_dim {spec.input_dim}",
        f"hidden {spec.hidden}",
        f"inter_stage_dim {inter}",
        f"attention {spec.attention}",
        f"heads_cap {spec.heads_cap}",
        f"seed {spec.seed}",
        f"attn_dim {spec.attn_dim}",
    ]


def _spec_from_fields(fields: dict[str, str]) -> ModelSpec:
    try:
        inter = fields["inter_stage_dim"]
        return ModelSpec(
            arch=ArchitectureId.from_string(fields["arch"]),
            input_dim=int(fields["input_dim"]),
            hidden=int(fields["hidden"]),
            inter_stage_dim=None if inter == "none" else int(inter),
            attention=fields.get("attention", ""),
            heads_cap=int(fields["heads_cap"]),
            seed=int(fields["seed"]),
            attn_dim=int(fields.get("attn_dim", 32)),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint header is incomplete or malformed: {exc}") from exc


def save_checkpoint(model: Model, path):
    """Write a versioned header plus named float64 little-endian blocks."""
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC + b" %d\n" % _CKPT_VERSION)
    for line in _spec_to_lines(model.spec):
        buf.write(line.encode("utf-8") + b"\n")
    params = model.params()
    buf.write(b"tensors %d\n" % len(params))
    buf.write(b"end-header\n")
    for p in params:
        dims = " ".join(str(d) for d in p.value.shape)
        buf.write(f"tensor {p.name} {p.value.ndim} {dims}\n".encode("utf-8"))
        buf.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Model:
    """Rebuild the model from a checkpoint; round-trips byte-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)

    def read_line() -> str:
        raw = buf.readline()
        if not raw.endswith(b"\n"):
            raise FormatError("checkpoint is truncated inside the header")
        return raw[:-1].decode("utf-8")

    first = read_line().split()
    if len(first) != 2 or first[0].encode() != _CKPT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic string)")
    if int(first[1]) != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {first[1]}")

    fields: dict[str, str] = {}
    n_tensors = None
    while True:
        line = read_line()
        if line == "end-header":
            break
        key, _, value = line.partition(" ")
        if key == "tensors":
            n_tensors = int(value)
        else:
            fields[key] = value
    if n_tensors is None:
        raise FormatError("checkpoint header lacks a tensor count")

    model = build_model(_spec_from_fields(fields))
    params = model.params()
    if n_tensors != len(params):
        raise FormatError(
            f"checkpoint holds {n_tensors} tensors, model needs {len(params)}"
        )
    for p in params:
        header = read_line().split()
        if not header or header[0] != "tensor":
            raise FormatError(f"expected a tensor block for {p.name}")
        name, ndim = header[1], int(header[2])
        shape = tuple(int(d) for d in header[3 : 3 + ndim])
        if name != p.name or shape != p.value.shape:
            raise FormatError(
                f"tensor mismatch: file has {name} {shape}, model expects "
                f"{p.name} {p.value.shape}"
            )
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        raw = buf.read(nbytes)
        if len(raw) != nbytes:
            raise FormatError(f"checkpoint is truncated inside tensor {name}")
        p.value[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    if buf.read(1):
        raise FormatError("trailing bytes after the last tensor block")
    return model
