"""MLP feature extractor, linear embedding layer, and a classifier head.

Two head kinds: "cosine" scores each class as the inner product of the
L2-normalized embedding with the L2-normalized head column (no bias, no
scale), so logits are cosine similarities in [-1, 1]; "linear" is a
standard affine softmax head. Normalization happens inside the forward
pass, so gradients flow through it.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, l2_normalize, matmul, relu, softmax_cross_entropy

HEAD_COSINE = "cosine"
HEAD_LINEAR = "linear"

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyperparameters; immutable once built."""

    input_dim: int
    num_classes: int
    hidden_dims: tuple = (64, 64)
    embedding_dim: int = 256
    head: str = HEAD_COSINE
    head_bias: bool = True  # linear head only

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError("hidden_dims must all be >= 1")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if self.head not in (HEAD_COSINE, HEAD_LINEAR):
            raise ValueError(f"head must be '{HEAD_COSINE}' or '{HEAD_LINEAR}'")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden_dims": list(self.hidden_dims),
            "embedding_dim": self.embedding_dim,
            "head": self.head,
            "head_bias": self.head_bias,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkSpec":
        return cls(
            input_dim=doc["input_dim"],
            num_classes=doc["num_classes"],
            hidden_dims=tuple(doc["hidden_dims"]),
            embedding_dim=doc["embedding_dim"],
            head=doc["head"],
            head_bias=doc["head_bias"],
        )


class ModelParams:
    """All trainable tensors of one model, grouped by role."""

    def __init__(self, spec: NetworkSpec, extractor, embed_w: Tensor, embed_b: Tensor,
                 head_w: Tensor, head_b: Tensor | None = None):
        self.spec = spec
        self.extractor = list(extractor)  # [(w, b), ...] per hidden layer
        self.embed_w = embed_w
        self.embed_b = embed_b
        self.head_w = head_w
        self.head_b = head_b

    @property
    def dtype(self):
        return self.embed_w.data.dtype

    def parameters(self) -> list:
        """Stable flat ordering: extractor pairs, embedding pair, head."""
        out = []
        for w, b in self.extractor:
            out.extend([w, b])
        out.extend([self.embed_w, self.embed_b, self.head_w])
        if self.head_b is not None:
            out.append(self.head_b)
        return out

    def embedding_and_head(self) -> list:
        """The layers that start from random init during base training."""
        out = [self.embed_w, self.embed_b, self.head_w]
        if self.head_b is not None:
            out.append(self.head_b)
        return out

    def head_parameters(self) -> list:
        out = [self.head_w]
        if self.head_b is not None:
            out.append(self.head_b)
        return out

    def copy(self) -> "ModelParams":
        def dup(t: Tensor) -> Tensor:
            return Tensor(t.data.copy(), requires_grad=t.requires_grad)

        return ModelParams(
            self.spec,
            [(dup(w), dup(b)) for w, b in self.extractor],
            dup(self.embed_w),
            dup(self.embed_b),
            dup(self.head_w),
            None if self.head_b is None else dup(self.head_b),
        )


def init_params(spec: NetworkSpec, rng: np.random.Generator,
                dtype=np.float32) -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases.

    Cosine head columns are rescaled to unit norm so the head starts on the
    same sphere the forward pass projects onto.
    """

    def layer(fan_in: int, fan_out: int):
        limit = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)

    extractor = []
    width = spec.input_dim
    for hidden in spec.hidden_dims:
        extractor.append(layer(width, hidden))
        width = hidden
    embed_w, embed_b = layer(width, spec.embedding_dim)

    limit = 1.0 / math.sqrt(spec.embedding_dim)
    head = rng.uniform(-limit, limit, size=(spec.embedding_dim, spec.num_classes)).astype(dtype)
    head_b = None
    if spec.head == HEAD_COSINE:
        norms = np.sqrt(np.sum(np.square(head), axis=0, keepdims=True))
        head /= np.maximum(norms, 1e-12)
    elif spec.head_bias:
        head_b = Tensor(np.zeros(spec.num_classes, dtype=dtype), requires_grad=True)
    return ModelParams(spec, extractor, embed_w, embed_b,
                       Tensor(head, requires_grad=True), head_b)


def _as_input(x, input_dim: int) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if t.data.ndim != 2:
        raise ValueError(f"inputs must be rank-2, got shape {t.data.shape}")
    if t.data.shape[1] != input_dim:
        raise ValueError(f"inputs have {t.data.shape[1]} features, model expects {input_dim}")
    return t


def forward_embed(params: ModelParams, x) -> Tensor:
    """Hidden ReLU stack, then the linear embedding layer (no activation after)."""
    t = _as_input(x, params.spec.input_dim)
    for w, b in params.extractor:
        t = relu(add(matmul(t, w), b))
    return add(matmul(t, params.embed_w), params.embed_b)


def head_logits(params: ModelParams, embeddings) -> Tensor:
    """Class scores from embeddings.

    Cosine head: inner products of row-normalized embeddings with
    column-normalized head weights; no scale factor, no bias. Linear head:
    plain affine map on raw embeddings.
    """
    e = embeddings if isinstance(embeddings, Tensor) else Tensor(np.asarray(embeddings))
    if e.data.ndim != 2 or e.data.shape[1] != params.spec.embedding_dim:
        raise ValueError(
            f"embeddings shape {e.data.shape} does not match embedding_dim "
            f"{params.spec.embedding_dim}"
        )
    if params.spec.head == HEAD_COSINE:
        return matmul(l2_normalize(e, axis=1), l2_normalize(params.head_w, axis=0))
    logits = matmul(e, params.head_w)
    if params.head_b is not None:
        logits = add(logits, params.head_b)
    return logits


def forward_logits(params: ModelParams, x) -> Tensor:
    return head_logits(params, forward_embed(params, x))


def predict(logits):
    """Argmax class per row; ties resolve to the lowest index.

    Accepts a single row (returns an int) or a batch (returns an int array).
    """
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if arr.ndim == 1:
        return int(np.argmax(arr))
    if arr.ndim != 2:
        raise ValueError(f"logits must be rank-1 or rank-2, got shape {arr.shape}")
    return np.argmax(arr, axis=1)


def loss(params: ModelParams, x, labels) -> Tensor:
    """Mean softmax cross-entropy of the model on a batch."""
    return softmax_cross_entropy(forward_logits(params, x), labels)


def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> None:
    """Write the spec, every parameter array, and caller metadata as JSON.

    Values round-trip losslessly at the stored precision: float32 entries
    serialize as their exact decimal expansions and are cast back on load.
    """
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "dtype": str(np.dtype(params.dtype)),
        "spec": params.spec.to_dict(),
        "parameters": {
            "extractor": [
                {"w": w.data.tolist(), "b": b.data.tolist()} for w, b in params.extractor
            ],
            "embed_w": params.embed_w.data.tolist(),
            "embed_b": params.embed_b.data.tolist(),
            "head_w": params.head_w.data.tolist(),
            "head_b": None if params.head_b is None else params.head_b.data.tolist(),
        },
        "meta": meta or {},
    }
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint back; returns (params, meta)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version: {version!r}")
    dtype = np.dtype(doc["dtype"])
    spec = NetworkSpec.from_dict(doc["spec"])
    arrays = doc["parameters"]

    def tensor(values):
        return Tensor(np.asarray(values, dtype=dtype), requires_grad=True)

    extractor = [(tensor(layer["w"]), tensor(layer["b"])) for layer in arrays["extractor"]]
    head_b = None if arrays["head_b"] is None else tensor(arrays["head_b"])
    params = ModelParams(spec, extractor, tensor(arrays["embed_w"]),
                         tensor(arrays["embed_b"]), tensor(arrays["head_w"]), head_b)
    if len(params.extractor) != len(spec.hidden_dims):
        raise ValueError("checkpoint layer count does not match its spec")
    return params, doc["meta"]
