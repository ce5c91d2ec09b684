"""Novel-class weight imprinting for cosine-head models.

A new class column is written directly into the head: embed the examples,
normalize each embedding, average, renormalize, and insert the result.
Existing columns are untouched, so base-class behavior is preserved
exactly until fine-tuning moves them.
"""

from __future__ import annotations

import numpy as np

from .data import select_nshot
from .network import HEAD_COSINE, ModelParams, NetworkSpec, forward_embed
from .tensor import Tensor, no_grad

MEAN_NORM_FLOOR = 1e-8


class DegenerateImprintError(ValueError):
    """Normalized embeddings cancelled out; no usable class direction."""


def compute_imprinted_vector(params: ModelParams, examples) -> np.ndarray:
    """Unit-norm mean of the unit-normalized embeddings of ``examples``.

    Examples are embedded in a canonical (lexicographically sorted, freshly
    contiguous) order, so the result is exactly independent of how the
    caller ordered or sliced them. Raises DegenerateImprintError when the
    mean direction has norm below 1e-8.
    """
    if params.spec.head != HEAD_COSINE:
        raise ValueError("imprinting requires a cosine head")
    x = np.asarray(examples)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"examples must be a non-empty rank-2 array, got shape {x.shape}")
    x = x[np.lexsort(x.T[::-1])]
    with no_grad():
        emb = forward_embed(params, x).data
    norms = np.sqrt(np.sum(np.square(emb), axis=1, keepdims=True))
    normalized = emb / np.maximum(norms, 1e-12)
    mean = normalized.mean(axis=0)
    mean_norm = float(np.sqrt(np.sum(np.square(mean))))
    if mean_norm < MEAN_NORM_FLOOR:
        raise DegenerateImprintError(
            f"mean of normalized embeddings has norm {mean_norm:.3e} "
            f"(< {MEAN_NORM_FLOOR:.0e}); examples cancel out"
        )
    return mean / np.asarray(mean_norm, dtype=mean.dtype)


def imprint_extend_head(params: ModelParams, imprinted: np.ndarray,
                        insertion_index: int | None = None) -> ModelParams:
    """A new model over C+1 classes with ``imprinted`` as one head column.

    Base columns are copied bit for bit; ``insertion_index`` defaults to
    appending after the existing classes.
    """
    if params.spec.head != HEAD_COSINE:
        raise ValueError("imprinting requires a cosine head")
    vec = np.asarray(imprinted, dtype=params.dtype)
    if vec.shape != (params.spec.embedding_dim,):
        raise ValueError(
            f"imprinted vector shape {vec.shape} does not match embedding_dim "
            f"{params.spec.embedding_dim}"
        )
    norm = float(np.sqrt(np.sum(np.square(vec))))
    if abs(norm - 1.0) > 1e-3:
        raise ValueError(f"imprinted vector must be unit norm, got {norm:.6f}")
    num_classes = params.spec.num_classes
    index = num_classes if insertion_index is None else int(insertion_index)
    if not 0 <= index <= num_classes:
        raise IndexError(f"insertion_index {index} outside [0, {num_classes}]")

    base = params.copy()
    spec = NetworkSpec(
        input_dim=base.spec.input_dim,
        num_classes=num_classes + 1,
        hidden_dims=base.spec.hidden_dims,
        embedding_dim=base.spec.embedding_dim,
        head=base.spec.head,
        head_bias=base.spec.head_bias,
    )
    head = np.insert(base.head_w.data, index, vec, axis=1)
    return ModelParams(spec, base.extractor, base.embed_w, base.embed_b,
                       Tensor(head, requires_grad=True), None)


def imprint_pipeline(params: ModelParams, dataset, train_indices, novel_class: int,
                     n_shots: int, seed: int, insertion_index: int | None = None):
    """Select an n-shot subset of the novel training rows, imprint from
    exactly those rows, and extend the head.

    Returns (extended params, selected indices). The selection is the only
    random step and is fully determined by ``seed``.
    """
    shots = select_nshot(train_indices, dataset.labels, novel_class, n_shots, seed)
    vector = compute_imprinted_vector(params, dataset.features[shots])
    return imprint_extend_head(params, vector, insertion_index), shots
