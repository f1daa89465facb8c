"""Layer primitives: dense, ReLU, frame splicing, softmax cross-entropy,
and the gradient reversal layer.

Layers return per-frame quantities; minibatch averaging and the loss
masks are applied by the network so that masked frames can be zeroed
row-by-row before any reduction happens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StateError, ValidationError
from .linalg import as_matrix, as_vector, matmul, sum_rows


class DenseLayer:
    """Affine map y = x W^T + b with cached input for the backward pass."""

    def __init__(self, weights, bias):
        self.w = as_matrix(weights, "weights")
        self.b = as_vector(bias, "bias")
        if self.b.shape[0] != self.w.shape[0]:
            raise ShapeError(
                f"bias length {self.b.shape[0]} != output width {self.w.shape[0]}"
            )
        self._x = None

    @property
    def in_width(self) -> int:
        return self.w.shape[1]

    @property
    def out_width(self) -> int:
        return self.w.shape[0]

    def forward(self, x) -> np.ndarray:
        x = as_matrix(x, "input")
        if x.shape[1] != self.in_width:
            raise ShapeError(
                f"input width {x.shape[1]} != layer input width {self.in_width}"
            )
        self._x = x
        return matmul(x, self.w.T) + self.b

    def backward(self, grad_out):
        """Returns (grad_in, grad_w, grad_b); requires a prior forward."""
        if self._x is None:
            raise StateError("dense backward called before forward")
        g = as_matrix(grad_out, "grad_out")
        if g.shape != (self._x.shape[0], self.out_width):
            raise ShapeError(
                f"grad_out shape {g.shape} != ({self._x.shape[0]}, {self.out_width})"
            )
        grad_in = matmul(g, self.w)
        grad_w = matmul(g.T, self._x)
        grad_b = sum_rows(g)
        return grad_in, grad_w, grad_b


class ReluLayer:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""

    def __init__(self):
        self._x = None

    def forward(self, x) -> np.ndarray:
        x = as_matrix(x, "input")
        self._x = x
        return np.maximum(x, 0.0)

    def backward(self, grad_out) -> np.ndarray:
        if self._x is None:
            raise StateError("relu backward called before forward")
        g = as_matrix(grad_out, "grad_out")
        if g.shape != self._x.shape:
            raise ShapeError(f"grad_out shape {g.shape} != input shape {self._x.shape}")
        out = g.copy()
        out[self._x <= 0.0] = 0.0
        return out


@dataclass(frozen=True)
class SpliceSpec:
    """Temporal context offsets plus a subsampling stride."""

    context: tuple = (-1, 0, 1)
    subsample: int = 1

    def __post_init__(self):
        ctx = tuple(int(c) for c in self.context)
        if not ctx:
            raise ValidationError("context must be non-empty")
        if any(b <= a for a, b in zip(ctx, ctx[1:])):
            raise ValidationError(f"context offsets must be strictly increasing: {ctx}")
        if self.subsample < 1:
            raise ValidationError(f"subsample must be >= 1, got {self.subsample}")
        object.__setattr__(self, "context", ctx)
        object.__setattr__(self, "subsample", int(self.subsample))

    def out_width(self, dim: int) -> int:
        return dim * len(self.context)


def splice_forward(spec: SpliceSpec, frames, subsample: int | None = None) -> np.ndarray:
    """Concatenate context frames around each kept position.

    Row t' of the output stacks the frames at t'*subsample + offset for
    each context offset, clamping positions to the sequence edges. The
    output has ceil(T / subsample) rows; an optional ``subsample``
    argument overrides the spec's stride (stride 1 is used when scoring
    every frame of an utterance).
    """
    frames = as_matrix(frames, "frames")
    stride = spec.subsample if subsample is None else int(subsample)
    if stride < 1:
        raise ValidationError(f"subsample must be >= 1, got {stride}")
    t_in, dim = frames.shape
    width = spec.out_width(dim)
    if t_in == 0:
        return np.zeros((0, width))
    t_out = -(-t_in // stride)
    out = np.empty((t_out, width))
    base = np.arange(t_out) * stride
    for j, off in enumerate(spec.context):
        idx = np.clip(base + off, 0, t_in - 1)
        out[:, j * dim : (j + 1) * dim] = frames[idx]
    return out


def splice_base_indices(t_in: int, stride: int) -> np.ndarray:
    """Positions in the raw sequence that spliced rows are centred on."""
    t_out = -(-t_in // stride) if t_in > 0 else 0
    return np.arange(t_out) * stride


def softmax(logits) -> np.ndarray:
    logits = as_matrix(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_ce(logits, labels):
    """Per-frame cross-entropy loss and unreduced logit gradients.

    Returns (loss, grad) where loss[i] = -log softmax(logits_i)[labels_i]
    and grad = softmax - onehot. No minibatch averaging is applied.
    """
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if n and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ValidationError(f"label {bad} outside [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    denom = e.sum(axis=1)
    rows = np.arange(n)
    loss = np.log(denom) - shifted[rows, labels]
    grad = e / denom[:, None]
    grad[rows, labels] -= 1.0
    return loss, grad


@dataclass
class GrlLayer:
    """Identity forward; backward multiplies the error signal by -lam.

    The sign of ``lam`` selects the training mode: positive reverses the
    domain error into the trunk (adversarial), negative passes it aligned
    (multi-task), zero blocks it.
    """

    lam: float = 0.0

    def forward(self, x) -> np.ndarray:
        return as_matrix(x, "input")

    def backward(self, grad_out) -> np.ndarray:
        return -self.lam * as_matrix(grad_out, "grad_out")
