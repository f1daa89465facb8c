"""Matrix arithmetic with a pinned accumulation order.

Matrices are 2-D float64 C-contiguous numpy arrays; vectors are 1-D
float64 arrays. Every reduction here runs in ascending index order with a
single 64-bit accumulator per output element. That discipline is what
makes "frames with zero gradient are exact no-ops" hold bitwise, which
the equivalence and masking tests rely on; do not swap these loops for
BLAS calls or numpy reductions (both regroup sums).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate/convert to a 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product a @ b with k-ascending summation per output element."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    m, k = a.shape
    n = b.shape[1]
    acc = np.zeros((m, n))
    tmp = np.empty((m, n))
    for t in range(k):
        np.multiply(a[:, t : t + 1], b[t : t + 1, :], out=tmp)
        np.add(acc, tmp, out=acc)
    return acc


def sum_rows(a: np.ndarray) -> np.ndarray:
    """Column sums accumulated row 0 upward."""
    a = as_matrix(a)
    acc = np.zeros(a.shape[1])
    for t in range(a.shape[0]):
        np.add(acc, a[t, :], out=acc)
    return acc


def seq_sum(values) -> float:
    """Sum of a 1-D sequence accumulated in index order."""
    acc = 0.0
    for v in values:
        acc += float(v)
    return acc


def all_finite(a: np.ndarray) -> bool:
    return bool(np.isfinite(a).all())
