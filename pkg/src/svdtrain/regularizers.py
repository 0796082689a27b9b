"""Training losses added to the task loss: orthogonality and sparsity.

The orthogonality term drives U^T U and V^T V toward the identity so the
factorization stays a valid SVD; the sparsity terms (plain L1 or the
scale-invariant L1/L2 ratio) push singular values toward zero so ranks can
be pruned afterwards.  All three are differentiable on the tape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import (
    Node,
    Tensor,
    absolute,
    div,
    matmul,
    mul,
    sqrt,
    square,
    sub,
    sum_all,
    transpose,
)

HOYER_NORM_GUARD = 1e-12

REGULARIZER_KINDS = ("none", "l1", "hoyer")


@dataclass(frozen=True)
class RegularizerConfig:
    """Decay strengths and the choice of sparsity penalty."""

    lambda_o: float = 0.0
    lambda_s: float = 0.0
    kind: str = "none"

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.lambda_o < 0 or self.lambda_s < 0:
            raise ValueError("decay parameters must be non-negative")
        if self.kind == "none" and self.lambda_s != 0.0:
            raise ValueError("lambda_s must be 0 when no sparsity regularizer is selected")


def orthogonality_loss(u, v):
    """(1/r^2) (|U^T U - I|_F^2 + |V^T V - I|_F^2)."""
    r_u = u.shape[1] if len(u.shape) == 2 else -1
    r_v = v.shape[1] if len(v.shape) == 2 else -1
    if r_u < 1 or r_u != r_v:
        raise ShapeError(f"u and v must share a column count, got {u.shape} and {v.shape}")
    eye = np.eye(r_u)
    gram_u = sub(matmul(transpose(u), u), eye)
    gram_v = sub(matmul(transpose(v), v), eye)
    return mul(sum_all(square(gram_u)) + sum_all(square(gram_v)), 1.0 / (r_u * r_u))


def l1_loss(s):
    """Sum of absolute singular values (nuclear norm of the composed weight)."""
    if len(s.shape) != 1 or s.shape[0] < 1:
        raise ShapeError(f"expected a non-empty 1-d tensor, got shape {s.shape}")
    return sum_all(absolute(s))


def hoyer_loss(s):
    """|s|_1 / |s|_2, the scale-invariant sparsity measure.

    Guarded at the origin: returns a constant 0 (zero gradient) when the L2
    norm is below 1e-12, where the ratio has no meaningful continuation.
    """
    if len(s.shape) != 1 or s.shape[0] < 1:
        raise ShapeError(f"expected a non-empty 1-d tensor, got shape {s.shape}")
    sq = sum_all(square(s))
    value = sq.value if isinstance(sq, Node) else sq.data
    if float(np.sqrt(value)) < HOYER_NORM_GUARD:
        return Tensor(0.0)
    return div(sum_all(absolute(s)), sqrt(sq))


def sparsity_loss(s, kind: str):
    if kind == "l1":
        return l1_loss(s)
    if kind == "hoyer":
        return hoyer_loss(s)
    raise ValueError(f"no sparsity loss for kind {kind!r}")


def total_objective(task_loss, layers, config: RegularizerConfig):
    """task loss + lambda_o * sum of orthogonality terms + lambda_s * sum of sparsity terms.

    ``layers`` is any iterable of objects carrying u, s, v attributes (the
    stored tensors or their tape nodes); terms with zero decay are skipped
    so the degenerate config returns the task loss unchanged.
    """
    total = task_loss
    if config.lambda_o > 0.0:
        for layer in layers:
            total = total + mul(orthogonality_loss(layer.u, layer.v), config.lambda_o)
    if config.lambda_s > 0.0 and config.kind != "none":
        for layer in layers:
            total = total + mul(sparsity_loss(layer.s, config.kind), config.lambda_s)
    return total
