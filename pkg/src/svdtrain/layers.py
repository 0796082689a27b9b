"""Layers stored and trained in SVD form.

A layer keeps its trainable variables as factors (u, s, v) of the matrix
obtained by reshaping the dense weight: fully connected weights factorize
directly, convolution kernels are first flattened channel-wise to
n x (c*w*h) or spatial-wise to (n*w) x (c*h).  The forward pass runs the
layer as two consecutive sub-layers built from the factors, with the
effective singular value |s| split as sqrt(|s|) on each side, so gradients
flow to u, s and v directly.

Kernel tensors use the (n, c, w, h) axis order everywhere in this module:
filters, input channels, kernel width, kernel height.  Images are NCHW, so
kernels are transposed on their last two axes when handed to conv2d.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeError
from .svd import SvdFactors, svd
from .tensor import (
    Tensor,
    absolute,
    add,
    conv2d,
    matmul,
    mul,
    reshape,
    sqrt,
    transpose,
)


class DecompositionScheme(enum.Enum):
    FULLY_CONNECTED = "fc"
    CHANNEL_WISE = "channel"
    SPATIAL_WISE = "spatial"


def parse_scheme(text: str) -> DecompositionScheme:
    for scheme in DecompositionScheme:
        if scheme.value == text:
            return scheme
    raise ValueError(f"unknown decomposition scheme {text!r}")


@dataclass(frozen=True)
class LinearGeometry:
    """Fully connected geometry: m output features, n input features."""

    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"linear geometry extents must be >= 1, got {self}")


@dataclass(frozen=True)
class ConvGeometry:
    """Convolution geometry: n filters, c input channels, w x h kernel."""

    n: int
    c: int
    w: int
    h: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.n, self.c, self.w, self.h) < 1:
            raise ValueError(f"conv geometry extents must be >= 1, got {self}")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")

    @property
    def kernel_shape(self) -> tuple[int, int, int, int]:
        return (self.n, self.c, self.w, self.h)


def matrix_shape(scheme: DecompositionScheme, geometry) -> tuple[int, int]:
    """Shape (rows, cols) of the reshaped weight matrix for a scheme."""
    if scheme is DecompositionScheme.FULLY_CONNECTED:
        return geometry.m, geometry.n
    if scheme is DecompositionScheme.CHANNEL_WISE:
        return geometry.n, geometry.c * geometry.w * geometry.h
    return geometry.n * geometry.w, geometry.c * geometry.h


# ---------------------------------------------------------------------------
# reshaping between 4-d kernels and 2-d matrices


def _check_kernel(kernel: np.ndarray) -> None:
    if kernel.ndim != 4:
        raise ShapeError(f"expected a 4-d kernel, got shape {kernel.shape}")


def reshape_channelwise(kernel: Tensor) -> Tensor:
    """(n, c, w, h) kernel -> n x (c*w*h) matrix, columns in (c, w, h) order."""
    arr = kernel.data
    _check_kernel(arr)
    n = arr.shape[0]
    return Tensor(arr.reshape(n, -1))


def reshape_channelwise_inverse(mat: Tensor, geometry: ConvGeometry) -> Tensor:
    return Tensor(mat.data.reshape(geometry.kernel_shape))


def reshape_spatialwise(kernel: Tensor) -> Tensor:
    """(n, c, w, h) kernel -> (n*w) x (c*h) matrix: row n_i*w + w_i, col c_i*h + h_i."""
    arr = kernel.data
    _check_kernel(arr)
    n, c, w, h = arr.shape
    return Tensor(arr.transpose(0, 2, 1, 3).reshape(n * w, c * h))


def reshape_spatialwise_inverse(mat: Tensor, geometry: ConvGeometry) -> Tensor:
    n, c, w, h = geometry.kernel_shape
    return Tensor(mat.data.reshape(n, w, c, h).transpose(0, 2, 1, 3))


# ---------------------------------------------------------------------------
# the layer itself


@dataclass(frozen=True)
class SvdLayer:
    """One layer held as (u, s, v) factors plus geometry and scheme.

    ``s`` is unconstrained during training; the effective singular values
    are |s|.  ``rank`` can be below full after pruning.
    """

    scheme: DecompositionScheme
    geometry: LinearGeometry | ConvGeometry
    u: Tensor
    s: Tensor
    v: Tensor
    bias: Tensor | None = None

    def __post_init__(self):
        rows, cols = matrix_shape(self.scheme, self.geometry)
        r = self.s.shape[0] if self.s.ndim == 1 else -1
        if r < 1 or r > min(rows, cols):
            raise ShapeError(
                f"singular value count {self.s.shape} invalid for matrix {rows}x{cols}"
            )
        if self.u.shape != (rows, r) or self.v.shape != (cols, r):
            raise ShapeError(
                f"factor shapes u{self.u.shape}, v{self.v.shape} do not match "
                f"matrix {rows}x{cols} at rank {r}"
            )

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    def with_params(self, u=None, s=None, v=None, bias=None) -> "SvdLayer":
        return replace(
            self,
            u=self.u if u is None else u,
            s=self.s if s is None else s,
            v=self.v if v is None else v,
            bias=self.bias if bias is None else bias,
        )


def init_from_dense(weight: Tensor, scheme: DecompositionScheme, geometry,
                    bias: Tensor | None = None) -> SvdLayer:
    """Build a full-rank SVD layer from a dense weight or kernel tensor."""
    if scheme is DecompositionScheme.FULLY_CONNECTED:
        if weight.shape != (geometry.m, geometry.n):
            raise ShapeError(f"weight shape {weight.shape} does not match {geometry}")
        mat = weight
    elif scheme is DecompositionScheme.CHANNEL_WISE:
        if weight.shape != geometry.kernel_shape:
            raise ShapeError(f"kernel shape {weight.shape} does not match {geometry}")
        mat = reshape_channelwise(weight)
    else:
        if weight.shape != geometry.kernel_shape:
            raise ShapeError(f"kernel shape {weight.shape} does not match {geometry}")
        mat = reshape_spatialwise(weight)
    factors: SvdFactors = svd(mat)
    return SvdLayer(scheme=scheme, geometry=geometry,
                    u=factors.u, s=factors.s, v=factors.v, bias=bias)


def _conv_kernel_layout(k):
    # (n, c, w, h) -> conv2d's (F, C, KH, KW)
    return transpose(k, (0, 1, 3, 2))


def forward(layer: SvdLayer, x, *, u=None, s=None, v=None, bias=None):
    """Run the layer as two consecutive sub-layers built from the factors.

    The keyword overrides let a training step substitute tape nodes for the
    stored tensors; with no overrides this is a plain inference pass.
    """
    u = layer.u if u is None else u
    s = layer.s if s is None else s
    v = layer.v if v is None else v
    bias = layer.bias if bias is None else bias
    q = sqrt(absolute(s))  # row vector of length r

    if layer.scheme is DecompositionScheme.FULLY_CONNECTED:
        hidden = matmul(x, mul(v, q))            # x @ (V diag(q)) : (N, r)
        out = matmul(hidden, transpose(mul(u, q)))
        if bias is not None:
            out = add(out, bias)
        return out

    geo: ConvGeometry = layer.geometry
    n, c, w, h = geo.kernel_shape
    r = layer.rank
    if layer.scheme is DecompositionScheme.CHANNEL_WISE:
        k1 = reshape(transpose(mul(v, q)), (r, c, w, h))
        k2 = reshape(mul(u, q), (n, r, 1, 1))
        mid = conv2d(x, _conv_kernel_layout(k1), stride=geo.stride, padding=geo.padding)
        out = conv2d(mid, k2, stride=1, padding=0)
    else:
        # spatial-wise: the height-spanning (1 x h) sub-layer carries the
        # vertical stride/padding, the width-spanning (w x 1) one the
        # horizontal; the pair then composes to the dense conv exactly.
        k1 = reshape(transpose(mul(v, q)), (r, c, 1, h))
        k2 = reshape(transpose(reshape(mul(u, q), (n, w, r)), (0, 2, 1)), (n, r, w, 1))
        mid = conv2d(x, _conv_kernel_layout(k1),
                     stride=(geo.stride, 1), padding=(geo.padding, 0))
        out = conv2d(mid, _conv_kernel_layout(k2),
                     stride=(1, geo.stride), padding=(0, geo.padding))
    if bias is not None:
        out = add(out, reshape(bias, (1, n, 1, 1)))
    return out


def compose_effective_weight(layer: SvdLayer) -> Tensor:
    """Collapse the factors back to a dense weight/kernel: U diag(|s|) V^T."""
    mat = matmul(mul(layer.u, absolute(layer.s)), transpose(layer.v))
    if layer.scheme is DecompositionScheme.FULLY_CONNECTED:
        return mat
    if layer.scheme is DecompositionScheme.CHANNEL_WISE:
        return reshape_channelwise_inverse(mat, layer.geometry)
    return reshape_spatialwise_inverse(mat, layer.geometry)


# ---------------------------------------------------------------------------
# dense reference layers (baseline models, FLOPs comparisons)


@dataclass(frozen=True)
class DenseLinear:
    """Plain fully connected layer: out = x @ weight^T + bias."""

    weight: Tensor  # (m, n)
    bias: Tensor | None = None

    @property
    def geometry(self) -> LinearGeometry:
        return LinearGeometry(*self.weight.shape)


@dataclass(frozen=True)
class DenseConv:
    """Plain convolution layer over a paper-layout (n, c, w, h) kernel."""

    kernel: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0

    @property
    def geometry(self) -> ConvGeometry:
        n, c, w, h = self.kernel.shape
        return ConvGeometry(n, c, w, h, self.stride, self.padding)


def dense_forward(layer: DenseLinear | DenseConv, x, *, weight=None, bias=None):
    """Forward pass of a dense layer (same override convention as `forward`)."""
    bias = layer.bias if bias is None else bias
    if isinstance(layer, DenseLinear):
        w = layer.weight if weight is None else weight
        out = matmul(x, transpose(w))
        if bias is not None:
            out = add(out, bias)
        return out
    k = layer.kernel if weight is None else weight
    out = conv2d(x, _conv_kernel_layout(k), stride=layer.stride, padding=layer.padding)
    if bias is not None:
        out = add(out, reshape(bias, (1, layer.kernel.shape[0], 1, 1)))
    return out
