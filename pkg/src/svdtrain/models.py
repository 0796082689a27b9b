"""Model assembly: block sequences, reference architectures, parameter plumbing.

A model is an immutable sequence of blocks.  Trainable blocks expose their
tensors through ``param_tensors`` and accept tape nodes through the
``params`` argument of ``forward``, so one forward implementation serves
inference and training.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import layers as L
from .errors import NumericError, ShapeError
from .tensor import Tensor, conv_output_extent, maxpool2d, relu, reshape

MODEL_IDS = ("mlp-s", "cnn-s")


# ---------------------------------------------------------------------------
# blocks


@dataclass(frozen=True)
class SvdBlock:
    layer: L.SvdLayer

    def param_tensors(self):
        out = {"u": self.layer.u, "s": self.layer.s, "v": self.layer.v}
        if self.layer.bias is not None:
            out["bias"] = self.layer.bias
        return out

    def with_params(self, params):
        return SvdBlock(self.layer.with_params(**params))

    def forward(self, x, params=None):
        params = params or {}
        return L.forward(self.layer, x, **params)

    def out_shape(self, in_shape):
        layer = self.layer
        if layer.scheme is L.DecompositionScheme.FULLY_CONNECTED:
            if in_shape != (layer.geometry.n,):
                raise ShapeError(f"expected input {layer.geometry.n}, got {in_shape}")
            return (layer.geometry.m,)
        return _conv_out_shape(layer.geometry, in_shape)


@dataclass(frozen=True)
class DenseLinearBlock:
    layer: L.DenseLinear

    def param_tensors(self):
        out = {"weight": self.layer.weight}
        if self.layer.bias is not None:
            out["bias"] = self.layer.bias
        return out

    def with_params(self, params):
        return DenseLinearBlock(replace(self.layer, **params))

    def forward(self, x, params=None):
        params = params or {}
        return L.dense_forward(self.layer, x, **params)

    def out_shape(self, in_shape):
        geo = self.layer.geometry
        if in_shape != (geo.n,):
            raise ShapeError(f"expected input {geo.n}, got {in_shape}")
        return (geo.m,)


@dataclass(frozen=True)
class DenseConvBlock:
    layer: L.DenseConv

    def param_tensors(self):
        out = {"weight": self.layer.kernel}
        if self.layer.bias is not None:
            out["bias"] = self.layer.bias
        return out

    def with_params(self, params):
        fields = dict(params)
        if "weight" in fields:
            fields["kernel"] = fields.pop("weight")
        return DenseConvBlock(replace(self.layer, **fields))

    def forward(self, x, params=None):
        params = params or {}
        return L.dense_forward(self.layer, x, **params)

    def out_shape(self, in_shape):
        return _conv_out_shape(self.layer.geometry, in_shape)


@dataclass(frozen=True)
class ReluBlock:
    def param_tensors(self):
        return {}

    def with_params(self, params):
        return self

    def forward(self, x, params=None):
        return relu(x)

    def out_shape(self, in_shape):
        return in_shape


@dataclass(frozen=True)
class MaxPoolBlock:
    size: int = 2

    def param_tensors(self):
        return {}

    def with_params(self, params):
        return self

    def forward(self, x, params=None):
        return maxpool2d(x, self.size)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if h % self.size or w % self.size:
            raise ShapeError(f"pool size {self.size} does not divide {in_shape}")
        return (c, h // self.size, w // self.size)


@dataclass(frozen=True)
class FlattenBlock:
    def param_tensors(self):
        return {}

    def with_params(self, params):
        return self

    def forward(self, x, params=None):
        n = x.shape[0]
        flat = 1
        for extent in x.shape[1:]:
            flat *= extent
        return reshape(x, (n, flat))

    def out_shape(self, in_shape):
        flat = 1
        for extent in in_shape:
            flat *= extent
        return (flat,)


def _conv_out_shape(geo: L.ConvGeometry, in_shape):
    c, h, w = in_shape
    if c != geo.c:
        raise ShapeError(f"expected {geo.c} channels, got input shape {in_shape}")
    oh = conv_output_extent(h, geo.h, geo.stride, geo.padding)
    ow = conv_output_extent(w, geo.w, geo.stride, geo.padding)
    return (geo.n, oh, ow)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class Model:
    blocks: tuple
    input_shape: tuple[int, ...]
    class_count: int
    model_id: str = "custom"

    def forward(self, x, params=None):
        """Run all blocks; ``params`` maps "<block>.<name>" to tensors/nodes."""
        for i, block in enumerate(self.blocks):
            own = None
            if params is not None:
                prefix = f"{i}."
                own = {k[len(prefix):]: v for k, v in params.items()
                       if k.startswith(prefix)}
            try:
                x = block.forward(x, own)
            except NumericError as err:
                raise NumericError(
                    f"block {i} ({type(block).__name__}): {err}"
                ) from err
        return x

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, block in enumerate(self.blocks):
            for name, tensor in block.param_tensors().items():
                out[f"{i}.{name}"] = tensor
        return out

    def with_parameters(self, params: dict[str, Tensor]) -> "Model":
        blocks = []
        for i, block in enumerate(self.blocks):
            prefix = f"{i}."
            own = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
            blocks.append(block.with_params(own) if own else block)
        return replace(self, blocks=tuple(blocks))

    def svd_layer_indices(self) -> list[int]:
        return [i for i, b in enumerate(self.blocks) if isinstance(b, SvdBlock)]

    def svd_layers(self) -> list[L.SvdLayer]:
        return [self.blocks[i].layer for i in self.svd_layer_indices()]

    def replace_svd_layers(self, new_layers) -> "Model":
        new_layers = list(new_layers)
        indices = self.svd_layer_indices()
        if len(new_layers) != len(indices):
            raise ValueError("layer count mismatch")
        blocks = list(self.blocks)
        for idx, layer in zip(indices, new_layers):
            blocks[idx] = SvdBlock(layer)
        return replace(self, blocks=tuple(blocks))

    def layer_input_hws(self) -> list[tuple[int, int]]:
        """Input spatial size seen by each SVD layer, (1, 1) for FC layers."""
        out = []
        shape = self.input_shape
        for block in self.blocks:
            if isinstance(block, SvdBlock):
                if block.layer.scheme is L.DecompositionScheme.FULLY_CONNECTED:
                    out.append((1, 1))
                else:
                    out.append((shape[1], shape[2]))
            shape = block.out_shape(shape)
        return out

    def output_shape(self) -> tuple[int, ...]:
        shape = self.input_shape
        for block in self.blocks:
            shape = block.out_shape(shape)
        return shape


# ---------------------------------------------------------------------------
# reference architectures


def _he_normal(rng, shape, fan_in):
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))


def _dense_blocks(model_id: str, input_shape, class_count: int, seed: int):
    """Dense blueprint of a reference model, before any decomposition."""
    rng = np.random.default_rng(seed)
    blocks = []
    if model_id == "mlp-s":
        dims = (int(np.prod(input_shape)), 256, 64, class_count)
        if len(input_shape) > 1:
            blocks.append(FlattenBlock())
        for i, (n_in, n_out) in enumerate(zip(dims, dims[1:])):
            weight = _he_normal(rng, (n_out, n_in), n_in)
            blocks.append(DenseLinearBlock(L.DenseLinear(weight, Tensor(np.zeros(n_out)))))
            if i < len(dims) - 2:
                blocks.append(ReluBlock())
        return blocks
    if model_id == "cnn-s":
        if len(input_shape) != 3:
            raise ValueError("cnn-s needs (C, H, W) inputs")
        c, h, w = input_shape
        k1 = _he_normal(rng, (8, c, 3, 3), c * 9)
        blocks.append(DenseConvBlock(L.DenseConv(k1, Tensor(np.zeros(8)), 1, 1)))
        blocks.append(ReluBlock())
        k2 = _he_normal(rng, (16, 8, 3, 3), 8 * 9)
        blocks.append(DenseConvBlock(L.DenseConv(k2, Tensor(np.zeros(16)), 1, 1)))
        blocks.append(ReluBlock())
        blocks.append(MaxPoolBlock(2))
        blocks.append(FlattenBlock())
        flat = 16 * (h // 2) * (w // 2)
        weight = _he_normal(rng, (class_count, flat), flat)
        blocks.append(DenseLinearBlock(L.DenseLinear(weight, Tensor(np.zeros(class_count)))))
        return blocks
    raise ValueError(f"unknown model id {model_id!r}; choose from {MODEL_IDS}")


def build_dense_model(model_id: str, input_shape, class_count: int, seed: int) -> Model:
    blocks = _dense_blocks(model_id, tuple(input_shape), class_count, seed)
    return Model(blocks=tuple(blocks), input_shape=tuple(input_shape),
                 class_count=class_count, model_id=model_id)


def decompose_model(dense: Model, conv_scheme: L.DecompositionScheme) -> Model:
    """Replace every dense layer with its full-rank SVD layer."""
    blocks = []
    for block in dense.blocks:
        if isinstance(block, DenseLinearBlock):
            geo = block.layer.geometry
            layer = L.init_from_dense(block.layer.weight,
                                      L.DecompositionScheme.FULLY_CONNECTED,
                                      geo, bias=block.layer.bias)
            blocks.append(SvdBlock(layer))
        elif isinstance(block, DenseConvBlock):
            layer = L.init_from_dense(block.layer.kernel, conv_scheme,
                                      block.layer.geometry, bias=block.layer.bias)
            blocks.append(SvdBlock(layer))
        else:
            blocks.append(block)
    return replace(dense, blocks=tuple(blocks))


def build_model(model_id: str, input_shape, class_count: int,
                conv_scheme: L.DecompositionScheme, seed: int) -> Model:
    """Reference model decomposed at full rank from a seeded dense init."""
    return decompose_model(build_dense_model(model_id, input_shape, class_count, seed),
                           conv_scheme)


def random_low_rank_like(model: Model, seed: int) -> Model:
    """Same architecture and ranks as ``model`` but freshly initialized.

    Used for the train-from-scratch control: each layer gets the top-rank
    truncation of the SVD of a new fan-in-scaled random dense weight.
    """
    rng = np.random.default_rng(seed)
    new_layers = []
    for layer in model.svd_layers():
        if layer.scheme is L.DecompositionScheme.FULLY_CONNECTED:
            fan_in = layer.geometry.n
            shape = (layer.geometry.m, layer.geometry.n)
        else:
            geo = layer.geometry
            fan_in = geo.c * geo.w * geo.h
            shape = geo.kernel_shape
        dense = _he_normal(rng, shape, fan_in)
        fresh = L.init_from_dense(dense, layer.scheme, layer.geometry, bias=layer.bias)
        r = layer.rank
        new_layers.append(fresh.with_params(
            u=Tensor(fresh.u.data[:, :r]),
            s=Tensor(fresh.s.data[:r]),
            v=Tensor(fresh.v.data[:, :r]),
        ))
    return model.replace_svd_layers(new_layers)
