"""Energy-threshold singular value pruning and FLOPs/parameter accounting.

Pruning removes the largest possible set of singular values whose summed
squared magnitude stays within a fraction ``e`` of the layer's total;
sorting s_i^2 ascending and taking the longest affordable prefix is optimal
for that budget (verified against exhaustive enumeration in the tests).
FLOPs are counted as multiply-accumulate operations, one MAC = 1 unit,
consistently across dense and decomposed layers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    ConvGeometry,
    DecompositionScheme,
    DenseConv,
    DenseLinear,
    LinearGeometry,
    SvdLayer,
)
from .tensor import Tensor, conv_output_extent


@dataclass(frozen=True)
class PruneDecision:
    """Which singular values survive, and how much energy the rest carried."""

    keep_indices: tuple[int, ...]
    pruned_energy_fraction: float
    rank_after: int

    def __post_init__(self):
        if self.rank_after != len(self.keep_indices) or self.rank_after < 1:
            raise ValueError("rank_after must equal the keep count and be >= 1")
        if len(set(self.keep_indices)) != len(self.keep_indices):
            raise ValueError("keep_indices must be distinct")


@dataclass(frozen=True)
class PruneRow:
    layer: int
    rank_before: int
    rank_after: int
    pruned_energy_fraction: float
    flops_before: int
    flops_after: int
    params_before: int
    params_after: int


@dataclass(frozen=True)
class PruneReport:
    rows: tuple[PruneRow, ...]

    @property
    def total_flops_before(self) -> int:
        return sum(r.flops_before for r in self.rows)

    @property
    def total_flops_after(self) -> int:
        return sum(r.flops_after for r in self.rows)

    @property
    def total_params_before(self) -> int:
        return sum(r.params_before for r in self.rows)

    @property
    def total_params_after(self) -> int:
        return sum(r.params_after for r in self.rows)

    @property
    def speedup(self) -> float:
        return self.total_flops_before / self.total_flops_after


def select_prune_set(s: Tensor, e: float) -> PruneDecision:
    """Choose the maximum-cardinality prune set with energy <= e * total.

    Candidates are ordered by s_i^2 ascending with ties broken by lower
    original index, and the longest prefix within budget is pruned.  At
    least one singular value (the largest |s|) is always retained.  Kept
    indices come back ordered by descending |s| (ties by lower index).
    """
    vals = s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64)
    if vals.ndim != 1 or vals.shape[0] < 1:
        raise ValueError(f"expected a non-empty 1-d tensor, got shape {vals.shape}")
    if not 0.0 <= e <= 1.0:
        raise ValueError(f"energy threshold must lie in [0, 1], got {e}")
    r = vals.shape[0]
    energy = vals * vals
    total = float(energy.sum())
    budget = e * total

    order = np.argsort(energy, kind="stable")  # ascending, ties -> lower index
    pruned = []
    acc = 0.0
    for idx in order:
        if acc + energy[idx] <= budget:
            acc += energy[idx]
            pruned.append(int(idx))
        else:
            break

    if len(pruned) == r:
        keep_set = {int(np.argmax(np.abs(vals)))}
    else:
        keep_set = set(range(r)) - set(pruned)
    keep = sorted(keep_set, key=lambda i: (-abs(vals[i]), i))
    pruned_energy = total - float(sum(energy[i] for i in keep))
    fraction = 0.0 if total == 0.0 else max(0.0, min(1.0, pruned_energy / total))
    return PruneDecision(
        keep_indices=tuple(keep),
        pruned_energy_fraction=fraction,
        rank_after=len(keep),
    )


def prune_layer(layer: SvdLayer, decision: PruneDecision) -> SvdLayer:
    """Build a reduced-rank copy keeping only the decided columns/entries."""
    keep = list(decision.keep_indices)
    if any(i < 0 or i >= layer.rank for i in keep):
        raise ValueError(f"keep indices {keep} out of range for rank {layer.rank}")
    return layer.with_params(
        u=Tensor(layer.u.data[:, keep]),
        s=Tensor(layer.s.data[keep]),
        v=Tensor(layer.v.data[:, keep]),
    )


def _conv_output_hw(geo: ConvGeometry, input_hw) -> tuple[int, int]:
    h_in, w_in = input_hw
    oh = conv_output_extent(h_in, geo.h, geo.stride, geo.padding)
    ow = conv_output_extent(w_in, geo.w, geo.stride, geo.padding)
    return oh, ow


def flops_count(layer, input_hw=(1, 1)) -> int:
    """Multiply-accumulate count of a layer applied to one sample.

    Accepts SVD layers (counting both sub-layers at the current rank) and
    dense layers.  ``input_hw`` is the spatial size of the incoming feature
    map; fully connected layers ignore it.
    """
    if isinstance(layer, DenseLinear):
        return layer.weight.shape[0] * layer.weight.shape[1]
    if isinstance(layer, DenseConv):
        geo = layer.geometry
        oh, ow = _conv_output_hw(geo, input_hw)
        return geo.n * geo.c * geo.w * geo.h * oh * ow

    if not isinstance(layer, SvdLayer):
        raise TypeError(f"cannot count FLOPs of {type(layer).__name__}")
    r = layer.rank
    if layer.scheme is DecompositionScheme.FULLY_CONNECTED:
        geo: LinearGeometry = layer.geometry
        return r * geo.n + geo.m * r
    geo = layer.geometry
    oh, ow = _conv_output_hw(geo, input_hw)
    if layer.scheme is DecompositionScheme.CHANNEL_WISE:
        return r * geo.c * geo.w * geo.h * oh * ow + geo.n * r * oh * ow
    # spatial-wise: first sub-layer consumes height only, so its output map
    # keeps the input width
    h_in, w_in = input_hw
    mid_h = conv_output_extent(h_in, geo.h, geo.stride, geo.padding)
    mid_w = w_in
    return r * geo.c * geo.h * mid_h * mid_w + geo.n * r * geo.w * oh * ow


def dense_flops_count(layer: SvdLayer, input_hw=(1, 1)) -> int:
    """MAC count of the dense layer the SVD layer replaces."""
    if layer.scheme is DecompositionScheme.FULLY_CONNECTED:
        return layer.geometry.m * layer.geometry.n
    geo = layer.geometry
    oh, ow = _conv_output_hw(geo, input_hw)
    return geo.n * geo.c * geo.w * geo.h * oh * ow


def param_count(layer: SvdLayer) -> int:
    total = layer.u.size + layer.s.size + layer.v.size
    if layer.bias is not None:
        total += layer.bias.size
    return total


def prune_model(layers, e: float, input_hws=None):
    """Prune every layer with one shared energy threshold.

    ``input_hws`` supplies the per-layer input spatial sizes for the FLOPs
    columns (defaults to (1, 1) everywhere, correct for pure-FC models).
    Returns (new layers, PruneReport).
    """
    layers = list(layers)
    if input_hws is None:
        input_hws = [(1, 1)] * len(layers)
    if len(input_hws) != len(layers):
        raise ValueError("input_hws must align with layers")
    new_layers = []
    rows = []
    for i, (layer, hw) in enumerate(zip(layers, input_hws)):
        decision = select_prune_set(layer.s, e)
        pruned = prune_layer(layer, decision)
        rows.append(
            PruneRow(
                layer=i,
                rank_before=layer.rank,
                rank_after=pruned.rank,
                pruned_energy_fraction=decision.pruned_energy_fraction,
                flops_before=flops_count(layer, hw),
                flops_after=flops_count(pruned, hw),
                params_before=param_count(layer),
                params_after=param_count(pruned),
            )
        )
        new_layers.append(pruned)
    return new_layers, PruneReport(rows=tuple(rows))
