"""SGD with heavy-ball momentum and milestone learning-rate schedules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class Schedule:
    """Initial learning rate plus (epoch, multiplier) decay milestones."""

    initial_lr: float
    milestones: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        epochs = [m[0] for m in self.milestones]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("milestone epochs must be strictly increasing")


def lr_at_epoch(schedule: Schedule, epoch: int) -> float:
    """Learning rate in effect at an epoch: initial times all passed multipliers."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    lr = schedule.initial_lr
    for milestone, multiplier in schedule.milestones:
        if epoch >= milestone:
            lr *= multiplier
    return lr


@dataclass
class OptimizerState:
    """Momentum buffers and hyperparameters for SGD updates."""

    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr: float = 0.01
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def sgd_step(params: dict[str, Tensor], grads: dict[str, Tensor],
             state: OptimizerState, no_decay=frozenset()):
    """One decoupled heavy-ball update per parameter.

    g' = g + weight_decay * w;  buf <- momentum * buf + g';  w <- w - lr * buf.
    Parameters named in ``no_decay`` skip the weight-decay term.  Buffers
    live in ``state`` keyed by parameter name; returns (new params, state).
    """
    new_params: dict[str, Tensor] = {}
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match parameter "
                f"{name!r} of shape {param.shape}"
            )
        g = grad.data
        if state.weight_decay and name not in no_decay:
            g = g + state.weight_decay * param.data
        buf = state.buffers.get(name)
        buf = g.copy() if buf is None else state.momentum * buf + g
        state.buffers[name] = buf
        try:
            new_params[name] = Tensor(param.data - state.lr * buf)
        except NumericError as err:
            raise NumericError(f"parameter {name!r} became non-finite: {err}") from err
    return new_params, state
