"""Dense float64 tensors and tape-based reverse-mode autodiff.

Values are immutable :class:`Tensor` objects.  A :class:`Tape` records
primitive operations as they execute and replays the record in reverse to
accumulate gradients for every registered parameter.  Every operation also
accepts plain tensors (or raw arrays / scalars), in which case nothing is
recorded and the result comes back as a ``Tensor`` — the same code path
serves inference and the finite-difference oracle.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import GeometryError, NumericError, ShapeError


class Tensor:
    """Immutable dense array of 64-bit reals (row-major)."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if not np.isfinite(arr).all():
            raise NumericError("tensor contains non-finite values")
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        """Read-only numpy view of the value."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # arithmetic sugar; delegates to the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Node:
    """A value recorded on a tape; created through the ops, never directly."""

    __slots__ = ("tape", "value", "grad", "_backward", "name")

    def __init__(self, tape, value, backward=None, name=None):
        self.tape = tape
        self.value = value  # raw float64 ndarray
        self.grad = None
        self._backward = backward
        self.name = name
        tape._nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single-element node, got shape {self.shape}")
        return float(self.value.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Node(shape={self.shape}{tag})"

    __add__ = Tensor.__add__
    __radd__ = Tensor.__radd__
    __sub__ = Tensor.__sub__
    __rsub__ = Tensor.__rsub__
    __mul__ = Tensor.__mul__
    __rmul__ = Tensor.__rmul__
    __truediv__ = Tensor.__truediv__
    __neg__ = Tensor.__neg__
    __matmul__ = Tensor.__matmul__


class Tape:
    """Ordered record of primitive operations plus a parameter registry.

    Nodes are appended in creation order, which is automatically a valid
    topological order.  A tape serves one forward+backward pass; build a
    fresh tape for the next step.
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self._params: dict[str, Node] = {}

    def parameter(self, name: str, value: Tensor) -> Node:
        """Register a trainable leaf and return its node."""
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered on this tape")
        if not isinstance(value, Tensor):
            value = Tensor(value)
        node = Node(self, value.data, name=name)
        self._params[name] = node
        return node

    @property
    def parameters(self) -> dict[str, Node]:
        return dict(self._params)

    def backward(self, loss: Node) -> dict[str, Tensor]:
        """Reverse-accumulate d(loss)/d(parameter) for every registered parameter.

        Parameters the loss does not depend on get zero gradients.
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ValueError("loss must be a node recorded on this tape")
        if loss.value.ndim != 0:
            raise ShapeError(f"backward needs a scalar (0-d) loss, got rank {loss.value.ndim}")
        for node in self._nodes:
            node.grad = None
        loss.grad = np.ones((), dtype=np.float64)
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        out = {}
        for name, node in self._params.items():
            if node.grad is None:
                out[name] = Tensor(np.zeros_like(node.value))
            else:
                out[name] = Tensor(node.grad)
        return out


# ---------------------------------------------------------------------------
# op plumbing


def _raw(x) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _accumulate(node: Node, g: np.ndarray) -> None:
    # first write copies so later in-place adds never alias an upstream view
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64)
    else:
        node.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _emit(tape, value, backward):
    if tape is None:
        return Tensor(value)
    return Node(tape, value, backward)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    av, bv = _raw(a), _raw(b)
    out = av + bv
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        if isinstance(a, Node):
            _accumulate(a, _unbroadcast(g, av.shape))
        if isinstance(b, Node):
            _accumulate(b, _unbroadcast(g, bv.shape))

    return Node(tape, out, backward)


def sub(a, b):
    av, bv = _raw(a), _raw(b)
    out = av - bv
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        if isinstance(a, Node):
            _accumulate(a, _unbroadcast(g, av.shape))
        if isinstance(b, Node):
            _accumulate(b, _unbroadcast(-g, bv.shape))

    return Node(tape, out, backward)


def mul(a, b):
    av, bv = _raw(a), _raw(b)
    out = av * bv
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        if isinstance(a, Node):
            _accumulate(a, _unbroadcast(g * bv, av.shape))
        if isinstance(b, Node):
            _accumulate(b, _unbroadcast(g * av, bv.shape))

    return Node(tape, out, backward)


def div(a, b):
    av, bv = _raw(a), _raw(b)
    out = av / bv
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        if isinstance(a, Node):
            _accumulate(a, _unbroadcast(g / bv, av.shape))
        if isinstance(b, Node):
            _accumulate(b, _unbroadcast(-g * av / (bv * bv), bv.shape))

    return Node(tape, out, backward)


def neg(a):
    av = _raw(a)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(-av)

    def backward(g):
        _accumulate(a, -g)

    return Node(tape, -av, backward)


def absolute(a):
    """Elementwise |x|; subgradient 0 at exact zeros."""
    av = _raw(a)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(np.abs(av))

    def backward(g):
        _accumulate(a, g * np.sign(av))

    return Node(tape, np.abs(av), backward)


def square(a):
    av = _raw(a)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(av * av)

    def backward(g):
        _accumulate(a, g * (2.0 * av))

    return Node(tape, av * av, backward)


def sqrt(a):
    """Elementwise square root of a non-negative tensor; derivative 0 at 0."""
    av = _raw(a)
    if (av < 0).any():
        raise NumericError("sqrt of a negative value")
    out = np.sqrt(av)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out)

    def backward(g):
        deriv = np.where(av > 0, 0.5 / np.where(av > 0, out, 1.0), 0.0)
        _accumulate(a, g * deriv)

    return Node(tape, out, backward)


def relu(a):
    av = _raw(a)
    out = np.maximum(av, 0.0)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out)

    def backward(g):
        _accumulate(a, g * (av > 0))

    return Node(tape, out, backward)


def sum_all(a):
    """Sum of all elements, as a 0-d scalar."""
    av = _raw(a)
    out = av.sum()
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out)

    def backward(g):
        _accumulate(a, np.broadcast_to(g, av.shape))

    return Node(tape, np.asarray(out), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    av = _raw(a)
    out = av.reshape(shape)
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out)

    def backward(g):
        _accumulate(a, g.reshape(av.shape))

    return Node(tape, out, backward)


def transpose(a, axes=None):
    av = _raw(a)
    out = np.ascontiguousarray(av.transpose(axes))
    tape = _tape_of(a)
    if tape is None:
        return Tensor(out)

    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return Node(tape, out, backward)


# ---------------------------------------------------------------------------
# linear algebra / network ops


def matmul(a, b):
    av, bv = _raw(a), _raw(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got shapes {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul inner extents differ for shapes {av.shape} and {bv.shape}")
    out = av @ bv
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)

    def backward(g):
        if isinstance(a, Node):
            _accumulate(a, g @ bv.T)
        if isinstance(b, Node):
            _accumulate(b, av.T @ g)

    return Node(tape, out, backward)


def _pair(value, what) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        if len(value) != 2:
            raise ValueError(f"{what} must be an int or a pair, got {value!r}")
        return int(value[0]), int(value[1])
    return int(value), int(value)


def conv_output_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    """Output size along one spatial axis; raises GeometryError when non-integral."""
    span = extent + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        raise GeometryError(
            f"conv output extent not a positive integer: input {extent}, kernel {kernel}, "
            f"stride {stride}, padding {padding}"
        )
    return span // stride + 1


def conv2d(x, kernel, stride=1, padding=0):
    """2-d cross-correlation of NCHW input with an (F, C, KH, KW) kernel.

    ``stride`` and ``padding`` are ints or (height, width) pairs; padding is
    zero-fill.  Differentiable w.r.t. both input and kernel.
    """
    xv, kv = _raw(x), _raw(kernel)
    if xv.ndim != 4 or kv.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input and kernel, got {xv.shape} and {kv.shape}")
    n, c, h, w = xv.shape
    f, kc, kh, kw = kv.shape
    if c != kc:
        raise ShapeError(f"conv2d channel mismatch: input {xv.shape} vs kernel {kv.shape}")
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    if sh < 1 or sw < 1:
        raise ValueError("stride must be positive")
    if ph < 0 or pw < 0:
        raise ValueError("padding must be non-negative")
    oh = conv_output_extent(h, kh, sh, ph)
    ow = conv_output_extent(w, kw, sw, pw)

    padded = np.pad(xv, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xv
    cols = kernels.im2col(padded, kh, kw, sh, sw)  # (n*oh*ow, c*kh*kw)
    kmat = kv.reshape(f, c * kh * kw)
    out2d = cols @ kmat.T
    out = np.ascontiguousarray(out2d.reshape(n, oh, ow, f).transpose(0, 3, 1, 2))

    tape = _tape_of(x, kernel)
    if tape is None:
        return Tensor(out)

    def backward(g):
        g2d = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, f)
        if isinstance(kernel, Node):
            _accumulate(kernel, (g2d.T @ cols).reshape(kv.shape))
        if isinstance(x, Node):
            dcols = g2d @ kmat
            dpadded = kernels.col2im(
                dcols, n, c, h + 2 * ph, w + 2 * pw, kh, kw, sh, sw
            )
            if ph or pw:
                dpadded = dpadded[:, :, ph:ph + h, pw:pw + w]
            _accumulate(x, dpadded)

    return Node(tape, out, backward)


def maxpool2d(x, size=2, stride=None):
    """Max pooling over square windows; stride defaults to the window size."""
    xv = _raw(x)
    if xv.ndim != 4:
        raise ShapeError(f"maxpool2d needs a 4-d input, got shape {xv.shape}")
    k = int(size)
    s = k if stride is None else int(stride)
    n, c, h, w = xv.shape
    conv_output_extent(h, k, s, 0)
    conv_output_extent(w, k, s, 0)
    out, idx = kernels.maxpool(xv, k, s)

    tape = _tape_of(x)
    if tape is None:
        return Tensor(out)

    def backward(g):
        _accumulate(x, kernels.maxpool_backward(g, idx, h, w))

    return Node(tape, out, backward)


def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy of (N, K) logits against integer labels."""
    lv = _raw(logits)
    y = np.asarray(labels)
    if lv.ndim != 2:
        raise ShapeError(f"logits must be 2-d, got shape {lv.shape}")
    if y.ndim != 1 or y.shape[0] != lv.shape[0]:
        raise ShapeError(f"labels shape {y.shape} does not match logits {lv.shape}")
    if y.min() < 0 or y.max() >= lv.shape[1]:
        raise ValueError("labels out of range for logit width")
    n = lv.shape[0]
    shifted = lv - lv.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    value = -log_probs[np.arange(n), y].mean()

    tape = _tape_of(logits)
    if tape is None:
        return Tensor(value)

    def backward(g):
        probs = expd / denom
        probs[np.arange(n), y] -= 1.0
        _accumulate(logits, (float(g) / n) * probs)

    return Node(tape, np.asarray(value), backward)


# ---------------------------------------------------------------------------
# gradient oracle


def finite_diff_check(f, p: Tensor, eps: float = 1e-5) -> float:
    """Compare the tape gradient of ``f`` at ``p`` with central differences.

    ``f`` maps one tensor-like argument to a scalar and must be
    deterministic; it is called with a Node to obtain the analytic gradient
    and with perturbed plain tensors for the numeric one.  Returns the max
    over coordinates of |difference| / max(1, |analytic|).
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    tape = Tape()
    node = tape.parameter("p", p)
    loss = f(node)
    analytic = tape.backward(loss)["p"].data

    base = p.data
    worst = 0.0
    flat_analytic = analytic.ravel()
    for i in range(base.size):
        plus = base.copy()
        plus.flat[i] += eps
        minus = base.copy()
        minus.flat[i] -= eps
        fp = _raw(f(Tensor(plus))).reshape(())
        fm = _raw(f(Tensor(minus))).reshape(())
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(numeric - flat_analytic[i]) / max(1.0, abs(flat_analytic[i]))
        if err > worst:
            worst = float(err)
    return worst
