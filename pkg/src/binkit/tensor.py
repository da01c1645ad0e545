"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations the selectional auto-encoders need are provided. Spatial
tensors use the ``(batch, channels, rows, cols)`` layout and kernels the
``(out_channels, in_channels, k, k)`` layout. Convolutions run
channels-last, one GEMM per kernel tap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

FMEASURE_EPS = 1e-7


class Tensor:
    """An array with an optional gradient and the rule that produced it."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None,
                 _parents: Sequence["Tensor"] = (), _backward: Callable | None = None):
        self.values = np.asarray(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.values.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate ``grad`` (ones for a scalar) to every ancestor that
        requires a gradient. Gradients accumulate into ``.grad``."""
        if grad is None:
            if self.values.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.values)
        grad = np.asarray(grad, dtype=self.values.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"seed gradient {grad.shape} does not match tensor {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(values, True, _parents=parents, _backward=backward)
    return Tensor(values)


# -- convolution kernels on channels-last arrays ------------------------------
#
# A correlation is a sum over the k*k kernel taps of (shifted input) @ W[tap].
# Each tap is gathered into a contiguous buffer and fed to one GEMM; numpy's
# matmul on strided 4-D views and strided im2col fills are both far slower.

def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _taps(w: np.ndarray) -> np.ndarray:
    """(O, C, k, k) kernel as a (k, k, C, O) stack of per-tap matrices."""
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0))


def _tap(xp: np.ndarray, i: int, j: int, stride: int, ho: int, wo: int) -> np.ndarray:
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    view = xp[:, i:i + span_h:stride, j:j + span_w:stride, :]
    return np.ascontiguousarray(view).reshape(-1, xp.shape[3])


def _correlate(xp: np.ndarray, wt: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    """Strided correlation of padded NHWC ``xp`` with taps ``wt`` (k, k, C, O)."""
    n = xp.shape[0]
    k, _, _, o = wt.shape
    out = np.zeros((n * ho * wo, o), dtype=np.result_type(xp, wt))
    for i in range(k):
        for j in range(k):
            out += _tap(xp, i, j, stride, ho, wo) @ wt[i, j]
    return out.reshape(n, ho, wo, o)


def _correlate_adjoint(dy: np.ndarray, wt: np.ndarray, stride: int, hp: int, wp: int) -> np.ndarray:
    """Adjoint of :func:`_correlate` with respect to its padded input.

    Input pixels are split into ``stride**2`` phases. A phase only meets the
    kernel taps congruent to it, so it is a dense stride-1 gather over ``dy``
    written back with one strided assignment.
    """
    n, ho, wo, o = dy.shape
    k, _, c, _ = wt.shape
    dxp = np.zeros((n, hp, wp, c), dtype=np.result_type(dy, wt))
    reach = -(-k // stride)
    dyp = np.pad(dy, ((0, 0), (reach - 1, reach), (reach - 1, reach), (0, 0)))
    for a in range(min(stride, hp)):
        nq = -(-(hp - a) // stride)
        for b in range(min(stride, wp)):
            nr = -(-(wp - b) // stride)
            phase = np.zeros((n * nq * nr, c), dtype=dxp.dtype)
            for t, i in enumerate(range(a, k, stride)):
                for u, j in enumerate(range(b, k, stride)):
                    phase += _tap(dyp, reach - 1 - t, reach - 1 - u, 1, nq, nr) @ wt[i, j].T
            dxp[:, a::stride, b::stride, :] = phase.reshape(n, nq, nr, c)
    return dxp


def _kernel_grad(xp: np.ndarray, dy: np.ndarray, stride: int, k: int) -> np.ndarray:
    """Gradient of ``<dy, correlate(xp, w)>`` with respect to ``w`` as (O, C, k, k)."""
    n, ho, wo, o = dy.shape
    flat = dy.reshape(-1, o)
    g = np.empty((k, k, xp.shape[3], o), dtype=np.result_type(xp, dy))
    for i in range(k):
        for j in range(k):
            g[i, j] = _tap(xp, i, j, stride, ho, wo).T @ flat
    return g.transpose(3, 2, 0, 1)


def _shift_stack(a: np.ndarray, k: int, hp: int, wp: int) -> np.ndarray:
    """``(k*k, N*hp*wp*O)`` stack of ``a`` (NHWC, ``hp-k+1`` rows) placed at
    every tap offset of a ``hp x wp`` canvas; zeros elsewhere."""
    n, h, w, o = a.shape
    out = np.zeros((k, k, n, hp, wp, o), dtype=a.dtype)
    for i in range(k):
        for j in range(k):
            out[i, j, :, i:i + h, j:j + w, :] = a
    return out.reshape(k * k, -1)


def _correlate_narrow(xp: np.ndarray, wt: np.ndarray, ho: int, wo: int) -> np.ndarray:
    """Stride-1 correlation for few output channels: project the channels onto
    every tap in one GEMM, then shift-add the projections."""
    n, hp, wp, c = xp.shape
    k, _, _, o = wt.shape
    z = (xp.reshape(-1, c) @ wt.transpose(2, 0, 1, 3).reshape(c, k * k * o))
    z = z.reshape(n, hp, wp, k, k, o)
    out = np.zeros((n, ho, wo, o), dtype=z.dtype)
    for i in range(k):
        for j in range(k):
            out += z[:, i:i + ho, j:j + wo, i, j, :]
    return out


def _check_kernel(x: Tensor, w: Tensor, in_axis: int) -> int:
    if x.values.ndim != 4 or w.values.ndim != 4:
        raise ValueError(f"expected 4-D input and kernel, got {x.shape} and {w.shape}")
    k = w.shape[2]
    if w.shape[3] != k or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd side, got {w.shape[2:]}")
    if x.shape[1] != w.shape[in_axis]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {w.shape[in_axis]}")
    return k


def conv2d(x, w, b=None, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation plus per-channel bias.

    ``same`` zero-pads ``(k - 1) // 2`` on every side, giving
    ``ceil(rows / stride)`` output rows for odd ``k``.
    """
    x, w = _lift(x), _lift(w)
    k = _check_kernel(x, w, 1)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding == "same":
        pad = (k - 1) // 2
    elif padding == "valid":
        pad = 0
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    n, _, h, wd = x.shape
    ho, wo = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError(f"input {h}x{wd} too small for a {k}x{k} valid convolution")
    xp = np.pad(x.values.transpose(0, 2, 3, 1), ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    wt = _taps(w.values)
    c, o = wt.shape[2], wt.shape[3]
    narrow = stride == 1 and 4 * o <= c
    out = _correlate_narrow(xp, wt, ho, wo) if narrow else _correlate(xp, wt, stride, ho, wo)
    bias = None
    if b is not None:
        bias = _lift(b)
        if bias.shape != (w.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match {w.shape[0]} output channels")
        out += bias.values
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g: np.ndarray) -> None:
        dy = g.transpose(0, 2, 3, 1)
        if narrow:
            stack = _shift_stack(dy, k, xp.shape[1], xp.shape[2]).reshape(k * k, -1, o)
            if x.requires_grad:
                dxp = np.tensordot(stack, wt.reshape(k * k, c, o), axes=([0, 2], [0, 2]))
                dxp = dxp.reshape(xp.shape)
            if w.requires_grad:
                gw = np.matmul(xp.reshape(-1, c).T, stack)
                w._accumulate(gw.reshape(k, k, c, o).transpose(3, 2, 0, 1))
        else:
            if x.requires_grad:
                dxp = _correlate_adjoint(dy, wt, stride, xp.shape[1], xp.shape[2])
            if w.requires_grad:
                w._accumulate(_kernel_grad(xp, dy, stride, k))
        if x.requires_grad:
            x._accumulate(dxp[:, pad:pad + h, pad:pad + wd, :].transpose(0, 3, 1, 2))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _result(np.ascontiguousarray(out.transpose(0, 3, 1, 2)), parents, backward)


def deconv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """Transposed convolution: the exact adjoint of same-padded
    ``conv2d(., w, stride=stride)``, so output rows are ``stride * rows``.

    ``w`` keeps the forward-convolution layout, i.e. shape
    ``(in_channels_of_x, out_channels, k, k)``.
    """
    x, w = _lift(x), _lift(w)
    k = _check_kernel(x, w, 0)
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    pad = (k - 1) // 2
    n, _, h, wd = x.shape
    ho, wo = h * stride, wd * stride
    hp, wp = ho + 2 * pad, wo + 2 * pad
    dy = x.values.transpose(0, 2, 3, 1)
    wt = _taps(w.values)
    out = _correlate_adjoint(dy, wt, stride, hp, wp)[:, pad:pad + ho, pad:pad + wo, :]
    bias = None
    if b is not None:
        bias = _lift(b)
        if bias.shape != (w.shape[1],):
            raise ValueError(f"bias shape {bias.shape} does not match {w.shape[1]} output channels")
        out = out + bias.values
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g: np.ndarray) -> None:
        gp = np.pad(g.transpose(0, 2, 3, 1), ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        if x.requires_grad:
            x._accumulate(_correlate(gp, wt, stride, h, wd).transpose(0, 3, 1, 2))
        if w.requires_grad:
            w._accumulate(_kernel_grad(gp, dy, stride, k))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _result(np.ascontiguousarray(out.transpose(0, 3, 1, 2)), parents, backward)


# -- pooling -------------------------------------------------------------------

@dataclass(frozen=True)
class Switches:
    """Arg-max position (0..3, row-major within the 2x2 region) of each pooled
    element."""

    indices: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.indices.shape


def _regions(a: np.ndarray) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)


def _unregions(r: np.ndarray) -> np.ndarray:
    n, c, h, w, _ = r.shape
    return r.reshape(n, c, h, w, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h * 2, w * 2)


def maxpool2(x) -> tuple[Tensor, Switches]:
    """Non-overlapping 2x2 max pooling. Ties go to the first element in
    row-major order."""
    x = _lift(x)
    if x.values.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"maxpool2 needs a 4-D input with even spatial dims, got {x.shape}")
    regions = _regions(x.values)
    idx = regions.argmax(axis=-1)
    out = np.take_along_axis(regions, idx[..., None], axis=-1)[..., 0]
    switches = Switches(idx.astype(np.int8))

    def backward(g: np.ndarray) -> None:
        x._accumulate(_scatter(g, idx))

    return _result(out, (x,), backward), switches


def _scatter(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    r = np.zeros(values.shape + (4,), dtype=values.dtype)
    np.put_along_axis(r, idx[..., None].astype(np.intp), values[..., None], axis=-1)
    return _unregions(r)


def unpool2(x, switches: Switches) -> Tensor:
    """Place each value at its recorded arg-max inside a 2x2 region; zeros
    elsewhere."""
    x = _lift(x)
    if switches.shape != x.shape:
        raise ValueError(f"switches {switches.shape} do not match input {x.shape}")
    idx = switches.indices.astype(np.intp)

    def backward(g: np.ndarray) -> None:
        x._accumulate(np.take_along_axis(_regions(g), idx[..., None], axis=-1)[..., 0])

    return _result(_scatter(x.values, idx), (x,), backward)


def upsample2(x) -> Tensor:
    """Nearest-neighbour 2x spatial replication."""
    x = _lift(x)
    out = x.values.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g: np.ndarray) -> None:
        n, c, h, w = g.shape
        x._accumulate(g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)))

    return _result(out, (x,), backward)


# -- elementwise ---------------------------------------------------------------

def sigmoid(x) -> Tensor:
    x = _lift(x)
    v = x.values
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(v.dtype, copy=False)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * out * (1.0 - out))

    return _result(out, (x,), backward)


def relu(x) -> Tensor:
    x = _lift(x)
    out = np.maximum(x.values, 0)

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * (x.values > 0))

    return _result(out, (x,), backward)


def add(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)
    if x.shape != y.shape:
        raise ValueError(f"add needs matching shapes, got {x.shape} and {y.shape}")

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g)
        if y.requires_grad:
            y._accumulate(g)

    return _result(x.values + y.values, (x, y), backward)


def elementwise(x, kind: str, y=None) -> Tensor:
    """Dispatch to ``sigmoid``, ``relu`` or ``add``."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    if kind == "add":
        return add(x, y)
    raise ValueError(f"unknown elementwise op {kind!r}")


# -- loss ----------------------------------------------------------------------

def soft_fmeasure_loss(pred, gt, eps: float = FMEASURE_EPS) -> Tensor:
    """``1 - 2 TP / (2 TP + FP + FN + eps)`` with the confusion counts relaxed
    to sums of probabilities, so it is differentiable in ``pred``.

    Note that ``2 TP + FP + FN`` collapses to ``sum(pred) + sum(gt)``.
    """
    pred = _lift(pred)
    y = np.asarray(gt.values if isinstance(gt, Tensor) else gt)
    if y.shape != pred.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {y.shape} differ")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("ground truth must be binary")
    p = pred.values
    acc = np.float64
    y = y.astype(p.dtype, copy=False)
    tp = np.sum(p * y, dtype=acc)
    denom = np.sum(p, dtype=acc) + np.sum(y, dtype=acc) + eps
    loss = 1.0 - 2.0 * tp / denom

    def backward(g: np.ndarray) -> None:
        dp = -2.0 * (y * denom - tp) / (denom * denom)
        pred._accumulate((float(g) * dp).astype(p.dtype, copy=False))

    return _result(np.asarray(loss, dtype=p.dtype), (pred,), backward)
