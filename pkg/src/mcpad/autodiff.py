"""Minimal fixed-op reverse-mode differentiation core (float64, numpy).

Ops: conv2d (zero padding, stride 1 or 2), 2x2/stride-2 max pooling, linear,
sigmoid (input clamped to [-40, 40]), channel concatenation, max-feature-map,
flatten, and two losses (weighted BCE, MSE). Deterministic tie rules: MFM
routes gradients to the first operand, max pooling to the first maximum.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

SIGMOID_CLAMP = 40.0
PROB_EPS = 1e-7


class Tensor:
    """Value + gradient buffer; float64 by default, float32 arrays are kept
    as-is (training runs single precision, gradient checks double)."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep seeded with ones (call on the scalar loss)."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def parameter(data) -> Tensor:
    return Tensor(np.array(data), requires_grad=True)


def _wrap(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires,
                  _parents=tuple(parents), _backward=backward if requires else None)


def _needs(t: Tensor) -> bool:
    return t.requires_grad


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation: x (N,C,H,W), weight (F,C,kh,kw), bias (F,)."""
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    n, c, h, w = x.data.shape
    f, wc, kh, kw = weight.data.shape
    if wc != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {wc}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError("conv2d output would be empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    cols2 = cols.reshape(n, c * kh * kw, oh * ow)
    w2 = weight.data.reshape(f, c * kh * kw)
    out = np.matmul(w2[None], cols2) + bias.data[None, :, None]

    def backward(grad):
        g = grad.reshape(n, f, oh * ow)
        if _needs(weight):
            weight.accumulate(np.matmul(g, cols2.transpose(0, 2, 1)).sum(axis=0).reshape(weight.data.shape))
        if _needs(bias):
            bias.accumulate(g.sum(axis=(0, 2)))
        if _needs(x) or x._parents:
            dcols = np.matmul(w2.T[None], g).reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
            dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
            x.accumulate(dx)

    return _wrap(out.reshape(n, f, oh, ow), (x, weight, bias), backward)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped.
    Gradient goes to the first maximum in window scan order."""
    n, c, h, w = x.data.shape
    h2, w2 = h // 2, w // 2
    if h2 < 1 or w2 < 1:
        raise ValueError("maxpool2d input too small")
    win = (
        x.data[:, :, : 2 * h2, : 2 * w2]
        .reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(grad):
        if _needs(x) or x._parents:
            dwin = np.zeros_like(win)
            np.put_along_axis(dwin, idx[..., None], grad[..., None], axis=-1)
            dx = np.zeros_like(x.data)
            dx[:, :, : 2 * h2, : 2 * w2] = (
                dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
            )
            x.accumulate(dx)

    return _wrap(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x (N,D) @ weight.T (M,D) + bias (M,)."""
    if x.data.shape[1] != weight.data.shape[1]:
        raise ValueError(f"linear shape mismatch: {x.data.shape} vs {weight.data.shape}")
    out = x.data @ weight.data.T + bias.data

    def backward(grad):
        if _needs(weight):
            weight.accumulate(grad.T @ x.data)
        if _needs(bias):
            bias.accumulate(grad.sum(axis=0))
        if _needs(x) or x._parents:
            x.accumulate(grad @ weight.data)

    return _wrap(out, (x, weight, bias), backward)


def sigmoid(x: Tensor) -> Tensor:
    clamped = np.clip(x.data, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    out = 1.0 / (1.0 + np.exp(-clamped))
    inside = (x.data > -SIGMOID_CLAMP) & (x.data < SIGMOID_CLAMP)

    def backward(grad):
        if _needs(x) or x._parents:
            x.accumulate(grad * out * (1.0 - out) * inside)

    return _wrap(out, (x,), backward)


def mfm(x: Tensor) -> Tensor:
    """Max-feature-map over paired channel halves (axis 1): out[c] =
    max(x[c], x[c+k]); ties route the gradient to the first half."""
    channels = x.data.shape[1]
    if channels % 2 != 0:
        raise ValueError("MFM needs an even channel count")
    k = channels // 2
    first = x.data[:, :k]
    second = x.data[:, k:]
    take_first = first >= second
    out = np.where(take_first, first, second)

    def backward(grad):
        if _needs(x) or x._parents:
            dx = np.zeros_like(x.data)
            dx[:, :k] = grad * take_first
            dx[:, k:] = grad * ~take_first
            x.accumulate(dx)

    return _wrap(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if _needs(t) or t._parents:
                t.accumulate(np.take(grad, range(lo, hi), axis=axis))

    return _wrap(out, tuple(tensors), backward)


def flatten(x: Tensor) -> Tensor:
    n = x.data.shape[0]
    out = x.data.reshape(n, -1)

    def backward(grad):
        if _needs(x) or x._parents:
            x.accumulate(grad.reshape(x.data.shape))

    return _wrap(out, (x,), backward)


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def weighted_bce(p: Tensor, targets: np.ndarray, w_bonafide: float = 1.0, w_attack: float = 1.0) -> Tensor:
    """Mean of -(w_b*y*log p + w_a*(1-y)*log(1-p)) with p clamped to
    [1e-7, 1-1e-7]; unit weights reduce to plain BCE."""
    y = np.asarray(targets, dtype=p.data.dtype).reshape(p.data.shape)
    pc = np.clip(p.data, PROB_EPS, 1.0 - PROB_EPS)
    inside = (p.data > PROB_EPS) & (p.data < 1.0 - PROB_EPS)
    n = y.size
    loss = -np.sum(w_bonafide * y * np.log(pc) + w_attack * (1.0 - y) * np.log(1.0 - pc)) / n

    def backward(grad):
        if _needs(p) or p._parents:
            dp = -(w_bonafide * y / pc - w_attack * (1.0 - y) / (1.0 - pc)) / n
            p.accumulate(grad * dp * inside)

    return _wrap(np.asarray(loss), (p,), backward)


def mse_loss(pred: Tensor, targets: np.ndarray) -> Tensor:
    t = np.asarray(targets, dtype=pred.data.dtype).reshape(pred.data.shape)
    diff = pred.data - t
    loss = np.mean(diff**2)

    def backward(grad):
        if _needs(pred) or pred._parents:
            pred.accumulate(grad * 2.0 * diff / diff.size)

    return _wrap(np.asarray(loss), (pred,), backward)


# --------------------------------------------------------------------------
# finite-difference checking
# --------------------------------------------------------------------------

def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
) -> float:
    """Max relative error |analytic - numeric| / max(1, |a|, |n|) over every
    element of ``params``, numeric gradients by central differences.
    ``loss_fn`` must rebuild the graph on each call."""
    loss = loss_fn()
    for p in params:
        p.zero_grad()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.ravel()
        gflat = ga.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = float(loss_fn().data)
            flat[i] = keep - eps
            down = float(loss_fn().data)
            flat[i] = keep
            numeric = (up - down) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
            worst = max(worst, err)
    return worst
