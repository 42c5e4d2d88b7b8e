"""Reverse-mode automatic differentiation on numpy arrays.

Just enough tensor math to train compact convolutional networks: a Tensor
wraps an f64 ndarray plus a backward closure, ops build the graph as they
run, and backward() replays a topologically sorted tape. Everything is
f64 so analytic gradients can be checked against central finite
differences to tight tolerances.

Convolution layout convention: batches are [B, CH, L] (trials) or
[B, C, H, W] (feature maps); the last axis is always time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """Node in the computation graph: f64 data plus backward plumbing."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(trace(self), self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Tape:
    """Topologically ordered graph nodes; parents precede children."""

    nodes: list[Tensor] = field(default_factory=list)


def trace(root: Tensor) -> Tape:
    """Iterative post-order DFS from the root; each node appears once."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, emit = stack.pop()
        if emit:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return Tape(nodes=order)


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every node reachable from loss.

    Gradients accumulate into .grad; callers reset grads between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and reduction primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, _parents=(a, b))

    def _bw(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data, _parents=(a, b))

    def _bw(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape))

    out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, _parents=(a, b))

    def _bw(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = _bw
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data, _parents=(a, b))

    def _bw(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = _bw
    return out


def exp(a: Tensor) -> Tensor:
    val = np.exp(a.data)
    out = Tensor(val, _parents=(a,))
    out._backward = lambda g: a._accumulate(g * val)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), _parents=(a,))
    out._backward = lambda g: a._accumulate(g / a.data)
    return out


def sqrt(a: Tensor) -> Tensor:
    val = np.sqrt(a.data)
    out = Tensor(val, _parents=(a,))
    out._backward = lambda g: a._accumulate(g / (2.0 * val))
    return out


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,))

    def _bw(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    out._backward = _bw
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), _as_tensor(1.0 / count))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), _parents=(a,))
    out._backward = lambda g: a._accumulate(g.reshape(a.data.shape))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product [n, k] @ [k, m].

    Forward goes through einsum so each output element reduces over k in
    a fixed order; BLAS would round differently depending on n, and the
    decoding paths compare results across batch sizes bit for bit.
    """
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out = Tensor(np.einsum("nk,km->nm", a.data, b.data), _parents=(a, b))

    def _bw(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# Network layers


def conv2d_temporal(x: Tensor, kernel: Tensor) -> Tensor:
    """Temporal convolution, same-padded: [B, CH, L] x [F, K] -> [B, F, CH, L].

    Every filter slides along time on every channel; channels act as a
    passive height axis (single input feature map).
    """
    if x.data.ndim != 3 or kernel.data.ndim != 2:
        raise ValueError("conv2d_temporal expects x [B, CH, L], kernel [F, K]")
    b_n, ch, length = x.data.shape
    k = kernel.data.shape[1]
    if k > length:
        raise ValueError(f"kernel length {k} exceeds input length {length}")
    pad_l = (k - 1) // 2
    pad_r = k - 1 - pad_l
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad_l, pad_r)))
    cols = sliding_window_view(xp, k, axis=-1)  # [B, CH, L, K]
    out = Tensor(np.einsum("bclk,fk->bfcl", cols, kernel.data), _parents=(x, kernel))

    def _bw(g):
        kernel._accumulate(np.einsum("bfcl,bclk->fk", g, cols))
        gxp = np.zeros_like(xp)
        for ki in range(k):
            gxp[:, :, ki : ki + length] += np.einsum(
                "bfcl,f->bcl", g, kernel.data[:, ki]
            )
        x._accumulate(gxp[:, :, pad_l : pad_l + length])

    out._backward = _bw
    return out


def conv2d_depthwise(x: Tensor, kernel: Tensor) -> Tensor:
    """Depthwise convolution: [B, C, H, W] x [C, D, KH, KW] -> [B, C*D, H-KH+1, W].

    Valid along height, same-padded along width (time). Covers both the
    spatial filter (KH = H, KW = 1) and the separable temporal filter
    (KH = 1, KW > 1).
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError("conv2d_depthwise expects x [B, C, H, W], kernel [C, D, KH, KW]")
    b_n, c, h, w = x.data.shape
    kc, d, kh, kw = kernel.data.shape
    if kc != c:
        raise ValueError(f"kernel channels {kc} != input channels {c}")
    if kh > h or kw > w:
        raise ValueError("kernel larger than input")
    h_out = h - kh + 1
    pad_l = (kw - 1) // 2
    pad_r = kw - 1 - pad_l
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, 0), (pad_l, pad_r)))
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [B, C, H', W, KH, KW]
    val = np.einsum("bchwij,cdij->bcdhw", cols, kernel.data)
    out = Tensor(val.reshape(b_n, c * d, h_out, w), _parents=(x, kernel))

    def _bw(g):
        gr = g.reshape(b_n, c, d, h_out, w)
        kernel._accumulate(np.einsum("bcdhw,bchwij->cdij", gr, cols))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + h_out, j : j + w] += np.einsum(
                    "bcdhw,cd->bchw", gr, kernel.data[:, :, i, j]
                )
        x._accumulate(gxp[:, :, :, pad_l : pad_l + w])

    out._backward = _bw
    return out


def conv2d_pointwise(x: Tensor, kernel: Tensor) -> Tensor:
    """1x1 convolution mixing channels: [B, C, H, W] x [F, C] -> [B, F, H, W]."""
    if x.data.ndim != 4 or kernel.data.ndim != 2:
        raise ValueError("conv2d_pointwise expects x [B, C, H, W], kernel [F, C]")
    if kernel.data.shape[1] != x.data.shape[1]:
        raise ValueError("kernel input channels do not match x")
    out = Tensor(np.einsum("bchw,fc->bfhw", x.data, kernel.data), _parents=(x, kernel))

    def _bw(g):
        x._accumulate(np.einsum("bfhw,fc->bchw", g, kernel.data))
        kernel._accumulate(np.einsum("bfhw,bchw->fc", g, x.data))

    out._backward = _bw
    return out


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: tuple[np.ndarray, np.ndarray] | None = None,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over the channel axis of [B, C, H, W].

    Train mode (running=None) standardizes by batch statistics, which
    requires batch >= 2; eval mode uses the supplied (mean, var) buffers.
    Built from primitives, so the backward pass includes the dependence
    of the batch statistics on x.
    """
    if x.data.ndim != 4:
        raise ValueError("batchnorm expects [B, C, H, W]")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError("gamma/beta must have shape [C]")
    g4 = reshape(gamma, (1, c, 1, 1))
    b4 = reshape(beta, (1, c, 1, 1))
    if running is None:
        if x.data.shape[0] < 2:
            raise ValueError("batchnorm train mode requires batch >= 2")
        m = tmean(x, axis=(0, 2, 3), keepdims=True)
        centered = sub(x, m)
        var = tmean(mul(centered, centered), axis=(0, 2, 3), keepdims=True)
        xhat = div(centered, sqrt(add(var, _as_tensor(eps))))
    else:
        rm, rv = running
        m = Tensor(rm.reshape(1, c, 1, 1))
        scale = Tensor(1.0 / np.sqrt(rv.reshape(1, c, 1, 1) + eps))
        xhat = mul(sub(x, m), scale)
    return add(mul(xhat, g4), b4)


def batch_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and biased variance of [B, C, H, W], for running buffers."""
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    return mean, var


def elu(x: Tensor) -> Tensor:
    pos = x.data > 0
    val = np.where(pos, x.data, np.expm1(x.data))
    out = Tensor(val, _parents=(x,))
    out._backward = lambda g: x._accumulate(np.where(pos, g, g * (val + 1.0)))
    return out


def avgpool(x: Tensor, factor: int) -> Tensor:
    """Average pooling along time: [B, C, H, W] -> [B, C, H, floor(W/factor)].

    A trailing remainder shorter than `factor` is dropped.
    """
    if x.data.ndim != 4:
        raise ValueError("avgpool expects [B, C, H, W]")
    if factor <= 0:
        raise ValueError("factor must be positive")
    b_n, c, h, w = x.data.shape
    w_out = w // factor
    if w_out == 0:
        raise ValueError(f"input width {w} shorter than pool factor {factor}")
    val = x.data[..., : w_out * factor].reshape(b_n, c, h, w_out, factor).mean(axis=-1)
    out = Tensor(val, _parents=(x,))

    def _bw(g):
        gx = np.zeros_like(x.data)
        gx[..., : w_out * factor] = np.repeat(g / factor, factor, axis=-1)
        x._accumulate(gx)

    out._backward = _bw
    return out


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine layer [B, E] @ [E, K] + [K]."""
    return add(matmul(x, w), b)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax along the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(val, _parents=(x,))

    def _bw(g):
        dot = (g * val).sum(axis=-1, keepdims=True)
        x._accumulate(val * (g - dot))

    out._backward = _bw
    return out


def dropout(x: Tensor, p_drop: float, rng: np.random.Generator, train: bool = True) -> Tensor:
    """Inverted-scaling dropout; identity in eval mode or at p_drop = 0."""
    if not 0 <= p_drop < 1:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    if not train or p_drop == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p_drop) / (1.0 - p_drop)
    out = Tensor(x.data * mask, _parents=(x,))
    out._backward = lambda g: x._accumulate(g * mask)
    return out


def l2_normalize(x: Tensor) -> Tensor:
    """Row-wise L2 normalization of [B, E]; a zero row is an error."""
    if x.data.ndim != 2:
        raise ValueError("l2_normalize expects [B, E]")
    norms = np.linalg.norm(x.data, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("cannot L2-normalize a zero embedding")
    val = x.data / norms
    out = Tensor(val, _parents=(x,))

    def _bw(g):
        dot = (g * val).sum(axis=1, keepdims=True)
        x._accumulate((g - val * dot) / norms)

    out._backward = _bw
    return out


def gaussian_kernel_similarity(a: Tensor, b: Tensor, sigma: float) -> Tensor:
    """exp(-sum_i ||a_i - b_i||^2 / (2 sigma^2)) over a batch of rows."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    d = sub(a, b)
    sq = tsum(mul(d, d))
    return exp(mul(sq, _as_tensor(-1.0 / (2.0 * sigma * sigma))))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits).

    Computed via log-sum-exp with a detached shift for stability; the
    shift cancels exactly, so gradients are unaffected.
    """
    if logits.data.ndim != 2:
        raise ValueError("cross_entropy expects logits [B, K]")
    b_n, k = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (b_n,):
        raise ValueError(f"labels must have shape [{b_n}]")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label outside [0, n_classes)")
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    z = sub(logits, shift)
    lse = log(tsum(exp(z), axis=1, keepdims=True))
    log_probs = sub(z, lse)
    onehot = np.zeros((b_n, k))
    onehot[np.arange(b_n), labels] = 1.0
    nll = mul(tsum(mul(log_probs, _as_tensor(onehot))), _as_tensor(-1.0 / b_n))
    return nll


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    """Adam moment buffers keyed by parameter name."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
) -> dict[str, Tensor]:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params
