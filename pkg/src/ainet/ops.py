"""Differentiable operations registered on the autodiff tape.

Structured ops (conv, pooling, batchnorm, linear, losses) expect a leading
batch axis; ``expand_batch``/``squeeze_batch`` adapt single samples. Backward
closures accumulate into parent gradients, so shared inputs sum naturally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .autodiff import Node, Parameter, constant
from .errors import ConfigurationError, ContractError

__all__ = [
    "ConvParams",
    "BatchNormState",
    "as_node",
    "expand_batch",
    "squeeze_batch",
    "reshape",
    "pad_spatial",
    "conv2d",
    "conv1d",
    "relu",
    "sigmoid",
    "maxpool2d",
    "maxpool1d",
    "batchnorm",
    "concat_channels",
    "linear",
    "add",
    "mul",
    "scale",
    "sum_all",
    "mean_all",
    "cross_entropy_sum",
]


@dataclass
class ConvParams:
    """Trainable convolution: Parameter weights (and optional bias) plus geometry."""

    weights: Parameter  # (kh, kw, c_in, c_out) or (k, c_in, c_out)
    bias: Parameter | None  # (c_out,); None when a normalization follows
    stride: int = 1
    padding: tuple[int, ...] | None = None  # None -> floor(k/2) per axis

    def kernel(self) -> tensor.ConvKernel:
        b = (
            self.bias.value
            if self.bias is not None
            else np.zeros(self.c_out, dtype=self.weights.value.dtype)
        )
        return tensor.ConvKernel(self.weights.value, b, self.stride, self.padding)

    @property
    def c_in(self) -> int:
        return self.weights.value.shape[-2]

    @property
    def c_out(self) -> int:
        return self.weights.value.shape[-1]

    def parameters(self) -> list[Parameter]:
        return [self.weights] if self.bias is None else [self.weights, self.bias]


def init_conv(
    shape: tuple[int, ...],
    name: str,
    rng: np.random.Generator,
    stride: int = 1,
    padding: tuple[int, ...] | None = None,
    dtype=tensor.STANDARD,
    bias: bool = True,
) -> ConvParams:
    """Fan-in-scaled normal weights, zero bias."""
    fan_in = int(np.prod(shape[:-1]))
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
    b = np.zeros(shape[-1], dtype=dtype)
    return ConvParams(
        Parameter(w, f"{name}.weights"),
        Parameter(b, f"{name}.bias") if bias else None,
        stride=stride,
        padding=padding,
    )


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def expand_batch(x: Node) -> Node:
    return reshape(x, (1,) + x.value.shape)


def squeeze_batch(x: Node) -> Node:
    if x.value.shape[0] != 1:
        raise ContractError(f"cannot squeeze batch of size {x.value.shape[0]}")
    return reshape(x, x.value.shape[1:])


def reshape(x: Node, shape) -> Node:
    x = as_node(x)
    out = Node(x.value.reshape(shape), (x,), op="reshape")

    def bwd(g):
        x.accumulate(g.reshape(x.value.shape))

    out._backward = bwd
    return out


def pad_spatial(x: Node, pads: tuple[int, ...]) -> Node:
    """Zero-pad the spatial axes of (B, H, W, C) or (B, L, C)."""
    x = as_node(x)
    widths = ((0, 0), *((p, p) for p in pads), (0, 0))
    if len(widths) != x.value.ndim:
        raise ConfigurationError(f"pad {pads} does not fit shape {x.value.shape}")
    if not any(pads):
        return x
    out = Node(np.pad(x.value, widths), (x,), op="pad")
    crop = tuple(slice(p, p + e) for p, e in zip((0, *pads, 0), x.value.shape))

    def bwd(g):
        x.accumulate(g[crop])

    out._backward = bwd
    return out


def conv2d(x: Node, p: ConvParams) -> Node:
    """Strided 2-D cross-correlation of (B, H, W, c_in)."""
    x = as_node(x)
    out_val, cols = tensor.conv2d_with_cols(x.value, p.kernel())
    out = Node(out_val, (x, *p.parameters()), op="conv2d")
    w = p.weights.value
    kh, kw, ci, co = w.shape
    s = p.stride
    ph, pw = p.kernel().pad_amounts()
    B, H, W, _ = x.value.shape
    _, ho, wo, _ = out_val.shape

    def bwd(g):
        if p.bias is not None:
            p.bias.accumulate(g.sum(axis=(0, 1, 2)))
        gm = g.reshape(-1, co)
        if p.weights.needs_grad:
            p.weights.accumulate((cols.T @ gm).reshape(w.shape))
        if x.needs_grad:
            if kh == 1 and kw == 1 and s == 1 and not (ph or pw):
                w2 = w.reshape(-1, co).astype(g.dtype, copy=False)
                x.accumulate((gm @ w2.T).reshape(x.value.shape))
                return
            # dx is the transposed convolution: correlate the (zero-stuffed
            # when strided) output gradient with the flipped kernel.
            wf = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, ci)
            if s == 1:
                gs = g
            else:
                gs = np.zeros(
                    (B, s * (ho - 1) + 1, s * (wo - 1) + 1, co), dtype=g.dtype
                )
                gs[:, ::s, ::s] = g
            # remainder pads cover input taps past the last window start
            rh = H + 2 * ph - kh - s * (ho - 1)
            rw = W + 2 * pw - kw - s * (wo - 1)
            gp = np.pad(
                gs, ((0, 0), (kh - 1, kh - 1 + rh), (kw - 1, kw - 1 + rw), (0, 0))
            )
            gcols = tensor.im2col2d(gp, kh, kw, 1, H + 2 * ph, W + 2 * pw)
            dxp = (gcols @ wf.astype(g.dtype, copy=False)).reshape(
                B, H + 2 * ph, W + 2 * pw, ci
            )
            x.accumulate(dxp[:, ph : ph + H, pw : pw + W, :])

    out._backward = bwd
    return out


def conv1d(x: Node, p: ConvParams) -> Node:
    """Strided 1-D cross-correlation of (B, L, c_in)."""
    x = as_node(x)
    out_val, cols = tensor.conv1d_with_cols(x.value, p.kernel())
    out = Node(out_val, (x, *p.parameters()), op="conv1d")
    w = p.weights.value
    k, ci, co = w.shape
    s = p.stride
    (pp,) = p.kernel().pad_amounts()
    B, L, _ = x.value.shape
    _, lo, _ = out_val.shape

    def bwd(g):
        if p.bias is not None:
            p.bias.accumulate(g.sum(axis=(0, 1)))
        gm = g.reshape(-1, co)
        if p.weights.needs_grad:
            p.weights.accumulate((cols.T @ gm).reshape(w.shape))
        if x.needs_grad:
            if k == 1 and s == 1 and not pp:
                w2 = w.reshape(-1, co).astype(g.dtype, copy=False)
                x.accumulate((gm @ w2.T).reshape(x.value.shape))
                return
            wf = w[::-1].transpose(0, 2, 1).reshape(-1, ci)
            if s == 1:
                gs = g
            else:
                gs = np.zeros((B, s * (lo - 1) + 1, co), dtype=g.dtype)
                gs[:, ::s] = g
            rl = L + 2 * pp - k - s * (lo - 1)
            gp = np.pad(gs, ((0, 0), (k - 1, k - 1 + rl), (0, 0)))
            gcols = tensor.im2col1d(gp, k, 1, L + 2 * pp)
            dxp = (gcols @ wf.astype(g.dtype, copy=False)).reshape(B, L + 2 * pp, ci)
            x.accumulate(dxp[:, pp : pp + L, :])

    out._backward = bwd
    return out


def relu(x: Node) -> Node:
    x = as_node(x)
    out = Node(tensor.relu(x.value), (x,), op="relu")

    def bwd(g):
        x.accumulate(g * (x.value > 0))  # subgradient at 0 is 0

    out._backward = bwd
    return out


def sigmoid(x: Node) -> Node:
    x = as_node(x)
    y = tensor.sigmoid(x.value)
    out = Node(y, (x,), op="sigmoid")

    def bwd(g):
        x.accumulate(g * y * (1.0 - y))

    out._backward = bwd
    return out


def maxpool2d(x: Node, window: int, stride: int, ceil_mode: bool = False) -> Node:
    """Max pooling over (B, H, W, C); backward routes to the first argmax."""
    x = as_node(x)
    out_val, idx = tensor.maxpool2d_with_indices(x.value, window, stride, ceil_mode)
    out = Node(out_val, (x,), op="maxpool2d")
    k, s = window, stride
    B, H, W, C = x.value.shape
    _, ho, wo, _ = out_val.shape
    eh = (ho - 1) * s + k  # extended extents in ceil mode
    ew = (wo - 1) * s + k

    def bwd(g):
        if not x.needs_grad:
            return
        dxp = np.zeros((B, max(eh, H), max(ew, W), C), dtype=g.dtype)
        for pos in range(k * k):
            m = idx == pos
            if not m.any():
                continue
            ki, kj = divmod(pos, k)
            view = dxp[:, ki : ki + s * ho : s, kj : kj + s * wo : s, :]
            view[m] += g[m]
        x.accumulate(dxp[:, :H, :W, :])

    out._backward = bwd
    return out


def maxpool1d(x: Node, window: int, stride: int, ceil_mode: bool = False) -> Node:
    x = as_node(x)
    out_val, idx = tensor.maxpool1d_with_indices(x.value, window, stride, ceil_mode)
    out = Node(out_val, (x,), op="maxpool1d")
    k, s = window, stride
    B, L, C = x.value.shape
    _, lo, _ = out_val.shape
    el = (lo - 1) * s + k

    def bwd(g):
        if not x.needs_grad:
            return
        dxp = np.zeros((B, max(el, L), C), dtype=g.dtype)
        for pos in range(k):
            m = idx == pos
            if not m.any():
                continue
            view = dxp[:, pos : pos + s * lo : s, :]
            view[m] += g[m]
        x.accumulate(dxp[:, :L, :])

    out._backward = bwd
    return out


@dataclass
class BatchNormState:
    """Running statistics owned by a batchnorm layer, one entry per channel."""

    mean: np.ndarray
    var: np.ndarray
    initialized: bool = False

    @classmethod
    def for_channels(cls, c: int, dtype=tensor.STANDARD) -> "BatchNormState":
        return cls(np.zeros(c, dtype=dtype), np.ones(c, dtype=dtype))


def batchnorm(
    x: Node,
    gamma: Parameter,
    beta: Parameter,
    state: BatchNormState,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Node:
    """Per-channel normalization over all leading axes of (B, ..., C).

    Training uses micro-batch statistics and updates the running averages.
    Batches of size 1 normalize with the running statistics instead (their
    spatial statistics still feed the running averages, taken before the
    update so the normalizers stay constant w.r.t. the current input), which
    keeps shape-bucketed singleton batches stable.
    """
    x = as_node(x)
    axes = tuple(range(x.value.ndim - 1))
    use_batch_stats = training and (x.value.shape[0] > 1 or not state.initialized)
    pre_mean, pre_var = state.mean, state.var
    c = x.value.shape[-1]
    xc = None
    if training:
        bmu = x.value.mean(axis=axes)
        xc = x.value - bmu
        xf = xc.reshape(-1, c)
        bvar = np.einsum("nc,nc->c", xf, xf) / xf.shape[0]
        if state.initialized:
            state.mean = momentum * state.mean + (1 - momentum) * bmu
            state.var = momentum * state.var + (1 - momentum) * bvar
        else:
            state.mean = bmu.astype(state.mean.dtype)
            state.var = bvar.astype(state.var.dtype)
            state.initialized = True
    if use_batch_stats:
        var = bvar
    else:
        var = pre_var.astype(x.value.dtype)
        xc = x.value - pre_mean.astype(x.value.dtype)
    ivar = 1.0 / np.sqrt(var + eps)
    xc *= ivar  # xc becomes xhat; the centered map is not needed again
    xhat = xc
    y = gamma.value * xhat
    y += beta.value
    out = Node(y, (x, gamma, beta), op="batchnorm")
    n = int(np.prod([x.value.shape[a] for a in axes]))

    def bwd(g):
        gf = g.reshape(-1, c)
        gx = np.einsum("nc,nc->c", gf, xhat.reshape(-1, c))
        gs = gf.sum(axis=0)
        gamma.accumulate(gx)
        beta.accumulate(gs)
        if not x.needs_grad:
            return
        if use_batch_stats:
            # dxhat = g*gamma, so its per-channel sums are gamma*gs and
            # gamma*gx; folding them in avoids two more full reductions
            dx = g - gs / n
            dx -= xhat * (gx / n)
            dx *= gamma.value * ivar
        else:
            dx = g * (gamma.value * ivar)
        x.accumulate(dx)

    out._backward = bwd
    return out


def concat_channels(parts: list[Node]) -> Node:
    parts = [as_node(p) for p in parts]
    out = Node(np.concatenate([p.value for p in parts], axis=-1), tuple(parts), op="concat")
    sizes = [p.value.shape[-1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            p.accumulate(g[..., a:b])

    out._backward = bwd
    return out


def linear(x: Node, weights: Parameter, bias: Parameter) -> Node:
    """x (B, c) @ weights (c, K) + bias (K)."""
    x = as_node(x)
    if x.value.shape[-1] != weights.value.shape[0]:
        raise ConfigurationError(
            f"linear input {x.value.shape} does not match weights {weights.value.shape}"
        )
    out = Node(x.value @ weights.value + bias.value, (x, weights, bias), op="linear")

    def bwd(g):
        weights.accumulate(x.value.reshape(-1, x.value.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        bias.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.needs_grad:
            x.accumulate(g @ weights.value.T)

    out._backward = bwd
    return out


def add(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value + b.value, (a, b), op="add")

    def bwd(g):
        a.accumulate(g if a.value.shape == g.shape else _reduce_to(g, a.value.shape))
        b.accumulate(g if b.value.shape == g.shape else _reduce_to(g, b.value.shape))

    out._backward = bwd
    return out


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, e in enumerate(shape):
        if e == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def mul(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value * b.value, (a, b), op="mul")

    def bwd(g):
        a.accumulate(_reduce_to(g * b.value, a.value.shape))
        b.accumulate(_reduce_to(g * a.value, b.value.shape))

    out._backward = bwd
    return out


def scale(x: Node, c: float) -> Node:
    x = as_node(x)
    out = Node(x.value * c, (x,), op="scale")

    def bwd(g):
        x.accumulate(g * c)

    out._backward = bwd
    return out


def sum_all(x: Node) -> Node:
    x = as_node(x)
    out = Node(np.asarray(x.value.sum()), (x,), op="sum")

    def bwd(g):
        x.accumulate(np.broadcast_to(g, x.value.shape))

    out._backward = bwd
    return out


def mean_all(x: Node) -> Node:
    return scale(sum_all(x), 1.0 / as_node(x).value.size)


def cross_entropy_sum(logits: Node, labels: np.ndarray) -> Node:
    """Sum over the batch of softmax cross-entropy; logits (B, K), labels (B,)."""
    logits = as_node(logits)
    z = logits.value
    labels = np.asarray(labels, dtype=np.intp)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ConfigurationError(f"bad shapes: logits {z.shape}, labels {labels.shape}")
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    loss = (lse[:, 0] - z[np.arange(z.shape[0]), labels]).sum()
    out = Node(np.asarray(loss), (logits,), op="cross_entropy")
    probs = np.exp(z - lse)

    def bwd(g):
        d = probs.copy()
        d[np.arange(z.shape[0]), labels] -= 1.0
        logits.accumulate(d * g)

    out._backward = bwd
    return out
