"""Attention-incorporate pooling layers.

Two stride-1 branches read the same input: a content branch
``X = relu(conv1x1(x))`` and an attention branch ``W = sigmoid(conv3x3(x))``
of identical shape. Each output cell then pools one window of X, weighted
by the matching window of W and normalized by the window's total weight:

    out_k = sum_ij(W_ijk * X_ijk) / (sum_ij W_ijk + epsilon)

The local form (window m x n, stride s) downsamples to ceil(extent/s); the
global form uses the whole map as the single window and emits 1x1xC for any
spatial input size. The 1-D variant is the same math with one spatial axis.

Backward is hand-derived. The default "analytic" mode is the true quotient
derivative and passes finite differences; the "heuristic" mode normalizes
the attention gradient by the window sum of squared weights instead, kept
only for comparison runs, and is not a derivative of the forward map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops, tensor
from .autodiff import Node
from .errors import ConfigurationError, ContractError, DomainError

__all__ = [
    "Local",
    "Global",
    "AilConfig",
    "AilParams",
    "GRAD_ANALYTIC",
    "GRAD_HEURISTIC",
    "GRAD_MODES",
    "init_ail_params",
    "ail_branches",
    "window_iter",
    "incorporate",
    "ail_backward_content",
    "ail_backward_attention",
    "attention_incorporate",
    "ail_forward",
    "local_output_extent",
]

GRAD_ANALYTIC = "analytic"
GRAD_HEURISTIC = "heuristic"
GRAD_MODES = (GRAD_ANALYTIC, GRAD_HEURISTIC)

ATTENTION_KERNEL = 3  # attention branch conv size, fixed for local and global


@dataclass(frozen=True)
class Local:
    """Windowed pooling kernel; n stays 1 for the 1-D variant."""

    m: int
    n: int = 1


@dataclass(frozen=True)
class Global:
    """Whole-map window; output is 1x1 (or length 1) per channel."""


@dataclass
class AilConfig:
    kernel: Local | Global
    c_in: int
    c_out: int
    stride: int = 1  # ignored for Global
    epsilon: float = 1e-8
    grad_mode: str = GRAD_ANALYTIC
    ndim: int = 2  # spatial rank: 2 for images, 1 for sequences

    def __post_init__(self):
        if isinstance(self.kernel, Local):
            if self.kernel.m < 1 or self.kernel.n < 1:
                raise ConfigurationError(f"window must be >= 1, got {self.kernel}")
            if self.ndim == 1 and self.kernel.n != 1:
                raise ConfigurationError("1-D layer requires a window with n=1")
        elif not isinstance(self.kernel, Global):
            raise ConfigurationError(f"kernel must be Local or Global, got {self.kernel!r}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if self.c_in < 1 or self.c_out < 1:
            raise ConfigurationError("channel counts must be positive")
        if self.epsilon <= 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.grad_mode not in GRAD_MODES:
            raise ConfigurationError(
                f"grad_mode must be one of {GRAD_MODES}, got {self.grad_mode!r}"
            )
        if self.ndim not in (1, 2):
            raise ConfigurationError(f"ndim must be 1 or 2, got {self.ndim}")


@dataclass
class AilParams:
    """Branch convolutions: content 1x1 and attention 3x3, both stride 1."""

    content: ops.ConvParams
    attention: ops.ConvParams

    def parameters(self):
        return self.content.parameters() + self.attention.parameters()


def init_ail_params(
    config: AilConfig, name: str, rng: np.random.Generator, dtype=tensor.STANDARD
) -> AilParams:
    """Fan-in-scaled branches with zero bias, so initial W is 0.5 everywhere
    and the fresh layer behaves like average pooling."""
    c, k = config.c_in, config.c_out
    if config.ndim == 2:
        content = ops.init_conv((1, 1, c, k), f"{name}.content", rng, dtype=dtype)
        attention = ops.init_conv(
            (ATTENTION_KERNEL, ATTENTION_KERNEL, c, k), f"{name}.attention", rng, dtype=dtype
        )
    else:
        content = ops.init_conv((1, c, k), f"{name}.content", rng, dtype=dtype)
        attention = ops.init_conv((ATTENTION_KERNEL, c, k), f"{name}.attention", rng, dtype=dtype)
    return AilParams(content, attention)


def ail_branches(x_in: np.ndarray, params: AilParams) -> tuple[np.ndarray, np.ndarray]:
    """Plain-array branch forward: X = relu(conv1x1), W = sigmoid(conv3x3)."""
    ck = params.content.kernel()
    ak = params.attention.kernel()
    if ck.spatial_ndim == 2:
        X = tensor.relu(tensor.conv2d(x_in, ck))
        W = tensor.sigmoid(tensor.conv2d(x_in, ak))
    else:
        X = tensor.relu(tensor.conv1d(x_in, ck))
        W = tensor.sigmoid(tensor.conv1d(x_in, ak))
    if X.shape != W.shape:
        raise ContractError(f"branch shapes diverge: content {X.shape}, attention {W.shape}")
    return X, W


def window_iter(t: np.ndarray, kernel: Local | Global, stride: int):
    """Yield (output coordinate, window view) row-major over a single map.

    Valid-mode sliding: any padding is the caller's job. Accepts (M, N, C)
    or (L, C). Global yields the whole map once.
    """
    t = np.asarray(t)
    if isinstance(kernel, Global):
        yield ((0, 0) if t.ndim == 3 else (0,)), t
        return
    m, n, s = kernel.m, kernel.n, stride
    if t.ndim == 3:
        M, N, _ = t.shape
        if m > M or n > N:
            raise DomainError(f"window {m}x{n} exceeds map {M}x{N}")
        for oy in range((M - m) // s + 1):
            for ox in range((N - n) // s + 1):
                yield (oy, ox), t[oy * s : oy * s + m, ox * s : ox * s + n]
    elif t.ndim == 2:
        L, _ = t.shape
        if m > L:
            raise DomainError(f"window {m} exceeds length {L}")
        for o in range((L - m) // s + 1):
            yield (o,), t[o * s : o * s + m]
    else:
        raise ConfigurationError(f"expected rank 2 or 3 map, got shape {t.shape}")


def incorporate(xw: np.ndarray, ww: np.ndarray, epsilon: float = 1e-8) -> np.ndarray:
    """Weighted pool of one window, per channel: sum(W*X)/(sum(W)+eps) -> (1,1,C)."""
    xw = np.asarray(xw)
    ww = np.asarray(ww)
    if xw.shape != ww.shape:
        raise ContractError(f"window shapes differ: {xw.shape} vs {ww.shape}")
    axes = tuple(range(xw.ndim - 1))
    num = (ww * xw).sum(axis=axes)
    den = ww.sum(axis=axes) + epsilon
    return (num / den).reshape(1, 1, -1)


def local_output_extent(extent: int, window: int, stride: int) -> int:
    """Spatial extent after pad-by-window//2 then valid windowing; equals
    ceil(extent/stride) for odd windows."""
    padded = extent + 2 * (window // 2)
    if padded < window:
        raise DomainError(f"window {window} exceeds padded extent {padded}")
    return (padded - window) // stride + 1


# Internal batched geometry: everything runs on (B, H, W, C); the 1-D path
# inserts a singleton second spatial axis first.


def _counts(H: int, W: int, m: int, n: int, s: int) -> tuple[int, int]:
    if m > H or n > W:
        raise DomainError(f"window {m}x{n} exceeds map {H}x{W}")
    return (H - m) // s + 1, (W - n) // s + 1


def _window_sum(t: np.ndarray, m: int, n: int, s: int) -> np.ndarray:
    B, H, W, C = t.shape
    ho, wo = _counts(H, W, m, n, s)
    if (m, n) == (H, W):
        return t.sum(axis=(1, 2), keepdims=True)
    out = np.zeros((B, ho, wo, C), dtype=t.dtype)
    for ki in range(m):
        for kj in range(n):
            out += t[:, ki : ki + s * ho : s, kj : kj + s * wo : s, :]
    return out


def _scatter_windows(u: np.ndarray, m: int, n: int, s: int, H: int, W: int) -> np.ndarray:
    B, ho, wo, C = u.shape
    out = np.zeros((B, H, W, C), dtype=u.dtype)
    if (m, n) == (H, W):
        out += u  # broadcast over the full map
        return out
    for ki in range(m):
        for kj in range(n):
            out[:, ki : ki + s * ho : s, kj : kj + s * wo : s, :] += u
    return out


def _pool_grads(
    g: np.ndarray,
    X: np.ndarray,
    W: np.ndarray,
    m: int,
    n: int,
    s: int,
    epsilon: float,
    grad_mode: str,
    want_content: bool,
    want_attention: bool,
    S: np.ndarray | None = None,
    num: np.ndarray | None = None,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Window-stage gradients shared by the tape op and the standalone forms.

    S and num are the forward's window sums of W and W*X; passing them skips
    their recomputation, otherwise they are rebuilt here.
    """
    H, Wd = X.shape[1], X.shape[2]
    if S is None:
        S = _window_sum(W, m, n, s)
    den = S + epsilon
    t = g / den
    dX = dW = None
    tS = None
    if want_content:
        tS = _scatter_windows(t, m, n, s, H, Wd)
        dX = W * tS
    if want_attention:
        if num is None:
            num = _window_sum(W * X, m, n, s)
        if grad_mode == GRAD_ANALYTIC:
            out = num / den
            if tS is None:
                tS = _scatter_windows(t, m, n, s, H, Wd)
            dW = X * tS - _scatter_windows(t * out, m, n, s, H, Wd)
        elif grad_mode == GRAD_HEURISTIC:
            d2 = _window_sum(W * W, m, n, s) + epsilon
            dW = X * _scatter_windows(g * S / d2, m, n, s, H, Wd) - _scatter_windows(
                g * num / d2, m, n, s, H, Wd
            )
        else:
            raise ConfigurationError(f"unknown grad_mode {grad_mode!r}")
    return dX, dW


def _lift(a: np.ndarray, config: AilConfig) -> tuple[np.ndarray, int, int]:
    """Promote a map to batched (B, H, W, C); returns (array, m, n)."""
    a = np.asarray(a)
    k = config.kernel
    if config.ndim == 2:
        if a.ndim == 3:
            a = a[None]
        m, n = (a.shape[1], a.shape[2]) if isinstance(k, Global) else (k.m, k.n)
        return a, m, n
    if a.ndim == 2:
        a = a[None]
    a = a[:, :, None, :]
    m = a.shape[1] if isinstance(k, Global) else k.m
    return a, m, 1


def ail_backward_content(grad_out, W, config: AilConfig) -> np.ndarray:
    """Gradient into the content map X: per window, W/(sum W + eps), windows
    accumulated by summation. Shapes mirror the forward maps."""
    Wb, m, n = _lift(W, config)
    gb, _, _ = _lift(grad_out, config)
    s = 1 if isinstance(config.kernel, Global) else config.stride
    dX, _ = _pool_grads(
        gb, Wb, Wb, m, n, s, config.epsilon, config.grad_mode, True, False
    )
    return dX.reshape(np.asarray(W).shape)


def ail_backward_attention(grad_out, X, W, config: AilConfig) -> np.ndarray:
    """Gradient into the attention map W under config.grad_mode."""
    Xb, m, n = _lift(X, config)
    Wb, _, _ = _lift(W, config)
    gb, _, _ = _lift(grad_out, config)
    s = 1 if isinstance(config.kernel, Global) else config.stride
    _, dW = _pool_grads(
        gb, Xb, Wb, m, n, s, config.epsilon, config.grad_mode, False, True
    )
    return dW.reshape(np.asarray(W).shape)


def attention_incorporate(
    X: Node,
    W: Node,
    kernel: Local | Global,
    stride: int,
    epsilon: float = 1e-8,
    grad_mode: str = GRAD_ANALYTIC,
) -> Node:
    """Tape op pooling batched 4-D maps (B, H, W, C) window by window."""
    if grad_mode not in GRAD_MODES:
        raise ConfigurationError(f"grad_mode must be one of {GRAD_MODES}, got {grad_mode!r}")
    X, W = ops.as_node(X), ops.as_node(W)
    xv, wv = X.value, W.value
    if xv.shape != wv.shape:
        raise ContractError(f"content {xv.shape} and attention {wv.shape} shapes differ")
    B, H, Wd, C = xv.shape
    if isinstance(kernel, Global):
        m, n, s = H, Wd, 1
    else:
        m, n, s = kernel.m, kernel.n, stride
    S = _window_sum(wv, m, n, s)
    den = S + epsilon
    num = _window_sum(wv * xv, m, n, s)
    out = Node(num / den, (X, W), op="attention_incorporate")

    def bwd(g):
        dX, dW = _pool_grads(
            g, xv, wv, m, n, s, epsilon, grad_mode, X.needs_grad, W.needs_grad,
            S=S, num=num,
        )
        if dX is not None:
            X.accumulate(dX)
        if dW is not None:
            W.accumulate(dW)

    out._backward = bwd
    return out


def ail_forward(x_in, config: AilConfig, params: AilParams, collect: list | None = None) -> Node:
    """Full layer on the tape: pad, branch, pool.

    Accepts a Node or array, batched or single-sample; the result keeps the
    input's batching. Local padding is window//2 per axis applied to x_in so
    border windows see computed activations, not padded constants; the global
    form pads nothing. When ``collect`` is a list, the channel-mean attention
    map (cropped to the input extent) is appended for later export.
    """
    x = ops.as_node(x_in)
    if x.value.shape[-1] != config.c_in:
        raise ConfigurationError(
            f"input has {x.value.shape[-1]} channels, layer expects {config.c_in}"
        )
    if x.value.ndim not in (config.ndim + 1, config.ndim + 2):
        raise ConfigurationError(
            f"rank {x.value.ndim} input does not fit a {config.ndim}-D layer"
        )
    unbatched = x.value.ndim == config.ndim + 1
    if unbatched:
        x = ops.expand_batch(x)
    spatial = x.value.shape[1:-1]

    if isinstance(config.kernel, Local):
        pads = (
            (config.kernel.m // 2, config.kernel.n // 2)
            if config.ndim == 2
            else (config.kernel.m // 2,)
        )
        if any(pads):
            x = ops.pad_spatial(x, pads)

    conv = ops.conv2d if config.ndim == 2 else ops.conv1d
    X = ops.relu(conv(x, params.content))
    W = ops.sigmoid(conv(x, params.attention))
    if X.value.shape != W.value.shape:
        raise ContractError(
            f"branch shapes diverge: content {X.value.shape}, attention {W.value.shape}"
        )

    if collect is not None:
        wmap = W.value.mean(axis=-1)
        if isinstance(config.kernel, Local):  # crop the padded ring
            crop = tuple(
                slice(p, p + e) for p, e in zip(pads if any(pads) else (0,) * len(spatial), spatial)
            )
            wmap = wmap[(slice(None), *crop)]
        collect.append(wmap[0] if unbatched else wmap)

    if config.ndim == 1:
        X = ops.reshape(X, (X.value.shape[0], X.value.shape[1], 1, X.value.shape[2]))
        W = ops.reshape(W, X.value.shape)
        kernel = (
            Local(config.kernel.m, 1) if isinstance(config.kernel, Local) else config.kernel
        )
    else:
        kernel = config.kernel
    y = attention_incorporate(X, W, kernel, config.stride, config.epsilon, config.grad_mode)
    if config.ndim == 1:
        y = ops.reshape(y, (y.value.shape[0], y.value.shape[1], y.value.shape[3]))
    return ops.squeeze_batch(y) if unbatched else y
