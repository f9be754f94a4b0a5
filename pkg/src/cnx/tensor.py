"""Dense rank-4 tensors (channels-last) and the forward numeric kernels.

Layout is NHWC: index (n, h, w, c) maps to ((n*H + h)*W + w)*C + c in the
flat buffer, i.e. a C-contiguous numpy array of shape (N, H, W, C).

All kernels are pure: they never mutate their inputs and identical inputs
give bit-identical outputs. float32 is the production dtype; float64 exists
for gradient checking only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

LN_EPS = 1e-6
BN_EPS = 1e-5

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """Immutable rank-4 array, channels-last (N, H, W, C)."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=np.float32):
        arr = np.array(data, dtype=dtype, order="C")
        if arr.ndim != 4:
            raise ValueError(f"tensor must be rank 4 (N,H,W,C), got shape {arr.shape}")
        if any(e < 1 for e in arr.shape):
            raise ValueError(f"all extents must be >= 1, got shape {arr.shape}")
        if arr.dtype.type not in _ALLOWED_DTYPES:
            raise ValueError(f"dtype must be float32 or float64, got {arr.dtype}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: takes ownership of a freshly computed array.
        obj = object.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(obj, "data", arr)
        return obj

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data, dtype=dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


@dataclass(frozen=True)
class ConvParams:
    """Weights and geometry of a 2-d convolution.

    weight has extents (kH, kW, Cin/groups, Cout); the depthwise case is
    groups == Cin == Cout.
    """

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ValueError(f"conv weight must be rank 4 (kH,kW,Cin/g,Cout), got {self.weight.shape}")
        kh, kw, cin_g, cout = self.weight.shape
        if self.groups < 1:
            raise ValueError("groups must be >= 1")
        if cout % self.groups != 0:
            raise ValueError(f"Cout={cout} not divisible by groups={self.groups}")
        if any(s < 1 for s in self.stride):
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if any(p < 0 for p in self.padding):
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        if self.bias is not None and self.bias.shape != (cout,):
            raise ValueError(f"bias must have shape ({cout},), got {self.bias.shape}")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[2] * self.groups

    @property
    def out_channels(self) -> int:
        return self.weight.shape[3]


@dataclass(frozen=True)
class NormParams:
    """Per-channel scale/shift, plus running stats for batch-norm inference."""

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = LN_EPS
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None

    def __post_init__(self):
        c = self.gamma.shape[0] if self.gamma.ndim == 1 else -1
        for name in ("gamma", "beta", "running_mean", "running_var"):
            v = getattr(self, name)
            if v is None:
                continue
            if v.ndim != 1 or v.shape[0] != c:
                raise ValueError(f"{name} must be a vector of length {c}, got shape {v.shape}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


def conv_output_size(extent: int, kernel: int, stride: int, padding: int) -> int:
    out = (extent + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(
            f"non-positive output extent: input {extent}, kernel {kernel}, "
            f"stride {stride}, padding {padding}"
        )
    return out


# ---------------------------------------------------------------------------
# Array-level kernels. These are what the autograd ops and the Tensor-facing
# wrappers below share; they take and return plain NHWC ndarrays.
# ---------------------------------------------------------------------------


def conv2d_nhwc(x, w, b, stride, padding, groups):
    n, h, ww, c = x.shape
    kh, kw, cin_g, cout = w.shape
    if cin_g * groups != c:
        raise ValueError(f"channel mismatch: input has {c} channels, weight expects {cin_g * groups}")
    if c % groups != 0 or cout % groups != 0:
        raise ValueError(f"groups={groups} must divide Cin={c} and Cout={cout}")
    sh, sw = stride
    ph, pw = padding
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(ww, kw, sw, pw)

    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    out = np.zeros((n, ho, wo, cout), dtype=x.dtype)
    cout_g = cout // groups
    depthwise = groups == c and cout == c
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i : i + ho * sh : sh, j : j + wo * sw : sw, :]
            wij = w[i, j]  # (cin_g, cout)
            if groups == 1:
                out += xs @ wij
            elif depthwise:
                out += xs * wij[0]
            else:
                xs_g = xs.reshape(n, ho, wo, groups, cin_g)
                wij_g = wij.reshape(cin_g, groups, cout_g)
                out += np.einsum("nhwgc,cgo->nhwgo", xs_g, wij_g).reshape(n, ho, wo, cout)
    if b is not None:
        out += b
    return out


def conv2d_nhwc_backward(grad, x, w, stride, padding, groups, with_bias):
    n, h, ww, c = x.shape
    kh, kw, cin_g, cout = w.shape
    sh, sw = stride
    ph, pw = padding
    ho, wo = grad.shape[1], grad.shape[2]
    cout_g = cout // groups
    depthwise = groups == c and cout == c

    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            sl = np.s_[:, i : i + ho * sh : sh, j : j + wo * sw : sw, :]
            xs = xp[sl]
            wij = w[i, j]
            if groups == 1:
                dw[i, j] = np.tensordot(xs, grad, axes=([0, 1, 2], [0, 1, 2]))
                dxp[sl] += grad @ wij.T
            elif depthwise:
                dw[i, j, 0] = np.sum(xs * grad, axis=(0, 1, 2))
                dxp[sl] += grad * wij[0]
            else:
                xs_g = xs.reshape(n, ho, wo, groups, cin_g)
                g_g = grad.reshape(n, ho, wo, groups, cout_g)
                dw[i, j] = np.einsum("nhwgc,nhwgo->cgo", xs_g, g_g).reshape(cin_g, cout)
                dxs = np.einsum("nhwgo,cgo->nhwgc", g_g, wij.reshape(cin_g, groups, cout_g))
                dxp[sl] += dxs.reshape(n, ho, wo, c)
    dx = dxp[:, ph : ph + h, pw : pw + ww, :] if (ph or pw) else dxp
    db = np.sum(grad, axis=(0, 1, 2)) if with_bias else None
    return dx, dw, db


def layer_norm_nhwc(x, gamma, beta, eps):
    if gamma.shape[0] != x.shape[3] or beta.shape[0] != x.shape[3]:
        raise ValueError(
            f"length mismatch: gamma/beta of length {gamma.shape[0]}/{beta.shape[0]} "
            f"for {x.shape[3]} channels"
        )
    mean = x.mean(axis=3, keepdims=True)
    var = x.var(axis=3, keepdims=True)  # population variance
    xhat = (x - mean) / np.sqrt(var + eps)
    return xhat * gamma + beta


def batch_norm_inference_nhwc(x, gamma, beta, running_mean, running_var, eps):
    if running_mean is None or running_var is None:
        raise ValueError("batch_norm_inference requires running statistics")
    if gamma.shape[0] != x.shape[3]:
        raise ValueError(f"length mismatch: gamma of length {gamma.shape[0]} for {x.shape[3]} channels")
    inv = 1.0 / np.sqrt(running_var + eps)
    return (x - running_mean) * (inv * gamma) + beta


def gelu_nhwc(x):
    # Exact form x * Phi(x), erf-based; not the tanh approximation.
    return (x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))).astype(x.dtype, copy=False)


def gelu_grad_nhwc(x):
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return (cdf + x * phi).astype(x.dtype, copy=False)


def relu_nhwc(x):
    return np.maximum(x, 0)


def max_pool_nhwc(x, kernel, stride, padding):
    n, h, w, c = x.shape
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(w, kw, sw, pw)
    if ph or pw:
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)), constant_values=-np.inf)
    else:
        xp = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw]  # (N, Ho, Wo, C, kh, kw)
    flat = win.reshape(n, ho, wo, c, kh * kw)
    arg = flat.argmax(axis=4)
    out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
    return np.ascontiguousarray(out), arg


def max_pool_nhwc_backward(grad, x, arg, kernel, stride, padding):
    n, h, w, c = x.shape
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    ho, wo = grad.shape[1], grad.shape[2]
    dxp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=grad.dtype)
    # arg indexes the flattened kh*kw window; scatter back per kernel offset
    oh = np.arange(ho)[:, None, None] * sh
    ow = np.arange(wo)[None, :, None] * sw
    rows = (oh + arg // kw).reshape(-1)
    cols = (ow + arg % kw).reshape(-1)
    nn = np.repeat(np.arange(n), ho * wo * c)
    cc = np.tile(np.arange(c), n * ho * wo)
    np.add.at(dxp, (nn, rows, cols, cc), grad.reshape(-1))
    return dxp[:, ph : ph + h, pw : pw + w, :] if (ph or pw) else dxp


def global_avg_pool_nhwc(x):
    return x.mean(axis=(1, 2), keepdims=True)


def linear_nhwc(x, w, b):
    if w.shape[0] != x.shape[-1]:
        raise ValueError(f"channel mismatch: input has {x.shape[-1]} channels, weight expects {w.shape[0]}")
    out = x @ w
    if b is not None:
        out = out + b
    return out


# ---------------------------------------------------------------------------
# Tensor-facing kernels
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Grouped 2-d convolution with zero padding.

    Output extents are N x floor((H+2pH-kH)/sH)+1 x floor((W+2pW-kW)/sW)+1 x Cout.
    """
    return Tensor._wrap(conv2d_nhwc(x.data, p.weight, p.bias, p.stride, p.padding, p.groups))


def layer_norm(x: Tensor, p: NormParams) -> Tensor:
    """Normalize over the channel extent at each (n, h, w) position."""
    return Tensor._wrap(layer_norm_nhwc(x.data, p.gamma, p.beta, p.eps))


def batch_norm_inference(x: Tensor, p: NormParams) -> Tensor:
    """Per-channel affine using frozen running statistics."""
    return Tensor._wrap(
        batch_norm_inference_nhwc(x.data, p.gamma, p.beta, p.running_mean, p.running_var, p.eps)
    )


def gelu(x: Tensor) -> Tensor:
    """Elementwise x * Phi(x) with the exact standard-normal CDF."""
    return Tensor._wrap(gelu_nhwc(x.data))


def relu(x: Tensor) -> Tensor:
    return Tensor._wrap(relu_nhwc(x.data))


def max_pool(x: Tensor, kernel, stride, padding=(0, 0)) -> Tensor:
    """Windowed maximum per channel; padding value is -inf."""
    out, _ = max_pool_nhwc(x.data, _pair(kernel), _pair(stride), _pair(padding))
    return Tensor._wrap(out)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all spatial positions per channel; output N x 1 x 1 x C."""
    return Tensor._wrap(global_avg_pool_nhwc(x.data))


def linear(x: Tensor, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> Tensor:
    """Matrix product over the channel extent at each position (weight Cin x Cout)."""
    return Tensor._wrap(linear_nhwc(x.data, weight, bias))


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return (int(v[0]), int(v[1]))
    return (int(v), int(v))
