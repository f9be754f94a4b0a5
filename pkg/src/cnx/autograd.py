"""Reverse-mode differentiation over the forward kernels.

A ``Tape`` records every op applied through it, in execution order, and
``Tape.backward`` walks the record in reverse to produce a gradient for
every named leaf. Each op snapshots the inputs (or sufficient statistics)
it needs for its adjoint. Stochastic-depth multipliers are recorded on the
tape at forward time so backward sees the identical realization.

Gradient checking runs on the float64 shadow path; float32 central
differences cannot resolve 1e-5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


class Op:
    """Forward/backward rule pair. Subclasses are stateless namespaces."""

    name = "op"

    @staticmethod
    def forward(attrs, *inputs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, attrs, grad):
        raise NotImplementedError


class Conv2d(Op):
    name = "conv2d"

    @staticmethod
    def forward(attrs, x, w, b=None):
        out = T.conv2d_nhwc(x, w, b, attrs["stride"], attrs["padding"], attrs["groups"])
        return out, (x, w)

    @staticmethod
    def backward(ctx, attrs, grad):
        x, w = ctx
        dx, dw, db = T.conv2d_nhwc_backward(
            grad, x, w, attrs["stride"], attrs["padding"], attrs["groups"], attrs["with_bias"]
        )
        return (dx, dw, db) if attrs["with_bias"] else (dx, dw)


class Linear(Op):
    name = "linear"

    @staticmethod
    def forward(attrs, x, w, b=None):
        return T.linear_nhwc(x, w, b), (x, w)

    @staticmethod
    def backward(ctx, attrs, grad):
        x, w = ctx
        dx = grad @ w.T
        dw = np.tensordot(x, grad, axes=(tuple(range(x.ndim - 1)), tuple(range(grad.ndim - 1))))
        if attrs["with_bias"]:
            db = grad.sum(axis=tuple(range(grad.ndim - 1)))
            return dx, dw, db
        return dx, dw


class LayerNorm(Op):
    name = "layer_norm"

    @staticmethod
    def forward(attrs, x, gamma, beta):
        eps = attrs["eps"]
        if gamma.shape[0] != x.shape[-1]:
            raise ValueError(f"length mismatch: gamma of length {gamma.shape[0]} for {x.shape[-1]} channels")
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv
        return xhat * gamma + beta, (xhat, inv, gamma)

    @staticmethod
    def backward(ctx, attrs, grad):
        xhat, inv, gamma = ctx
        axes = tuple(range(grad.ndim - 1))
        dgamma = np.sum(grad * xhat, axis=axes)
        dbeta = np.sum(grad, axis=axes)
        dxhat = grad * gamma
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta


class BatchNormAffine(Op):
    """Batch-norm inference: per-channel affine with frozen running stats."""

    name = "batch_norm_inference"

    @staticmethod
    def forward(attrs, x, gamma, beta):
        out = T.batch_norm_inference_nhwc(x, gamma, beta, attrs["mean"], attrs["var"], attrs["eps"])
        return out, (x, gamma)

    @staticmethod
    def backward(ctx, attrs, grad):
        x, gamma = ctx
        inv = 1.0 / np.sqrt(attrs["var"] + attrs["eps"])
        xhat = (x - attrs["mean"]) * inv
        axes = tuple(range(grad.ndim - 1))
        dgamma = np.sum(grad * xhat, axis=axes)
        dbeta = np.sum(grad, axis=axes)
        dx = grad * (gamma * inv)
        return dx, dgamma, dbeta


class Gelu(Op):
    name = "gelu"

    @staticmethod
    def forward(attrs, x):
        return T.gelu_nhwc(x), (x,)

    @staticmethod
    def backward(ctx, attrs, grad):
        (x,) = ctx
        return (grad * T.gelu_grad_nhwc(x),)


class Relu(Op):
    name = "relu"

    @staticmethod
    def forward(attrs, x):
        return T.relu_nhwc(x), (x > 0,)

    @staticmethod
    def backward(ctx, attrs, grad):
        (mask,) = ctx
        return (grad * mask,)


class MaxPool(Op):
    name = "max_pool"

    @staticmethod
    def forward(attrs, x):
        out, arg = T.max_pool_nhwc(x, attrs["kernel"], attrs["stride"], attrs["padding"])
        return out, (x, arg)

    @staticmethod
    def backward(ctx, attrs, grad):
        x, arg = ctx
        dx = T.max_pool_nhwc_backward(grad, x, arg, attrs["kernel"], attrs["stride"], attrs["padding"])
        return (dx,)


class GlobalAvgPool(Op):
    name = "global_avg_pool"

    @staticmethod
    def forward(attrs, x):
        return T.global_avg_pool_nhwc(x), (x.shape,)

    @staticmethod
    def backward(ctx, attrs, grad):
        (shape,) = ctx
        scale = 1.0 / (shape[1] * shape[2])
        return (np.broadcast_to(grad * scale, shape).astype(grad.dtype, copy=False).copy(),)


class Add(Op):
    name = "add"

    @staticmethod
    def forward(attrs, a, b):
        return a + b, None

    @staticmethod
    def backward(ctx, attrs, grad):
        return grad, grad


class Mul(Op):
    """Elementwise product of two same-shaped inputs."""

    name = "mul"

    @staticmethod
    def forward(attrs, a, b):
        return a * b, (a, b)

    @staticmethod
    def backward(ctx, attrs, grad):
        a, b = ctx
        return grad * b, grad * a


class ChannelScale(Op):
    """Multiply by a learned per-channel vector (layer scale)."""

    name = "channel_scale"

    @staticmethod
    def forward(attrs, x, g):
        return x * g, (x, g)

    @staticmethod
    def backward(ctx, attrs, grad):
        x, g = ctx
        dg = np.sum(grad * x, axis=tuple(range(grad.ndim - 1)))
        return grad * g, dg


class MulConst(Op):
    """Multiply by a non-learned constant (stochastic-depth multiplier)."""

    name = "mul_const"

    @staticmethod
    def forward(attrs, x):
        return x * attrs["const"], None

    @staticmethod
    def backward(ctx, attrs, grad):
        return (grad * attrs["const"],)


class FlattenSpatial(Op):
    """(N, 1, 1, C) -> (N, C)."""

    name = "flatten_spatial"

    @staticmethod
    def forward(attrs, x):
        n, h, w, c = x.shape
        if h != 1 or w != 1:
            raise ValueError(f"flatten_spatial expects 1x1 spatial extent, got {x.shape}")
        return x.reshape(n, c), (x.shape,)

    @staticmethod
    def backward(ctx, attrs, grad):
        (shape,) = ctx
        return (grad.reshape(shape),)


class CrossEntropySmoothed(Op):
    """Label-smoothed cross entropy over (N, K) logits; scalar output."""

    name = "cross_entropy"

    @staticmethod
    def forward(attrs, logits):
        labels = attrs["labels"]
        eps = attrs["eps"]
        n, k = logits.shape
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - lse
        true_lp = logp[np.arange(n), labels]
        loss = -((1.0 - eps) * true_lp + (eps / k) * logp.sum(axis=1)).mean()
        return np.asarray(loss, dtype=logits.dtype), (logp,)

    @staticmethod
    def backward(ctx, attrs, grad):
        (logp,) = ctx
        labels = attrs["labels"]
        eps = attrs["eps"]
        n, k = logp.shape
        q = np.full_like(logp, eps / k)
        q[np.arange(n), labels] += 1.0 - eps
        return ((np.exp(logp) - q) * (grad / n),)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    op: type | None  # None for leaves
    inputs: tuple[int, ...]
    attrs: dict
    value: np.ndarray
    ctx: object = None
    name: str | None = None


@dataclass(frozen=True)
class Ref:
    tape: "Tape"
    idx: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value


class Tape:
    """Topologically ordered record of one training-mode forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._names: dict[str, int] = {}

    def leaf(self, value: np.ndarray, name: str | None = None) -> Ref:
        if name is not None:
            if name in self._names:
                raise ValueError(f"duplicate leaf name: {name}")
            self._names[name] = len(self.nodes)
        self.nodes.append(_Node(None, (), {}, np.asarray(value), name=name))
        return Ref(self, len(self.nodes) - 1)

    def apply(self, op: type, inputs, **attrs) -> Ref:
        idxs = []
        for v in inputs:
            if isinstance(v, Ref):
                if v.tape is not self:
                    raise ValueError("input ref belongs to a different tape")
                idxs.append(v.idx)
            else:
                idxs.append(self.leaf(v).idx)
        values = [self.nodes[i].value for i in idxs]
        out, ctx = op.forward(attrs, *values)
        self.nodes.append(_Node(op, tuple(idxs), attrs, out, ctx))
        return Ref(self, len(self.nodes) - 1)

    def backward(self, loss: Ref, seed: float = 1.0) -> "Grads":
        """Gradient of a scalar loss for every leaf reachable from it."""
        if not self.nodes:
            raise ValueError("tape is empty; nothing was recorded in train mode")
        if loss.tape is not self:
            raise ValueError("loss ref belongs to a different tape")
        if loss.value.ndim != 0:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {
            loss.idx: np.asarray(seed, dtype=self.nodes[loss.idx].value.dtype)
        }
        for i in range(loss.idx, -1, -1):
            g = grads.get(i)
            node = self.nodes[i]
            if g is None or node.op is None:
                continue
            in_grads = node.op.backward(node.ctx, node.attrs, g)
            for j, gi in zip(node.inputs, in_grads):
                if gi is None:
                    continue
                if j in grads:
                    grads[j] = grads[j] + gi
                else:
                    grads[j] = gi
        return Grads(self, grads)


@dataclass
class Grads:
    tape: Tape
    by_idx: dict[int, np.ndarray]

    def of(self, ref: Ref) -> np.ndarray:
        node = self.tape.nodes[ref.idx]
        g = self.by_idx.get(ref.idx)
        if g is None:
            g = np.zeros_like(node.value)
        return g

    def by_name(self, name: str) -> np.ndarray:
        if name not in self.tape._names:
            raise KeyError(f"parameter {name!r} is not attached to this tape")
        return self.of(Ref(self.tape, self.tape._names[name]))

    def named(self) -> dict[str, np.ndarray]:
        return {n: self.of(Ref(self.tape, i)) for n, i in self.tape._names.items()}


class Runner:
    """Executes ops either directly (eval) or through a tape (train)."""

    def __init__(self, tape: Tape | None = None):
        self.tape = tape

    @property
    def training(self) -> bool:
        return self.tape is not None

    def param(self, name: str, value):
        if self.tape is None or isinstance(value, Ref):
            return value
        return self.tape.leaf(value, name)

    def apply(self, op: type, inputs, **attrs):
        if self.tape is None:
            out, _ = op.forward(attrs, *inputs)
            return out
        return self.tape.apply(op, inputs, **attrs)

    def value(self, h) -> np.ndarray:
        return h.value if isinstance(h, Ref) else h


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

REL_ERR_DELTA = 1e-12


@dataclass
class GradCheckReport:
    tol: float
    rel_errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.rel_errors.values())

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.rel_errors.items() if v > self.tol}

    def worst(self) -> float:
        return max(self.rel_errors.values()) if self.rel_errors else 0.0


def finite_diff_check(fn, params: dict[str, np.ndarray], h: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of a scalar function against central differences.

    ``fn(params) -> (loss, grads)`` where grads maps parameter names to arrays
    of the same shape. Parameters must be float64. The per-parameter relative
    error is max|g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12) with the magnitudes
    taken at parameter scale (infinity norms), so elements sitting on a
    derivative zero-crossing do not divide FD noise by itself.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ValueError(f"finite_diff_check requires float64 parameters; {name!r} is {p.dtype}")
    loss, grads = fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss encountered: {loss}")
    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        g_ad = np.asarray(grads[name])
        g_fd = np.zeros_like(g_ad)
        flat = p.reshape(-1)
        fd_flat = g_fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            work = {k: (v.copy() if k == name else v) for k, v in params.items()}
            wflat = work[name].reshape(-1)
            wflat[i] = orig + h
            up, _ = fn(work)
            wflat[i] = orig - h
            down, _ = fn(work)
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite value while perturbing {name!r}[{i}]")
            fd_flat[i] = (up - down) / (2.0 * h)
        scale = np.abs(g_ad).max() + np.abs(g_fd).max() + REL_ERR_DELTA
        report.rel_errors[name] = float(np.abs(g_ad - g_fd).max() / scale)
    return report
