"""Neural layers, losses, optimizer, and LR scheduler for the TCN models.

Everything operates on tensors shaped (batch, channels, length); 2-D inputs
(channels, length) are accepted and returned without the batch axis.
Convolutions use "same" zero padding so length is always preserved.
"""

from __future__ import annotations

import math
from typing import Iterable, Optional

import numpy as np

from .tensor import ShapeError, Tensor, apply_op, reduce_mean, relu, sub, mul


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Dilated 1-D convolution with "same" zero padding.

    ``x`` is (B, C_in, L) or (C_in, L); ``weight`` is (C_out, C_in, K);
    ``bias`` is (C_out,). Output length equals input length.
    """
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ShapeError(f"conv1d expects 2-D or 3-D input, got {x.shape}")
    B, Ci, L = xd.shape
    Co, Ci_w, K = weight.shape
    if Ci != Ci_w:
        raise ShapeError(f"conv1d channel mismatch: input {Ci}, weight {Ci_w}")
    pad = dilation * (K // 2)
    if pad:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad)))
    else:
        xp = xd
    W = weight.data
    # W[:, :, k] is strided (inner stride K), which knocks matmul off the
    # BLAS fast path; slice to contiguous (Co, Ci) mats once
    Wk = [np.ascontiguousarray(W[:, :, k]) for k in range(K)]
    y = np.broadcast_to(bias.data[None, :, None], (B, Co, L)).astype(xd.dtype).copy()
    for k in range(K):
        y += np.matmul(Wk[k], xp[:, :, k * dilation : k * dilation + L])

    # gradients are skipped for inputs nothing will consume (e.g. frozen
    # weights during the encoder stage, constant latents during the decoder
    # stage); apply_op marks needs at record time via requires_grad
    need_gx, need_gw, need_gb = x.requires_grad, weight.requires_grad, bias.requires_grad

    def bwd(g, xp=xp, Wk=Wk, B=B, Ci=Ci, Co=Co, L=L, K=K, pad=pad, dilation=dilation, squeeze=squeeze):
        if squeeze:
            g = g[None]
        gW = np.empty((Co, Ci, K), dtype=g.dtype) if need_gw else None
        gp = np.zeros((B, Ci, L + 2 * pad), dtype=g.dtype) if need_gx else None
        gT = np.ascontiguousarray(g.transpose(1, 0, 2).reshape(Co, B * L)) if need_gw else None
        for k in range(K):
            if need_gw:
                seg = xp[:, :, k * dilation : k * dilation + L]
                gW[:, :, k] = gT @ np.ascontiguousarray(seg.transpose(1, 0, 2).reshape(Ci, B * L)).T
            if need_gx:
                gp[:, :, k * dilation : k * dilation + L] += np.matmul(Wk[k].T, g)
        gx = None
        if need_gx:
            gx = gp[:, :, pad : pad + L] if pad else gp
            if squeeze:
                gx = gx[0]
        gb = g.sum(axis=(0, 2)) if need_gb else None
        return gx, gW, gb

    out = y[0] if squeeze else y
    return apply_op([x, weight, bias], out, bwd, "conv1d")


def upsample1d(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbor repetition along the time axis: L -> L * factor."""
    if factor < 1:
        raise ShapeError("upsample factor must be >= 1")
    y = np.repeat(x.data, factor, axis=-1)

    def bwd(g, factor=factor, shape=x.data.shape):
        return (g.reshape(*shape, factor).sum(axis=-1),)

    return apply_op([x], y, bwd, "upsample1d")


def avgpool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping average pooling (stride == window): L -> L / window."""
    L = x.data.shape[-1]
    if L % window != 0:
        raise ShapeError(f"avgpool1d: length {L} not divisible by window {window}")
    lead = x.data.shape[:-1]
    xw = x.data.reshape(*lead, L // window, window)
    # mean as x0 + mean(x - x0): algebraically identical, but bit-exact on
    # constant windows, which makes avgpool(upsample(x, k), k) == x hold
    x0 = xw[..., :1]
    y = x0[..., 0] + (xw - x0).mean(axis=-1)

    def bwd(g, window=window, lead=lead):
        return (np.repeat(g / window, window, axis=-1).reshape(*lead, -1),)

    return apply_op([x], y, bwd, "avgpool1d")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of (a - b)^2."""
    d = sub(a, b)
    return reduce_mean(mul(d, d))


class Conv1dLayer:
    """1-D conv layer with "same" padding and optional ReLU activation.

    Weight init is centered uniform with scale 1/sqrt(fan_in); bias zero.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        dilation: int = 1,
        activation: str = "relu",
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
    ):
        if rng is None:
            rng = np.random.default_rng()
        fan_in = in_channels * kernel_size
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size))
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        self.dilation = int(dilation)
        if activation not in ("relu", "linear"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = conv1d(x, self.weight, self.bias, self.dilation)
        if self.activation == "relu":
            y = relu(y)
        return y

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class TcnStack:
    """Three dilated conv layers (kernel 3, dilations 1/4/16), channels kept."""

    DILATIONS = (1, 4, 16)

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        self.layers = [
            Conv1dLayer(channels, channels, 3, dilation=d, activation="relu", rng=rng, dtype=dtype)
            for d in self.DILATIONS
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


class Adam:
    """Bias-corrected ADAM over a fixed parameter list.

    ``step`` increments the step counter even when gradients are absent or
    zero; a non-finite gradient aborts with a diagnostic.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient in parameter {i} (shape {p.shape}) at step {self.t}"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


class LrScheduler:
    """Halve the learning rate when validation loss stops improving.

    After ``patience`` consecutive epochs without a new best validation
    loss, lr is multiplied by ``decay`` and the stagnation counter resets.
    Attached optimizers are updated in place.
    """

    def __init__(
        self,
        optimizers: Iterable[Adam] | Adam,
        lr: Optional[float] = None,
        decay: float = 0.5,
        patience: int = 5,
    ):
        self.optimizers = [optimizers] if isinstance(optimizers, Adam) else list(optimizers)
        if lr is None:
            if not self.optimizers:
                raise ValueError("LrScheduler needs an lr or at least one optimizer")
            lr = self.optimizers[0].lr
        self.lr = float(lr)
        self.decay = decay
        self.patience = int(patience)
        self.best = math.inf
        self.stagnant = 0
        self._apply()

    def _apply(self) -> None:
        for opt in self.optimizers:
            opt.lr = self.lr

    def step(self, val_loss: float) -> float:
        if not math.isfinite(val_loss):
            raise FloatingPointError("non-finite validation loss")
        if val_loss < self.best:
            self.best = val_loss
            self.stagnant = 0
        else:
            self.stagnant += 1
            if self.stagnant >= self.patience:
                self.lr *= self.decay
                self.stagnant = 0
                self._apply()
        return self.lr
