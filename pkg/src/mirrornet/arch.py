"""Encoder / decoder TCN architectures and their parameter plumbing.

Encoder: (128 x L) -> (N x L*4/5). Pre-processing convs C1-C3 (1x1,
128/256/256 filters), dilated TCN stack, then C4 -> upsample(4) -> C5 ->
avgpool(5) -> C6 where C6 emits the N latent channels linearly.

Decoder mirrors it: C7 -> upsample(5) -> C8 -> avgpool(4) -> C9, TCN stack,
post-processing C10-C12 with filter counts matched to C3/C2/C1; the final
C12 output (the 128 spectrogram channels) is linear.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import nn
from .tensor import ShapeError, Tensor

SPEC_CHANNELS = 128
PRE_POST_FILTERS = (128, 256, 256)  # C1/C2/C3 and mirrored C12/C11/C10
ENC_FILTERS = (256, 128)  # C4, C5 (C6 emits the latent channels)
UP_FACTOR = 4
POOL_FACTOR = 5


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


class Encoder:
    """Inverse mapping: auditory spectrogram -> latent trajectory."""

    def __init__(self, latent_channels: int = 9, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng()
        self.latent_channels = latent_channels
        f1, f2, f3 = PRE_POST_FILTERS
        c4, c5 = ENC_FILTERS
        conv = lambda ci, co, **kw: nn.Conv1dLayer(ci, co, 1, rng=rng, dtype=dtype, **kw)
        self.c1 = conv(SPEC_CHANNELS, f1)
        self.c2 = conv(f1, f2)
        self.c3 = conv(f2, f3)
        self.tcn = nn.TcnStack(f3, rng=rng, dtype=dtype)
        self.c4 = conv(f3, c4)
        self.c5 = conv(c4, c5)
        self.c6 = conv(c5, latent_channels, activation="linear")

    def __call__(self, x) -> Tensor:
        x = _as_tensor(x)
        L = x.shape[-1]
        if x.shape[-2] != SPEC_CHANNELS:
            raise ShapeError(f"encoder expects {SPEC_CHANNELS} channels, got {x.shape[-2]}")
        if L % POOL_FACTOR != 0:
            raise ShapeError(f"encoder input length {L} not divisible by {POOL_FACTOR}")
        x = self.c3(self.c2(self.c1(x)))
        x = self.tcn(x)
        x = nn.upsample1d(self.c4(x), UP_FACTOR)
        x = nn.avgpool1d(self.c5(x), POOL_FACTOR)
        return self.c6(x)

    def named_layers(self):
        return [
            ("c1", self.c1), ("c2", self.c2), ("c3", self.c3),
            ("tcn.d1", self.tcn.layers[0]), ("tcn.d2", self.tcn.layers[1]), ("tcn.d3", self.tcn.layers[2]),
            ("c4", self.c4), ("c5", self.c5), ("c6", self.c6),
        ]

    def parameters(self):
        return [p for _, layer in self.named_layers() for p in layer.parameters()]


class Decoder:
    """Forward mapping: latent trajectory -> auditory spectrogram.

    Also the articulatory synthesizer network, which shares this
    architecture exactly.
    """

    def __init__(self, latent_channels: int = 9, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng()
        self.latent_channels = latent_channels
        f1, f2, f3 = PRE_POST_FILTERS
        c4, c5 = ENC_FILTERS
        conv = lambda ci, co, **kw: nn.Conv1dLayer(ci, co, 1, rng=rng, dtype=dtype, **kw)
        self.c7 = conv(latent_channels, c5)
        self.c8 = conv(c5, c4)
        self.c9 = conv(c4, f3)
        self.tcn = nn.TcnStack(f3, rng=rng, dtype=dtype)
        self.c10 = conv(f3, f3)
        self.c11 = conv(f3, f2)
        self.c12 = conv(f2, f1, activation="linear")

    def __call__(self, l) -> Tensor:
        l = _as_tensor(l)
        k = l.shape[-1]
        if l.shape[-2] != self.latent_channels:
            raise ShapeError(f"decoder expects {self.latent_channels} channels, got {l.shape[-2]}")
        if k % UP_FACTOR != 0:
            raise ShapeError(f"decoder input length {k} not divisible by {UP_FACTOR}")
        x = nn.upsample1d(self.c7(l), POOL_FACTOR)
        x = nn.avgpool1d(self.c8(x), UP_FACTOR)
        x = self.c9(x)
        x = self.tcn(x)
        return self.c12(self.c11(self.c10(x)))

    def named_layers(self):
        return [
            ("c7", self.c7), ("c8", self.c8), ("c9", self.c9),
            ("tcn.d1", self.tcn.layers[0]), ("tcn.d2", self.tcn.layers[1]), ("tcn.d3", self.tcn.layers[2]),
            ("c10", self.c10), ("c11", self.c11), ("c12", self.c12),
        ]

    def parameters(self):
        return [p for _, layer in self.named_layers() for p in layer.parameters()]


def state_arrays(net, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    """Ordered (name, array) pairs for checkpointing."""
    out = []
    for name, layer in net.named_layers():
        out.append((f"{prefix}{name}.weight", layer.weight.data))
        out.append((f"{prefix}{name}.bias", layer.bias.data))
    return out


def load_state_arrays(net, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    for name, layer in net.named_layers():
        for attr in ("weight", "bias"):
            key = f"{prefix}{name}.{attr}"
            if key not in arrays:
                raise KeyError(f"checkpoint missing parameter {key}")
            src = np.asarray(arrays[key])
            dst = getattr(layer, attr)
            if src.shape != dst.data.shape:
                raise ShapeError(f"{key}: shape {src.shape} != expected {dst.data.shape}")
            dst.data = src.astype(dst.data.dtype)


def set_trainable(net, trainable: bool) -> None:
    for p in net.parameters():
        p.requires_grad = trainable
