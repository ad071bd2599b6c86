"""Articulatory-to-acoustic synthesizer g and its training loop.

The synthesizer network is architecturally identical to the autoencoder
decoder: a 9-channel (or 6-channel, TVs only) trajectory at 100 Hz in,
a 128-channel auditory spectrogram at 125 Hz out. Input channels are
z-scored with training-set statistics stored alongside the weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import arch, checkpoint, data, nn
from .audfront import AuditorySpectrogram, FRAME_RATE
from .tensor import GradTape, ShapeError, Tensor

VARIANTS = ("ft", "lt")
BATCH_BY_VARIANT = {"ft": 16, "lt": 64}


def item_pair(item) -> tuple[np.ndarray, np.ndarray]:
    """(trajectory, spectrogram values) for in-memory or manifest items."""
    traj = getattr(item, "trajectory", None)
    if not isinstance(traj, np.ndarray):
        traj = item.load_trajectory()
    spec = getattr(item, "spectrogram", None)
    if isinstance(spec, AuditorySpectrogram):
        spec = spec.values
    elif not isinstance(spec, np.ndarray):
        spec = item.load_spectrogram().values
    return np.asarray(traj, dtype=np.float64), np.asarray(spec, dtype=np.float64)


def stack_pairs(items: Sequence, n_channels: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack equal-length items into (B, n_channels, k) and (B, 128, L)."""
    trajs, specs = [], []
    for item in items:
        traj, spec = item_pair(item)
        trajs.append(traj[:n_channels])
        specs.append(spec)
    ks = {t.shape[-1] for t in trajs}
    if len(ks) != 1:
        raise ShapeError(f"items have mixed trajectory lengths {sorted(ks)}")
    return np.stack(trajs), np.stack(specs)


@dataclass
class SynthModel:
    """Frozen-able DNN plant: normalized trajectories -> auditory spectrogram."""

    net: arch.Decoder
    stats: data.ChannelStats
    variant: str = "ft"

    @property
    def n_channels(self) -> int:
        return self.net.latent_channels

    def forward(self, l_norm) -> Tensor:
        """Differentiable forward on already-normalized input."""
        return self.net(l_norm)

    def synthesize(self, l_norm: np.ndarray) -> np.ndarray:
        """Plant interface: normalized (N, k) or (B, N, k) -> spectrogram values."""
        out = self.net(np.asarray(l_norm, dtype=np.float32))
        return out.data.astype(np.float64)

    def synth_forward(self, artic: np.ndarray) -> AuditorySpectrogram:
        """Physical-unit trajectory (N, k) -> auditory spectrogram, 128 x (k*5/4)."""
        artic = np.asarray(artic, dtype=np.float64)
        if artic.ndim != 2 or artic.shape[0] != self.n_channels:
            raise ShapeError(
                f"expected ({self.n_channels}, k) trajectory, got {artic.shape}"
            )
        mean = self.stats.mean[: self.n_channels]
        std = self.stats.std[: self.n_channels]
        l_norm = (artic - mean[:, None]) / std[:, None]
        values = self.synthesize(l_norm)
        return AuditorySpectrogram(values=values, frame_rate=FRAME_RATE)

    def digest(self) -> str:
        return checkpoint.params_digest(arch.state_arrays(self.net))

    def to_checkpoint(self, config_hash: str = "", seed: Optional[int] = None, metrics: Optional[dict] = None) -> checkpoint.Checkpoint:
        norm = self.stats.to_dict()
        norm["variant"] = self.variant
        norm["n_channels"] = self.n_channels
        return checkpoint.Checkpoint(
            model_kind="synth",
            arrays=arch.state_arrays(self.net),
            normalization=norm,
            config_hash=config_hash,
            seed=seed,
            metrics=metrics or {},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: checkpoint.Checkpoint) -> "SynthModel":
        if ckpt.model_kind != "synth":
            raise checkpoint.CheckpointError(
                f"expected a synth checkpoint, got model_kind {ckpt.model_kind!r}"
            )
        norm = dict(ckpt.normalization or {})
        variant = norm.pop("variant", "ft")
        n_channels = int(norm.pop("n_channels", data.N_LATENT))
        net = arch.Decoder(latent_channels=n_channels)
        arch.load_state_arrays(net, ckpt.array_dict())
        stats = data.ChannelStats.from_dict(norm)
        return cls(net=net, stats=stats, variant=variant)


class OraclePlant:
    """Closed-form stand-in for a trained synthesizer.

    Accepts normalized trajectories like SynthModel.synthesize, denormalizes
    with its stored statistics, and evaluates the articulatory oracle.
    """

    def __init__(self, stats: data.ChannelStats, params: Optional[data.OracleParams] = None):
        self.stats = stats
        self.params = params or data.OracleParams()

    @property
    def n_channels(self) -> int:
        return data.N_LATENT

    def synthesize(self, l_norm: np.ndarray) -> np.ndarray:
        l_norm = np.asarray(l_norm, dtype=np.float64)
        if l_norm.ndim == 2:
            phys = data.denormalize_channels(l_norm, self.stats)
            lo = np.array([data.CHANNEL_RANGES[c][0] for c in data.CHANNELS])
            hi = np.array([data.CHANNEL_RANGES[c][1] for c in data.CHANNELS])
            phys = np.clip(phys, lo[:, None], hi[:, None])
            return data.oracle_synth(self.params, phys).values
        return np.stack([self.synthesize(one) for one in l_norm])

    def digest(self) -> str:
        import hashlib, json

        blob = json.dumps(
            {"params": vars(self.params), "stats": self.stats.to_dict()},
            sort_keys=True,
            default=lambda o: np.asarray(o).tolist(),
        )
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class SynthTrainConfig:
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 100
    decay: float = 0.5
    patience: int = 5
    seed: int = 0
    n_channels: int = data.N_LATENT
    variant: str = "ft"
    max_steps: Optional[int] = None


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    dev_loss: list = field(default_factory=list)
    best_dev: float = math.inf
    steps: int = 0


def _batch_loss(model: SynthModel, l_norm: np.ndarray, specs: np.ndarray) -> tuple:
    with GradTape() as tape:
        pred = model.forward(l_norm.astype(np.float32))
        loss = nn.mse(pred, Tensor(specs.astype(np.float32)))
        tape.backward(loss)
    return float(loss.data)


def _eval_loss(model: SynthModel, l_norm: np.ndarray, specs: np.ndarray) -> float:
    pred = model.forward(l_norm.astype(np.float32))
    return float(np.mean((pred.data.astype(np.float64) - specs) ** 2))


def train_synthesizer(
    train_items: Sequence,
    dev_items: Sequence,
    cfg: SynthTrainConfig,
) -> tuple[SynthModel, TrainHistory]:
    """MSE training with ADAM and a plateau scheduler; keeps best-dev weights."""
    if not train_items or not dev_items:
        raise ValueError("train and dev sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    trajs, specs = stack_pairs(train_items, cfg.n_channels)
    dtrajs, dspecs = stack_pairs(dev_items, cfg.n_channels)

    stats = data.ChannelStats.fit([item_pair(i)[0] for i in train_items])
    l_norm = (trajs - stats.mean[: cfg.n_channels, None]) / stats.std[: cfg.n_channels, None]
    dl_norm = (dtrajs - stats.mean[: cfg.n_channels, None]) / stats.std[: cfg.n_channels, None]

    model = SynthModel(
        net=arch.Decoder(latent_channels=cfg.n_channels, rng=rng),
        stats=stats,
        variant=cfg.variant,
    )
    params = model.net.parameters()
    opt = nn.Adam(params, lr=cfg.lr)
    sched = nn.LrScheduler(opt, lr=cfg.lr, decay=cfg.decay, patience=cfg.patience)
    hist = TrainHistory()
    best = [p.data.copy() for p in params]

    n = len(train_items)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            opt.zero_grad()
            loss = _batch_loss(model, l_norm[idx], specs[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at step {hist.steps}")
            opt.step()
            epoch_losses.append(loss)
            hist.steps += 1
            if cfg.max_steps is not None and hist.steps >= cfg.max_steps:
                break
        hist.train_loss.append(float(np.mean(epoch_losses)))
        dev = _eval_loss(model, dl_norm, dspecs)
        hist.dev_loss.append(dev)
        if dev < hist.best_dev:
            hist.best_dev = dev
            best = [p.data.copy() for p in params]
        sched.step(dev)
        if cfg.max_steps is not None and hist.steps >= cfg.max_steps:
            break

    for p, b in zip(params, best):
        p.data = b
    return model, hist


def eval_synthesizer(model: SynthModel, test_items: Sequence) -> dict:
    """Mean and per-item spectrogram MSE on a test set."""
    if not test_items:
        raise ValueError("test set is empty")
    per_item = []
    for item in test_items:
        traj, spec = item_pair(item)
        pred = model.synth_forward(traj[: model.n_channels]).values
        if pred.shape != spec.shape:
            raise ShapeError(f"prediction {pred.shape} vs target {spec.shape}")
        per_item.append((getattr(item, "id", "?"), float(np.mean((pred - spec) ** 2))))
    return {
        "mean_mse": float(np.mean([m for _, m in per_item])),
        "per_item": per_item,
    }


def write_eval_csv(report: dict, path) -> None:
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["item", "mse"])
        for item_id, m in report["per_item"]:
            w.writerow([item_id, f"{m:.6f}"])
        w.writerow(["mean", f"{report['mean_mse']:.6f}"])
