"""The sensorimotor autoencoder: encoder, decoder, and its two training phases.

The initialization phase trains the encoder and decoder independently on a
small supervised set of (spectrogram, trajectory) pairs. The learning phase
then alternates: a decoder stage fits the decoder to the frozen plant's
output on detached latents, and an encoder stage trains the encoder through
the frozen-parameter decoder against the input spectrogram. No gradient
ever reaches the plant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import arch, checkpoint, data, nn
from .audfront import AuditorySpectrogram, FRAME_RATE, auditory_spectrogram
from .synth import item_pair, stack_pairs
from .tensor import GradTape, ShapeError, Tensor


class MirrorNet:
    """Encoder/decoder pair with the channel statistics of its latent space."""

    def __init__(
        self,
        latent_channels: int = data.N_LATENT,
        seed: int = 0,
        stats: Optional[data.ChannelStats] = None,
    ):
        rng = np.random.default_rng(seed)
        self.latent_channels = latent_channels
        self.encoder = arch.Encoder(latent_channels, rng=rng)
        self.decoder = arch.Decoder(latent_channels, rng=rng)
        # identity statistics until an init phase provides real ones
        if stats is None:
            stats = data.ChannelStats(
                mean=np.zeros(latent_channels), std=np.ones(latent_channels)
            )
        self.stats = stats

    def encode(self, x) -> Tensor:
        return self.encoder(x)

    def decode(self, l) -> Tensor:
        return self.decoder(l)

    def infer_latent(self, spec_values: np.ndarray) -> np.ndarray:
        """Normalized latent trajectory for one (128, L) spectrogram."""
        return self.encode(np.asarray(spec_values, dtype=np.float32)).data.astype(np.float64)

    def state_arrays(self) -> list:
        return arch.state_arrays(self.encoder, "enc.") + arch.state_arrays(self.decoder, "dec.")

    def to_checkpoint(self, config_hash: str = "", seed: Optional[int] = None, metrics: Optional[dict] = None) -> checkpoint.Checkpoint:
        return checkpoint.Checkpoint(
            model_kind="mirrornet",
            arrays=self.state_arrays(),
            normalization=self.stats.to_dict(),
            config_hash=config_hash,
            seed=seed,
            metrics=metrics or {},
        )

    @classmethod
    def from_checkpoint(cls, ckpt: checkpoint.Checkpoint) -> "MirrorNet":
        if ckpt.model_kind != "mirrornet":
            raise checkpoint.CheckpointError(
                f"expected a mirrornet checkpoint, got model_kind {ckpt.model_kind!r}"
            )
        arrays = ckpt.array_dict()
        n = arrays["enc.c6.bias"].shape[0]
        model = cls(latent_channels=n, stats=data.ChannelStats.from_dict(ckpt.normalization or {}))
        arch.load_state_arrays(model.encoder, arrays, "enc.")
        arch.load_state_arrays(model.decoder, arrays, "dec.")
        return model


@dataclass
class InitPhaseConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch: int = 8
    decay: float = 0.5
    patience: int = 5
    seed: int = 0
    # circular time shifts + reversal of (spectrogram, trajectory) pairs;
    # label-preserving because both views share one time axis
    augment: bool = True


@dataclass
class LearningPhaseConfig:
    lr_encoder: float = 1e-6
    lr_decoder: float = 1e-6
    epochs_decoder: int = 5
    epochs_encoder: int = 5
    iterations: int = 20
    batch: int = 16
    seed: int = 0
    log_path: Optional[str] = None
    # per-epoch loss reporting runs on at most this many items (None = all)
    eval_items: Optional[int] = None

    def __post_init__(self):
        for name in ("lr_encoder", "lr_decoder", "epochs_decoder", "epochs_encoder", "iterations", "batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _specs_of(items: Sequence) -> np.ndarray:
    specs = []
    for item in items:
        spec = getattr(item, "spectrogram", None)
        if isinstance(spec, AuditorySpectrogram):
            spec = spec.values
        elif not isinstance(spec, np.ndarray):
            spec = item.load_spectrogram().values
        specs.append(np.asarray(spec, dtype=np.float64))
    Ls = {s.shape[-1] for s in specs}
    if len(Ls) != 1:
        raise ShapeError(f"items have mixed spectrogram lengths {sorted(Ls)}")
    return np.stack(specs)


def init_phase(
    model: MirrorNet,
    supervised: Sequence,
    cfg: InitPhaseConfig,
    stats: Optional[data.ChannelStats] = None,
) -> list[dict]:
    """Supervised pre-training; encoder and decoder share no gradients.

    Trains the encoder on MSE(normalized truth, encoded spectrogram) and
    the decoder on MSE(spectrogram, decoded normalized truth). Latent
    normalization statistics come from the supervised trajectories unless
    the plant already fixes them.
    """
    if not supervised:
        raise ValueError("init phase needs at least one supervised item")
    n_ch = model.latent_channels
    trajs, specs = stack_pairs(supervised, n_ch)
    model.stats = stats if stats is not None else data.ChannelStats.fit([t for t in trajs])
    l_norm = (trajs - model.stats.mean[:n_ch, None]) / model.stats.std[:n_ch, None]

    x = specs.astype(np.float32)
    l_true = l_norm.astype(np.float32)
    rng = np.random.default_rng(cfg.seed)
    opt_enc = nn.Adam(model.encoder.parameters(), lr=cfg.lr)
    opt_dec = nn.Adam(model.decoder.parameters(), lr=cfg.lr)
    sched = nn.LrScheduler([opt_enc, opt_dec], lr=cfg.lr, decay=cfg.decay, patience=cfg.patience)

    n = len(supervised)
    n_shifts = l_true.shape[-1] // 4  # latent shifts of 4 <-> spectrogram shifts of 5

    def augmented(idx):
        xs, ls = [], []
        for i in idx:
            j = int(rng.integers(0, n_shifts))
            xi = np.roll(x[i], -5 * j, axis=-1)
            li = np.roll(l_true[i], -4 * j, axis=-1)
            if rng.random() < 0.5:
                xi = xi[:, ::-1].copy()
                li = li[:, ::-1].copy()
            xs.append(xi)
            ls.append(li)
        return Tensor(np.stack(xs)), Tensor(np.stack(ls))

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        ec_losses, ed_losses = [], []
        for start in range(0, n, cfg.batch):
            idx = order[start : start + cfg.batch]
            if cfg.augment:
                xb, lb = augmented(idx)
            else:
                xb, lb = Tensor(x[idx]), Tensor(l_true[idx])

            opt_enc.zero_grad()
            with GradTape() as tape:
                ec = nn.mse(lb, model.encode(xb))
                tape.backward(ec)
            opt_enc.step()

            opt_dec.zero_grad()
            with GradTape() as tape:
                ed = nn.mse(xb, model.decode(lb))
                tape.backward(ed)
            opt_dec.step()

            if not (math.isfinite(float(ec.data)) and math.isfinite(float(ed.data))):
                raise FloatingPointError(f"non-finite init loss at epoch {epoch}")
            ec_losses.append(float(ec.data))
            ed_losses.append(float(ed.data))
        ec_mean = float(np.mean(ec_losses))
        ed_mean = float(np.mean(ed_losses))
        history.append({"epoch": epoch, "e_c_init": ec_mean, "e_d_init": ed_mean, "lr": sched.lr})
        sched.step(ec_mean + ed_mean)
    return history


def _eval_losses(
    model: MirrorNet,
    x: np.ndarray,
    plant,
    l_hat: Optional[np.ndarray] = None,
    x_s: Optional[np.ndarray] = None,
) -> tuple[float, float]:
    """(e_c, e_d) without recording gradients.

    When the latents have not changed since they were computed (decoder
    stage), the caller passes them with the matching plant output so only
    one decoder forward is needed.
    """
    if l_hat is None:
        l_hat = model.encode(x.astype(np.float32)).data
    if x_s is None:
        x_s = plant.synthesize(l_hat.astype(np.float64))
    x_d = model.decode(l_hat.astype(np.float32)).data.astype(np.float64)
    e_c = float(np.mean((x_d - x) ** 2))
    e_d = float(np.mean((x_s - x_d) ** 2))
    return e_c, e_d


def learning_phase(
    model: MirrorNet,
    audio_only: Sequence,
    plant,
    cfg: LearningPhaseConfig,
    stage_callback=None,
) -> list[dict]:
    """Alternating decoder/encoder training against a frozen plant.

    Per iteration: the decoder stage minimizes MSE(plant(l), decoder(l))
    on latents detached from the encoder, then the encoder stage minimizes
    MSE(decoder(encoder(x)), x) with decoder parameters frozen but passing
    gradients. Both losses are evaluated and logged every epoch.
    """
    if not audio_only:
        raise ValueError("learning phase needs at least one item")
    specs = _specs_of(audio_only)
    x32 = specs.astype(np.float32)
    n = len(audio_only)
    rng = np.random.default_rng(cfg.seed)

    opt_enc = nn.Adam(model.encoder.parameters(), lr=cfg.lr_encoder)
    opt_dec = nn.Adam(model.decoder.parameters(), lr=cfg.lr_decoder)
    history = []
    log_f = open(cfg.log_path, "a") if cfg.log_path else None

    def log(iteration, stage, epoch, e_c, e_d, lr):
        entry = {
            "iteration": iteration, "stage": stage, "epoch": epoch,
            "e_c": e_c, "e_d": e_d, "lr": lr,
        }
        history.append(entry)
        if log_f:
            log_f.write(json.dumps(entry) + "\n")

    n_eval = n if cfg.eval_items is None else min(n, cfg.eval_items)
    x_eval = specs[:n_eval]

    try:
        for it in range(cfg.iterations):
            # latents are fixed for the whole decoder stage: the encoder does
            # not change during it
            l_hat = model.encode(x32).data
            x_s = plant.synthesize(l_hat.astype(np.float64)).astype(np.float32)

            for epoch in range(cfg.epochs_decoder):
                order = rng.permutation(n)
                for start in range(0, n, cfg.batch):
                    idx = order[start : start + cfg.batch]
                    opt_dec.zero_grad()
                    with GradTape() as tape:
                        loss = nn.mse(Tensor(x_s[idx]), model.decode(Tensor(l_hat[idx])))
                        tape.backward(loss)
                    if not math.isfinite(float(loss.data)):
                        raise FloatingPointError(f"non-finite e_d at iteration {it}")
                    opt_dec.step()
                e_c, e_d = _eval_losses(
                    model, x_eval, plant, l_hat=l_hat[:n_eval], x_s=x_s[:n_eval].astype(np.float64)
                )
                log(it, "decoder", epoch, e_c, e_d, opt_dec.lr)
            if stage_callback is not None:
                stage_callback(it, "decoder")

            arch.set_trainable(model.decoder, False)
            try:
                for epoch in range(cfg.epochs_encoder):
                    order = rng.permutation(n)
                    for start in range(0, n, cfg.batch):
                        idx = order[start : start + cfg.batch]
                        opt_enc.zero_grad()
                        with GradTape() as tape:
                            xb = Tensor(x32[idx])
                            loss = nn.mse(model.decode(model.encode(xb)), xb)
                            tape.backward(loss)
                        if not math.isfinite(float(loss.data)):
                            raise FloatingPointError(f"non-finite e_c at iteration {it}")
                        opt_enc.step()
                    e_c, e_d = _eval_losses(model, x_eval, plant)
                    log(it, "encoder", epoch, e_c, e_d, opt_enc.lr)
            finally:
                arch.set_trainable(model.decoder, True)
            if stage_callback is not None:
                stage_callback(it, "encoder")
    finally:
        if log_f:
            log_f.close()
    return history


def infer_articulation(model: MirrorNet, wav: np.ndarray, fs: int) -> np.ndarray:
    """Waveform -> physical-unit (N, k) trajectory via the trained encoder."""
    spec = auditory_spectrogram(wav, fs)
    L = spec.values.shape[-1]
    trim = L - (L % arch.POOL_FACTOR)
    if trim < arch.POOL_FACTOR:
        raise ShapeError(f"audio too short: {L} spectrogram frames")
    l_norm = model.infer_latent(spec.values[:, :trim])
    return data.denormalize_channels(l_norm, model.stats)
