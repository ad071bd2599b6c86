"""Dataset manifests, channel schema, splits, and the synthetic oracle.

The synthetic oracle is a closed-form articulatory-to-spectrogram map that
stands in for a real vocal tract at desk scale: three gaussian formant
bumps in log-channel space driven by the constriction-degree variables,
gains and bandwidths modulated by the location variables, and a
periodicity-weighted harmonic comb plus aperiodic noise floor as the
excitation. Externally prepared data enters through the same manifest and
CSV formats.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import butter, filtfilt

from . import audfront
from .audfront import AuditorySpectrogram, compress

CHANNELS = ("LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD", "ap", "per", "pitch_hz")
TV_CHANNELS = CHANNELS[:6]
N_LATENT = len(CHANNELS)
TRAJ_RATE = 100  # Hz

# physical-style channel ranges (synthetic conventions): TVs in [-1, 1],
# voicing indicators in [0, 1], pitch in Hz up to PITCH_SCALE
CHANNEL_RANGES = {
    **{name: (-1.0, 1.0) for name in TV_CHANNELS},
    "ap": (0.0, 1.0),
    "per": (0.0, 1.0),
    "pitch_hz": (0.0, audfront.PITCH_SCALE),
}

SPLITS = ("train", "dev", "test", "init")


class ManifestError(ValueError):
    """Malformed manifest or trajectory file."""


# ---------------------------------------------------------------------------
# synthetic oracle


@dataclass
class OracleParams:
    """Closed-form plant parameters.

    Formant center frequencies are affine in the constriction-degree TVs
    and stay inside [180, 7000] Hz for TVs in [-1, 1].
    """

    # (offset_hz, slope_hz) per formant; centers = offset + slope * (tv + 1),
    # then shifted by the location TV. The three bands stay disjoint even at
    # the extreme location shifts so no TV pair is confounded.
    formant_affine: tuple = ((300.0, 250.0), (1050.0, 425.0), (2500.0, 1100.0))
    formant_base_width: tuple = (6.0, 5.0, 4.0)  # in channel units
    gain_mod: float = 1.5
    width_mod: float = 0.5
    loc_shift: float = 0.12  # fractional center shift per unit location TV
    envelope_floor: float = 0.05
    harmonic_rolloff: float = 0.3
    harmonic_width: float = 0.6  # channels
    noise_level: float = 1.0
    floor: float = 0.01


_LOG_SPACING = np.log(audfront.FMAX / audfront.FMIN) / (audfront.N_CHANNELS - 1)


def _chan_pos(freq_hz: np.ndarray) -> np.ndarray:
    """Fractional channel index of a frequency on the log-spaced axis."""
    return np.log(np.maximum(freq_hz, 1e-6) / audfront.FMIN) / _LOG_SPACING


def oracle_synth(params: OracleParams, l: np.ndarray) -> AuditorySpectrogram:
    """Synthesize a 128 x (k * 5/4) spectrogram from a 9 x k trajectory.

    Deterministic and closed-form. Trajectory channels use physical units
    (TVs in [-1, 1], voicing in [0, 1], pitch in Hz); out-of-range values
    are clamped with a warning.
    """
    l = np.asarray(l, dtype=np.float64)
    if l.ndim != 2 or l.shape[0] != N_LATENT:
        raise ValueError(f"expected ({N_LATENT} x k) trajectory, got {l.shape}")
    k = l.shape[1]
    if k % 4 != 0:
        raise ValueError(f"trajectory length {k} not divisible by 4")

    lo = np.array([CHANNEL_RANGES[c][0] for c in CHANNELS])[:, None]
    hi = np.array([CHANNEL_RANGES[c][1] for c in CHANNELS])[:, None]
    if np.any(l < lo - 1e-9) or np.any(l > hi + 1e-9):
        warnings.warn("trajectory values out of range; clamping", stacklevel=2)
    l = np.clip(l, lo, hi)

    n_out = k * 5 // 4
    # resample 100 Hz trajectory onto the 125 Hz spectrogram frame grid
    u = np.arange(n_out) * (k / n_out)
    src = np.arange(k, dtype=np.float64)
    lr = np.vstack([np.interp(u, src, l[c]) for c in range(N_LATENT)])

    la, lp, tbcl, tbcd, ttcl, ttcd, ap, per, pitch = lr
    chan = np.arange(audfront.N_CHANNELS, dtype=np.float64)

    envelope = np.full((n_out, audfront.N_CHANNELS), params.envelope_floor)
    degree_tvs = (la, tbcd, ttcd)
    location_tvs = (lp, tbcl, ttcl)
    for (offset, slope), base_w, deg, loc in zip(
        params.formant_affine, params.formant_base_width, degree_tvs, location_tvs
    ):
        center_hz = (offset + slope * (deg + 1.0)) * (1.0 + params.loc_shift * loc)
        center = _chan_pos(center_hz)  # (n_out,)
        width = base_w * (1.0 + params.width_mod * loc)
        gain = np.exp(params.gain_mod * loc)
        d = (chan[None, :] - center[:, None]) / width[:, None]
        envelope += gain[:, None] * np.exp(-0.5 * d * d)

    comb = np.zeros((n_out, audfront.N_CHANNELS))
    voiced = pitch > 0
    if voiced.any():
        p = np.where(voiced, pitch, np.inf)
        max_n = int(audfront.FMAX / max(pitch[voiced].min(), 1.0)) + 1
        for n in range(1, max_n + 1):
            hf = n * p
            in_band = (hf >= audfront.FMIN) & (hf <= audfront.FMAX)
            if not in_band.any():
                continue
            pos = _chan_pos(np.where(in_band, hf, audfront.FMIN))
            d = (chan[None, :] - pos[:, None]) / params.harmonic_width
            comb += in_band[:, None] * (n ** -params.harmonic_rolloff) * np.exp(-0.5 * d * d)

    excitation = per[:, None] * comb + ap[:, None] * params.noise_level
    power = params.floor + envelope * excitation
    return AuditorySpectrogram(values=compress(power.T))


# ---------------------------------------------------------------------------
# synthetic trajectory generation


def _smooth_noise(rng: np.random.Generator, k: int, cutoff_hz: float) -> np.ndarray:
    """Zero-mean low-pass-filtered gaussian noise, unit peak amplitude."""
    b, a = butter(4, cutoff_hz / (TRAJ_RATE / 2))
    pad = TRAJ_RATE  # one second of context so filtfilt edges stay smooth
    x = filtfilt(b, a, rng.standard_normal(k + 2 * pad))[pad : pad + k]
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


@dataclass
class GeneratedItem:
    id: str
    speaker: str
    split: str
    trajectory: np.ndarray  # (9, k) physical units
    spectrogram: AuditorySpectrogram


def _voicing_envelope(rng: np.random.Generator, k: int) -> np.ndarray:
    """Smooth [0, 1] voicing: alternating voiced/unvoiced segments.

    Every item gets at least one voiced segment (0.5-1.0 s) so the pitch
    channel is never degenerate.
    """
    v = np.zeros(k)
    t = int(rng.uniform(10, 30))
    state = 0
    while t < k:
        state ^= 1
        dur = int(rng.uniform(50, 100)) if state else int(rng.uniform(20, 50))
        v[t : t + dur] = state
        t += dur
    w = np.hanning(25)
    w /= w.sum()
    half = len(w) // 2
    return np.convolve(np.pad(v, (half, half), mode="edge"), w, mode="same")[half : half + k]


def gen_trajectory(rng: np.random.Generator, duration_s: float) -> np.ndarray:
    """One smooth random 9-channel trajectory in physical units.

    Frame-to-frame deltas stay within 0.2 of each channel's range; the
    voiced-frame pitch ramps up from an 80 Hz floor via a quadratic gate so
    it never moves faster than that bound either.
    """
    k = int(round(duration_s * TRAJ_RATE))
    tvs = np.vstack([0.9 * _smooth_noise(rng, k, cutoff_hz=8.0) for _ in range(6)])

    per = 0.95 * _voicing_envelope(rng, k)
    ap = 1.0 - per

    f0 = 165.0 + 75.0 * _smooth_noise(rng, k, cutoff_hz=1.5)  # [90, 240]
    voiced = per >= audfront.VOICING_THRESHOLD
    gate = np.clip((per - 0.55) / 0.45, 0.0, 1.0)
    pitch = np.where(voiced, 80.0 + (f0 - 80.0) * gate * gate, 0.0)
    return np.vstack([tvs, ap[None], per[None], pitch[None]])


def gen_synthetic(
    n_items: int,
    duration_s: float = 2.0,
    seed: int = 0,
    params: Optional[OracleParams] = None,
    split: str = "train",
) -> list[GeneratedItem]:
    """Deterministic synthetic dataset: smooth trajectories + oracle spectra.

    Each item gets its own speaker so any speaker split stays disjoint.
    """
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    if params is None:
        params = OracleParams()
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n_items):
        traj = gen_trajectory(rng, duration_s)
        spec = oracle_synth(params, traj)
        items.append(
            GeneratedItem(
                id=f"syn{seed:04d}-{i:04d}",
                speaker=f"S{i:04d}",
                split=split,
                trajectory=traj,
                spectrogram=spec,
            )
        )
    return items


# ---------------------------------------------------------------------------
# manifest / files


@dataclass
class UtteranceItem:
    """One manifest entry; paths are relative to the manifest directory."""

    id: str
    speaker: str
    split: str
    wav: Optional[str] = None
    trajectory: Optional[str] = None
    spectrogram: Optional[str] = None
    base_dir: Path = field(default_factory=Path, repr=False)

    def load_trajectory(self) -> np.ndarray:
        if self.trajectory is None:
            raise ManifestError(f"item {self.id} has no trajectory")
        return read_trajectory_csv(self.base_dir / self.trajectory)

    def load_spectrogram(self) -> AuditorySpectrogram:
        if self.spectrogram is not None:
            return AuditorySpectrogram.from_csv(self.base_dir / self.spectrogram)
        if self.wav is not None:
            wav, fs = audfront.read_wav(self.base_dir / self.wav)
            return audfront.auditory_spectrogram(wav, fs)
        raise ManifestError(f"item {self.id} has neither spectrogram nor wav")


def write_trajectory_csv(path, traj: np.ndarray) -> None:
    """CSV with header time_s,<channels>; 100 rows per second."""
    traj = np.asarray(traj)
    if traj.shape[0] != N_LATENT:
        raise ValueError(f"expected {N_LATENT} channels, got {traj.shape}")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("time_s",) + CHANNELS)
        for i in range(traj.shape[1]):
            w.writerow([f"{i / TRAJ_RATE:.2f}"] + [f"{v:.8g}" for v in traj[:, i]])


def read_trajectory_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header is None or tuple(header) != ("time_s",) + CHANNELS:
            raise ManifestError(f"{path}: unexpected trajectory header {header}")
        rows = [[float(v) for v in row[1:]] for row in r]
    if not rows:
        raise ManifestError(f"{path}: empty trajectory")
    return np.asarray(rows).T


def write_dataset(items: Sequence[GeneratedItem], out_dir) -> Path:
    """Write trajectories, spectrograms, and manifest.json; returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for item in items:
        traj_name = f"{item.id}.traj.csv"
        spec_name = f"{item.id}.spec.csv"
        write_trajectory_csv(out / traj_name, item.trajectory)
        item.spectrogram.to_csv(out / spec_name)
        entries.append(
            {
                "id": item.id,
                "speaker": item.speaker,
                "split": item.split,
                "trajectory": traj_name,
                "spectrogram": spec_name,
            }
        )
    manifest = out / "manifest.json"
    with open(manifest, "w") as f:
        json.dump(entries, f, indent=2)
        f.write("\n")
    return manifest


def load_manifest(path) -> list[UtteranceItem]:
    """Load and validate a manifest; item order is preserved."""
    path = Path(path)
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ManifestError(f"{path}: cannot read manifest ({e})") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(raw, list):
        raise ManifestError(f"{path}: manifest must be a JSON array")
    items = []
    for i, entry in enumerate(raw):
        for key in ("id", "speaker", "split"):
            if key not in entry:
                raise ManifestError(f"{path}: item {i} missing field {key!r}")
        if entry["split"] not in SPLITS:
            raise ManifestError(f"{path}: item {entry['id']}: unknown split {entry['split']!r}")
        item = UtteranceItem(
            id=entry["id"],
            speaker=entry["speaker"],
            split=entry["split"],
            wav=entry.get("wav"),
            trajectory=entry.get("trajectory"),
            spectrogram=entry.get("spectrogram"),
            base_dir=path.parent,
        )
        if item.wav is None and item.spectrogram is None:
            raise ManifestError(f"{path}: item {item.id}: needs wav or spectrogram")
        for attr in ("wav", "trajectory", "spectrogram"):
            rel = getattr(item, attr)
            if rel is not None and not (path.parent / rel).exists():
                raise ManifestError(f"{path}: item {item.id}: missing file {rel}")
        _validate_item(item)
        items.append(item)
    return items


def _validate_item(item: UtteranceItem) -> None:
    if item.trajectory is not None:
        traj = item.load_trajectory()
        if traj.shape[0] != N_LATENT:
            raise ManifestError(f"item {item.id}: trajectory must have {N_LATENT} channels")
        if item.wav is not None:
            wav, fs = audfront.read_wav(item.base_dir / item.wav)
            drift = abs(traj.shape[1] / TRAJ_RATE - len(wav) / fs)
            if drift >= 0.020:
                raise ManifestError(
                    f"item {item.id}: trajectory/audio duration drift {drift * 1e3:.1f} ms"
                )


# ---------------------------------------------------------------------------
# splits and normalization


def split_by_speaker(
    items: Sequence, ratios: dict[str, float], seed: int = 0
) -> dict[str, list]:
    """Speaker-disjoint partition with the given split ratios.

    Every requested split receives at least one speaker; the split with the
    largest ratio absorbs rounding remainders. Deterministic given seed.
    """
    speakers = sorted({it.speaker for it in items})
    if len(speakers) < len(ratios):
        raise ValueError(f"{len(speakers)} speakers cannot fill {len(ratios)} splits")
    rng = np.random.default_rng(seed)
    rng.shuffle(speakers)

    total = sum(ratios.values())
    names = sorted(ratios, key=lambda s: ratios[s])
    counts = {}
    remaining = len(speakers)
    for name in names[:-1]:
        c = max(1, round(len(speakers) * ratios[name] / total))
        counts[name] = min(c, remaining - (len(names) - len(counts) - 1))
        remaining -= counts[name]
    counts[names[-1]] = remaining

    out: dict[str, list] = {}
    start = 0
    for name in names:
        chosen = set(speakers[start : start + counts[name]])
        start += counts[name]
        out[name] = [it for it in items if it.speaker in chosen]
    return out


@dataclass
class ChannelStats:
    """Per-channel mean and standard deviation, from the training split only."""

    mean: np.ndarray
    std: np.ndarray

    SIGMA_FLOOR = 1e-8

    @classmethod
    def fit(cls, trajectories: Sequence[np.ndarray]) -> "ChannelStats":
        cat = np.concatenate([np.asarray(t) for t in trajectories], axis=1)
        return cls(mean=cat.mean(axis=1), std=np.maximum(cat.std(axis=1), cls.SIGMA_FLOOR))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(mean=np.asarray(d["mean"]), std=np.asarray(d["std"]))


def default_stats() -> ChannelStats:
    """Range-derived statistics for when no supervised data exists.

    Mean at the range midpoint, sigma at a quarter of the range, so an
    unsupervised latent space still maps into physical bounds.
    """
    lo = np.array([CHANNEL_RANGES[c][0] for c in CHANNELS], dtype=np.float64)
    hi = np.array([CHANNEL_RANGES[c][1] for c in CHANNELS], dtype=np.float64)
    return ChannelStats(mean=(lo + hi) / 2.0, std=(hi - lo) / 4.0)


def normalize_channels(traj: np.ndarray, stats: ChannelStats) -> np.ndarray:
    return (traj - stats.mean[:, None]) / stats.std[:, None]


def denormalize_channels(traj: np.ndarray, stats: ChannelStats) -> np.ndarray:
    return traj * stats.std[:, None] + stats.mean[:, None]
