"""Audio <-> auditory-spectrogram conversions and source-feature estimation.

The sensory representation is a 128-channel log-frequency magnitude
spectrogram at 125 frames/s (8 ms hop), built from a constant-Q bank of
gaussian-shaped filters spanning 180-7000 Hz and compressed with
log(1 + x / eps). All operations here are pure functions of their inputs.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np

FS = 16000
FRAME_RATE = 125
HOP = FS // FRAME_RATE  # 128 samples = 8 ms
WIN = 512
N_FFT = 1024
N_CHANNELS = 128
FMIN = 180.0
FMAX = 7000.0
EPS_COMPRESS = 1e-3

SOURCE_RATE = 100  # Hz, articulatory frame rate
PITCH_FMIN = 60.0
PITCH_FMAX = 400.0
VOICING_THRESHOLD = 0.45
PITCH_SCALE = 400.0  # pitch_hz / PITCH_SCALE is the model-facing unit


class AudioFormatError(ValueError):
    """Unsupported sample rate or empty/too-short signal."""


def channel_frequencies(n_channels: int = N_CHANNELS) -> np.ndarray:
    """Log-spaced filterbank center frequencies in Hz."""
    return np.geomspace(FMIN, FMAX, n_channels)


def _filterbank() -> np.ndarray:
    """(channels, fft_bins) matrix of gaussian log-frequency filters.

    Each row is normalized to unit sum so a flat magnitude spectrum maps to
    a flat channel response.
    """
    freqs = channel_frequencies()
    bins = np.fft.rfftfreq(N_FFT, d=1.0 / FS)
    log_spacing = np.log(FMAX / FMIN) / (N_CHANNELS - 1)
    with np.errstate(divide="ignore"):
        log_bins = np.log(np.where(bins > 0, bins, 1e-12))
    d = (log_bins[None, :] - np.log(freqs)[:, None]) / log_spacing
    fb = np.exp(-0.5 * d * d)
    fb[:, bins <= 0] = 0.0
    fb /= fb.sum(axis=1, keepdims=True)
    return fb


_FB = _filterbank()
_WINDOW = np.hanning(WIN)


@dataclass
class AuditorySpectrogram:
    """128-channel log-frequency time-frequency matrix (C x L)."""

    values: np.ndarray
    frame_rate: int = FRAME_RATE
    channel_freqs: np.ndarray = field(default_factory=channel_frequencies)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] != N_CHANNELS:
            raise ValueError(f"expected ({N_CHANNELS} x L) values, got {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        """One row per frame, 128 columns, 6 significant digits."""
        np.savetxt(path, self.values.T, fmt="%.6g", delimiter=",")

    @classmethod
    def from_csv(cls, path) -> "AuditorySpectrogram":
        vals = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls(values=vals.T)


@dataclass
class SourceFeatures:
    """Per-frame glottal excitation descriptors at 100 Hz."""

    aperiodicity: np.ndarray
    periodicity: np.ndarray
    pitch: np.ndarray  # Hz, 0 when unvoiced
    rate: int = SOURCE_RATE

    def validate(self) -> None:
        if not (self.periodicity + self.aperiodicity <= 1.0 + 1e-6).all():
            raise ValueError("periodicity + aperiodicity exceeds 1")
        unvoiced = self.periodicity < VOICING_THRESHOLD
        if np.any(self.pitch[unvoiced] != 0.0):
            raise ValueError("nonzero pitch on unvoiced frame")


def _frames(wav: np.ndarray, hop: int, win: int, n_frames: int) -> np.ndarray:
    """(n_frames, win) view-copy with zero padding past the signal end."""
    pad = max(0, (n_frames - 1) * hop + win - len(wav))
    x = np.pad(wav.astype(np.float64), (0, pad))
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def _magnitude_frames(wav: np.ndarray, n_frames: int) -> np.ndarray:
    frames = _frames(wav, HOP, WIN, n_frames) * _WINDOW
    return np.abs(np.fft.rfft(frames, n=N_FFT, axis=1))


def compress(x: np.ndarray) -> np.ndarray:
    return np.log1p(x / EPS_COMPRESS)


def uncompress(v: np.ndarray) -> np.ndarray:
    return np.expm1(np.maximum(v, 0.0)) * EPS_COMPRESS


def auditory_spectrogram(wav: np.ndarray, fs: int) -> AuditorySpectrogram:
    """Analyze a mono waveform into the 128-channel auditory spectrogram.

    Frame count is round(duration * 125); deterministic.
    """
    if fs != FS:
        raise AudioFormatError(f"unsupported sample rate {fs}, expected {FS}")
    wav = np.asarray(wav, dtype=np.float64).reshape(-1)
    if len(wav) < HOP:
        raise AudioFormatError("signal shorter than one frame")
    n_frames = int(round(len(wav) / HOP))
    mags = _magnitude_frames(wav, n_frames)  # (L, bins)
    chans = mags @ _FB.T  # (L, channels)
    return AuditorySpectrogram(values=compress(chans.T))


def _overlap_add(frames_td: np.ndarray, n_samples: int) -> np.ndarray:
    """Weighted overlap-add resynthesis with the analysis window."""
    n_frames = frames_td.shape[0]
    out = np.zeros(n_samples + WIN)
    norm = np.zeros(n_samples + WIN)
    w2 = _WINDOW * _WINDOW
    for t in range(n_frames):
        s = t * HOP
        out[s : s + WIN] += frames_td[t, :WIN] * _WINDOW
        norm[s : s + WIN] += w2
    out = out[:n_samples] / np.maximum(norm[:n_samples], 1e-8)
    return out


def invert_spectrogram(
    spec: AuditorySpectrogram,
    iters: int = 100,
    seed: int = 0,
    return_errors: bool = False,
):
    """Reconstruct a waveform whose analysis approximates ``spec``.

    Iterative analysis-synthesis projection: analyze the current estimate,
    rescale its spectral magnitudes toward the target channel magnitudes,
    and resynthesize. The best estimate so far is kept, so the recorded
    reconstruction error is non-increasing by construction. Deterministic
    for a given seed.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    target_chan = uncompress(spec.values.T)  # (L, channels)
    n_frames = spec.n_frames
    n_samples = n_frames * HOP

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_samples) * 1e-3

    fb_colsum = _FB.sum(axis=0)  # per-bin total filter weight
    constrained = fb_colsum > 1e-6

    def analysis_error(w: np.ndarray) -> float:
        got = compress(_magnitude_frames(w, n_frames) @ _FB.T)
        tgt = spec.values.T
        return float(np.mean((got - tgt) ** 2))

    best_x = x
    best_err = analysis_error(x)
    errors = [best_err]
    alpha = 1.0
    eps = 1e-10
    for _ in range(iters):
        frames = _frames(x, HOP, WIN, n_frames) * _WINDOW
        S = np.fft.rfft(frames, n=N_FFT, axis=1)
        mags = np.abs(S)
        chans = mags @ _FB.T
        gain_c = (target_chan + eps) / (chans + eps)  # (L, channels)
        bin_gain = (gain_c @ _FB) / np.maximum(fb_colsum, 1e-12)[None, :]
        bin_gain[:, ~constrained] = 0.0
        S = S * np.power(bin_gain, alpha)
        frames_td = np.fft.irfft(S, n=N_FFT, axis=1)
        x_new = _overlap_add(frames_td, n_samples)
        err = analysis_error(x_new)
        if err <= best_err:
            best_err = err
            best_x = x_new
            x = x_new
        else:
            x = best_x
            alpha = max(alpha * 0.5, 1e-3)
        errors.append(best_err)

    peak = np.max(np.abs(best_x))
    if peak > 1.0:
        best_x = best_x / peak
    if return_errors:
        return best_x, errors
    return best_x


def estimate_source_features(wav: np.ndarray, fs: int) -> SourceFeatures:
    """Autocorrelation-based periodicity/pitch, plus aperiodicity = 1 - p.

    Per 10 ms frame: the normalized autocorrelation peak in the 60-400 Hz
    lag band gives periodicity and pitch (with parabolic lag interpolation);
    frames below the voicing threshold or near silence get pitch 0.
    """
    if fs != FS:
        raise AudioFormatError(f"unsupported sample rate {fs}, expected {FS}")
    wav = np.asarray(wav, dtype=np.float64).reshape(-1)
    hop = FS // SOURCE_RATE
    n_frames = int(round(len(wav) / hop))
    frames = _frames(wav, hop, WIN, max(n_frames, 1))

    lag_min = int(FS / PITCH_FMAX)  # 40
    lag_max = int(np.ceil(FS / PITCH_FMIN))  # ~267

    periodicity = np.zeros(n_frames)
    pitch = np.zeros(n_frames)
    for i in range(n_frames):
        f = frames[i] - frames[i].mean()
        if np.sqrt(np.mean(f * f)) < 1e-5:
            continue
        # normalized autocorrelation over the pitch lag band
        full = np.correlate(f, f, mode="full")[WIN - 1 :]
        e = np.concatenate(([0.0], np.cumsum(f * f)))
        best_r, best_lag = 0.0, 0
        lags = np.arange(lag_min, min(lag_max, WIN - 1) + 1)
        e0 = e[WIN - lags] - e[0]
        e1 = e[WIN] - e[lags]
        denom = np.sqrt(e0 * e1)
        r = np.where(denom > 0, full[lags] / np.maximum(denom, 1e-30), 0.0)
        r_max = float(r.max())
        # prefer the shortest lag among near-equal peaks to avoid octave errors
        j = int(np.argmax(r >= r_max - 0.01))
        best_r, best_lag = r_max, int(lags[j])
        periodicity[i] = min(max(best_r, 0.0), 1.0)
        if periodicity[i] >= VOICING_THRESHOLD:
            # parabolic interpolation around the peak lag
            lag = float(best_lag)
            if 0 < j < len(lags) - 1:
                y0, y1, y2 = r[j - 1], r[j], r[j + 1]
                denom_p = y0 - 2 * y1 + y2
                if abs(denom_p) > 1e-12:
                    lag += 0.5 * (y0 - y2) / denom_p
            pitch[i] = FS / lag
    aperiodicity = np.clip(1.0 - periodicity, 0.0, 1.0)
    return SourceFeatures(aperiodicity=aperiodicity, periodicity=periodicity, pitch=pitch)


def write_wav(path, wav: np.ndarray, fs: int = FS) -> None:
    """RIFF PCM, mono, 16-bit, 16 kHz, little-endian."""
    data = np.clip(np.asarray(wav, dtype=np.float64), -1.0, 1.0)
    pcm = (data * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(fs)
        f.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise AudioFormatError("expected mono 16-bit PCM WAV")
        fs = f.getframerate()
        raw = f.readframes(f.getnframes())
    pcm = np.array(struct.unpack(f"<{len(raw) // 2}h", raw), dtype=np.float64)
    return pcm / 32767.0, fs
