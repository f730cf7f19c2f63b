"""Deterministic signal-processing kernels shared across the pipeline.

Waveform in, spectra out.  The tensor-level helpers (``stft_tensor``,
``spectral_l1_tensor``, ``mel_power_tensor``) are differentiable and are the
single implementation behind both the numpy-facing API and the training graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile


@dataclass(frozen=True)
class Waveform:
    """Mono 1-D audio signal with its sample rate.

    Samples are stored as float64 in nominal range [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.size == 0:
            raise ValueError("waveform must have at least one sample")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def power(self) -> float:
        return float(np.mean(self.samples**2))


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters; frames are taken from fully covered windows only."""

    window_length: int = 512
    hop: int = 128
    fft_size: int = 512
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.window_length <= self.fft_size):
            raise ValueError(
                "require 0 < hop <= window_length <= fft_size, got "
                f"hop={self.hop}, window_length={self.window_length}, fft_size={self.fft_size}"
            )
        if self.window not in ("hann", "rect"):
            raise ValueError(f"unknown window {self.window!r}; expected 'hann' or 'rect'")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.window_length:
            raise ValueError(
                f"signal too short: {num_samples} samples < one window of {self.window_length}"
            )
        return (num_samples - self.window_length) // self.hop + 1


# Fixed settings for the spectral-magnitude regularizer and saliency maps.
DEFAULT_SPECTRAL_CFG = StftConfig(window_length=512, hop=128, fft_size=512, window="hann")


@dataclass(frozen=True)
class ComplexSpectrogram:
    values: np.ndarray  # (bins, frames) complex
    config: StftConfig

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass(frozen=True)
class Spectrogram:
    """Nonnegative real time-frequency map (or log-compressed mel map)."""

    values: np.ndarray  # (bins, frames)
    config: object = None


@dataclass(frozen=True)
class MelConfig:
    stft: StftConfig = field(default_factory=lambda: StftConfig(window_length=512, hop=160, fft_size=512))
    num_bands: int = 64
    fmin_hz: float = 0.0
    fmax_hz: float | None = None  # None -> Nyquist
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.num_bands < 1:
            raise ValueError("mel band count must be >= 1")


def _window_array(cfg: StftConfig) -> np.ndarray:
    if cfg.window == "rect":
        return np.ones(cfg.window_length)
    # periodic Hann
    n = np.arange(cfg.window_length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / cfg.window_length)


def stft_tensor(x: torch.Tensor, cfg: StftConfig) -> torch.Tensor:
    """Complex STFT of ``x`` (..., T) -> (..., bins, frames); differentiable.

    No padding: only fully covered windows contribute frames.
    """
    num_samples = x.shape[-1]
    cfg.num_frames(num_samples)  # raises "signal too short"
    frames = x.unfold(-1, cfg.window_length, cfg.hop)  # (..., frames, window)
    win = torch.as_tensor(_window_array(cfg), dtype=x.dtype, device=x.device)
    spec = torch.fft.rfft(frames * win, n=cfg.fft_size)
    return spec.transpose(-1, -2)


def spectral_l1_tensor(x: torch.Tensor, cfg: StftConfig = DEFAULT_SPECTRAL_CFG) -> torch.Tensor:
    """Mean magnitude-STFT entry per signal: (..., T) -> (...)."""
    mag = torch.abs(stft_tensor(x, cfg))
    return mag.mean(dim=(-2, -1))


def mel_hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig, sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank, peak-normalized, (bands, fft_bins).

    Triangles are hats in the mel coordinate, so within the covered band
    [first center, last center] the bands sum to one at every FFT bin.
    """
    num_bins = cfg.stft.num_bins
    if cfg.num_bands > num_bins:
        raise ValueError(
            f"mel band count {cfg.num_bands} exceeds {num_bins} FFT bins"
        )
    fmax = sample_rate / 2.0 if cfg.fmax_hz is None else cfg.fmax_hz
    if not (0.0 <= cfg.fmin_hz < fmax <= sample_rate / 2.0 + 1e-9):
        raise ValueError(f"invalid mel band edges [{cfg.fmin_hz}, {fmax}] at rate {sample_rate}")
    mel_pts = np.linspace(mel_hz_to_mel(cfg.fmin_hz), mel_hz_to_mel(fmax), cfg.num_bands + 2)
    bin_mel = mel_hz_to_mel(np.arange(num_bins) * sample_rate / cfg.stft.fft_size)
    fb = np.zeros((cfg.num_bands, num_bins))
    for k in range(cfg.num_bands):
        lo, center, hi = mel_pts[k], mel_pts[k + 1], mel_pts[k + 2]
        rising = (bin_mel - lo) / max(center - lo, 1e-12)
        falling = (hi - bin_mel) / max(hi - center, 1e-12)
        fb[k] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def mel_power_tensor(x: torch.Tensor, fb: torch.Tensor, cfg: MelConfig) -> torch.Tensor:
    """Log-mel energies: (..., T) -> (..., bands, frames); differentiable."""
    spec = stft_tensor(x, cfg.stft)
    power = spec.real**2 + spec.imag**2
    mel = torch.matmul(fb.to(dtype=x.dtype, device=x.device), power)
    return torch.log(mel + cfg.log_floor)


def stft(wave: Waveform, cfg: StftConfig = DEFAULT_SPECTRAL_CFG) -> ComplexSpectrogram:
    """STFT of a waveform under the no-padding frame convention."""
    values = stft_tensor(torch.from_numpy(wave.samples), cfg).numpy()
    return ComplexSpectrogram(values=values, config=cfg)


def mel_spectrogram(wave: Waveform, mel_cfg: MelConfig) -> Spectrogram:
    """Log-compressed mel spectrogram, (bands, frames)."""
    fb = torch.from_numpy(mel_filterbank(mel_cfg, wave.sample_rate))
    values = mel_power_tensor(torch.from_numpy(wave.samples), fb, mel_cfg).numpy()
    return Spectrogram(values=values, config=mel_cfg)


def spectral_l1(wave: Waveform, cfg: StftConfig = DEFAULT_SPECTRAL_CFG) -> float:
    """Mean entry of the magnitude STFT (L1 normalized by bins x frames)."""
    return float(spectral_l1_tensor(torch.from_numpy(wave.samples), cfg).item())


def mix_at_snr(
    signal: Waveform,
    noise: Waveform,
    snr_db: float,
    rng: np.random.Generator | None = None,
) -> Waveform:
    """Add ``noise`` to ``signal`` scaled so the mixture sits at ``snr_db``.

    Noise shorter than the signal is tiled with a circular offset drawn from
    ``rng`` (offset 0 when no rng is given); longer noise is truncated.  If the
    mixture peak exceeds 1 the whole mixture is rescaled, which leaves the SNR
    unchanged.
    """
    if signal.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: signal {signal.sample_rate} vs noise {noise.sample_rate}"
        )
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    n = noise.samples
    target_len = signal.num_samples
    if n.shape[0] < target_len:
        reps = int(np.ceil(target_len / n.shape[0]))
        n = np.tile(n, reps)
    offset = int(rng.integers(n.shape[0])) if rng is not None else 0
    n = np.roll(n, offset)[:target_len]
    p_noise = float(np.mean(n**2))
    if p_noise <= 0.0:
        raise ValueError("undefined SNR: noise is silent")
    p_signal = float(np.mean(signal.samples**2))
    gain = math.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixture = signal.samples + gain * n
    peak = float(np.max(np.abs(mixture)))
    if peak > 1.0:
        mixture = mixture / peak
    return Waveform(samples=mixture, sample_rate=signal.sample_rate)


def read_wav(path: str | Path) -> Waveform:
    """Read a mono waveform; multichannel input is downmixed by channel mean.

    Supports 16-bit PCM and 32/64-bit float WAV.
    """
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples=samples, sample_rate=int(rate))


def write_wav(path: str | Path, wave: Waveform, encoding: str = "float32") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if encoding == "float32":
        wavfile.write(str(path), wave.sample_rate, wave.samples.astype(np.float32))
    elif encoding == "pcm16":
        clipped = np.clip(wave.samples, -1.0, 1.0)
        ints = np.clip(np.rint(clipped * 32768.0), -32768, 32767).astype(np.int16)
        wavfile.write(str(path), wave.sample_rate, ints)
    else:
        raise ValueError(f"unknown encoding {encoding!r}; expected 'float32' or 'pcm16'")
