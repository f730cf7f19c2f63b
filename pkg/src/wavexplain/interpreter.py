"""The explanation generator: decode classifier feature maps into a learned
time-domain latent space, fuse them with the encoded input audio, estimate a
nonnegative mask, and synthesize the explanation and its complement.

The decoder is strictly linear (no bias, no activation), so the explanation
and complement sum exactly to the decoded unmasked latents: the complement is
exact by superposition, not approximation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .classifier import (
    AudioClassifier,
    ClassProbabilities,
    RepresentationSet,
    classifier_hash,
    classify,
)
from .dsp import DEFAULT_SPECTRAL_CFG, Spectrogram, Waveform, stft


@dataclass(frozen=True)
class LatentGrid:
    """K x T' matrix in the learned codec's latent space."""

    values: torch.Tensor
    kernel: int
    stride: int

    def __post_init__(self):
        if self.values.dim() != 2:
            raise ValueError(f"latent grid must be 2-D, got shape {tuple(self.values.shape)}")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.values.shape)


@dataclass(frozen=True)
class InterpreterConfig:
    alpha: float = 0.75
    latent_channels: int = 128  # K
    kernel: int = 16  # L; stride is L // 2
    masknet_width: int = 64
    masknet_blocks: int = 2
    chunk: int = 50
    num_heads: int = 4
    unet_width: int = 32

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kernel % 2 != 0:
            raise ValueError("encoder kernel must be even (stride is kernel/2)")

    @property
    def stride(self) -> int:
        return self.kernel // 2


class TdEncoder(nn.Module):
    """1-D conv analysis codec: (B, T) -> nonnegative latents (B, K, T')."""

    def __init__(self, cfg: InterpreterConfig):
        super().__init__()
        self.conv = nn.Conv1d(1, cfg.latent_channels, cfg.kernel, stride=cfg.stride, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.conv(x.unsqueeze(1)))


class TdDecoder(nn.Module):
    """Strictly linear transposed-conv synthesis codec: (B, K, T') -> (B, T_dec)."""

    def __init__(self, cfg: InterpreterConfig):
        super().__init__()
        self.conv = nn.ConvTranspose1d(cfg.latent_channels, 1, cfg.kernel, stride=cfg.stride, bias=False)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.conv(h).squeeze(1)


class DualPathBlock(nn.Module):
    """One round of within-chunk then across-chunk sequence mixing."""

    def __init__(self, width: int, num_heads: int):
        super().__init__()
        self.intra = nn.TransformerEncoderLayer(
            width, num_heads, dim_feedforward=2 * width, dropout=0.0,
            batch_first=True, norm_first=True,
        )
        self.inter = nn.TransformerEncoderLayer(
            width, num_heads, dim_feedforward=2 * width, dropout=0.0,
            batch_first=True, norm_first=True,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, D, S, chunk)
        b, d, s, c = x.shape
        v = x.permute(0, 2, 3, 1).reshape(b * s, c, d)
        v = self.intra(v)
        x = v.reshape(b, s, c, d)
        v = x.permute(0, 2, 1, 3).reshape(b * c, s, d)
        v = self.inter(v)
        return v.reshape(b, c, s, d).permute(0, 3, 2, 1)


class MaskEstimator(nn.Module):
    """Dual-path sequence model emitting a nonnegative mask over the latent grid."""

    def __init__(self, cfg: InterpreterConfig):
        super().__init__()
        self.chunk = cfg.chunk
        self.proj_in = nn.Conv1d(cfg.latent_channels, cfg.masknet_width, 1)
        self.norm = nn.GroupNorm(1, cfg.masknet_width)
        self.blocks = nn.ModuleList(
            DualPathBlock(cfg.masknet_width, cfg.num_heads) for _ in range(cfg.masknet_blocks)
        )
        self.act = nn.PReLU()
        self.proj_out = nn.Conv1d(cfg.masknet_width, cfg.latent_channels, 1)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        b, _, t = fused.shape
        h = self.norm(self.proj_in(fused))
        pad = (-t) % self.chunk
        h = F.pad(h, (0, pad))
        num_chunks = h.shape[-1] // self.chunk
        h = h.reshape(b, h.shape[1], num_chunks, self.chunk)
        for block in self.blocks:
            h = block(h)
        h = h.reshape(b, h.shape[1], num_chunks * self.chunk)[..., :t]
        # ReLU keeps the mask nonnegative but unbounded; (1 - M) may go
        # negative, which the synthesis keeps literal to preserve superposition
        return torch.relu(self.proj_out(self.act(h)))


class UNetDecoder(nn.Module):
    """Align the four tapped classifier maps with the codec latent grid.

    Per-map 1x1 channel projection, 2-D transposed convs merging the maps
    deep to shallow with skip additions, a learned weighted sum collapsing the
    frequency axis, then 1-D transposed convs with a final linear-time
    interpolation to the exact latent frame count.
    """

    def __init__(self, cfg: InterpreterConfig, tap_channels: tuple[int, ...], mel_bands: int):
        super().__init__()
        w = cfg.unet_width
        self.proj = nn.ModuleList(nn.Conv2d(c, w, 1) for c in tap_channels)
        self.up = nn.ModuleList(nn.ConvTranspose2d(w, w, 2, stride=2) for _ in range(3))
        freq_top = -(-mel_bands // 2)  # frequency size of the shallowest tap
        self.freq_weights = nn.Parameter(torch.full((freq_top,), 1.0 / freq_top))
        k = cfg.latent_channels
        self.temporal = nn.Sequential(
            nn.ConvTranspose1d(w, 64, 8, stride=4),
            nn.GroupNorm(1, 64),
            nn.ReLU(),
            nn.ConvTranspose1d(64, k, 8, stride=4),
            nn.GroupNorm(1, k),
            nn.ReLU(),
            nn.ConvTranspose1d(k, k, 6, stride=3),
            nn.GroupNorm(1, k),
            nn.ReLU(),
        )
        self.final = nn.Conv1d(k, k, 1)

    def forward(self, maps: list[torch.Tensor], latent_frames: int) -> torch.Tensor:
        projected = [p(m) for p, m in zip(self.proj, maps)]
        x = projected[-1]
        for up, skip in zip(self.up, reversed(projected[:-1])):
            x = up(x)
            if x.shape[-2:] != skip.shape[-2:]:
                x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = x + skip
        x = torch.einsum("bcft,f->bct", x, self.freq_weights)
        x = self.temporal(x)
        if x.shape[-1] < latent_frames:
            raise AssertionError(
                f"temporal expansion produced {x.shape[-1]} frames < target {latent_frames}"
            )
        x = F.interpolate(x, size=latent_frames, mode="linear", align_corners=False)
        return self.final(x)


class Interpreter(nn.Module):
    def __init__(self, cfg: InterpreterConfig, tap_channels: tuple[int, ...], mel_bands: int):
        super().__init__()
        self.cfg = cfg
        self.tap_channels = tuple(tap_channels)
        self.mel_bands = mel_bands
        self.td_encoder = TdEncoder(cfg)
        self.td_decoder = TdDecoder(cfg)
        self.mask_estimator = MaskEstimator(cfg)
        self.unet = UNetDecoder(cfg, self.tap_channels, mel_bands)

    @property
    def alpha(self) -> float:
        return self.cfg.alpha

    def latent_frames(self, num_samples: int) -> int:
        cfg = self.cfg
        if num_samples < cfg.kernel:
            raise ValueError(
                f"signal too short: {num_samples} samples < encoder kernel {cfg.kernel}"
            )
        return (num_samples - cfg.kernel) // cfg.stride + 1

    def fuse(self, h_d: torch.Tensor, h_e: torch.Tensor) -> torch.Tensor:
        """Convex combination of decoded and encoded latents; exact at the
        alpha = 0 and alpha = 1 endpoints."""
        if h_d.shape != h_e.shape:
            raise ValueError(f"latent shape mismatch: {tuple(h_d.shape)} vs {tuple(h_e.shape)}")
        alpha = self.cfg.alpha
        if alpha == 1.0:
            return h_d
        if alpha == 0.0:
            return h_e
        return alpha * h_d + (1.0 - alpha) * h_e

    def fit_length(self, x: torch.Tensor, num_samples: int) -> torch.Tensor:
        if x.shape[-1] >= num_samples:
            return x[..., :num_samples]
        return F.pad(x, (0, num_samples - x.shape[-1]))


def build_interpreter(cfg: InterpreterConfig, clf: AudioClassifier, seed: int | None = None) -> Interpreter:
    if seed is not None:
        torch.manual_seed(seed)
    return Interpreter(cfg, tap_channels=clf.config.widths, mel_bands=clf.config.mel_bands)


def _as_tensor(itp: Interpreter, wave: Waveform) -> torch.Tensor:
    return torch.from_numpy(wave.samples).to(next(itp.parameters()).dtype)


def td_encode(itp: Interpreter, wave: Waveform) -> LatentGrid:
    """Encode a waveform into the nonnegative latent grid H_e."""
    x = _as_tensor(itp, wave)
    itp.latent_frames(wave.num_samples)
    with torch.no_grad():
        values = itp.td_encoder(x.unsqueeze(0))[0]
    return LatentGrid(values=values, kernel=itp.cfg.kernel, stride=itp.cfg.stride)


def unet_decode(itp: Interpreter, h: RepresentationSet) -> LatentGrid:
    """Decode tapped classifier maps into the latent grid H_d, shaped exactly
    like the encoder output for the same input length."""
    frames = itp.latent_frames(h.num_samples)
    maps = [m.unsqueeze(0).to(next(itp.parameters()).dtype) for m in h.maps]
    with torch.no_grad():
        values = itp.unet(maps, frames)[0]
    assert values.shape == (itp.cfg.latent_channels, frames)
    return LatentGrid(values=values, kernel=itp.cfg.kernel, stride=itp.cfg.stride)


def estimate_mask(itp: Interpreter, h_d: LatentGrid, h_e: LatentGrid) -> LatentGrid:
    """Mask over the latent grid from the convex fusion of H_d and H_e."""
    if h_d.shape != h_e.shape:
        raise ValueError(f"latent shape mismatch: {h_d.shape} vs {h_e.shape}")
    with torch.no_grad():
        fused = itp.fuse(h_d.values, h_e.values)
        mask = itp.mask_estimator(fused.unsqueeze(0))[0]
    return LatentGrid(values=mask, kernel=h_e.kernel, stride=h_e.stride)


def synthesize(
    itp: Interpreter, mask: LatentGrid, h_e: LatentGrid, num_samples: int, sample_rate: int
) -> tuple[Waveform, Waveform]:
    """Decode masked and complement-masked latents into waveforms of the
    input length; their sum reconstructs the decoded latents exactly."""
    if mask.shape != h_e.shape:
        raise ValueError(f"latent shape mismatch: {mask.shape} vs {h_e.shape}")
    with torch.no_grad():
        kept = itp.td_decoder((mask.values * h_e.values).unsqueeze(0))[0]
        removed = itp.td_decoder(((1.0 - mask.values) * h_e.values).unsqueeze(0))[0]
        kept = itp.fit_length(kept, num_samples)
        removed = itp.fit_length(removed, num_samples)
    return (
        Waveform(samples=kept.double().numpy(), sample_rate=sample_rate),
        Waveform(samples=removed.double().numpy(), sample_rate=sample_rate),
    )


@dataclass(frozen=True)
class ExplanationResult:
    input: Waveform
    explanation: Waveform
    complement: Waveform
    probs_x: ClassProbabilities
    probs_i: ClassProbabilities
    probs_iout: ClassProbabilities
    saliency: Spectrogram
    predicted_class: int


def forward_batch(
    itp: Interpreter,
    clf: AudioClassifier,
    x: torch.Tensor,
    detach_taps: bool = True,
) -> dict:
    """Differentiable batched pipeline: (B, T) -> explanation pieces.

    ``detach_taps`` cuts the graph between classifier maps and the UNet input;
    interpreter-parameter gradients are unaffected because the maps only enter
    as UNet inputs.  Pass False to let gradients reach the classifier *inputs*
    through the tapped maps as well.
    """
    num_samples = x.shape[-1]
    frames = itp.latent_frames(num_samples)
    if detach_taps:
        with torch.no_grad():
            maps = clf.feature_maps(clf.frontend(x))
    else:
        maps = clf.feature_maps(clf.frontend(x))
    h_d = itp.unet(maps, frames)
    h_e = itp.td_encoder(x)
    fused = itp.fuse(h_d, h_e)
    mask = itp.mask_estimator(fused)
    kept = itp.fit_length(itp.td_decoder(mask * h_e), num_samples)
    removed = itp.fit_length(itp.td_decoder((1.0 - mask) * h_e), num_samples)
    return {"h_d": h_d, "h_e": h_e, "mask": mask, "i": kept, "i_out": removed}


def explain(clf: AudioClassifier, itp: Interpreter, wave: Waveform) -> ExplanationResult:
    """Full single-sample bundle: explanation, complement, classifier outputs
    on all three signals, and the magnitude-STFT saliency of the explanation."""
    if wave.sample_rate != clf.config.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: classifier expects {clf.config.sample_rate}, "
            f"got {wave.sample_rate}"
        )
    x = _as_tensor(itp, wave)
    itp.eval()
    with torch.no_grad():
        out = forward_batch(itp, clf, x.unsqueeze(0))
    explanation = Waveform(samples=out["i"][0].double().numpy(), sample_rate=wave.sample_rate)
    complement = Waveform(samples=out["i_out"][0].double().numpy(), sample_rate=wave.sample_rate)
    probs_x = classify(clf, wave)
    probs_i = classify(clf, explanation)
    probs_iout = classify(clf, complement)
    saliency = Spectrogram(
        values=np.abs(stft(explanation, DEFAULT_SPECTRAL_CFG).values),
        config=DEFAULT_SPECTRAL_CFG,
    )
    return ExplanationResult(
        input=wave,
        explanation=explanation,
        complement=complement,
        probs_x=probs_x,
        probs_i=probs_i,
        probs_iout=probs_iout,
        saliency=saliency,
        predicted_class=probs_x.predicted_class,
    )


def _interpreter_config_dict(itp: Interpreter) -> dict:
    d = asdict(itp.cfg)
    d["tap_channels"] = list(itp.tap_channels)
    d["mel_bands"] = itp.mel_bands
    return d


def save_interpreter(itp: Interpreter, path, clf: AudioClassifier, metrics=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(itp.state_dict(), path)
    sidecar = {
        "config": _interpreter_config_dict(itp),
        "classifier_hash": classifier_hash(clf),
        "metrics": metrics or {},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")


def load_interpreter(path, clf: AudioClassifier) -> Interpreter:
    """Rebuild a checkpointed interpreter; refuses to pair with any classifier
    other than the one it was trained against."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    if sidecar["classifier_hash"] != classifier_hash(clf):
        raise RuntimeError(
            f"interpreter checkpoint {path} was trained against a different classifier"
        )
    cfg_dict = dict(sidecar["config"])
    tap_channels = tuple(cfg_dict.pop("tap_channels"))
    mel_bands = cfg_dict.pop("mel_bands")
    itp = Interpreter(InterpreterConfig(**cfg_dict), tap_channels, mel_bands)
    itp.load_state_dict(torch.load(path, weights_only=True))
    itp.eval()
    return itp
