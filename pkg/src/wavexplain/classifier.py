"""The frozen model under explanation: a small CNN over log-mel spectrograms
with tapped intermediate feature maps, plus its training loop.

The network is a miniature audio-tagging stack: per-sample standardized
log-mel input, four conv blocks (conv -> batchnorm -> ReLU -> 2x2 pool) of
widths 16/32/64/128, and an average+max pooling head with a zero-initialized
affine map so a fresh model predicts exactly uniform probabilities.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import datasets
from .datasets import Corpus, LabeledSample, augment_with_noise, speech_like_noise, white_noise
from .dsp import MelConfig, StftConfig, Waveform, mel_filterbank, mel_power_tensor


@dataclass(frozen=True)
class ClassProbabilities:
    probs: np.ndarray
    logits: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        logits = np.asarray(self.logits, dtype=np.float64)
        if probs.shape != logits.shape or probs.ndim != 1:
            raise ValueError("probs and logits must be 1-D vectors of equal length")
        if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-6:
            raise ValueError("probs must lie on the simplex")
        shifted = np.exp(logits - logits.max())
        if np.abs(shifted / shifted.sum() - probs).max() > 1e-6:
            raise ValueError("probs must equal softmax(logits)")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "logits", logits)

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.probs))


class RepresentationSet:
    """Tapped feature maps, ordered shallow to deep, each (channels, F', T')."""

    def __init__(self, maps: list[torch.Tensor], num_samples: int):
        if len(maps) != 4:
            raise ValueError(f"expected 4 tapped maps, got {len(maps)}")
        self.maps = maps
        self.num_samples = num_samples

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(m.shape) for m in self.maps]


@dataclass(frozen=True)
class ClassifierConfig:
    num_classes: int
    sample_rate: int = 16000
    mel_bands: int = 64
    mel_window: int = 512
    mel_hop: int = 160
    mel_fft: int = 512
    fmin_hz: float = 0.0
    fmax_hz: float | None = None
    widths: tuple[int, int, int, int] = (16, 32, 64, 128)

    def mel_config(self) -> MelConfig:
        return MelConfig(
            stft=StftConfig(window_length=self.mel_window, hop=self.mel_hop, fft_size=self.mel_fft),
            num_bands=self.mel_bands,
            fmin_hz=self.fmin_hz,
            fmax_hz=self.fmax_hz,
        )


class MelFrontend(nn.Module):
    """Input transform: waveform batch (B, T) -> log-mel maps (B, 1, bands, frames)."""

    def __init__(self, cfg: MelConfig, sample_rate: int):
        super().__init__()
        self.cfg = cfg
        self.sample_rate = sample_rate
        fb = torch.from_numpy(mel_filterbank(cfg, sample_rate))
        self.register_buffer("filterbank", fb, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mel = mel_power_tensor(x, self.filterbank, self.cfg)
        return mel.unsqueeze(-3)


class ConvBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1)
        self.norm = nn.BatchNorm2d(out_ch)
        # ceil_mode keeps short inputs alive through all four pooling stages
        self.pool = nn.MaxPool2d(2, ceil_mode=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(torch.relu(self.norm(self.conv(x))))


class AudioClassifier(nn.Module):
    """f(.) = OutHead(Emb(InputTf(.))) with the last four block outputs tapped."""

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        self.frontend = MelFrontend(config.mel_config(), config.sample_rate)
        widths = config.widths
        self.blocks = nn.ModuleList(
            ConvBlock(i, o) for i, o in zip((1,) + tuple(widths[:-1]), widths)
        )
        self.head = nn.Linear(widths[-1], config.num_classes)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.frozen = False

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @staticmethod
    def _standardize(mel: torch.Tensor) -> torch.Tensor:
        # per-sample standardization of the log-mel map; removes global gain
        mean = mel.mean(dim=(-3, -2, -1), keepdim=True)
        std = mel.std(dim=(-3, -2, -1), keepdim=True, unbiased=False)
        return (mel - mean) / (std + 1e-5)

    def feature_maps(self, mel: torch.Tensor) -> list[torch.Tensor]:
        x = self._standardize(mel)
        maps = []
        for block in self.blocks:
            x = block(x)
            maps.append(x)
        return maps

    def logits_from_maps(self, deepest: torch.Tensor) -> torch.Tensor:
        pooled = deepest.mean(dim=(-2, -1)) + deepest.amax(dim=(-2, -1))
        return self.head(pooled)

    def logits_from_mel(self, mel: torch.Tensor) -> torch.Tensor:
        return self.logits_from_maps(self.feature_maps(mel)[-1])

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Waveform batch (B, T) -> logits (B, C); differentiable end to end."""
        return self.logits_from_mel(self.frontend(x))

    def tap_shapes(self, num_samples: int) -> list[tuple[int, int, int]]:
        """Expected (channels, F', T') of each tapped map for an input length."""
        f = self.config.mel_bands
        t = self.frontend.cfg.stft.num_frames(num_samples)
        shapes = []
        for width in self.config.widths:
            f = -(-f // 2)
            t = -(-t // 2)
            shapes.append((width, f, t))
        return shapes


def freeze_classifier(clf: AudioClassifier) -> AudioClassifier:
    """Make the classifier immutable for interpreter training."""
    clf.eval()
    for p in clf.parameters():
        p.requires_grad_(False)
    clf.frozen = True
    return clf


def _check_input(clf: AudioClassifier, wave: Waveform) -> torch.Tensor:
    if wave.sample_rate != clf.config.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: classifier expects {clf.config.sample_rate}, "
            f"got {wave.sample_rate}"
        )
    return torch.from_numpy(wave.samples).to(next(clf.parameters()).dtype)


def classify_tensor(clf: AudioClassifier, x: torch.Tensor) -> torch.Tensor:
    """Batch (B, T) -> probabilities (B, C) inside the autograd graph."""
    return torch.softmax(clf(x), dim=-1)


def classify(clf: AudioClassifier, wave: Waveform) -> ClassProbabilities:
    x = _check_input(clf, wave)
    training = clf.training
    clf.eval()
    with torch.no_grad():
        logits = clf(x.unsqueeze(0))[0]
    clf.train(training and not clf.frozen)
    logits = logits.double().numpy()
    probs = torch.softmax(torch.from_numpy(logits), dim=-1).numpy()
    return ClassProbabilities(probs=probs, logits=logits)


def embed(clf: AudioClassifier, wave: Waveform) -> RepresentationSet:
    """Tapped last-4 block outputs for one waveform (inference mode)."""
    x = _check_input(clf, wave)
    training = clf.training
    clf.eval()
    with torch.no_grad():
        maps = clf.feature_maps(clf.frontend(x.unsqueeze(0)))
    clf.train(training and not clf.frozen)
    return RepresentationSet([m[0] for m in maps], num_samples=wave.num_samples)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 30
    patience: int = 10
    augment: bool = True
    augment_snr_db: tuple[float, float] = (5.0, 20.0)
    augment_prob: float = 0.5


def _noise_pool(sample_rate: int, num_samples: int, seed: int) -> list[Waveform]:
    rng = np.random.default_rng([seed, 0xA0])
    pool = [white_noise(num_samples, sample_rate, rng) for _ in range(6)]
    pool += [speech_like_noise(num_samples, sample_rate, rng) for _ in range(6)]
    return pool


def _batch_tensor(samples: list[LabeledSample], dtype) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.stack([s.wave.samples for s in samples])).to(dtype)
    y = torch.tensor([s.class_id for s in samples], dtype=torch.long)
    return x, y


def train_classifier(
    corpus: Corpus, cfg: TrainConfig, seed: int, model_cfg: ClassifierConfig | None = None
) -> tuple[AudioClassifier, list[dict]]:
    """Cross-entropy training with noise augmentation; returns the
    best-validation checkpoint and a per-epoch history."""
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 0xC1])
    train = list(corpus.split_samples("train"))
    valid = list(corpus.split_samples("valid"))
    if not train or not valid:
        raise ValueError("corpus needs nonempty train and valid splits")
    if model_cfg is None:
        model_cfg = ClassifierConfig(num_classes=corpus.num_classes, sample_rate=corpus.sample_rate)
    if model_cfg.num_classes != corpus.num_classes or model_cfg.sample_rate != corpus.sample_rate:
        raise ValueError("classifier config does not match the corpus classes or sample rate")
    clf = AudioClassifier(model_cfg)
    pool = _noise_pool(corpus.sample_rate, train[0].wave.num_samples, seed)
    opt = torch.optim.Adam(clf.parameters(), lr=cfg.lr)
    loss_fn = nn.CrossEntropyLoss()
    dtype = next(clf.parameters()).dtype

    history: list[dict] = []
    best_state, best_acc, best_epoch = None, -1.0, -1
    for epoch in range(cfg.max_epochs):
        clf.train()
        order = rng.permutation(len(train))
        losses, hits, count = [], 0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start : start + cfg.batch_size]]
            if cfg.augment:
                batch = [
                    augment_with_noise(s, pool, cfg.augment_snr_db, rng)
                    if rng.uniform() < cfg.augment_prob
                    else s
                    for s in batch
                ]
            x, y = _batch_tensor(batch, dtype)
            logits = clf(x)
            loss = loss_fn(logits, y)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.item()))
            hits += int((logits.argmax(dim=-1) == y).sum().item())
            count += len(batch)
        valid_acc = _accuracy(clf, valid, dtype)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "train_acc": hits / count,
                "valid_acc": valid_acc,
            }
        )
        if valid_acc > best_acc:
            best_acc, best_epoch = valid_acc, epoch
            best_state = copy.deepcopy(clf.state_dict())
        elif epoch - best_epoch >= cfg.patience:
            break
    clf.load_state_dict(best_state)
    clf.eval()
    return clf, history


def _accuracy(clf: AudioClassifier, samples: list[LabeledSample], dtype, chunk: int = 32) -> float:
    training = clf.training
    clf.eval()
    hits = 0
    with torch.no_grad():
        for start in range(0, len(samples), chunk):
            x, y = _batch_tensor(samples[start : start + chunk], dtype)
            hits += int((clf(x).argmax(dim=-1) == y).sum().item())
    clf.train(training and not clf.frozen)
    return hits / len(samples)


def evaluate_accuracy(clf: AudioClassifier, corpus: Corpus, split: str) -> float:
    samples = list(corpus.split_samples(split))
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    return _accuracy(clf, samples, next(clf.parameters()).dtype)


def _config_dict(clf: AudioClassifier) -> dict:
    d = asdict(clf.config)
    d["widths"] = list(d["widths"])
    return d


def architecture_hash(clf: AudioClassifier) -> str:
    return hashlib.sha256(json.dumps(_config_dict(clf), sort_keys=True).encode()).hexdigest()


def serialize_classifier(clf: AudioClassifier) -> bytes:
    """Canonical bytes: config plus all parameters/buffers in sorted key order."""
    blob = [json.dumps(_config_dict(clf), sort_keys=True).encode()]
    state = clf.state_dict()
    for key in sorted(state):
        blob.append(key.encode())
        blob.append(state[key].detach().cpu().contiguous().numpy().tobytes())
    return b"".join(blob)


def classifier_hash(clf: AudioClassifier) -> str:
    return hashlib.sha256(serialize_classifier(clf)).hexdigest()


def save_classifier(clf: AudioClassifier, path, class_names=None, metrics=None) -> None:
    """Write the parameter blob and a JSON sidecar next to it."""
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(clf.state_dict(), path)
    sidecar = {
        "architecture_hash": architecture_hash(clf),
        "classifier_hash": classifier_hash(clf),
        "config": _config_dict(clf),
        "class_names": list(class_names) if class_names else None,
        "metrics": metrics or {},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")


def load_classifier(path) -> tuple[AudioClassifier, dict]:
    """Rebuild the classifier from checkpoint + sidecar; verifies the
    architecture hash."""
    from pathlib import Path

    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    cfg_dict = dict(sidecar["config"])
    cfg_dict["widths"] = tuple(cfg_dict["widths"])
    clf = AudioClassifier(ClassifierConfig(**cfg_dict))
    if architecture_hash(clf) != sidecar["architecture_hash"]:
        raise RuntimeError(f"architecture hash mismatch for checkpoint {path}")
    clf.load_state_dict(torch.load(path, weights_only=True))
    clf.eval()
    if classifier_hash(clf) != sidecar["classifier_hash"]:
        raise RuntimeError(f"parameter hash mismatch for checkpoint {path}")
    return clf, sidecar
