"""Labeled audio corpora: a synthetic desk-scale corpus, WAV ingestion,
noise augmentation, and out-of-domain contamination.

Every generator is a pure function of (inputs, seed); corpora are immutable
after construction and safe to share across workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dsp import Waveform, mix_at_snr, read_wav, write_wav

SPLITS = ("train", "valid", "test")
CONTAMINATION_KINDS = ("none", "in-class-mixture", "white-noise", "speech-like")

# Synthetic class prototypes, cycled when more classes than kinds are asked
# for (classes then still differ by their frequency band).
PROTOTYPE_KINDS = ("tone-burst", "chirp", "am-noise", "tone-stack", "ping-train")

_MIN_BAND_WIDTH_HZ = 150.0


@dataclass(frozen=True)
class Contamination:
    kind: str
    snr_db: float
    contaminant_id: str

    def __post_init__(self):
        if self.kind not in CONTAMINATION_KINDS:
            raise ValueError(f"unknown contamination kind {self.kind!r}")
        if self.kind != "none" and not np.isfinite(self.snr_db):
            raise ValueError("contamination snr_db must be finite")


@dataclass(frozen=True)
class LabeledSample:
    wave: Waveform
    class_id: int
    split: str
    contamination: Contamination | None = None
    source_id: str = ""

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.class_id < 0:
            raise ValueError("class_id must be nonnegative")


@dataclass(frozen=True)
class Corpus:
    samples: tuple[LabeledSample, ...]
    class_names: tuple[str, ...]
    sample_rate: int
    provenance: dict
    declared_splits: tuple[str, ...] = SPLITS
    class_bands_hz: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not self.samples:
            raise ValueError("corpus is empty")
        for s in self.samples:
            if s.wave.sample_rate != self.sample_rate:
                raise ValueError(
                    f"inconsistent sample rate: corpus {self.sample_rate}, "
                    f"sample {s.source_id!r} {s.wave.sample_rate}"
                )
            if s.class_id >= len(self.class_names):
                raise ValueError(f"class_id {s.class_id} out of range")
        for split in self.declared_splits:
            present = {s.class_id for s in self.samples if s.split == split}
            if not present:
                raise ValueError(f"empty split {split!r}")
            missing = set(range(len(self.class_names))) - present
            if missing:
                raise ValueError(
                    f"split {split!r} is missing classes {sorted(missing)}"
                )

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split_samples(self, split: str) -> tuple[LabeledSample, ...]:
        return tuple(s for s in self.samples if s.split == split)

    def digest(self) -> str:
        """Content hash over sample audio, labels and metadata."""
        h = hashlib.sha256()
        h.update(str(self.sample_rate).encode())
        h.update(",".join(self.class_names).encode())
        for s in self.samples:
            h.update(s.wave.samples.astype(np.float32).tobytes())
            h.update(f"{s.class_id}:{s.split}:{s.source_id}".encode())
        return h.hexdigest()


def _class_bands(num_classes: int, sample_rate: int) -> list[tuple[float, float]]:
    lo, hi = 300.0, 0.45 * sample_rate
    width = (hi - lo) / num_classes
    if width < _MIN_BAND_WIDTH_HZ:
        raise ValueError(
            f"infeasible band layout: {num_classes} classes at {sample_rate} Hz "
            f"leaves {width:.1f} Hz per band (< {_MIN_BAND_WIDTH_HZ} Hz)"
        )
    return [(lo + k * width, lo + (k + 1) * width) for k in range(num_classes)]


def _burst_envelope(num: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Hann-shaped burst with randomized onset and duration."""
    duration = int(num * rng.uniform(0.5, 0.9))
    onset = int(rng.uniform(0.0, num - duration))
    env = np.zeros(num)
    t = np.arange(duration)
    env[onset : onset + duration] = 0.5 - 0.5 * np.cos(2.0 * np.pi * (t + 0.5) / duration)
    return env


def _bandpass_noise(num: int, band: tuple[float, float], sample_rate: int, rng) -> np.ndarray:
    noise = rng.standard_normal(num)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(num, 1.0 / sample_rate)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    return np.fft.irfft(spec, n=num)


def _render_prototype(
    kind: str, band: tuple[float, float], num: int, sample_rate: int, rng: np.random.Generator
) -> np.ndarray:
    lo, hi = band
    width = hi - lo
    center = 0.5 * (lo + hi)
    t = np.arange(num) / sample_rate
    env = _burst_envelope(num, sample_rate, rng)
    if kind == "tone-burst":
        carrier = np.sin(2.0 * np.pi * center * t + rng.uniform(0, 2 * np.pi))
        sig = env * carrier
    elif kind == "chirp":
        f0 = lo + 0.15 * width
        f1 = hi - 0.15 * width
        if rng.uniform() < 0.5:
            f0, f1 = f1, f0
        phase = 2.0 * np.pi * (f0 * t + 0.5 * (f1 - f0) / t[-1] * t**2)
        sig = env * np.sin(phase + rng.uniform(0, 2 * np.pi))
    elif kind == "am-noise":
        carrier = _bandpass_noise(num, (lo + 0.1 * width, hi - 0.1 * width), sample_rate, rng)
        am = 1.0 + 0.8 * np.sin(2.0 * np.pi * 8.0 * t + rng.uniform(0, 2 * np.pi))
        sig = env * am * carrier
    elif kind == "tone-stack":
        sig = np.zeros(num)
        for frac, amp in ((0.25, 1.0), (0.5, 0.6), (0.75, 0.4)):
            sig += amp * np.sin(2.0 * np.pi * (lo + frac * width) * t + rng.uniform(0, 2 * np.pi))
        sig *= env
    elif kind == "ping-train":
        rate = rng.uniform(6.0, 10.0)
        tau = 0.04
        sig = np.zeros(num)
        onset = rng.uniform(0.0, 1.0 / rate)
        ping_times = np.arange(onset, num / sample_rate, 1.0 / rate)
        for t0 in ping_times:
            idx = int(t0 * sample_rate)
            seg = np.arange(num - idx) / sample_rate
            sig[idx:] += np.exp(-seg / tau) * np.sin(2.0 * np.pi * center * seg)
    else:
        raise ValueError(f"unknown prototype kind {kind!r}")
    # Broadband floor at -26 dB keeps clips non-degenerate while leaving the
    # class band holding well over 60% of the energy.
    power = np.mean(sig**2)
    floor = rng.standard_normal(num) * np.sqrt(power * 10 ** (-26 / 10))
    sig = sig + floor
    peak = np.max(np.abs(sig))
    level = 0.5 * 10 ** (rng.uniform(-6.0, 0.0) / 20.0)
    return sig / peak * level


def _split_counts(per_class: int) -> tuple[int, int, int]:
    # 60/20/20 with floor, at least one sample per split; remainder to train.
    n_valid = max(1, int(np.floor(0.2 * per_class)))
    n_test = max(1, int(np.floor(0.2 * per_class)))
    return per_class - n_valid - n_test, n_valid, n_test


def generate_synthetic_corpus(
    num_classes: int,
    per_class: int,
    clip_seconds: float,
    sample_rate: int,
    seed: int,
) -> Corpus:
    """Deterministic corpus of band-confined spectro-temporal prototypes.

    Each class owns one frequency band; at least 60% of every sample's
    spectral energy lies inside its class band, which downstream tests use to
    check where an explanation's energy must live.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 4:
        raise ValueError("need at least 4 samples per class")
    num = int(round(clip_seconds * sample_rate))
    if num < 512:
        raise ValueError(f"clips of {num} samples are shorter than one analysis window")
    bands = _class_bands(num_classes, sample_rate)
    n_train, n_valid, n_test = _split_counts(per_class)
    samples = []
    for class_id in range(num_classes):
        kind = PROTOTYPE_KINDS[class_id % len(PROTOTYPE_KINDS)]
        for idx in range(per_class):
            rng = np.random.default_rng([seed, class_id, idx])
            sig = _render_prototype(kind, bands[class_id], num, sample_rate, rng)
            split = "train" if idx < n_train else ("valid" if idx < n_train + n_valid else "test")
            samples.append(
                LabeledSample(
                    wave=Waveform(samples=sig, sample_rate=sample_rate),
                    class_id=class_id,
                    split=split,
                    source_id=f"synth/{class_id:02d}_{kind}/{idx:03d}",
                )
            )
    class_names = tuple(
        f"{PROTOTYPE_KINDS[k % len(PROTOTYPE_KINDS)]}-band{k}" for k in range(num_classes)
    )
    provenance = {
        "generator": "synthetic-v1",
        "num_classes": num_classes,
        "per_class": per_class,
        "clip_seconds": clip_seconds,
        "sample_rate": sample_rate,
        "seed": seed,
    }
    return Corpus(
        samples=tuple(samples),
        class_names=class_names,
        sample_rate=sample_rate,
        provenance=provenance,
        class_bands_hz=tuple(bands),
    )


def load_wav_corpus(root_dir: str | Path, manifest: str | Path) -> Corpus:
    """Load a corpus from a CSV manifest: relative_path,class_name,split."""
    root = Path(root_dir)
    rows = []
    with open(manifest, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["relative_path", "class_name", "split"]
        if reader.fieldnames != expected:
            raise ValueError(
                f"manifest header must be {','.join(expected)}, got {reader.fieldnames}"
            )
        rows = list(reader)
    if not rows:
        raise ValueError("manifest has no rows")
    seen = set()
    for row in rows:
        if row["relative_path"] in seen:
            raise ValueError(f"duplicate entry {row['relative_path']!r} in manifest")
        seen.add(row["relative_path"])
    class_names = tuple(sorted({row["class_name"] for row in rows}))
    class_ids = {name: k for k, name in enumerate(class_names)}
    declared = tuple(s for s in SPLITS if any(r["split"] == s for r in rows))
    samples = []
    sample_rate = None
    for row in rows:
        path = root / row["relative_path"]
        if not path.exists():
            raise FileNotFoundError(f"manifest references missing file {path}")
        wave = read_wav(path)
        if sample_rate is None:
            sample_rate = wave.sample_rate
        elif wave.sample_rate != sample_rate:
            raise ValueError(
                f"inconsistent sample rate in {path}: {wave.sample_rate} != {sample_rate}"
            )
        samples.append(
            LabeledSample(
                wave=wave,
                class_id=class_ids[row["class_name"]],
                split=row["split"],
                source_id=row["relative_path"],
            )
        )
    provenance = {"loader": "wav-manifest", "root_dir": str(root), "manifest": str(manifest)}
    return Corpus(
        samples=tuple(samples),
        class_names=class_names,
        sample_rate=sample_rate,
        provenance=provenance,
        declared_splits=declared,
    )


def white_noise(num: int, sample_rate: int, rng: np.random.Generator) -> Waveform:
    sig = rng.standard_normal(num)
    return Waveform(samples=sig / np.max(np.abs(sig)), sample_rate=sample_rate)


def speech_like_noise(num: int, sample_rate: int, rng: np.random.Generator) -> Waveform:
    """Speech surrogate: noise shaped by four formant-like resonances with
    4 Hz amplitude modulation."""
    noise = rng.standard_normal(num)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(num, 1.0 / sample_rate)
    shape = np.zeros_like(freqs)
    for f_c, bw, amp in ((500.0, 120.0, 1.0), (1200.0, 160.0, 0.7), (2400.0, 220.0, 0.45), (3400.0, 280.0, 0.3)):
        shape += amp * np.exp(-0.5 * ((freqs - f_c) / bw) ** 2)
    sig = np.fft.irfft(spec * shape, n=num)
    t = np.arange(num) / sample_rate
    sig *= 1.0 + 0.9 * np.sin(2.0 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi))
    return Waveform(samples=sig / np.max(np.abs(sig)), sample_rate=sample_rate)


def augment_with_noise(
    sample: LabeledSample,
    noise_pool: list[Waveform],
    snr_range_db: tuple[float, float],
    rng: np.random.Generator,
    kind: str = "white-noise",
) -> LabeledSample:
    """Mix one pool entry into the sample at an SNR drawn from the range."""
    if not noise_pool:
        raise ValueError("noise pool is empty")
    lo, hi = snr_range_db
    if lo > hi:
        raise ValueError(f"invalid SNR range [{lo}, {hi}]")
    idx = int(rng.integers(len(noise_pool)))
    snr_db = float(rng.uniform(lo, hi))
    mixed = mix_at_snr(sample.wave, noise_pool[idx], snr_db, rng=rng)
    return replace(
        sample,
        wave=mixed,
        contamination=Contamination(kind=kind, snr_db=snr_db, contaminant_id=f"pool/{idx}"),
    )


def make_ood_corpus(base: Corpus, mode: str, snr_db: float, seed: int) -> Corpus:
    """Contaminate the test split to build an out-of-domain evaluation corpus.

    in-class-mixture mixes each test sample with one of a different class
    (label stays with the dominant, louder sample); white-noise and
    speech-like add the corresponding contaminant at ``snr_db``.
    """
    if mode not in ("in-class-mixture", "white-noise", "speech-like"):
        raise ValueError(f"unknown OOD mode {mode!r}")
    test = base.split_samples("test")
    if not test:
        raise ValueError("base corpus has an empty test split")
    if mode == "in-class-mixture" and base.num_classes < 2:
        raise ValueError("in-class mixtures need at least 2 classes")
    out = []
    for pos, sample in enumerate(test):
        rng = np.random.default_rng([seed, pos])
        if mode == "in-class-mixture":
            others = [s for s in test if s.class_id != sample.class_id]
            other = others[int(rng.integers(len(others)))]
            mixed = mix_at_snr(sample.wave, other.wave, snr_db, rng=rng)
            contaminant = other.source_id
        elif mode == "white-noise":
            noise = white_noise(sample.wave.num_samples, base.sample_rate, rng)
            mixed = mix_at_snr(sample.wave, noise, snr_db, rng=rng)
            contaminant = f"white/{pos}"
        else:
            noise = speech_like_noise(sample.wave.num_samples, base.sample_rate, rng)
            mixed = mix_at_snr(sample.wave, noise, snr_db, rng=rng)
            contaminant = f"speech-like/{pos}"
        out.append(
            replace(
                sample,
                wave=mixed,
                contamination=Contamination(kind=mode, snr_db=snr_db, contaminant_id=contaminant),
            )
        )
    provenance = dict(base.provenance)
    provenance["ood"] = {"mode": mode, "snr_db": snr_db, "seed": seed}
    return Corpus(
        samples=tuple(out),
        class_names=base.class_names,
        sample_rate=base.sample_rate,
        provenance=provenance,
        declared_splits=("test",),
        class_bands_hz=base.class_bands_hz,
    )


def export_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    """Write corpus WAVs plus manifest CSV and provenance JSON; returns the
    manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["relative_path", "class_name", "split"])
        for k, sample in enumerate(corpus.samples):
            rel = f"audio/{k:05d}.wav"
            write_wav(out / rel, sample.wave, encoding="float32")
            writer.writerow([rel, corpus.class_names[sample.class_id], sample.split])
    with open(out / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump({"provenance": corpus.provenance, "digest": corpus.digest()}, fh, indent=2)
    return manifest_path
