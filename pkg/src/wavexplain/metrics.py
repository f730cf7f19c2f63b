"""Faithfulness metric suite over explanation bundles: confidence-based
scores (AI, AD, AG, FF, Fid-In) plus saliency shape scores (SPS, COMP), a
gradient-saliency baseline explainer, and report serialization.

Each metric realization lives behind a single definition point so an
alternative convention is a one-line change; the exact formulas are also
recorded in the report provenance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
import torch

from .classifier import AudioClassifier, classify
from .datasets import Corpus
from .dsp import DEFAULT_SPECTRAL_CFG, Spectrogram, Waveform, stft
from .interpreter import ExplanationResult, Interpreter, explain

_FORMULAS = {
    "AI": "100 * count(p_i > p_x) / N",
    "AD": "100 * mean(max(0, p_x - p_i) / p_x), mask-in convention",
    "AG": "100 * mean(max(0, p_i - p_x) / (1 - p_x))",
    "FF": "mean(p_x - p_iout)",
    "Fid-In": "mean(1[pred_i == pred_x])",
    "SPS": "Gini index of flattened saliency, ascending-sorted",
    "COMP": "Shannon entropy (nats) of saliency fractional contributions",
    "confidence": "softmax probability of the input's predicted class",
}


@dataclass(frozen=True)
class ConfidenceTriple:
    """Classifier confidence in the input's predicted class, on the input,
    the explanation, and the complement."""

    p_x: float
    p_i: float
    p_iout: float
    pred_x: int
    pred_i: int

    def __post_init__(self):
        for name in ("p_x", "p_i", "p_iout"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def triple_from_result(res: ExplanationResult) -> ConfidenceTriple:
    c = res.predicted_class
    return ConfidenceTriple(
        p_x=float(res.probs_x.probs[c]),
        p_i=float(res.probs_i.probs[c]),
        p_iout=float(res.probs_iout.probs[c]),
        pred_x=c,
        pred_i=res.probs_i.predicted_class,
    )


def _require_nonempty(triples: Sequence[ConfidenceTriple]) -> None:
    if len(triples) == 0:
        raise ValueError("no triples: metric undefined on an empty set")


def average_increase(triples: Sequence[ConfidenceTriple]) -> float:
    """AI: percent of samples where confidence strictly increases on i."""
    _require_nonempty(triples)
    return 100.0 * sum(1 for t in triples if t.p_i > t.p_x) / len(triples)


def average_decrease(triples: Sequence[ConfidenceTriple]) -> float:
    """AD: mean relative confidence drop on the explanation, in percent."""
    _require_nonempty(triples)
    if any(t.p_x == 0.0 for t in triples):
        raise ValueError("undefined relative drop: p_x = 0")
    return 100.0 * sum(max(0.0, t.p_x - t.p_i) / t.p_x for t in triples) / len(triples)


def average_gain(triples: Sequence[ConfidenceTriple]) -> float:
    """AG: mean relative confidence gain on the explanation, in percent."""
    _require_nonempty(triples)
    if any(t.p_x == 1.0 for t in triples):
        raise ValueError("undefined relative gain: p_x = 1")
    return 100.0 * sum(max(0.0, t.p_i - t.p_x) / (1.0 - t.p_x) for t in triples) / len(triples)


def faithfulness(triples: Sequence[ConfidenceTriple]) -> float:
    """FF: mean confidence drop when the explanation is removed."""
    _require_nonempty(triples)
    return sum(t.p_x - t.p_iout for t in triples) / len(triples)


def input_fidelity(triples: Sequence[ConfidenceTriple]) -> float:
    """Fid-In: fraction of explanations preserving the predicted class."""
    _require_nonempty(triples)
    return sum(1 for t in triples if t.pred_i == t.pred_x) / len(triples)


def _flat_saliency(saliency: Spectrogram) -> np.ndarray:
    a = np.asarray(saliency.values, dtype=np.float64).ravel()
    if a.size == 0 or a.min() < 0:
        raise ValueError("saliency must be nonempty and nonnegative")
    if a.max() == 0.0:
        raise ValueError("undefined sparseness: all-zero saliency")
    return a


def sparseness(saliency: Spectrogram) -> float:
    """SPS: Gini index of the flattened saliency; 0 for uniform, up to
    1 - 1/n for one-hot."""
    a = np.sort(_flat_saliency(saliency))
    n = a.size
    k = np.arange(1, n + 1, dtype=np.float64)
    return float(((2.0 * k - n - 1.0) * a).sum() / (n * a.sum()))


def complexity(saliency: Spectrogram) -> float:
    """COMP: Shannon entropy (nats) of the fractional-contribution
    distribution a / sum(a); 0 for one-hot, ln n for uniform."""
    a = _flat_saliency(saliency)
    q = a / a.sum()
    nz = q[q > 0]
    return float(-(nz * np.log(nz)).sum())


def gradient_saliency(clf: AudioClassifier, wave: Waveform) -> Spectrogram:
    """|d logit_pred / d mel| with the log-mel input treated as the leaf;
    shaped like the classifier's mel spectrogram."""
    x = torch.from_numpy(wave.samples).to(next(clf.parameters()).dtype).unsqueeze(0)
    with torch.no_grad():
        mel = clf.frontend(x)
    with torch.enable_grad():
        mel_leaf = mel.detach().requires_grad_(True)
        logits = clf.logits_from_mel(mel_leaf)
        pred = int(logits[0].argmax())
        logits[0, pred].backward()
    grad = mel_leaf.grad[0, 0].abs().double().numpy()
    return Spectrogram(values=grad, config=None)


@runtime_checkable
class WaveformExplainer(Protocol):
    label: str

    def explain(self, clf: AudioClassifier, wave: Waveform) -> ExplanationResult: ...


def _result_from_pieces(
    clf: AudioClassifier, wave: Waveform, kept: np.ndarray, removed: np.ndarray
) -> ExplanationResult:
    explanation = Waveform(samples=kept, sample_rate=wave.sample_rate)
    complement = Waveform(samples=removed, sample_rate=wave.sample_rate)
    probs_x = classify(clf, wave)
    return ExplanationResult(
        input=wave,
        explanation=explanation,
        complement=complement,
        probs_x=probs_x,
        probs_i=classify(clf, explanation),
        probs_iout=classify(clf, complement),
        saliency=Spectrogram(
            values=np.abs(stft(explanation, DEFAULT_SPECTRAL_CFG).values),
            config=DEFAULT_SPECTRAL_CFG,
        ),
        predicted_class=probs_x.predicted_class,
    )


class IdentityExplainer:
    """Degenerate baseline: the explanation is the input, the complement is
    silence."""

    label = "identity"
    alpha = None

    def explain(self, clf: AudioClassifier, wave: Waveform) -> ExplanationResult:
        return _result_from_pieces(clf, wave, wave.samples.copy(), np.zeros_like(wave.samples))


class SilenceExplainer:
    """Degenerate baseline: the explanation is silence, the complement is the
    full input."""

    label = "silence"
    alpha = None

    def explain(self, clf: AudioClassifier, wave: Waveform) -> ExplanationResult:
        return _result_from_pieces(clf, wave, np.zeros_like(wave.samples), wave.samples.copy())


class GradientSaliencyExplainer:
    """Baseline: weight the input by its time-marginalized mel-gradient
    saliency; the complement is the exact residual x - i."""

    label = "gradient-saliency"
    alpha = None

    def explain(self, clf: AudioClassifier, wave: Waveform) -> ExplanationResult:
        sal = gradient_saliency(clf, wave).values
        per_frame = sal.sum(axis=0)
        peak = per_frame.max()
        mel_cfg = clf.config.mel_config().stft
        if peak > 0:
            per_frame = per_frame / peak
        centers = mel_cfg.window_length / 2.0 + mel_cfg.hop * np.arange(per_frame.size)
        weights = np.interp(np.arange(wave.num_samples, dtype=np.float64), centers, per_frame)
        kept = wave.samples * weights
        return _result_from_pieces(clf, wave, kept, wave.samples - kept)


class InterpreterExplainer:
    """The trained masking pipeline exposed through the common interface."""

    label = "masked-synthesis"

    def __init__(self, itp: Interpreter):
        self.itp = itp
        self.alpha = itp.cfg.alpha

    def explain(self, clf: AudioClassifier, wave: Waveform) -> ExplanationResult:
        return explain(clf, self.itp, wave)


@dataclass(frozen=True)
class MetricsReport:
    ai: float
    ad: float
    ag: float
    ff: float
    fid_in: float
    sps: float | None
    comp: float | None
    num_samples: int
    alpha: float | None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, v, lo, hi in (
            ("AI", self.ai, 0.0, 100.0),
            ("AD", self.ad, 0.0, 100.0),
            ("AG", self.ag, 0.0, 100.0),
            ("FF", self.ff, -1.0, 1.0),
            ("Fid-In", self.fid_in, 0.0, 1.0),
        ):
            if not (lo <= v <= hi):
                raise ValueError(f"{name} out of range [{lo}, {hi}]: {v}")
        if self.sps is not None and not (0.0 <= self.sps < 1.0):
            raise ValueError(f"SPS out of range [0, 1): {self.sps}")
        if self.comp is not None and self.comp < 0.0:
            raise ValueError(f"COMP must be nonnegative: {self.comp}")

    def as_dict(self) -> dict:
        return {
            "metrics": {
                "AI": self.ai,
                "AD": self.ad,
                "AG": self.ag,
                "FF": self.ff,
                "Fid-In": self.fid_in,
                "SPS": self.sps,
                "COMP": self.comp,
            },
            "num_samples": self.num_samples,
            "alpha": self.alpha,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def to_text(self) -> str:
        names = ["AI", "AD", "AG", "FF", "Fid-In", "SPS", "COMP"]
        values = self.as_dict()["metrics"]
        cells = ["  n/a " if values[n] is None else f"{values[n]:8.4f}" for n in names]
        label = str(self.provenance.get("explainer", "explainer"))
        header = f"{'method':<20}" + "".join(f"{n:>10}" for n in names)
        row = f"{label:<20}" + "".join(f"{c:>10}" for c in cells)
        return header + "\n" + row + "\n"


def evaluate_suite(
    clf: AudioClassifier,
    explainer: Interpreter | WaveformExplainer,
    corpus: Corpus,
    split: str = "test",
) -> MetricsReport:
    """Run the explainer over a corpus split and aggregate all metrics.

    Samples whose saliency is identically zero (a silent explanation) are
    excluded from SPS and COMP; if none remain those two are reported as
    null rather than raising."""
    if isinstance(explainer, Interpreter):
        explainer = InterpreterExplainer(explainer)
    samples = corpus.split_samples(split)
    if not samples:
        raise ValueError(f"empty split: {split!r}")
    triples: list[ConfidenceTriple] = []
    sps_vals: list[float] = []
    comp_vals: list[float] = []
    for sample in samples:
        res = explainer.explain(clf, sample.wave)
        triples.append(triple_from_result(res))
        if np.asarray(res.saliency.values).max() > 0:
            sps_vals.append(sparseness(res.saliency))
            comp_vals.append(complexity(res.saliency))
    return MetricsReport(
        ai=average_increase(triples),
        ad=average_decrease(triples),
        ag=average_gain(triples),
        ff=faithfulness(triples),
        fid_in=input_fidelity(triples),
        sps=float(np.mean(sps_vals)) if sps_vals else None,
        comp=float(np.mean(comp_vals)) if comp_vals else None,
        num_samples=len(samples),
        alpha=getattr(explainer, "alpha", None),
        provenance={
            "explainer": explainer.label,
            "split": split,
            "corpus": corpus.provenance,
            "formulas": _FORMULAS,
            "saliency_skipped": len(samples) - len(sps_vals),
        },
    )


def save_report(report: MetricsReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "metrics.json"
    text_path = out / "metrics.txt"
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    text_path.write_text(report.to_text(), encoding="utf-8")
    return json_path, text_path
