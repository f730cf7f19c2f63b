"""Listening-study backend: stimulus export, a small HTTP ratings service,
and mean-opinion-score aggregation with 0.95 confidence intervals.

Raters receive the stimulus list in an order shuffled per rater, play the
input / explanation / complement audio, and submit one 1-100 score per
stimulus; scores append to a JSON-lines log that the summary endpoint
aggregates per method label.

No postponed annotation evaluation here: the request model is defined
inside ``create_app``, and the route annotations must resolve to the real
class for body validation to engage.
"""

import hashlib
import json
import math
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .classifier import AudioClassifier
from .datasets import Corpus
from .dsp import Waveform, write_wav
from .interpreter import Interpreter, explain

AUDIO_ROLES = ("input", "explanation", "complement")


@dataclass(frozen=True)
class RatingRecord:
    rater_id: str
    stimulus_id: str
    method_label: str
    score: int
    timestamp: float

    def __post_init__(self):
        if not isinstance(self.score, int) or not (1 <= self.score <= 100):
            raise ValueError(f"score must be an integer in [1, 100], got {self.score!r}")
        if not self.rater_id or not self.stimulus_id:
            raise ValueError("rater_id and stimulus_id must be nonempty")


@dataclass(frozen=True)
class MethodSummary:
    method_label: str
    mean: float
    count: int
    ci: tuple[float, float] | None  # 0.95 interval; None when count < 2

    def __post_init__(self):
        if self.ci is not None and not (self.ci[0] <= self.mean <= self.ci[1]):
            raise ValueError("confidence interval must bracket the mean")


@dataclass(frozen=True)
class MosSummary:
    methods: dict[str, MethodSummary]
    total_ratings: int

    def as_dict(self) -> dict:
        return {
            "methods": {
                label: {
                    "mean": s.mean,
                    "count": s.count,
                    "ci": list(s.ci) if s.ci is not None else None,
                }
                for label, s in sorted(self.methods.items())
            },
            "total_ratings": self.total_ratings,
        }


def mos_summary(
    ratings: list[RatingRecord], method: str = "t", seed: int = 0, num_resamples: int = 2000
) -> MosSummary:
    """Per-method mean opinion score with a 0.95 CI: Student-t by default,
    percentile bootstrap behind ``method="bootstrap"`` for sensitivity checks."""
    if not ratings:
        raise ValueError("no ratings: summary undefined")
    if method not in ("t", "bootstrap"):
        raise ValueError(f"unknown CI method: {method!r}")
    by_label: dict[str, list[int]] = {}
    for r in ratings:
        by_label.setdefault(r.method_label, []).append(r.score)
    methods = {}
    for label, scores in by_label.items():
        arr = np.asarray(scores, dtype=np.float64)
        mean = float(arr.mean())
        n = arr.size
        ci = None
        if n >= 2:
            if method == "t":
                half = float(stats.t.ppf(0.975, n - 1) * arr.std(ddof=1) / math.sqrt(n))
                ci = (mean - half, mean + half)
            else:
                rng = np.random.default_rng([seed, n])
                resampled = rng.choice(arr, size=(num_resamples, n), replace=True).mean(axis=1)
                ci = (float(np.percentile(resampled, 2.5)), float(np.percentile(resampled, 97.5)))
                ci = (min(ci[0], mean), max(ci[1], mean))
        methods[label] = MethodSummary(method_label=label, mean=mean, count=n, ci=ci)
    return MosSummary(methods=methods, total_ratings=len(ratings))


def append_rating(path, record: RatingRecord) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(asdict(record)) + "\n")


def load_ratings(path) -> list[RatingRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(RatingRecord(**json.loads(line)))
    return records


def export_explanations(
    clf: AudioClassifier,
    itp: Interpreter,
    corpus: Corpus,
    out_dir,
    num_stimuli: int = 9,
    split: str = "test",
    method_label: str = "masked-synthesis",
) -> Path:
    """Render per-sample input / explanation / complement WAVs plus a JSON
    manifest.  Audio is peak-normalized to 0.9 full scale with the applied
    gain recorded per file."""
    out = Path(out_dir)
    audio_dir = out / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    samples = corpus.split_samples(split)
    if not samples:
        raise ValueError(f"empty split: {split!r}")
    chosen = samples[: min(num_stimuli, len(samples))]
    stimuli = []
    for idx, sample in enumerate(chosen):
        res = explain(clf, itp, sample.wave)
        stimulus_id = f"s{idx:03d}"
        files = {}
        gains = {}
        waves = {"input": res.input, "explanation": res.explanation, "complement": res.complement}
        for role in AUDIO_ROLES:
            wave = waves[role]
            peak = float(np.abs(wave.samples).max())
            gain = 0.9 / peak if peak > 0 else 1.0
            rel = f"audio/{stimulus_id}_{role}.wav"
            write_wav(out / rel, Waveform(wave.samples * gain, wave.sample_rate))
            files[role] = rel
            gains[role] = gain
        stimuli.append(
            {
                "stimulus_id": stimulus_id,
                "files": files,
                "gains": gains,
                "predicted_class": res.predicted_class,
                "class_name": corpus.class_names[res.predicted_class],
                "method_label": method_label,
            }
        )
    manifest = {
        "sample_rate": corpus.sample_rate,
        "num_stimuli": len(stimuli),
        "stimuli": stimuli,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def load_manifest(path) -> dict:
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if "stimuli" not in manifest or not isinstance(manifest["stimuli"], list):
        raise ValueError(f"invalid study manifest: {path}")
    for s in manifest["stimuli"]:
        for key in ("stimulus_id", "files", "method_label"):
            if key not in s:
                raise ValueError(f"invalid study manifest entry (missing {key!r}): {path}")
    return manifest


def _rater_order(rater_id: str, num: int) -> list[int]:
    digest = hashlib.sha256(rater_id.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    return [int(i) for i in rng.permutation(num)]


def create_app(manifest_path, ratings_path, static_dir=None):
    """FastAPI ratings service over an exported study manifest.

    Endpoints: GET /session, GET /audio/{stimulus_id}/{role}, POST /rating,
    GET /summary.  Ratings append to a JSON-lines log through a single lock;
    GET endpoints never mutate anything."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import FileResponse
    from pydantic import BaseModel, Field

    manifest_path = Path(manifest_path)
    base_dir = manifest_path.parent
    manifest = load_manifest(manifest_path)
    stimuli = manifest["stimuli"]
    by_id = {s["stimulus_id"]: s for s in stimuli}
    for s in stimuli:
        for role, rel in s["files"].items():
            if not (base_dir / rel).exists():
                raise FileNotFoundError(f"study audio missing: {base_dir / rel}")
    ratings_path = Path(ratings_path)
    ratings_path.parent.mkdir(parents=True, exist_ok=True)
    write_lock = threading.Lock()

    class RatingBody(BaseModel):
        rater_id: str = Field(min_length=1)
        stimulus_id: str
        method_label: str
        score: int = Field(ge=1, le=100)

    app = FastAPI(title="listening-study service")

    @app.get("/session")
    def session(rater_id: str | None = None):
        rid = rater_id or hashlib.sha256(str(time.time_ns()).encode()).hexdigest()[:12]
        order = _rater_order(rid, len(stimuli))
        queue = []
        for i in order:
            s = stimuli[i]
            queue.append(
                {
                    "stimulus_id": s["stimulus_id"],
                    "method_label": s["method_label"],
                    "audio": {
                        role: f"/audio/{s['stimulus_id']}/{role}" for role in s["files"]
                    },
                }
            )
        return {"rater_id": rid, "stimuli": queue}

    @app.get("/audio/{stimulus_id}/{role}")
    def audio(stimulus_id: str, role: str):
        s = by_id.get(stimulus_id)
        if s is None or role not in s["files"]:
            raise HTTPException(status_code=404, detail="unknown stimulus or role")
        return FileResponse(base_dir / s["files"][role], media_type="audio/wav")

    @app.post("/rating")
    def rating(body: RatingBody):
        if body.stimulus_id not in by_id:
            raise HTTPException(status_code=404, detail=f"unknown stimulus: {body.stimulus_id}")
        record = RatingRecord(
            rater_id=body.rater_id,
            stimulus_id=body.stimulus_id,
            method_label=body.method_label,
            score=body.score,
            timestamp=time.time(),
        )
        with write_lock:
            append_rating(ratings_path, record)
        return {"status": "accepted", "record": asdict(record)}

    @app.get("/summary")
    def summary():
        records = load_ratings(ratings_path)
        if not records:
            return {"methods": {}, "total_ratings": 0}
        return mos_summary(records).as_dict()

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=str(static_dir), html=True), name="app")

    return app
