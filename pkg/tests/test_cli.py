"""End-to-end command-line tests run in-process at miniature scale."""

import json

import pytest

from wavexplain import cli
from wavexplain.study import append_rating, RatingRecord

MICRO = [
    "dataset.num_classes=2",
    "dataset.per_class=4",
    "dataset.clip_seconds=0.25",
    "dataset.sample_rate=8000",
    "classifier.max_epochs=4",
    "classifier.augment=false",
    "interpreter.latent_channels=16",
    "interpreter.masknet_width=16",
    "interpreter.masknet_blocks=1",
    "interpreter.chunk=10",
    "interpreter.num_heads=2",
    "interpreter.unet_width=8",
    "optimizer.max_epochs=2",
    "optimizer.batch_size=4",
    "study.num_stimuli=2",
]


def run(command, out_dir, *extra):
    args = [command, "--set", f"output_dir={out_dir}"]
    for item in (*MICRO, *extra):
        args += ["--set", item]
    return cli.main(args)


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One full gen-data -> train-clf -> train-itp run shared by the
    read-only command tests."""
    out = tmp_path_factory.mktemp("run")
    assert run("gen-data", out) == 0
    assert run("train-clf", out) == 0
    assert run("train-itp", out) == 0
    return out


class TestGenData:
    def test_writes_corpus_and_digest(self, tmp_path, capsys):
        assert run("gen-data", tmp_path / "a") == 0
        assert (tmp_path / "a" / "corpus" / "manifest.csv").exists()
        digest = (tmp_path / "a" / "corpus" / "digest.txt").read_text().strip()
        assert len(digest) == 64
        assert digest[:16] in capsys.readouterr().out

    def test_deterministic_across_runs(self, tmp_path):
        run("gen-data", tmp_path / "a")
        run("gen-data", tmp_path / "b")
        da = (tmp_path / "a" / "corpus" / "digest.txt").read_text()
        db = (tmp_path / "b" / "corpus" / "digest.txt").read_text()
        assert da == db
        names = [p.name for p in sorted((tmp_path / "a" / "corpus").rglob("*.wav"))]
        assert names  # corpus actually materialized audio
        first = names[0]
        rel = next((tmp_path / "a" / "corpus").rglob(first))
        other = next((tmp_path / "b" / "corpus").rglob(first))
        assert rel.read_bytes() == other.read_bytes()

    def test_echoes_resolved_config(self, tmp_path):
        run("gen-data", tmp_path / "a")
        assert (tmp_path / "a" / "resolved_config.yaml").exists()


class TestTrainClf:
    def test_without_corpus_exits_3(self, tmp_path, capsys):
        assert run("train-clf", tmp_path / "empty") == 3
        err = capsys.readouterr().err
        assert "manifest.csv" in err

    def test_checkpoint_written(self, pipeline_dir):
        assert (pipeline_dir / "classifier.pt").exists()
        sidecar = json.loads((pipeline_dir / "classifier.json").read_text())
        assert sidecar["metrics"]["valid_acc"] >= 0.0
        assert len(sidecar["class_names"]) == 2


class TestTrainItp:
    def test_without_classifier_exits_3(self, tmp_path, capsys):
        out = tmp_path / "r"
        assert run("gen-data", out) == 0
        assert run("train-itp", out) == 3
        assert "classifier.pt" in capsys.readouterr().err

    def test_history_and_checkpoint(self, pipeline_dir):
        assert (pipeline_dir / "interpreter.pt").exists()
        lines = (pipeline_dir / "history.jsonl").read_text().splitlines()
        assert len(lines) == 2  # optimizer.max_epochs
        record = json.loads(lines[0])
        assert list(record) == ["epoch", "mask_in", "mask_out", "reg", "total", "valid_total"]


class TestEval:
    def test_before_interpreter_exits_3(self, tmp_path, capsys):
        out = tmp_path / "r"
        assert run("gen-data", out) == 0
        assert run("train-clf", out) == 0
        assert run("eval", out) == 3
        assert "interpreter.pt" in capsys.readouterr().err

    def test_writes_report(self, pipeline_dir, capsys):
        assert run("eval", pipeline_dir) == 0
        out = capsys.readouterr().out
        assert "Fid-In" in out
        report = json.loads((pipeline_dir / "eval" / "metrics.json").read_text())
        assert set(report["metrics"]) == {"AI", "AD", "AG", "FF", "Fid-In", "SPS", "COMP"}
        assert report["alpha"] == 0.75

    def test_identity_explainer_variant(self, pipeline_dir):
        assert run("eval", pipeline_dir, "eval.explainer=identity") == 0
        report = json.loads((pipeline_dir / "eval" / "metrics.json").read_text())
        assert report["metrics"]["Fid-In"] == 1.0

    def test_unknown_explainer_exits_2(self, pipeline_dir, capsys):
        assert run("eval", pipeline_dir, "eval.explainer=oracle") == 2
        assert "eval.explainer" in capsys.readouterr().err


class TestExplain:
    def test_exports_stimuli(self, pipeline_dir):
        assert run("explain", pipeline_dir) == 0
        manifest = json.loads(
            (pipeline_dir / "explanations" / "manifest.json").read_text()
        )
        assert manifest["num_stimuli"] == 2
        wavs = list((pipeline_dir / "explanations" / "audio").glob("*.wav"))
        assert len(wavs) == 3 * manifest["num_stimuli"]


class TestMos:
    def test_missing_log_exits_3(self, tmp_path, capsys):
        assert run("mos", tmp_path / "r") == 3
        assert "ratings" in capsys.readouterr().err

    def test_empty_log_exits_1(self, tmp_path, capsys):
        log = tmp_path / "ratings.jsonl"
        log.write_text("")
        assert cli.main(["mos", "--set", f"output_dir={tmp_path / 'r'}", "--ratings", str(log)]) == 1
        assert "no ratings" in capsys.readouterr().err

    def test_summarizes_ratings(self, tmp_path, capsys):
        log = tmp_path / "ratings.jsonl"
        for score in (60, 80):
            append_rating(
                log,
                RatingRecord(
                    rater_id="r", stimulus_id="s000", method_label="m",
                    score=score, timestamp=0.0,
                ),
            )
        out_dir = tmp_path / "r"
        assert cli.main(["mos", "--set", f"output_dir={out_dir}", "--ratings", str(log)]) == 0
        body = json.loads((out_dir / "mos.json").read_text())
        assert body["methods"]["m"]["mean"] == 70.0
        assert body["total_ratings"] == 2
        assert "70.0" in capsys.readouterr().out

    def test_bootstrap_flag(self, tmp_path):
        log = tmp_path / "ratings.jsonl"
        for score in (10, 50, 90):
            append_rating(
                log,
                RatingRecord(
                    rater_id="r", stimulus_id="s000", method_label="m",
                    score=score, timestamp=0.0,
                ),
            )
        out_dir = tmp_path / "r"
        code = cli.main(
            ["mos", "--set", f"output_dir={out_dir}", "--ratings", str(log), "--bootstrap"]
        )
        assert code == 0
        lo, hi = json.loads((out_dir / "mos.json").read_text())["methods"]["m"]["ci"]
        assert lo <= 50.0 <= hi


class TestBadConfig:
    def test_unknown_key_exits_2(self, tmp_path, capsys):
        assert cli.main(["gen-data", "--set", f"output_dir={tmp_path}", "--set", "nope=1"]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_malformed_override_exits_2(self, tmp_path, capsys):
        assert cli.main(["gen-data", "--set", "optimizer.lr"]) == 2
        assert "key=value" in capsys.readouterr().err

    def test_invalid_value_exits_2(self, tmp_path, capsys):
        out = tmp_path / "r"
        assert run("gen-data", out) == 0
        assert run("train-clf", out) == 0
        assert run("train-itp", out, "interpreter.alpha=1.5") == 2
        assert "alpha" in capsys.readouterr().err

    def test_unreadable_dataset_value_exits_1(self, tmp_path, capsys):
        # a config that parses but breaks at generation time
        assert run("gen-data", tmp_path / "r", "dataset.per_class=0") == 1
        assert capsys.readouterr().err.strip()
