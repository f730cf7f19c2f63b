"""Metric tests against hand-computed oracles, plus the evaluation suite's
degenerate-explainer sanity anchors."""

import json
import math

import numpy as np
import pytest
import torch

from wavexplain.classifier import (
    AudioClassifier,
    ClassifierConfig,
    TrainConfig,
    classify,
    freeze_classifier,
    train_classifier,
)
from wavexplain.datasets import generate_synthetic_corpus
from wavexplain.dsp import Spectrogram, Waveform
from wavexplain.interpreter import InterpreterConfig, build_interpreter
from wavexplain.metrics import (
    ConfidenceTriple,
    GradientSaliencyExplainer,
    IdentityExplainer,
    InterpreterExplainer,
    MetricsReport,
    SilenceExplainer,
    average_decrease,
    average_gain,
    average_increase,
    complexity,
    evaluate_suite,
    faithfulness,
    gradient_saliency,
    input_fidelity,
    save_report,
    sparseness,
)

SR = 8000


def triple(p_x, p_i, p_iout=0.5, pred_x=0, pred_i=0):
    return ConfidenceTriple(p_x=p_x, p_i=p_i, p_iout=p_iout, pred_x=pred_x, pred_i=pred_i)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(
        num_classes=2, per_class=6, clip_seconds=0.25, sample_rate=SR, seed=9
    )


@pytest.fixture(scope="module")
def clf(corpus):
    model, _ = train_classifier(corpus, TrainConfig(max_epochs=8, augment=False), seed=2)
    return freeze_classifier(model)


class TestConfidenceTriple:
    def test_valid(self):
        t = triple(0.5, 0.6)
        assert t.p_x == 0.5

    @pytest.mark.parametrize("field,value", [("p_x", -0.1), ("p_i", 1.2), ("p_iout", 2.0)])
    def test_rejects_out_of_unit(self, field, value):
        kwargs = dict(p_x=0.5, p_i=0.5, p_iout=0.5, pred_x=0, pred_i=0)
        kwargs[field] = value
        with pytest.raises(ValueError):
            ConfidenceTriple(**kwargs)


class TestConfidenceMetrics:
    def test_ai_hand_oracle(self):
        """Strict increase on 2 of 3 pairs: 100 * 2/3."""
        triples = [triple(0.5, 0.7), triple(0.9, 0.4), triple(0.2, 0.3)]
        assert average_increase(triples) == pytest.approx(200.0 / 3.0, abs=1e-9)

    def test_ai_tie_is_not_increase(self):
        assert average_increase([triple(0.5, 0.5)]) == 0.0

    def test_ad_hand_oracle(self):
        """Single pair (0.8 -> 0.4): relative drop 0.5, so 50."""
        assert average_decrease([triple(0.8, 0.4)]) == pytest.approx(50.0, abs=1e-9)

    def test_ad_clamps_gains_to_zero(self):
        triples = [triple(0.8, 0.4), triple(0.5, 0.9)]
        assert average_decrease(triples) == pytest.approx(25.0, abs=1e-9)

    def test_ad_undefined_at_zero_reference(self):
        with pytest.raises(ValueError, match="p_x = 0"):
            average_decrease([triple(0.0, 0.4)])

    def test_ag_hand_oracle(self):
        """(0.5 -> 0.75) gains 0.25/0.5 = 0.5; (0.8 -> 0.8) gains 0: mean 25."""
        triples = [triple(0.5, 0.75), triple(0.8, 0.8)]
        assert average_gain(triples) == pytest.approx(25.0, abs=1e-9)

    def test_ag_undefined_at_unit_reference(self):
        with pytest.raises(ValueError, match="p_x = 1"):
            average_gain([triple(1.0, 0.9)])

    def test_ff_signed_mean(self):
        triples = [triple(0.9, 0.9, p_iout=0.2), triple(0.6, 0.6, p_iout=0.7)]
        assert faithfulness(triples) == pytest.approx((0.7 - 0.1) / 2, abs=1e-12)

    def test_fid_in_counts_matches(self):
        triples = [
            triple(0.9, 0.9, pred_x=1, pred_i=1),
            triple(0.9, 0.9, pred_x=1, pred_i=0),
            triple(0.9, 0.9, pred_x=2, pred_i=2),
            triple(0.9, 0.9, pred_x=0, pred_i=2),
        ]
        assert input_fidelity(triples) == pytest.approx(0.5)

    @pytest.mark.parametrize(
        "fn", [average_increase, average_decrease, average_gain, faithfulness, input_fidelity]
    )
    def test_empty_rejected(self, fn):
        with pytest.raises(ValueError, match="empty"):
            fn([])


def spect(arr):
    return Spectrogram(values=np.asarray(arr, dtype=np.float64), config=None)


class TestSaliencyMetrics:
    def test_sps_one_hot_of_four(self):
        # hand enumeration: sorted a = (0,0,0,1), sum_k (2k-n-1) a_k = 3, n*sum = 4
        assert sparseness(spect([[0.0, 0.0], [0.0, 1.0]])) == pytest.approx(0.75, abs=1e-9)

    def test_sps_uniform_is_zero(self):
        assert sparseness(spect(np.full((3, 5), 2.2))) == pytest.approx(0.0, abs=1e-12)

    def test_sps_scale_invariant(self, rng):
        a = rng.random((6, 7))
        assert sparseness(spect(a)) == pytest.approx(sparseness(spect(123.0 * a)), abs=1e-12)

    def test_sps_bounds(self, rng):
        for _ in range(50):
            a = rng.random((4, 4))
            assert 0.0 <= sparseness(spect(a)) < 1.0

    def test_sps_permutation_invariant(self, rng):
        a = rng.random(12)
        b = rng.permutation(a)
        assert sparseness(spect(a.reshape(3, 4))) == pytest.approx(
            sparseness(spect(b.reshape(4, 3))), abs=1e-12
        )

    def test_comp_uniform_is_log_n(self):
        assert complexity(spect(np.full((4, 5), 0.3))) == pytest.approx(math.log(20), abs=1e-9)

    def test_comp_one_hot_is_zero(self):
        assert complexity(spect([[0.0, 7.0], [0.0, 0.0]])) == pytest.approx(0.0, abs=1e-12)

    def test_comp_hand_oracle(self):
        # a = (1, 3): q = (0.25, 0.75), H = -(0.25 ln 0.25 + 0.75 ln 0.75)
        want = -(0.25 * math.log(0.25) + 0.75 * math.log(0.75))
        assert complexity(spect([[1.0, 3.0]])) == pytest.approx(want, abs=1e-12)

    def test_comp_bounds(self, rng):
        for _ in range(50):
            a = rng.random(10)
            assert 0.0 <= complexity(spect(a.reshape(2, 5))) <= math.log(10) + 1e-12

    @pytest.mark.parametrize("fn", [sparseness, complexity])
    def test_all_zero_rejected(self, fn):
        with pytest.raises(ValueError, match="all-zero"):
            fn(spect(np.zeros((3, 3))))

    @pytest.mark.parametrize("fn", [sparseness, complexity])
    def test_negative_rejected(self, fn):
        with pytest.raises(ValueError, match="nonnegative"):
            fn(spect([[-1.0, 2.0]]))


class TestGradientSaliency:
    def test_zero_head_gives_zero_map(self):
        torch.manual_seed(0)
        fresh = AudioClassifier(ClassifierConfig(num_classes=3, sample_rate=SR))
        r = np.random.default_rng(0)
        sal = gradient_saliency(fresh, Waveform(0.1 * r.standard_normal(2000), SR))
        assert np.all(sal.values == 0.0)

    def test_nonnegative_and_mel_shaped(self, clf, corpus):
        w = corpus.samples[0].wave
        sal = gradient_saliency(clf, w)
        mel = clf.frontend(torch.from_numpy(w.samples).float().unsqueeze(0))
        assert sal.values.shape == tuple(mel.shape[-2:])
        assert np.all(sal.values >= 0.0)

    def test_matches_finite_differences(self, clf, corpus):
        """|grad| entries validated against central differences through
        the mel-to-logit head at float64."""
        clf64 = AudioClassifier(clf.config).double()
        clf64.load_state_dict({k: v.double() for k, v in clf.state_dict().items()})
        clf64.eval()
        w = corpus.samples[0].wave
        sal = gradient_saliency(clf64, w)
        x = torch.from_numpy(w.samples).double().unsqueeze(0)
        with torch.no_grad():
            mel = clf64.frontend(x)
            pred = int(clf64.logits_from_mel(mel)[0].argmax())
        r = np.random.default_rng(3)
        eps = 1e-6
        rows = r.choice(mel.shape[-2], size=8)
        cols = r.choice(mel.shape[-1], size=8)
        with torch.no_grad():
            for i, j in zip(rows, cols):
                bump = mel.clone()
                bump[0, 0, i, j] += eps
                lp = float(clf64.logits_from_mel(bump)[0, pred])
                bump[0, 0, i, j] -= 2 * eps
                lm = float(clf64.logits_from_mel(bump)[0, pred])
                fd = abs((lp - lm) / (2 * eps))
                assert fd == pytest.approx(sal.values[i, j], abs=1e-3)


class TestEvaluateSuite:
    def test_identity_explainer_anchors(self, clf, corpus):
        """Keeping everything: no drop, full fidelity, no strict increase;
        removal confidence is whatever the classifier assigns to silence."""
        report = evaluate_suite(clf, IdentityExplainer(), corpus, split="test")
        assert report.ad == 0.0
        assert report.ai == 0.0
        assert report.ag == 0.0
        assert report.fid_in == 1.0
        assert report.alpha is None
        samples = corpus.split_samples("test")
        silence = Waveform(np.zeros(samples[0].wave.num_samples), SR)
        p_sil = classify(clf, silence).probs
        want = np.mean(
            [
                classify(clf, s.wave).probs.max() - p_sil[classify(clf, s.wave).predicted_class]
                for s in samples
            ]
        )
        assert report.ff == pytest.approx(want, abs=1e-9)

    def test_silence_explainer_anchors(self, clf, corpus):
        """Silent explanation: complement carries the input, so removal
        costs nothing; saliency is empty everywhere."""
        report = evaluate_suite(clf, SilenceExplainer(), corpus, split="test")
        assert report.ff == pytest.approx(0.0, abs=1e-6)
        assert report.sps is None and report.comp is None
        assert report.provenance["saliency_skipped"] == report.num_samples

    def test_gradient_explainer_in_range(self, clf, corpus):
        report = evaluate_suite(clf, GradientSaliencyExplainer(), corpus, split="test")
        assert 0.0 <= report.fid_in <= 1.0
        assert report.sps is None or 0.0 <= report.sps < 1.0

    def test_interpreter_accepted_directly(self, clf, corpus):
        cfg = InterpreterConfig(
            latent_channels=16, kernel=16, masknet_width=16, masknet_blocks=1,
            chunk=10, num_heads=2, unet_width=8, alpha=0.25,
        )
        itp = build_interpreter(cfg, clf, seed=0)
        report = evaluate_suite(clf, itp, corpus, split="test")
        assert report.alpha == 0.25
        assert report.provenance["explainer"] == "masked-synthesis"
        assert report.num_samples == len(corpus.split_samples("test"))

    def test_deterministic(self, clf, corpus):
        a = evaluate_suite(clf, IdentityExplainer(), corpus, split="valid")
        b = evaluate_suite(clf, IdentityExplainer(), corpus, split="valid")
        assert a.as_dict() == b.as_dict()

    def test_empty_split_rejected(self, clf, corpus):
        with pytest.raises(ValueError, match="empty split"):
            evaluate_suite(clf, IdentityExplainer(), corpus, split="nope")


class TestMetricsReport:
    def _report(self, **over):
        base = dict(
            ai=10.0, ad=5.0, ag=2.0, ff=0.3, fid_in=0.9, sps=0.5, comp=1.2,
            num_samples=4, alpha=0.75, provenance={"explainer": "demo"},
        )
        base.update(over)
        return MetricsReport(**base)

    @pytest.mark.parametrize(
        "field,value",
        [("ai", -1.0), ("ad", 101.0), ("ag", -0.5), ("ff", 1.5), ("fid_in", 2.0), ("sps", 1.0), ("comp", -0.1)],
    )
    def test_range_validation(self, field, value):
        with pytest.raises(ValueError):
            self._report(**{field: value})

    def test_text_column_order(self):
        text = self._report().to_text()
        header, row = text.strip().splitlines()
        assert header.split() == ["method", "AI", "AD", "AG", "FF", "Fid-In", "SPS", "COMP"]
        assert row.split()[0] == "demo"

    def test_text_marks_missing_saliency(self):
        text = self._report(sps=None, comp=None).to_text()
        assert text.count("n/a") == 2

    def test_json_roundtrip(self):
        d = json.loads(self._report().to_json())
        assert d["metrics"]["Fid-In"] == 0.9
        assert d["alpha"] == 0.75

    def test_save_report(self, tmp_path):
        jp, tp = save_report(self._report(), tmp_path / "out")
        assert json.loads(jp.read_text())["metrics"]["AI"] == 10.0
        assert "Fid-In" in tp.read_text()


class TestExplainerClosure:
    """Explainer decompositions must satisfy x = i + i_out exactly."""

    @pytest.mark.parametrize(
        "explainer", [IdentityExplainer(), SilenceExplainer(), GradientSaliencyExplainer()]
    )
    def test_decomposition(self, clf, corpus, explainer):
        w = corpus.samples[0].wave
        res = explainer.explain(clf, w)
        assert np.allclose(
            res.explanation.samples + res.complement.samples, w.samples, atol=1e-12
        )

    def test_interpreter_wrapper_matches_direct(self, clf, corpus):
        from wavexplain.interpreter import explain as explain_fn

        cfg = InterpreterConfig(
            latent_channels=16, kernel=16, masknet_width=16, masknet_blocks=1,
            chunk=10, num_heads=2, unet_width=8,
        )
        itp = build_interpreter(cfg, clf, seed=1)
        w = corpus.samples[0].wave
        a = InterpreterExplainer(itp).explain(clf, w)
        b = explain_fn(clf, itp, w)
        assert np.array_equal(a.explanation.samples, b.explanation.samples)
