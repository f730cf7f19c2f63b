"""Corpus generation, ingestion, augmentation, and OOD contamination tests."""

import numpy as np
import pytest

from wavexplain.datasets import (
    CONTAMINATION_KINDS,
    PROTOTYPE_KINDS,
    SPLITS,
    Corpus,
    LabeledSample,
    augment_with_noise,
    export_corpus,
    generate_synthetic_corpus,
    load_wav_corpus,
    make_ood_corpus,
    speech_like_noise,
    white_noise,
)
from wavexplain.dsp import DEFAULT_SPECTRAL_CFG, Waveform, stft, write_wav


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(
        num_classes=5, per_class=20, clip_seconds=1.0, sample_rate=8000, seed=7
    )


class TestSyntheticCorpus:
    def test_deterministic_per_seed(self, corpus):
        again = generate_synthetic_corpus(
            num_classes=5, per_class=20, clip_seconds=1.0, sample_rate=8000, seed=7
        )
        assert corpus.digest() == again.digest()
        for a, b in zip(corpus.samples, again.samples):
            assert np.array_equal(a.wave.samples, b.wave.samples)

    def test_different_seed_differs(self, corpus):
        other = generate_synthetic_corpus(
            num_classes=5, per_class=20, clip_seconds=1.0, sample_rate=8000, seed=8
        )
        assert corpus.digest() != other.digest()

    def test_counts_and_split_arithmetic(self):
        c = generate_synthetic_corpus(
            num_classes=3, per_class=4, clip_seconds=0.25, sample_rate=16000, seed=0
        )
        assert len(c.samples) == 12
        for class_id in range(3):
            per_split = {
                split: sum(
                    1
                    for s in c.split_samples(split)
                    if s.class_id == class_id
                )
                for split in SPLITS
            }
            assert per_split == {"train": 2, "valid": 1, "test": 1}

    def test_stratified_60_20_20(self, corpus):
        for split, want in (("train", 12), ("valid", 4), ("test", 4)):
            for class_id in range(5):
                got = sum(1 for s in corpus.split_samples(split) if s.class_id == class_id)
                assert got == want

    def test_band_energy_confinement(self, corpus):
        # the property later metric tests rely on: >= 60% energy in-band
        sr = corpus.sample_rate
        for sample in corpus.samples:
            lo, hi = corpus.class_bands_hz[sample.class_id]
            vals = np.abs(stft(sample.wave, DEFAULT_SPECTRAL_CFG).values) ** 2
            freqs = np.arange(vals.shape[0]) * sr / DEFAULT_SPECTRAL_CFG.fft_size
            frac = vals[(freqs >= lo) & (freqs <= hi)].sum() / vals.sum()
            assert frac >= 0.6

    def test_class_names_follow_prototypes(self, corpus):
        assert len(corpus.class_names) == 5
        for k, name in enumerate(corpus.class_names):
            assert name.endswith(f"band{k}")
            assert name.rsplit("-", 1)[0] in PROTOTYPE_KINDS

    def test_too_many_classes_rejected(self):
        with pytest.raises(ValueError, match="infeasible band layout"):
            generate_synthetic_corpus(
                num_classes=40, per_class=4, clip_seconds=0.5, sample_rate=2000, seed=0
            )

    def test_amplitude_in_range(self, corpus):
        for sample in corpus.samples:
            peak = np.abs(sample.wave.samples).max()
            assert 0.0 < peak <= 0.5 + 1e-9


class TestCorpusInvariants:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Corpus(samples=[], class_names=("a",), sample_rate=8000, provenance={})

    def test_rejects_missing_class_in_split(self, rng):
        def sample(class_id, split):
            return LabeledSample(
                wave=Waveform(rng.standard_normal(100) * 0.1, 8000),
                class_id=class_id,
                split=split,
            )

        samples = [sample(0, s) for s in SPLITS] + [sample(1, "train"), sample(1, "valid")]
        with pytest.raises(ValueError, match="missing classes|empty split"):
            Corpus(samples=samples, class_names=("a", "b"), sample_rate=8000, provenance={})

    def test_rejects_mixed_rates(self, rng):
        samples = [
            LabeledSample(Waveform(rng.standard_normal(100) * 0.1, sr), 0, split)
            for sr, split in ((8000, "train"), (16000, "valid"), (8000, "test"))
        ]
        with pytest.raises(ValueError):
            Corpus(samples=samples, class_names=("a",), sample_rate=8000, provenance={})

    def test_digest_tracks_labels(self, corpus):
        moved = Corpus(
            samples=[
                LabeledSample(
                    wave=s.wave,
                    class_id=(s.class_id + 1) % 5,
                    split=s.split,
                    contamination=s.contamination,
                    source_id=s.source_id,
                )
                for s in corpus.samples
            ],
            class_names=corpus.class_names,
            sample_rate=corpus.sample_rate,
            provenance=corpus.provenance,
        )
        assert moved.digest() != corpus.digest()


class TestWavIngestion:
    def _export(self, corpus, tmp_path):
        out = tmp_path / "corpus"
        manifest = export_corpus(corpus, out)
        return out, manifest

    def test_roundtrip_preserves_structure(self, corpus, tmp_path):
        out, manifest = self._export(corpus, tmp_path)
        loaded = load_wav_corpus(out, manifest)
        # ingestion reassigns class ids by sorted name; names must survive
        assert sorted(loaded.class_names) == sorted(corpus.class_names)
        assert loaded.sample_rate == corpus.sample_rate
        assert len(loaded.samples) == len(corpus.samples)
        for a, b in zip(loaded.samples, corpus.samples):
            assert loaded.class_names[a.class_id] == corpus.class_names[b.class_id]
            assert a.split == b.split
            # float32 export quantizes the float64 source
            assert np.abs(a.wave.samples - b.wave.samples).max() < 1e-6

    def test_export_twice_identical(self, corpus, tmp_path):
        out1, m1 = self._export(corpus, tmp_path / "a")
        out2, m2 = self._export(corpus, tmp_path / "b")
        assert m1.read_text() == m2.read_text()
        one = sorted(p.name for p in (out1 / "audio").iterdir())
        for name in one:
            assert (out1 / "audio" / name).read_bytes() == (out2 / "audio" / name).read_bytes()

    def test_small_manifest(self, tmp_path, rng):
        root = tmp_path
        rows = ["relative_path,class_name,split"]
        for i, (cls, split) in enumerate(
            (("dog", "train"), ("cat", "train"), ("dog", "train"))
        ):
            rel = f"{i}.wav"
            write_wav(root / rel, Waveform(0.1 * rng.standard_normal(400), 8000))
            rows.append(f"{rel},{cls},{split}")
        manifest = root / "m.csv"
        manifest.write_text("\n".join(rows) + "\n")
        c = load_wav_corpus(root, manifest)
        assert len(c.samples) == 3
        assert c.class_names == ("cat", "dog")
        assert {s.class_id for s in c.samples} == {0, 1}

    def test_missing_file_named(self, tmp_path):
        manifest = tmp_path / "m.csv"
        manifest.write_text("relative_path,class_name,split\nnope.wav,dog,train\n")
        with pytest.raises(FileNotFoundError, match="nope.wav"):
            load_wav_corpus(tmp_path, manifest)

    def test_duplicate_entry_rejected(self, tmp_path, rng):
        write_wav(tmp_path / "x.wav", Waveform(0.1 * rng.standard_normal(300), 8000))
        manifest = tmp_path / "m.csv"
        manifest.write_text(
            "relative_path,class_name,split\nx.wav,dog,train\nx.wav,dog,valid\n"
        )
        with pytest.raises(ValueError, match="duplicate entry"):
            load_wav_corpus(tmp_path, manifest)

    def test_bad_header_rejected(self, tmp_path):
        manifest = tmp_path / "m.csv"
        manifest.write_text("path,label,fold\nx.wav,dog,train\n")
        with pytest.raises(ValueError):
            load_wav_corpus(tmp_path, manifest)

    def test_mixed_rate_rejected(self, tmp_path, rng):
        write_wav(tmp_path / "a.wav", Waveform(0.1 * rng.standard_normal(300), 8000))
        write_wav(tmp_path / "b.wav", Waveform(0.1 * rng.standard_normal(300), 16000))
        manifest = tmp_path / "m.csv"
        manifest.write_text(
            "relative_path,class_name,split\na.wav,dog,train\nb.wav,dog,train\n"
        )
        with pytest.raises(ValueError):
            load_wav_corpus(tmp_path, manifest)


class TestNoiseAndAugmentation:
    def test_noise_generators(self):
        rng = np.random.default_rng(0)
        w = white_noise(4000, 8000, rng)
        s = speech_like_noise(4000, 8000, rng)
        assert w.num_samples == s.num_samples == 4000
        assert w.power() > 0 and s.power() > 0
        # the speech surrogate carries its slow amplitude modulation
        env = np.abs(s.samples)
        first, second = env[:2000].mean(), env[1000:3000].mean()
        assert s.power() != pytest.approx(w.power())

    def test_augment_hits_target_snr(self, corpus):
        sample = corpus.samples[0]
        pool = [white_noise(sample.wave.num_samples, 8000, np.random.default_rng(1))]
        out = augment_with_noise(sample, pool, (3.0, 3.0), np.random.default_rng(2))
        delta = out.wave.samples - sample.wave.samples
        realized = 10.0 * np.log10(sample.wave.power() / np.mean(delta**2))
        assert abs(realized - 3.0) < 1e-6
        assert out.class_id == sample.class_id
        assert out.contamination is not None
        assert out.contamination.kind == "white-noise"
        assert out.contamination.snr_db == pytest.approx(3.0)

    def test_augment_high_snr_is_identity_like(self, corpus):
        sample = corpus.samples[3]
        pool = [white_noise(sample.wave.num_samples, 8000, np.random.default_rng(1))]
        out = augment_with_noise(sample, pool, (120.0, 120.0), np.random.default_rng(2))
        assert np.abs(out.wave.samples - sample.wave.samples).max() < 1e-5

    def test_augment_deterministic_under_seed(self, corpus):
        sample = corpus.samples[5]
        pool = [
            white_noise(sample.wave.num_samples, 8000, np.random.default_rng(k))
            for k in range(4)
        ]
        a = augment_with_noise(sample, pool, (0.0, 10.0), np.random.default_rng(9))
        b = augment_with_noise(sample, pool, (0.0, 10.0), np.random.default_rng(9))
        assert np.array_equal(a.wave.samples, b.wave.samples)


class TestOodCorpus:
    def test_in_class_mixture(self, corpus):
        ood = make_ood_corpus(corpus, "in-class-mixture", 5.0, seed=11)
        assert ood.declared_splits == ("test",)
        assert len(ood.samples) == len(corpus.split_samples("test"))
        base_by_id = {s.source_id: s for s in corpus.split_samples("test")}
        for s in ood.samples:
            assert s.contamination is not None
            assert s.contamination.kind == "in-class-mixture"
            assert s.contamination.snr_db == pytest.approx(5.0)
            # the contaminant comes from a different class
            assert s.contamination.contaminant_id != ""
            base = base_by_id[s.source_id]
            assert s.class_id == base.class_id

    def test_in_class_mixture_snr(self, corpus):
        ood = make_ood_corpus(corpus, "in-class-mixture", 5.0, seed=11)
        base_by_id = {s.source_id: s for s in corpus.split_samples("test")}
        checked = 0
        for s in ood.samples:
            base = base_by_id[s.source_id]
            delta = s.wave.samples - base.wave.samples
            if np.abs(s.wave.samples).max() < 1.0 - 1e-9:  # no peak renorm applied
                realized = 10.0 * np.log10(base.wave.power() / np.mean(delta**2))
                assert abs(realized - 5.0) < 1e-6
                checked += 1
        assert checked > 0

    @pytest.mark.parametrize("mode", ["white-noise", "speech-like"])
    def test_noise_modes_hit_3db(self, corpus, mode):
        ood = make_ood_corpus(corpus, mode, 3.0, seed=11)
        base_by_id = {s.source_id: s for s in corpus.split_samples("test")}
        for s in ood.samples:
            assert s.contamination.kind == mode
            base = base_by_id[s.source_id]
            delta = s.wave.samples - base.wave.samples
            if np.abs(s.wave.samples).max() < 1.0 - 1e-9:
                realized = 10.0 * np.log10(base.wave.power() / np.mean(delta**2))
                assert abs(realized - 3.0) < 1e-6

    def test_deterministic(self, corpus):
        a = make_ood_corpus(corpus, "white-noise", 3.0, seed=4)
        b = make_ood_corpus(corpus, "white-noise", 3.0, seed=4)
        assert a.digest() == b.digest()

    def test_unknown_mode_rejected(self, corpus):
        with pytest.raises(ValueError):
            make_ood_corpus(corpus, "pink-noise", 3.0, seed=0)
