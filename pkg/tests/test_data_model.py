import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medn.data_model import (
    SynthConfig,
    TASK_SCHEMES,
    directory_digest,
    generate_synthetic,
    hard_sample_audit,
    load_manifest,
    loso_splits,
    map_emotion,
    read_tensor,
    validate_flow,
    write_tensor,
)
from medn.errors import (
    DegenerateDataset,
    InfeasibleConfig,
    NonFiniteValues,
    ShapeMismatch,
    UnknownLabel,
)


class TestMapEmotion:
    def test_negative_group(self):
        for name in ("Repression", "Anger", "Contempt", "Disgust", "Fear", "Sadness"):
            assert map_emotion(name, "3-class") == 0

    def test_positive_and_surprise(self):
        assert map_emotion("Happiness", "3-class") == 1
        assert map_emotion("Surprise", "3-class") == 2

    def test_unknown_label_rejected(self):
        with pytest.raises(UnknownLabel):
            map_emotion("Joyful", "3-class")

    def test_others_excluded_from_3_class(self):
        with pytest.raises(UnknownLabel):
            map_emotion("others", "3-class")
        assert map_emotion("others", "4-class") == 3

    def test_7_class_order(self):
        order = ["happiness", "disgust", "surprise", "fear", "anger", "sadness", "others"]
        assert [map_emotion(name, "7-class") for name in order] == list(range(7))

    def test_case_insensitive(self):
        assert map_emotion("HAPPINESS", "3-class") == map_emotion("happiness", "3-class")

    @given(st.sampled_from(sorted(TASK_SCHEMES["3-class"]["mapping"])), st.sampled_from(sorted(TASK_SCHEMES)))
    def test_total_on_vocabulary(self, name, scheme):
        # every 3-class raw name except nothing... names outside a scheme raise
        mapping = TASK_SCHEMES[scheme]["mapping"]
        if name in mapping:
            assert map_emotion(name, scheme) == mapping[name]
        else:
            with pytest.raises(UnknownLabel):
                map_emotion(name, scheme)


class TestTensorFile:
    def test_round_trip(self, tmp_path):
        arr = np.random.default_rng(0).normal(size=(7, 2, 6, 6)).astype(np.float32)
        path = tmp_path / "x.bin"
        write_tensor(path, arr)
        back = read_tensor(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr)

    def test_header_layout(self, tmp_path):
        arr = np.zeros((1, 2, 3, 4), dtype=np.float32)
        path = tmp_path / "x.bin"
        write_tensor(path, arr)
        raw = path.read_bytes()
        assert raw[:4] == b"MEDN"
        assert raw[4] == 0  # f32 code
        assert np.frombuffer(raw[8:24], dtype="<u4").tolist() == [1, 2, 3, 4]
        assert len(raw) == 32 + arr.size * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\0" * 60)
        with pytest.raises(ShapeMismatch):
            read_tensor(path)


class TestValidateFlow:
    def test_ok(self):
        validate_flow(np.zeros((7, 2, 144, 144), dtype=np.float32), {"t": 8, "c": 2, "h": 144, "w": 144})

    def test_off_by_one_t(self):
        with pytest.raises(ShapeMismatch):
            validate_flow(np.zeros((8, 2, 144, 144), dtype=np.float32), {"t": 8, "c": 2, "h": 144, "w": 144})

    def test_nan_rejected(self):
        flow = np.zeros((7, 2, 8, 8), dtype=np.float32)
        flow[3, 1, 2, 2] = np.nan
        with pytest.raises(NonFiniteValues):
            validate_flow(flow, {"t": 8, "c": 2, "h": 8, "w": 8})


class TestLosoSplits:
    def test_one_fold_per_subject(self, tiny_dataset):
        folds = loso_splits(tiny_dataset)
        subjects = tiny_dataset.subjects()
        assert len(folds) == len(subjects) == 3
        fold0_subjects = {tiny_dataset.record_by_id(sid).subject_id for sid in folds[0][1]}
        assert fold0_subjects == {subjects[0]}

    def test_partition_exact(self, tiny_dataset):
        folds = loso_splits(tiny_dataset)
        all_ids = {r.sample_id for r in tiny_dataset.records}
        seen = []
        for train, test in folds:
            assert set(train) & set(test) == set()
            assert set(train) | set(test) == all_ids
            seen.extend(test)
        assert sorted(seen) == sorted(all_ids)  # each sample tested exactly once

    def test_single_subject_rejected(self, tmp_path):
        cfg = SynthConfig(subjects=1, samples_per_subject=6, height=8, width=8, hard_proportion=0.5, shared_patterns=1)
        manifest = generate_synthetic(cfg, seed=1, out_dir=tmp_path)
        with pytest.raises(DegenerateDataset):
            loso_splits(manifest)


class TestHardSampleAudit:
    def test_mutual_confusion(self, tiny_dataset):
        # symmetry: hard-ness comes from AU groups spanning >=2 classes, so if
        # x is hard because of y then y is hard because of x
        from medn.data_model import hard_sample_ids

        hard = hard_sample_ids(tiny_dataset)
        by_bits = {}
        for rec in tiny_dataset.records:
            by_bits.setdefault(rec.au_bits, []).append(rec)
        for rec in tiny_dataset.records:
            group_classes = {r.class_id(tiny_dataset.task_scheme) for r in by_bits[rec.au_bits]}
            assert (rec.sample_id in hard) == (len(group_classes) >= 2)

    def test_two_sample_manifest(self, tmp_path):
        from medn.data_model import DatasetManifest, SampleRecord

        flow = np.zeros((7, 2, 4, 4), dtype=np.float32)
        records = []
        for sid, emotion in (("a", "Happiness"), ("b", "Surprise")):
            write_tensor(tmp_path / f"{sid}.bin", flow)
            records.append(SampleRecord(sid, f"subj_{sid}", f"{sid}.bin", emotion, "10"))
        manifest = DatasetManifest("3-class", {"t": 8, "c": 2, "h": 4, "w": 4}, ["AU1", "AU2"], records, tmp_path)
        assert hard_sample_audit(manifest) == (2, 2, 1.0)

    def test_unique_patterns_not_hard(self, tmp_path):
        from medn.data_model import DatasetManifest, SampleRecord

        records = [
            SampleRecord("a", "s1", "a.bin", "Happiness", "10"),
            SampleRecord("b", "s2", "b.bin", "Surprise", "01"),
        ]
        manifest = DatasetManifest("3-class", {"t": 8, "c": 2, "h": 4, "w": 4}, ["AU1", "AU2"], records, tmp_path)
        total, hard, prop = hard_sample_audit(manifest)
        assert (total, hard, prop) == (2, 0, 0.0)


class TestGenerateSynthetic:
    def test_deterministic(self, tmp_path):
        cfg = SynthConfig(subjects=2, samples_per_subject=6, height=8, width=8, hard_proportion=0.5, shared_patterns=1)
        generate_synthetic(cfg, seed=0, out_dir=tmp_path / "a")
        generate_synthetic(cfg, seed=0, out_dir=tmp_path / "b")
        assert directory_digest(tmp_path / "a") == directory_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        cfg = SynthConfig(subjects=2, samples_per_subject=6, height=8, width=8, hard_proportion=0.5, shared_patterns=1)
        generate_synthetic(cfg, seed=0, out_dir=tmp_path / "a")
        generate_synthetic(cfg, seed=1, out_dir=tmp_path / "b")
        assert directory_digest(tmp_path / "a") != directory_digest(tmp_path / "b")

    def test_hard_proportion_within_tolerance(self, tmp_path):
        cfg = SynthConfig(
            subjects=3, samples_per_subject=20, height=8, width=8,
            hard_proportion=0.8, shared_patterns=1,
        )
        manifest = generate_synthetic(cfg, seed=3, out_dir=tmp_path)
        _, _, realized = hard_sample_audit(manifest)
        assert abs(realized - 0.8) <= 0.05
        assert manifest.meta["hard_proportion_realized"] == realized

    def test_hard_samples_share_time_averaged_flow(self, tmp_path):
        # two hard samples of different classes differ, in time-averaged
        # flow, only by noise: mean |difference| stays below 3 sigma
        cfg = SynthConfig(
            subjects=2, samples_per_subject=12, height=12, width=12,
            hard_proportion=1.0, shared_patterns=1, noise_sigma=0.05,
            envelope_jitter=0.0, subject_amplitude_jitter=0.0,
        )
        manifest = generate_synthetic(cfg, seed=5, out_dir=tmp_path)
        recs = manifest.records
        pair = None
        for a in recs:
            for b in recs:
                if (a.au_bits == b.au_bits and a.subject_id == b.subject_id
                        and a.class_id("3-class") != b.class_id("3-class")):
                    pair = (a, b)
                    break
            if pair:
                break
        assert pair is not None
        mean_a = manifest.load_flow(pair[0]).mean(axis=0)
        mean_b = manifest.load_flow(pair[1]).mean(axis=0)
        assert np.abs(mean_a - mean_b).mean() < 3 * cfg.noise_sigma

    def test_manifest_round_trip(self, tiny_dataset):
        loaded = load_manifest(tiny_dataset.root / "manifest.json")
        assert loaded.task_scheme == tiny_dataset.task_scheme
        assert loaded.dims == tiny_dataset.dims
        assert [r.sample_id for r in loaded.records] == [r.sample_id for r in tiny_dataset.records]
        flow = loaded.load_flow(loaded.records[0])
        assert flow.shape == loaded.flow_shape

    def test_manifest_schema_keys(self, tiny_dataset):
        doc = json.loads((tiny_dataset.root / "manifest.json").read_text())
        assert set(doc) == {"version", "task_scheme", "dims", "au_vocabulary", "records", "meta"}
        assert set(doc["dims"]) == {"t", "c", "h", "w"}
        rec = doc["records"][0]
        assert set(rec) == {"sample_id", "subject_id", "path", "emotion_raw", "au_bits"}
        assert set(rec["au_bits"]) <= {"0", "1"}

    def test_infeasible_hard_proportion(self, tmp_path):
        cfg = SynthConfig(subjects=1, samples_per_subject=2, height=8, width=8, hard_proportion=0.5)
        with pytest.raises(InfeasibleConfig):
            generate_synthetic(cfg, seed=0, out_dir=tmp_path)

    def test_envelopes_share_value_multiset(self):
        # classes must reorder the same values; otherwise time-pooled
        # statistics would leak the class
        from medn.data_model import _class_envelope

        base = sorted(_class_envelope(0, 7))
        for class_id in range(1, 7):
            assert np.allclose(sorted(_class_envelope(class_id, 7)), base)

    def test_envelopes_pairwise_distinct(self):
        from medn.data_model import _class_envelope

        envs = [_class_envelope(c, 7) for c in range(7)]
        for i in range(7):
            for j in range(i + 1, 7):
                assert not np.allclose(envs[i], envs[j]), (i, j)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=2, max_value=40), st.integers(min_value=2, max_value=9))
def test_loso_property_partition(n_samples, n_subjects):
    # pure-logic check on a fabricated manifest: folds partition the dataset
    from medn.data_model import DatasetManifest, SampleRecord

    records = [
        SampleRecord(f"x{i}", f"s{i % n_subjects}", f"x{i}.bin", "Happiness", "1")
        for i in range(max(n_samples, n_subjects))
    ]
    manifest = DatasetManifest("3-class", {"t": 8, "c": 2, "h": 4, "w": 4}, ["AU1"], records)
    folds = loso_splits(manifest)
    assert len(folds) == len({r.subject_id for r in records})
    tested = [sid for _, test in folds for sid in test]
    assert sorted(tested) == sorted(r.sample_id for r in records)
