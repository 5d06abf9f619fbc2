"""Data pipeline: record codec, loaders, augmentation, resizing, bucketing."""

import numpy as np
import pytest

from ainet import data
from ainet.errors import ConfigurationError, DomainError, FormatError


def rng(s=0):
    return np.random.default_rng(s)


class TestRecordCodec:
    def test_byte_layout_is_label_then_channel_planes(self):
        # pixel (y, x, c) lives at offset 1 + c*1024 + y*32 + x
        img = np.zeros((32, 32, 3), np.uint8)
        img[5, 7, 0] = 11
        img[5, 7, 1] = 22
        img[31, 0, 2] = 33
        buf = data.encode_record(9, img)
        assert len(buf) == data.RECORD_BYTES == 3073
        assert buf[0] == 9
        assert buf[1 + 0 * 1024 + 5 * 32 + 7] == 11
        assert buf[1 + 1 * 1024 + 5 * 32 + 7] == 22
        assert buf[1 + 2 * 1024 + 31 * 32 + 0] == 33
        assert sum(buf) == 9 + 11 + 22 + 33  # nothing else set

    def test_round_trip(self):
        img = rng(1).integers(0, 256, (32, 32, 3), dtype=np.uint8)
        label, back = data.decode_record(data.encode_record(4, img))
        assert label == 4
        np.testing.assert_array_equal(back, img)

    def test_encode_rejects_wrong_shape_and_dtype(self):
        with pytest.raises(FormatError):
            data.encode_record(0, np.zeros((32, 32, 3), np.float32))
        with pytest.raises(FormatError):
            data.encode_record(0, np.zeros((32, 32), np.uint8))
        with pytest.raises(FormatError):
            data.encode_record(300, np.zeros((32, 32, 3), np.uint8))

    def test_decode_rejects_short_record(self):
        with pytest.raises(FormatError):
            data.decode_record(b"\x00" * 100)

    def test_truncated_file_names_byte_offset(self, tmp_path):
        imgs = rng(2).integers(0, 256, (2, 32, 32, 3), dtype=np.uint8)
        p = tmp_path / "data_batch_1.bin"
        data.write_image_batch(str(p), imgs, np.array([0, 1]))
        p.write_bytes(p.read_bytes() + b"\xff" * 100)
        (tmp_path / "test_batch.bin").write_bytes(data.encode_record(0, imgs[0]))
        with pytest.raises(FormatError, match="byte offset 6146"):
            data.load_cifar10(str(tmp_path))


class TestBatchLoader:
    def make_corpus(self, tmp_path, n_train=6, n_test=3):
        g = rng(3)
        train = g.integers(0, 256, (n_train, 32, 32, 3), dtype=np.uint8)
        test = g.integers(0, 256, (n_test, 32, 32, 3), dtype=np.uint8)
        data.write_image_batch(
            str(tmp_path / "data_batch_1.bin"), train, np.arange(n_train) % 10
        )
        data.write_image_batch(
            str(tmp_path / "test_batch.bin"), test, np.arange(n_test) % 10
        )
        return train, test

    def test_scale_then_standardize_with_train_statistics(self, tmp_path):
        train_px, test_px = self.make_corpus(tmp_path)
        tr, te = data.load_cifar10(str(tmp_path))
        scaled = train_px.astype(np.float32) / 255.0
        mean = scaled.mean(axis=(0, 1, 2))
        std = np.maximum(scaled.std(axis=(0, 1, 2)), 1e-6)
        want0 = (scaled[0] - mean) / std
        np.testing.assert_allclose(tr[0].features, want0, atol=1e-6)
        # test split reuses the train statistics
        want_t = (test_px[1].astype(np.float32) / 255.0 - mean) / std
        np.testing.assert_allclose(te[1].features, want_t, atol=1e-6)
        assert [s.label for s in tr] == [0, 1, 2, 3, 4, 5]

    def test_subset_statistics_come_from_the_subset(self, tmp_path):
        train_px, _ = self.make_corpus(tmp_path)
        tr, _ = data.load_cifar10(str(tmp_path), max_train=2, max_test=1)
        assert len(tr) == 2
        scaled = train_px[:2].astype(np.float32) / 255.0
        mean = scaled.mean(axis=(0, 1, 2))
        std = np.maximum(scaled.std(axis=(0, 1, 2)), 1e-6)
        np.testing.assert_allclose(
            tr[0].features, (scaled[0] - mean) / std, atol=1e-6
        )

    def test_missing_files_is_a_configuration_error(self, tmp_path):
        with pytest.raises(ConfigurationError):
            data.load_cifar10(str(tmp_path))

    def test_synth_batches_feed_the_loader(self, tmp_path):
        data.synth_image_batches(str(tmp_path), seed=5, n_train=20, n_test=10)
        tr, te = data.load_cifar10(str(tmp_path))
        assert len(tr) == 20 and len(te) == 10
        assert all(s.features.shape == (32, 32, 3) for s in tr)
        assert sorted({s.label for s in tr}) == list(range(10))


class TestAugmentation:
    def test_hflip_is_an_involution(self):
        x = rng(4).normal(size=(17, 23, 3)).astype(np.float32)
        np.testing.assert_array_equal(data.hflip(data.hflip(x)), x)

    def test_centered_shift_is_identity(self):
        x = rng(5).normal(size=(16, 16, 3)).astype(np.float32)
        np.testing.assert_array_equal(data.shift_crop(x, 2, 2, 2, 2), x)

    def test_corner_shift_moves_content(self):
        x = np.arange(16.0, dtype=np.float32).reshape(4, 4, 1)
        out = data.shift_crop(x, 0, 0, 1, 1)
        # offset (0,0) reads from the zero padding on top/left
        assert out[0, 0, 0] == 0.0
        assert out[1, 1, 0] == x[0, 0, 0]

    @pytest.mark.parametrize("shape", [(32, 32, 3), (17, 23, 3), (24, 64, 3)])
    def test_augment_preserves_shape_and_label(self, shape):
        s = data.Sample(rng(6).normal(size=shape).astype(np.float32), 2)
        for k in range(8):
            out = data.augment(s, rng(k))
            assert out.features.shape == shape
            assert out.label == 2
            assert np.isfinite(out.features).all()

    def test_augment_offsets_bounded_by_eighth_pad(self):
        # 32-pixel edge: pad 4; every augmented view of a constant image
        # keeps at least the untouched center, so the center stays constant
        s = data.Sample(np.ones((32, 32, 3), np.float32), 0)
        for k in range(20):
            out = data.augment(s, rng(k)).features
            assert out[4:-4, 4:-4].min() == 1.0

    def test_augment_batch_rows_come_from_the_single_sample_policy(self):
        # every batched row must be reachable as hflip? -> shift_crop of the
        # original, i.e. the batch path changes no semantics
        x = np.arange(16.0, dtype=np.float32).reshape(4, 4, 1)
        variants = []
        for f in (x, data.hflip(x)):
            for oy in range(3):
                for ox in range(3):
                    variants.append(data.shift_crop(f, oy, ox, 1, 1))
        out = data.augment_batch(np.stack([x] * 40), rng(9))
        for row in out:
            assert any(np.array_equal(row, v) for v in variants)

    def test_augment_batch_is_deterministic_per_seed(self):
        x = rng(3).normal(size=(8, 16, 16, 3)).astype(np.float32)
        a = data.augment_batch(x, rng(1))
        b = data.augment_batch(x, rng(1))
        np.testing.assert_array_equal(a, b)
        assert a.shape == x.shape and a.dtype == x.dtype
        assert not np.array_equal(a, data.augment_batch(x, rng(2)))


class TestResize:
    @pytest.mark.parametrize(
        "h,w,nh,nw",
        [(350, 350, 224, 224), (480, 640, 168, 224), (400, 268, 224, 150)],
    )
    def test_maxside_worked_examples(self, h, w, nh, nw):
        s = data.Sample(rng(7).random((h, w, 3)).astype(np.float32), 1)
        out = data.resize_maxside(s, 224)
        assert out.features.shape == (nh, nw, 3)
        assert out.label == 1

    def test_wrap_hits_target_square(self):
        s = data.Sample(rng(8).random((50, 70, 3)).astype(np.float32), 3)
        out = data.resize_wrap(s, 32)
        assert out.features.shape == (32, 32, 3)
        assert out.features.dtype == np.float32

    def test_constant_image_resizes_to_same_constant(self):
        s = data.Sample(np.full((40, 60, 3), 0.625, np.float32), 0)
        np.testing.assert_allclose(
            data.resize_wrap(s, 24).features, 0.625, atol=1e-6
        )
        np.testing.assert_allclose(
            data.resize_maxside(s, 24).features, 0.625, atol=1e-6
        )

    def test_interpolation_stays_inside_value_range(self):
        x = rng(9).random((37, 53, 3)).astype(np.float32)
        out = data.resize_maxside(data.Sample(x, 0), 224).features
        assert out.min() >= x.min() - 1e-6
        assert out.max() <= x.max() + 1e-6

    def test_degenerate_input_rejected(self):
        with pytest.raises(DomainError):
            data.resize_wrap(data.Sample(np.zeros((5, 5), np.float32), 0), 10)


class TestBucketing:
    def test_exact_partition_of_two_shapes(self):
        samples = [data.Sample(np.zeros((32, 32, 3), np.float32), 0) for _ in range(3)]
        samples += [data.Sample(np.zeros((48, 40, 3), np.float32), 1) for _ in range(2)]
        batches = data.bucket_batches(samples, batch_size=4)
        sizes = sorted(len(b.indices) for b in batches)
        assert sizes == [2, 3]
        seen = sorted(i for b in batches for i in b.indices)
        assert seen == [0, 1, 2, 3, 4]
        for b in batches:
            assert all(samples[i].features.shape == b.shape for i in b.indices)

    def test_batch_size_splits_within_shape(self):
        samples = [data.Sample(np.zeros((8, 8, 3), np.float32), 0) for _ in range(5)]
        batches = data.bucket_batches(samples, batch_size=2)
        assert sorted(len(b.indices) for b in batches) == [1, 2, 2]

    def test_shuffled_partition_is_still_exact(self):
        samples = data.synth_varsize(seed=1, n=40)
        batches = data.bucket_batches(samples, 8, rng(10))
        seen = sorted(i for b in batches for i in b.indices)
        assert seen == list(range(40))
        for b in batches:
            assert len(b.indices) <= 8
            assert all(samples[i].features.shape == b.shape for i in b.indices)

    def test_empty_input_gives_no_batches(self):
        assert data.bucket_batches([], 4) == []

    def test_bad_batch_size(self):
        with pytest.raises(ConfigurationError):
            data.bucket_batches([], 0)


class TestSynthVarsize:
    def test_deterministic_per_seed(self):
        a = data.synth_varsize(seed=3, n=12)
        b = data.synth_varsize(seed=3, n=12)
        assert len(a) == 12
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.features, sb.features)
            assert sa.label == sb.label

    def test_first_samples_cover_distinct_shapes(self):
        shapes = {s.features.shape for s in data.synth_varsize(seed=0, n=8)}
        assert len(shapes) == 8

    def test_extent_bounds_and_label_balance(self):
        samples = data.synth_varsize(seed=2, n=1000, num_classes=4)
        for s in samples:
            h, w, c = s.features.shape
            assert 24 <= h <= 64 and 24 <= w <= 64 and c == 3
        counts = np.bincount([s.label for s in samples], minlength=4)
        assert counts.tolist() == [250, 250, 250, 250]


class TestFeatureFrames:
    def test_csv_round_trip(self, tmp_path):
        samples = data.synth_feature_frames(seed=4, per_class=2, num_classes=3)
        data.write_feature_frames_csv(samples, str(tmp_path))
        back, names = data.load_feature_frames(str(tmp_path))
        assert names == ["class00", "class01", "class02"]
        assert len(back) == len(samples) == 6
        by_key = {(s.label, s.features.shape): s for s in samples}
        for s in back:
            src = by_key[(s.label, s.features.shape)]
            assert s.features.shape[1] == data.NUM_FEATURES
            np.testing.assert_allclose(s.features, src.features, atol=1e-6)

    def test_wrong_column_count_names_file(self, tmp_path):
        sub = tmp_path / "class00"
        sub.mkdir()
        bad = sub / "utt0000.csv"
        bad.write_text("1.0,2.0,3.0\n4.0,5.0,6.0\n")
        with pytest.raises(FormatError, match="utt0000.csv"):
            data.load_feature_frames(str(tmp_path))

    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            data.load_feature_frames(str(tmp_path / "nope"))
        with pytest.raises(ConfigurationError):
            data.load_feature_frames(str(tmp_path))  # exists but no classes

    def test_lengths_vary_and_labels_cover_classes(self):
        samples = data.synth_feature_frames(seed=5, per_class=3, num_classes=6)
        lengths = {s.features.shape[0] for s in samples}
        assert len(lengths) > 1
        assert sorted({s.label for s in samples}) == list(range(6))


class TestDatasetPersistence:
    def test_round_trip_bit_identical(self, tmp_path):
        samples = data.synth_varsize(seed=6, n=10)
        data.save_dataset(samples, str(tmp_path / "ds"))
        back = data.load_dataset(str(tmp_path / "ds"))
        assert len(back) == 10
        for sa, sb in zip(samples, back):
            np.testing.assert_array_equal(sa.features, sb.features)
            assert sa.label == sb.label

    def test_missing_index_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            data.load_dataset(str(tmp_path))


class TestValidation:
    def test_label_out_of_range_names_sample(self):
        s = [data.Sample(np.zeros((4, 4, 3), np.float32), 7)]
        with pytest.raises(DomainError, match="sample 0"):
            data.validate_samples(s, num_classes=4)

    def test_non_finite_features_rejected(self):
        bad = np.zeros((4, 4, 3), np.float32)
        bad[1, 1, 1] = np.nan
        with pytest.raises(DomainError, match="non-finite"):
            data.validate_samples([data.Sample(bad, 0)], num_classes=4)
