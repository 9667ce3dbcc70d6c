import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from vie.synthetic import (
    DatasetFormatError, LabeledDataset, SynthSpec, cut_into_bins, dumps, generate, header_bytes, loads,
    read_dataset, subsample_fraction, write_dataset,
)

SMALL = SynthSpec(class_count=3, videos_per_class=4, frame_count=8, height=8, width=8, seed=5)


def same_dataset(a: LabeledDataset, b: LabeledDataset) -> bool:
    return (len(a) == len(b) and a.class_count == b.class_count and a.splits == b.splits
            and np.array_equal(a.labels, b.labels)
            and all(x.frames.tobytes() == y.frames.tobytes() and x.index == y.index and x.fps == y.fps
                    for x, y in zip(a.videos, b.videos)))


def single_frame_fft(ds: LabeledDataset, rng) -> np.ndarray:
    # translation-invariant single-frame features for the nearest-centroid oracle
    return np.array([np.abs(np.fft.fft2(v.frames[rng.integers(v.length), :, :, 0])).ravel() for v in ds.videos])


def nearest_centroid_accuracy(ds: LabeledDataset, seed: int = 0) -> float:
    x, y = single_frame_fft(ds, np.random.default_rng(seed)), ds.labels
    fit = np.arange(len(y)) % 2 == 0
    centroids = np.array([x[fit & (y == k)].mean(0) for k in range(ds.class_count)])
    pred = np.argmin(((x[~fit][:, None] - centroids) ** 2).sum(-1), axis=1)
    return float(np.mean(pred == y[~fit]))


class TestGenerate:
    def test_same_seed_bit_identical(self):
        assert same_dataset(generate(SMALL), generate(SMALL))

    def test_different_seed_differs(self):
        other = generate(SynthSpec(**{**SMALL.__dict__, "seed": 6}))
        assert not same_dataset(generate(SMALL), other)

    def test_class_balanced(self):
        ds = generate(SynthSpec(class_count=4, videos_per_class=100, frame_count=4, height=8, width=8))
        assert len(ds) == 400
        np.testing.assert_array_equal(ds.class_counts(), [100] * 4)

    def test_default_split(self):
        ds = generate(SynthSpec(frame_count=2))
        assert ds.splits.count("train") == 480 and ds.splits.count("val") == 120
        for k in range(8):
            assert [s for s, y in zip(ds.splits, ds.labels) if y == k].count("val") == 15

    def test_shapes_and_ids(self):
        ds = generate(SMALL)
        assert [v.index for v in ds.videos] == list(range(len(ds)))
        assert all(v.frames.shape == (8, 8, 8, 1) and v.frames.dtype == np.float32 for v in ds.videos)

    @pytest.mark.parametrize("bad", [dict(label_mode="colour"), dict(class_count=0), dict(val_fraction=1.0)])
    def test_invalid_spec(self, bad):
        with pytest.raises(ValueError):
            SynthSpec(**bad)

    def test_dynamics_mean_frames_indistinguishable(self):
        ds = generate(SynthSpec(label_mode="dynamics", videos_per_class=60, seed=11))
        means = np.array([v.frames.mean(axis=0)[..., 0].ravel() for v in ds.videos])
        K, n_px = ds.class_count, means.shape[1]
        n_tests = K * (K - 1) // 2 * n_px
        smallest = 1.0
        for a in range(K):
            for b in range(a + 1, K):
                p = stats.ttest_ind(means[ds.labels == a], means[ds.labels == b], equal_var=False).pvalue
                smallest = min(smallest, float(np.min(p)))
        assert smallest * n_tests > 0.05

    def test_appearance_mean_frames_also_flat(self):
        # uniform toroidal starts make the time-averaged image uninformative in every mode
        ds = generate(SynthSpec(label_mode="appearance", videos_per_class=30, seed=2))
        grand = np.mean([v.frames.mean() for v in ds.videos])
        per_pixel = np.mean([v.frames.mean(axis=0) for v in ds.videos], axis=0)
        assert np.max(np.abs(per_pixel - grand)) < 0.05

    def test_single_frame_oracle_appearance_above_90(self):
        ds = generate(SynthSpec(label_mode="appearance", videos_per_class=100, noise=0.05, seed=3))
        assert nearest_centroid_accuracy(ds) > 0.9

    def test_single_frame_oracle_dynamics_at_chance(self):
        ds = generate(SynthSpec(label_mode="dynamics", videos_per_class=100, noise=0.05, seed=3))
        assert abs(nearest_centroid_accuracy(ds) - 1 / 8) <= 0.06


class TestBins:
    def test_one_bin_is_identity(self):
        ds = generate(SMALL)
        assert same_dataset(cut_into_bins(ds, 1), ds)

    def test_two_bins_split_frames(self):
        ds = generate(SynthSpec(class_count=2, videos_per_class=2, frame_count=16, height=6, width=6))
        cut = cut_into_bins(ds, 2)
        assert len(cut) == 8
        np.testing.assert_array_equal(cut.videos[0].frames, ds.videos[0].frames[0:8])
        np.testing.assert_array_equal(cut.videos[1].frames, ds.videos[0].frames[8:16])
        np.testing.assert_array_equal(cut.labels, np.repeat(ds.labels, 2))
        assert cut.splits == [s for s in ds.splits for _ in range(2)]
        assert [v.index for v in cut.videos] == list(range(8))

    @pytest.mark.parametrize("n_bins", [1, 2, 4, 8])
    def test_frame_count_conserved(self, n_bins):
        ds = generate(SMALL)
        cut = cut_into_bins(ds, n_bins)
        assert len(cut) == n_bins * len(ds)
        assert sum(v.length for v in cut.videos) == sum(v.length for v in ds.videos)

    def test_tail_dropped_and_logged(self, caplog):
        caplog.set_level("INFO")
        cut = cut_into_bins(generate(SMALL), 3)
        assert all(v.length == 2 for v in cut.videos)
        assert "dropping 2 tail frames" in caplog.text

    @pytest.mark.parametrize("n_bins", [0, 9])
    def test_bad_bins(self, n_bins):
        with pytest.raises(ValueError):
            cut_into_bins(generate(SMALL), n_bins)


class TestFraction:
    BIG = SynthSpec(class_count=4, videos_per_class=100, frame_count=1, height=4, width=4)

    def test_full_fraction_is_identity(self):
        ds = generate(SMALL)
        out = subsample_fraction(ds, 1.0, seed=3)
        assert same_dataset(out, ds)

    def test_half(self):
        out = subsample_fraction(generate(self.BIG), 0.5, seed=0)
        np.testing.assert_array_equal(out.class_counts(), [50] * 4)
        ids = [v.index for v in out.videos]
        assert ids == sorted(ids)

    def test_deterministic(self):
        ds = generate(self.BIG)
        assert same_dataset(subsample_fraction(ds, 0.3, 9), subsample_fraction(ds, 0.3, 9))

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_out_of_range(self, fraction):
        with pytest.raises(ValueError):
            subsample_fraction(generate(SMALL), fraction, 0)

    def test_empty_class_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            subsample_fraction(generate(SMALL), 0.1, 0)

    def test_seed_overlap_near_half(self):
        ds = generate(self.BIG)
        base = {v.index for v in subsample_fraction(ds, 0.5, 0).videos}
        overlaps = [len(base & {v.index for v in subsample_fraction(ds, 0.5, s).videos}) / len(base)
                    for s in range(1, 101)]
        assert np.mean(overlaps) == pytest.approx(0.5, abs=0.02)
        assert all(o < 1.0 for o in overlaps)


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        ds = generate(SMALL)
        write_dataset(tmp_path / "d.vie", ds)
        assert same_dataset(read_dataset(tmp_path / "d.vie"), ds)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 5), st.integers(0, 1000))
    def test_round_trip_property(self, k, per_class, frames, seed):
        ds = generate(SynthSpec(class_count=k, videos_per_class=per_class, frame_count=frames, height=3, width=5,
                                seed=seed))
        assert same_dataset(loads(dumps(ds)), ds)

    def test_size_formula(self):
        ds = generate(SMALL)
        pixels = sum(v.frames.size for v in ds.videos)
        assert len(dumps(ds)) == header_bytes(ds) + 4 * pixels
        # magic 8, version 1, K and n 8, counts 4K, per-video header 33
        assert header_bytes(ds) == 8 + 1 + 8 + 4 * 3 + 33 * 12

    @pytest.mark.parametrize("cut", [0, 5, 9, 30, 100, -1])
    def test_truncation(self, cut):
        blob = dumps(generate(SMALL))
        with pytest.raises(DatasetFormatError, match="truncated") as err:
            loads(blob[:cut] if cut >= 0 else blob[:-1])
        assert err.value.offset <= len(blob)

    def test_bad_magic(self):
        blob = bytearray(dumps(generate(SMALL)))
        blob[0] ^= 0xFF
        with pytest.raises(DatasetFormatError, match="magic") as err:
            loads(bytes(blob))
        assert err.value.offset == 0

    def test_bad_version(self):
        blob = bytearray(dumps(generate(SMALL)))
        blob[8] = 99
        with pytest.raises(DatasetFormatError, match="version") as err:
            loads(bytes(blob))
        assert err.value.offset == 8

    def test_trailing_bytes(self):
        with pytest.raises(DatasetFormatError, match="trailing"):
            loads(dumps(generate(SMALL)) + b"\x00")

    def test_pixels_little_endian_float32(self):
        ds = generate(SMALL)
        blob = dumps(ds)
        start = header_bytes(ds) - 33 * (len(ds) - 1)
        first = np.frombuffer(blob[start:start + 4 * ds.videos[0].frames.size], dtype="<f4")
        np.testing.assert_array_equal(first, ds.videos[0].frames.ravel())

    def test_stats_text(self):
        text = generate(SMALL).stats_text()
        assert "videos 12" in text and "per_class 4 4 4" in text and "split val 3" in text
