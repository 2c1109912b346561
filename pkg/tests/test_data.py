import numpy as np
import pytest

from rgbtrack import data
from rgbtrack.data import RGBTSequence, SequenceFormatError, SynthConfig


def small_cfg(**kw):
    base = dict(frames=6, frame_size=(48, 32), target_size=(10, 8), seed=3)
    base.update(kw)
    return SynthConfig(**base)


class TestGenerator:
    def test_same_seed_bit_identical(self):
        a = data.generate_synthetic(small_cfg())
        b = data.generate_synthetic(small_cfg())
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.t, b.t)
        np.testing.assert_array_equal(a.gt, b.gt)

    def test_different_seeds_differ(self):
        a = data.generate_synthetic(small_cfg(seed=1))
        b = data.generate_synthetic(small_cfg(seed=2))
        assert not np.array_equal(a.rgb, b.rgb)

    def test_gt_always_inside_frame(self):
        seq = data.generate_synthetic(small_cfg(frames=200, velocity=(3.7, 2.9), jitter=1.0))
        w, h = seq.frame_size
        assert (seq.gt[:, 0] >= 0).all() and (seq.gt[:, 1] >= 0).all()
        assert (seq.gt[:, 0] + seq.gt[:, 2] <= w).all()
        assert (seq.gt[:, 1] + seq.gt[:, 3] <= h).all()

    def test_heavy_thermal_noise_destroys_correlation_rgb_untouched(self):
        clean = data.generate_synthetic(small_cfg(frames=4))
        noisy = data.generate_synthetic(small_cfg(frames=4, t_noise_sigma=2.0))
        corr = np.corrcoef(
            clean.t.astype(float).ravel(), noisy.t.astype(float).ravel()
        )[0, 1]
        assert abs(corr) < 0.1
        np.testing.assert_array_equal(clean.rgb, noisy.rgb)

    def test_degradations_are_modality_local(self):
        base = data.generate_synthetic(small_cfg(frames=4))
        rgb_noisy = data.generate_synthetic(small_cfg(frames=4, rgb_noise_sigma=0.5))
        np.testing.assert_array_equal(base.t, rgb_noisy.t)
        dark = data.generate_synthetic(small_cfg(frames=4, rgb_illumination=((1, 3, 0.2),)))
        np.testing.assert_array_equal(base.t, dark.t)
        blackout = data.generate_synthetic(small_cfg(frames=4, t_blackout=((1, 3),)))
        np.testing.assert_array_equal(base.rgb, blackout.rgb)
        assert (blackout.t[1] == 0).all() and not (blackout.t[0] == 0).all()

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(frames=5, t_blackout=((2, 9),))
        with pytest.raises(ValueError):
            SynthConfig(rgb_noise_sigma=-0.1)


class TestDiskLayout:
    def test_round_trip_boxes_exact_pixels_lossless(self, tmp_path):
        seq = data.generate_synthetic(small_cfg())
        # exercise fractional boxes too
        seq.gt[2] = (3.25, 4.5, 10.0, 8.0)
        data.write_sequence(seq, tmp_path / "s")
        loaded = data.load_sequence(tmp_path / "s")
        np.testing.assert_array_equal(loaded.rgb, seq.rgb)
        np.testing.assert_array_equal(loaded.t, seq.t)
        np.testing.assert_array_equal(loaded.gt, seq.gt)

    def test_two_frame_fixture(self, tmp_path):
        seq = data.generate_synthetic(small_cfg(frames=2))
        data.write_sequence(seq, tmp_path / "mini")
        loaded = data.load_sequence(tmp_path / "mini")
        assert len(loaded) == 2

    def test_gt_line_parse(self, tmp_path):
        line = data.parse_gt_line("12,34,56,78", 1, "gt.txt")
        np.testing.assert_array_equal(line, [12, 34, 56, 78])

    def test_filenames_zero_padded_to_five_digits(self, tmp_path):
        seq = data.generate_synthetic(small_cfg(frames=9))
        data.write_sequence(seq, tmp_path / "s")
        assert (tmp_path / "s" / "rgb" / "00007.png").exists()
        assert (tmp_path / "s" / "t" / "00000.png").exists()

    def test_gt_line_count_matches_frames(self, tmp_path):
        seq = data.generate_synthetic(small_cfg())
        data.write_sequence(seq, tmp_path / "s")
        lines = (tmp_path / "s" / "gt.txt").read_text().splitlines()
        assert len(lines) == len(seq)

    def test_attributes_round_trip(self, tmp_path):
        seq = data.generate_synthetic(small_cfg())
        seq.attributes.extend(["low_illumination", "thermal_crossover"])
        data.write_sequence(seq, tmp_path / "s")
        assert data.load_sequence(tmp_path / "s").attributes == seq.attributes

    def test_missing_folder_is_named(self, tmp_path):
        (tmp_path / "broken").mkdir()
        with pytest.raises(SequenceFormatError, match="rgb"):
            data.load_sequence(tmp_path / "broken")

    def test_mismatched_frame_counts_reported(self, tmp_path):
        seq = data.generate_synthetic(small_cfg(frames=3))
        data.write_sequence(seq, tmp_path / "s")
        (tmp_path / "s" / "t" / "00002.png").unlink()
        with pytest.raises(SequenceFormatError, match="frame counts differ"):
            data.load_sequence(tmp_path / "s")

    def test_unparsable_gt_line_is_located(self, tmp_path):
        seq = data.generate_synthetic(small_cfg(frames=2))
        data.write_sequence(seq, tmp_path / "s")
        gt = tmp_path / "s" / "gt.txt"
        gt.write_text("1,2,3,4\nnot,a,box\n")
        with pytest.raises(SequenceFormatError, match="gt.txt:2"):
            data.load_sequence(tmp_path / "s")

    def test_sequence_invariants_enforced(self):
        with pytest.raises(SequenceFormatError, match="lengths differ"):
            RGBTSequence(
                name="x",
                rgb=np.zeros((2, 4, 4, 3), dtype=np.uint8),
                t=np.zeros((3, 4, 4, 3), dtype=np.uint8),
                gt=np.array([[0, 0, 2, 2]] * 2, dtype=float),
            )
        with pytest.raises(SequenceFormatError, match="outside frame"):
            RGBTSequence(
                name="x",
                rgb=np.zeros((1, 4, 4, 3), dtype=np.uint8),
                t=np.zeros((1, 4, 4, 3), dtype=np.uint8),
                gt=np.array([[3, 3, 2, 2]], dtype=float),
            )
