import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgbtrack import geometry
from rgbtrack.geometry import Box, TargetState


def lattice_iou(a: Box, b: Box) -> float:
    """Independent oracle: count integer lattice cells [x, x+w) x [y, y+h)."""
    def cells(box):
        return {
            (x, y)
            for x in range(int(box.x), int(box.x + box.w))
            for y in range(int(box.y), int(box.y + box.h))
        }
    ca, cb = cells(a), cells(b)
    return len(ca & cb) / len(ca | cb)


boxes_st = st.builds(
    Box,
    x=st.floats(-1000, 1000),
    y=st.floats(-1000, 1000),
    w=st.floats(0.1, 500),
    h=st.floats(0.1, 500),
)


class TestIou:
    def test_identity(self):
        b = Box(3, 4, 10, 12)
        assert geometry.iou(b, b) == 1.0

    def test_disjoint(self):
        assert geometry.iou(Box(0, 0, 10, 10), Box(20, 20, 5, 5)) == 0.0

    def test_quarter_overlap_matches_lattice_oracle(self):
        a, b = Box(0, 0, 10, 10), Box(5, 5, 10, 10)
        expected = lattice_iou(a, b)
        assert expected == 25 / 175
        assert geometry.iou(a, b) == pytest.approx(expected, abs=1e-12)
        assert geometry.iou(a, b) == pytest.approx(0.142857, abs=1e-6)

    @given(a=boxes_st, b=boxes_st)
    @settings(max_examples=200, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        ab = geometry.iou(a, b)
        assert ab == geometry.iou(b, a)
        assert 0.0 <= ab <= 1.0

    @given(a=boxes_st, b=boxes_st)
    @settings(max_examples=200, deadline=None)
    def test_one_iff_identical(self, a, b):
        if geometry.iou(a, b) == 1.0:
            assert (a.x, a.y, a.w, a.h) == pytest.approx((b.x, b.y, b.w, b.h), rel=1e-12)

    def test_invalid_box_rejected(self):
        with pytest.raises(ValueError):
            Box(0, 0, -1, 5)
        with pytest.raises(ValueError):
            Box(np.nan, 0, 1, 1)


class TestCandidateSampling:
    def test_zero_variance_reproduces_previous_box(self, rng):
        prev = TargetState(50.0, 40.0, 0.0)
        boxes = geometry.sample_candidates(
            prev, ref_scale=20.0, n=7, rng=rng, base_size=(16, 12),
            frame_size=(200, 200), xy_var_factor=0.0, s_var=0.0,
        )
        for b in boxes:
            assert (b.cx, b.cy, b.w, b.h) == pytest.approx((50, 40, 16, 12), abs=1e-12)

    def test_center_variance_matches_configuration(self, rng):
        prev = TargetState(0.0, 0.0, 0.0)
        states = geometry.sample_candidate_states(prev, ref_scale=20.0, n=100_000, rng=rng)
        target = 0.09 * 20.0 ** 2
        for axis in (0, 1):
            assert states[:, axis].var() == pytest.approx(target, rel=0.05)

    def test_scale_variance_matches_configuration(self, rng):
        prev = TargetState(0.0, 0.0, 0.0)
        states = geometry.sample_candidate_states(prev, ref_scale=20.0, n=100_000, rng=rng)
        assert states[:, 2].var() == pytest.approx(0.25, rel=0.05)

    def test_fixed_seed_is_bit_deterministic(self):
        prev = TargetState(30.0, 30.0, 0.1)
        a = geometry.sample_candidates(prev, 10.0, 64, np.random.default_rng(9),
                                       (10, 10), (100, 100))
        b = geometry.sample_candidates(prev, 10.0, 64, np.random.default_rng(9),
                                       (10, 10), (100, 100))
        assert all(x == y for x, y in zip(a, b))

    def test_boxes_clipped_with_minimum_side(self, rng):
        prev = TargetState(1.0, 1.0, 0.0)
        boxes = geometry.sample_candidates(prev, 30.0, 500, rng, (8, 8), (64, 64))
        arr = np.stack([b.as_array() for b in boxes])
        assert (arr[:, 0] >= 0).all() and (arr[:, 1] >= 0).all()
        assert (arr[:, 0] + arr[:, 2] <= 64).all()
        assert (arr[:, 1] + arr[:, 3] <= 64).all()
        assert (arr[:, 2] >= 2).all() and (arr[:, 3] >= 2).all()


class TestTrainingBoxes:
    def test_positive_and_negative_iou_bounds(self, rng):
        gt = Box(20, 15, 14, 12)
        drawn = geometry.sample_training_boxes(gt, 32, 96, (96, 64), rng)
        assert len(drawn) == 128
        for box, label in drawn:
            ov = geometry.iou(box, gt)
            if label == 1:
                assert ov >= 0.7
            else:
                assert ov < 0.5
        assert sum(lab for _, lab in drawn) == 32

    def test_offline_configuration_counts(self, rng):
        gt = Box(30, 20, 16, 16)
        drawn = geometry.sample_training_boxes(gt, 32, 96, (96, 64), rng)
        labels = [lab for _, lab in drawn]
        assert labels.count(1) == 32 and labels.count(0) == 96

    def test_budget_error_when_gt_fills_frame(self, rng):
        # a gt covering a 2.5 px frame leaves no room for any low-overlap
        # box once the 2 px minimum side is enforced
        gt = Box(0, 0, 2.5, 2.5)
        with pytest.raises(geometry.SamplingBudgetError):
            geometry.sample_training_boxes(gt, 4, 16, (2.5, 2.5), rng, max_rounds=5)


class TestDeltas:
    def test_identity_is_zero(self):
        b = Box(3, 7, 11, 13)
        assert geometry.box_to_deltas(b, b) == pytest.approx((0, 0, 0, 0), abs=0)

    def test_closed_form_example(self):
        d = geometry.box_to_deltas(Box(0, 0, 10, 10), Box(5, 0, 20, 10))
        assert d == pytest.approx((1.0, 0.0, np.log(2), 0.0), abs=1e-12)

    def test_inverse_closed_form(self):
        b = geometry.deltas_to_box(Box(0, 0, 10, 10), (1.0, 0.0, np.log(2), 0.0))
        assert (b.x, b.y, b.w, b.h) == pytest.approx((5, 0, 20, 10), abs=1e-9)

    def test_zero_deltas_identity(self):
        b = Box(4, 5, 6, 7)
        out = geometry.deltas_to_box(b, (0, 0, 0, 0))
        assert (out.x, out.y, out.w, out.h) == pytest.approx((4, 5, 6, 7), abs=1e-12)

    @given(a=boxes_st, t=boxes_st)
    @settings(max_examples=200, deadline=None)
    def test_round_trip_inverse(self, a, t):
        back = geometry.deltas_to_box(a, geometry.box_to_deltas(a, t))
        assert (back.x, back.y, back.w, back.h) == pytest.approx(
            (t.x, t.y, t.w, t.h), rel=1e-9, abs=1e-9
        )
