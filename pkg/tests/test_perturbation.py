"""Tests for the candidate-mask generators."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy import ndimage

from errors import DegenerateObject, EmptyGroundTruth, OverlapViolation
from masks import BinaryMask, boundary, erode, mask_iou, structuring_element
from models import HARD, MEDIUM, Action, BuildConfig, Difficulty, ElementShape, IoUTarget, MaskType
from services.perturbation import MaskPerturber, derive_action, derive_seed, slot_name
from tests.factories import disk, rect, square

perturber = MaskPerturber()


def blob(seed: int, sigma: float, quantile: float, size: int = 64) -> BinaryMask:
    """Largest component of a thresholded smooth random field."""
    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.random((size, size)), sigma=sigma)
    labels, count = ndimage.label(field > np.quantile(field, quantile))
    if count == 0:
        return BinaryMask.empty(size, size)
    largest = np.argmax(np.bincount(labels.ravel())[1:]) + 1
    return BinaryMask(labels == largest)


@st.composite
def blobs(draw, size: int = 64):
    """Smoothed random blobs with area of at least 400 pixels."""
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    sigma = draw(st.sampled_from([4.0, 6.0, 8.0]))
    mask = blob(seed, sigma, draw(st.floats(min_value=0.55, max_value=0.85)), size)
    return mask if mask.area >= 400 else disk(32, 32, 14, size, size)


def assorted_shape(rng: np.random.Generator, size: int = 64) -> BinaryMask:
    """A blob, a rotated ellipse, a rectangle or an L-shape; may be under 400 pixels."""
    kind = rng.integers(4)
    if kind == 0:
        return blob(int(rng.integers(2**32)), float(rng.choice([4.0, 6.0, 8.0])), float(rng.uniform(0.55, 0.85)), size)
    if kind == 1:
        ys, xs = np.mgrid[0:size, 0:size] - size / 2
        angle = rng.uniform(0, np.pi)
        a, b = rng.uniform(10, 28, size=2)
        u = xs * np.cos(angle) + ys * np.sin(angle)
        v = -xs * np.sin(angle) + ys * np.cos(angle)
        return BinaryMask((u / a) ** 2 + (v / b) ** 2 <= 1.0)
    x0, y0 = rng.integers(4, 20, size=2)
    x1, y1 = rng.integers(36, 60, size=2)
    box = rect(x0, y0, x1, y1, size, size)
    if kind == 2:
        return box
    return box - rect(x0 + (x1 - x0) // 2, y0, x1, y0 + (y1 - y0) // 2, size, size)


class TestDeriveSeed:
    """Tests for seed derivation."""

    def test_stable(self):
        """Test that identical parts give identical seeds."""
        assert derive_seed(42, "inst", 3) == derive_seed(42, "inst", 3)

    def test_parts_matter(self):
        """Test that every part changes the seed."""
        base = derive_seed(42, "inst", 3)

        assert derive_seed(43, "inst", 3) != base
        assert derive_seed(42, "other", 3) != base
        assert derive_seed(42, "inst", 4) != base

    def test_fits_64_bits(self):
        """Test that seeds are non-negative 64-bit integers."""
        assert 0 <= derive_seed(0, "x") < 2**64


class TestDeriveAction:
    """Tests for action derivation."""

    @pytest.mark.parametrize(
        "mask_type, iou, expected",
        [
            (MaskType.PERFECT, 1.0, Action.ACCEPT),
            (MaskType.FULL_NEG, 0.0, Action.REJECT),
            (MaskType.DILATE, 0.87, Action.MINOR_REVISION),
            (MaskType.ERODE, 0.85, Action.MINOR_REVISION),
            (MaskType.CUTOUT, 0.78, Action.MAJOR_REVISION),
            (MaskType.MERGE, 0.95, Action.MINOR_REVISION),
            (MaskType.MERGE, 0.9, Action.MINOR_REVISION),
            (MaskType.MERGE, 0.8, Action.MAJOR_REVISION),
            (MaskType.MERGE, 0.75, Action.MAJOR_REVISION),
            (MaskType.MERGE, 0.25, Action.REJECT),
        ],
    )
    def test_actions(self, mask_type, iou, expected):
        """Test the action implied by type and IoU."""
        assert derive_action(mask_type, iou) is expected

    def test_custom_merge_thresholds(self):
        """Test that merge thresholds come from the config."""
        config = BuildConfig(merge_minor_threshold=0.8, merge_major_threshold=0.5)

        assert derive_action(MaskType.MERGE, 0.85, config) is Action.MINOR_REVISION
        assert derive_action(MaskType.MERGE, 0.6, config) is Action.MAJOR_REVISION


class TestSlotName:
    """Tests for slot naming."""

    @pytest.mark.parametrize(
        "kind, difficulty, negative_id, expected",
        [
            (MaskType.PERFECT, None, None, "perfect"),
            (MaskType.CUTOUT, Difficulty.HARD, None, "cutout-hard"),
            (MaskType.ERODE, Difficulty.MEDIUM, None, "erode-medium"),
            (MaskType.MERGE, None, "neg-a", "merge-neg-a"),
            (MaskType.FULL_NEG, None, "neg-b", "full_neg-neg-b"),
        ],
    )
    def test_names(self, kind, difficulty, negative_id, expected):
        """Test slot names for every sample family."""
        assert slot_name(kind, difficulty, negative_id) == expected


class TestGenPerfect:
    """Tests for the perfect generator."""

    def test_identity(self):
        """Test that the perfect mask is the ground truth."""
        gt = disk(20, 20, 8, 48, 48)
        sample = perturber.gen_perfect(gt)

        assert sample.mask == gt
        assert (sample.label.iou, sample.label.mask_type, sample.label.action) == (
            1.0,
            MaskType.PERFECT,
            Action.ACCEPT,
        )
        assert sample.label.difficulty is Difficulty.NA

    def test_empty_gt(self):
        """Test that an empty gt has no perfect mask."""
        with pytest.raises(EmptyGroundTruth):
            perturber.gen_perfect(BinaryMask.empty(8, 8))


class TestGenGeometric:
    """Tests for cutout, dilate and erode generation."""

    def test_dilate_square_hard(self):
        """Test dilating a 40x40 square into the hard interval."""
        gt = square(40, x=30, y=30, width=100, height=100)
        sample = perturber.gen_geometric(gt, MaskType.DILATE, HARD, 1)

        assert sample.mask.issuperset(gt)
        assert sample.mask.area >= 1600
        assert HARD.contains(mask_iou(sample.mask, gt))
        assert sample.label.difficulty is Difficulty.HARD
        assert sample.label.action is Action.MINOR_REVISION

    def test_erode_square_medium(self):
        """Test eroding a 40x40 square into the medium interval."""
        gt = square(40, x=30, y=30, width=100, height=100)
        sample = perturber.gen_geometric(gt, MaskType.ERODE, MEDIUM, 2)

        assert sample.mask.issubset(gt)
        assert sample.mask != gt
        assert MEDIUM.contains(mask_iou(sample.mask, gt))
        assert sample.label.action is Action.MAJOR_REVISION

    def test_cutout_keeps_boundary(self):
        """Test that the cutout hole stays strictly inside the object."""
        gt = disk(32, 32, 20, 64, 64)
        sample = perturber.gen_geometric(gt, MaskType.CUTOUT, MEDIUM, 3)

        assert sample.mask.issubset(gt)
        assert boundary(gt).issubset(sample.mask)
        assert (gt - sample.mask).issubset(erode(gt, structuring_element(ElementShape.RECTANGLE, 1)))
        assert sample.spec.seed_point is not None

    @pytest.mark.parametrize("kind", [MaskType.CUTOUT, MaskType.DILATE, MaskType.ERODE])
    def test_degenerate_object(self, kind):
        """Test that a 3x3 object is too small for any interval."""
        gt = square(3, x=10, y=10)

        with pytest.raises(DegenerateObject):
            perturber.gen_geometric(gt, kind, HARD, 0)

    def test_empty_gt(self):
        """Test that an empty gt raises EmptyGroundTruth."""
        with pytest.raises(EmptyGroundTruth):
            perturber.gen_geometric(BinaryMask.empty(16, 16), MaskType.DILATE, HARD, 0)

    def test_rejects_non_geometric_kind(self):
        """Test that merge is not a geometric kind."""
        with pytest.raises(ValueError):
            perturber.gen_geometric(disk(20, 20, 8, 48, 48), MaskType.MERGE, HARD, 0)

    def test_rejects_foreign_interval(self):
        """Test that a target outside the configured intervals is rejected."""
        with pytest.raises(ValueError):
            perturber.gen_geometric(disk(20, 20, 8, 48, 48), MaskType.DILATE, IoUTarget(lo=0.5, hi=0.6), 0)

    def test_deterministic(self):
        """Test that the same seed gives bit-identical output."""
        gt = disk(30, 30, 15, 64, 64)
        first = perturber.gen_geometric(gt, MaskType.CUTOUT, HARD, 99)
        second = perturber.gen_geometric(gt, MaskType.CUTOUT, HARD, 99)

        assert first.mask == second.mask
        assert first.spec == second.spec

    def test_spec_records_element(self):
        """Test that the replay spec records the element and flips."""
        gt = disk(30, 30, 15, 64, 64)
        sample = perturber.gen_geometric(gt, MaskType.DILATE, MEDIUM, 5)

        assert sample.spec.element is not None
        assert sample.spec.element.half_width >= 0
        assert sample.spec.fine_tune_flips >= 0
        assert sample.spec.target == MEDIUM
        assert sample.spec.slot == "dilate-medium"

    @settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(blobs(), st.sampled_from([MaskType.CUTOUT, MaskType.DILATE, MaskType.ERODE]), st.integers(0, 2**31))
    def test_interval_membership(self, gt, kind, seed):
        """Test that every geometric sample lands inside its declared interval."""
        for target in (HARD, MEDIUM):
            sample = perturber.gen_geometric(gt, kind, target, seed)
            iou = mask_iou(sample.mask, gt)

            assert target.contains(iou)
            assert sample.label.iou == iou
            if kind is MaskType.DILATE:
                assert sample.mask.issuperset(gt)
            else:
                assert sample.mask.issubset(gt)
            if kind is MaskType.CUTOUT:
                assert boundary(gt).issubset(sample.mask)

    @pytest.mark.parametrize("kind", [MaskType.CUTOUT, MaskType.DILATE, MaskType.ERODE])
    def test_interval_membership_on_500_shapes(self, kind):
        """Test hard and medium samples of 500 assorted objects of at least 400 pixels."""
        rng = np.random.default_rng(500)
        shapes = []
        while len(shapes) < 500:
            shape = assorted_shape(rng)
            if shape.area >= 400:
                shapes.append(shape)

        for index, gt in enumerate(shapes):
            for target in (HARD, MEDIUM):
                sample = perturber.gen_geometric(gt, kind, target, derive_seed(0, kind.value, index))

                assert target.contains(mask_iou(sample.mask, gt))
                assert sample.label.iou == mask_iou(sample.mask, gt)


class TestSelectFullNegs:
    """Tests for distractor selection."""

    def test_overlap_filtered(self):
        """Test that a candidate touching gt by one pixel is dropped."""
        gt = rect(10, 10, 19, 19, 64, 64)
        touching = rect(19, 19, 25, 25, 64, 64)

        assert perturber.select_full_negs(gt, [("touch", touching)]) == []

    def test_empty_candidate_filtered(self):
        """Test that an empty candidate is dropped."""
        gt = rect(10, 10, 19, 19, 64, 64)

        assert perturber.select_full_negs(gt, [("empty", BinaryMask.empty(64, 64))]) == []

    def test_no_candidates(self):
        """Test that zero candidates give an empty list."""
        assert perturber.select_full_negs(rect(10, 10, 19, 19, 64, 64), []) == []

    def test_ranking_by_bbox_iou(self):
        """Test top three by bbox IoU, ties broken by id."""
        gt = rect(0, 0, 9, 9, 64, 64)
        # Hollow frames around gt share its box area in decreasing proportion.
        candidates = []
        for negative_id, size in (("d", 26), ("a", 14), ("c", 22), ("b", 18)):
            frame = rect(0, 0, size - 1, size - 1, 64, 64) - rect(0, 0, 11, 11, 64, 64)
            candidates.append((negative_id, frame))

        selected = perturber.select_full_negs(gt, candidates)

        assert [s.spec.negative_id for s in selected] == ["a", "b", "c"]
        assert all(s.label.mask_type is MaskType.FULL_NEG for s in selected)
        assert all(s.label.action is Action.REJECT and s.label.iou == 0.0 for s in selected)

    def test_ties_broken_by_id(self):
        """Test that equal scores keep ascending id order."""
        gt = rect(0, 0, 9, 9, 64, 64)
        same = rect(40, 40, 45, 45, 64, 64)

        selected = perturber.select_full_negs(gt, [("z", same), ("m", same), ("a", same)], k=2)

        assert [s.spec.negative_id for s in selected] == ["a", "m"]


class TestGenMerges:
    """Tests for merge generation."""

    @pytest.mark.parametrize(
        "gt_area, negative_area, iou, action, difficulty",
        [
            (80, 20, 0.8, Action.MAJOR_REVISION, Difficulty.MEDIUM),
            (95, 5, 0.95, Action.MINOR_REVISION, Difficulty.HARD),
            (50, 150, 0.25, Action.REJECT, Difficulty.EASY),
        ],
    )
    def test_merge_labels(self, gt_area, negative_area, iou, action, difficulty):
        """Test merge IoU arithmetic and thresholds."""
        gt = rect(0, 0, gt_area - 1, 0, 200, 3)
        negative = rect(0, 2, negative_area - 1, 2, 200, 3)

        (sample,) = perturber.gen_merges(gt, [("neg", negative)])

        assert sample.mask == gt | negative
        assert sample.label.iou == pytest.approx(iou)
        assert sample.label.action is action
        assert sample.label.difficulty is difficulty

    def test_overlap_raises(self):
        """Test that an overlapping negative is rejected."""
        gt = rect(0, 0, 9, 9, 32, 32)

        with pytest.raises(OverlapViolation):
            perturber.gen_merges(gt, [("neg", rect(5, 5, 12, 12, 32, 32))])


class TestGenInstance:
    """Tests for per-instance generation."""

    def negatives(self):
        return [
            ("n1", rect(60, 5, 70, 15)),
            ("n2", rect(60, 40, 75, 55)),
            ("n3", rect(70, 75, 80, 85)),
        ]

    def test_thirteen_samples(self):
        """Test 13 samples with three valid negatives."""
        result = perturber.gen_instance(disk(30, 48, 14), self.negatives(), 7, "inst")

        types = [s.label.mask_type for s in result.samples]
        assert len(result.samples) == 13
        assert types.count(MaskType.PERFECT) == 1
        assert types.count(MaskType.CUTOUT) == 2
        assert types.count(MaskType.DILATE) == 2
        assert types.count(MaskType.ERODE) == 2
        assert types.count(MaskType.MERGE) == 3
        assert types.count(MaskType.FULL_NEG) == 3
        assert not result.partial

    def test_seven_samples_without_negatives(self):
        """Test the lower bound of seven samples."""
        result = perturber.gen_instance(disk(30, 48, 14), [], 7, "inst")

        assert len(result.samples) == 7

    def test_unique_slots(self):
        """Test that every sample of an instance has its own slot."""
        result = perturber.gen_instance(disk(30, 48, 14), self.negatives(), 7, "inst")

        slots = [s.spec.slot for s in result.samples]
        assert len(set(slots)) == len(slots)

    def test_deterministic(self):
        """Test that two runs give bit-identical samples."""
        first = perturber.gen_instance(disk(30, 48, 14), self.negatives(), 123, "inst")
        second = perturber.gen_instance(disk(30, 48, 14), self.negatives(), 123, "inst")

        assert [s.mask for s in first.samples] == [s.mask for s in second.samples]
        assert [s.label for s in first.samples] == [s.label for s in second.samples]

    def test_hard_above_medium(self):
        """Test that hard samples have higher IoU than medium ones of the same kind."""
        result = perturber.gen_instance(disk(30, 48, 14), [], 3, "inst")
        by_slot = {s.spec.slot: s.label.iou for s in result.samples}

        for kind in ("cutout", "dilate", "erode"):
            assert by_slot[f"{kind}-hard"] > by_slot[f"{kind}-medium"]

    def test_small_object_is_partial(self):
        """Test that geometric failures drop samples and flag the instance."""
        result = perturber.gen_instance(square(3, x=10, y=10), [], 0, "tiny")

        assert len(result.samples) == 1
        assert result.partial
        assert len(result.failures) == 6
        assert {f.slot for f in result.failures} == {
            "cutout-hard",
            "cutout-medium",
            "dilate-hard",
            "dilate-medium",
            "erode-hard",
            "erode-medium",
        }

    def test_empty_gt(self):
        """Test that an empty gt raises EmptyGroundTruth."""
        with pytest.raises(EmptyGroundTruth):
            perturber.gen_instance(BinaryMask.empty(16, 16), [], 0)
