"""Score-aware AP evaluation against an independent protocol reference."""

import numpy as np
import pytest

from dminer import (
    Annotation,
    BBox,
    CategoryOutOfRangeError,
    Dataset,
    DatasetMismatchError,
    Detection,
    EvalConfig,
    ImageRecord,
    NoGroundTruthError,
    average_precision,
    evaluate,
    match_image,
)

from oracles import ap_from_flags, coco_ap_at_s


def make_dataset(gt_by_image, num_categories, size=200):
    """gt_by_image: {image_id: [(cx, cy, w, h, category), ...]}."""
    images = []
    for image_id in sorted(gt_by_image):
        anns = tuple(
            Annotation(BBox(cx, cy, w, h), cat)
            for cx, cy, w, h, cat in gt_by_image[image_id]
        )
        images.append(
            ImageRecord(image_id=image_id, width=size, height=size, annotations=anns)
        )
    return Dataset(
        images=tuple(images),
        num_categories=num_categories,
        category_names=tuple(f"c{j}" for j in range(num_categories)),
    )


def random_eval_case(rng, max_images=6, max_cats=3, max_gt=5, max_dets=8, size=200):
    num_images = int(rng.integers(1, max_images + 1))
    num_cats = int(rng.integers(1, max_cats + 1))
    gt = {}
    for i in range(num_images):
        rows = []
        for _ in range(int(rng.integers(0, max_gt + 1))):
            w, h = rng.uniform(8, 60, 2)
            cx = float(rng.uniform(w / 2, size - w / 2))
            cy = float(rng.uniform(h / 2, size - h / 2))
            rows.append((cx, cy, float(w), float(h), int(rng.integers(num_cats))))
        gt[i] = rows
    # Guarantee at least one annotation somewhere.
    if not any(gt.values()):
        gt[0] = [(50.0, 50.0, 20.0, 20.0, 0)]
    det_rows = []
    for i in range(num_images):
        for _ in range(int(rng.integers(0, max_dets + 1))):
            if gt[i] and rng.uniform() < 0.7:
                # Perturb a true box so IoU values span the thresholds.
                cx, cy, w, h, cat = gt[i][int(rng.integers(len(gt[i])))]
                cx += float(rng.normal(0, w * 0.2))
                cy += float(rng.normal(0, h * 0.2))
                w *= float(rng.uniform(0.7, 1.4))
                h *= float(rng.uniform(0.7, 1.4))
            else:
                w, h = (float(v) for v in rng.uniform(8, 60, 2))
                cx, cy = (float(v) for v in rng.uniform(20, size - 20, 2))
                cat = int(rng.integers(num_cats))
            cx = min(max(cx, 1.0), size - 1.0)
            cy = min(max(cy, 1.0), size - 1.0)
            score = float(np.round(rng.uniform(), 2))  # ties on purpose
            det_rows.append((i, cx, cy, max(w, 1.0), max(h, 1.0), cat, score))
    dets = [
        Detection(image_id=r[0], bbox=BBox(*r[1:5]), category=r[5], score=r[6])
        for r in det_rows
    ]
    return gt, det_rows, make_dataset(gt, num_cats), dets


class TestMatchImage:
    def test_perfect_detection_is_a_tp(self):
        gt = [BBox(50, 50, 20, 20)]
        dets = [Detection(0, BBox(50, 50, 20, 20), 0, 0.9)]
        labels, unmatched = match_image(gt, dets, t_iou=0.5, t_s=0.0)
        assert labels.tolist() == [True]
        assert unmatched == 0

    def test_iou_must_be_strictly_above_threshold(self):
        gt = [BBox(50, 50, 20, 20)]
        # Shifted by exactly half its width: IoU = 1/3.
        det = Detection(0, BBox(60, 50, 20, 20), 0, 0.9)
        labels, _ = match_image(gt, [det], t_iou=1.0 / 3.0, t_s=0.0)
        assert labels.tolist() == [False]
        labels, _ = match_image(gt, [det], t_iou=1.0 / 3.0 - 1e-9, t_s=0.0)
        assert labels.tolist() == [True]

    def test_score_must_be_strictly_above_threshold(self):
        gt = [BBox(50, 50, 20, 20)]
        det = Detection(0, BBox(50, 50, 20, 20), 0, 0.5)
        labels, _ = match_image(gt, [det], t_iou=0.5, t_s=0.5)
        assert labels.tolist() == [False]
        labels, _ = match_image(gt, [det], t_iou=0.5, t_s=0.49)
        assert labels.tolist() == [True]

    def test_subthreshold_detection_never_consumes_gt(self):
        # A perfect-IoU detection below the score threshold is a false
        # positive AND leaves the ground truth unmatched.
        gt = [BBox(50, 50, 20, 20)]
        perfect_low = Detection(0, BBox(50, 50, 20, 20), 0, 0.4)
        labels, unmatched = match_image(gt, [perfect_low], 0.5, 0.5)
        assert labels.tolist() == [False]
        assert unmatched == 1
        # The same box above the threshold does consume it.
        labels, unmatched = match_image(gt, [perfect_low], 0.5, 0.3)
        assert labels.tolist() == [True]
        assert unmatched == 0
        # An ineligible high-IoU detection cannot shadow an eligible one.
        okay = Detection(0, BBox(51, 50, 20, 20), 0, 0.8)
        labels, unmatched = match_image(gt, [perfect_low, okay], 0.5, 0.5)
        assert labels.tolist() == [False, True]
        assert unmatched == 0

    def test_higher_score_matches_first(self):
        gt = [BBox(50, 50, 20, 20)]
        close = Detection(0, BBox(52, 50, 20, 20), 0, 0.6)
        closer = Detection(0, BBox(50, 50, 20, 20), 0, 0.9)
        labels, _ = match_image(gt, [close, closer], 0.5, 0.0)
        assert labels.tolist() == [False, True]

    def test_eligible_detection_takes_highest_iou_gt(self):
        gt = [BBox(40, 50, 20, 20), BBox(52, 50, 20, 20)]
        det = Detection(0, BBox(50, 50, 20, 20), 0, 0.9)
        labels, unmatched = match_image(gt, [det], 0.1, 0.0)
        assert labels.tolist() == [True]
        assert unmatched == 1
        # The second GT (higher IoU) must be the consumed one.
        follow = Detection(0, BBox(52, 50, 20, 20), 0, 0.5)
        labels2, unmatched2 = match_image(gt, [det, follow], 0.1, 0.0)
        assert labels2.tolist() == [True, True]
        assert unmatched2 == 0

    def test_score_ties_keep_input_order(self):
        gt = [BBox(50, 50, 20, 20)]
        a = Detection(0, BBox(50, 50, 20, 20), 0, 0.7)
        b = Detection(0, BBox(50, 50, 20, 20), 0, 0.7)
        labels, _ = match_image(gt, [a, b], 0.5, 0.0)
        assert labels.tolist() == [True, False]

    def test_no_gt_all_fp(self):
        det = Detection(0, BBox(50, 50, 20, 20), 0, 0.9)
        labels, unmatched = match_image([], [det], 0.5, 0.0)
        assert labels.tolist() == [False]
        assert unmatched == 0


class TestAveragePrecision:
    def test_all_hits_is_one(self):
        assert average_precision(np.ones(5, dtype=bool), 5) == 1.0

    def test_no_hits_is_zero(self):
        assert average_precision(np.zeros(5, dtype=bool), 5) == 0.0

    def test_no_detections_is_zero(self):
        assert average_precision(np.zeros(0, dtype=bool), 3) == 0.0

    def test_zero_gt_is_zero(self):
        assert average_precision(np.ones(2, dtype=bool), 0) == 0.0

    def test_matches_brute_force_interpolation(self):
        rng = np.random.default_rng(90)
        for _ in range(200):
            n = int(rng.integers(1, 20))
            flags = rng.uniform(size=n) < 0.5
            num_gt = int(rng.integers(int(flags.sum()), int(flags.sum()) + 6))
            np.testing.assert_allclose(
                average_precision(flags, num_gt),
                ap_from_flags(list(flags), num_gt),
                rtol=0,
                atol=1e-12,
            )

    def test_negative_gt_rejected(self):
        with pytest.raises(ValueError):
            average_precision(np.ones(1, dtype=bool), -1)


class TestEvaluate:
    def test_perfect_single_detection(self):
        gt = {0: [(50.0, 50.0, 20.0, 20.0, 0)]}
        d = make_dataset(gt, 1)
        dets = [Detection(0, BBox(50.0, 50.0, 20.0, 20.0), 0, 0.95)]
        res = evaluate(d, dets)
        np.testing.assert_allclose(res.ap_at_s, np.ones(10), rtol=0, atol=0)
        np.testing.assert_allclose(res.ap_at_s_mean, 1.0, rtol=0, atol=0)

    def test_matches_protocol_reference(self):
        rng = np.random.default_rng(91)
        cfg = EvalConfig()
        for _ in range(25):
            gt, det_rows, dataset, dets = random_eval_case(rng)
            res = evaluate(dataset, dets, cfg)
            for j, t_s in enumerate(cfg.score_thresholds):
                want = coco_ap_at_s(
                    gt, det_rows, t_s, cfg.iou_thresholds, cfg.max_dets
                )
                np.testing.assert_allclose(res.ap_at_s[j], want, rtol=0, atol=1e-12)

    def test_ap_never_rises_with_the_score_threshold(self):
        rng = np.random.default_rng(92)
        for _ in range(20):
            _, _, dataset, dets = random_eval_case(rng)
            res = evaluate(dataset, dets)
            diffs = np.diff(res.ap_at_s)
            assert (diffs <= 1e-12).all()

    def test_empty_categories_are_excluded_from_the_mean(self):
        # Category 1 has no ground truth; a perfect category-0 detection must
        # still give a mean AP of 1.0, and category 1 must not be listed. The
        # score sits strictly above the last default threshold (0.9) so the
        # detection stays eligible at every score cut.
        gt = {0: [(50.0, 50.0, 20.0, 20.0, 0)]}
        d = make_dataset(gt, 2)
        dets = [Detection(0, BBox(50.0, 50.0, 20.0, 20.0), 0, 0.95)]
        res = evaluate(d, dets)
        assert res.categories == (0,)
        np.testing.assert_allclose(res.ap_at_s_mean, 1.0, rtol=0, atol=0)

    def test_max_dets_caps_per_image_by_score(self):
        gt = {0: [(50.0, 50.0, 20.0, 20.0, 0)]}
        d = make_dataset(gt, 1)
        # The perfect detection has the lowest score, so a cap of 2 drops it.
        noise = [
            Detection(0, BBox(150.0, 150.0, 10.0, 10.0), 0, 0.9),
            Detection(0, BBox(150.0, 120.0, 10.0, 10.0), 0, 0.8),
        ]
        hit = Detection(0, BBox(50.0, 50.0, 20.0, 20.0), 0, 0.3)
        capped = evaluate(d, noise + [hit], EvalConfig(max_dets=2))
        assert capped.ap_at_s_mean == 0.0
        uncapped = evaluate(d, noise + [hit], EvalConfig(max_dets=3))
        assert uncapped.ap_at_s_mean > 0.0

    def test_detections_for_unknown_image_rejected(self):
        d = make_dataset({0: [(50.0, 50.0, 20.0, 20.0, 0)]}, 1)
        with pytest.raises(DatasetMismatchError):
            evaluate(d, [Detection(5, BBox(50, 50, 20, 20), 0, 0.9)])

    def test_detection_category_out_of_range_rejected(self):
        d = make_dataset({0: [(50.0, 50.0, 20.0, 20.0, 0)]}, 1)
        with pytest.raises(CategoryOutOfRangeError):
            evaluate(d, [Detection(0, BBox(50, 50, 20, 20), 1, 0.9)])

    def test_dataset_without_annotations_rejected(self):
        d = Dataset(
            images=(ImageRecord(image_id=0, width=10, height=10, annotations=()),),
            num_categories=1,
            category_names=("a",),
        )
        with pytest.raises(NoGroundTruthError):
            evaluate(d, [])

    def test_no_detections_gives_zero(self):
        d = make_dataset({0: [(50.0, 50.0, 20.0, 20.0, 0)]}, 1)
        res = evaluate(d, [])
        assert res.ap_at_s_mean == 0.0

    def test_table_shape_and_aggregates(self):
        rng = np.random.default_rng(93)
        _, _, dataset, dets = random_eval_case(rng)
        cfg = EvalConfig()
        res = evaluate(dataset, dets, cfg)
        table = np.asarray(res.ap_table)
        assert table.shape == (10, 10)
        np.testing.assert_allclose(res.ap_at_s, table.mean(axis=0), rtol=0, atol=1e-15)
        np.testing.assert_allclose(
            res.ap_at_s_mean, np.mean(res.ap_at_s), rtol=0, atol=1e-15
        )

    def test_default_thresholds(self):
        cfg = EvalConfig()
        np.testing.assert_allclose(cfg.score_thresholds, [0.1 * i for i in range(10)])
        np.testing.assert_allclose(
            cfg.iou_thresholds, [0.50 + 0.05 * i for i in range(10)]
        )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(iou_thresholds=())
        with pytest.raises(ValueError):
            EvalConfig(score_thresholds=(0.5, 0.2))
        with pytest.raises(ValueError):
            EvalConfig(max_dets=0)
        with pytest.raises(ValueError):
            EvalConfig(score_thresholds=(0.0, 1.0))

    def test_detection_score_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            Detection(0, BBox(1, 1, 1, 1), 0, 1.5)
