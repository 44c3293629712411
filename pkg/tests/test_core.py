"""Geometry primitives and the numeric helpers everything else leans on."""

import numpy as np
import pytest

from dminer import (
    ALLOWED_STRIDES,
    Annotation,
    BBox,
    Grid,
    InvalidSizeError,
    ZeroVectorError,
    finite_diff_grad,
    iou,
    l2_normalize,
    l2_normalize_rows,
)

from oracles import center_to_corner, iou_corner


class TestGrid:
    def test_output_extent_is_floored(self):
        g = Grid(height=37, width=50, stride=4)
        assert (g.out_height, g.out_width) == (9, 12)

    def test_stride_must_be_allowed(self):
        for s in ALLOWED_STRIDES:
            Grid(height=64, width=64, stride=s)
        with pytest.raises(ValueError):
            Grid(height=64, width=64, stride=3)

    def test_grid_smaller_than_stride_is_rejected(self):
        with pytest.raises(ValueError):
            Grid(height=3, width=64, stride=4)


class TestBBox:
    def test_corners(self):
        b = BBox(cx=10.0, cy=6.0, w=4.0, h=2.0)
        assert b.corners() == (8.0, 5.0, 12.0, 7.0)

    def test_nonpositive_sides_rejected(self):
        with pytest.raises(InvalidSizeError):
            BBox(cx=0.0, cy=0.0, w=0.0, h=1.0)
        with pytest.raises(InvalidSizeError):
            BBox(cx=0.0, cy=0.0, w=1.0, h=-2.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidSizeError):
            BBox(cx=float("nan"), cy=0.0, w=1.0, h=1.0)

    def test_annotation_category_must_be_nonnegative(self):
        with pytest.raises(ValueError):
            Annotation(bbox=BBox(0, 0, 1, 1), category=-1)


class TestIou:
    def test_identical_boxes(self):
        b = BBox(5, 5, 4, 6)
        assert iou(b, b) == 1.0

    def test_disjoint_boxes(self):
        assert iou(BBox(0, 0, 2, 2), BBox(10, 10, 2, 2)) == 0.0

    def test_touching_edges_have_zero_overlap(self):
        # Right edge of a meets left edge of b exactly.
        assert iou(BBox(0, 0, 2, 2), BBox(2, 0, 2, 2)) == 0.0

    def test_known_half_overlap(self):
        # 2x2 boxes offset by 1 in x: intersection 2, union 6.
        v = iou(BBox(0, 0, 2, 2), BBox(1, 0, 2, 2))
        np.testing.assert_allclose(v, 2.0 / 6.0, rtol=0, atol=1e-15)

    def test_matches_corner_form_reference(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            a = BBox(*rng.uniform(0, 20, 2), *rng.uniform(0.5, 10, 2))
            b = BBox(*rng.uniform(0, 20, 2), *rng.uniform(0.5, 10, 2))
            expected = iou_corner(
                center_to_corner(a.cx, a.cy, a.w, a.h),
                center_to_corner(b.cx, b.cy, b.w, b.h),
            )
            np.testing.assert_allclose(iou(a, b), expected, rtol=1e-13, atol=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            a = BBox(*rng.uniform(0, 10, 2), *rng.uniform(0.5, 5, 2))
            b = BBox(*rng.uniform(0, 10, 2), *rng.uniform(0.5, 5, 2))
            assert iou(a, b) == iou(b, a)


class TestNormalize:
    def test_unit_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = rng.standard_normal(rng.integers(1, 40))
            u = l2_normalize(v)
            np.testing.assert_allclose(np.linalg.norm(u), 1.0, rtol=0, atol=1e-12)
            np.testing.assert_allclose(u * np.linalg.norm(v), v, rtol=1e-12, atol=0)

    def test_zero_vector_raises(self):
        with pytest.raises(ZeroVectorError):
            l2_normalize(np.zeros(8))

    def test_rows_normalized_independently(self):
        rng = np.random.default_rng(1)
        mat = rng.standard_normal((12, 5))
        out = l2_normalize_rows(mat)
        for i in range(12):
            np.testing.assert_allclose(out[i], l2_normalize(mat[i]), rtol=0, atol=1e-15)

    def test_rows_with_a_zero_row_raise(self):
        mat = np.ones((3, 4))
        mat[1] = 0.0
        with pytest.raises(ZeroVectorError):
            l2_normalize_rows(mat)


class TestFiniteDiffGrad:
    def test_quadratic_gradient(self):
        # f(x) = sum(a * x^2) has gradient 2 a x; central differences are
        # exact for quadratics up to roundoff.
        rng = np.random.default_rng(3)
        a = rng.uniform(0.5, 2.0, size=(4, 5))
        x = rng.standard_normal((4, 5))
        g = finite_diff_grad(lambda z: float((a * z * z).sum()), x)
        np.testing.assert_allclose(g, 2 * a * x, rtol=1e-8, atol=1e-10)

    def test_preserves_input(self):
        x = np.ones((3, 3))
        before = x.copy()
        finite_diff_grad(lambda z: float(z.sum() ** 2), x)
        np.testing.assert_array_equal(x, before)
