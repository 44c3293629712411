"""Cell selection, group masks, and the group contrastive loss."""

import math

import numpy as np
import pytest

from dminer import (
    InvalidTemperatureError,
    NotEnoughCellsError,
    PgclConfig,
    PositiveSet,
    QuerySet,
    build_mask,
    build_positives,
    build_queries,
    finite_diff_grad,
    l2_normalize_rows,
    pgcl_loss,
    select_topm,
)

from oracles import pgcl_loss_direct, topm_by_sort


def random_contrastive_instance(rng, n=3, m=6, d=5):
    f_q = l2_normalize_rows(rng.standard_normal((n, d)))
    f_k = l2_normalize_rows(rng.standard_normal((m, d)))
    f_k0 = l2_normalize_rows(rng.standard_normal((n, d)))
    # Each key joins at most one query's group (or none, encoded as -1).
    owner = rng.integers(-1, n, size=m)
    mask = np.zeros((n, m))
    for j, g in enumerate(owner):
        if g >= 0:
            mask[g, j] = 1.0
    queries = QuerySet(categories=tuple(range(n)), f_q=f_q, f_k0=f_k0)
    positives = PositiveSet(
        positions=np.zeros((m, 2), dtype=np.int64), keys=f_k, mask=mask
    )
    return queries, positives


class TestSelectTopm:
    def test_matches_full_sort(self):
        rng = np.random.default_rng(70)
        for _ in range(40):
            h, w, c = 6, 7, 3
            pred = rng.uniform(size=(h, w, c))
            centers = [
                (int(rng.integers(h)), int(rng.integers(w)))
                for _ in range(int(rng.integers(0, 4)))
            ]
            m = int(rng.integers(1, 10))
            pos, labels = select_topm(pred, m, centers)
            want_pos, want_labels = topm_by_sort(pred, m, centers)
            assert [tuple(p) for p in pos] == want_pos
            assert list(labels) == want_labels

    def test_score_ties_resolve_by_scan_order(self):
        pred = np.full((2, 3, 1), 0.5)
        pos, _ = select_topm(pred, 4, [])
        assert [tuple(p) for p in pos] == [(0, 0), (0, 1), (0, 2), (1, 0)]

    def test_label_ties_take_lowest_channel(self):
        pred = np.zeros((1, 1, 3))
        pred[0, 0] = [0.7, 0.7, 0.2]
        _, labels = select_topm(pred, 1, [])
        assert labels[0] == 0

    def test_centers_are_excluded(self):
        pred = np.zeros((3, 3, 1))
        pred[1, 1, 0] = 1.0
        pred[0, 2, 0] = 0.9
        pos, _ = select_topm(pred, 1, [(1, 1)])
        assert tuple(pos[0]) == (0, 2)

    def test_too_few_cells_raises(self):
        pred = np.zeros((2, 2, 1))
        with pytest.raises(NotEnoughCellsError):
            select_topm(pred, 4, [(0, 0)])

    def test_center_off_grid_raises(self):
        with pytest.raises(ValueError):
            select_topm(np.zeros((2, 2, 1)), 1, [(2, 0)])

    def test_m_must_be_positive(self):
        with pytest.raises(ValueError):
            select_topm(np.zeros((2, 2, 1)), 0, [])


class TestBuildMask:
    def test_membership_matrix(self):
        mask = build_mask([0, 2], np.array([0, 2, 1, 0]))
        np.testing.assert_array_equal(
            mask, [[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 0.0, 0.0]]
        )

    def test_unlisted_labels_give_zero_columns(self):
        mask = build_mask([1], np.array([0, 5, 1]))
        np.testing.assert_array_equal(mask, [[0.0, 0.0, 1.0]])


class TestBuildQueries:
    def test_center_feature_and_reference(self):
        rng = np.random.default_rng(71)
        features = rng.standard_normal((5, 5, 4))
        target = np.zeros((5, 5, 2))
        target[1, 2, 0] = 1.0
        target[3, 3, 1] = 1.0
        target[0, 0, 1] = 0.5
        q = build_queries(features, target, [0, 1])
        np.testing.assert_allclose(
            q.f_q[0],
            features[1, 2] / np.linalg.norm(features[1, 2]),
            rtol=0,
            atol=1e-14,
        )
        ref1 = features[3, 3] + 0.5 * features[0, 0]
        np.testing.assert_allclose(
            q.f_k0[1], ref1 / np.linalg.norm(ref1), rtol=1e-13, atol=1e-14
        )

    def test_requires_exactly_one_center(self):
        features = np.random.default_rng(72).standard_normal((4, 4, 3))
        target = np.zeros((4, 4, 1))
        with pytest.raises(ValueError):
            build_queries(features, target, [0])
        target[0, 0, 0] = 1.0
        target[2, 2, 0] = 1.0
        with pytest.raises(ValueError):
            build_queries(features, target, [0])


class TestBuildPositives:
    def test_rows_follow_positions(self):
        rng = np.random.default_rng(73)
        features = rng.standard_normal((4, 4, 3))
        positions = np.array([[0, 1], [3, 2]])
        ps = build_positives(features, positions, np.array([1, 0]), [0, 1])
        for row, (y, x) in zip(ps.keys, positions):
            v = features[y, x]
            np.testing.assert_allclose(row, v / np.linalg.norm(v), rtol=0, atol=1e-14)
        np.testing.assert_array_equal(ps.mask, [[0.0, 1.0], [1.0, 0.0]])


class TestPgclLoss:
    def test_single_pair_closed_form(self):
        # One query, one key, one primary, all dot products equal: both the
        # masked term and the primary term are ln 2, so the loss is 2 ln 2.
        v = np.array([[1.0, 0.0]])
        queries = QuerySet(categories=(0,), f_q=v, f_k0=v)
        positives = PositiveSet(
            positions=np.zeros((1, 2), dtype=np.int64),
            keys=v.copy(),
            mask=np.ones((1, 1)),
        )
        loss, _ = pgcl_loss(queries, positives, PgclConfig(m=1))
        np.testing.assert_allclose(loss, 2.0 * math.log(2.0), rtol=0, atol=1e-12)

    def test_empty_mask_leaves_primary_term(self):
        v = np.array([[1.0, 0.0]])
        queries = QuerySet(categories=(0,), f_q=v, f_k0=v)
        positives = PositiveSet(
            positions=np.zeros((1, 2), dtype=np.int64),
            keys=v.copy(),
            mask=np.zeros((1, 1)),
        )
        loss, _ = pgcl_loss(queries, positives, PgclConfig(m=1))
        np.testing.assert_allclose(loss, math.log(2.0), rtol=0, atol=1e-12)

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(74)
        cfg = PgclConfig()
        for _ in range(30):
            queries, positives = random_contrastive_instance(
                rng, n=int(rng.integers(1, 5)), m=int(rng.integers(1, 9))
            )
            loss, _ = pgcl_loss(queries, positives, cfg)
            want = pgcl_loss_direct(
                queries.f_q, positives.keys, queries.f_k0, positives.mask, cfg.tau
            )
            np.testing.assert_allclose(loss, want, rtol=1e-12, atol=1e-13)

    def test_key_permutation_invariance(self):
        rng = np.random.default_rng(75)
        queries, positives = random_contrastive_instance(rng, n=3, m=7)
        loss, _ = pgcl_loss(queries, positives)
        perm = rng.permutation(7)
        shuffled = PositiveSet(
            positions=positives.positions[perm],
            keys=positives.keys[perm],
            mask=positives.mask[:, perm],
        )
        loss_p, _ = pgcl_loss(queries, shuffled)
        np.testing.assert_allclose(loss_p, loss, rtol=0, atol=1e-12)

    def test_gradients_against_finite_differences(self):
        rng = np.random.default_rng(76)
        cfg = PgclConfig(m=5)
        queries, positives = random_contrastive_instance(rng, n=2, m=5, d=4)

        def rebuild(f_q, f_k, f_k0):
            q = QuerySet(categories=queries.categories, f_q=f_q, f_k0=f_k0)
            p = PositiveSet(
                positions=positives.positions, keys=f_k, mask=positives.mask
            )
            return pgcl_loss(q, p, cfg)[0]

        _, grads = pgcl_loss(queries, positives, cfg)
        num_q = finite_diff_grad(
            lambda z: rebuild(z, positives.keys, queries.f_k0), queries.f_q
        )
        num_k = finite_diff_grad(
            lambda z: rebuild(queries.f_q, z, queries.f_k0), positives.keys
        )
        num_k0 = finite_diff_grad(
            lambda z: rebuild(queries.f_q, positives.keys, z), queries.f_k0
        )
        np.testing.assert_allclose(grads.f_q, num_q, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(grads.f_k, num_k, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(grads.f_k0, num_k0, rtol=1e-5, atol=1e-8)

    def test_small_temperature_stays_finite(self):
        rng = np.random.default_rng(77)
        queries, positives = random_contrastive_instance(rng)
        loss, grads = pgcl_loss(queries, positives, PgclConfig(tau=1e-4))
        assert np.isfinite(loss)
        assert np.all(np.isfinite(grads.f_q))

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(InvalidTemperatureError):
            PgclConfig(tau=0.0)

    def test_mask_query_count_must_match(self):
        rng = np.random.default_rng(78)
        queries, positives = random_contrastive_instance(rng, n=2, m=4)
        # Three mask rows against two queries: key counts agree, so the
        # container accepts it and the loss itself must catch the mismatch.
        bad = PositiveSet(
            positions=positives.positions,
            keys=positives.keys,
            mask=np.vstack([positives.mask, np.zeros((1, 4))]),
        )
        with pytest.raises(ValueError):
            pgcl_loss(queries, bad)

    def test_column_with_two_groups_rejected(self):
        with pytest.raises(ValueError):
            PositiveSet(
                positions=np.zeros((1, 2), dtype=np.int64),
                keys=np.ones((1, 3)),
                mask=np.ones((2, 1)),
            )

    def test_pulling_group_keys_closer_lowers_the_loss(self):
        # Rotate masked keys toward their query; the masked log-probability
        # rises, so the loss must drop.
        q = np.array([[1.0, 0.0]])
        far = l2_normalize_rows(np.array([[0.2, 1.0]]))
        near = l2_normalize_rows(np.array([[0.9, 0.3]]))
        queries = QuerySet(categories=(0,), f_q=q, f_k0=q.copy())
        mk = lambda k: PositiveSet(
            positions=np.zeros((1, 2), dtype=np.int64), keys=k, mask=np.ones((1, 1))
        )
        l_far, _ = pgcl_loss(queries, mk(far), PgclConfig(m=1))
        l_near, _ = pgcl_loss(queries, mk(near), PgclConfig(m=1))
        assert l_near < l_far
