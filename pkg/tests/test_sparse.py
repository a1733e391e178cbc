"""Top-K selection, sparse uploads, and masked weighted aggregation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedanchor.errors import AggregationError, ShapeMismatchError
from fedanchor.sparse import (
    SelectionMask,
    SparseAdapterUpdate,
    aggregate_masked,
    make_sparse_update,
    topk_select,
    update_magnitude,
    uplink_cost,
)

from helpers import dense_fedavg_oracle, masked_average_oracle, topk_oracle


def sparse(dim, indices, values, size):
    return SparseAdapterUpdate(
        SelectionMask(dim, np.array(indices, dtype=np.int64)),
        np.array(values, dtype=np.float64),
        size,
    )


class TestSelectionMask:
    def test_rejects_unsorted_indices(self):
        with pytest.raises(ValueError):
            SelectionMask(5, np.array([2, 1]))

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            SelectionMask(5, np.array([1, 1]))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            SelectionMask(5, np.array([5]))
        with pytest.raises(ValueError):
            SelectionMask(5, np.array([-1]))

    def test_empty_mask_is_fine(self):
        assert len(SelectionMask(5, np.array([], dtype=np.int64))) == 0


class TestUpdateMagnitude:
    def test_identical_vectors_give_zero(self):
        v = np.array([1.0, -2.0, 3.5])
        assert np.array_equal(update_magnitude(v, v), np.zeros(3))

    def test_absolute_difference(self):
        local = np.array([-1.0, 4.0])
        global_ = np.array([1.0, 1.0])
        assert np.array_equal(update_magnitude(local, global_), [2.0, 3.0])

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal(40), rng.standard_normal(40)
        want = np.array([abs(float(x) - float(y)) for x, y in zip(a, b)])
        assert np.array_equal(update_magnitude(a, b), want)

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            update_magnitude(np.zeros(3), np.zeros(4))


class TestTopkSelect:
    def test_documented_example(self):
        mask = topk_select(np.array([0.1, 0.9, 0.5]), 2)
        assert mask.selected.tolist() == [1, 2]

    def test_tie_goes_to_lowest_index(self):
        mask = topk_select(np.array([0.5, 0.5, 0.5]), 2)
        assert mask.selected.tolist() == [0, 1]

    def test_k_zero_and_k_d(self):
        u = np.array([3.0, 1.0, 2.0])
        assert len(topk_select(u, 0)) == 0
        assert topk_select(u, 3).selected.tolist() == [0, 1, 2]

    def test_k_beyond_d_clamps(self):
        assert len(topk_select(np.array([1.0, 2.0]), 10)) == 2

    def test_rejects_negative_k(self):
        with pytest.raises(ValueError):
            topk_select(np.array([1.0]), -1)

    @settings(max_examples=60, deadline=None)
    @given(
        values=st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0, 2.0]), min_size=1, max_size=12),
        k=st.integers(0, 12),
    )
    def test_matches_full_sort_oracle(self, values, k):
        u = np.array(values)
        assert topk_select(u, min(k, len(u))).selected.tolist() == topk_oracle(u, k)


class TestMakeSparseUpdate:
    def test_k_zero_is_empty(self):
        up = make_sparse_update(np.ones(4), np.zeros(4), 0, 10)
        assert len(up.mask) == 0
        assert up.values.size == 0

    def test_k_d_is_dense_copy(self):
        local = np.array([1.0, 2.0, 3.0])
        up = make_sparse_update(local, np.zeros(3), 3, 10)
        assert np.array_equal(up.values, local)

    def test_hand_traced_five_dim_instance(self):
        # magnitudes |local-global| = (0.5, 2.0, 0.1, 2.0, 1.0); top 2 with the
        # tie rule picks indices 1 and 3; values are the local parameters there
        local = np.array([1.5, -2.0, 0.1, 4.0, 0.0])
        global_ = np.array([1.0, 0.0, 0.0, 2.0, -1.0])
        up = make_sparse_update(local, global_, 2, 25)
        assert up.mask.selected.tolist() == [1, 3]
        assert np.array_equal(up.values, [-2.0, 4.0])
        assert up.sender_data_size == 25

    def test_values_are_parameters_not_deltas(self):
        local = np.array([5.0, 0.0])
        global_ = np.array([1.0, 0.0])
        up = make_sparse_update(local, global_, 1, 1)
        assert up.values.tolist() == [5.0]


class TestSparseUpdateType:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            sparse(4, [0, 1], [1.0], 5)

    def test_negative_data_size_rejected(self):
        with pytest.raises(ValueError):
            sparse(4, [0], [1.0], -1)


class TestAggregateMasked:
    def test_no_updates_is_bit_identical(self):
        global_ = np.array([1.0, -0.0, np.pi])
        out = aggregate_masked(global_, [])
        assert out.tobytes() == global_.tobytes()

    def test_single_dense_sender_is_adopted_exactly(self):
        local = np.array([0.1, 0.2, 0.3])
        up = make_sparse_update(local, np.zeros(3), 3, 7)
        out = aggregate_masked(np.zeros(3), [up])
        assert np.array_equal(out, local)

    def test_documented_two_sender_example(self):
        # masks {0,1} and {1,2}, sizes 10 and 30; coord 1 = 0.25 A + 0.75 B
        a = sparse(3, [0, 1], [1.0, 2.0], 10)
        b = sparse(3, [1, 2], [6.0, 9.0], 30)
        out = aggregate_masked(np.full(3, -5.0), [a, b])
        assert out[0] == 1.0
        np.testing.assert_allclose(out[1], 0.25 * 2.0 + 0.75 * 6.0, rtol=1e-12)
        assert out[2] == 9.0

    def test_matches_per_coordinate_oracle_bitwise(self):
        rng = np.random.default_rng(1)
        d = 12
        global_ = rng.standard_normal(d)
        updates = []
        for k in range(4):
            sel = np.sort(rng.choice(d, size=rng.integers(1, d + 1), replace=False))
            updates.append(
                sparse(d, sel, rng.standard_normal(len(sel)), int(rng.integers(1, 50)))
            )
        out = aggregate_masked(global_, updates)
        want = masked_average_oracle(global_, updates)
        assert out.tobytes() == want.tobytes()

    def test_dense_equivalence_with_classical_fedavg(self):
        rng = np.random.default_rng(2)
        d = 9
        locals_ = [rng.standard_normal(d) for _ in range(5)]
        sizes = [3, 11, 7, 2, 20]
        updates = [
            make_sparse_update(v, np.zeros(d), d, s) for v, s in zip(locals_, sizes)
        ]
        out = aggregate_masked(rng.standard_normal(d), updates)
        want = dense_fedavg_oracle(locals_, sizes)
        assert out.tobytes() == want.tobytes()

    def test_stale_coordinates_keep_exact_bits(self):
        global_ = np.array([-0.0, 1e-310, 3.0, -7.25])
        up = sparse(4, [2], [100.0], 5)
        out = aggregate_masked(global_, [up])
        assert out[2] == 100.0
        for i in (0, 1, 3):
            assert out[i].tobytes() == global_[i].tobytes()

    def test_identical_senders_are_idempotent(self):
        v = np.array([0.1, 0.1, 0.1])
        ups = [make_sparse_update(v, np.zeros(3), 3, s) for s in (1, 5, 9)]
        out = aggregate_masked(np.zeros(3), ups)
        assert np.array_equal(out, v)

    def test_weights_sum_to_one_per_coordinate(self):
        rng = np.random.default_rng(3)
        d = 8
        updates = []
        for _ in range(5):
            sel = np.sort(rng.choice(d, size=rng.integers(1, d + 1), replace=False))
            updates.append(
                sparse(d, sel, rng.standard_normal(len(sel)), int(rng.integers(1, 40)))
            )
        total = np.zeros(d)
        for u in updates:
            total[u.mask.selected] += float(u.sender_data_size)
        for i in range(d):
            senders = [u for u in updates if i in set(u.mask.selected.tolist())]
            if not senders:
                continue
            weights = [u.sender_data_size / total[i] for u in senders]
            assert abs(sum(weights) - 1.0) <= 1e-15

    def test_permutation_changes_result_only_by_rounding(self):
        rng = np.random.default_rng(4)
        d = 10
        global_ = rng.standard_normal(d)
        updates = []
        for _ in range(6):
            sel = np.sort(rng.choice(d, size=rng.integers(1, d + 1), replace=False))
            updates.append(
                sparse(d, sel, rng.standard_normal(len(sel)), int(rng.integers(1, 30)))
            )
        out = aggregate_masked(global_, updates)
        shuffled = [updates[i] for i in rng.permutation(len(updates))]
        out2 = aggregate_masked(global_, shuffled)
        # same coordinates updated, values differ by rounding only
        assert np.array_equal(out == global_, out2 == global_)
        np.testing.assert_allclose(out2, out, rtol=1e-12, atol=1e-15)

    def test_zero_data_size_alone_on_a_coordinate_raises(self):
        up = sparse(3, [1], [2.0], 0)
        with pytest.raises(AggregationError) as info:
            aggregate_masked(np.zeros(3), [up])
        assert "coordinate 1" in str(info.value)

    def test_zero_data_size_sharing_a_coordinate_is_fine(self):
        a = sparse(3, [1], [2.0], 0)
        b = sparse(3, [1], [4.0], 10)
        out = aggregate_masked(np.zeros(3), [a, b])
        np.testing.assert_allclose(out[1], 4.0, rtol=1e-15)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            aggregate_masked(np.zeros(4), [sparse(3, [0], [1.0], 1)])


class TestUplinkCost:
    def test_counts(self):
        assert uplink_cost(sparse(9, [1, 4, 7], [0.0, 0.0, 0.0], 2)) == (3, 3)
        assert uplink_cost(sparse(9, [], [], 2)) == (0, 0)
