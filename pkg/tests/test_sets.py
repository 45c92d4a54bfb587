import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wcoj.errors import WcojError
from wcoj.sets import (
    BITSET_ARRAY,
    BS,
    HASH_TABLE,
    LAYOUT_COST,
    Set,
    UINT,
    UnionAccumulator,
    build_set,
    choose_union_strategy,
    icost,
    intersect,
    intersect_many,
)

SUM_COMPONENT = [(np.float64, np.add, 0.0)]


class TestBuildSet:
    def test_empty_is_sparse(self):
        s = build_set([], (0, 8))
        assert s.layout == UINT and s.cardinality == 0

    def test_fully_dense(self):
        s = build_set(list(range(8)), (0, 8))
        assert s.layout == BS and s.cardinality == 8

    def test_below_threshold_stays_sparse(self):
        s = build_set([5], (0, 1024))
        assert s.layout == UINT

    def test_threshold_boundary(self):
        # density exactly 1/32 flips to the bitset layout
        s = build_set([7], (0, 32))
        assert s.layout == BS
        s = build_set([7], (0, 33))
        assert s.layout == UINT

    def test_configurable_threshold(self):
        s = build_set([5], (0, 1024), threshold=1e-4)
        assert s.layout == BS

    def test_unsorted_rejected(self):
        with pytest.raises(WcojError):
            build_set([3, 1], (0, 8))

    def test_duplicates_rejected(self):
        with pytest.raises(WcojError):
            build_set([1, 1, 2], (0, 8))

    def test_out_of_universe_rejected(self):
        with pytest.raises(WcojError):
            build_set([9], (0, 8))

    def test_round_trip(self):
        vals = [1, 5, 9, 30]
        for thr in (0.0, 1.0):
            s = build_set(vals, (0, 32), threshold=thr or 1e-9)
            assert s.to_array().tolist() == vals


def _as_layout(values, universe, layout):
    if layout == BS:
        return build_set(values, universe, threshold=0.0 if values else 1.0) \
            if values else build_set(values, universe)
    return build_set(values, universe, threshold=2.0)


class TestIntersect:
    def test_basic(self):
        a = build_set([1, 3, 5], (0, 8))
        b = build_set([3, 5, 7], (0, 8))
        assert intersect(a, b).to_array().tolist() == [3, 5]

    def test_full_universe_identity(self):
        full = build_set(list(range(64)), (0, 64))
        x = build_set([3, 17, 40], (0, 64))
        assert intersect(full, x).to_array().tolist() == [3, 17, 40]

    def test_random_against_merge_oracle(self):
        rng = np.random.default_rng(0)
        a_vals = np.unique(rng.integers(0, 10_000, 1000))
        b_vals = np.unique(rng.integers(0, 10_000, 1000))
        expected = sorted(set(a_vals.tolist()) & set(b_vals.tolist()))
        a = build_set(a_vals, (0, 10_000))
        b = build_set(b_vals, (0, 10_000))
        assert intersect(a, b).to_array().tolist() == expected

    def test_layout_pairs_agree(self):
        # layout is an implementation detail: all four pairings match
        rng = np.random.default_rng(1)
        for _ in range(20):
            hi = int(rng.integers(64, 4096))
            a_vals = np.unique(rng.integers(0, hi, rng.integers(1, hi)))
            b_vals = np.unique(rng.integers(0, hi, rng.integers(1, hi)))
            expected = sorted(set(a_vals.tolist()) & set(b_vals.tolist()))
            for la in (UINT, BS):
                for lb in (UINT, BS):
                    a = _as_layout(a_vals.tolist(), (0, hi), la)
                    b = _as_layout(b_vals.tolist(), (0, hi), lb)
                    got = intersect(a, b).to_array().tolist()
                    assert got == expected, (la, lb)

    def test_galloping_path(self):
        rng = np.random.default_rng(2)
        small = np.unique(rng.integers(0, 100_000, 20))
        large = np.unique(rng.integers(0, 100_000, 5000))
        a = build_set(small, (0, 100_000), threshold=2.0)
        b = build_set(large, (0, 100_000), threshold=2.0)
        expected = sorted(set(small.tolist()) & set(large.tolist()))
        assert intersect(a, b).to_array().tolist() == expected

    def test_disjoint_universes(self):
        a = build_set([1, 2], (0, 4))
        b = build_set([5, 6], (4, 8))
        assert intersect(a, b).cardinality == 0

    def test_universe_is_overlap(self):
        a = build_set([1, 9], (0, 16))
        b = build_set([9, 30], (8, 32))
        out = intersect(a, b)
        assert (out.lo, out.hi) == (8, 16)
        assert out.to_array().tolist() == [9]

    def test_counter_increments(self):
        class C:
            intersections = 0
        c = C()
        a = build_set([1], (0, 8))
        intersect(a, a, c)
        assert c.intersections == 1

    def test_intersect_many_bitsets_first(self):
        dense = build_set(list(range(0, 64, 2)), (0, 64))
        sparse = build_set([0, 2, 63], (0, 64), threshold=2.0)
        out = intersect_many([sparse, dense])
        assert out.to_array().tolist() == [0, 2]


ids_strategy = st.lists(st.integers(0, 255), max_size=40).map(lambda v: sorted(set(v)))


class TestSetProperties:
    @given(ids_strategy, ids_strategy)
    @settings(max_examples=60, deadline=None)
    def test_commutative_and_bounded(self, xs, ys):
        a = build_set(xs, (0, 256))
        b = build_set(ys, (0, 256))
        ab = intersect(a, b).to_array().tolist()
        ba = intersect(b, a).to_array().tolist()
        assert ab == ba
        assert len(ab) <= min(len(xs), len(ys))

    @given(ids_strategy)
    @settings(max_examples=40, deadline=None)
    def test_idempotent_and_empty(self, xs):
        a = build_set(xs, (0, 256))
        assert intersect(a, a).to_array().tolist() == xs
        assert intersect(a, Set.empty(0, 256)).cardinality == 0


class TestIcost:
    def test_pairs_match_table(self):
        assert icost([BS, BS]) == 1
        assert icost([BS, UINT]) == 10
        assert icost([UINT, UINT]) == 50

    def test_cost_ordering(self):
        assert LAYOUT_COST[(BS, BS)] < LAYOUT_COST[(BS, UINT)] < LAYOUT_COST[(UINT, UINT)]

    def test_three_way_fold(self):
        # bs sets processed first; bs/bs keeps a bitset operand
        assert icost([BS, BS, UINT]) == 11
        assert icost([UINT, UINT, UINT]) == 100
        assert icost([BS, UINT, UINT]) == 60

    def test_too_few_operands(self):
        with pytest.raises(WcojError):
            icost([BS])

    @given(st.lists(st.sampled_from([BS, UINT]), min_size=2, max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_permutation_invariant(self, layouts):
        import itertools
        base = icost(layouts)
        for perm in itertools.permutations(layouts):
            assert icost(list(perm)) == base


class TestUnionAccumulator:
    def test_additive(self):
        acc = UnionAccumulator((0, 16), SUM_COMPONENT, HASH_TABLE)
        acc.add(np.array([1], dtype=np.uint32), [np.array([2.0])])
        acc.add(np.array([1], dtype=np.uint32), [np.array([3.0])])
        out, vals = acc.result()
        assert out.to_array().tolist() == [1]
        assert vals[0].tolist() == [5.0]

    def test_empty(self):
        acc = UnionAccumulator((0, 16), SUM_COMPONENT, BITSET_ARRAY)
        acc.add(np.empty(0, dtype=np.uint32), [np.empty(0)])
        out, vals = acc.result()
        assert out.cardinality == 0

    def test_out_of_universe(self):
        acc = UnionAccumulator((0, 16), SUM_COMPONENT, HASH_TABLE)
        with pytest.raises(WcojError):
            acc.add(np.array([20], dtype=np.uint32), [np.array([1.0])])

    def test_random_streams_match_map_oracle(self):
        rng = np.random.default_rng(3)
        streams = []
        for _ in range(100):
            ids = np.unique(rng.integers(0, 500, rng.integers(1, 40))).astype(np.uint32)
            vals = rng.uniform(-1, 1, len(ids))
            streams.append((ids, vals))
        expected = {}
        for ids, vals in streams:
            for i, v in zip(ids.tolist(), vals.tolist()):
                expected[i] = expected.get(i, 0.0) + v
        for strategy in (BITSET_ARRAY, HASH_TABLE):
            acc = UnionAccumulator((0, 500), SUM_COMPONENT, strategy)
            for ids, vals in streams:
                acc.add(ids, [vals])
            out, vals = acc.result()
            assert out.to_array().tolist() == sorted(expected)
            for key, val in zip(out.to_array().tolist(), vals[0].tolist()):
                assert abs(val - expected[key]) < 1e-9

    def test_strategies_identical(self):
        rng = np.random.default_rng(4)
        streams = [
            (np.unique(rng.integers(0, 64, 10)).astype(np.uint32), rng.uniform(0, 1, 0))
            for _ in range(5)
        ]
        streams = [(ids, rng.uniform(0, 1, len(ids))) for ids, _ in streams]
        results = []
        for strategy in (BITSET_ARRAY, HASH_TABLE):
            acc = UnionAccumulator((0, 64), SUM_COMPONENT, strategy)
            for ids, vals in streams:
                acc.add(ids, [vals])
            out, vals = acc.result()
            results.append((out.to_array().tolist(), np.round(vals[0], 12).tolist()))
        assert results[0] == results[1]

    def test_chooser_threshold(self):
        assert choose_union_strategy(0.5) == BITSET_ARRAY
        assert choose_union_strategy(0.001) == HASH_TABLE
        assert choose_union_strategy(1 / 16) == BITSET_ARRAY
