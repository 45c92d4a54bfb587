"""Physical set layouts and intersection/union kernels.

A Set is a sorted collection of dictionary-encoded 32-bit ids over a
half-open universe [lo, hi). Two layouts exist:

  * ``uint`` -- sorted unique uint32 array (sparse)
  * ``bs``   -- bitset over the universe, stored as uint64 words (dense)

Sets are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import numpy as np

from .errors import WcojError

UINT = "uint"
BS = "bs"

# Default density at which a bitset word becomes cheaper than a 32-bit id.
DENSITY_THRESHOLD = 1.0 / 32.0

# Cardinality ratio beyond which uint/uint intersection gallops instead of merging.
GALLOP_RATIO = 32

# icost units per layout pair (dimensionless).
LAYOUT_COST = {
    (BS, BS): 1,
    (BS, UINT): 10,
    (UINT, BS): 10,
    (UINT, UINT): 50,
}

_EMPTY_IDS = np.empty(0, dtype=np.uint32)


class Set:
    """Immutable sorted id set with a sparse or dense physical layout."""

    __slots__ = ("layout", "lo", "hi", "cardinality", "ids", "words", "word_base",
                 "_cum", "_decoded")

    def __init__(self, layout, lo, hi, cardinality, ids=None, words=None, word_base=0):
        self.layout = layout
        self.lo = lo
        self.hi = hi
        self.cardinality = cardinality
        self.ids = ids
        self.words = words
        self.word_base = word_base
        self._cum = None
        self._decoded = None

    @classmethod
    def sparse(cls, ids, lo, hi):
        return cls(UINT, lo, hi, len(ids), ids=np.ascontiguousarray(ids, dtype=np.uint32))

    @classmethod
    def dense_from_ids(cls, ids, lo, hi):
        word_base = lo >> 6
        nwords = ((hi + 63) >> 6) - word_base
        words = np.zeros(nwords, dtype=np.uint64)
        widx = (ids >> 6).astype(np.int64) - word_base
        masks = np.uint64(1) << (ids.astype(np.uint64) & np.uint64(63))
        np.bitwise_or.at(words, widx, masks)
        return cls(BS, lo, hi, len(ids), words=words, word_base=word_base)

    @classmethod
    def empty(cls, lo=0, hi=0):
        return cls(UINT, lo, hi, 0, ids=_EMPTY_IDS)

    def __len__(self):
        return self.cardinality

    def __repr__(self):
        return f"Set({self.layout}, card={self.cardinality}, universe=[{self.lo},{self.hi}))"

    def density(self):
        span = self.hi - self.lo
        return self.cardinality / span if span else 0.0

    def to_array(self):
        """Member ids as a sorted uint32 array (memoized for bitsets)."""
        if self.layout == UINT:
            return self.ids
        if self._decoded is None:
            bits = np.unpackbits(self.words.view(np.uint8), bitorder="little")
            self._decoded = (np.flatnonzero(bits) + self.word_base * 64).astype(np.uint32)
        return self._decoded

    def _cumulative(self):
        # per-word popcount prefix sums, for rank queries on bitsets
        if self._cum is None:
            counts = np.bitwise_count(self.words).astype(np.int64)
            self._cum = np.concatenate(([0], np.cumsum(counts)))
        return self._cum

    def contains(self, value):
        if value < self.lo or value >= self.hi:
            return False
        if self.layout == UINT:
            i = np.searchsorted(self.ids, value)
            return i < len(self.ids) and self.ids[i] == value
        w = (value >> 6) - self.word_base
        return bool((int(self.words[w]) >> (value & 63)) & 1)

    def rank(self, value):
        """Position of a member id within the set. Caller guarantees membership."""
        if self.layout == UINT:
            return int(np.searchsorted(self.ids, value))
        w = (value >> 6) - self.word_base
        cum = self._cumulative()
        below = int(self.words[w]) & ((1 << (value & 63)) - 1)
        return int(cum[w]) + below.bit_count()

    def positions_of(self, values):
        """Vectorized rank for an array of member ids."""
        if self.layout == UINT:
            return np.searchsorted(self.ids, values)
        cum = self._cumulative()
        w = (values >> 6).astype(np.int64) - self.word_base
        below = self.words[w] & ((np.uint64(1) << (values.astype(np.uint64) & np.uint64(63))) - np.uint64(1))
        return cum[w] + np.bitwise_count(below).astype(np.int64)

    def contains_mask(self, values):
        """Vectorized membership test for an id array."""
        inside = (values >= self.lo) & (values < self.hi)
        if self.layout == UINT:
            pos = np.searchsorted(self.ids, values)
            pos_c = np.minimum(pos, max(len(self.ids) - 1, 0))
            hit = inside & (pos < len(self.ids))
            if len(self.ids):
                hit &= self.ids[pos_c] == values
            return hit
        w = np.where(inside, (values >> 6).astype(np.int64) - self.word_base, 0)
        bit = (self.words[w] >> (values.astype(np.uint64) & np.uint64(63))) & np.uint64(1)
        return inside & bit.astype(bool)


def build_set(values, universe, threshold=DENSITY_THRESHOLD):
    """Build a Set from sorted distinct ids over ``universe = (lo, hi)``.

    Layout is dense iff cardinality/(hi-lo) >= threshold.
    """
    lo, hi = universe
    arr = np.asarray(values, dtype=np.uint32)
    if len(arr):
        if np.any(arr[1:] <= arr[:-1]):
            raise WcojError("build_set requires sorted distinct values")
        if arr[0] < lo or arr[-1] >= hi:
            raise WcojError(f"build_set values outside universe [{lo},{hi})")
    span = hi - lo
    if span > 0 and len(arr) / span >= threshold and len(arr) > 0:
        return Set.dense_from_ids(arr, lo, hi)
    return Set.sparse(arr, lo, hi)


def _intersect_uu(a, b):
    small, large = (a, b) if a.cardinality <= b.cardinality else (b, a)
    if large.cardinality > small.cardinality * GALLOP_RATIO:
        # galloping: binary-search each small id into the large array
        pos = np.searchsorted(large.ids, small.ids)
        pos_c = np.minimum(pos, len(large.ids) - 1)
        hit = large.ids[pos_c] == small.ids
        hit &= pos < len(large.ids)
        return small.ids[hit]
    return np.intersect1d(a.ids, b.ids, assume_unique=True)


def _intersect_ub(u, b):
    ids = u.ids
    lo_i = np.searchsorted(ids, max(u.lo, b.lo))
    hi_i = np.searchsorted(ids, min(u.hi, b.hi))
    ids = ids[lo_i:hi_i]
    if not len(ids):
        return _EMPTY_IDS
    w = (ids >> 6).astype(np.int64) - b.word_base
    bit = (b.words[w] >> (ids.astype(np.uint64) & np.uint64(63))) & np.uint64(1)
    return ids[bit.astype(bool)]


def intersect(a, b, counters=None):
    """Intersect two Sets over a shared id space.

    Output universe is the overlap of the input universes. The kernel is
    dispatched by layout pair: word AND for bs/bs, bitset probe for
    uint/bs, merge or galloping for uint/uint.
    """
    if counters is not None:
        counters.intersections += 1
    lo = max(a.lo, b.lo)
    hi = min(a.hi, b.hi)
    if lo >= hi or a.cardinality == 0 or b.cardinality == 0:
        return Set.empty(lo, max(lo, hi))
    if a.layout == BS and b.layout == BS:
        wlo = lo >> 6
        whi = ((hi + 63) >> 6)
        wa = a.words[wlo - a.word_base : whi - a.word_base]
        wb = b.words[wlo - b.word_base : whi - b.word_base]
        words = wa & wb
        card = int(np.bitwise_count(words).sum())
        return Set(BS, lo, hi, card, words=words, word_base=wlo)
    if a.layout == UINT and b.layout == UINT:
        ids = _intersect_uu(a, b)
    elif a.layout == UINT:
        ids = _intersect_ub(a, b)
    else:
        ids = _intersect_ub(b, a)
    return Set.sparse(ids, lo, hi)


def intersect_many(sets, counters=None):
    """Fold intersections over two or more operand sets, bitsets first."""
    smallest = min(sets, key=lambda s: s.cardinality)
    if smallest.cardinality <= 2:
        # probe the tiny operand's ids straight into the others
        if counters is not None:
            counters.intersections += len(sets) - 1
        lo = max(s.lo for s in sets)
        hi = min(s.hi for s in sets)
        survivors = [
            v for v in smallest.to_array().tolist()
            if lo <= v < hi and all(s is smallest or s.contains(v) for s in sets)
        ]
        return Set.sparse(np.array(survivors, dtype=np.uint32), lo, max(lo, hi))
    ordered = sorted(sets, key=lambda s: (0 if s.layout == BS else 1, s.cardinality))
    acc = ordered[0]
    for s in ordered[1:]:
        if acc.cardinality == 0:
            break
        acc = intersect(acc, s, counters)
    return acc


def icost(layouts):
    """icost units of intersecting >= 2 operands with the given layouts.

    Pairwise table lookup for N=2; for N>2 the layouts are sorted bs-first
    and folded pairwise, the running operand keeping layout bs only while
    all inputs so far were bs.
    """
    if len(layouts) < 2:
        raise WcojError("icost needs at least two operand layouts")
    ordered = sorted(layouts, key=lambda l: 0 if l == BS else 1)
    cur = ordered[0]
    total = 0
    for nxt in ordered[1:]:
        total += LAYOUT_COST[(cur, nxt)]
        cur = BS if (cur == BS and nxt == BS) else UINT
    return total


# --- union accumulation -------------------------------------------------

BITSET_ARRAY = "BITSET_ARRAY"
HASH_TABLE = "HASH_TABLE"

# Predicted output density at which the bitset union beats the hash map.
GROUPBY_KEY_DENSITY = 1.0 / 16.0


def choose_union_strategy(predicted_density, threshold=GROUPBY_KEY_DENSITY):
    return BITSET_ARRAY if predicted_density >= threshold else HASH_TABLE


class UnionAccumulator:
    """Accumulates (id, values) streams into a key union with semiring sums.

    Exposes exactly one materialized key level; the accumulator is bound to
    a fixed universe and a fixed list of value components. Single-owner:
    parallel callers each use their own accumulator and merge results.

    BITSET_ARRAY ORs keys into a bitset and scatters values into dense
    arrays (cost ~ universe size, cheap per element). HASH_TABLE is the
    sparse upsert table, realized as buffered (key, value) runs compacted
    by a sort + segmented reduce at finalize (cost ~ stream size).

    components: list of (dtype, add_ufunc, add_identity).
    """

    def __init__(self, universe, components, strategy):
        self.lo, self.hi = universe
        self.components = components
        self.strategy = strategy
        if strategy == BITSET_ARRAY:
            span = self.hi - self.lo
            nwords = ((self.hi + 63) >> 6) - (self.lo >> 6)
            self._words = np.zeros(nwords, dtype=np.uint64)
            self._word_base = self.lo >> 6
            self._dense = [np.full(span, ident, dtype=dt) for dt, _, ident in components]
        else:
            self._id_runs = []
            self._val_runs = [[] for _ in components]

    def add(self, ids, value_arrays):
        if len(ids) == 0:
            return
        if ids[0] < self.lo or ids[-1] >= self.hi:
            raise WcojError("union accumulator got id outside its universe")
        if self.strategy == BITSET_ARRAY:
            w = (ids >> 6).astype(np.int64) - self._word_base
            masks = np.uint64(1) << (ids.astype(np.uint64) & np.uint64(63))
            np.bitwise_or.at(self._words, w, masks)
            off = ids.astype(np.int64) - self.lo
            for (dt, ufunc, _), dense, vals in zip(self.components, self._dense, value_arrays):
                ufunc.at(dense, off, vals)
        else:
            self._id_runs.append(ids)
            for runs, vals in zip(self._val_runs, value_arrays):
                runs.append(vals)

    def result(self):
        """Finalize into (Set, per-component value arrays aligned to the set)."""
        if self.strategy == BITSET_ARRAY:
            bits = np.unpackbits(self._words.view(np.uint8), bitorder="little")
            ids = (np.flatnonzero(bits) + self._word_base * 64).astype(np.uint32)
            out = build_set(ids, (self.lo, self.hi))
            vals = [dense[ids.astype(np.int64) - self.lo] for dense in self._dense]
            return out, vals
        if not self._id_runs:
            return build_set([], (self.lo, self.hi)), [
                np.empty(0, dtype=dt) for dt, _, _ in self.components
            ]
        all_ids = np.concatenate(self._id_runs)
        keys, inverse = np.unique(all_ids, return_inverse=True)
        out = build_set(keys.astype(np.uint32), (self.lo, self.hi))
        vals = []
        for (dt, ufunc, ident), runs in zip(self.components, self._val_runs):
            merged = np.concatenate([np.asarray(r, dtype=dt) for r in runs])
            acc = np.full(len(keys), ident, dtype=dt)
            ufunc.at(acc, inverse, merged)
            vals.append(acc)
        return out, vals
