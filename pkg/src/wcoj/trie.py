"""Trie storage: dictionary-encoded key levels plus side annotation buffers.

A relation's key attributes are stored as a trie of Sets, one level per key
column. Annotations live in separate buffers anchored at the leaf level and
are loaded lazily so a query touching only some columns never materializes
the rest (access counts are kept per annotation for verification).
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestError, SchemaError, WcojError
from .sets import DENSITY_THRESHOLD, Set, build_set

KEY = "key"
ANNOTATION = "annotation"

_NUMPY_TYPES = {
    "int": np.int64,
    "long": np.int64,
    "float": np.float64,
    "double": np.float64,
}

_PREFIX_RE = re.compile(r"^[A-Za-z]{1,2}_")


def default_domain(column_name):
    """Columns with a short table prefix (`o_custkey`, `c_custkey`) share a
    dictionary domain by stripping the one- or two-letter prefix."""
    stripped = _PREFIX_RE.sub("", column_name)
    return stripped if stripped else column_name


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    type: str
    domain: str = ""

    def resolved_domain(self):
        return self.domain or default_domain(self.name)


@dataclass
class Schema:
    relation: str
    columns: list
    key_order: list = field(default_factory=list)
    on_duplicate: str = "error"

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(names) != len(set(names)):
            raise SchemaError(f"duplicate column names in relation {self.relation}")
        if not self.columns:
            raise SchemaError(f"relation {self.relation} has no columns")
        if not self.key_columns():
            raise SchemaError(f"relation {self.relation} needs at least one key column")
        if not self.key_order:
            self.key_order = [c.name for c in self.key_columns()]
        if self.on_duplicate not in ("error", "sum", "min", "max"):
            raise SchemaError(f"unknown on_duplicate policy {self.on_duplicate!r}")

    def key_columns(self):
        return [c for c in self.columns if c.kind == KEY]

    def annotation_columns(self):
        return [c for c in self.columns if c.kind == ANNOTATION]

    def column(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"no column {name!r} in relation {self.relation}")

    @classmethod
    def from_json(cls, doc):
        try:
            cols = [
                Column(c["name"], c["kind"], c["type"], c.get("domain", ""))
                for c in doc["columns"]
            ]
            for c in cols:
                if c.kind not in (KEY, ANNOTATION):
                    raise SchemaError(f"column {c.name}: kind must be key or annotation")
                if c.type not in ("int", "long", "float", "double", "string"):
                    raise SchemaError(f"column {c.name}: unknown type {c.type!r}")
            return cls(
                relation=doc["relation"],
                columns=cols,
                key_order=list(doc.get("key_order", [])),
                on_duplicate=doc.get("on_duplicate", "error"),
            )
        except KeyError as e:
            raise SchemaError(f"schema document missing field {e}") from None

    def to_json(self):
        return {
            "relation": self.relation,
            "columns": [
                {"name": c.name, "kind": c.kind, "type": c.type, **({"domain": c.domain} if c.domain else {})}
                for c in self.columns
            ],
            "key_order": self.key_order,
            "on_duplicate": self.on_duplicate,
        }


class Dictionary:
    """Bijection raw value <-> dense id [0, n) for one attribute domain."""

    def __init__(self, domain, is_string=False):
        self.domain = domain
        self.is_string = is_string
        self._decode = []
        self._ids = {}
        self._decode_arr = None

    def __len__(self):
        return len(self._decode)

    def add_and_encode(self, values):
        """Register unseen raw values (in sorted order) and encode the column."""
        uniq = sorted(set(values))
        new = [v for v in uniq if v not in self._ids]
        for v in new:
            self._ids[v] = len(self._decode)
            self._decode.append(v)
        if new:
            self._decode_arr = None
        ids = self._ids
        return np.fromiter((ids[v] for v in values), dtype=np.uint32, count=len(values))

    def encode_one(self, value):
        got = self._ids.get(value)
        if got is None:
            raise WcojError(f"value {value!r} not present in domain {self.domain}")
        return got

    def try_encode_one(self, value):
        return self._ids.get(value)

    def decode_array(self, ids):
        if self.is_string or (self._decode and isinstance(self._decode[0], str)):
            dec = self._decode
            return [dec[int(i)] for i in ids]
        if self._decode_arr is None:
            self._decode_arr = np.asarray(self._decode)
        return self._decode_arr[np.asarray(ids, dtype=np.int64)]

    def decode_one(self, i):
        return self._decode[int(i)]


@dataclass
class Level:
    sets: list
    offsets: np.ndarray  # per-set start position in this level's path numbering
    universe: tuple
    _flat: np.ndarray = None

    @property
    def n_paths(self):
        return int(self.offsets[-1])

    def flat_ids(self):
        """All member ids across the level's sets, in path order (memoized)."""
        if self._flat is None:
            if self.sets:
                self._flat = np.concatenate([s.to_array() for s in self.sets])
            else:
                self._flat = np.empty(0, dtype=np.uint32)
        return self._flat

    def census(self):
        n_bs = sum(1 for s in self.sets if s.layout == "bs")
        return {"uint": len(self.sets) - n_bs, "bs": n_bs}


class AnnotationBuffer:
    """Leaf-anchored value buffer, materialized on first access."""

    def __init__(self, column, loader):
        self.column = column
        self._loader = loader
        self._values = None
        self.loads = 0

    @property
    def loaded(self):
        return self._values is not None

    def values(self):
        if self._values is None:
            self._values = self._loader()
            self.loads += 1
        return self._values


class Trie:
    """Immutable per-relation index over key attributes."""

    def __init__(self, name, key_cols, levels, annotations, n_rows):
        self.name = name
        self.key_cols = key_cols
        self.levels = levels
        self.annotations = annotations
        self.n_rows = n_rows

    @property
    def cardinality(self):
        return self.n_rows

    @property
    def n_levels(self):
        return len(self.levels)

    def key_names(self):
        return [c.name for c in self.key_cols]

    def root(self):
        return self.levels[0].sets[0]

    def level_set(self, level, parent_pos):
        return self.levels[level].sets[parent_pos]

    def child_base(self, level, parent_pos):
        return int(self.levels[level].offsets[parent_pos])

    def probe(self, prefix):
        """Child Set under a key prefix; empty Set when the prefix is absent."""
        if len(prefix) >= self.n_levels:
            raise WcojError(
                f"probe prefix of length {len(prefix)} on a {self.n_levels}-level trie"
            )
        pos = 0
        for l, value in enumerate(prefix):
            s = self.levels[l].sets[pos]
            if not s.contains(value):
                return Set.empty(*self.levels[l + 1].universe)
            pos = int(self.levels[l].offsets[pos]) + s.rank(value)
        return self.levels[len(prefix)].sets[pos]

    def path_position(self, path):
        """Leaf-order position of a full key path, or None when absent."""
        if len(path) != self.n_levels:
            raise WcojError("path must cover every trie level")
        pos = 0
        for l, value in enumerate(path):
            s = self.levels[l].sets[pos]
            if not s.contains(value):
                return None
            pos = int(self.levels[l].offsets[pos]) + s.rank(value)
        return pos

    def annotation_at(self, path, name):
        pos = self.path_position(path)
        if pos is None:
            raise WcojError(f"path {tuple(path)} not present in relation {self.name}")
        return self.annotations[name].values()[pos]

    def is_fully_dense(self):
        for level in self.levels:
            lo, hi = level.universe
            span = hi - lo
            if span == 0:
                return False
            for s in level.sets:
                if s.cardinality != span:
                    return False
        return True

    def dense_view(self, name):
        """Row-major flat buffer of one annotation, present only when every
        level is fully dense over its universe."""
        if name not in self.annotations or not self.is_fully_dense():
            return None
        shape = tuple(hi - lo for lo, hi in (l.universe for l in self.levels))
        return DenseAnnotationView(self.annotations[name].values(), shape)

    def tuples(self):
        """All leaf key paths as an (n_rows, n_levels) int64 matrix."""
        k = self.n_levels
        streams = [
            np.concatenate([s.to_array() for s in level.sets]).astype(np.int64)
            if level.sets
            else np.empty(0, dtype=np.int64)
            for level in self.levels
        ]
        mult = np.ones(len(streams[k - 1]), dtype=np.int64)
        cols = [None] * k
        cols[k - 1] = streams[k - 1]
        for l in range(k - 2, -1, -1):
            offs = self.levels[l + 1].offsets
            mult = np.add.reduceat(mult, offs[:-1]) if len(mult) else mult
            cols[l] = np.repeat(streams[l], mult)
        return np.column_stack(cols)

    def census(self):
        return [level.census() for level in self.levels]

    def annotation_loads(self):
        return {name: buf.loads for name, buf in self.annotations.items()}


@dataclass
class DenseAnnotationView:
    buffer: np.ndarray
    shape: tuple

    def as_matrix(self):
        return self.buffer.reshape(self.shape)


_COMBINE = {"sum": np.add, "min": np.minimum, "max": np.maximum}


def _collapse(values, starts, combine):
    if combine is None:
        return values[starts]
    segmented = _COMBINE[combine].reduceat(values, starts)
    return segmented


def build_trie(
    name,
    key_cols,
    ids_matrix,
    universes,
    ann_values,
    ann_cols,
    on_duplicate="error",
    threshold=DENSITY_THRESHOLD,
    row_numbers=None,
    presorted=False,
):
    """Assemble a Trie from encoded key ids plus raw annotation columns.

    ids_matrix: (N, K) uint32; universes: per-level (lo, hi); ann_values:
    dict name -> raw numpy array aligned to rows; ann_cols: dict name ->
    Column. Rows are sorted by key tuple; duplicate key tuples collapse via
    the on_duplicate combine, or raise naming the offending source row.
    """
    n, k = ids_matrix.shape
    if n == 0:
        levels = [Level([Set.empty(*u)], np.array([0], dtype=np.int64), u) for u in universes]
        anns = {
            nm: AnnotationBuffer(ann_cols[nm], lambda nm=nm: np.empty(0, dtype=_ann_dtype(ann_cols[nm])))
            for nm in ann_values
        }
        return Trie(name, key_cols, levels, anns, 0)

    if presorted:
        perm = np.arange(n)
        sorted_ids = ids_matrix
    else:
        perm = np.lexsort(tuple(ids_matrix[:, l] for l in range(k - 1, -1, -1)))
        sorted_ids = ids_matrix[perm]

    same = np.ones(n, dtype=bool)
    same[0] = False
    for l in range(k):
        same[1:] &= sorted_ids[1:, l] == sorted_ids[:-1, l]
    starts = np.flatnonzero(~same)
    has_dups = len(starts) != n
    if has_dups and on_duplicate == "error":
        dup_idx = int(np.flatnonzero(same)[0])
        src = int(perm[dup_idx])
        rownum = int(row_numbers[src]) if row_numbers is not None else src + 1
        raise IngestError(
            f"relation {name}: duplicate key tuple at row {rownum} "
            f"(declare on_duplicate to combine)"
        )

    unique_rows = sorted_ids[starts]
    m = len(unique_rows)

    # newpath[l][i]: row i begins a new distinct prefix of length l+1
    levels = []
    prev_new = None  # newpath flags for level l-1
    n_paths_prev = 1
    for l in range(k):
        new = np.empty(m, dtype=bool)
        new[0] = True
        changed = unique_rows[1:, l] != unique_rows[:-1, l]
        new[1:] = changed if prev_new is None else (prev_new[1:] | changed)
        stream = unique_rows[new, l].astype(np.uint32)
        if l == 0:
            counts = np.array([len(stream)], dtype=np.int64)
        else:
            parent_index = np.cumsum(prev_new) - 1
            counts = np.bincount(parent_index[new], minlength=n_paths_prev)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        universe = universes[l]
        sets = [
            build_set(stream[offsets[p]: offsets[p + 1]], universe, threshold)
            for p in range(len(counts))
        ]
        levels.append(Level(sets, offsets.astype(np.int64), universe))
        n_paths_prev = int(offsets[-1])
        prev_new = new

    combine = None if on_duplicate == "error" or not has_dups else on_duplicate
    anns = {}
    for col_name, raw in ann_values.items():
        col = ann_cols[col_name]
        dtype = _ann_dtype(col)
        if col.type == "string":
            if has_dups and combine is not None:
                raise IngestError(
                    f"relation {name}: cannot combine duplicate string annotation {col_name}"
                )
            def loader(raw=raw, perm=perm, starts=starts):
                arr = np.asarray(raw, dtype=object)[perm]
                return arr[starts]
        else:
            def loader(raw=raw, perm=perm, starts=starts, dtype=dtype, combine=combine):
                arr = np.asarray(raw, dtype=dtype)[perm]
                return _collapse(arr, starts, combine)
        anns[col_name] = AnnotationBuffer(col, loader)

    return Trie(name, key_cols, levels, anns, m)


def _ann_dtype(col):
    if col.type == "string":
        return object
    return _NUMPY_TYPES[col.type]


def ingest(schema, columns, dictionaries, key_order=None, threshold=DENSITY_THRESHOLD, row_numbers=None):
    """Encode parsed columns through the shared dictionaries and build the trie.

    columns: dict name -> python list or numpy array of raw values.
    dictionaries: dict domain -> Dictionary (extended in place).
    """
    key_order = list(key_order or schema.key_order)
    key_cols = [schema.column(nm) for nm in key_order]
    for c in key_cols:
        if c.kind != KEY:
            raise SchemaError(f"key_order column {c.name} is not a key column")
    n = len(next(iter(columns.values()))) if columns else 0

    ids_cols = []
    universes = []
    for c in key_cols:
        domain = c.resolved_domain()
        d = dictionaries.get(domain)
        if d is None:
            d = Dictionary(domain, is_string=(c.type == "string"))
            dictionaries[domain] = d
        raw = columns[c.name]
        if c.type in ("int", "long"):
            raw = [int(v) for v in raw] if not isinstance(raw, np.ndarray) else raw.tolist()
        ids_cols.append(d.add_and_encode(raw))
        universes.append((0, len(d)))
    ids_matrix = np.column_stack(ids_cols) if ids_cols else np.empty((n, 0), dtype=np.uint32)

    ann_cols = {c.name: c for c in schema.annotation_columns()}
    ann_values = {}
    for nm, col in ann_cols.items():
        raw = columns[nm]
        if col.type == "string":
            ann_values[nm] = np.asarray(raw, dtype=object)
        else:
            ann_values[nm] = np.asarray(raw, dtype=_ann_dtype(col))

    return build_trie(
        schema.relation,
        key_cols,
        ids_matrix,
        universes,
        ann_values,
        ann_cols,
        on_duplicate=schema.on_duplicate,
        threshold=threshold,
        row_numbers=row_numbers,
    )


def filter_leaves(trie, mask, threshold=DENSITY_THRESHOLD):
    """New trie keeping only leaf paths where mask is true (annotations follow)."""
    tup = trie.tuples()[mask].astype(np.uint32)
    universes = [level.universe for level in trie.levels]
    ann_cols = {nm: buf.column for nm, buf in trie.annotations.items()}
    ann_values = {nm: buf.values()[mask] for nm, buf in trie.annotations.items()}
    return build_trie(
        trie.name, trie.key_cols, tup, universes, ann_values, ann_cols,
        on_duplicate="error", threshold=threshold, presorted=True,
    )


def rekey(trie, new_key_names, threshold=DENSITY_THRESHOLD):
    """Materialize the same relation under a different key order."""
    old_names = trie.key_names()
    order = [old_names.index(nm) for nm in new_key_names]
    tup = trie.tuples()[:, order].astype(np.uint32)
    perm = np.lexsort(tuple(tup[:, l] for l in range(tup.shape[1] - 1, -1, -1)))
    tup = tup[perm]
    universes = [trie.levels[i].universe for i in order]
    key_cols = [trie.key_cols[i] for i in order]
    ann_cols = {nm: buf.column for nm, buf in trie.annotations.items()}
    ann_values = {nm: buf.values()[perm] for nm, buf in trie.annotations.items()}
    return build_trie(
        trie.name, key_cols, tup, universes, ann_values, ann_cols,
        on_duplicate="error", threshold=threshold, presorted=True,
    )


# --- file formats ---------------------------------------------------------


def read_delimited(path, schema, delimiter=","):
    """Parse a delimited file (first line header) into raw columns."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        names = [h.strip() for h in header]
        expected = {c.name for c in schema.columns}
        if set(names) != expected:
            raise IngestError(
                f"{path}: header {names} does not match schema columns {sorted(expected)}"
            )
        cols = {nm: [] for nm in names}
        converters = {}
        for c in schema.columns:
            if c.type in ("int", "long"):
                converters[c.name] = int
            elif c.type in ("float", "double"):
                converters[c.name] = float
            else:
                converters[c.name] = str
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(names):
                raise IngestError(f"{path}: row {lineno}: expected {len(names)} fields, got {len(row)}")
            for nm, value in zip(names, row):
                try:
                    cols[nm].append(converters[nm](value))
                except ValueError:
                    raise IngestError(
                        f"{path}: row {lineno}: cannot parse {value!r} as {schema.column(nm).type}"
                    ) from None
    n = len(next(iter(cols.values()))) if cols else 0
    row_numbers = np.arange(2, n + 2, dtype=np.int64)
    return cols, row_numbers


def read_matrix_market(path):
    """Read a MatrixMarket coordinate file as (i, j, v) columns, 0-based."""
    with open(path, encoding="utf-8") as f:
        header = f.readline()
        if not header.startswith("%%MatrixMarket"):
            raise IngestError(f"{path}: not a MatrixMarket file")
        parts = header.split()
        if len(parts) < 5 or parts[1] != "matrix" or parts[2] != "coordinate":
            raise IngestError(f"{path}: only coordinate matrices are supported")
        value_kind = parts[3]
        if value_kind not in ("real", "integer", "pattern"):
            raise IngestError(f"{path}: unsupported value type {value_kind!r}")
        line = f.readline()
        while line.startswith("%"):
            line = f.readline()
        dims = line.split()
        if len(dims) != 3:
            raise IngestError(f"{path}: bad size line {line!r}")
        nnz = int(dims[2])
        i_col, j_col, v_col = [], [], []
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.split()
            i_col.append(int(fields[0]) - 1)
            j_col.append(int(fields[1]) - 1)
            v_col.append(float(fields[2]) if value_kind != "pattern" else 1.0)
        if len(i_col) != nnz:
            raise IngestError(f"{path}: expected {nnz} entries, found {len(i_col)}")
    return {"i": i_col, "j": j_col, "v": v_col}


def matrix_schema(relation, on_duplicate="sum", domain=None):
    """Schema for a matrix relation (i KEY, j KEY, v ANNOTATION double).

    Both index columns share one dictionary domain so self-joins and
    matrix-matrix products compare ids from the same space.
    """
    domain = domain or f"{relation}_dim"
    return Schema(
        relation=relation,
        columns=[
            Column("i", KEY, "int", domain),
            Column("j", KEY, "int", domain),
            Column("v", ANNOTATION, "double"),
        ],
        key_order=["i", "j"],
        on_duplicate=on_duplicate,
    )


def load_schema_file(path):
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON: {e}") from None
    return Schema.from_json(doc)
