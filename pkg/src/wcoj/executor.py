"""Plan preparation and execution.

A prepared plan is the ordered GHD plus per-node execution metadata. Nodes
execute bottom-up: each runs the generic multiway join over its attribute
order, one attribute equivalence class at a time, intersecting the
participating relations' trie levels (bitset operands first), folding
annotations through the query's semiring components, and handing a result
trie to its parent as one more hyperedge. The root materializes the result
table. Work is split across threads by chunking the root attribute's
survivor set; each worker owns private accumulators merged at the end.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dense as dense_mod
from .errors import ExecutionError, UserError
from .ghd import enumerate_and_select, explain_text, push_down_selections
from .ordering import EdgeInfo, choose_order, enumerate_orders, order_cost, score_relations
from .query_ir import BinOp, Col, eval_annotation_expr, parse, to_hypergraph
from .sets import (
    BITSET_ARRAY,
    Set,
    UnionAccumulator,
    choose_union_strategy,
    intersect_many,
)
from .trie import Column, Dictionary, KEY, build_trie, filter_leaves

PER_WORKER_TABLES = "PER_WORKER_TABLES"
SHARED_CONCURRENT_TABLE = "SHARED_CONCURRENT_TABLE"


@dataclass
class Counters:
    intersections: int = 0
    tuples_materialized: int = 0
    output_tuples: int = 0
    dense_dispatch: int = 0
    dense_fallthrough: int = 0
    groupby_key_bitset: int = 0
    groupby_key_hash: int = 0
    groupby_ann_mode: str = ""

    def merge(self, other):
        self.intersections += other.intersections
        self.tuples_materialized += other.tuples_materialized
        self.output_tuples += other.output_tuples
        self.dense_dispatch += other.dense_dispatch
        self.dense_fallthrough += other.dense_fallthrough
        self.groupby_key_bitset += other.groupby_key_bitset
        self.groupby_key_hash += other.groupby_key_hash
        self.groupby_ann_mode = self.groupby_ann_mode or other.groupby_ann_mode

    def as_dict(self):
        return dict(self.__dict__)


# --- group-by annotation tables ---------------------------------------------


class PerWorkerTables:
    """One plain table per worker, merged once at the end (narrow keys)."""

    mode = PER_WORKER_TABLES

    def __init__(self, components, workers):
        self.components = components
        self.tables = [dict() for _ in range(max(1, workers))]

    def upsert(self, worker, key, values):
        table = self.tables[worker]
        got = table.get(key)
        if got is None:
            table[key] = list(values)
        else:
            for i, comp in enumerate(self.components):
                got[i] = comp.semiring.add(got[i], values[i])

    def merged(self):
        out = self.tables[0]
        for table in self.tables[1:]:
            for key, vals in table.items():
                got = out.get(key)
                if got is None:
                    out[key] = vals
                else:
                    for i, comp in enumerate(self.components):
                        got[i] = comp.semiring.add(got[i], vals[i])
        return out


class SharedConcurrentTable:
    """Single table with striped locks; per-key upserts are linearizable."""

    mode = SHARED_CONCURRENT_TABLE
    STRIPES = 64

    def __init__(self, components, workers):
        self.components = components
        self.table = {}
        self.locks = [threading.Lock() for _ in range(self.STRIPES)]

    def upsert(self, worker, key, values):
        lock = self.locks[hash(key) % self.STRIPES]
        with lock:
            got = self.table.get(key)
            if got is None:
                self.table[key] = list(values)
            else:
                for i, comp in enumerate(self.components):
                    got[i] = comp.semiring.add(got[i], values[i])

    def merged(self):
        return self.table


def choose_ann_table(key_width, components, workers, width_threshold=3):
    if key_width <= width_threshold:
        return PerWorkerTables(components, workers)
    return SharedConcurrentTable(components, workers)


# --- prepared plan -----------------------------------------------------------


@dataclass
class NodeMeta:
    node: object
    exec_vertices: list = field(default_factory=list)
    traverse_mats: set = field(default_factory=set)
    owned_ganns: list = field(default_factory=list)  # (alias, column)
    result_keys: list = field(default_factory=list)  # order-mats + gvert names
    edge_infos: list = field(default_factory=list)
    scores: dict = field(default_factory=dict)
    selected: set = field(default_factory=set)
    forced_single: bool = False


@dataclass
class Prepared:
    translated: object
    ghd: object
    meta: dict  # node_id -> NodeMeta
    output_columns: list
    dense_plan: object = None
    dense_shape_matched: bool = False
    group_dicts: dict = field(default_factory=dict)
    gann_owner: dict = field(default_factory=dict)

    def explain(self):
        return explain_text(self.ghd)

    def order_candidates(self, node_id):
        """(order, relaxed, cost) for every admissible order of one node."""
        m = self.meta[node_id]
        out = []
        for order, relaxed in enumerate_orders(
            set(m.exec_vertices), m.traverse_mats, m.edge_infos, (), relax=True
        ):
            cost, _ = order_cost(order, m.edge_infos, m.scores, m.selected)
            out.append((order, relaxed, cost))
        return out


def _gvert(alias, column):
    return f"{alias}.{column}"


def prepare(sql, catalog):
    translated = to_hypergraph(parse(sql, catalog))
    for inst in translated.ir.instances:
        catalog.build(inst.relation)

    ghd = enumerate_and_select(translated)
    ghd = push_down_selections(ghd, translated)

    meta = {}
    owner_of = {}
    for node in ghd.nodes():
        for alias, col in translated.group_by_anns:
            if alias in node.edges:
                owner_of[(alias, col)] = node

    needed = set(translated.output_key_vertices)
    root = ghd.root
    gvert_names = set()
    for (alias, col), owner in owner_of.items():
        if owner is not root:
            gvert_names.add(_gvert(alias, col))
    needed |= gvert_names

    def annotate(node, parent_chi):
        m = NodeMeta(node=node)
        meta[node.node_id] = m
        # group annotations owned by non-root nodes travel upward as one
        # synthesized (dictionary-encoded) key level of the node's result
        m.owned_ganns = [
            (alias, col)
            for (alias, col), owner in owner_of.items()
            if owner is node and node is not root
        ]
        exec_verts = set(node.vertices)
        child_key_sets = []
        for child in node.children:
            ck = annotate(child, node.vertices)
            child_key_sets.append(ck)
            exec_verts |= ck
        m.exec_vertices = sorted(exec_verts)
        if parent_chi is None:
            m.traverse_mats = needed & exec_verts
        else:
            m.traverse_mats = (exec_verts & set(parent_chi)) | (needed & exec_verts)
        # a synthesized group level hangs below its node's shared keys, so a
        # carrier must materialize all of them; the root collapses the extra
        # key columns in a final aggregation pass
        for ck in child_key_sets:
            if any("." in v for v in ck):
                m.traverse_mats |= ck
        return m.traverse_mats | {_gvert(a, c) for a, c in m.owned_ganns}

    annotate(root, None)

    # attribute ordering: root first, descendants constrained by ancestors
    base_cards = {}
    dense_flags = {}
    for inst in translated.ir.instances:
        trie = catalog.build(inst.relation)
        base_cards[inst.alias] = max(1, trie.n_rows)
        dense_flags[inst.alias] = trie.is_fully_dense()

    def subtree_min_card(node):
        cards = [base_cards[a] for a in node.edges]
        for c in node.children:
            cards.append(subtree_min_card(c))
        return min(cards) if cards else 1

    selected = translated.selected_vertices()
    constraints = set()
    # a child's synthesized group-annotation level sits below its shared
    # keys in its result trie, so every ancestor must visit it last
    for node in ghd.nodes():
        m = meta[node.node_id]
        for alias, col in m.owned_ganns:
            g = _gvert(alias, col)
            for v in m.traverse_mats:
                constraints.add((v, g))

    def order_node(node):
        # root first: a node's order constrains every descendant's
        m = meta[node.node_id]
        infos = [
            EdgeInfo(alias, translated.edges[alias], base_cards[alias], dense_flags[alias])
            for alias in node.edges
        ]
        for child in node.children:
            cm = meta[child.node_id]
            key_set = cm.traverse_mats | {_gvert(a, c) for a, c in cm.owned_ganns}
            infos.append(
                EdgeInfo(f"<{child.node_id}>", frozenset(key_set),
                         max(1, subtree_min_card(child)), False)
            )
        m.edge_infos = infos
        cards = {e.alias: e.cardinality for e in infos}
        m.scores = score_relations(cards)
        m.selected = selected & set(m.exec_vertices)
        exec_set = set(m.exec_vertices)
        relax_ok = not m.owned_ganns and not (
            node is root and any(owner is root for owner in owner_of.values())
        )
        if len(infos) <= 1:
            m.forced_single = True
            choice = _forced_order(node, m, translated, constraints)
        else:
            choice = choose_order(
                exec_set, m.traverse_mats, infos, m.scores, m.selected,
                constraints, relax=relax_ok,
            )
            node.order_detail = choice.detail
            node.cost = choice.cost
        node.order = choice.order
        node.relaxed = choice.relaxed
        node.union_vertex = choice.union_vertex
        mats_in_order = [v for v in choice.order if v in m.traverse_mats]
        gs = [_gvert(a, c) for a, c in m.owned_ganns] if node is not root else []
        m.result_keys = mats_in_order + gs
        # descendants must visit any shared pair in the same relative order
        seq = choice.order + gs
        for i in range(len(seq)):
            for j in range(i + 1, len(seq)):
                constraints.add((seq[i], seq[j]))
        for child in node.children:
            order_node(child)

    order_node(root)

    # group-by operator notes for EXPLAIN
    for node in ghd.nodes():
        m = meta[node.node_id]
        owned_raw = root_raw_ganns(node, translated, owner_of) if node is root else []
        if m.owned_ganns or owned_raw:
            width = len([v for v in node.order if v in m.traverse_mats]) + \
                len(m.owned_ganns) + len(owned_raw)
            mode = PER_WORKER_TABLES if width <= catalog.options.groupby_ann_width \
                else SHARED_CONCURRENT_TABLE
            node.groupby_notes.append(f"groupby_ann={mode}")
        if node.relaxed:
            node.groupby_notes.append("groupby_key=adaptive(1/16)")

    output_columns = [item[-1] for item in translated.select_plan]
    prepared = Prepared(translated, ghd, meta, output_columns)
    prepared.gann_owner = owner_of
    _match_dense(prepared, catalog)
    return prepared


def root_raw_ganns(root, translated, owner_of):
    """Group-by annotations owned by the root, grouped there on raw values."""
    return [(a, c) for (a, c) in translated.group_by_anns if owner_of[(a, c)] is root]


def _forced_order(node, m, translated, constraints):
    """Single-relation node: traverse in trie order, materialized first."""
    from .ordering import OrderChoice

    exec_set = set(m.exec_vertices)
    if node.edges:
        alias = node.edges[0]
        inst = translated.ir.instance(alias)
        schema_order = [
            translated.vertex_of[(alias, c.name)] for c in inst.schema.key_columns()
        ]
    else:
        schema_order = sorted(exec_set)
    rest = [v for v in sorted(exec_set) if v not in schema_order]
    schema_order += rest
    mats = [v for v in schema_order if v in m.traverse_mats]
    projs = [v for v in schema_order if v not in m.traverse_mats]
    order = mats + projs
    pos = {v: i for i, v in enumerate(order)}
    for a, b in constraints:
        if a in pos and b in pos and pos[a] > pos[b]:
            # schema-order placement conflicts with the global ordering
            choice = choose_order(exec_set, m.traverse_mats,
                                  m.edge_infos, m.scores, m.selected, constraints, relax=False)
            return choice
    return OrderChoice(order, 0, [], False, "")


# --- dense pattern matching -----------------------------------------------------


def _match_dense(prepared, catalog):
    """Detect the registered dense patterns: MV or MM under (+, *)."""
    t = prepared.translated
    node = prepared.ghd.root
    if node.children or node.selections:
        return
    if t.group_by_anns or t.ann_predicates:
        return
    if any(sels for sels in t.key_selections.values()):
        return
    if len(t.ir.instances) != 2 or len(t.components) != 1:
        return
    comp = t.components[0]
    if comp.func != "sum" or comp.dtype != np.float64:
        return
    expr = comp.expr
    if not (isinstance(expr, BinOp) and expr.op == "*"
            and isinstance(expr.left, Col) and isinstance(expr.right, Col)):
        return
    refs = [expr.left.ref, expr.right.ref]
    aliases = {r.alias for r in refs}
    if len(aliases) != 2:
        return
    a1, a2 = sorted(aliases)
    e1, e2 = t.edges[a1], t.edges[a2]
    shared = e1 & e2
    if len(shared) != 1:
        return
    s = next(iter(shared))
    if {v for v, _ in t.alpha} != {s}:
        return
    x1, x2 = e1 - shared, e2 - shared
    outs = set(t.output_key_vertices)
    if len(x1) == 1 and len(x2) == 1 and outs == (x1 | x2):
        plan = ("mm", a1, a2, s)
    elif len(x1) == 1 and len(x2) == 0 and outs == x1:
        plan = ("mv", a1, a2, s)
    elif len(x1) == 0 and len(x2) == 1 and outs == x2:
        plan = ("mv", a2, a1, s)
    else:
        return
    prepared.dense_shape_matched = True
    col_of = {r.alias: r.column for r in refs}
    views = {}
    for alias in (a1, a2):
        trie = catalog.build(t.ir.instance(alias).relation)
        view = trie.dense_view(col_of[alias])
        if view is None:
            return  # sparse input: fall through to the trie path
        views[alias] = (trie, view)
    prepared.dense_plan = plan + (views, col_of)


def _run_dense(prepared, catalog, counters):
    kind, a1, a2, s, views, col_of = prepared.dense_plan
    t = prepared.translated
    counters.dense_dispatch += 1

    def oriented(alias, want_rows_vertex):
        trie, view = views[alias]
        m = view.as_matrix()
        if m.ndim == 1:
            return m
        level_verts = [t.vertex_of[(alias, c)] for c in trie.key_names()]
        return m if level_verts[0] == want_rows_vertex else m.T

    if kind == "mm":
        x1 = next(iter(t.edges[a1] - {s}))
        x2 = next(iter(t.edges[a2] - {s}))
        a_mat = oriented(a1, x1)
        b_mat = oriented(a2, s)
        c = dense_mod.dense_kernel("mm")(np.ascontiguousarray(a_mat, dtype=np.float64),
                                         np.ascontiguousarray(b_mat, dtype=np.float64))
        n, mcols = c.shape
        key_cols = {
            x1: np.repeat(np.arange(n, dtype=np.int64), mcols),
            x2: np.tile(np.arange(mcols, dtype=np.int64), n),
        }
        values = c.reshape(-1)
    else:
        mat_alias, vec_alias = a1, a2
        x = next(iter(t.edges[mat_alias] - {s}))
        a_mat = oriented(mat_alias, x)
        vec = views[vec_alias][1].as_matrix().reshape(-1)
        y = dense_mod.dense_kernel("mv")(np.ascontiguousarray(a_mat, dtype=np.float64),
                                         np.ascontiguousarray(vec, dtype=np.float64))
        key_cols = {x: np.arange(len(y), dtype=np.int64)}
        values = y

    cols = []
    names = []
    for item in t.select_plan:
        names.append(item[-1])
        if item[0] == "key":
            vname = item[1]
            dom = _vertex_domain(t, vname, catalog)
            cols.append(np.asarray(dom.decode_array(key_cols[vname])))
        else:
            cols.append(values)
    counters.output_tuples += len(values)
    return ResultTable(names, cols)


def _vertex_domain(t, vname, catalog):
    alias, col = t.vertices[vname][0]
    domain = t.ir.instance(alias).schema.column(col).resolved_domain()
    return catalog.dictionary(domain)


# --- result table ----------------------------------------------------------------


class ResultTable:
    def __init__(self, columns, data):
        self.columns = columns
        self.data = data

    @property
    def n_rows(self):
        return len(self.data[0]) if self.data else 0

    def rows(self):
        return zip(*[list(c) for c in self.data]) if self.data else iter(())

    def sorted_rows(self):
        return sorted(self.rows(), key=lambda r: tuple(_sort_key(v) for v in r))

    def write_delimited(self, f, delimiter=","):
        f.write(delimiter.join(self.columns) + "\n")
        for row in self.sorted_rows():
            f.write(delimiter.join(_fmt(v) for v in row) + "\n")


def _sort_key(v):
    if isinstance(v, (bytes, str)):
        return (1, v)
    return (0, float(v))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


# --- node runtime ----------------------------------------------------------------


@dataclass
class _Part:
    edge_idx: int
    level: int
    edge_leaf: bool


@dataclass
class _Step:
    vertex: str
    parts: list
    materialized: bool
    sel_ids: list = None  # encoded key-equality ids, None when unconstrained
    impossible: bool = False


class _EdgeRT:
    __slots__ = ("alias", "trie", "factors", "columns", "is_child", "vertex_levels")

    def __init__(self, alias, trie, factors, columns, is_child, vertex_levels):
        self.alias = alias
        self.trie = trie
        self.factors = factors  # per component: leaf-aligned array or None
        self.columns = columns  # column name -> leaf-aligned raw values (lazy dict)
        self.is_child = is_child
        self.vertex_levels = vertex_levels  # vertex name per trie level


class _NodeRT:
    """Bound execution state for one plan node."""

    def __init__(self, prepared, node, catalog, child_results, options, order=None,
                 relaxed=None, is_root=False, root_raw=()):
        t = prepared.translated
        m = prepared.meta[node.node_id]
        self.node = node
        self.meta = m
        self.components = t.components
        self.order = list(order if order is not None else node.order)
        self.relaxed = node.relaxed if relaxed is None else relaxed
        self.options = options
        self.is_root = is_root
        self.empty_child = False

        vertex_cols = {}
        for (alias, col), v in t.vertex_of.items():
            vertex_cols.setdefault(alias, {})[v] = col

        self.edges = []
        pending0 = [comp.semiring.one(comp.dtype) for comp in self.components]
        ann_sel = {}
        for sel in node.selections:
            if sel[0] == "ann":
                _, alias, col, op, lit = sel
                ann_sel.setdefault(alias, []).append((col, op, lit))

        # per-component value plan: per-edge factor expressions where the
        # expression factorizes under the combine operator, else a joint
        # expression evaluated once all owning edges are bound
        here = set(node.edges)
        self.comp_edge_exprs = [dict() for _ in self.components]
        self.joint_comps = []
        for ci, comp in enumerate(self.components):
            if comp.expr is None:
                continue
            if len(comp.owners) <= 1:
                owner = next(iter(comp.owners))
                if owner in here:
                    self.comp_edge_exprs[ci][owner] = comp.expr
                continue
            if not (comp.owners <= here):
                continue
            factored = _factor_expr(comp)
            if factored is not None:
                groups, consts = factored
                for alias, expr in groups.items():
                    self.comp_edge_exprs[ci][alias] = expr
                for const in consts:
                    pending0[ci] = comp.semiring.mul(
                        pending0[ci], eval_annotation_expr(const, {}))
            else:
                self.joint_comps.append((ci, comp, _expr_refs(comp.expr)))

        for alias in node.edges:
            inst = t.ir.instance(alias)
            vmap = vertex_cols[alias]
            vertex_levels = [v for v in self.order if v in vmap]
            key_cols = [vmap[v] for v in vertex_levels]
            trie = catalog.trie(inst.relation, key_order=key_cols)
            if alias in ann_sel:
                trie = _apply_ann_selections(trie, ann_sel[alias], options)
            factors = _edge_factors(trie, alias, self.components, self.comp_edge_exprs)
            self.edges.append(_EdgeRT(alias, trie, factors, trie.annotations, False, vertex_levels))

        for child_id, (kind, payload) in child_results.items():
            if kind == "scalar":
                hit, values = payload
                if not hit:
                    self.empty_child = True
                else:
                    for ci, comp in enumerate(self.components):
                        pending0[ci] = comp.semiring.mul(pending0[ci], values[ci])
                continue
            trie = payload
            factors = [trie.annotations[f"__c{ci}"].values() for ci in range(len(self.components))]
            self.edges.append(
                _EdgeRT(f"<{child_id}>", trie, factors, trie.annotations, True, trie.key_names())
            )

        self.pending0 = pending0

        self.steps = []
        for v in self.order:
            parts = []
            for ei, e in enumerate(self.edges):
                if v in e.vertex_levels:
                    lvl = e.vertex_levels.index(v)
                    parts.append(_Part(ei, lvl, lvl == e.trie.n_levels - 1))
            if not parts:
                raise ExecutionError(f"vertex {v!r} has no participating relation")
            sel_ids = None
            impossible = False
            sels = t.key_selections.get(v, ())
            if sels:
                ids = set()
                for alias, col, lit in sels:
                    enc = _encode_literal(t, catalog, alias, col, lit)
                    if enc is None:
                        impossible = True
                    else:
                        ids.add(enc)
                if len(ids) > 1:
                    impossible = True
                sel_ids = sorted(ids)
            self.steps.append(_Step(v, parts, v in m.traverse_mats, sel_ids, impossible))

        self.L = len(self.steps)
        self.mats_layout = [v for v in self.order if v in m.traverse_mats]
        if self.relaxed:
            self.boundary = self.L - 2
        else:
            self.boundary = len(self.mats_layout)
        self.union_universe = None
        if self.relaxed:
            self.union_universe = _union_universe(self.edges, self.steps[-1])

        # group-by annotations gathered at this node (raw values in table keys)
        self.gann_specs = list(m.owned_ganns) if not is_root else list(root_raw)
        # raw column binds needed at edge leaves: joint expressions + gatherings
        self.col_needs = {}
        for _ci, _comp, refs in self.joint_comps:
            for ref in refs:
                self.col_needs.setdefault(ref.alias, set()).add(ref.column)
        for alias, col in self.gann_specs:
            self.col_needs.setdefault(alias, set()).add(col)

        if self.gann_specs:
            self.mode = "table"
        elif self.mats_layout:
            self.mode = "rows"
        else:
            self.mode = "scalar"

        self.batch_tail = self._batchable_tail()

    def _batchable_tail(self):
        """The last two levels vectorize as one pass when the second-to-last
        vertex iterates a single edge whose children are folded at the leaf
        against at most one other (fixed) relation."""
        if self.relaxed or self.mode != "rows" or self.L < 2:
            return False
        if self.boundary != self.L - 1:
            return False
        if self.gann_specs or self.joint_comps or self.col_needs:
            return False
        pen = self.steps[-2]
        leaf = self.steps[-1]
        if pen.sel_ids is not None or leaf.sel_ids is not None:
            return False
        if len(pen.parts) != 1 or pen.parts[0].edge_leaf:
            return False
        if len(leaf.parts) > 2:
            return False
        if not any(p.edge_idx == pen.parts[0].edge_idx for p in leaf.parts):
            return False
        return True

    def key_layout(self):
        return self.mats_layout + [_gvert(a, c) for a, c in self.gann_specs]


def _union_universe(edges, step):
    hi = 0
    for p in step.parts:
        _lo, hi_ = edges[p.edge_idx].trie.levels[p.level].universe
        hi = max(hi, hi_)
    return (0, hi)


def _encode_literal(t, catalog, alias, col, lit):
    schema = t.ir.instance(alias).schema
    column = schema.column(col)
    if column.type in ("int", "long"):
        raw = int(lit)
    elif column.type in ("float", "double"):
        raw = float(lit)
    else:
        raw = str(lit)
    return catalog.dictionary(column.resolved_domain()).try_encode_one(raw)


def _split_on(expr, op):
    if isinstance(expr, BinOp) and expr.op == op:
        return _split_on(expr.left, op) + _split_on(expr.right, op)
    return [expr]


def _factor_expr(comp):
    """Split a multi-relation expression into per-relation factors when it is
    a pure product under the component's combine operator; returns
    (per-alias expr map, list of constant factor exprs) or None."""
    op = "*" if comp.semiring.name in ("sum", "count") else "+"
    groups = {}
    consts = []
    for factor in _split_on(comp.expr, op):
        aliases = {r.alias for r in _expr_refs(factor)}
        if len(aliases) > 1:
            return None
        if aliases:
            alias = next(iter(aliases))
            cur = groups.get(alias)
            groups[alias] = factor if cur is None else BinOp(op, cur, factor)
        else:
            consts.append(factor)
    return groups, consts


def _apply_ann_selections(trie, preds, options):
    mask = None
    for col, op, lit in preds:
        vals = trie.annotations[col].values()
        if op == "=":
            m = vals == lit
        elif op == "<":
            m = vals < lit
        else:
            m = vals > lit
        m = np.asarray(m, dtype=bool)
        mask = m if mask is None else (mask & m)
    return filter_leaves(trie, mask, options.density_threshold)


def _edge_factors(trie, alias, components, comp_edge_exprs):
    """Leaf-aligned value arrays per component (None when this edge only
    contributes the multiplicative identity)."""
    out = []
    for comp, exprs in zip(components, comp_edge_exprs):
        expr = exprs.get(alias)
        if expr is None:
            out.append(None)
            continue
        env = {}
        for ref in _expr_refs(expr):
            env[(ref.alias, ref.column)] = trie.annotations[ref.column].values()
        vals = eval_annotation_expr(expr, env)
        vals = np.asarray(vals, dtype=comp.dtype)
        if vals.shape == ():
            vals = np.full(trie.n_rows, vals, dtype=comp.dtype)
        out.append(vals)
    return out


def _expr_refs(expr):
    from .query_ir import _walk_refs

    return list(_walk_refs(expr))


class _PrefixAcc:
    __slots__ = ("values", "hit")

    def __init__(self, components):
        self.values = [c.semiring.zero(c.dtype) for c in components]
        self.hit = False


def _fold(comp, val, n):
    if isinstance(val, np.ndarray):
        return comp.semiring.add.reduce(val)
    if comp.semiring.name in ("sum", "count"):
        return val * n
    return val


class _Worker:
    """Per-thread traversal state: edge positions, bound columns, and a sink."""

    def __init__(self, rt, counters, wid, table=None):
        self.rt = rt
        self.counters = counters
        self.wid = wid
        self.pos = [0] * len(rt.edges)
        self.bound = {}  # (alias, column) -> scalar raw value
        self.row_chunks = []  # (prefix ids, tail array | None, values per comp)
        self.table = table
        self.scalar = _PrefixAcc(rt.components)

    # -- survivor computation ------------------------------------------------

    def _survivors(self, step):
        rt = self.rt
        pos = self.pos
        sets_list = [
            rt.edges[p.edge_idx].trie.levels[p.level].sets[
                0 if p.level == 0 else pos[p.edge_idx]
            ]
            for p in step.parts
        ]
        if step.impossible:
            return None, sets_list
        if step.sel_ids is not None:
            sid = step.sel_ids[0]
            if all(s.contains(sid) for s in sets_list):
                return np.array([sid], dtype=np.uint32), sets_list
            return None, sets_list
        if len(sets_list) == 1:
            return sets_list[0], sets_list
        return intersect_many(sets_list, self.counters), sets_list

    def run_chunk(self, ids, root_sets, density):
        rt = self.rt
        if rt.L == 1:
            self._leaf(ids, root_sets, rt.pending0, (), None)
            return
        self._loop(0, ids, root_sets, rt.pending0, (), None, density)

    def _descend(self, level, pending, prefix, acc):
        rt = self.rt
        step = rt.steps[level]
        surv, sets_list = self._survivors(step)
        if level == rt.L - 1:
            self._leaf(surv, sets_list, pending, prefix, acc)
            return
        if surv is None:
            return
        if isinstance(surv, Set):
            density = surv.density()
            ids = surv.to_array()
        else:
            ids = surv
            span = max(1, sets_list[0].hi - sets_list[0].lo)
            density = len(ids) / span
        self.counters.tuples_materialized += len(ids)
        self._loop(level, ids, sets_list, pending, prefix, acc, density)

    def _loop(self, level, ids, sets_list, pending, prefix, acc, density):
        if len(ids) == 0:
            return
        rt = self.rt
        counters = self.counters
        step = rt.steps[level]
        comps = rt.components

        if rt.batch_tail and level == rt.L - 2:
            self._tail_batch(ids, sets_list[0], pending, prefix)
            return

        created = None
        if rt.relaxed and level == rt.boundary:
            strategy = choose_union_strategy(density, rt.options.groupby_key_density)
            if strategy == BITSET_ARRAY:
                counters.groupby_key_bitset += 1
            else:
                counters.groupby_key_hash += 1
            acc = UnionAccumulator(
                rt.union_universe,
                [(c.dtype, c.semiring.add, c.semiring.zero(c.dtype)) for c in comps],
                strategy,
            )
            created = "union"
        elif rt.mode == "rows" and not rt.relaxed and level == rt.boundary:
            acc = _PrefixAcc(comps)
            created = "prefix"

        pos = self.pos
        pos_lists = []
        for pi, p in enumerate(step.parts):
            s = sets_list[pi]
            parent = 0 if p.level == 0 else pos[p.edge_idx]
            base = int(rt.edges[p.edge_idx].trie.levels[p.level].offsets[parent])
            pos_lists.append((base + s.positions_of(ids)).tolist())

        factor_binds = []  # (comp idx, gathered python list, combine-is-product)
        col_binds = []  # ((alias, column), gathered raw array)
        for pi, p in enumerate(step.parts):
            if not p.edge_leaf:
                continue
            e = rt.edges[p.edge_idx]
            for ci, arr in enumerate(e.factors):
                if arr is not None:
                    is_prod = comps[ci].semiring.name in ("sum", "count")
                    factor_binds.append((ci, arr[pos_lists[pi]].tolist(), is_prod))
            for col in rt.col_needs.get(e.alias, ()):
                col_binds.append(((e.alias, col), e.columns[col].values()[pos_lists[pi]]))

        idlist = ids.tolist()
        mat = step.materialized
        bound = self.bound
        parts = step.parts
        edge_of = [p.edge_idx for p in parts]
        nparts = len(parts)
        descend = self._descend
        saved = [pos[ei] for ei in edge_of]
        for t_i in range(len(idlist)):
            for pi in range(nparts):
                pos[edge_of[pi]] = pos_lists[pi][t_i]
            pend = pending
            if factor_binds:
                pend = list(pending)
                for ci, vals_l, is_prod in factor_binds:
                    v = vals_l[t_i]
                    pend[ci] = pend[ci] * v if is_prod else pend[ci] + v
            for key, arr in col_binds:
                bound[key] = arr[t_i]
            pfx = prefix + (idlist[t_i],) if mat else prefix
            descend(level + 1, pend, pfx, acc)
        for pi in range(nparts):
            pos[edge_of[pi]] = saved[pi]

        if created == "union":
            out_set, vals = acc.result()
            if out_set.cardinality:
                self.row_chunks.append((prefix, out_set.to_array(), vals))
        elif created == "prefix":
            if acc.hit:
                self.row_chunks.append((prefix, None, list(acc.values)))

    def _tail_batch(self, ids, pen_set, pending, prefix):
        """Vectorized pass over the last two levels: iterate the penultimate
        edge's ids, fold its leaf children (optionally intersected with one
        fixed relation) per id, and emit the surviving rows columnar."""
        rt = self.rt
        comps = rt.components
        counters = self.counters
        pen_part = rt.steps[-2].parts[0]
        bi = pen_part.edge_idx
        edge_b = rt.edges[bi]
        pos = self.pos

        parent = 0 if pen_part.level == 0 else pos[bi]
        base = int(edge_b.trie.levels[pen_part.level].offsets[parent])
        if ids is pen_set.to_array():
            jpos = np.arange(base, base + len(ids), dtype=np.int64)
        else:
            jpos = base + pen_set.positions_of(ids)

        leaf_level = pen_part.level + 1
        level = edge_b.trie.levels[leaf_level]
        off = level.offsets
        starts = off[jpos]
        lens = off[jpos + 1] - starts
        total = int(lens.sum())
        if total == 0:
            return
        # ragged gather: concatenated leaf positions under every iterated id
        cum = np.cumsum(lens) - lens
        flat = np.repeat(starts - cum, lens) + np.arange(total, dtype=np.int64)
        parent_idx = np.repeat(np.arange(len(ids), dtype=np.int64), lens)
        kids = level.flat_ids()[flat]

        fixed = [p for p in rt.steps[-1].parts if p.edge_idx != bi]
        if fixed:
            counters.intersections += len(ids)
            p = fixed[0]
            edge_a = rt.edges[p.edge_idx]
            a_parent = 0 if p.level == 0 else pos[p.edge_idx]
            a_set = edge_a.trie.levels[p.level].sets[a_parent]
            keep = a_set.contains_mask(kids)
            flat = flat[keep]
            parent_idx = parent_idx[keep]
            kids = kids[keep]
            if not len(kids):
                return
            a_base = int(edge_a.trie.levels[p.level].offsets[a_parent])
            a_pos = a_base + a_set.positions_of(kids)
        else:
            edge_a = None

        # segment boundaries per surviving iterated id (parent_idx is sorted)
        seg_starts = np.concatenate(([0], np.flatnonzero(np.diff(parent_idx)) + 1))
        seg_parents = parent_idx[seg_starts]
        seg_counts = np.diff(np.concatenate((seg_starts, [len(parent_idx)])))

        folded = []
        for ci, comp in enumerate(comps):
            val = pending[ci]
            arr = None
            b_arr = edge_b.factors[ci]
            if b_arr is not None:
                arr = b_arr[flat]
            if edge_a is not None and edge_a.factors[ci] is not None:
                gathered = edge_a.factors[ci][a_pos]
                arr = gathered if arr is None else comp.semiring.mul(arr, gathered)
            if arr is None:
                if comp.semiring.name in ("sum", "count"):
                    folded.append(comp.semiring.mul(
                        np.asarray(seg_counts, dtype=comp.dtype), val))
                else:
                    folded.append(np.full(len(seg_parents), val, dtype=comp.dtype))
            else:
                segged = comp.semiring.add.reduceat(arr, seg_starts)
                folded.append(comp.semiring.mul(segged, val).astype(comp.dtype, copy=False))

        tail_ids = np.asarray(ids)[seg_parents]
        self.row_chunks.append((prefix, tail_ids, folded))

    def _leaf(self, surv, sets_list, pending, prefix, acc):
        rt = self.rt
        step = rt.steps[rt.L - 1]
        pos = self.pos
        ids = None
        if surv is None:
            return
        # positions are a contiguous slice when a single set is iterated
        if isinstance(surv, Set):
            n = surv.cardinality
            if n == 0:
                return
            if len(step.parts) == 1:
                p = step.parts[0]
                parent = 0 if p.level == 0 else pos[p.edge_idx]
                base = int(rt.edges[p.edge_idx].trie.levels[p.level].offsets[parent])
                pos_arrays = [slice(base, base + n)]
            else:
                ids = surv.to_array()
                pos_arrays = None
        else:
            ids = surv
            n = len(ids)
            pos_arrays = None
        if pos_arrays is None:
            pos_arrays = []
            for pi, p in enumerate(step.parts):
                s = sets_list[pi]
                parent = 0 if p.level == 0 else pos[p.edge_idx]
                base = int(rt.edges[p.edge_idx].trie.levels[p.level].offsets[parent])
                pos_arrays.append(base + s.positions_of(ids))

        comps = rt.components
        vals = list(pending)
        leaf_cols = {}
        col_needs = rt.col_needs
        for pi, p in enumerate(step.parts):
            e = rt.edges[p.edge_idx]
            at = pos_arrays[pi]
            for ci, arr in enumerate(e.factors):
                if arr is not None:
                    vals[ci] = comps[ci].semiring.mul(vals[ci], arr[at])
            if col_needs:
                for col in col_needs.get(e.alias, ()):
                    leaf_cols[(e.alias, col)] = e.columns[col].values()[at]

        for ci, comp, refs in rt.joint_comps:
            env = {}
            for ref in refs:
                key = (ref.alias, ref.column)
                env[key] = leaf_cols.get(key, self.bound.get(key))
            vals[ci] = comps[ci].semiring.mul(vals[ci], eval_annotation_expr(comp.expr, env))

        mode = rt.mode
        if rt.relaxed:
            if ids is None:
                ids = surv.to_array()
            arrays = [
                v if isinstance(v, np.ndarray) else np.full(n, v, dtype=comps[ci].dtype)
                for ci, v in enumerate(vals)
            ]
            acc.add(ids, arrays)
        elif mode == "table":
            gvals = []
            for alias, col in rt.gann_specs:
                key = (alias, col)
                gvals.append(leaf_cols.get(key, self.bound.get(key)))
            leaf_mat = step.materialized
            if leaf_mat or any(isinstance(g, np.ndarray) for g in gvals):
                if ids is None:
                    ids = surv.to_array()
                idlist = ids.tolist()
                glists = [g.tolist() if isinstance(g, np.ndarray) else [g] * n for g in gvals]
                vlists = [
                    v.tolist() if isinstance(v, np.ndarray) else [v] * n for v in vals
                ]
                for r in range(n):
                    key = prefix + ((idlist[r],) if leaf_mat else ()) + \
                        tuple(gl[r] for gl in glists)
                    self.table.upsert(self.wid, key, [vl[r] for vl in vlists])
            else:
                folded = [_fold(comps[ci], vals[ci], n) for ci in range(len(comps))]
                key = prefix + tuple(_scalarize(g) for g in gvals)
                self.table.upsert(self.wid, key, folded)
        elif mode == "rows":
            if rt.boundary >= rt.L:
                # every vertex materialized: each survivor is an output row
                if ids is None:
                    ids = surv.to_array()
                arrays = [
                    v if isinstance(v, np.ndarray) else np.full(n, v, dtype=comps[ci].dtype)
                    for ci, v in enumerate(vals)
                ]
                self.row_chunks.append((prefix, ids, arrays))
            elif acc is None:
                # the only projected attribute is the leaf itself: the whole
                # per-prefix fold happens right here, so emit the row directly
                folded = [_fold(comps[ci], vals[ci], n) for ci in range(len(comps))]
                self.row_chunks.append((prefix, None, folded))
            else:
                for ci in range(len(comps)):
                    acc.values[ci] = comps[ci].semiring.add(acc.values[ci], _fold(comps[ci], vals[ci], n))
                acc.hit = True
        else:
            sc = self.scalar
            for ci in range(len(comps)):
                sc.values[ci] = comps[ci].semiring.add(sc.values[ci], _fold(comps[ci], vals[ci], n))
            sc.hit = True


def _scalarize(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def _root_survivors(rt, counters):
    step0 = rt.steps[0]
    sets_list = [rt.edges[p.edge_idx].trie.levels[p.level].sets[0] for p in step0.parts]
    empty = np.empty(0, dtype=np.uint32)
    if step0.impossible:
        return empty, sets_list, 0.0
    if step0.sel_ids is not None:
        sid = step0.sel_ids[0]
        if all(s.contains(sid) for s in sets_list):
            span = max(1, sets_list[0].hi - sets_list[0].lo)
            return np.array([sid], dtype=np.uint32), sets_list, 1.0 / span
        return empty, sets_list, 0.0
    if len(sets_list) == 1:
        s = sets_list[0]
    else:
        s = intersect_many(sets_list, counters)
    return s.to_array(), sets_list, s.density()


def _run_node(prepared, node, catalog, counters, threads, orders, options):
    """Execute children bottom-up, then this node over its chunked root set."""
    t = prepared.translated
    child_results = {}
    for child in node.children:
        child_results[child.node_id] = _run_child(prepared, child, catalog, counters, threads, orders, options)

    is_root = node is prepared.ghd.root
    root_raw = [gc for gc, owner in prepared.gann_owner.items() if owner is node] if is_root else ()
    order, relaxed = _effective_order(prepared, node, orders)
    rt = _NodeRT(prepared, node, catalog, child_results, options,
                 order=order, relaxed=relaxed, is_root=is_root, root_raw=root_raw)
    if rt.empty_child:
        return rt, []

    workers = max(1, threads)
    if rt.relaxed and rt.boundary == 0:
        workers = 1  # one union accumulator spans the whole root loop

    table = None
    if rt.mode == "table":
        width = len(rt.mats_layout) + len(rt.gann_specs)
        table = choose_ann_table(width, rt.components, workers, options.groupby_ann_width)
        counters.groupby_ann_mode = table.mode

    root_ids, root_sets, density = _root_survivors(rt, counters)
    counters.tuples_materialized += len(root_ids)

    if len(root_ids) == 0:
        return rt, [_Worker(rt, counters, 0, table)]

    workers = min(workers, len(root_ids))
    chunks = np.array_split(root_ids, workers)
    ws = [_Worker(rt, Counters(), i, table) for i in range(workers)]
    if workers == 1:
        ws[0].counters = counters
        ws[0].run_chunk(chunks[0], root_sets, density)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            futs = [
                ex.submit(ws[i].run_chunk, chunks[i], root_sets, density)
                for i in range(workers)
            ]
            for f in futs:
                f.result()
        for w in ws:
            counters.merge(w.counters)
    return rt, ws


def _effective_order(prepared, node, orders):
    if not orders or node.node_id not in orders:
        return node.order, node.relaxed
    order = list(orders[node.node_id])
    m = prepared.meta[node.node_id]
    if sorted(order) != sorted(m.exec_vertices):
        raise UserError(f"order override for {node.node_id} must cover {sorted(m.exec_vertices)}")
    mats = m.traverse_mats
    flags = [v in mats for v in order]
    k = sum(flags)
    if flags == [True] * k + [False] * (len(order) - k):
        return order, False
    relaxed_shape = (
        len(order) >= 2
        and flags[-1]
        and not flags[-2]
        and flags[:-2] == [True] * (k - 1) + [False] * 0
    )
    if relaxed_shape and k == len(order) - 1:
        return order, True
    raise UserError(
        f"order override for {node.node_id} must keep materialized attributes first "
        f"(or swap only the last two)"
    )


def _child_payload(rt, workers, prepared, catalog):
    """Fold a finished child node into what its parent consumes."""
    t = prepared.translated
    if rt.mode == "scalar":
        hit = any(w.scalar.hit for w in workers)
        vals = [c.semiring.zero(c.dtype) for c in rt.components]
        for w in workers:
            if w.scalar.hit:
                for ci, comp in enumerate(rt.components):
                    vals[ci] = comp.semiring.add(vals[ci], w.scalar.values[ci])
        return ("scalar", (hit, vals))

    layout = rt.key_layout()
    comps = rt.components
    if rt.mode == "table":
        merged = workers[0].table.merged() if workers else {}
        n = len(merged)
        mats_n = len(rt.mats_layout)
        key_cols = [np.empty(n, dtype=np.int64) for _ in range(mats_n)]
        raw_cols = [[None] * n for _ in rt.gann_specs]
        val_cols = [np.empty(n, dtype=c.dtype) for c in comps]
        for r, (key, vals) in enumerate(merged.items()):
            for ki in range(mats_n):
                key_cols[ki][r] = key[ki]
            for gi in range(len(rt.gann_specs)):
                raw_cols[gi][r] = key[mats_n + gi]
            for ci in range(len(comps)):
                val_cols[ci][r] = vals[ci]
        gid_cols = []
        for gi, (alias, col) in enumerate(rt.gann_specs):
            gname = _gvert(alias, col)
            d = prepared.group_dicts.get(gname)
            if d is None:
                d = Dictionary(gname)
                prepared.group_dicts[gname] = d
            gid_cols.append(d.add_and_encode(raw_cols[gi]))
        id_matrix = np.column_stack(
            [c.astype(np.uint32) for c in key_cols] + [g for g in gid_cols]
        ) if n else np.empty((0, mats_n + len(gid_cols)), dtype=np.uint32)
        presorted = False
    else:
        chunks = []
        for w in workers:
            chunks.extend(w.row_chunks)
        cols, val_cols = _rows_to_columns(rt, chunks)
        id_matrix = np.column_stack([c.astype(np.uint32) for c in cols]) if cols else \
            np.empty((0, 0), dtype=np.uint32)
        presorted = True
        n = id_matrix.shape[0]

    universes = []
    for v in layout:
        if "." in v:
            universes.append((0, len(prepared.group_dicts[v])))
        else:
            universes.append((0, len(_vertex_domain(t, v, catalog))))
    key_cols_meta = [Column(v, KEY, "int") for v in layout]
    ann_cols = {f"__c{ci}": Column(f"__c{ci}", "annotation",
                                   "double" if c.dtype == np.float64 else "long")
                for ci, c in enumerate(comps)}
    ann_values = {f"__c{ci}": val_cols[ci] for ci in range(len(comps))}
    trie = build_trie(
        f"<{rt.node.node_id}>", key_cols_meta, id_matrix, universes,
        ann_values, ann_cols, on_duplicate="error",
        threshold=rt.options.density_threshold, presorted=presorted,
    )
    return ("trie", trie)


def _rows_to_columns(rt, chunks):
    """Columnar assembly of (prefix, tail, values) row chunks."""
    layout = rt.mats_layout
    k = len(layout)
    comps = rt.components
    id_parts = [[] for _ in range(k)]
    val_parts = [[] for _ in comps]
    for prefix, tail, vals in chunks:
        n = len(tail) if tail is not None else 1
        for ki in range(k):
            if tail is not None and ki == k - 1:
                id_parts[ki].append(np.asarray(tail, dtype=np.int64))
            else:
                id_parts[ki].append(np.full(n, prefix[ki], dtype=np.int64))
        for ci, comp in enumerate(comps):
            v = vals[ci]
            if isinstance(v, np.ndarray):
                val_parts[ci].append(v.astype(comp.dtype, copy=False))
            else:
                val_parts[ci].append(np.full(n, v, dtype=comp.dtype))
    ids = [np.concatenate(p) if p else np.empty(0, dtype=np.int64) for p in id_parts]
    vals = [np.concatenate(p) if p else np.empty(0, dtype=c.dtype)
            for p, c in zip(val_parts, comps)]
    return ids, vals


def _run_child(prepared, child, catalog, counters, threads, orders, options):
    rt, workers = _run_node(prepared, child, catalog, counters, threads, orders, options)
    if rt.empty_child:
        if rt.mode == "scalar":
            return ("scalar", (False, []))
        workers = []
    return _child_payload(rt, workers, prepared, catalog)


def execute(prepared, catalog, threads=1, counters=None, use_dense=True, order_override=None):
    """Run a prepared plan and build the result table."""
    counters = counters if counters is not None else Counters()
    options = catalog.options
    if prepared.dense_shape_matched and prepared.dense_plan is None:
        counters.dense_fallthrough += 1
    if use_dense and prepared.dense_plan is not None:
        return _run_dense(prepared, catalog, counters)

    rt, workers = _run_node(prepared, prepared.ghd.root, catalog, counters,
                            threads, order_override or {}, options)
    t = prepared.translated
    comps = t.components

    if rt.empty_child:
        data = [[] for _ in t.select_plan]
        return ResultTable([it[-1] for it in t.select_plan], data)

    key_source = {}
    val_source = {}
    raw_source = {}
    if rt.mode == "scalar":
        hit = any(w.scalar.hit for w in workers)
        vals = [c.semiring.zero(c.dtype) for c in comps]
        for w in workers:
            if w.scalar.hit:
                for ci, comp in enumerate(comps):
                    vals[ci] = comp.semiring.add(vals[ci], w.scalar.values[ci])
        n = 1 if hit else 0
        for ci, comp in enumerate(comps):
            val_source[ci] = np.array([vals[ci]] * n, dtype=comp.dtype)
    elif rt.mode == "table":
        merged = workers[0].table.merged() if workers else {}
        n = len(merged)
        mats_n = len(rt.mats_layout)
        for ki, v in enumerate(rt.mats_layout):
            key_source[v] = np.fromiter((key[ki] for key in merged), dtype=np.int64, count=n)
        for gi, (alias, col) in enumerate(rt.gann_specs):
            raw_source[(alias, col)] = [key[mats_n + gi] for key in merged]
        for ci, comp in enumerate(comps):
            val_source[ci] = np.fromiter((vals[ci] for vals in merged.values()),
                                         dtype=comp.dtype, count=n)
    else:
        chunks = []
        for w in workers:
            chunks.extend(w.row_chunks)
        ids, vals = _rows_to_columns(rt, chunks)
        n = len(ids[0]) if ids else 0
        for ki, v in enumerate(rt.mats_layout):
            key_source[v] = ids[ki]
        for ci in range(len(comps)):
            val_source[ci] = vals[ci]

    # key columns materialized only for traversal structure (carriers of a
    # synthesized group level) collapse away in a final aggregation pass
    needed_names = set(t.output_key_vertices)
    for item in t.select_plan:
        if item[0] == "ann" and (item[1], item[2]) not in raw_source:
            needed_names.add(_gvert(item[1], item[2]))
    extra = [v for v in rt.mats_layout if v not in needed_names]
    if extra and n:
        kept = [v for v in rt.mats_layout if v in needed_names]
        raw_keys = list(raw_source)
        key_iters = [key_source[v].tolist() for v in kept] + \
            [list(raw_source[rc]) for rc in raw_keys]
        val_lists = [np.asarray(val_source[ci]).tolist() for ci in range(len(comps))]
        groups = {}
        for r in range(n):
            key = tuple(ki[r] for ki in key_iters)
            got = groups.get(key)
            if got is None:
                groups[key] = [vl[r] for vl in val_lists]
            else:
                for ci, comp in enumerate(comps):
                    got[ci] = comp.semiring.add(got[ci], val_lists[ci][r])
        n = len(groups)
        for i, v in enumerate(kept):
            key_source[v] = np.fromiter((k[i] for k in groups), dtype=np.int64, count=n)
        for j, rc in enumerate(raw_keys):
            raw_source[rc] = [k[len(kept) + j] for k in groups]
        for ci, comp in enumerate(comps):
            val_source[ci] = np.array([vals_[ci] for vals_ in groups.values()], dtype=comp.dtype)

    counters.output_tuples += n
    names = []
    data = []
    for item in t.select_plan:
        names.append(item[-1])
        if item[0] == "agg":
            data.append(val_source[item[1]])
        elif item[0] == "key":
            vname = item[1]
            dom = _vertex_domain(t, vname, catalog)
            data.append(np.asarray(dom.decode_array(key_source[vname])))
        else:
            _, alias, col, _name = item
            if (alias, col) in raw_source:
                data.append(raw_source[(alias, col)])
            else:
                gname = _gvert(alias, col)
                d = prepared.group_dicts[gname]
                data.append(np.asarray(d.decode_array(key_source[gname])))
    return ResultTable(names, data)


def run_query(sql, catalog, threads=1, counters=None, use_dense=True, order_override=None):
    prepared = prepare(sql, catalog)
    return execute(prepared, catalog, threads=threads, counters=counters,
                   use_dense=use_dense, order_override=order_override)
