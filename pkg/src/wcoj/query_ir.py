"""SQL subset parser and translation to an annotated hypergraph.

Supported: SELECT / FROM / WHERE (conjunctive) / GROUP BY with SUM, COUNT,
MIN, MAX aggregates. Key columns take equality filters only; annotation
columns take <, >, = filters. The translation produces the hypergraph
(vertices are attribute equivalence classes, hyperedges are relation
instances), the aggregation ordering over non-output key vertices, per-edge
annotation expressions, and the metadata bindings for non-aggregated
annotation columns.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, PlanningError, UserError
from .trie import KEY

# --- lexer ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<string>'(?:[^']|'')*')
  | (?P<op><=|>=|<>|!=|[(),.*+\-/<>=])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "select", "from", "where", "group", "by", "as", "and", "or",
    "sum", "count", "min", "max",
}


@dataclass(frozen=True)
class Token:
    kind: str  # keyword | name | number | string | op | eof
    text: str
    line: int
    col: int


def tokenize(sql):
    tokens = []
    line, bol = 1, 0
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if not m:
            raise ParseError(f"unexpected character {sql[pos]!r}", line, pos - bol + 1)
        kind = m.lastgroup
        text = m.group()
        if kind != "ws":
            col = pos - bol + 1
            if kind == "name" and text.lower() in _KEYWORDS:
                tokens.append(Token("keyword", text.lower(), line, col))
            else:
                tokens.append(Token(kind, text, line, col))
        line += text.count("\n")
        if "\n" in text:
            bol = pos + text.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, len(sql) - bol + 1))
    return tokens


# --- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnRef:
    alias: str  # relation instance; empty until resolved
    column: str
    line: int = 0
    col: int = 0

    def __str__(self):
        return f"{self.alias}.{self.column}" if self.alias else self.column


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Col:
    ref: ColumnRef


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Aggregate:
    func: str  # sum | count | min | max
    expr: object  # None for COUNT(*)
    line: int
    col: int


@dataclass
class SelectItem:
    value: object  # Aggregate | ColumnRef
    name: str


@dataclass
class Predicate:
    left: ColumnRef
    op: str  # = | < | >
    right: object  # ColumnRef | literal (float/str)
    line: int
    col: int


@dataclass
class Instance:
    alias: str
    relation: str
    schema: object


@dataclass
class QueryIR:
    instances: list
    select: list
    joins: list  # (ColumnRef, ColumnRef) on keys
    key_selections: list  # (ColumnRef, literal)
    ann_predicates: list  # (ColumnRef, op, literal)
    group_by: list  # ColumnRef

    def instance(self, alias):
        for inst in self.instances:
            if inst.alias == alias:
                return inst
        raise UserError(f"unknown relation instance {alias!r}")


class _Parser:
    def __init__(self, tokens, catalog):
        self.tokens = tokens
        self.i = 0
        self.catalog = catalog

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message, token=None):
        t = token or self.peek()
        raise ParseError(message, t.line, t.col)

    def expect_keyword(self, kw):
        t = self.next()
        if t.kind != "keyword" or t.text != kw:
            self.error(f"expected {kw.upper()}, found {t.text!r}", t)
        return t

    def accept_keyword(self, kw):
        t = self.peek()
        if t.kind == "keyword" and t.text == kw:
            self.i += 1
            return True
        return False

    def accept_op(self, op):
        t = self.peek()
        if t.kind == "op" and t.text == op:
            self.i += 1
            return True
        return False

    def expect_op(self, op):
        t = self.next()
        if t.kind != "op" or t.text != op:
            self.error(f"expected {op!r}, found {t.text!r}", t)
        return t

    # query := SELECT items FROM rels [WHERE conj] [GROUP BY cols]
    def parse_query(self):
        self.expect_keyword("select")
        select = self.parse_select_list()
        self.expect_keyword("from")
        instances = self.parse_from_list()
        predicates = []
        if self.accept_keyword("where"):
            predicates = self.parse_conjunction()
        group_by = []
        if self.accept_keyword("group"):
            self.expect_keyword("by")
            group_by = self.parse_column_list()
        t = self.peek()
        if t.kind != "eof":
            self.error(f"unexpected trailing input {t.text!r}", t)
        return select, instances, predicates, group_by

    def parse_select_list(self):
        items = [self.parse_select_item()]
        while self.accept_op(","):
            items.append(self.parse_select_item())
        return items

    def parse_select_item(self):
        t = self.peek()
        if t.kind == "keyword" and t.text in ("sum", "count", "min", "max"):
            self.next()
            self.expect_op("(")
            if t.text == "count" and self.accept_op("*"):
                expr = None
            else:
                expr = self.parse_expr()
            self.expect_op(")")
            value = Aggregate(t.text, expr, t.line, t.col)
        else:
            value = self.parse_column_ref()
        name = ""
        if self.accept_keyword("as"):
            nt = self.next()
            if nt.kind != "name":
                self.error("expected output name after AS", nt)
            name = nt.text
        return SelectItem(value, name)

    def parse_from_list(self):
        out = [self.parse_from_item()]
        while self.accept_op(","):
            out.append(self.parse_from_item())
        seen = set()
        for inst in out:
            if inst.alias in seen:
                raise UserError(f"duplicate relation alias {inst.alias!r}")
            seen.add(inst.alias)
        return out

    def parse_from_item(self):
        t = self.next()
        if t.kind != "name":
            self.error("expected relation name", t)
        relation = t.text
        schema = self.catalog.schema(relation)
        if schema is None:
            self.error(f"unknown relation {relation!r}", t)
        alias = relation
        if self.accept_keyword("as"):
            at = self.next()
            if at.kind != "name":
                self.error("expected alias after AS", at)
            alias = at.text
        elif self.peek().kind == "name":
            alias = self.next().text
        return Instance(alias, relation, schema)

    def parse_conjunction(self):
        preds = [self.parse_predicate()]
        while True:
            t = self.peek()
            if t.kind == "keyword" and t.text == "and":
                self.next()
                preds.append(self.parse_predicate())
            elif t.kind == "keyword" and t.text == "or":
                self.error("disjunctive WHERE is not supported", t)
            else:
                break
        return preds

    def parse_predicate(self):
        left = self.parse_column_ref()
        t = self.next()
        if t.kind != "op" or t.text not in ("=", "<", ">"):
            self.error(f"expected comparison operator, found {t.text!r}", t)
        op = t.text
        rt = self.peek()
        if rt.kind == "name":
            right = self.parse_column_ref()
        elif rt.kind == "number":
            self.next()
            right = _number(rt.text)
        elif rt.kind == "string":
            self.next()
            right = rt.text[1:-1].replace("''", "'")
        elif rt.kind == "op" and rt.text == "-":
            self.next()
            nt = self.next()
            if nt.kind != "number":
                self.error("expected number after unary minus", nt)
            right = -_number(nt.text)
        else:
            self.error(f"expected column or literal, found {rt.text!r}", rt)
        return Predicate(left, op, right, t.line, t.col)

    def parse_column_list(self):
        cols = [self.parse_column_ref()]
        while self.accept_op(","):
            cols.append(self.parse_column_ref())
        return cols

    def parse_column_ref(self):
        t = self.next()
        if t.kind != "name":
            self.error(f"expected column, found {t.text!r}", t)
        if self.accept_op("."):
            ct = self.next()
            if ct.kind != "name":
                self.error("expected column name after '.'", ct)
            return ColumnRef(t.text, ct.text, t.line, t.col)
        return ColumnRef("", t.text, t.line, t.col)

    # expr := term (('+'|'-') term)* ; term := factor (('*'|'/') factor)*
    def parse_expr(self):
        node = self.parse_term()
        while True:
            t = self.peek()
            if t.kind == "op" and t.text in ("+", "-"):
                self.next()
                node = BinOp(t.text, node, self.parse_term())
            else:
                return node

    def parse_term(self):
        node = self.parse_factor()
        while True:
            t = self.peek()
            if t.kind == "op" and t.text in ("*", "/"):
                self.next()
                node = BinOp(t.text, node, self.parse_factor())
            else:
                return node

    def parse_factor(self):
        t = self.peek()
        if t.kind == "op" and t.text == "(":
            self.next()
            node = self.parse_expr()
            self.expect_op(")")
            return node
        if t.kind == "op" and t.text == "-":
            self.next()
            return BinOp("-", Num(0.0), self.parse_factor())
        if t.kind == "number":
            self.next()
            return Num(_number(t.text))
        if t.kind == "name":
            return Col(self.parse_column_ref())
        self.error(f"expected expression, found {t.text!r}", t)


def _number(text):
    if re.fullmatch(r"\d+", text):
        return int(text)
    return float(text)


def _resolve_ref(ref, instances):
    """Bind a possibly-bare column reference to its owning instance."""
    if ref.alias:
        for inst in instances:
            if inst.alias == ref.alias:
                try:
                    inst.schema.column(ref.column)
                except Exception:
                    raise ParseError(
                        f"relation {inst.alias!r} has no column {ref.column!r}", ref.line, ref.col
                    ) from None
                return ref
        raise ParseError(f"unknown relation alias {ref.alias!r}", ref.line, ref.col)
    owners = []
    for inst in instances:
        if any(c.name == ref.column for c in inst.schema.columns):
            owners.append(inst)
    if not owners:
        raise ParseError(f"unknown column {ref.column!r}", ref.line, ref.col)
    if len(owners) > 1:
        names = ", ".join(o.alias for o in owners)
        raise ParseError(f"ambiguous column {ref.column!r} (in {names})", ref.line, ref.col)
    return ColumnRef(owners[0].alias, ref.column, ref.line, ref.col)


def _column_kind(ir, ref):
    return ir.instance(ref.alias).schema.column(ref.column).kind


def _walk_refs(expr):
    if isinstance(expr, Col):
        yield expr.ref
    elif isinstance(expr, BinOp):
        yield from _walk_refs(expr.left)
        yield from _walk_refs(expr.right)


def _resolve_expr(expr, instances):
    if isinstance(expr, Col):
        return Col(_resolve_ref(expr.ref, instances))
    if isinstance(expr, BinOp):
        return BinOp(expr.op, _resolve_expr(expr.left, instances), _resolve_expr(expr.right, instances))
    return expr


def parse(sql, catalog):
    """Parse and resolve a query against the catalog, returning a QueryIR."""
    tokens = tokenize(sql)
    select, instances, predicates, group_by = _Parser(tokens, catalog).parse_query()

    for item in select:
        if isinstance(item.value, Aggregate):
            if item.value.expr is not None:
                item.value = Aggregate(
                    item.value.func,
                    _resolve_expr(item.value.expr, instances),
                    item.value.line,
                    item.value.col,
                )
        else:
            item.value = _resolve_ref(item.value, instances)
    group_by = [_resolve_ref(g, instances) for g in group_by]
    ir = QueryIR(instances, select, [], [], [], group_by)

    for p in predicates:
        p.left = _resolve_ref(p.left, instances)
        if isinstance(p.right, ColumnRef):
            p.right = _resolve_ref(p.right, instances)
    for p in predicates:
        lkind = _column_kind(ir, p.left)
        if isinstance(p.right, ColumnRef):
            rkind = _column_kind(ir, p.right)
            if lkind == KEY and rkind == KEY:
                if p.op != "=":
                    raise ParseError("keys join with equality only", p.line, p.col)
                if p.left.alias == p.right.alias:
                    raise PlanningError(
                        "join equality between two key columns of the same instance is not supported"
                    )
                ir.joins.append((p.left, p.right))
            else:
                raise ParseError(
                    "column-to-column predicates are supported between key columns only",
                    p.line, p.col,
                )
        else:
            if lkind == KEY:
                if p.op != "=":
                    raise ParseError("keys support equality (=) filters only", p.line, p.col)
                ir.key_selections.append((p.left, p.right))
            else:
                ir.ann_predicates.append((p.left, p.op, p.right))

    grouped = {(g.alias, g.column) for g in group_by}
    n_aggs = 0
    for item in select:
        if isinstance(item.value, Aggregate):
            agg = item.value
            if agg.expr is not None:
                for ref in _walk_refs(agg.expr):
                    if _column_kind(ir, ref) == KEY:
                        raise ParseError("Keys cannot be aggregated", agg.line, agg.col)
            if not item.name:
                item.name = f"{agg.func}_{n_aggs}"
            n_aggs += 1
        else:
            ref = item.value
            if (ref.alias, ref.column) not in grouped:
                raise ParseError(
                    f"output column {ref} is neither grouped nor aggregated", ref.line, ref.col
                )
            if not item.name:
                item.name = ref.column
    names = [item.name for item in select]
    if len(names) != len(set(names)):
        raise UserError("duplicate output column names; disambiguate with AS")
    return ir


# --- semirings ----------------------------------------------------------------


@dataclass(frozen=True)
class Semiring:
    """Commutative semiring wiring for one aggregate kind."""

    name: str
    add: object  # ufunc
    mul: object  # ufunc

    def zero(self, dtype):
        if self.name == "min":
            return np.inf if dtype == np.float64 else np.iinfo(np.int64).max
        if self.name == "max":
            return -np.inf if dtype == np.float64 else np.iinfo(np.int64).min
        return dtype(0)

    def one(self, dtype):
        if self.name in ("min", "max"):
            return dtype(0)
        return dtype(1)


SEMIRINGS = {
    "sum": Semiring("sum", np.add, np.multiply),
    "count": Semiring("count", np.add, np.multiply),
    "min": Semiring("min", np.minimum, np.add),
    "max": Semiring("max", np.maximum, np.add),
}


@dataclass
class Component:
    """One aggregate output: its semiring, value dtype, and source expression."""

    func: str
    semiring: Semiring
    dtype: object
    expr: object  # resolved expression or None (COUNT(*))
    owners: frozenset  # instance aliases referenced by expr
    name: str


def expr_is_integral(expr, ir):
    if isinstance(expr, Num):
        return isinstance(expr.value, int)
    if isinstance(expr, Col):
        col = ir.instance(expr.ref.alias).schema.column(expr.ref.column)
        return col.type in ("int", "long")
    if isinstance(expr, BinOp):
        if expr.op == "/":
            return False
        return expr_is_integral(expr.left, ir) and expr_is_integral(expr.right, ir)
    return False


def eval_annotation_expr(expr, env):
    """Evaluate an arithmetic expression; env maps (alias, column) -> scalar
    or numpy array. Standard double semantics; division propagates IEEE."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Col):
        return env[(expr.ref.alias, expr.ref.column)]
    if isinstance(expr, BinOp):
        left = eval_annotation_expr(expr.left, env)
        right = eval_annotation_expr(expr.right, env)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.divide(left, right)
    raise UserError(f"cannot evaluate expression node {expr!r}")


# --- hypergraph translation ----------------------------------------------------


@dataclass
class Translated:
    """Hypergraph + aggregation ordering + edge annotations + meta bindings."""

    ir: QueryIR
    vertices: dict  # vname -> list[(alias, column)]
    vertex_of: dict  # (alias, column) -> vname
    edges: dict  # alias -> frozenset of vnames
    alpha: list  # [(vname, operator label)] over non-output key vertices
    output_key_vertices: list
    components: list
    colocations: list  # [frozenset of aliases] forced into one GHD node
    meta: dict  # (alias, column) -> alias, for non-aggregated annotations
    key_selections: dict  # vname -> [(alias, column, literal)]
    ann_predicates: dict  # alias -> [(column, op, literal)]
    group_by_keys: list  # vnames, in GROUP BY order
    group_by_anns: list  # [(alias, column)]
    select_plan: list  # ("key", vname, outname) | ("ann", alias, col, outname) | ("agg", idx, outname)

    def selected_vertices(self):
        return {v for v, sels in self.key_selections.items() if sels}


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _vertex_name(members, taken):
    from .trie import default_domain

    bases = sorted({default_domain(col) for _, col in members})
    name = bases[0] if len(bases) == 1 else "~".join(bases)
    if name in taken:
        k = 2
        while f"{name}#{k}" in taken:
            k += 1
        name = f"{name}#{k}"
    return name


def to_hypergraph(ir):
    """Apply the four translation rules, producing the hypergraph, the
    aggregation ordering, per-edge annotation expressions, and the meta
    bindings for non-aggregated annotation columns."""
    uf = _UnionFind()
    key_cols = []
    for inst in ir.instances:
        for c in inst.schema.key_columns():
            key_cols.append((inst.alias, c.name))
            uf.find((inst.alias, c.name))
    for left, right in ir.joins:
        uf.union((left.alias, left.column), (right.alias, right.column))

    classes = {}
    for kc in key_cols:
        classes.setdefault(uf.find(kc), []).append(kc)

    # domains must agree within a class: members share one dictionary
    vertices = {}
    vertex_of = {}
    taken = set()
    for root in sorted(classes, key=lambda r: sorted(classes[r])):
        members = sorted(classes[root])
        domains = set()
        for alias, col in members:
            schema = ir.instance(alias).schema
            domains.add(schema.column(col).resolved_domain())
        if len(domains) > 1:
            cols = ", ".join(f"{a}.{c}" for a, c in members)
            raise UserError(
                f"joined columns ({cols}) use different dictionary domains "
                f"({', '.join(sorted(domains))}); declare a shared domain in the schema"
            )
        name = _vertex_name(members, taken)
        taken.add(name)
        vertices[name] = members
        for m in members:
            vertex_of[m] = name

    edges = {}
    for inst in ir.instances:
        edges[inst.alias] = frozenset(
            vertex_of[(inst.alias, c.name)] for c in inst.schema.key_columns()
        )

    # Rule 3: annotation expressions per aggregate
    components = []
    colocations = []
    for item in ir.select:
        if not isinstance(item.value, Aggregate):
            continue
        agg = item.value
        # COUNT ignores its argument: no NULLs, so COUNT(col) = COUNT(*)
        expr = None if agg.func == "count" else agg.expr
        owners = frozenset(ref.alias for ref in _walk_refs(expr)) if expr else frozenset()
        semiring = SEMIRINGS[agg.func]
        if agg.func == "count":
            dtype = np.int64
        else:
            dtype = np.int64 if expr_is_integral(expr, ir) else np.float64
        components.append(Component(agg.func, semiring, dtype, expr, owners, item.name))
        if len(owners) > 1:
            colocations.append(owners)

    # Rule 4: remaining annotation columns -> meta bindings
    meta = {}
    aggregated = set()
    for comp in components:
        if comp.expr is not None:
            for ref in _walk_refs(comp.expr):
                aggregated.add((ref.alias, ref.column))
    group_by_anns = []
    group_by_keys = []
    for g in ir.group_by:
        kind = _column_kind(ir, g)
        if kind == KEY:
            v = vertex_of[(g.alias, g.column)]
            if v not in group_by_keys:
                group_by_keys.append(v)
        else:
            if (g.alias, g.column) not in group_by_anns:
                group_by_anns.append((g.alias, g.column))
    for alias, col in group_by_anns:
        meta[(alias, col)] = alias
    for ref, _op, _lit in ir.ann_predicates:
        if (ref.alias, ref.column) not in meta:
            meta[(ref.alias, ref.column)] = ref.alias

    # Rule 2: non-output key vertices form the aggregation ordering
    output_keys = list(group_by_keys)
    alpha = []
    op_labels = sorted({c.func for c in components}) or ["sum"]
    label = op_labels[0] if len(op_labels) == 1 else "mixed"
    mention_order = _textual_vertex_order(ir, vertices, vertex_of)
    for v in mention_order:
        if v not in output_keys:
            alpha.append((v, label))

    key_selections = {v: [] for v in vertices}
    for ref, lit in ir.key_selections:
        v = vertex_of[(ref.alias, ref.column)]
        key_selections[v].append((ref.alias, ref.column, lit))

    ann_predicates = {}
    for ref, op, lit in ir.ann_predicates:
        ann_predicates.setdefault(ref.alias, []).append((ref.column, op, lit))

    select_plan = []
    agg_idx = 0
    for item in ir.select:
        if isinstance(item.value, Aggregate):
            select_plan.append(("agg", agg_idx, item.name))
            agg_idx += 1
        else:
            ref = item.value
            if _column_kind(ir, ref) == KEY:
                select_plan.append(("key", vertex_of[(ref.alias, ref.column)], item.name))
            else:
                select_plan.append(("ann", ref.alias, ref.column, item.name))

    return Translated(
        ir=ir,
        vertices=vertices,
        vertex_of=vertex_of,
        edges=edges,
        alpha=alpha,
        output_key_vertices=output_keys,
        components=components,
        colocations=colocations,
        meta=meta,
        key_selections=key_selections,
        ann_predicates=ann_predicates,
        group_by_keys=group_by_keys,
        group_by_anns=group_by_anns,
        select_plan=select_plan,
    )


def _textual_vertex_order(ir, vertices, vertex_of):
    """Vertices by first mention in the query text; unmentioned ones follow
    in (FROM position, key position) order."""
    first = {}
    def note(ref, pos):
        v = vertex_of.get((ref.alias, ref.column))
        if v is not None and v not in first:
            first[v] = pos

    pos = 0
    for item in ir.select:
        refs = _walk_refs(item.value.expr) if isinstance(item.value, Aggregate) and item.value.expr else (
            [item.value] if isinstance(item.value, ColumnRef) else []
        )
        for ref in refs:
            note(ref, pos)
            pos += 1
    for left, right in ir.joins:
        note(left, pos); pos += 1
        note(right, pos); pos += 1
    for ref, _ in ir.key_selections:
        note(ref, pos); pos += 1
    for g in ir.group_by:
        note(g, pos); pos += 1
    tail = len(first) + 1000
    for fi, inst in enumerate(ir.instances):
        for ki, c in enumerate(inst.schema.key_columns()):
            v = vertex_of[(inst.alias, c.name)]
            if v not in first:
                first[v] = tail + fi * 100 + ki
    return sorted(vertices, key=lambda v: first[v])
