"""Reference query engine: hash-grouped nested-loop joins over raw rows.

Deliberately independent of the trie/join machinery: rows are plain dicts
of decoded values read straight from the source files, joins are evaluated
relation by relation, and aggregation is a sequential fold in Python
arithmetic. Serves as ground truth for the acceptance suite.
"""

from __future__ import annotations

from .query_ir import Aggregate, eval_annotation_expr, parse


def _collapse_duplicates(rows, schema):
    """Mirror the ingest-time duplicate policy on raw rows."""
    key_names = [c.name for c in schema.key_columns()]
    ann_names = [c.name for c in schema.annotation_columns()]
    if schema.on_duplicate == "error":
        return rows
    combine = {"sum": lambda a, b: a + b, "min": min, "max": max}[schema.on_duplicate]
    merged = {}
    for row in rows:
        key = tuple(row[k] for k in key_names)
        got = merged.get(key)
        if got is None:
            merged[key] = dict(row)
        else:
            for a in ann_names:
                got[a] = combine(got[a], row[a])
    return list(merged.values())


def _passes(value, op, lit):
    if op == "=":
        return value == lit
    if op == "<":
        return value < lit
    return value > lit


def run_oracle(sql, catalog):
    """Execute the query naively; returns (columns, list of row tuples)."""
    ir = parse(sql, catalog)

    per_instance = {}
    for inst in ir.instances:
        rows = catalog.raw_rows(inst.relation)
        rows = _collapse_duplicates(rows, inst.schema)
        keep = []
        for row in rows:
            ok = True
            for ref, lit in ir.key_selections:
                if ref.alias == inst.alias:
                    col = inst.schema.column(ref.column)
                    want = int(lit) if col.type in ("int", "long") else (
                        float(lit) if col.type in ("float", "double") else str(lit))
                    if row[ref.column] != want:
                        ok = False
            for ref, op, lit in ir.ann_predicates:
                if ref.alias == inst.alias and not _passes(row[ref.column], op, lit):
                    ok = False
            if ok:
                keep.append(row)
        per_instance[inst.alias] = keep

    # join one relation at a time, indexing the incoming side on whichever
    # equality predicates already have their other column bound
    bound = []  # list of env dicts keyed (alias, column)
    bound_aliases = set()
    for idx, inst in enumerate(ir.instances):
        rows = per_instance[inst.alias]
        link = []
        for left, right in ir.joins:
            if left.alias == inst.alias and right.alias in bound_aliases:
                link.append((left.column, (right.alias, right.column)))
            elif right.alias == inst.alias and left.alias in bound_aliases:
                link.append((right.column, (left.alias, left.column)))
        if idx == 0:
            bound = [
                {(inst.alias, k): v for k, v in row.items()} for row in rows
            ]
        elif not link:
            out = []
            for env in bound:
                for row in rows:
                    e2 = dict(env)
                    for k, v in row.items():
                        e2[(inst.alias, k)] = v
                    out.append(e2)
            bound = out
        else:
            index = {}
            cols = [c for c, _ in link]
            for row in rows:
                index.setdefault(tuple(row[c] for c in cols), []).append(row)
            out = []
            for env in bound:
                key = tuple(env[ref] for _, ref in link)
                for row in index.get(key, ()):
                    e2 = dict(env)
                    for k, v in row.items():
                        e2[(inst.alias, k)] = v
                    out.append(e2)
            bound = out
        bound_aliases.add(inst.alias)

    # late filter: every join predicate must hold (covers transitive chains)
    tuples = [
        env for env in bound
        if all(env[(l.alias, l.column)] == env[(r.alias, r.column)] for l, r in ir.joins)
    ]

    group_cols = [(g.alias, g.column) for g in ir.group_by]
    groups = {}
    order = []
    for env in tuples:
        key = tuple(env[c] for c in group_cols)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(env)

    columns = []
    aggs = []
    for item in ir.select:
        columns.append(item.name)
        if isinstance(item.value, Aggregate):
            aggs.append(item.value)

    out_rows = []
    for key in order:
        envs = groups[key]
        row = []
        for item in ir.select:
            if isinstance(item.value, Aggregate):
                row.append(_aggregate(item.value, envs))
            else:
                ref = item.value
                row.append(envs[0][(ref.alias, ref.column)])
        out_rows.append(tuple(row))
    if not group_cols and not tuples:
        out_rows = []
    return columns, out_rows


def _aggregate(agg, envs):
    if agg.func == "count":
        return len(envs)
    values = [eval_annotation_expr(agg.expr, env) for env in envs]
    if agg.func == "sum":
        total = values[0]
        for v in values[1:]:
            total = total + v
        return total
    if agg.func == "min":
        return min(values)
    return max(values)
