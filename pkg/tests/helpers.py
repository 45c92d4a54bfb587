"""Shared test utilities: catalog builders, random databases and queries,
and engine-vs-reference comparison."""

from __future__ import annotations

import os

import numpy as np

from wcoj.catalog import Catalog
from wcoj.trie import Schema

REL_TOL = 1e-9


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                             for v in row) + "\n")


def build_catalog(tmp_dir, tables):
    """tables: {name: (schema_doc, header, rows)} -> Catalog over CSV files."""
    os.makedirs(tmp_dir, exist_ok=True)
    catalog = Catalog()
    for name, (schema_doc, header, rows) in tables.items():
        path = os.path.join(tmp_dir, f"{name}.csv")
        write_csv(path, header, rows)
        catalog.register(Schema.from_json(schema_doc), path)
    return catalog


def _sort_key(row):
    out = []
    for v in row:
        if isinstance(v, (bytes, str)):
            out.append((1, v))
        else:
            out.append((0, float(v)))
    return tuple(out)


def assert_tables_equal(result, oracle_rows, rel_tol=REL_TOL):
    """result: engine ResultTable; oracle_rows: list of tuples."""
    got = sorted(result.rows(), key=_sort_key)
    want = sorted(oracle_rows, key=_sort_key)
    assert len(got) == len(want), f"row count {len(got)} != {len(want)}"
    for g, w in zip(got, want):
        assert len(g) == len(w)
        for gv, wv in zip(g, w):
            if isinstance(wv, str):
                assert str(gv) == wv, (g, w)
            elif isinstance(wv, float) or isinstance(gv, (float, np.floating)):
                denom = max(abs(float(wv)), 1.0)
                assert abs(float(gv) - float(wv)) <= rel_tol * denom, (g, w)
            else:
                assert int(gv) == int(wv), (g, w)


def key_col(name, domain):
    return {"name": name, "kind": "key", "type": "int", "domain": domain}


def ann_col(name, typ="double"):
    return {"name": name, "kind": "annotation", "type": typ}


def _unique_rows(rng, n_rows, key_sizes, ann_makers):
    seen = set()
    rows = []
    tries = 0
    while len(rows) < n_rows and tries < n_rows * 20:
        tries += 1
        key = tuple(int(rng.integers(0, k)) for k in key_sizes)
        if key in seen:
            continue
        seen.add(key)
        rows.append(key + tuple(mk(rng) for mk in ann_makers))
    return rows


def _f(rng):
    return round(float(rng.uniform(-10, 10)), 3)


def _i(rng):
    return int(rng.integers(-50, 50))


def _s(rng):
    return f"G{int(rng.integers(0, 5))}"


CHAIN = "chain"
STAR = "star"
SNOWFLAKE = "snowflake"
TRIANGLE = "triangle"
CYCLE4 = "cycle4"
EVENTS = "events"
SHAPES = [CHAIN, STAR, SNOWFLAKE, TRIANGLE, CYCLE4, EVENTS]


def random_case(rng, shape=None):
    """One random database + a batch of queries exercising it.

    Returns (tables, queries): tables as for build_catalog, queries a list
    of SQL strings whose results must match the reference engine.
    """
    shape = shape or SHAPES[int(rng.integers(0, len(SHAPES)))]
    d = {k: int(rng.integers(3, 14)) for k in "abcdefg"}
    big = int(rng.integers(20, 400))
    small = int(rng.integers(3, 40))

    if shape == CHAIN:
        tables = {
            "ra": ({"relation": "ra",
                    "columns": [key_col("k0", "d0"), key_col("k1", "d1"),
                                ann_col("x"), ann_col("xi", "int")],
                    "key_order": ["k0", "k1"]},
                   ["k0", "k1", "x", "xi"],
                   _unique_rows(rng, big, (d["a"], d["b"]), (_f, _i))),
            "rb": ({"relation": "rb",
                    "columns": [key_col("m1", "d1"), key_col("m2", "d2"),
                                ann_col("y"), ann_col("tag", "string")],
                    "key_order": ["m1", "m2"]},
                   ["m1", "m2", "y", "tag"],
                   _unique_rows(rng, small, (d["b"], d["c"]), (_f, _s))),
            "rc": ({"relation": "rc",
                    "columns": [key_col("p2", "d2"), key_col("p3", "d3"), ann_col("z")],
                    "key_order": ["p2", "p3"]},
                   ["p2", "p3", "z"],
                   _unique_rows(rng, small, (d["c"], d["d"]), (_f,))),
        }
        lit0 = int(rng.integers(0, d["a"]))
        lit = round(float(rng.uniform(-5, 5)), 2)
        queries = [
            "SELECT SUM(x * y) AS s FROM ra, rb WHERE k1 = m1",
            "SELECT COUNT(*) AS c, SUM(xi) AS sx FROM ra, rb, rc "
            "WHERE k1 = m1 AND m2 = p2",
            f"SELECT k0, SUM(y) AS s, MIN(x) AS lo FROM ra, rb WHERE k1 = m1 "
            f"AND x > {lit} GROUP BY k0",
            f"SELECT tag, COUNT(*) AS c, MAX(z) AS hi FROM ra, rb, rc "
            f"WHERE k1 = m1 AND m2 = p2 AND k0 = {lit0} GROUP BY tag",
            "SELECT k1, tag, SUM(x) AS s FROM ra, rb WHERE k1 = m1 GROUP BY k1, tag",
            "SELECT MIN(xi) AS lo, MAX(xi) AS hi FROM ra",
        ]
    elif shape == STAR:
        tables = {
            "fact": ({"relation": "fact",
                      "columns": [key_col("f1", "e1"), key_col("f2", "e2"),
                                  ann_col("m"), ann_col("mi", "int")],
                      "key_order": ["f1", "f2"]},
                     ["f1", "f2", "m", "mi"],
                     _unique_rows(rng, big, (d["a"], d["b"]), (_f, _i))),
            "dim1": ({"relation": "dim1",
                      "columns": [key_col("g1", "e1"), ann_col("w1"),
                                  ann_col("cat", "string")],
                      "key_order": ["g1"]},
                     ["g1", "w1", "cat"],
                     _unique_rows(rng, d["a"], (d["a"],), (_f, _s))),
            "dim2": ({"relation": "dim2",
                      "columns": [key_col("g2", "e2"), ann_col("w2", "int")],
                      "key_order": ["g2"]},
                     ["g2", "w2"],
                     _unique_rows(rng, d["b"], (d["b"],), (_i,))),
        }
        lit = round(float(rng.uniform(-5, 5)), 2)
        g2lit = int(rng.integers(0, d["b"]))
        queries = [
            "SELECT SUM(m) AS s, COUNT(*) AS c FROM fact, dim1, dim2 "
            "WHERE f1 = g1 AND f2 = g2",
            f"SELECT cat, SUM(m) AS s FROM fact, dim1 WHERE f1 = g1 AND w1 < {lit} "
            "GROUP BY cat",
            f"SELECT f1, COUNT(*) AS c, MAX(w2) AS w FROM fact, dim2 WHERE f2 = g2 "
            f"AND g2 = {g2lit} GROUP BY f1",
            "SELECT f2, MIN(m) AS lo FROM fact, dim1 WHERE f1 = g1 GROUP BY f2",
            "SELECT SUM(m * w2) AS sw FROM fact, dim2 WHERE f2 = g2",
        ]
    elif shape == SNOWFLAKE:
        n_r, n_n, n_c, n_s, n_o = 3, 6, d["a"] + 4, d["b"] + 3, big
        tables = {
            "region": ({"relation": "region",
                        "columns": [key_col("r_regionkey", "regionkey"),
                                    ann_col("r_name", "string")],
                        "key_order": ["r_regionkey"]},
                       ["r_regionkey", "r_name"],
                       [(k, f"R{k}") for k in range(n_r)]),
            "nation": ({"relation": "nation",
                        "columns": [key_col("n_nationkey", "nationkey"),
                                    key_col("n_regionkey", "regionkey"),
                                    ann_col("n_name", "string")],
                        "key_order": ["n_nationkey", "n_regionkey"]},
                       ["n_nationkey", "n_regionkey", "n_name"],
                       [(k, int(rng.integers(0, n_r)), f"N{k}") for k in range(n_n)]),
            "customer": ({"relation": "customer",
                          "columns": [key_col("c_custkey", "custkey"),
                                      key_col("c_nationkey", "nationkey")],
                          "key_order": ["c_custkey", "c_nationkey"]},
                         ["c_custkey", "c_nationkey"],
                         [(k, int(rng.integers(0, n_n))) for k in range(n_c)]),
            "supplier": ({"relation": "supplier",
                          "columns": [key_col("s_suppkey", "suppkey"),
                                      key_col("s_nationkey", "nationkey")],
                          "key_order": ["s_suppkey", "s_nationkey"]},
                         ["s_suppkey", "s_nationkey"],
                         [(k, int(rng.integers(0, n_n))) for k in range(n_s)]),
            "orders": ({"relation": "orders",
                        "columns": [key_col("o_orderkey", "orderkey"),
                                    key_col("o_custkey", "custkey"),
                                    ann_col("o_odate", "long")],
                        "key_order": ["o_orderkey", "o_custkey"]},
                       ["o_orderkey", "o_custkey", "o_odate"],
                       [(k, int(rng.integers(0, n_c)), int(rng.integers(0, 100)))
                        for k in range(n_o)]),
            "lineitem": ({"relation": "lineitem",
                          "columns": [key_col("l_orderkey", "orderkey"),
                                      key_col("l_suppkey", "suppkey"),
                                      ann_col("l_price"), ann_col("l_discount")],
                          "key_order": ["l_orderkey", "l_suppkey"]},
                         ["l_orderkey", "l_suppkey", "l_price", "l_discount"],
                         _unique_rows(rng, big * 2, (n_o, n_s),
                                      (lambda r: round(float(r.uniform(1, 100)), 2),
                                       lambda r: round(float(r.uniform(0, 0.2)), 2)))),
        }
        rlit = f"R{int(rng.integers(0, n_r))}"
        dlit = int(rng.integers(20, 80))
        base = ("FROM customer, orders, lineitem, supplier, nation, region "
                "WHERE c_custkey = o_custkey AND l_orderkey = o_orderkey "
                "AND l_suppkey = s_suppkey AND c_nationkey = s_nationkey "
                "AND c_nationkey = n_nationkey AND n_regionkey = r_regionkey")
        queries = [
            f"SELECT SUM(l_price * (1 - l_discount)) AS rev {base} AND r_name = '{rlit}'",
            f"SELECT n_name, SUM(l_price * (1 - l_discount)) AS rev, COUNT(*) AS c "
            f"{base} AND r_name = '{rlit}' AND o_odate > {dlit} GROUP BY n_name",
            f"SELECT COUNT(*) AS c {base}",
            f"SELECT r_name, MAX(l_price) AS hi {base} GROUP BY r_name",
        ]
    elif shape == TRIANGLE:
        nv = d["a"] + 3
        tables = {
            "re": ({"relation": "re",
                    "columns": [key_col("ra", "va"), key_col("rb", "vb"), ann_col("xw")],
                    "key_order": ["ra", "rb"]},
                   ["ra", "rb", "xw"],
                   _unique_rows(rng, big, (nv, nv), (_f,))),
            "se": ({"relation": "se",
                    "columns": [key_col("sb", "vb"), key_col("sc", "vc")],
                    "key_order": ["sb", "sc"]},
                   ["sb", "sc"],
                   _unique_rows(rng, big, (nv, nv), ())),
            "te": ({"relation": "te",
                    "columns": [key_col("ta", "va"), key_col("tc", "vc")],
                    "key_order": ["ta", "tc"]},
                   ["ta", "tc"],
                   _unique_rows(rng, big, (nv, nv), ())),
        }
        queries = [
            "SELECT COUNT(*) AS triangles FROM re, se, te "
            "WHERE rb = sb AND ra = ta AND sc = tc",
            "SELECT ra, COUNT(*) AS c, SUM(xw) AS s FROM re, se, te "
            "WHERE rb = sb AND ra = ta AND sc = tc GROUP BY ra",
        ]
    elif shape == EVENTS:
        # string-keyed dimension plus a three-key fact relation
        n_users, n_days, n_items = 6, 9, 12
        fact_rows = []
        seen = set()
        for _ in range(big):
            key = (f"u{int(rng.integers(0, n_users))}", int(rng.integers(0, n_days)),
                   int(rng.integers(0, n_items)))
            if key in seen:
                continue
            seen.add(key)
            fact_rows.append(key + (round(float(rng.uniform(0, 9)), 2),))
        tables = {
            "ev": ({"relation": "ev", "columns": [
                        {"name": "user", "kind": "key", "type": "string", "domain": "user"},
                        key_col("day", "day"), key_col("item", "item"), ann_col("amt")],
                    "key_order": ["user", "day", "item"]},
                   ["user", "day", "item", "amt"], fact_rows),
            "us": ({"relation": "us", "columns": [
                        {"name": "uname", "kind": "key", "type": "string", "domain": "user"},
                        ann_col("tier", "string")],
                    "key_order": ["uname"]},
                   ["uname", "tier"],
                   [(f"u{k}", f"tier{k % 2}") for k in range(n_users)]),
            "it": ({"relation": "it", "columns": [key_col("iid", "item"), ann_col("price")],
                    "key_order": ["iid"]},
                   ["iid", "price"],
                   [(k, float(k) + 0.5) for k in range(n_items)]),
        }
        day_lit = int(rng.integers(0, n_days))
        user_lit = f"u{int(rng.integers(0, n_users))}"
        queries = [
            "SELECT tier, SUM(amt * price) AS s, COUNT(*) AS c FROM ev, us, it "
            "WHERE user = uname AND item = iid GROUP BY tier",
            f"SELECT uname, MIN(amt) AS lo FROM ev, us WHERE user = uname "
            f"AND day = {day_lit} GROUP BY uname",
            f"SELECT COUNT(*) AS c FROM ev, us WHERE user = uname AND uname = '{user_lit}'",
            "SELECT day, tier, MAX(price) AS m FROM ev, us, it WHERE user = uname "
            "AND item = iid AND tier = 'tier1' GROUP BY day, tier",
        ]
    else:  # CYCLE4
        nv = d["a"] + 3
        mk = lambda n1, n2: _unique_rows(rng, small + 25, (nv, nv), (_f,))
        tables = {}
        names = [("e1", "w", "x"), ("e2", "x", "y"), ("e3", "y", "z"), ("e4", "z", "w")]
        for rel, dl, dr in names:
            tables[rel] = (
                {"relation": rel,
                 "columns": [key_col(f"{rel}l", f"v{dl}"), key_col(f"{rel}r", f"v{dr}"),
                             ann_col(f"{rel}v")],
                 "key_order": [f"{rel}l", f"{rel}r"]},
                [f"{rel}l", f"{rel}r", f"{rel}v"],
                mk(dl, dr),
            )
        queries = [
            "SELECT COUNT(*) AS c FROM e1, e2, e3, e4 "
            "WHERE e1r = e2l AND e2r = e3l AND e3r = e4l AND e4r = e1l",
            "SELECT e1l, SUM(e2v) AS s FROM e1, e2, e3, e4 "
            "WHERE e1r = e2l AND e2r = e3l AND e3r = e4l AND e4r = e1l GROUP BY e1l",
            "SELECT MIN(e1v) AS lo, MAX(e3v) AS hi, COUNT(*) AS c FROM e1, e2, e3, e4 "
            "WHERE e1r = e2l AND e2r = e3l AND e3r = e4l AND e4r = e1l",
        ]
    return tables, queries
