"""Seeded data generators: snowflake schemas, sparse and dense matrices.

The snowflake mirrors a region/nation/customer/supplier/orders/fact join
graph with Zipf-skewed foreign keys. All generators are deterministic under
an explicit seed.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import UserError


def _zipf_choice(rng, n, size, s):
    """size draws over [0, n) with probability proportional to 1/(rank+1)^s."""
    if s <= 0:
        return rng.integers(0, n, size)
    w = 1.0 / np.power(np.arange(1, n + 1, dtype=np.float64), s)
    w /= w.sum()
    return rng.choice(n, size=size, p=w)


def _write_csv(path, header, columns):
    n = len(columns[0]) if columns else 0
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        fmt_cols = []
        for col in columns:
            arr = np.asarray(col)
            if arr.dtype.kind == "f":
                fmt_cols.append([repr(float(x)) for x in arr])
            elif arr.dtype.kind in ("i", "u"):
                fmt_cols.append([str(int(x)) for x in arr])
            else:
                fmt_cols.append([str(x) for x in col])
        for row in zip(*fmt_cols):
            f.write(",".join(row) + "\n")
    return n


def _schema_doc(relation, columns, key_order, on_duplicate="error"):
    return {
        "relation": relation,
        "columns": columns,
        "key_order": key_order,
        "on_duplicate": on_duplicate,
    }


SNOWFLAKE_BASE = {
    "regions": 5,
    "nations": 25,
    "suppliers": 10_000,
    "customers": 30_000,
    "orders": 150_000,
    "lineitems": 1_000_000,
}


def gen_snowflake(out_dir, scale=1.0, seed=0, zipf_s=1.0, counts=None):
    """Write region/nation/customer/supplier/orders/lineitem CSVs + schemas.

    Foreign keys are Zipf(s)-skewed; lineitem (orderkey, suppkey) pairs are
    deduplicated and topped up with uniform pairs to hit the exact target.
    Returns {relation: row count}.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    c = dict(SNOWFLAKE_BASE)
    for k in c:
        if k not in ("regions", "nations"):
            c[k] = max(5, int(c[k] * scale))
    if counts:
        c.update(counts)

    n_r, n_n, n_s, n_c, n_o, n_l = (
        c["regions"], c["nations"], c["suppliers"], c["customers"], c["orders"], c["lineitems"],
    )

    region = {
        "r_regionkey": np.arange(n_r),
        "r_name": [f"REGION_{k}" for k in range(n_r)],
    }
    nation = {
        "n_nationkey": np.arange(n_n),
        "n_regionkey": rng.integers(0, n_r, n_n),
        "n_name": [f"NATION_{k}" for k in range(n_n)],
    }
    supplier = {
        "s_suppkey": np.arange(n_s),
        "s_nationkey": rng.integers(0, n_n, n_s),
    }
    customer = {
        "c_custkey": np.arange(n_c),
        "c_nationkey": rng.integers(0, n_n, n_c),
    }
    orders = {
        "o_orderkey": np.arange(n_o),
        "o_custkey": _zipf_choice(rng, n_c, n_o, zipf_s),
        "o_odate": rng.integers(0, 2400, n_o),
    }

    ok = _zipf_choice(rng, n_o, n_l, zipf_s).astype(np.int64)
    sk = _zipf_choice(rng, n_s, n_l, zipf_s).astype(np.int64)
    pair = ok * n_s + sk
    pair = np.unique(pair)
    missing = n_l - len(pair)
    while missing > 0:
        extra = rng.integers(0, n_o * n_s, max(missing * 2, 16))
        pair = np.unique(np.concatenate([pair, extra]))
        missing = n_l - len(pair)
    if len(pair) > n_l:
        pair = rng.permutation(pair)[:n_l]
        pair.sort()
    lineitem = {
        "l_orderkey": pair // n_s,
        "l_suppkey": pair % n_s,
        "l_price": np.round(rng.uniform(1.0, 1000.0, n_l), 2),
        "l_discount": np.round(rng.uniform(0.0, 0.1, n_l), 2),
    }

    tables = {
        "region": (region, [
            {"name": "r_regionkey", "kind": "key", "type": "int"},
            {"name": "r_name", "kind": "annotation", "type": "string"},
        ], ["r_regionkey"]),
        "nation": (nation, [
            {"name": "n_nationkey", "kind": "key", "type": "int"},
            {"name": "n_regionkey", "kind": "key", "type": "int"},
            {"name": "n_name", "kind": "annotation", "type": "string"},
        ], ["n_nationkey", "n_regionkey"]),
        "supplier": (supplier, [
            {"name": "s_suppkey", "kind": "key", "type": "int"},
            {"name": "s_nationkey", "kind": "key", "type": "int"},
        ], ["s_suppkey", "s_nationkey"]),
        "customer": (customer, [
            {"name": "c_custkey", "kind": "key", "type": "int"},
            {"name": "c_nationkey", "kind": "key", "type": "int"},
        ], ["c_custkey", "c_nationkey"]),
        "orders": (orders, [
            {"name": "o_orderkey", "kind": "key", "type": "int"},
            {"name": "o_custkey", "kind": "key", "type": "int"},
            {"name": "o_odate", "kind": "annotation", "type": "long"},
        ], ["o_orderkey", "o_custkey"]),
        "lineitem": (lineitem, [
            {"name": "l_orderkey", "kind": "key", "type": "int"},
            {"name": "l_suppkey", "kind": "key", "type": "int"},
            {"name": "l_price", "kind": "annotation", "type": "double"},
            {"name": "l_discount", "kind": "annotation", "type": "double"},
        ], ["l_orderkey", "l_suppkey"]),
    }

    written = {}
    for name, (cols, schema_cols, key_order) in tables.items():
        header = list(cols)
        n = _write_csv(os.path.join(out_dir, f"{name}.csv"), header, [cols[h] for h in header])
        with open(os.path.join(out_dir, f"{name}.schema.json"), "w", encoding="utf-8") as f:
            json.dump(_schema_doc(name, schema_cols, key_order), f, indent=2)
            f.write("\n")
        written[name] = n
    return written


def gen_sparse_matrix(path, n, nnz, seed=0):
    """MatrixMarket coordinate file with exactly nnz distinct coordinates."""
    if nnz > n * n:
        raise UserError(f"nnz={nnz} exceeds {n}x{n}")
    rng = np.random.default_rng(seed)
    flat = rng.choice(n * n, size=nnz, replace=False)
    flat.sort()
    i = flat // n
    j = flat % n
    v = rng.uniform(0.0, 1.0, nnz)
    with open(path, "w", encoding="utf-8") as f:
        f.write("%%MatrixMarket matrix coordinate real general\n")
        f.write(f"{n} {n} {nnz}\n")
        for a, b, x in zip(i.tolist(), j.tolist(), v.tolist()):
            f.write(f"{a + 1} {b + 1} {x!r}\n")
    return nnz


def gen_dense_matrix(path, n, seed=0, header=("i", "j", "v")):
    """CSV with every cell of an n x n random matrix."""
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0.0, 1.0, (n, n))
    i = np.repeat(np.arange(n), n)
    j = np.tile(np.arange(n), n)
    _write_csv(path, list(header), [i, j, vals.reshape(-1)])
    return n * n


def gen_vector(path, n, seed=0, header=("k", "v")):
    """CSV with a fully dense length-n vector."""
    rng = np.random.default_rng(seed)
    _write_csv(path, list(header), [np.arange(n), rng.uniform(0.0, 1.0, n)])
    return n
