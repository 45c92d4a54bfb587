"""Micro-benchmarks with delimited results and rendered figures.

Each suite returns rows of {suite, case, variant, seconds, ...}; the CLI
writes them to CSV and renders one bar-chart PNG per suite next to it.
Timing follows the measurement policy used everywhere in this project:
wall-clock of execution only, repeated, dropping the min and max before
averaging (for repeat >= 3).
"""

from __future__ import annotations

import csv
import os
import time

import numpy as np

from .catalog import Catalog
from .datagen import gen_dense_matrix, gen_snowflake, gen_sparse_matrix
from .executor import (
    Counters,
    PerWorkerTables,
    SharedConcurrentTable,
    execute,
    prepare,
)
from .ordering import worst_order
from .query_ir import SEMIRINGS, Component
from .sets import BITSET_ARRAY, HASH_TABLE, UnionAccumulator, choose_union_strategy
from .trie import load_schema_file, matrix_schema


def timed(fn, repeat=7):
    """Average wall-clock seconds, dropping min and max when repeat >= 3."""
    samples = []
    out = None
    for _ in range(max(1, repeat)):
        t0 = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - t0)
    if len(samples) >= 3:
        samples = sorted(samples)[1:-1]
    return sum(samples) / len(samples), out


SNOWFLAKE_QUERY = """
SELECT SUM(l_price * (1 - l_discount)) AS revenue
FROM customer, orders, lineitem, supplier, nation, region
WHERE c_custkey = o_custkey AND l_orderkey = o_orderkey AND l_suppkey = s_suppkey
  AND c_nationkey = s_nationkey AND c_nationkey = n_nationkey
  AND n_regionkey = r_regionkey AND r_name = 'REGION_0'
"""

# one million Zipf-skewed fact rows over dimensions sized so the best and
# worst attribute orders separate cleanly at desk scale
ATTR_ORDER_COUNTS = {
    "customers": 3500,
    "suppliers": 1000,
    "orders": 60_000,
    "lineitems": 1_000_000,
}


def snowflake_catalog(data_dir):
    catalog = Catalog()
    for rel in ("region", "nation", "customer", "supplier", "orders", "lineitem"):
        schema = load_schema_file(os.path.join(data_dir, f"{rel}.schema.json"))
        catalog.register(schema, os.path.join(data_dir, f"{rel}.csv"))
    return catalog


def bench_attr_order(data_dir, scale=1.0, seed=7, repeat=1, threads=1, counts=None):
    """Chosen vs worst-cost attribute order on the skewed snowflake."""
    if counts is None:
        counts = {k: max(5, int(v * scale)) for k, v in ATTR_ORDER_COUNTS.items()}
    if not os.path.exists(os.path.join(data_dir, "lineitem.csv")):
        gen_snowflake(data_dir, scale=1.0, seed=seed, counts=counts)
    catalog = snowflake_catalog(data_dir)
    prepared = prepare(SNOWFLAKE_QUERY, catalog)
    root = prepared.ghd.root
    m = prepared.meta[root.node_id]
    worst, worst_cost = worst_order(
        set(m.exec_vertices), m.traverse_mats, m.edge_infos, m.scores, m.selected
    )
    t_best, r_best = timed(lambda: execute(prepared, catalog, threads=threads), repeat)
    t_worst, r_worst = timed(
        lambda: execute(prepared, catalog, threads=threads,
                        order_override={root.node_id: worst}),
        repeat,
    )
    assert r_best.sorted_rows()[0][0] - r_worst.sorted_rows()[0][0] < 1e-6 * abs(
        r_best.sorted_rows()[0][0]
    )
    return [
        {"suite": "attr_order", "case": "snowflake", "variant": "chosen",
         "seconds": t_best, "order": " ".join(root.order)},
        {"suite": "attr_order", "case": "snowflake", "variant": "worst",
         "seconds": t_worst, "order": " ".join(worst)},
    ]


def bench_smm_order(work_dir, n=2000, nnz=200_000, seed=11, repeat=1):
    """Planner's sparse-matmul order vs the worst one, with frontier counters."""
    os.makedirs(work_dir, exist_ok=True)
    path = os.path.join(work_dir, f"smm_{n}_{nnz}.mtx")
    if not os.path.exists(path):
        gen_sparse_matrix(path, n, nnz, seed=seed)
    catalog = Catalog()
    catalog.register(matrix_schema("m"), path)
    sql = "SELECT a.i, b.j, SUM(a.v * b.v) AS val FROM m a, m b WHERE a.j = b.i GROUP BY a.i, b.j"
    prepared = prepare(sql, catalog)
    root = prepared.ghd.root
    chosen = list(root.order)

    candidates = prepared.order_candidates(root.node_id)
    worst = max((c for c in candidates if not c[1]), key=lambda c: (c[2], c[0]))[0]

    best_counters = Counters()
    t_best, _ = timed(lambda: execute(prepared, catalog, counters=best_counters), repeat)
    worst_counters = Counters()
    t_worst, _ = timed(
        lambda: execute(prepared, catalog, counters=worst_counters,
                        order_override={root.node_id: worst}),
        repeat,
    )
    scale = max(1, repeat)
    return [
        {"suite": "smm_order", "case": f"{n}x{n},nnz={nnz}", "variant": "chosen",
         "seconds": t_best, "order": " ".join(chosen),
         "tuples": best_counters.tuples_materialized // scale},
        {"suite": "smm_order", "case": f"{n}x{n},nnz={nnz}", "variant": "worst",
         "seconds": t_worst, "order": " ".join(worst),
         "tuples": worst_counters.tuples_materialized // scale},
    ]


def _groupby_key_stream(rng, universe, density, batches=64):
    n_keys = max(1, int(universe * density))
    keys = np.sort(rng.choice(universe, size=n_keys, replace=False)).astype(np.uint32)
    out = []
    for _ in range(batches):
        take = rng.integers(1, max(2, n_keys), dtype=np.int64)
        idx = np.sort(rng.choice(n_keys, size=min(take, n_keys), replace=False))
        out.append((keys[idx], rng.uniform(0.0, 1.0, len(idx))))
    return out


def bench_groupby_key(universe=200_000, densities=(1e-3, 1e-2, 0.1, 0.5, 0.9),
                      seed=3, repeat=3):
    """Bitset-array vs hash-table key union across output densities."""
    comps = [(np.float64, np.add, 0.0)]
    rows = []
    rng = np.random.default_rng(seed)
    for density in densities:
        stream = _groupby_key_stream(rng, universe, density)

        def run(strategy):
            acc = UnionAccumulator((0, universe), comps, strategy)
            for ids, vals in stream:
                acc.add(ids, [vals])
            return acc.result()

        t_bs, out_bs = timed(lambda: run(BITSET_ARRAY), repeat)
        t_hash, out_hash = timed(lambda: run(HASH_TABLE), repeat)
        assert np.array_equal(out_bs[0].to_array(), out_hash[0].to_array())
        chosen = choose_union_strategy(density)
        rows.append({"suite": "groupby_key", "case": f"density={density}",
                     "variant": "BITSET_ARRAY", "seconds": t_bs,
                     "chosen": chosen == BITSET_ARRAY})
        rows.append({"suite": "groupby_key", "case": f"density={density}",
                     "variant": "HASH_TABLE", "seconds": t_hash,
                     "chosen": chosen == HASH_TABLE})
    return rows


def bench_groupby_ann(n_rows=100_000, widths=(1, 2, 6), n_groups=128,
                      seed=5, repeat=3, workers=4, width_threshold=3):
    """Per-worker tables vs the shared concurrent table across key widths."""
    from concurrent.futures import ThreadPoolExecutor

    sem = SEMIRINGS["sum"]
    comps = [Component("sum", sem, np.float64, None, frozenset(), "v")]
    rng = np.random.default_rng(seed)
    rows = []
    for width in widths:
        keys = [tuple(rng.integers(0, 64, width).tolist()) for _ in range(n_groups)]
        pick = rng.integers(0, n_groups, n_rows)
        vals = rng.uniform(0.0, 1.0, n_rows)
        data = [(keys[pick[r]], vals[r]) for r in range(n_rows)]
        chunks = np.array_split(np.arange(n_rows), workers)

        def run(table_cls):
            table = table_cls(comps, workers)

            def work(wid, idx):
                for r in idx:
                    table.upsert(wid, data[r][0], (data[r][1],))

            with ThreadPoolExecutor(max_workers=workers) as ex:
                list(ex.map(work, range(workers), chunks))
            return table.merged()

        t_pw, out_pw = timed(lambda: run(PerWorkerTables), repeat)
        t_sh, out_sh = timed(lambda: run(SharedConcurrentTable), repeat)
        assert set(out_pw) == set(out_sh)
        chosen = "PER_WORKER_TABLES" if width <= width_threshold else "SHARED_CONCURRENT_TABLE"
        rows.append({"suite": "groupby_ann", "case": f"width={width}",
                     "variant": "PER_WORKER_TABLES", "seconds": t_pw,
                     "chosen": chosen == "PER_WORKER_TABLES"})
        rows.append({"suite": "groupby_ann", "case": f"width={width}",
                     "variant": "SHARED_CONCURRENT_TABLE", "seconds": t_sh,
                     "chosen": chosen == "SHARED_CONCURRENT_TABLE"})
    return rows


def bench_dense(work_dir, n=512, seed=13, repeat=1):
    """Dense fast path vs the forced trie path on an n x n matrix product."""
    os.makedirs(work_dir, exist_ok=True)
    path = os.path.join(work_dir, f"dense_{n}.csv")
    if not os.path.exists(path):
        gen_dense_matrix(path, n, seed=seed)
    catalog = Catalog()
    catalog.register(matrix_schema("d", on_duplicate="error"), path)
    sql = "SELECT a.i, b.j, SUM(a.v * b.v) AS val FROM d a, d b WHERE a.j = b.i GROUP BY a.i, b.j"
    prepared = prepare(sql, catalog)
    c_fast = Counters()
    t_fast, _ = timed(lambda: execute(prepared, catalog, counters=c_fast), repeat)
    t_trie, _ = timed(lambda: execute(prepared, catalog, use_dense=False), repeat)
    assert c_fast.dense_dispatch >= 1
    return [
        {"suite": "dense", "case": f"{n}x{n}", "variant": "dense_kernel", "seconds": t_fast},
        {"suite": "dense", "case": f"{n}x{n}", "variant": "trie_path", "seconds": t_trie},
    ]


# -- report rendering -----------------------------------------------------------


def write_results(rows, out_dir):
    """CSV of all rows plus one grouped-bar PNG per suite; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "bench_results.csv")
    fields = sorted({k for row in rows for k in row})
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = [csv_path]
    suites = sorted({r["suite"] for r in rows})
    for suite in suites:
        sub = [r for r in rows if r["suite"] == suite]
        cases = sorted({r["case"] for r in sub})
        variants = sorted({r["variant"] for r in sub})
        fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(cases), 3.6))
        width = 0.8 / len(variants)
        x = np.arange(len(cases))
        for vi, variant in enumerate(variants):
            ys = []
            for case in cases:
                match = [r["seconds"] for r in sub
                         if r["case"] == case and r["variant"] == variant]
                ys.append(match[0] if match else 0.0)
            ax.bar(x + vi * width, ys, width, label=variant)
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels(cases, rotation=20, ha="right", fontsize=8)
        ax.set_ylabel("seconds")
        ax.set_yscale("log")
        ax.set_title(suite)
        ax.legend(fontsize=8)
        fig.tight_layout()
        png = os.path.join(out_dir, f"bench_{suite}.png")
        fig.savefig(png, dpi=120)
        plt.close(fig)
        paths.append(png)
    return paths
