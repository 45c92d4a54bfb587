"""Command-line surface: ingest, query, explain, oracle, gen, bench.

Exit codes: 0 success, 1 user error (bad input, bad SQL, unplannable
query), 2 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from .catalog import DATA_DIR_ENV, Catalog, load_catalog, manifest_path, save_manifest
from .errors import UserError
from .executor import Counters, execute, prepare
from .oracle import run_oracle
from .trie import load_schema_file, matrix_schema


def _data_dir(args):
    d = args.data_dir or os.environ.get(DATA_DIR_ENV)
    if not d:
        raise UserError(f"no data directory: pass --data-dir or set {DATA_DIR_ENV}")
    return d


def cmd_ingest(args):
    data_dir = _data_dir(args)
    os.makedirs(data_dir, exist_ok=True)
    if args.source.endswith(".mtx"):
        relation = args.relation or os.path.splitext(os.path.basename(args.source))[0]
        schema = matrix_schema(relation)
        schema_path = "<matrix>"
    else:
        if not args.schema:
            raise UserError("--schema is required for delimited sources")
        schema = load_schema_file(args.schema)
        schema_path = args.schema

    sources = {}
    if os.path.exists(manifest_path(data_dir)):
        catalog = load_catalog(data_dir)
        sources = dict(catalog._sources)
    else:
        catalog = Catalog()
    catalog.register(schema, args.source, args.delimiter)
    trie = catalog.build(schema.relation)
    sources[schema.relation] = (schema_path, args.source, args.delimiter)
    save_manifest(catalog, data_dir, sources)

    print(f"ingested {schema.relation}: {trie.n_rows} key tuples, {trie.n_levels} levels")
    for lvl, (col, census) in enumerate(zip(trie.key_names(), trie.census())):
        print(f"  level{lvl} ({col}) = {{{census['uint']} uint sets, {census['bs']} bs sets}}")
    return 0


def cmd_query(args):
    catalog = load_catalog(_data_dir(args))
    if args.threads:
        catalog.options.workers = args.threads
    prepared = prepare(args.sql, catalog)
    counters = Counters()
    result = None
    samples = []
    for _ in range(max(1, args.repeat)):
        counters = Counters()
        t0 = time.perf_counter()
        result = execute(prepared, catalog, threads=catalog.options.workers,
                         counters=counters)
        samples.append(time.perf_counter() - t0)
    if len(samples) >= 3:
        samples = sorted(samples)[1:-1]
    elapsed = sum(samples) / len(samples)

    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            result.write_delimited(f)
        print(f"wrote {result.n_rows} rows to {args.output}")
    else:
        result.write_delimited(sys.stdout)
    print(f"execution: {elapsed * 1000:.3f} ms over {max(1, args.repeat)} run(s)",
          file=sys.stderr)
    if args.stats:
        for k, v in counters.as_dict().items():
            if v:
                print(f"  {k} = {v}", file=sys.stderr)
    return 0


def cmd_explain(args):
    catalog = load_catalog(_data_dir(args))
    prepared = prepare(args.sql, catalog)
    sys.stdout.write(prepared.explain())
    return 0


def cmd_oracle(args):
    catalog = load_catalog(_data_dir(args))
    columns, rows = run_oracle(args.sql, catalog)
    from .executor import ResultTable

    table = ResultTable(columns, [list(c) for c in zip(*rows)] if rows else
                        [[] for _ in columns])
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            table.write_delimited(f)
        print(f"wrote {table.n_rows} rows to {args.output}")
    else:
        table.write_delimited(sys.stdout)
    return 0


def cmd_gen(args):
    from . import datagen

    if args.kind == "snowflake":
        out = _data_dir(args)
        counts = datagen.gen_snowflake(out, scale=args.scale, seed=args.seed,
                                       zipf_s=args.zipf)
        for rel, n in sorted(counts.items()):
            print(f"{rel}: {n} rows")
    elif args.kind == "sparse":
        nnz = datagen.gen_sparse_matrix(args.output, args.n, args.nnz, seed=args.seed)
        print(f"{args.output}: {args.n}x{args.n}, {nnz} nonzeros")
    elif args.kind == "dense":
        n = datagen.gen_dense_matrix(args.output, args.n, seed=args.seed)
        print(f"{args.output}: {args.n}x{args.n}, {n} cells")
    else:
        n = datagen.gen_vector(args.output, args.n, seed=args.seed)
        print(f"{args.output}: vector of {n}")
    return 0


def cmd_bench(args):
    from . import bench

    work = os.path.join(_data_dir(args), "bench_work")
    rows = []
    if args.suite in ("all", "groupby"):
        rows += bench.bench_groupby_key(repeat=args.repeat)
        rows += bench.bench_groupby_ann(repeat=args.repeat)
    if args.suite in ("all", "dense"):
        rows += bench.bench_dense(work, n=args.dense_n, repeat=args.repeat)
    if args.suite in ("all", "smm-order"):
        rows += bench.bench_smm_order(work, n=args.smm_n, nnz=args.smm_nnz,
                                      repeat=args.repeat)
    if args.suite in ("all", "attr-order"):
        rows += bench.bench_attr_order(os.path.join(work, "snowflake"),
                                       scale=args.scale, repeat=args.repeat,
                                       threads=args.threads or 1)
    out_dir = args.output or os.path.join(_data_dir(args), "bench_out")
    paths = bench.write_results(rows, out_dir)
    for p in paths:
        print(p)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wcoj",
        description="In-memory aggregate-join engine over trie-stored relations",
    )
    parser.add_argument("--data-dir", default=None,
                        help=f"catalog directory (default: ${DATA_DIR_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="register and build a relation")
    p.add_argument("source", help="delimited file or MatrixMarket .mtx")
    p.add_argument("--schema", help="schema JSON (delimited sources)")
    p.add_argument("--relation", help="relation name for .mtx sources")
    p.add_argument("--delimiter", default=",")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("query", help="plan and execute a query")
    p.add_argument("sql")
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--stats", action="store_true")
    p.add_argument("--output")
    p.add_argument("--repeat", type=int, default=1)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("explain", help="print the plan without executing")
    p.add_argument("sql")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("oracle", help="run the naive reference engine")
    p.add_argument("sql")
    p.add_argument("--output")
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("gen", help="generate data files")
    p.add_argument("kind", choices=["snowflake", "sparse", "dense", "vector"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.01)
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--nnz", type=int, default=5000)
    p.add_argument("--output", help="output file (matrix/vector kinds)")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("bench", help="run micro-benchmarks, write CSV + figures")
    p.add_argument("suite", choices=["all", "groupby", "dense", "smm-order", "attr-order"])
    p.add_argument("--repeat", type=int, default=7)
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--dense-n", type=int, default=512)
    p.add_argument("--smm-n", type=int, default=2000)
    p.add_argument("--smm-nnz", type=int, default=200_000)
    p.add_argument("--output", help="output directory for results + figures")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0
    except Exception as e:  # internal failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
