import json
import os

import pytest

from wcoj.cli import main
from wcoj.datagen import gen_snowflake, gen_sparse_matrix


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_schema(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f)


@pytest.fixture
def identity_mtx(tmp_path):
    path = tmp_path / "eye.mtx"
    lines = ["%%MatrixMarket matrix coordinate real general", "4 4 4"]
    lines += [f"{k} {k} 1.0" for k in range(1, 5)]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestIngest:
    def test_census_output(self, tmp_path, capsys, identity_mtx):
        code, out, _ = run_cli(capsys, "--data-dir", str(tmp_path / "db"),
                               "ingest", identity_mtx, "--relation", "eye")
        assert code == 0
        assert "ingested eye: 4 key tuples, 2 levels" in out
        assert "level0 (i) = {0 uint sets, 1 bs sets}" in out

    def test_reingest_is_deterministic(self, tmp_path, capsys, identity_mtx):
        args = ("--data-dir", str(tmp_path / "db"), "ingest", identity_mtx,
                "--relation", "eye")
        _, out1, _ = run_cli(capsys, *args)
        _, out2, _ = run_cli(capsys, *args)
        assert out1 == out2

    def test_bad_row_exit_code_and_row_number(self, tmp_path, capsys):
        src = tmp_path / "t.csv"
        src.write_text("k,v\n1,2.0\noops,3.0\n")
        schema = tmp_path / "t.json"
        write_schema(schema, {"relation": "t", "columns": [
            {"name": "k", "kind": "key", "type": "int"},
            {"name": "v", "kind": "annotation", "type": "double"}]})
        code, _, err = run_cli(capsys, "--data-dir", str(tmp_path / "db"),
                               "ingest", str(src), "--schema", str(schema))
        assert code == 1
        assert "row 3" in err

    def test_missing_data_dir_is_user_error(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("WCOJ_DATA_DIR", raising=False)
        code, _, err = run_cli(capsys, "query", "SELECT COUNT(*) FROM x")
        assert code == 1 and "data directory" in err

    def test_env_var_default(self, tmp_path, capsys, identity_mtx, monkeypatch):
        monkeypatch.setenv("WCOJ_DATA_DIR", str(tmp_path / "db"))
        code, out, _ = run_cli(capsys, "ingest", identity_mtx, "--relation", "eye")
        assert code == 0


class TestQuery:
    def setup_db(self, tmp_path, capsys, identity_mtx):
        db = str(tmp_path / "db")
        run_cli(capsys, "--data-dir", db, "ingest", identity_mtx, "--relation", "eye")
        return db

    def test_smv_identity_returns_vector(self, tmp_path, capsys, identity_mtx):
        db = self.setup_db(tmp_path, capsys, identity_mtx)
        vec = tmp_path / "x.csv"
        vec.write_text("k,xv\n0,5.0\n1,6.0\n2,7.0\n3,8.0\n")
        schema = tmp_path / "vec.json"
        write_schema(schema, {"relation": "vec", "columns": [
            {"name": "k", "kind": "key", "type": "int", "domain": "eye_dim"},
            {"name": "xv", "kind": "annotation", "type": "double"}]})
        run_cli(capsys, "--data-dir", db, "ingest", str(vec), "--schema", str(schema))
        out_path = tmp_path / "out.csv"
        code, out, err = run_cli(capsys, "--data-dir", db, "query",
                                 "SELECT a.i, SUM(a.v * x.xv) AS y FROM eye a, vec x "
                                 "WHERE a.j = x.k GROUP BY a.i",
                                 "--output", str(out_path))
        assert code == 0
        body = out_path.read_text().strip().splitlines()
        assert body[0] == "i,y"
        got = [line.split(",") for line in body[1:]]
        assert [(int(a), float(b)) for a, b in got] == \
            [(0, 5.0), (1, 6.0), (2, 7.0), (3, 8.0)]
        assert "execution:" in err

    def test_threads_equal_outputs(self, tmp_path, capsys, identity_mtx):
        db = self.setup_db(tmp_path, capsys, identity_mtx)
        sql = "SELECT a.i, b.j, SUM(a.v*b.v) AS val FROM eye a, eye b WHERE a.j = b.i GROUP BY a.i, b.j"
        outs = []
        for threads in ("1", "8"):
            path = tmp_path / f"out{threads}.csv"
            code, _, _ = run_cli(capsys, "--data-dir", db, "query", sql,
                                 "--threads", threads, "--output", str(path))
            assert code == 0
            outs.append(path.read_text())
        assert outs[0] == outs[1]

    def test_stats_flag(self, tmp_path, capsys, identity_mtx):
        db = self.setup_db(tmp_path, capsys, identity_mtx)
        code, _, err = run_cli(capsys, "--data-dir", db, "query",
                               "SELECT COUNT(*) AS c FROM eye", "--stats")
        assert code == 0
        assert "tuples_materialized" in err

    def test_parse_error_exit_one(self, tmp_path, capsys, identity_mtx):
        db = self.setup_db(tmp_path, capsys, identity_mtx)
        code, _, err = run_cli(capsys, "--data-dir", db, "query", "SELECT FROM eye")
        assert code == 1 and "error" in err


class TestExplain:
    def test_matmul_relaxation_flag(self, tmp_path, capsys):
        db = str(tmp_path / "db")
        mtx = tmp_path / "m.mtx"
        gen_sparse_matrix(str(mtx), 30, 100, seed=1)
        run_cli(capsys, "--data-dir", db, "ingest", str(mtx), "--relation", "m")
        code, out, _ = run_cli(capsys, "--data-dir", db, "explain",
                               "SELECT a.i, b.j, SUM(a.v*b.v) AS v FROM m a, m b "
                               "WHERE a.j = b.i GROUP BY a.i, b.j")
        assert code == 0
        assert "order=[i(0,100),i~j(10,100),j(0,100)]" in out
        assert "union=j" in out
        assert "groupby_key=adaptive(1/16)" in out

    def test_triangle_width(self, tmp_path, capsys):
        db = str(tmp_path / "db")
        for rel, cols in (("re", ("ra", "rb")), ("se", ("sb", "sc")), ("te", ("ta", "tc"))):
            src = tmp_path / f"{rel}.csv"
            src.write_text(f"{cols[0]},{cols[1]}\n1,2\n")
            schema = tmp_path / f"{rel}.json"
            doms = {"ra": "va", "rb": "vb", "sb": "vb", "sc": "vc", "ta": "va", "tc": "vc"}
            write_schema(schema, {"relation": rel, "columns": [
                {"name": c, "kind": "key", "type": "int", "domain": doms[c]} for c in cols]})
            run_cli(capsys, "--data-dir", db, "ingest", str(src), "--schema", str(schema))
        code, out, _ = run_cli(capsys, "--data-dir", db, "explain",
                               "SELECT COUNT(*) AS c FROM re, se, te "
                               "WHERE rb = sb AND ra = ta AND sc = tc")
        assert code == 0
        assert "width=3/2" in out

    def test_scan_has_empty_order(self, tmp_path, capsys, identity_mtx):
        db = str(tmp_path / "db")
        run_cli(capsys, "--data-dir", db, "ingest", identity_mtx, "--relation", "eye")
        code, out, _ = run_cli(capsys, "--data-dir", db, "explain",
                               "SELECT SUM(v) FROM eye")
        assert code == 0
        assert "order=[]" in out and "cost=0" in out

    def test_explain_deterministic(self, tmp_path, capsys, identity_mtx):
        db = str(tmp_path / "db")
        run_cli(capsys, "--data-dir", db, "ingest", identity_mtx, "--relation", "eye")
        sql = ("SELECT a.i, b.j, SUM(a.v*b.v) AS v FROM eye a, eye b "
               "WHERE a.j = b.i GROUP BY a.i, b.j")
        outs = {run_cli(capsys, "--data-dir", db, "explain", sql)[1] for _ in range(3)}
        assert len(outs) == 1


class TestGen:
    def test_snowflake_counts_within_one_percent(self, tmp_path, capsys):
        code, out, _ = run_cli(capsys, "--data-dir", str(tmp_path / "sf"),
                               "gen", "snowflake", "--scale", "0.01", "--seed", "3")
        assert code == 0
        counts = dict(line.split(": ") for line in out.strip().splitlines())
        assert int(counts["lineitem"].split()[0]) == 10_000  # exactly on target
        assert int(counts["orders"].split()[0]) == 1500

    def test_sparse_exact_nnz(self, tmp_path, capsys):
        out_path = tmp_path / "s.mtx"
        code, out, _ = run_cli(capsys, "gen", "sparse", "--n", "1000",
                               "--nnz", "5000", "--output", str(out_path))
        assert code == 0
        lines = out_path.read_text().strip().splitlines()
        coords = {tuple(line.split()[:2]) for line in lines[2:]}
        assert len(coords) == 5000

    def test_same_seed_identical_files(self, tmp_path, capsys):
        p1, p2 = tmp_path / "a.mtx", tmp_path / "b.mtx"
        run_cli(capsys, "gen", "sparse", "--n", "100", "--nnz", "500",
                "--seed", "9", "--output", str(p1))
        run_cli(capsys, "gen", "sparse", "--n", "100", "--nnz", "500",
                "--seed", "9", "--output", str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_snowflake_seeded_reproducible(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        gen_snowflake(str(d1), scale=0.002, seed=5)
        gen_snowflake(str(d2), scale=0.002, seed=5)
        assert (d1 / "lineitem.csv").read_bytes() == (d2 / "lineitem.csv").read_bytes()


class TestOracleCommand:
    def test_count_returns_n(self, tmp_path, capsys, identity_mtx):
        db = str(tmp_path / "db")
        run_cli(capsys, "--data-dir", db, "ingest", identity_mtx, "--relation", "eye")
        code, out, _ = run_cli(capsys, "--data-dir", db, "oracle",
                               "SELECT COUNT(*) AS c FROM eye")
        assert code == 0
        assert out.strip().splitlines() == ["c", "4"]

    def test_engine_matches_oracle_output(self, tmp_path, capsys):
        db = str(tmp_path / "db")
        mtx = tmp_path / "m.mtx"
        gen_sparse_matrix(str(mtx), 40, 300, seed=2)
        run_cli(capsys, "--data-dir", db, "ingest", str(mtx), "--relation", "m")
        sql = ("SELECT a.i, b.j, SUM(a.v*b.v) AS val FROM m a, m b "
               "WHERE a.j = b.i GROUP BY a.i, b.j")
        engine_out = tmp_path / "e.csv"
        oracle_out = tmp_path / "o.csv"
        assert run_cli(capsys, "--data-dir", db, "query", sql,
                       "--output", str(engine_out))[0] == 0
        assert run_cli(capsys, "--data-dir", db, "oracle", sql,
                       "--output", str(oracle_out))[0] == 0
        e_lines = engine_out.read_text().strip().splitlines()
        o_lines = oracle_out.read_text().strip().splitlines()
        assert e_lines[0] == o_lines[0]
        for el, ol in zip(e_lines[1:], o_lines[1:]):
            ef = el.split(",")
            of = ol.split(",")
            assert ef[:2] == of[:2]
            assert abs(float(ef[2]) - float(of[2])) <= 1e-9 * max(1.0, abs(float(of[2])))


class TestExitCodes:
    def test_missing_catalog_is_user_error(self, tmp_path, capsys):
        from wcoj.cli import main as cli_main

        code = cli_main(["--data-dir", str(tmp_path), "explain", "SELECT 1"])
        _ = capsys.readouterr()
        assert code == 1

    def test_internal_error_exit_two(self, tmp_path, capsys, monkeypatch):
        import wcoj.cli as cli

        def boom(_data_dir):
            raise RuntimeError("boom")

        monkeypatch.setattr(cli, "load_catalog", boom)
        code = cli.main(["--data-dir", str(tmp_path), "explain", "SELECT 1"])
        _, err = capsys.readouterr().out, capsys.readouterr().err
        assert code == 2


class TestSnowflakeRoundTrip:
    def test_query_matches_oracle_command(self, tmp_path, capsys):
        db = str(tmp_path / "sf")
        assert run_cli(capsys, "--data-dir", db, "gen", "snowflake",
                       "--scale", "0.002", "--seed", "11")[0] == 0
        for rel in ("region", "nation", "customer", "supplier", "orders", "lineitem"):
            code, _, _ = run_cli(capsys, "--data-dir", db, "ingest",
                                 os.path.join(db, f"{rel}.csv"),
                                 "--schema", os.path.join(db, f"{rel}.schema.json"))
            assert code == 0
        sql = ("SELECT n_name, SUM(l_price * (1 - l_discount)) AS rev "
               "FROM customer, orders, lineitem, supplier, nation, region "
               "WHERE c_custkey = o_custkey AND l_orderkey = o_orderkey "
               "AND l_suppkey = s_suppkey AND c_nationkey = s_nationkey "
               "AND c_nationkey = n_nationkey AND n_regionkey = r_regionkey "
               "AND r_name = 'REGION_0' GROUP BY n_name")
        engine_out = tmp_path / "e.csv"
        oracle_out = tmp_path / "o.csv"
        assert run_cli(capsys, "--data-dir", db, "query", sql,
                       "--output", str(engine_out))[0] == 0
        assert run_cli(capsys, "--data-dir", db, "oracle", sql,
                       "--output", str(oracle_out))[0] == 0
        e_lines = engine_out.read_text().strip().splitlines()
        o_lines = oracle_out.read_text().strip().splitlines()
        assert e_lines[0] == o_lines[0] and len(e_lines) == len(o_lines)
        for el, ol in zip(e_lines[1:], o_lines[1:]):
            ef, of = el.split(","), ol.split(",")
            assert ef[0] == of[0]
            assert abs(float(ef[1]) - float(of[1])) <= 1e-9 * max(1.0, abs(float(of[1])))


class TestBenchCommand:
    def test_bench_writes_csv_and_figures(self, tmp_path, capsys):
        db = str(tmp_path / "db")
        os.makedirs(db, exist_ok=True)
        out_dir = tmp_path / "report"
        code, out, _ = run_cli(capsys, "--data-dir", db, "bench", "dense",
                               "--dense-n", "48", "--repeat", "1",
                               "--output", str(out_dir))
        assert code == 0
        assert (out_dir / "bench_results.csv").exists()
        assert (out_dir / "bench_dense.png").exists()
        body = (out_dir / "bench_results.csv").read_text()
        assert "dense_kernel" in body and "trie_path" in body
