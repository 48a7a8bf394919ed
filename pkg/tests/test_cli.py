import csv
import io
import json
import os
import subprocess
import sys

import pytest

from corank.cli import main


def run(capsys, *args):
    code = main(list(args))
    out, err = capsys.readouterr()
    return code, out, err


def body(text):
    return list(csv.reader(io.StringIO("\n".join(l for l in text.splitlines() if not l.startswith("#")))))


def test_chain_distribution_has_n_plus_one_rows(capsys):
    code, out, _ = run(capsys, "chain", "--kind", "uniform", "--q", "2", "--m", "0", "--n", "8")
    assert code == 0
    rows = body(out)
    assert rows[0] == ["index", "weight_exact", "weight"]
    assert len(rows) == 10
    assert "# command=chain" in out and "# n=8" in out


def test_chain_tv_table_has_signed_columns(capsys):
    code, out, _ = run(capsys, "chain", "--kind", "hermitian", "--q", "3", "--n", "20", "--tv")
    assert code == 0
    rows = body(out)
    assert "residual" in rows[0] and "signed_inner" in rows[0]
    idx = rows[0].index("signed_inner")
    signs = [float(r[idx]) > 0 for r in rows[1:]]
    assert len(signs) == 20 and all(a != b for a, b in zip(signs, signs[1:]))


def test_domain_errors_exit_two(capsys):
    code, _, err = run(capsys, "chain", "--kind", "uniform", "--q", "2", "--m", "-2", "--n", "3")
    assert code == 2 and "m must exceed -1" in err
    assert run(capsys, "simulate", "--ensemble", "scs", "--field", "4", "--trials", "10")[0] == 2
    assert run(capsys, "cokernel", "--p", "4", "--type", "1")[0] == 2
    assert run(capsys, "chain", "--q", "abc", "--n", "2")[0] == 2


def test_simulate_is_byte_reproducible(tmp_path, capsys):
    outs = []
    for _ in range(2):
        j = tmp_path / "h.json"
        code, out, _ = run(capsys, "simulate", "--ensemble", "alternating", "--n", "6", "--trials", "20000",
                           "--seed", "3", "--json", str(j))
        assert code == 0
        outs.append((out, j.read_bytes()))
    assert outs[0] == outs[1]
    doc = json.loads(outs[0][1])
    assert set(doc) == {"config", "result", "metadata"}
    # even n: only even coranks occur
    assert all(int(k) % 2 == 0 for k in doc["result"]["histogram"]["counts"])
    assert doc["result"]["within_threshold"]


def test_spectrum_csv(capsys):
    code, out, _ = run(capsys, "spectrum", "--kind", "symmetric", "--q", "2", "--N", "60")
    rows = body(out)
    assert code == 0 and rows[0][3] == "sign" and len(rows) == 61
    assert all(abs(float(r[1]) + 1) > 1e-3 for r in rows[1:])


def test_cokernel_validate(capsys):
    code, out, _ = run(capsys, "cokernel", "--p", "3", "--m", "0", "--type", "1", "--n-range", "1..8", "--validate")
    rows = body(out)
    assert code == 0 and len(rows) == 9
    assert all(r[-1] == "True" for r in rows[1:])


def test_expansion_subcommand(capsys):
    code, out, _ = run(capsys, "expansion", "--kind", "uniform", "--q", "2", "--n-range", "10..14")
    assert code == 0 and "# within_cap=True" in out


def test_classgroup_csv_and_svg(tmp_path, capsys):
    svg = tmp_path / "e.svg"
    code, out, _ = run(capsys, "classgroup", "--p", "3", "--type", "1", "--X", "30000", "--checkpoints", "6",
                       "--svg", str(svg))
    assert code == 0
    rows = body(out)
    assert rows[0] == ["X", "count_all", "count_match", "E", "log_ratio"] and len(rows) == 7
    assert svg.read_text().lstrip().startswith("<?xml")
    first = svg.read_bytes()
    run(capsys, "classgroup", "--p", "3", "--type", "1", "--X", "30000", "--checkpoints", "6", "--svg", str(svg))
    assert svg.read_bytes() == first


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nkind=symmetric\nq=3\nn=5\ntv=false\n")
    code, out, _ = run(capsys, "chain", "--config", str(cfg), "--n", "4")
    assert code == 0
    assert "# kind=symmetric" in out and "# n=4" in out
    assert len(body(out)) == 6
    cfg.write_text("bogus=1\n")
    assert run(capsys, "chain", "--config", str(cfg), "--n", "4")[0] == 2


def test_prec_env_default():
    env = dict(os.environ, CORANK_PREC="128")
    out = subprocess.run([sys.executable, "-c", "import corank.qseries as q; print(q.DEFAULT_PREC)"], env=env,
                         capture_output=True, text=True, check=True).stdout
    assert out.strip() == "128"
