import json

import numpy as np
import pytest

from rdfem.cli import build_parser, main, make_config


def test_table_h_to_stdout(capsys):
    assert main(["table-h", "--rho", "1", "--n", "2", "4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("rho,n,h,dofs,l2,eoc_l2,h1,eoc_h1")
    assert len(lines) == 3
    assert lines[1].split(",")[5] == "nan"


def test_outputs_plot_and_gnuplot(tmp_path):
    out = tmp_path / "h.csv"
    assert main(["table-h", "--rho", "1", "0.01", "--n", "2", "4", "--out", str(out), "--gnuplot", "--plot"]) == 0
    assert out.read_text().count("\n") == 5
    assert (tmp_path / "h.csv.dat").exists()
    png = tmp_path / "h.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


@pytest.mark.parametrize("cmd", [["table-rho", "--rho", "0.1", "0.05"],
                                 ["bench-precond", "--rho", "1", "1e-6", "--n", "4"],
                                 ["bench-precond", "--precond", "bddc", "--rho", "1", "--n", "4", "--p", "2", "4"]])
def test_other_tables_plot(tmp_path, cmd):
    out = tmp_path / "t.csv"
    assert main(cmd + ["--out", str(out), "--plot"]) == 0
    assert out.exists() and (tmp_path / "t.png").exists()


def test_adapt_writes_summary(tmp_path):
    out = tmp_path / "a.csv"
    assert main(["adapt", "--rho", "1e-2", "--budget", "300", "--out", str(out), "--plot"]) == 0
    summary = (tmp_path / "a_summary.csv").read_text().splitlines()
    assert summary[0].startswith("rho,dofs,levels")
    assert len(summary) == 2
    assert (tmp_path / "a.png").exists()


def test_failed_rows_exit_one(capsys):
    assert main(["bench-precond", "--precond", "bddc", "--rho", "1", "--n", "2", "--p", "1000"]) == 1
    assert "1 row(s) failed" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["table-h", "--tol", "-1"], ["table-h", "--plot"],
                                  ["bench-precond", "--precond", "bddc", "--p", "1"]])
def test_invalid_exit_two(argv):
    assert main(argv) == 2


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"rho_list": [1e-3], "n_list": [4], "tol": 1e-6}))
    args = build_parser().parse_args(["table-h", "--config", str(cfg), "--n", "8"])
    c = make_config(args)
    assert c.rho_list == [1e-3] and c.n_list == [8] and c.tol == 1e-6
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["table-h", "--config", str(cfg)]) == 2


def test_bddc_bench_defaults():
    c = make_config(build_parser().parse_args(["bench-precond", "--precond", "bddc"]))
    assert c.rho_list == [1.0, 1e-4, 1e-8, 1e-12] and c.n_list == [16] and c.subdomain_counts == [2, 4, 8]
    c = make_config(build_parser().parse_args(["bench-precond"]))
    assert c.n_list == [8, 16, 32] and len(c.rho_list) == 7


def test_export_vtk(tmp_path):
    out = tmp_path / "s.vtk"
    assert main(["export-vtk", "--example", "box", "--n", "4", "--precond", "bddc", "--p", "4",
                 "--out", str(out)]) == 0
    text = out.read_text()
    for name in ("u_h", "target", "control", "indicator", "generation", "subdomain"):
        assert name in text
    assert "CELL_TYPES 384" in text
    cells = text.split("CELL_TYPES 384")[1].split()
    assert set(cells[:384]) == {"10"}


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ("table-h", "table-rho", "bench-precond", "adapt", "export-vtk"):
        assert cmd in out
