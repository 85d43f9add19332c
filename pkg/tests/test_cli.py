import csv
import io
import json
from pathlib import Path

import pytest

from percweb.cli import build_config, emit_plotdata, main, make_parser, verify_manifest
from percweb.errors import SchemaMismatch


def _run_dir(out: Path, sub: str) -> Path:
    (d,) = sorted((out / sub).iterdir())
    return d


def _csvs(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


def _write(path: Path, obj) -> str:
    path.write_text(json.dumps(obj))
    return str(path)


def test_list(capsys):
    assert main(["list"]) == 0
    names = capsys.readouterr().out.split()
    assert "tails" in names and "f-check" in names and len(names) == 14


def test_clt_p_one_assert(tmp_path, capsys):
    conf = _write(tmp_path / "c.json", {"clt.n_max": 100})
    code = main(["run", "clt", "--p", "1.0", "--assert", "--replicates", "100000",
                 "--config", conf, "--out", str(tmp_path)])
    assert code == 0
    res = json.loads((_run_dir(tmp_path, "clt") / "result.json").read_text())
    assert abs(res["fits"]["v_hat"] - 2 / 3) <= 0.01
    assert "PASS clt.v_anchor" in capsys.readouterr().out


def test_p_zero_is_invalid(tmp_path, capsys):
    assert main(["run", "density", "--p", "0.0", "--out", str(tmp_path)]) == 1
    assert "invalid configuration" in capsys.readouterr().err


def test_subcritical_guard(tmp_path, capsys):
    assert main(["run", "tails", "--p", "0.5", "--replicates", "10", "--out", str(tmp_path)]) == 1
    assert "subcritical" in capsys.readouterr().err


def test_assert_failure_exit_two(tmp_path):
    conf = _write(tmp_path / "c.json", {"width": 2000, "rows": 20})
    assert main(["run", "holes", "--p", "1.0", "--config", conf, "--out", str(tmp_path)]) == 0
    assert main(["run", "holes", "--p", "1.0", "--config", conf, "--assert", "--out", str(tmp_path)]) == 2


def test_bad_config_file(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    assert main(["run", "tails", "--config", str(p), "--out", str(tmp_path)]) == 1
    assert "invalid configuration" in capsys.readouterr().err


def test_config_keys_and_overrides(tmp_path):
    conf = _write(tmp_path / "c.json", {"seed": 5, "replicates": 7, "tails.separations": [1, 2],
                                         "params.n_grid": [10, 20], "gap.M_grid": [1]})
    args = make_parser().parse_args(["run", "tails", "--config", conf, "--sep", "3,4", "--p", "0.9"])
    c = build_config(args)
    assert (c.seed, c.replicates, c.p) == (5, 7, 0.9)
    assert c.params == {"separations": [3, 4], "n_grid": [10, 20]}


def test_outputs_and_manifest(tmp_path):
    conf = _write(tmp_path / "c.json", {"n_grid": [10, 20, 40], "separations": [1, 2]})
    assert main(["run", "tails", "--replicates", "300", "--config", conf, "--out", str(tmp_path)]) == 0
    d = _run_dir(tmp_path, "tails")
    assert {p.name for p in d.iterdir()} == {"result.json", "tails.csv", "manifest.json"}
    m = json.loads((d / "manifest.json").read_text())
    assert m["master_seed"] == 1 and set(m["outputs"]) == {"result.json", "tails.csv"}
    assert m["config"]["params"]["separations"] == [1, 2]
    assert verify_manifest(d)
    with open(d / "tails.csv", "a") as fh:
        fh.write("tampered\n")
    assert not verify_manifest(d)


def test_rerun_byte_identical_across_threads(tmp_path):
    conf = _write(tmp_path / "c.json", {"n_grid": [10, 40], "separations": [1, 3]})
    for th, out in (("1", "a"), ("3", "b")):
        assert main(["run", "tails", "--replicates", "4100", "--threads", th, "--config", conf,
                     "--out", str(tmp_path / out)]) == 0
    assert _csvs(_run_dir(tmp_path / "a", "tails")) == _csvs(_run_dir(tmp_path / "b", "tails"))


def test_plotdata_series_and_round_trip(tmp_path, capsys):
    conf = _write(tmp_path / "c.json", {"n_grid": [10, 20, 40], "separations": [1, 2, 4]})
    assert main(["run", "tails", "--replicates", "300", "--config", conf, "--out", str(tmp_path)]) == 0
    res_path = _run_dir(tmp_path, "tails") / "result.json"
    capsys.readouterr()
    assert main(["plotdata", str(res_path)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert {r["series"] for r in rows} == {"tails:1", "tails:2", "tails:4"}
    res = json.loads(res_path.read_text())
    t = res["tables"]["tails"]
    ip = t["columns"].index("p_hat")
    want = [r[ip] for r in t["rows"]]
    got = [float(r["y"]) for r in rows]
    assert got == want
    assert all(float(f"{g:.15g}") == float(f"{w:.15g}") for g, w in zip(got, want))


def test_plotdata_empty_table(tmp_path):
    res = {"schema_version": 1, "experiment": "tails",
           "tables": {"tails": {"columns": ["n", "p_hat"], "rows": [], "plot": {"x": "n", "y": "p_hat"}}}}
    out = tmp_path / "plot.csv"
    text = emit_plotdata(_write(tmp_path / "r.json", res), out)
    assert text == "experiment,series,x,y,y_err\n" == out.read_text()


def test_plotdata_schema_mismatch(tmp_path, capsys):
    p = _write(tmp_path / "r.json", {"schema_version": 99, "experiment": "x", "tables": {}})
    with pytest.raises(SchemaMismatch):
        emit_plotdata(p)
    assert main(["plotdata", p]) == 1
    assert "schema mismatch" in capsys.readouterr().err
    bad = {"schema_version": 1, "experiment": "x",
           "tables": {"t": {"columns": ["a"], "rows": [], "plot": {"x": "a", "y": "b"}}}}
    with pytest.raises(SchemaMismatch):
        emit_plotdata(_write(tmp_path / "r2.json", bad))
