import csv
import io
import json

import pytest

from nhdnls import __version__
from nhdnls.cli import build_config, main, run
from nhdnls.errors import ConfigError


def meta(d):
    return json.loads((d / "meta.json").read_text())


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_vacuum_zcc_is_exactly_zero(tmp_path):
    assert main(["zcc-check", "nls", "--rho", "const", "--q", "vacuum", "--out", str(tmp_path)]) == 0
    m = meta(tmp_path)
    assert m["summary"]["max_residual"] == 0.0
    assert m["library_version"] == __version__
    assert m["config"]["problem"]["q"] == "vacuum"
    assert all(float(r["max_norm"]) == 0.0 for r in rows(tmp_path / "residuals.csv"))


def test_stokes_decay_example(tmp_path):
    code = main(["simulate", "vortex", "--alpha", "0.1", "--uniform", "1.0", "--T", "10", "--out", str(tmp_path)])
    assert code == 0
    s = meta(tmp_path)["summary"]
    assert abs(s["stokes_measured"] - 1 / 3) <= 1e-4
    long = rows(tmp_path / "monitors.csv")
    assert {r["quantity"] for r in long} >= {"mass", "linf"}


def test_scan_example(tmp_path):
    assert main(["nhd-scan", "--range", "-3..3", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "scan.json").read_text())
    assert rep["eom_modifying"] == [-1, 0, 1]


@pytest.mark.parametrize(
    "cfg",
    [
        {"grid": {"N": 64, "L": 10.0, "bogus": 1}},
        {"bogus": {}},
        {"problem": {"variant": "nls", "colour": "red"}},
        {"grid": {"N": 100, "L": 10.0}},
        {"time": {"T_final": -1.0}},
        {"tolerances": {"mass_drift": -1}},
        {"problem": {"variant": "warp"}},
        {"problem": {"alpha": 1.5, "variant": "vortex"}},
        {"subcommand": "hasimoto"},
    ],
)
def test_invalid_config_exits_2(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_unreadable_config_exits_2(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert main(["hasimoto", "--config", str(tmp_path / "c.json")]) == 2


def test_bad_flag_choice_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "quantum"])
    assert exc.value.code == 2


def test_range_outside_scan_window(tmp_path):
    assert main(["nhd-scan", "--range", "-5..3", "--out", str(tmp_path)]) == 2


def test_tolerance_failure_exits_1(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"tolerances": {"field_roundtrip": 1e-30}}))
    assert main(["hasimoto", "roundtrip", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert meta(tmp_path / "o")["tolerance_outcomes"]["field_roundtrip"]["passed"] is False


def test_blowup_exits_3_with_snapshot(tmp_path):
    code = main(["simulate", "nls", "--soliton", "30", "--N", "64", "--L", "20", "--out", str(tmp_path)])
    assert code == 3
    assert (tmp_path / "diagnostic.csv").exists()
    assert meta(tmp_path)["status"] == 3


def test_dt_must_divide_final_time(tmp_path):
    assert main(["simulate", "nls", "--dt", "0.003", "--T", "0.01", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "inls", "--T", "0.5"],
        ["nhd-scan", "discrete", "--range", "-2..3"],
        ["hasimoto", "roundtrip"],
        ["constraints"],
    ],
)
def test_runs_are_byte_identical(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("NHDNLS_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["hasimoto", "forward"]) == 0
    assert (tmp_path / "env" / "meta.json").exists()


def _template(tmp_path):
    t = {
        "subcommand": "simulate",
        "grid": {"N": 16, "L": 6.283185307179586},
        "time": {"T_final": 2.0},
        "problem": {"variant": "vortex", "alpha": 0.1, "initial": {"kind": "uniform", "amplitude": 1.0}},
    }
    p = tmp_path / "tmpl.json"
    p.write_text(json.dumps(t))
    return str(p)


def test_sweep_rows_and_decay_column(tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", "--template", _template(tmp_path), "--param", "problem.alpha=0,0.05,0.1", "--out", str(out)])
    assert code == 0
    r = rows(out / "sweep.csv")
    assert [x["index"] for x in r] == ["0", "1", "2"]
    assert [float(x["problem.alpha"]) for x in r] == [0, 0.05, 0.1]
    assert all(x["decay_rate"] != "" for x in r)
    assert abs(float(r[2]["decay_rate"]) - 0.2) < 1e-6


def test_sweep_empty_grid(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--template", _template(tmp_path), "--param", "problem.alpha=", "--out", str(out)]) == 0
    assert (out / "sweep.csv").read_text() == "index,problem.alpha,status\n"


def test_sweep_worst_child_status(tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", "--template", _template(tmp_path), "--param", "problem.alpha=0,2", "--out", str(out)])
    assert code == 2
    assert [x["status"] for x in rows(out / "sweep.csv")] == ["0", "2"]


def test_sweep_is_thread_count_independent(tmp_path, monkeypatch):
    args = ["sweep", "--template", _template(tmp_path), "--param", "problem.alpha=0,0.05,0.1,0.2"]
    monkeypatch.setenv("NHDNLS_THREADS", "1")
    main(args + ["--out", str(tmp_path / "one")])
    monkeypatch.setenv("NHDNLS_THREADS", "4")
    main(args + ["--out", str(tmp_path / "four")])
    assert (tmp_path / "one" / "sweep.csv").read_bytes() == (tmp_path / "four" / "sweep.csv").read_bytes()


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("NHDNLS_THREADS", "zero")
    assert main(["sweep", "--template", _template(tmp_path), "--param", "problem.alpha=0", "--out", str(tmp_path)]) == 2


def test_scan_sweep_matches_single_runs(tmp_path):
    tmpl = tmp_path / "scan.json"
    tmpl.write_text(json.dumps({"subcommand": "nhd-scan", "problem": {"kind": "continuum", "range": [-3, 3]}}))
    values = json.dumps([[n, n] for n in range(-3, 4)])
    out = tmp_path / "sw"
    main(["sweep", "--template", str(tmpl), "--param", f"problem.range={values}", "--out", str(out)])
    swept = rows(out / "sweep.csv")
    single = build_config("nhd-scan", {"problem": {"kind": "continuum", "range": [-3, 3]}})
    run(single, tmp_path / "single")
    full = json.loads((tmp_path / "single" / "scan.json").read_text())
    cls = {e["order"]: e["classification"] for e in full["entries"]}
    for n, row in zip(range(-3, 4), swept):
        assert row[f"class_{n}"] == cls[n]


def test_build_config_rejects_sweep_block_elsewhere():
    with pytest.raises(ConfigError):
        build_config("hasimoto", {"sweep": {"parameters": {}}})
