import json
import os

import pytest

from contact_hj import _io, cli, scenarios
from contact_hj.grid import PeriodicGrid
from contact_hj.weakkam import ReachReport


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_defaults_are_filled_from_schema():
    cfg = scenarios.validate({"kind": "solve"})
    assert cfg["grid"]["N"] == 1000
    assert cfg["semigroup"]["v_max"] == 2.0
    assert cfg["hamiltonian"]["id"] == "example_quadratic"


@pytest.mark.parametrize("bad", [
    {"kind": "solve", "grid": {"N": -4}},
    {"kind": "solve", "grid": {"N": 101}},
    {"kind": "nope"},
    {"kind": "solve", "hamiltonian": {"id": "unknown"}},
    {"kind": "solve", "hamiltonian": {"params": {"zeta": 1}}},
    {"kind": "solve", "hamiltonian": {"params": {"lam": -1}}},
    {"kind": "solve", "semigroup": {"n_v": 10}},
    {"kind": "solve", "horizon": -1},
    {"kind": "solve", "extra": 1},
    {"kind": "action", "action": {"t_max": 0.5, "record_times": [1.0]}},
])
def test_validation_errors(bad):
    with pytest.raises(scenarios.ConfigError):
        scenarios.validate(bad)


def test_malformed_config_exits_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", str(write(tmp_path, {"id": "bad", "kind": "solve", "grid": {"N": -4}})),
                     "--out", str(out)])
    assert code == 2
    assert not out.exists()
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "validation"
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 2


def test_solve_outputs_and_determinism(tmp_path):
    cfg = {"id": "small", "kind": "solve", "grid": {"N": 64}, "horizon": 0.05, "stride": 20}
    path = write(tmp_path, cfg)
    assert cli.main(["run", str(path), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", str(path), "--out", str(tmp_path / "b")]) == 0
    ra = (tmp_path / "a" / "small" / "report.json").read_bytes()
    rb = (tmp_path / "b" / "small" / "report.json").read_bytes()
    assert ra == rb
    manifest = json.loads((tmp_path / "a" / "small" / "manifest.json").read_text())
    assert "timestamp" in manifest and "trace.csv" in manifest["files"]
    header, rows = _io.read_csv(tmp_path / "a" / "small" / "trace.csv")
    assert header == ["series", "t", "x", "value", "masked"]
    report = json.loads(ra)
    assert len(rows) == len(report["trace"]["times"]) * 64


def test_output_root_precedence(tmp_path, monkeypatch):
    cfg = {"id": "prec", "kind": "solve", "grid": {"N": 32}, "horizon": 0.01,
           "output": {"root": str(tmp_path / "from_config")}}
    path = write(tmp_path, cfg)
    monkeypatch.setenv("CONTACT_HJ_OUT", str(tmp_path / "from_env"))
    assert cli.main(["run", str(path)]) == 0
    assert (tmp_path / "from_env" / "prec" / "report.json").exists()
    assert cli.main(["run", str(path), "--out", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "prec" / "report.json").exists()
    monkeypatch.delenv("CONTACT_HJ_OUT")
    assert cli.main(["run", str(path)]) == 0
    assert (tmp_path / "from_config" / "prec" / "report.json").exists()


def test_scenarios_are_scoped(tmp_path):
    out = tmp_path / "o"
    for sid in ("one", "two"):
        p = write(tmp_path, {"id": sid, "kind": "solve", "grid": {"N": 32}, "horizon": 0.01}, f"{sid}.json")
        assert cli.main(["run", str(p), "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["one", "two"]


def test_numerical_failure_exits_3(tmp_path, capsys):
    cfg = {"id": "boom", "kind": "solve", "solver": "fd", "grid": {"N": 32}, "horizon": 20.0,
           "datum": {"type": "constant", "value": 1.0}}
    assert cli.main(["run", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 3
    err = json.loads((tmp_path / "boom" / "error.json").read_text())
    assert err["error"] == "numerical" and err["type"] == "FDBlowUpError"


def test_weakkam_scenario(tmp_path):
    cfg = {"id": "wk", "kind": "weakkam", "grid": {"N": 64}, "datum": {"type": "u1_example"}}
    assert cli.main(["run", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "wk" / "report.json").read_text())
    assert rep["datum_class"]["label"] == "A"
    assert rep["aubry_set"]["x"] == [0.0]


def test_action_scenario_flags_masks(tmp_path):
    cfg = {"id": "act", "kind": "action", "grid": {"N": 64},
           "action": {"x0": 0.0, "u0": 0.1, "t_max": 0.1, "record_times": [0.05, 0.1], "backtrack_x": 0.03}}
    assert cli.main(["run", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 0
    header, rows = _io.read_csv(tmp_path / "act" / "field.csv")
    assert header[-1] == "masked"
    assert any(r[-1] == "1" for r in rows) and any(r[-1] == "0" for r in rows)
    assert not any("nan" in ",".join(r).lower() for r in rows)
    assert (tmp_path / "act" / "curve.csv").exists()


def test_reach_scenario(tmp_path):
    cfg = {"id": "reach", "kind": "reach", "grid": {"N": 100}, "horizon": 1.5, "tolerance": 0.03, "stride": 20}
    assert cli.main(["run", str(write(tmp_path, cfg)), "--out", str(tmp_path)]) == 0
    rr = json.loads((tmp_path / "reach" / "reach_report.json").read_text())
    assert rr["reached"] and "t0_analytic" in rr and "t_star_measured" in rr


def test_emit_reach_report_side_by_side(tmp_path):
    rep = ReachReport("u1", 0.1, 0.57, 1.556, None, 0.01, 3.0, 0.001)
    (path,) = cli.emit_plot_data(rep, tmp_path / "r")
    data = json.loads(path.read_text())
    assert data["t_star_measured"] == 0.57 and data["t0_analytic"] == 1.556


def test_emit_grid_function(tmp_path):
    from contact_hj.grid import u1_example

    files = cli.emit_plot_data(u1_example(PeriodicGrid(16)), tmp_path / "u1.csv")
    assert [f.name for f in files] == ["u1.csv", "u1.manifest.json"]
    with pytest.raises(TypeError):
        cli.emit_plot_data(object(), tmp_path / "x.csv")


def test_example_command_small_grid(tmp_path):
    code = cli.main(["example", "--epsilon", "0.1", "--N", "200", "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "example-eps-0.1" / "report.json").read_text())
    assert code == 0
    assert rep["reach"]["t_star_measured"] <= 1.66
    assert rep["constants"]["t0_closed_form"]["K2_printed"] == pytest.approx(0.5 * __import__("math").log(22.5))
