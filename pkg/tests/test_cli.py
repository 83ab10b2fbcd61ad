import json
import subprocess
import sys

import numpy as np
import pytest

from blowup import io
from blowup.cli import main

BALL3 = {"kind": "ball", "center": [0, 0, 0], "radius": 1.0}


def run(tmp_path, command, cfg, *extra, capsys=None):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg))
    code = main([command, str(path), *extra])
    out = capsys.readouterr().out if capsys else ""
    return code, (json.loads(out.strip().splitlines()[-1]) if out.strip() else None)


def test_robin_map_ball(tmp_path, capsys):
    out = tmp_path / "map.csv"
    code, summary = run(tmp_path, "robin-map", {"domain": BALL3, "options": {"resolution": [21, 21]},
                                                "output": {"path": str(out)}}, capsys=capsys)
    assert code == 0
    cell = summary["grid_cell"]
    assert abs(summary["min_point"][0]) <= cell[0] and abs(summary["min_point"][1]) <= cell[1]
    assert summary["min_value"] == pytest.approx(1 / (4 * np.pi), rel=1e-6)
    meta, cols, rows = io.read_csv(out)
    assert cols[-1] == "tau" and "timestamp" in meta and meta["engine"]["method"] == "AnalyticBall"


def test_robin_map_annulus(tmp_path, capsys):
    dom = {"kind": "annulus", "center": [0, 0, 0], "r_inner": 0.3, "r_outer": 1.0}
    code, summary = run(tmp_path, "robin-map", {"domain": dom, "options": {"resolution": [31, 31]},
                                                "output": {"path": str(tmp_path / "a.csv")}}, capsys=capsys)
    assert code == 0
    r = np.linalg.norm(summary["min_point"])
    assert 0.3 < r < 1.0


def test_malformed_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["robin-map", str(p)]) == 2
    err = json.loads(capsys.readouterr().out)
    assert err["error"] == "ConfigError" and err["exit_code"] == 2


def test_unknown_key_rejected(tmp_path, capsys):
    code, err = run(tmp_path, "robin-map", {"domain": BALL3, "colour": "red"}, capsys=capsys)
    assert code == 2 and "colour" in err["message"]


def test_invalid_domain(tmp_path, capsys):
    dom = {"kind": "annulus", "center": [0, 0, 0], "r_inner": 1.0, "r_outer": 0.5}
    code, err = run(tmp_path, "robin-map", {"domain": dom}, capsys=capsys)
    assert code == 2


def test_incompatible_sign(tmp_path, capsys):
    cfg = {"domain": BALL3, "regime": {"kind": "MAC", "n": 3, "epsilon": -1e-3},
           "config": {"log_rates": [0.0], "points": [[0, 0, 0]]}, "output": {"path": str(tmp_path / "s.csv")}}
    code, err = run(tmp_path, "assemble", cfg, capsys=capsys)
    assert code == 2 and err["error"] == "IncompatibleSign"


def _reduce_cfg(tmp_path, regime, domain=BALL3, count=8, name="r.json"):
    return {"domain": domain, "regime": regime, "seed": 3, "options": {"count": count},
            "output": {"path": str(tmp_path / name)}}


def test_reduce_single_minimum(tmp_path, capsys):
    cfg = _reduce_cfg(tmp_path, {"kind": "MAC", "n": 3})
    code, summary = run(tmp_path, "reduce", cfg, capsys=capsys)
    assert code == 0
    assert summary["critical_points"] == 1 and summary["classifications"] == ["IsolatedMin"]
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["result"]["critical_points"][0]["config"]["log_rates"][0] == pytest.approx(np.log(4 * np.pi), abs=1e-6)


def test_reduce_negative_eps_escapes(tmp_path, capsys):
    ball5 = {"kind": "ball", "center": [0] * 5, "radius": 1.0}
    cfg = _reduce_cfg(tmp_path, {"kind": "MBN", "n": 5, "eps_sign": -1}, ball5)
    code, summary = run(tmp_path, "reduce", cfg, capsys=capsys)
    assert code == 0 and summary["critical_points"] == 0 and summary["escaped"] == 8


def _strip_time(path):
    data = json.loads(path.read_text())
    data["metadata"].pop("timestamp")
    return data


def test_reduce_deterministic(tmp_path, capsys):
    for name in ("a.json", "b.json"):
        cfg = _reduce_cfg(tmp_path, {"kind": "TC", "n": 3, "hole_center": [0.1, 0, 0]}, name=name)
        assert run(tmp_path, "reduce", cfg, capsys=capsys)[0] == 0
    assert _strip_time(tmp_path / "a.json") == _strip_time(tmp_path / "b.json")


def test_reduce_landscape(tmp_path, capsys):
    cfg = _reduce_cfg(tmp_path, {"kind": "MAC", "n": 3}, count=2)
    cfg["options"]["landscape"] = {"axes": [0, 3], "extent": [[-0.5, 0.5], [0, 3]], "resolution": [5, 4]}
    cfg["output"]["grid"] = str(tmp_path / "land.csv")
    assert run(tmp_path, "reduce", cfg, capsys=capsys)[0] == 0
    meta, cols, rows = io.read_csv(tmp_path / "land.csv")
    assert cols == ["q0", "q3", "value", "grad_norm"] and len(rows) == 20


def test_assemble_tower_sign_change(tmp_path, capsys):
    cfg = {"domain": BALL3, "regime": {"kind": "TAC", "n": 3, "kappa": 2, "epsilon": 1e-2},
           "config": {"log_rates": [0.0, 0.0], "sigmas": [[0, 0, 0]], "base": [0.1, 0, 0]},
           "output": {"path": str(tmp_path / "sol.csv")}}
    code, summary = run(tmp_path, "assemble", cfg, capsys=capsys)
    assert code == 0 and summary["sign_change"]
    meta, cols, rows = io.read_csv(tmp_path / "sol.csv")
    assert cols == ["t", "x1", "x2", "x3", "V"] and meta["epsilon"] == 1e-2


def test_assemble_energy(tmp_path, capsys):
    cfg = {"domain": BALL3, "regime": {"kind": "MAC", "n": 3, "epsilon": 1e-5},
           "config": {"log_rates": [0.0], "points": [[0, 0, 0]]}, "options": {"energy": True},
           "output": {"path": str(tmp_path / "sol.csv")}}
    code, summary = run(tmp_path, "assemble", cfg, capsys=capsys)
    assert summary["energy"] == pytest.approx(np.sqrt(3) * np.pi**2 / 4, rel=1e-3)


def test_residual_sweep(tmp_path, capsys):
    cfg = {"domain": BALL3, "regime": {"kind": "MAC", "n": 3},
           "config": {"log_rates": [float(np.log(4 * np.pi))], "points": [[0, 0, 0]]},
           "output": {"path": str(tmp_path / "sw.json"), "csv": str(tmp_path / "sw.csv")}}
    code, summary = run(tmp_path, "residual-sweep", cfg, capsys=capsys)
    assert code == 0 and summary["fitted_slope"] > 0
    data = json.loads((tmp_path / "sw.json").read_text())
    assert data["result"]["fitted_slope"] == summary["fitted_slope"]
    meta, cols, rows = io.read_csv(tmp_path / "sw.csv")
    assert len(rows) == 5 and meta["fitted_slope"] == summary["fitted_slope"]


def test_kernel_check(tmp_path, capsys):
    code, summary = run(tmp_path, "kernel-check", {"output": {"path": str(tmp_path / "k.json")}}, capsys=capsys)
    assert code == 0 and summary["pass"] and summary["worst"] < 1e-4
    checks = json.loads((tmp_path / "k.json").read_text())["result"]["checks"]
    assert sorted({c["n"] for c in checks}) == [3, 4, 5, 6]


def test_kernel_check_failure_exit_code(tmp_path, capsys):
    cfg = {"options": {"dims": [3], "tol": 1e-14}, "output": {"path": str(tmp_path / "k.json")}}
    code, summary = run(tmp_path, "kernel-check", cfg, capsys=capsys)
    assert code == 3 and not summary["pass"]


def test_green_probe(tmp_path, capsys):
    cfg = {"domain": BALL3, "options": {"x": [[0, 0, 0], [0.5, 0, 0]], "y": [[0.5, 0, 0], [0.5, 0, 0]]},
           "output": {"path": str(tmp_path / "g.json")}}
    code, summary = run(tmp_path, "green-probe", cfg, capsys=capsys)
    assert code == 0
    rows = json.loads((tmp_path / "g.json").read_text())["result"]
    assert rows[0]["G"] == pytest.approx(1 / (4 * np.pi), rel=1e-12)
    assert rows[1]["G"] is None and rows[1]["H"] == pytest.approx(1 / (4 * np.pi * 0.75), rel=1e-12)


def test_overrides_and_output_flag(tmp_path, capsys):
    cfg = {"domain": BALL3, "options": {"resolution": [5, 5]}}
    out = tmp_path / "o.csv"
    code, summary = run(tmp_path, "robin-map", cfg, "--set", "options.resolution=[7, 9]", "-o", str(out),
                        capsys=capsys)
    assert code == 0 and summary["output"] == str(out)
    assert summary["interior_nodes"] <= 63 and out.exists()


def test_bad_override(tmp_path, capsys):
    code, err = run(tmp_path, "robin-map", {"domain": BALL3}, "--set", "novalue", capsys=capsys)
    assert code == 2


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "k.json"
    cfg.write_text(json.dumps({"options": {"dims": [3], "samples": 5}, "output": {"path": str(tmp_path / "k.out")}}))
    res = subprocess.run([sys.executable, "-m", "blowup", "kernel-check", str(cfg)], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["pass"]
