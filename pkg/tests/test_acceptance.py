"""Acceptance suite: one PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v`` (or this file directly). Each
test prints its verdict line before asserting, so the report is complete
even when a criterion fails. The last criterion is exploratory and only
reports statistics.
"""

import copy
import json
import sys
import time
import warnings
import zlib

import numpy as np
import pytest

from blowup import cli
from blowup.assembler import residual_sweep
from blowup.bubbles import BubbleParams, kernel_residual
from blowup.critical import minimize, multistart, saddle_search
from blowup.geometry import Ball, green_constant
from blowup.green import build_engine
from blowup.reduced import Configuration, Regime, reduced_gradient, reduced_value

from test_reduced import fd_gradient, random_config


@pytest.fixture
def report(capsys):
    def emit(tag, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {tag}: {detail}")
        return ok

    return emit


def image_green(x, y, n):
    """Unit-ball Green's function, regular part and Robin function in closed form."""
    c = green_constant(n)
    ny = np.linalg.norm(y, axis=1)
    reflected = ny * np.linalg.norm(x - y / ny[:, None] ** 2, axis=1)
    H = c * reflected ** (2 - n)
    G = c * np.linalg.norm(x - y, axis=1) ** (2 - n) - H
    tau = c * (1 - np.sum(x * x, axis=1)) ** (2 - n)
    return G, H, tau


def test_green_oracle(report):
    rows, worst, ok = [], 0.0, True
    for n in (3, 4, 5, 6):
        t0 = time.perf_counter()
        ball = Ball(np.zeros(n), 1.0)
        eng = build_engine(ball, method="collocation")
        rng = np.random.default_rng(100 + n)
        x = ball.sample_interior(rng, 200, 0.05)
        y = ball.sample_interior(rng, 200, 0.05)
        G0, H0, tau0 = image_green(x, y, n)
        err = max(
            np.max(np.abs(eng.green(x, y) - G0) / np.abs(G0)),
            np.max(np.abs(eng.regular_part(x, y) - H0) / np.abs(H0)),
            np.max(np.abs(eng.robin(x) - tau0) / np.abs(tau0)),
        )
        dt = time.perf_counter() - t0
        worst = max(worst, err)
        ok &= err < 1e-6 and dt < 30
        rows.append(f"n={n} rel={err:.1e} t={dt:.1f}s")
    report("criterion 1 (collocated Green vs closed form)", ok, "; ".join(rows))
    assert ok


def test_robin_landscape(tmp_path, report):
    ball = {"kind": "ball", "center": [0, 0, 0], "radius": 1.0}
    summaries = []
    for method in ("analytic", "collocation"):
        cfg = {"domain": ball, "engine": {"method": method}, "options": {"resolution": [41, 41]},
               "output": {"path": str(tmp_path / f"{method}.csv")}}
        summaries.append(cli.cmd_robin_map(cli.load_config(_write(tmp_path, cfg), "robin-map")))
    ok, rows = True, []
    for method, s in zip(("analytic", "collocation"), summaries):
        cell_ok = all(abs(s["min_point"][i]) <= s["grid_cell"][i] for i in range(2)) and abs(s["min_point"][2]) < 1e-12
        err = abs(s["min_value"] - 1 / (4 * np.pi))
        ok &= cell_ok and err < 1e-6
        rows.append(f"{method}: min at {np.round(s['min_point'], 3).tolist()} tau err {err:.1e}")
    report("criterion 2 (Robin minimum at the centre)", ok, "; ".join(rows))
    assert ok


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_kernel_identity(report):
    worst, rows = 0.0, []
    for n in (3, 5):
        for delta in (1.0, 1e-2):
            rng = np.random.default_rng(zlib.crc32(f"{n}-{delta}".encode()))
            pts = rng.standard_normal((50, n)) * delta * rng.uniform(0.2, 5.0, (50, 1))
            res = kernel_residual(BubbleParams(delta, np.zeros(n)), pts)
            worst = max(worst, res)
            rows.append(f"n={n} delta={delta:g} res={res:.1e}")
    ok = worst < 1e-4
    report("criterion 3 (linearised kernel identity)", ok, "; ".join(rows))
    assert ok


GRADIENT_REGIMES = [
    ("MBN", dict(n=5, kappa=1)),
    ("MBN", dict(n=5, kappa=2, lambdas=(1, -1))),
    ("MBN", dict(n=6, kappa=3, eps_sign=-1)),
    ("MAC", dict(n=3, kappa=1)),
    ("MAC", dict(n=3, kappa=2, lambdas=(1, -1))),
    ("MAC", dict(n=4, kappa=3, interaction_sign=-1)),
    ("TAC", dict(n=3, kappa=2)),
    ("TAC", dict(n=5, kappa=3)),
    ("TC", dict(n=3, kappa=1)),
    ("TC", dict(n=4, kappa=3)),
]


def test_gradient_consistency(report):
    rows, ok = [], True
    for kind, kw in GRADIENT_REGIMES:
        kw = dict(kw)
        if kind == "TC":
            kw["hole_center"] = np.full(kw["n"], 0.05)
        regime = Regime(kind, **kw)
        eng = build_engine(Ball(np.zeros(regime.n), 1.0))
        rng = np.random.default_rng(zlib.crc32(f"acc{kind}{kw['n']}{kw['kappa']}".encode()))
        worst = 0.0
        for _ in range(20):
            cfg = random_config(eng, regime, rng)
            g = reduced_gradient(eng, regime, cfg)
            worst = max(worst, np.linalg.norm(fd_gradient(eng, regime, cfg.vector) - g) / np.linalg.norm(g))
        ok &= worst < 1e-6
        rows.append(f"{kind}(n={regime.n},k={regime.kappa}) {worst:.1e}")
    report("criterion 4 (analytic vs finite-difference gradients)", ok, "; ".join(rows))
    assert ok


def test_single_bubble_critical_points(report):
    # single interior bubble on the unit 3-ball
    eng = build_engine(Ball(np.zeros(3), 1.0))
    mac = Regime("MAC", 3)
    cp = minimize(eng, mac, Configuration(mac, [0.0], points=[[0.3, -0.2, 0.1]]))
    a_err = (abs(cp.config.rates[0] - 4 * np.pi), float(np.max(np.abs(cp.config.points))))
    ok_a = max(a_err) < 1e-6 and cp.classification == "IsolatedMin"

    # single tower bubble where the Robin function is 1 at the centre
    n = 5
    eng5 = build_engine(Ball(np.zeros(n), green_constant(n) ** (1 / (n - 2))))
    tac = Regime("TAC", n)
    cp = minimize(eng5, tac, Configuration(tac, [0.4], base=np.full(n, 0.05)))
    b_err = abs(cp.config.rates[0] - 3 ** (-1 / 3))
    ok_b = b_err < 1e-8

    # single bubble on a hole at the centre, at several Robin levels
    c_rows, ok_c = [], True
    for n, h in ((3, 1.0), (4, 2.5), (5, 0.6)):
        eng = build_engine(Ball(np.zeros(n), (green_constant(n) / h) ** (1 / (n - 2))))
        tc = Regime("TC", n, hole_center=np.zeros(n))
        cp = saddle_search(eng, tc, Configuration(tc, [0.2], sigmas=[np.linspace(-0.2, 0.2, n)]))
        spec = cp.hess_spectrum
        err = max(
            float(np.max(np.abs(cp.config.sigmas))),
            abs(cp.config.rates[0] - h ** (-1 / (2 * (n - 2)))),
            abs(cp.value - 2 * np.sqrt(h)),
        )
        good = err < 1e-8 and cp.classification == "NonDegenerate" and np.all(spec[:n] < 0) and spec[-1] > 0
        ok_c &= bool(good)
        c_rows.append(f"n={n} H={h} err={err:.1e} {cp.classification}")
    ok = ok_a and ok_b and ok_c
    detail = f"(a) err={max(a_err):.1e}; (b) err={b_err:.1e}; (c) " + ", ".join(c_rows)
    report("criterion 5 (single-bubble critical points)", ok, detail)
    assert ok


def test_negative_epsilon_no_critical_points(report):
    rows, ok = [], True
    for kind, n in (("MAC", 3), ("MBN", 5)):
        eng = build_engine(Ball(np.zeros(n), 1.0))
        regime = Regime(kind, n, eps_sign=-1)
        rng = np.random.default_rng(n)
        derivs = []
        for _ in range(200):
            cfg = random_config(eng, regime, rng)
            cfg = Configuration(regime, rng.uniform(-6, 6, 1), points=cfg.points)
            derivs.append(reduced_gradient(eng, regime, cfg)[-1])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = multistart(eng, regime, seed=11, count=64)
        esc = len(res.escapes) / 64
        good = min(derivs) > 0 and not res.points and esc == 1.0
        ok &= good
        rows.append(f"{kind} n={n}: min dPhi/dl={min(derivs):.2e}, points={len(res.points)}, escaped={esc:.0%}")
    report("criterion 6 (negative epsilon has no critical points)", ok, "; ".join(rows))
    assert ok


def test_residual_scaling(report):
    t0 = time.perf_counter()
    eng = build_engine(Ball(np.zeros(3), 1.0))
    mac = Regime("MAC", 3)
    cfg = Configuration(mac, [np.log(4 * np.pi)], points=[[0, 0, 0]])
    rep = residual_sweep(eng, mac, cfg, [1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
    dt = time.perf_counter() - t0
    ok = rep.slope > 0 and rep.r2 > 0.95 and dt < 300
    norms = ", ".join(f"{v:.2e}" for v in rep.residual_norms)
    report("criterion 7 (residual power law)", ok,
           f"slope={rep.slope:.3f} r2={rep.r2:.4f} t={dt:.1f}s norms=[{norms}]")
    assert ok


def test_reduce_determinism(tmp_path, report):
    base = {"domain": {"kind": "ball", "center": [0] * 5, "radius": 1.0},
            "regime": {"kind": "MBN", "n": 5, "kappa": 2}, "seed": 5, "options": {"count": 8}}
    outs = []
    for threads, name in ((1, "a.json"), (2, "b.json")):
        cfg = copy.deepcopy(base)
        cfg["output"] = {"path": str(tmp_path / name)}
        cli.cmd_reduce(cli.load_config(_write(tmp_path, cfg, "in-" + name), "reduce"), threads=threads)
        data = json.loads((tmp_path / name).read_text())
        data["metadata"].pop("timestamp")
        data["metadata"].pop("output", None)
        outs.append(json.dumps(data, sort_keys=True))
    ok = outs[0] == outs[1]
    report("criterion 8 (reduce output reproducible)", ok, f"{len(outs[0])} bytes compared, 1 vs 2 threads")
    assert ok


def test_exploratory_two_bubble_landscapes(report):
    """Reports statistics only; nothing here gates."""
    eng5 = build_engine(Ball(np.zeros(5), 1.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        same = multistart(eng5, Regime("MBN", 5, kappa=2), seed=0, count=16)
    stats = {k: v for k, v in same.escape_stats.items() if v}
    rows = [f"MBN n=5 (+,+): {len(same.points)} points, escapes {stats}"]

    eng3 = build_engine(Ball(np.zeros(3), 1.0))
    for s in (1, -1):
        regime = Regime("MAC", 3, kappa=2, lambdas=(1, -1), interaction_sign=s)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = multistart(eng3, regime, seed=0, count=8)
        kinds = sorted({cp.classification for cp in res.points})
        vals = [cp.value for cp in res.points]
        span = f" values in [{min(vals):.4g}, {max(vals):.4g}]" if vals else ""
        stats = {k: v for k, v in res.escape_stats.items() if v}
        rows.append(f"MAC n=3 (+,-) sign {s:+d}: {len(res.points)} points {kinds}{span}, escapes {stats}")
        # interaction sign flips only the cross term
        cfg = Configuration(regime, [1.0, 1.0], points=[[0.3, 0, 0], [-0.3, 0, 0]])
        rows[-1] += f", Phi(sym)={reduced_value(eng3, regime, cfg):.4g}"
    report("criterion 9 (exploratory, not gating)", True, "; ".join(rows))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
