"""Acceptance criteria 1-11; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import record
from herglotz.bounds import apriori_F1_F2, lip_bound_chain
from herglotz.charflow import ShootOptions, fundamental_neg
from herglotz.cli import main
from herglotz.evolve import evolve_negative, markov_check
from herglotz.model import Linear, ModelSpec, Saturating, audit_assumptions
from herglotz.ode import DiscreteCurve
from herglotz.varmin import action, gradient, minimize
from herglotz.verify import dynamic_programming_check, energy_E, erdmann_residual, herglotz_residual, viscosity_residual

from oracles import discounted_profile, discounted_value_by_ode

FREE = ModelSpec.create(1)
DISC = ModelSpec.create(1, discount=Linear(1.0))
HL_BOX, HL_N, HL_H = [(-3.0, 3.0)], (601,), 0.01


def _bvp(tmp_path, model, name):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps({"model": model, "bvp": {"a": 0, "b": 1, "x": [0], "y": [1], "u0": 0, "N": 128}}))
    out = tmp_path / name
    code = main(["bvp", "--config", str(cfg), "--out", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    rows = [line.split(",") for line in (out / "curve.csv").read_text().splitlines()[2:]]
    s = np.array([float(r[0]) for r in rows])
    x = np.array([float(r[1]) for r in rows])
    return code, summary, s, x


def test_criterion_01_free_oracle(tmp_path):
    code, s, times, nodes = _bvp(tmp_path, {}, "free")
    h = fundamental_neg(FREE, 0, 1, [0], [1], 0.0).h
    errs = (abs(s["J_direct"] - 0.5), np.abs(nodes - times).max(), abs(h - 0.5))
    ok = code == 0 and errs[0] <= 1e-8 and errs[1] <= 1e-8 and errs[2] <= 1e-9
    record(1, ok, f"free motion: |J-0.5|={errs[0]:.1e}, node dev={errs[1]:.1e}, |h-0.5|={errs[2]:.1e}")
    assert ok


def test_criterion_02_discounted_oracle(tmp_path):
    oracle = discounted_value_by_ode()
    assert oracle == pytest.approx(0.290988, abs=1e-6)
    code, s, times, nodes = _bvp(tmp_path, {"discount": {"type": "linear", "lambda": 1.0}}, "disc")
    h = fundamental_neg(DISC, 0, 1, [0], [1], 0.0).h
    errs = (abs(s["J_direct"] - oracle), abs(h - oracle), np.abs(nodes - discounted_profile(times)).max())
    ok = code == 0 and errs[0] <= 1e-5 and errs[1] <= 1e-5 and errs[2] <= 1e-4
    record(2, ok, f"discounted: |J-h*|={errs[0]:.1e}, |h-h*|={errs[1]:.1e}, profile dev={errs[2]:.1e}")
    assert ok


GRAD_MODELS = [
    ModelSpec.create(1, potential="x1*sin(t)", discount=Linear(1.0)),
    ModelSpec.create(1, potential="0.5*x1^2*(1+t)", discount=Saturating(0.8)),
    ModelSpec.create(2, potential="cos(x1)*x2", kinetic=[[2, 0.3], [0.3, 1]], discount=Linear(0.5)),
]


def test_criterion_03_gradient():
    rng = np.random.default_rng(2024)
    worst = 0.0
    N, d = 32, 1e-6
    for m in GRAD_MODELS:
        for _ in range(20):
            base = DiscreteCurve.straight(0, 1, np.zeros(m.dim), np.ones(m.dim), N)
            s = base.times[1:-1, None]
            pert = sum(rng.normal(0, 0.2, m.dim) * np.sin(k * np.pi * s) for k in (1, 2, 3))
            c = base.with_interior(base.nodes[1:-1] + pert)
            u0 = rng.uniform(-1, 1)
            g = gradient(m, c, u0)
            fd = np.empty_like(g)
            for i in range(N - 1):
                for j in range(m.dim):
                    e = np.zeros_like(g)
                    e[i, j] = d
                    fd[i, j] = (action(m, c.with_interior(c.nodes[1:-1] + e), u0)[0]
                                - action(m, c.with_interior(c.nodes[1:-1] - e), u0)[0]) / (2 * d)
            worst = max(worst, np.abs(g - fd).max() / np.abs(fd).max())
    ok = worst <= 1e-4
    record(3, ok, f"adjoint gradient vs central differences, 60 curves: worst relative error {worst:.1e}")
    assert ok


def test_criterion_04_residual_decay():
    models = [ModelSpec.create(1, potential="x1*sin(t)", discount=Linear(0.5)),
              ModelSpec.create(1, potential="0.5*x1^2*(1+t)", discount=Saturating(0.7))]
    ratios = []
    for m in models:
        e, h = [], []
        for N in (64, 128, 256, 512):
            r = minimize(m, 0, 1, 0.2, 1.0, 0.3, N=N)
            e.append(erdmann_residual(m, r.curve, r.cara).sup_residual)
            h.append(herglotz_residual(m, r.curve, r.cara).sup_residual)
        ratios += [e[i] / e[i + 1] for i in range(3)] + [h[i] / h[i + 1] for i in range(3)]
    auto = ModelSpec.create(1, potential="0.5*x1^2", discount=Linear(1.0))
    spread = []
    for N in (64, 128, 256):
        r = minimize(auto, 0, 1, 0.2, 1.0, 0.3, N=N)
        spread.append(np.ptp(energy_E(auto, r.curve, r.cara)[1]) * N * N)
    ok = min(ratios) >= 1.8 and max(spread) / min(spread) <= 1.5
    record(4, ok, f"residual ratios per doubling >= {min(ratios):.2f}; autonomous E spread*N^2 in "
                  f"[{min(spread):.3f}, {max(spread):.3f}]")
    assert ok


AGREE_MODELS = [
    ModelSpec.create(1, potential="0.5*sin(x1)*cos(t)", discount=Saturating(0.5), c0=0.5, c1=0.5, C1=0.5),
    ModelSpec.create(1, potential="0", discount=Linear(1.0)),
    ModelSpec.create(2, potential="0.25*cos(x1+x2)", discount=Linear(0.5), c0=0.25, c1=0.25),
    ModelSpec.create(2, potential="0.2*x1*sin(t)", kinetic=[[2, 0.5], [0.5, 1]], discount=Saturating(0.4),
                     c0=0.4, c1=0.4, C1=0.4),
]
AUDIT_BOX = {"t_range": [0, 1.5], "x_radius": 2, "v_radius": 5, "u_radius": 3}


def test_criterion_05_method_agreement():
    rng = np.random.default_rng(5)
    worst, dims = 0.0, set()
    for i in range(20):
        m = AGREE_MODELS[i % 4]
        assert audit_assumptions(m, AUDIT_BOX, 256).passed
        x, y = rng.uniform(-1, 1, m.dim), rng.uniform(-1, 1, m.dim)
        t, u0 = rng.uniform(0.5, 1.5), rng.uniform(-1, 1)
        J = minimize(m, 0, t, x, y, u0, N=256).J
        h = fundamental_neg(m, 0, t, x, y, u0, ShootOptions(cross_check=False)).h
        worst = max(worst, abs(h - J) / (1 + abs(J)))
        dims.add(m.dim)
    ok = worst <= 1e-5 and dims == {1, 2}
    record(5, ok, f"shooting vs direct on 20 audited problems (1-D and 2-D): worst |h-J|/(1+|J|) = {worst:.1e}")
    assert ok


@pytest.fixture(scope="module")
def hopf_lax():
    return evolve_negative(FREE, "0.5*x1^2", 0, 1, box=HL_BOX, n_points=HL_N)


def test_criterion_06_hopf_lax(hopf_lax):
    r = hopf_lax
    x = r.u.points()[:, 0]
    err = np.abs(r.u.flat() - x ** 2 / 4).max()
    dist = np.abs(r.argmin_y[:, 0] - x)
    ok = err <= 2e-3 and bool(np.all(dist <= r.radii))
    record(6, ok, f"Hopf-Lax at h=0.01: sup error {err:.1e}; argmins inside radius: {bool(np.all(dist <= r.radii))}")
    assert ok


def test_criterion_07_markov():
    d0 = markov_check(FREE, "0.5*x1^2", 0, 0.5, 1, box=HL_BOX, n_points=HL_N).sup_residual
    d1 = markov_check(DISC, "0.5*x1^2", 0, 0.5, 1, box=HL_BOX, n_points=HL_N).sup_residual
    ok = d0 <= 5e-3 and d1 <= 1e-2
    record(7, ok, f"Markov one-step vs two-step: lambda=0 diff {d0:.1e}, lambda=1 diff {d1:.1e}")
    assert ok


def test_criterion_08_viscosity(hopf_lax):
    dt = 0.01
    bound = 5 * (HL_H + dt)
    later = evolve_negative(FREE, "0.5*x1^2", 0, 1 + dt, box=HL_BOX, n_points=HL_N).u
    smooth = viscosity_residual(FREE, hopf_lax.u, later)
    a = evolve_negative(FREE, "abs(x1)", 0, 1, box=HL_BOX, n_points=HL_N).u
    b = evolve_negative(FREE, "abs(x1)", 0, 1 + dt, box=HL_BOX, n_points=HL_N).u
    kink = viscosity_residual(FREE, a, b)
    ok = smooth.sup_residual <= bound and kink.meta["kinks_excluded"] > 0 and kink.sup_residual <= bound
    record(8, ok, f"viscosity residual: smooth {smooth.sup_residual:.1e}, |y| data {kink.sup_residual:.1e} "
                  f"with {kink.meta['kinks_excluded']} points excluded (bound {bound:.2f})")
    assert ok


BOUND_MODELS = [
    dict(dim=1, potential="0", discount=Linear(1.0)),
    dict(dim=1, potential="0.5*sin(x1)*cos(t)", discount=Saturating(0.5), c0=0.5, c1=0.5, C1=0.5),
    dict(dim=2, potential="0.25*cos(x1+x2)", discount=Linear(0.5), c0=0.25, c1=0.25),
]


def test_criterion_09_bounds():
    rng = np.random.default_rng(9)
    margins = []
    for i in range(20):
        m = ModelSpec.create(**BOUND_MODELS[i % 3])
        x, y = rng.uniform(-1, 1, m.dim), rng.uniform(-1, 1, m.dim)
        t, u0 = rng.uniform(0.5, 1.0), rng.uniform(-1, 1)
        box = {"t_range": [0, t], "x_radius": 5, "v_radius": 10, "u_radius": 5}
        assert audit_assumptions(m, box, 256).passed
        r = minimize(m, 0, t, x, y, u0, N=128)
        assert r.converged
        R = float(np.linalg.norm(y - x))
        F1, F2 = apriori_F1_F2(m.constants, t, R, u0)
        F8 = lip_bound_chain(m.constants, t, R, u0).F8
        c = r.curve
        u_mid = 0.5 * (r.cara.u[1:] + r.cara.u[:-1])
        intL = float(np.sum(np.abs(m.lagrangian(c.mid_times, c.mid_points, c.velocities, u_mid))) * c.h)
        margins.append(min(t * F1 - np.abs(r.cara.u - u0).max(), F2 - intL,
                           F8 - np.linalg.norm(c.velocities, axis=1).max()))
    ok = min(margins) >= 0
    record(9, ok, f"a-priori and velocity bounds on 20 minimizers: smallest margin {min(margins):.3f}")
    assert ok


def test_criterion_10_dynamic_programming():
    rep = dynamic_programming_check(FREE, "0.5*x1^2", 1.0, [2.0], [0.2, 0.4, 0.5, 0.6, 0.8],
                                    box=HL_BOX, n_points=HL_N)
    ok = rep.sup_residual <= 1e-3 and abs(rep.meta["u_tx"] - 1.0) <= 1e-3
    record(10, ok, f"dynamic programming at 5 intermediate times: sup residual {rep.sup_residual:.1e}, "
                   f"u(1,2)={rep.meta['u_tx']:.6f}")
    assert ok


def test_criterion_11_determinism(tmp_path):
    configs = {
        "bvp": {"model": {"potential": "x1*sin(t)", "discount": {"type": "saturating", "kappa": 0.5}},
                "bvp": {"a": 0, "b": 1, "x": [0], "y": [1], "u0": 0.1, "N": 64}},
        "evolve": {"model": {"discount": {"type": "linear", "lambda": 1.0}},
                   "evolve": {"phi": "0.5*x1^2", "box": [[-2, 2]], "n_points": [81], "snapshots": [0.5, 0.55]}},
        "verify": {"model": {"potential": "x1*sin(t)", "constants": {"C1": 1}},
                   "verify": {"curve": {"x": [0], "y": [1], "N": 64}, "convexity": {"samples": 10}}},
        "bounds": {"model": {}, "bounds": {"t": 1, "R": 1, "kappa2": 1}},
        "audit": {"model": {}, "audit": {"box": {"t_range": [0, 1], "x_radius": 1, "v_radius": 1, "u_radius": 1}}},
    }
    same, files = True, 0
    for cmd, cfg in configs.items():
        p = tmp_path / f"{cmd}.json"
        p.write_text(json.dumps(cfg))
        outs = []
        for k in range(2):
            out = tmp_path / f"{cmd}_{k}"
            assert main([cmd, "--config", str(p), "--out", str(out), "--seed", "7"]) == 0
            outs.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
        same &= outs[0] == outs[1]
        files += len(outs[0])
        for name, data in outs[0].items():
            if name.endswith(".json"):
                head = json.dumps(json.loads(data)["header"]).encode()
            else:
                head = data.split(b"\n", 1)[0]
            same &= b"herglotz " in head and b"config=" in head
    ok = bool(same)
    record(11, ok, f"two runs per command produce byte-identical outputs ({files} files, all with provenance headers)")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
