"""Command-line front end: ``herglotz {bvp,evolve,verify,audit,bounds} --config cfg.json --out dir``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import BoundsError, apriori_F1_F2, lip_bound_chain, search_radius
from .charflow import ShootingError, ShootOptions, fundamental_neg
from .expr import ExpressionError
from .grid import GridError, GridFunction, fmt
from .model import ModelError, ModelSpec, audit_assumptions
from .ode import DivergedError
from .varmin import LineSearchError, MinimizeOptions, minimize

log = logging.getLogger("herglotz")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("bvp", "evolve", "verify", "audit", "bounds")


class ConfigError(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


# ------------------------------------------------------------------ output


class Writer:
    """Writes every artifact with a provenance header; LF endings, UTF-8."""

    def __init__(self, out: Path, config: dict):
        self.out = out
        canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
        self.hash = hashlib.sha256(canon.encode()).hexdigest()[:16]
        self.header = f"herglotz {__version__} config={self.hash}"
        out.mkdir(parents=True, exist_ok=True)

    def _open(self, name):
        return open(self.out / name, "w", encoding="utf-8", newline="\n")

    def csv(self, name: str, columns: list[str], rows) -> None:
        with self._open(name) as fh:
            fh.write(f"# {self.header}\n")
            fh.write(",".join(columns) + "\n")
            for r in rows:
                fh.write(",".join(fmt(v) for v in r) + "\n")

    def json(self, name: str, data: dict) -> None:
        with self._open(name) as fh:
            fh.write(json.dumps({"header": self.header, **data}, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def grid(self, name: str, gf: GridFunction) -> None:
        gf.write(self.out / name, header_lines=(self.header,))

    def report(self, stem: str, rep) -> None:
        self.json(f"{stem}.json", rep.to_dict())
        with self._open(f"{stem}.csv") as fh:
            fh.write(f"# {self.header}\n" + "\n".join(rep.csv_lines()) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


# ------------------------------------------------------------------ config


def load_config(path: str, command: str, seed: int | None) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: malformed JSON: {err.msg}") from err
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if "model" not in cfg:
        raise ConfigError(f"{path}: missing 'model' block")
    blocks = [c for c in COMMANDS if c in cfg]
    if blocks != [command]:
        raise ConfigError(f"{path}: expected exactly one command block '{command}', found {blocks or 'none'}")
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    return cfg


def _need(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"missing '{key}' in {where} block")
    return block[key]


def _vec(v, dim, name):
    a = np.atleast_1d(np.asarray(v, float))
    if a.shape != (dim,):
        raise ConfigError(f"'{name}' must have {dim} component(s)")
    return a


# ------------------------------------------------------------------ commands


def cmd_bvp(cfg: dict, w: Writer) -> int:
    m = ModelSpec.from_dict(cfg["model"])
    b = cfg["bvp"]
    a_, b_ = float(_need(b, "a", "bvp")), float(_need(b, "b", "bvp"))
    x, y = _vec(_need(b, "x", "bvp"), m.dim, "x"), _vec(_need(b, "y", "bvp"), m.dim, "y")
    u0 = float(b.get("u0", 0.0))
    opts = MinimizeOptions(N=int(b.get("N", 128)), multires=bool(b.get("multires", False)))
    summary = {"converged": False}
    code = EXIT_OK
    try:
        res = minimize(m, a_, b_, x, y, u0, opts)
        curve, cara, J = res.curve, res.cara, res.J
        summary.update(J_direct=J, grad_inf_norm=res.grad_inf_norm, iterations=res.iterations,
                       direct_converged=res.converged, message=res.message)
    except LineSearchError as err:
        from .varmin import action

        curve, J = err.curve, err.J
        cara = action(m, curve, u0)[1]
        summary.update(J_direct=J, grad_inf_norm=err.grad_inf_norm, iterations=err.iterations,
                       direct_converged=False, message=str(err))
        res = None
    try:
        f = fundamental_neg(m, a_, b_, x, y, u0, ShootOptions(cross_check=False))
        summary["h_shoot"] = f.h
        summary["shoot_method"] = f.method
        summary["cross_diff"] = abs(f.h - J)
        shoot_ok = f.method == "shooting"
    except (ShootingError, DivergedError, LineSearchError) as err:
        summary.update(h_shoot=None, cross_diff=None, shoot_error=str(err))
        shoot_ok = False
    from .verify import erdmann_residual, herglotz_residual

    summary["residuals"] = {"herglotz": herglotz_residual(m, curve, cara).to_dict(),
                            "erdmann": erdmann_residual(m, curve, cara).to_dict()}
    for rep in summary["residuals"].values():
        rep.pop("details")
    summary["converged"] = bool(summary["direct_converged"] and shoot_ok)
    if not summary["converged"]:
        code = EXIT_SOLVER
    cols = ["s"] + [f"x{j + 1}" for j in range(m.dim)]
    w.csv("curve.csv", cols, np.column_stack([curve.times, curve.nodes]))
    w.csv("u.csv", ["s", "u"], np.column_stack([curve.times, cara.u]))
    w.json("summary.json", summary)
    return code


def _phi_from(block: dict, base: Path):
    phi = _need(block, "phi", "evolve")
    box = block.get("box")
    n = block.get("n_points")
    if isinstance(phi, dict) and "csv" in phi:
        gf = GridFunction.from_csv(base / phi["csv"])
        if box is not None and [list(map(float, b)) for b in box] != [list(b) for b in gf.box]:
            raise ConfigError("phi CSV box differs from the configured box")
        if n is not None and tuple(n) != gf.n_points:
            raise ConfigError(f"phi CSV has shape {gf.n_points}, configured n_points is {tuple(n)}")
        return gf, None, None
    if not isinstance(phi, str):
        raise ConfigError("phi must be an expression string or {\"csv\": path}")
    if box is None or n is None:
        raise ConfigError("an expression phi needs 'box' and 'n_points'")
    return phi, [tuple(b) for b in box], tuple(int(k) for k in n)


def cmd_evolve(cfg: dict, w: Writer, base: Path) -> int:
    from .evolve import EvolveOptions, evolve_negative, evolve_positive
    from .verify import viscosity_residual

    m = ModelSpec.from_dict(cfg["model"])
    b = cfg["evolve"]
    phi, box, n = _phi_from(b, base)
    t0 = float(b.get("t0", 0.0))
    snaps = [float(s) for s in (b["snapshots"] if "snapshots" in b else [_need(b, "t", "evolve")])]
    if not snaps or any(s <= t0 for s in snaps) or sorted(snaps) != snaps:
        raise ConfigError("snapshots must be increasing times after t0")
    opts = EvolveOptions(kappa1=b.get("kappa1"), kappa2=b.get("kappa2"), refine=bool(b.get("refine", True)))
    run = evolve_positive if b.get("positive", False) else evolve_negative
    grids, summary = [], {"snapshots": []}
    for i, s in enumerate(snaps):
        r = run(m, phi, t0, s, opts, box, n)
        grids.append(r.u)
        w.grid(f"u_{i}.csv", r.u)
        pts = r.u.points()
        ys = r.argmin_y.reshape(-1, m.dim)
        cols = [f"x{j + 1}" for j in range(m.dim)] + [f"y{j + 1}" for j in range(m.dim)]
        w.csv(f"argmin_{i}.csv", cols, np.column_stack([pts, ys]))
        summary["snapshots"].append({"t": s, "file": f"u_{i}.csv", "radius_used": r.radius_used, **r.refine_stats})
    if len(grids) < 2:
        summary["viscosity"] = "not computed: needs at least two snapshots"
    else:
        summary["viscosity"] = []
        for i in range(len(grids) - 1):
            rep = viscosity_residual(m, grids[i], grids[i + 1])
            w.report(f"viscosity_{i}", rep)
            summary["viscosity"].append({"file": f"viscosity_{i}.json", "sup_residual": rep.sup_residual, **rep.meta})
    w.json("summary.json", summary)
    return EXIT_OK


def cmd_verify(cfg: dict, w: Writer, base: Path) -> int:
    from . import verify as vf
    from .evolve import EvolveOptions, markov_check

    m = ModelSpec.from_dict(cfg["model"])
    b = cfg["verify"]
    rng = np.random.default_rng(int(cfg["seed"]))
    summary, code = {}, EXIT_OK
    if "curve" in b:
        c = b["curve"]
        x, y = _vec(_need(c, "x", "verify.curve"), m.dim, "x"), _vec(_need(c, "y", "verify.curve"), m.dim, "y")
        a_, b_ = float(c.get("a", 0.0)), float(c.get("b", 1.0))
        res = minimize(m, a_, b_, x, y, float(c.get("u0", 0.0)), N=int(c.get("N", 128)))
        if not res.converged:
            code = EXIT_SOLVER
        erd = vf.erdmann_residual(m, res.curve, res.cara)
        her = vf.herglotz_residual(m, res.curve, res.cara)
        w.report("erdmann", erd)
        w.report("herglotz", her)
        s_mid, E = vf.energy_E(m, res.curve, res.cara)
        _, W_node, _ = vf._weights(m, res.curve, res.cara)
        W_mid = 0.5 * (W_node[1:] + W_node[:-1])
        Lt = -m.potential.time_derivative(s_mid, res.curve.mid_points)
        dev = vf.dbr_constancy((s_mid, -np.exp(-W_mid) * Lt), (s_mid, E))
        summary["curve"] = {"J": res.J, "converged": res.converged, "erdmann_sup": erd.sup_residual,
                            "herglotz_sup": her.sup_residual, "dbr_deviation": dev}
    if "convexity" in b:
        c = b["convexity"]
        k = int(c.get("samples", 100))
        rad = float(c.get("radius", 2.0))
        eps = np.linspace(-0.9, float(c.get("eps_max", 50.0)), int(c.get("eps_points", 200)))
        worst, fails = np.inf, 0
        for _ in range(k):
            t = rng.uniform(0, 1)
            x, v = rng.uniform(-rad, rad, m.dim), rng.uniform(-rad, rad, m.dim)
            chk = vf.convexity_monotone_check(m, t, x, v, rng.uniform(-rad, rad), eps)
            worst = min(worst, chk.margin)
            fails += not chk.passed
        summary["convexity"] = {"samples": k, "failures": fails, "min_margin": worst}
    if "dynamic_programming" in b:
        d = b["dynamic_programming"]
        phi, box, n = _phi_from(d, base)
        rep = vf.dynamic_programming_check(m, phi, float(_need(d, "t", "dynamic_programming")),
                                           _vec(_need(d, "x", "dynamic_programming"), m.dim, "x"),
                                           d.get("tprimes", [0.0]), EvolveOptions(), box, n)
        w.report("dynamic_programming", rep)
        summary["dynamic_programming"] = rep.sup_residual
    if "markov" in b:
        d = b["markov"]
        phi, box, n = _phi_from(d, base)
        t1, t2, t3 = (float(s) for s in _need(d, "times", "markov"))
        rep = markov_check(m, phi, t1, t2, t3, EvolveOptions(), box, n)
        w.report("markov", rep)
        summary["markov"] = rep.sup_residual
    if not summary:
        raise ConfigError("verify block needs at least one of curve, convexity, dynamic_programming, markov")
    w.json("summary.json", summary)
    return code


def cmd_audit(cfg: dict, w: Writer) -> int:
    m = ModelSpec.from_dict(cfg["model"])
    b = cfg["audit"]
    rep = audit_assumptions(m, _need(b, "box", "audit"), int(b.get("samples", 1024)))
    w.json("audit.json", rep.to_dict())
    return EXIT_OK


def cmd_bounds(cfg: dict, w: Writer) -> int:
    m = ModelSpec.from_dict(cfg["model"])
    b = cfg["bounds"]
    k = m.constants
    t, R, u = float(_need(b, "t", "bounds")), float(b.get("R", 1.0)), float(b.get("u", 0.0))
    F1, F2 = apriori_F1_F2(k, t, R, u)
    rep = lip_bound_chain(k, t, R, u)
    if "kappa2" in b:
        rep.r_min = float(search_radius(k, float(b.get("t1", 0.0)), float(b.get("t2", t)), float(b.get("kappa1", 0.0)),
                                        float(b["kappa2"]), float(b.get("phi_x_abs", 0.0))))
    w.json("bounds.json", {**rep.to_dict(), "F1": F1, "F2": F2})
    return EXIT_OK


# ------------------------------------------------------------------ entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="herglotz", description=__doc__)
    p.add_argument("--version", action="version", version=f"herglotz {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        s = sub.add_parser(c)
        s.add_argument("--config", required=True, help="JSON config with a model block and a '%s' block" % c)
        s.add_argument("--out", default=None, help="output directory (default: config 'output' or ./out)")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--threads", type=int, default=0, help="0 = auto; computations here are single-threaded")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.command, args.seed)
        out = Path(args.out or cfg.get("output", "out"))
        w = Writer(out, cfg)
        base = Path(args.config).resolve().parent
        if args.command == "bvp":
            return cmd_bvp(cfg, w)
        if args.command == "evolve":
            return cmd_evolve(cfg, w, base)
        if args.command == "verify":
            return cmd_verify(cfg, w, base)
        if args.command == "audit":
            return cmd_audit(cfg, w)
        return cmd_bounds(cfg, w)
    except (ConfigError, ModelError, ExpressionError, GridError, BoundsError, KeyError, TypeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ShootingError, DivergedError, LineSearchError, SolverFailure, ArithmeticError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
