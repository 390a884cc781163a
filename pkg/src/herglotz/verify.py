"""Numerical certificates of the necessary conditions and of the value-function properties."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grid import GridFunction, fmt
from .model import ModelSpec
from .ode import CaraSolution, DiscreteCurve, midpoint_values, solve_ivp


class VerifyError(ValueError):
    pass


@dataclass
class ResidualReport:
    name: str
    sup_residual: float
    l2_residual: float
    grid_N: int
    details: dict = field(default_factory=dict)  # column name -> list of per-sample values
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.sup_residual, self.l2_residual):
            if not (np.isfinite(v) and v >= 0):
                raise VerifyError(f"{self.name}: residual must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sup_residual": float(self.sup_residual),
            "l2_residual": float(self.l2_residual),
            "grid_N": int(self.grid_N),
            "details": {k: [float(x) for x in v] for k, v in self.details.items()},
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_lines(self) -> list[str]:
        cols = list(self.details)
        rows = zip(*(self.details[c] for c in cols)) if cols else []
        return [",".join(cols)] + [",".join(fmt(v) for v in r) for r in rows]


def _report(name, r, h, N, details, meta=None):
    r = np.asarray(r, float)
    sup = float(r.max()) if r.size else 0.0
    l2 = float(np.sqrt(h * np.sum(r * r))) if r.size else 0.0
    return ResidualReport(name, sup, l2, N, details, meta or {})


def _weights(m: ModelSpec, c: DiscreteCurve, cara: CaraSolution):
    """int_a^s L_u at the nodes and at the interval midpoints, with L_u taken at the midpoints."""
    u_mid = midpoint_values(m, c, cara)
    Lu = m.discount.dg(u_mid) * c.h
    W_node = np.concatenate([[0.0], np.cumsum(Lu)])
    W_mid = W_node[:-1] + 0.5 * Lu
    return u_mid, W_node, W_mid


def energy_E(m: ModelSpec, c: DiscreteCurve, cara: CaraSolution):
    """Weighted energy e^{-int L_u} (L_v . v - L) at interval midpoints; returns (mid_times, E)."""
    u_mid, _, W_mid = _weights(m, c, cara)
    v = c.velocities
    # L_v.v - L = 1/2 v.Av + V - g(u)
    inner = m.kinetic_energy(v) + m.potential.value(c.mid_times, c.mid_points) - m.discount.g(u_mid)
    return c.mid_times, np.exp(-W_mid) * inner


def erdmann_residual(m: ModelSpec, c: DiscreteCurve, cara: CaraSolution) -> ResidualReport:
    """(E(mid_{i+1}) - E(mid_i))/h + e^{-int L_u} L_t at the shared node."""
    _, E = energy_E(m, c, cara)
    _, W_node, _ = _weights(m, c, cara)
    s = c.times[1:-1]
    L_t = -m.potential.time_derivative(s, c.nodes[1:-1])
    r = np.abs(np.diff(E) / c.h + np.exp(-W_node[1:-1]) * L_t)
    return _report("erdmann", r, c.h, c.N, {"s": s, "residual": r})


def herglotz_residual(m: ModelSpec, c: DiscreteCurve, cara: CaraSolution) -> ResidualReport:
    """Integrated form: jump of e^{-int L_u} L_v across each node minus the weighted L_x over
    the dual cell, divided by h."""
    _, W_node, W_mid = _weights(m, c, cara)
    q = np.exp(-W_mid)[:, None] * m.momentum(c.velocities)
    s = c.times[1:-1]
    L_x = -m.potential.gradient(s, c.nodes[1:-1])
    r = np.linalg.norm(np.diff(q, axis=0) / c.h - np.exp(-W_node[1:-1])[:, None] * L_x, axis=-1)
    return _report("herglotz", r, c.h, c.N, {"s": s, "residual": r})


def dbr_constancy(f, g) -> float:
    """sup |g - int f - mean(g - int f)| for samples f = (s, f_s) and g = (s, g_s)."""
    (sf, fv), (sg, gv) = f, g
    sf, sg = np.asarray(sf, float), np.asarray(sg, float)
    if sf.shape != sg.shape or not np.array_equal(sf, sg):
        raise VerifyError("f and g must be sampled on the same grid")
    fv, gv = np.asarray(fv, float), np.asarray(gv, float)
    if fv.shape != sf.shape or gv.shape != sf.shape:
        raise VerifyError("sample arrays must match the grid")
    F = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(sf) * (fv[1:] + fv[:-1]))])
    d = gv - F
    return float(np.abs(d - d.mean()).max())


@dataclass
class MonotoneCheck:
    passed: bool
    margin: float
    limit_margin: float
    values: np.ndarray


def convexity_monotone_check(m: ModelSpec, t, x, v, u, eps_grid) -> MonotoneCheck:
    """f(eps) = L_v(w).w - L(w) with w = v/(1+eps) must not increase along eps_grid,
    and stays above its limit -L(t,x,0,u)."""
    eps = np.asarray(eps_grid, float)
    if np.any(eps <= -1) or np.any(np.diff(eps) < 0):
        raise VerifyError("eps_grid must be sorted and > -1")
    x = np.atleast_1d(np.asarray(x, float))
    w = np.atleast_1d(np.asarray(v, float))[None, :] / (1 + eps)[:, None]
    f = m.kinetic_energy(w) + m.potential.value(t, x) - m.discount.g(u)
    dec = f[:-1] - f[1:]
    margin = float(dec.min()) if dec.size else 0.0
    limit = -float(m.lagrangian(t, x, np.zeros_like(x), u))
    limit_margin = float(f[-1] - limit)
    passed = bool(np.all(f[1:] <= f[:-1] + 1e-10) and limit_margin >= -1e-8)
    return MonotoneCheck(passed, margin, limit_margin, f)


# ------------------------------------------------------------ value function


def dynamic_programming_check(m: ModelSpec, phi, t: float, x, tprimes, opts=None, box=None, n_points=None) -> ResidualReport:
    """|u(t,x) - [Caratheodory run along the minimizer on [t', t] from u(t', xi(t'))]| for each t'.

    u(t, .) and u(t', .) come from independent evolutions of phi from time 0.
    """
    from .charflow import CharState, integrate_lie
    from .evolve import EvolveOptions, as_grid_function, evolve_points

    if not t > 0:
        raise VerifyError("t must be > 0")
    opts = opts or EvolveOptions()
    gf, phi_eval = as_grid_function(phi, box, n_points)
    x = np.atleast_1d(np.asarray(x, float))
    tp = [float(s) for s in tprimes]
    if any(s < 0 or s > t for s in tp):
        raise VerifyError("tprimes must lie in [0, t]")
    top = evolve_points(m, gf, phi_eval, 0.0, t, x[None], opts)
    u_tx = float(top.values[0])
    y_star = top.argmin[0]
    steps = max(opts.steps, 200)
    traj = integrate_lie(m, CharState(y_star, top.p[0], float(phi_eval(y_star[None])[0])), 0.0, t, steps)
    rows, res = [], []
    for s in tp:
        if s == t:
            xi_s, lhs = x, u_tx
            u_s = float(evolve_points(m, gf, phi_eval, 0.0, t, x[None], opts).values[0])
            r = abs(u_tx - u_s)
        else:
            xi_s = np.array([np.interp(s, traj.times, traj.x[:, j]) for j in range(m.dim)])
            if s == 0:
                u_s = float(phi_eval(xi_s[None])[0])
            else:
                u_s = float(evolve_points(m, gf, phi_eval, 0.0, s, xi_s[None], opts).values[0])
            N = max(16, int(round(steps * (t - s) / t)))
            nodes = np.stack([np.interp(np.linspace(s, t, N + 1), traj.times, traj.x[:, j]) for j in range(m.dim)], -1)
            nodes[-1] = x
            lhs = float(solve_ivp(m, DiscreteCurve(s, t, nodes), u_s).u[-1])
            r = abs(u_tx - lhs)
        rows.append((s, r))
        res.append(r)
    details = {"t_prime": [a for a, _ in rows], "residual": res}
    return _report("dynamic_programming", np.array(res), 1.0, len(tp), details,
                   {"t": t, "x": x.tolist(), "u_tx": u_tx, "argmin_y": y_star.tolist()})


def _second_diffs(vals, h):
    d = vals.ndim
    out = np.zeros(vals.shape)
    inner = tuple(slice(1, -1) for _ in range(d))
    for a in range(d):
        lo = [slice(1, -1)] * d
        hi = [slice(1, -1)] * d
        lo[a] = slice(0, -2)
        hi[a] = slice(2, None)
        sd = np.abs(vals[tuple(hi)] - 2 * vals[inner] + vals[tuple(lo)]) / h[a] ** 2
        out[inner] = np.maximum(out[inner], sd)
    return out[inner]


def viscosity_residual(m: ModelSpec, u1: GridFunction, u2: GridFunction, smoothness_threshold=None,
                       t1: float | None = None, t2: float | None = None) -> ResidualReport:
    """|D_t u + H(t, x, D_x u, u)| at interior points where the solution looks twice differentiable.

    D_t is the forward difference between the snapshots, D_x the central difference of the first.
    Points with max second difference / h^2 above the threshold (default 50x the median) count as kinks.
    """
    if not u1.same_grid(u2):
        raise VerifyError("snapshots must share the same spatial grid")
    t1 = u1.time if t1 is None else t1
    t2 = u2.time if t2 is None else t2
    if t1 is None or t2 is None or not t2 > t1:
        raise VerifyError("need snapshot times t1 < t2")
    if m.dim != u1.dim:
        raise VerifyError("grid dimension differs from the model dimension")
    h = u1.spacing
    v1, v2 = u1.values, u2.values
    d = u1.dim
    inner = tuple(slice(1, -1) for _ in range(d))
    curv = _second_diffs(v1, h)
    thr = 50.0 * float(np.median(curv)) if smoothness_threshold is None else float(smoothness_threshold)
    smooth = curv <= thr
    Dt = (v2[inner] - v1[inner]) / (t2 - t1)
    p = np.empty(curv.shape + (d,))
    for a in range(d):
        lo = [slice(1, -1)] * d
        hi = [slice(1, -1)] * d
        lo[a] = slice(0, -2)
        hi[a] = slice(2, None)
        p[..., a] = (v1[tuple(hi)] - v1[tuple(lo)]) / (2 * h[a])
    pts = u1.points().reshape(u1.n_points + (d,))[inner]
    u = v1[inner]
    H = 0.5 * np.einsum("...i,...i->...", p, m.velocity(p)) + m.potential.value(t1, pts) - m.discount.g(u)
    r_all = np.abs(Dt + H)
    r = r_all[smooth]
    details = {f"x{j}": pts[..., j][smooth].ravel() for j in range(d)}
    details["residual"] = r.ravel()
    meta = {"t1": t1, "t2": t2, "threshold": thr, "kinks_excluded": int((~smooth).sum()),
            "points_checked": int(smooth.sum())}
    return _report("viscosity", r.ravel(), float(np.prod(h)), int(curv.size), details, meta)
