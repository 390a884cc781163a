"""Grid evaluation of the negative/positive Lax-Oleinik operators.

    (T phi)(x)       = inf_y { phi(y) + h(t1, t2, y, x, phi(y)) }
    (T_breve phi)(x) = sup_y { phi(y) - h_breve(t1, t2, x, y, phi(y)) }

phi(y) + h(...) is the end value of the characteristic started at (y, p, phi(y)),
so each candidate costs one shooting solve.  Shooting runs batched over all
(target, candidate) pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .bounds import search_radius
from .charflow import ShootOptions, batch_shoot, fundamental_neg, fundamental_pos
from .grid import GridError, GridFunction
from .model import ModelSpec
from .verify import ResidualReport

log = logging.getLogger(__name__)

__all__ = ["GridFunction", "EvolveOptions", "EvolveResult", "evolve_negative", "evolve_positive", "markov_check"]


class EmptyCandidateError(ValueError):
    pass


@dataclass
class EvolveOptions:
    kappa1: float | None = None
    kappa2: float | None = None
    refine: bool = True
    steps: int = 32
    xtol: float = 1e-10
    max_newton: int = 30
    max_pairs: int = 200_000


@dataclass
class EvolveResult:
    u: GridFunction
    argmin_y: np.ndarray  # n_points + (dim,)
    radius_used: float
    refine_stats: dict = field(default_factory=dict)
    radii: np.ndarray | None = None
    p: np.ndarray | None = None  # momentum of the optimal characteristic at the source end


@dataclass
class _PointValues:
    values: np.ndarray
    argmin: np.ndarray
    p: np.ndarray
    radii: np.ndarray
    stats: dict


def as_grid_function(phi, box=None, n_points=None):
    """(GridFunction, evaluator) for a grid function or an expression in x1, x2."""
    if isinstance(phi, GridFunction):
        return phi, phi.interpolate
    if isinstance(phi, (str, ex.Node)):
        if box is None or n_points is None:
            raise GridError("an expression for phi needs a grid box and n_points")
        node = ex.parse(phi) if isinstance(phi, str) else phi
        if "t" in ex.variables(node):
            raise GridError("phi must not depend on t")

        def f(pts):
            pts = np.asarray(pts, float)
            return np.broadcast_to(ex.evaluate(node, np.zeros(pts.shape[:-1]), pts), pts.shape[:-1]) * 1.0

        return GridFunction.from_function(f, box, n_points), f
    raise TypeError("phi must be a GridFunction or an expression")


def estimate_lipschitz(gf: GridFunction) -> float:
    """Largest discrete gradient norm over the grid cells."""
    h = gf.spacing
    v = gf.values
    sq = 0.0
    for a in range(gf.dim):
        d = np.abs(np.diff(v, axis=a)) / h[a]
        sq = sq + float(d.max()) ** 2
    return float(np.sqrt(sq))


def _shoot_values(m, t1, t2, Y, uY, X, opts, positive):
    """End values of optimal characteristics between candidate Y and target X (batched)."""
    if positive:
        p, Xe, U, res, ok = batch_shoot(m, t2, t1, Y, X, uY, opts.steps, opts.xtol, opts.max_newton)
    else:
        p, Xe, U, res, ok = batch_shoot(m, t1, t2, Y, X, uY, opts.steps, opts.xtol, opts.max_newton)
    bad = np.flatnonzero(~ok)
    if bad.size:
        so = ShootOptions(steps=max(opts.steps, 200), xtol=max(opts.xtol, 1e-9), multi_start=True, cross_check=False)
        for i in bad:
            if positive:
                r = fundamental_pos(m, t1, t2, X[i], Y[i], uY[i], so)
                U[i] = uY[i] - r.h
            else:
                r = fundamental_neg(m, t1, t2, Y[i], X[i], uY[i], so)
                U[i] = uY[i] + r.h
            if r.traj is None:
                p[i] = np.nan
            else:
                p[i] = r.traj.p[-1] if positive else r.p0
    return U, p, bad.size


def evolve_points(m: ModelSpec, gf: GridFunction, phi_eval, t1: float, t2: float, X, opts: EvolveOptions,
                  positive: bool = False) -> _PointValues:
    """Operator values at arbitrary targets X (M, dim), candidates from the grid of gf."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != m.dim or gf.dim != m.dim:
        raise GridError("grid, targets and model must have the same dimension")
    Y = gf.points()
    phiY = gf.flat()
    if t2 == t1:
        vals = phi_eval(X)
        return _PointValues(np.asarray(vals, float), X.copy(), np.zeros_like(X), np.zeros(len(X)), {"pairs": 0})
    if not t2 > t1:
        raise ValueError("evolve needs t2 >= t1")
    k1 = 0.0 if opts.kappa1 is None else opts.kappa1
    k2 = estimate_lipschitz(gf) if opts.kappa2 is None else opts.kappa2
    radii = search_radius(m.constants, t1, t2, k1, k2, np.abs(phi_eval(X)))
    radii = np.broadcast_to(radii, (len(X),)).astype(float)
    shape = gf.n_points
    h = gf.spacing
    lo = np.array([b[0] for b in gf.box])
    hi = np.array([b[1] for b in gf.box])
    sign = -1.0 if positive else 1.0  # minimize sign * value
    out_v = np.empty(len(X))
    out_y = np.empty_like(X)
    out_p = np.empty_like(X)
    stats = {"pairs": 0, "fallbacks": 0, "polished": 0}
    M = len(Y)
    rows = max(1, opts.max_pairs // M)
    for c0 in range(0, len(X), rows):
        Xc = X[c0:c0 + rows]
        dist = np.linalg.norm(Y[None, :, :] - Xc[:, None, :], axis=-1)
        mask = dist <= radii[c0:c0 + rows, None] * (1 + 1e-12)
        empty = ~mask.any(axis=1)
        if empty.any():
            j = c0 + int(np.flatnonzero(empty)[0])
            raise EmptyCandidateError(
                f"no grid point within the search radius {radii[j]:.3g} of target {X[j].tolist()}; "
                "use a finer grid or larger Lipschitz constants")
        ti, ci = np.nonzero(mask)
        U, P, nb = _shoot_values(m, t1, t2, Y[ci], phiY[ci], Xc[ti], opts, positive)
        stats["pairs"] += len(ti)
        stats["fallbacks"] += nb
        F = np.full(mask.shape, np.inf)
        F[ti, ci] = sign * U
        Pd = np.zeros(mask.shape + (m.dim,))
        Pd[ti, ci] = P
        best = np.argmin(F, axis=1)  # first index among ties = smallest lexicographic y
        rr = np.arange(len(Xc))
        fbest = F[rr, best]
        ybest = Y[best].copy()
        pbest = Pd[rr, best]
        if opts.refine:
            idx = np.array(np.unravel_index(best, shape)).T  # (C, dim)
            shift = np.zeros_like(ybest)
            for a in range(m.dim):
                fm = np.full(len(Xc), np.inf)
                fp = np.full(len(Xc), np.inf)
                for off, store in ((-1, fm), (1, fp)):
                    nid = idx.copy()
                    nid[:, a] += off
                    okn = (nid[:, a] >= 0) & (nid[:, a] < shape[a])
                    flat = np.ravel_multi_index(tuple(np.clip(nid, 0, np.array(shape) - 1).T), shape)
                    store[okn] = F[rr[okn], flat[okn]]
                curv = fp - 2 * fbest + fm
                usable = np.isfinite(fp) & np.isfinite(fm) & (curv > 0)
                with np.errstate(all="ignore"):
                    off = np.where(usable, -0.5 * (fp - fm) / curv, 0.0)
                shift[:, a] = np.clip(off, -1.0, 1.0) * h[a]
            cand = np.flatnonzero(np.any(shift != 0, axis=1))
            if cand.size:
                ys = np.clip(ybest[cand] + shift[cand], lo, hi)
                # stay inside the search ball
                d = ys - Xc[cand]
                dn = np.linalg.norm(d, axis=1)
                rad = radii[c0 + cand]
                scale = np.where(dn > rad, rad / np.maximum(dn, 1e-300), 1.0)
                ys = Xc[cand] + d * scale[:, None]
                Us, Ps, nb = _shoot_values(m, t1, t2, ys, phi_eval(ys), Xc[cand], opts, positive)
                stats["fallbacks"] += nb
                better = sign * Us < fbest[cand]
                sel = cand[better]
                fbest[sel] = sign * Us[better]
                ybest[sel] = ys[better]
                pbest[sel] = Ps[better]
                stats["polished"] += int(better.sum())
        out_v[c0:c0 + rows] = sign * fbest
        out_y[c0:c0 + rows] = ybest
        out_p[c0:c0 + rows] = pbest
    return _PointValues(out_v, out_y, out_p, radii, stats)


def _evolve(m, phi, t1, t2, opts, positive, box, n_points):
    opts = opts or EvolveOptions()
    gf, phi_eval = as_grid_function(phi, box, n_points)
    if not t2 > t1:
        raise ValueError("evolve needs t2 > t1")
    pv = evolve_points(m, gf, phi_eval, t1, t2, gf.points(), opts, positive)
    u = GridFunction(gf.box, gf.n_points, pv.values, time=t2)
    shape = gf.n_points + (gf.dim,)
    return EvolveResult(u, pv.argmin.reshape(shape), float(pv.radii.max()), pv.stats, pv.radii.reshape(gf.n_points),
                        pv.p.reshape(shape))


def evolve_negative(m: ModelSpec, phi, t1: float, t2: float, opts: EvolveOptions | None = None,
                    box=None, n_points=None) -> EvolveResult:
    """inf-convolution of phi with the fundamental solution; candidates restricted to the search radius."""
    return _evolve(m, phi, t1, t2, opts, False, box, n_points)


def evolve_positive(m: ModelSpec, phi, t1: float, t2: float, opts: EvolveOptions | None = None,
                    box=None, n_points=None) -> EvolveResult:
    """sup-convolution with the terminal-condition fundamental solution; same radius policy."""
    return _evolve(m, phi, t1, t2, opts, True, box, n_points)


def interior_mask(gf: GridFunction) -> np.ndarray:
    """Points in the central half of the box (each coordinate within a quarter width of the centre)."""
    pts = gf.points()
    ok = np.ones(len(pts), bool)
    for a, (lo, hi) in enumerate(gf.box):
        ok &= np.abs(pts[:, a] - 0.5 * (lo + hi)) <= 0.25 * (hi - lo) + 1e-12
    return ok.reshape(gf.n_points)


def markov_check(m: ModelSpec, phi, t1: float, t2: float, t3: float, opts: EvolveOptions | None = None,
                 box=None, n_points=None) -> ResidualReport:
    """One-step versus two-step evolution, compared on the interior half of the box."""
    if not (t1 <= t2 < t3):
        raise ValueError("markov_check needs t1 <= t2 < t3")
    opts = opts or EvolveOptions()
    gf, _ = as_grid_function(phi, box, n_points)
    one = evolve_negative(m, phi, t1, t3, opts, box, n_points).u
    if t2 == t1:
        two = one  # T^{t1}_{t1} is the identity
    else:
        mid = evolve_negative(m, phi, t1, t2, opts, box, n_points).u
        # the intermediate function has its own Lipschitz constant
        step2 = EvolveOptions(**{**opts.__dict__, "kappa1": None, "kappa2": None})
        two = evolve_negative(m, mid, t2, t3, step2).u
    inner = interior_mask(gf)
    diff = np.abs(one.values - two.values)[inner]
    pts = gf.points()[inner.ravel()]
    details = {f"x{j}": pts[:, j] for j in range(gf.dim)}
    details["difference"] = diff
    from .verify import _report

    return _report("markov", diff, float(np.prod(gf.spacing)), int(np.prod(gf.n_points)), details,
                   {"t1": t1, "t2": t2, "t3": t3})
