"""Lie characteristic system and two-point shooting for the fundamental solutions.

    x' = H_p,   p' = -H_x - H_u p,   u' = p . x' - H
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec
from .ode import DiscreteCurve, DivergedError, solve_ivp

log = logging.getLogger(__name__)


class ShootingError(RuntimeError):
    def __init__(self, message: str, best_residual: float, p0=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.p0 = p0


@dataclass(frozen=True)
class CharState:
    x: np.ndarray
    p: np.ndarray
    u: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, float)))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, float)))
        object.__setattr__(self, "u", float(self.u))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p)) and np.isfinite(self.u)):
            raise ValueError("characteristic state must be finite")


@dataclass(eq=False)
class CharTrajectory:
    times: np.ndarray
    x: np.ndarray  # (steps+1, n)
    p: np.ndarray  # (steps+1, n)
    u: np.ndarray  # (steps+1,)

    @property
    def states(self) -> list[CharState]:
        return [CharState(x, p, u) for x, p, u in zip(self.x, self.p, self.u)]

    def curve(self) -> DiscreteCurve:
        """Positions as a discrete curve on increasing time."""
        if self.times[-1] > self.times[0]:
            return DiscreteCurve(self.times[0], self.times[-1], self.x)
        return DiscreteCurve(self.times[-1], self.times[0], self.x[::-1])


@dataclass
class ShootOptions:
    steps: int = 200
    xtol: float = 1e-9
    max_newton: int = 50
    multi_start: bool = False
    cross_check: bool = True
    cross_tol: float = 1e-5
    direct_N: int = 128


def _rhs(m: ModelSpec, s, x, p, u):
    v = p @ m.kinetic_inv
    V = m.potential.value(s, x)
    dx = v
    dp = -m.potential.gradient(s, x) + m.discount.dg(u)[..., None] * p
    du = 0.5 * np.einsum("...i,...i->...", p, v) - V + m.discount.g(u)
    return dx, dp, du


def lie_rk4(m: ModelSpec, x, p, u, t_start: float, t_end: float, steps: int, keep: bool = False):
    """Batched RK4 on the Lie system; t_end < t_start integrates backward.

    x, p: (..., n); u: (...).  Non-finite entries are left to the caller.
    """
    x, p, u = np.array(x, float), np.array(p, float), np.array(u, float)
    h = (t_end - t_start) / steps
    path = [(x, p, u)] if keep else None
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            s = t_start + k * h
            a1, b1, c1 = _rhs(m, s, x, p, u)
            a2, b2, c2 = _rhs(m, s + 0.5 * h, x + 0.5 * h * a1, p + 0.5 * h * b1, u + 0.5 * h * c1)
            a3, b3, c3 = _rhs(m, s + 0.5 * h, x + 0.5 * h * a2, p + 0.5 * h * b2, u + 0.5 * h * c2)
            a4, b4, c4 = _rhs(m, s + h, x + h * a3, p + h * b3, u + h * c3)
            x = x + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
            p = p + h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
            u = u + h / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4)
            if keep:
                path.append((x, p, u))
    if keep:
        return tuple(np.stack(z) for z in zip(*path))
    return x, p, u


def integrate_lie(m: ModelSpec, s0: CharState, t1: float, t2: float, steps: int) -> CharTrajectory:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    X, P, U = lie_rk4(m, s0.x, s0.p, s0.u, t1, t2, steps, keep=True)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(P)) and np.all(np.isfinite(U))):
        bad = int(np.flatnonzero(~np.isfinite(U) | ~np.all(np.isfinite(X), -1) | ~np.all(np.isfinite(P), -1))[0])
        raise DivergedError(f"characteristic blew up at step {bad}", bad)
    return CharTrajectory(np.linspace(t1, t2, steps + 1), X, P, U)


def batch_shoot(m: ModelSpec, t_start, t_end, starts, targets, u_start, steps, xtol=1e-9, max_newton=50, p_init=None):
    """Damped Newton for many shooting problems at once.

    Integrates from (starts, p, u_start) at t_start to t_end and solves
    x(t_end) = targets for p.  Returns (p, x_end, u_end, residual, ok).
    """
    starts = np.atleast_2d(np.asarray(starts, float))
    targets = np.atleast_2d(np.asarray(targets, float))
    B, n = starts.shape
    u_start = np.broadcast_to(np.asarray(u_start, float), (B,)).copy()
    if p_init is None:
        p = ((targets - starts) / (t_end - t_start)) @ m.kinetic
    else:
        p = np.array(p_init, float).reshape(B, n)

    def run(idx, pp):
        return lie_rk4(m, starts[idx], pp, u_start[idx], t_start, t_end, steps)

    X, _, U = run(slice(None), p)
    r = X - targets
    rn = np.linalg.norm(r, axis=-1)
    rn = np.where(np.isfinite(rn), rn, np.inf)
    stalled = ~np.isfinite(rn)
    ok = rn <= xtol
    for _ in range(max_newton):
        act = np.flatnonzero(~ok & ~stalled)
        if act.size == 0:
            break
        pa = p[act]
        delta = 1e-6 * (1.0 + np.linalg.norm(pa, axis=-1))
        Jac = np.empty((act.size, n, n))
        for j in range(n):
            pj = pa.copy()
            pj[:, j] += delta
            Xj, _, _ = run(act, pj)
            Jac[:, :, j] = (Xj - X[act]) / delta[:, None]
        with np.errstate(all="ignore"):
            try:
                step = -np.linalg.solve(Jac, r[act][..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = -np.einsum("bij,bj->bi", np.linalg.pinv(Jac), r[act])
        step = np.where(np.isfinite(step), step, 0.0)
        alpha = np.ones(act.size)
        pending = np.arange(act.size)
        for _ in range(12):
            trial = pa[pending] + alpha[pending, None] * step[pending]
            Xt, _, Ut = run(act[pending], trial)
            rt = np.linalg.norm(Xt - targets[act[pending]], axis=-1)
            rt = np.where(np.isfinite(rt), rt, np.inf)
            good = rt < (1 - 1e-4 * alpha[pending]) * rn[act[pending]]
            gi = act[pending[good]]
            p[gi] = trial[good]
            X[gi], U[gi] = Xt[good], Ut[good]
            r[gi] = X[gi] - targets[gi]
            rn[gi] = rt[good]
            pending = pending[~good]
            if pending.size == 0:
                break
            alpha[pending] *= 0.5
        stalled[act[pending]] = True
        ok = rn <= xtol
    return p, X, U, rn, ok


@dataclass
class FundamentalResult:
    h: float
    traj: CharTrajectory | None
    p0: np.ndarray | None = None
    method: str = "shooting"  # or "direct-only"
    cross_diff: float | None = None
    direct: object = None
    notes: list = field(default_factory=list)

    def __iter__(self):
        yield self.h
        yield self.traj


def _starts(m, t1, t2, x, y, multi):
    base = ((y - x) / (t2 - t1)) @ m.kinetic
    if not multi:
        return [base]
    scale = 1.0 + np.abs(base).max()
    return [base, np.zeros_like(base), 2 * base, -base, base + scale, base - scale]


def shoot(m: ModelSpec, t1: float, t2: float, x, y, u0: float, opts: ShootOptions | None = None, _backward=False):
    """Find p0 with x-endpoint(p0) = y; returns (p0, trajectory).

    With ``opts.multi_start`` several initial momenta are tried and the
    extremal with the smaller action is kept.
    """
    opts = opts or ShootOptions()
    if not t2 > t1:
        raise ValueError("shoot needs t2 > t1")
    x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
    t_start, t_end = (t2, t1) if _backward else (t1, t2)
    src, dst = (y, x) if _backward else (x, y)
    guesses = _starts(m, t1, t2, x, y, opts.multi_start)
    G = len(guesses)
    p, X, U, res, ok = batch_shoot(
        m, t_start, t_end, np.repeat(src[None], G, 0), np.repeat(dst[None], G, 0),
        np.full(G, u0), opts.steps, opts.xtol, opts.max_newton, p_init=np.array(guesses),
    )
    if not ok.any():
        j = int(np.argmin(res))
        best = float(res[j])
        raise ShootingError(f"shooting did not converge in {opts.max_newton} Newton steps (best residual {best:.3e})", best, p[j])
    idx = np.flatnonzero(ok)
    # smaller action wins: forward -> u(t2) smaller; backward -> u(t1) larger
    k = idx[np.argmax(U[idx])] if _backward else idx[np.argmin(U[idx])]
    traj = integrate_lie(m, CharState(src, p[k], u0), t_start, t_end, opts.steps)
    return p[k], traj


def fundamental_neg(m: ModelSpec, t1: float, t2: float, y, x, u0: float, opts: ShootOptions | None = None) -> FundamentalResult:
    """h_L(t1,t2,y,x,u0): optimal action from y (time t1, u = u0) to x (time t2)."""
    from .varmin import MinimizeOptions, minimize

    opts = opts or ShootOptions()
    if not t2 > t1:
        raise ValueError("fundamental solution needs t2 > t1")
    try:
        p0, traj = shoot(m, t1, t2, y, x, u0, opts)
    except (ShootingError, DivergedError) as err:
        log.info("shooting failed (%s); using direct minimization", err)
        direct = minimize(m, t1, t2, y, x, u0, MinimizeOptions(N=opts.direct_N))
        return FundamentalResult(direct.J, None, None, "direct-only", None, direct, [str(err)])
    h = float(traj.u[-1] - u0)
    out = FundamentalResult(h, traj, p0)
    if opts.cross_check:
        direct = minimize(m, t1, t2, y, x, u0, MinimizeOptions(N=opts.direct_N))
        out.direct = direct
        if direct.grad_inf_norm <= MinimizeOptions().gtol:
            out.cross_diff = abs(h - direct.J)
            if out.cross_diff > opts.cross_tol:
                out.notes.append(f"shooting and direct values differ by {out.cross_diff:.3e}")
                log.warning("cross-check mismatch %.3e", out.cross_diff)
    return out


def fundamental_pos(m: ModelSpec, t1: float, t2: float, x, y, u_terminal: float, opts: ShootOptions | None = None) -> FundamentalResult:
    """Terminal-condition fundamental solution: curves from x (t1) to y (t2) with u(t2) = u_terminal.

    Integrates the Lie system backward from t2 and shoots on the terminal
    momentum; the value is u(t2) - u(t1).
    """
    from .varmin import MinimizeOptions, minimize

    opts = opts or ShootOptions()
    if not t2 > t1:
        raise ValueError("fundamental solution needs t2 > t1")
    x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
    try:
        pT, traj = shoot(m, t1, t2, x, y, u_terminal, opts, _backward=True)
    except (ShootingError, DivergedError) as err:
        log.info("backward shooting failed (%s); using direct minimization", err)
        u_init, direct = _direct_terminal(m, t1, t2, x, y, u_terminal, opts.direct_N)
        return FundamentalResult(u_terminal - u_init, None, None, "direct-only", None, direct, [str(err)])
    u_init = float(traj.u[-1])
    h = u_terminal - u_init
    # chronological order for callers
    traj = CharTrajectory(traj.times[::-1], traj.x[::-1], traj.p[::-1], traj.u[::-1])
    out = FundamentalResult(h, traj, traj.p[0])
    if opts.cross_check:
        direct = minimize(m, t1, t2, x, y, u_init, MinimizeOptions(N=opts.direct_N))
        out.direct = direct
        if direct.grad_inf_norm <= MinimizeOptions().gtol:
            out.cross_diff = abs(h - direct.J)
            if out.cross_diff > opts.cross_tol:
                out.notes.append(f"shooting and direct values differ by {out.cross_diff:.3e}")
    return out


def _direct_terminal(m, t1, t2, x, y, u_terminal, N):
    """Secant search for the initial value whose optimal forward run ends at u_terminal."""
    from .varmin import MinimizeOptions, minimize

    def end(u0):
        r = minimize(m, t1, t2, x, y, u0, MinimizeOptions(N=N))
        return u0 + r.J - u_terminal, r

    a, b = u_terminal, u_terminal - 1.0
    fa, ra = end(a)
    fb, rb = end(b)
    for _ in range(50):
        if abs(fb) < 1e-12 or fb == fa:
            break
        a, fa, (b, (fb, rb)) = b, fb, (b - fb * (b - a) / (fb - fa), end(b - fb * (b - a) / (fb - fa)))
    return b, rb


def consistency_forward(m: ModelSpec, traj: CharTrajectory, refine: int = 16) -> float:
    """|u(t2) - solve_ivp along the extremal from u(t1)|.

    The extremal is re-integrated with ``refine`` times more steps so that the
    piecewise-linear curve error stays below the integrator error.
    """
    fwd = traj.times[-1] > traj.times[0]
    i0, i1 = (0, -1) if fwd else (-1, 0)
    a, b = traj.times[i0], traj.times[i1]
    steps = refine * (len(traj.times) - 1)
    fine = integrate_lie(m, CharState(traj.x[i0], traj.p[i0], traj.u[i0]), a, b, steps)
    return abs(solve_ivp(m, fine.curve(), traj.u[i0]).u[-1] - traj.u[i1])
