"""Direct minimization of the implicit action J(xi) = u_xi(b) - u over discrete curves."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded

from .model import ModelSpec
from .ode import CaraSolution, DiscreteCurve, _forward, midpoint_values, scalar_discount, stage_values

log = logging.getLogger(__name__)


class LineSearchError(RuntimeError):
    def __init__(self, message: str, curve: DiscreteCurve, J: float, grad_inf_norm: float, iterations: int):
        super().__init__(message)
        self.curve = curve
        self.J = J
        self.grad_inf_norm = grad_inf_norm
        self.iterations = iterations


@dataclass
class MinimizeOptions:
    N: int = 128
    gtol: float = 1e-10
    rtol: float = 1e-3
    max_iter: int = 2000
    multires: bool = False
    memory: int = 10


@dataclass
class MinimizeResult:
    curve: DiscreteCurve
    cara: CaraSolution
    J: float
    grad_inf_norm: float
    iterations: int
    herglotz_residual: float
    converged: bool
    message: str = ""


def action(m: ModelSpec, c: DiscreteCurve, u0: float):
    """J = u_xi(b) - u0 together with the Carathéodory solution."""
    u, _ = _forward(m, c, u0)
    return float(u[-1] - u[0]), CaraSolution(u, "initial")


def _adjoint_weights(m: ModelSpec, c: DiscreteCurve, u0: float, P):
    """Reverse sweep through the RK4 recursion.

    Returns J, u and the sensitivities of u_N to the u-independent integrand
    at the start/mid/end stage of every interval.  These are the discrete
    counterparts of exp(int_s^b L_u dr) ds.
    """
    u, stages = _forward(m, c, u0, P, record=True)
    _, dg = scalar_discount(m)
    h = c.h
    hh = 0.5 * h
    N = c.N
    ws = [0.0] * N
    wm = [0.0] * N
    we = [0.0] * N
    ubar = 1.0
    ul = u.tolist()
    for i in range(N - 1, -1, -1):
        z2, z3, z4 = stages[i]
        k1 = h / 6.0 * ubar
        k2 = h / 3.0 * ubar
        k3 = h / 3.0 * ubar
        k4 = h / 6.0 * ubar
        nxt = ubar
        we[i] = k4
        z4b = k4 * dg(z4)
        nxt += z4b
        k3 += h * z4b
        z3b = k3 * dg(z3)
        nxt += z3b
        k2 += hh * z3b
        wm[i] = k3 + k2
        z2b = k2 * dg(z2)
        nxt += z2b
        k1 += hh * z2b
        ws[i] = k1
        nxt += k1 * dg(ul[i])
        ubar = nxt
    return float(u[-1] - u[0]), u, np.array(ws), np.array(wm), np.array(we)


def action_and_gradient(m: ModelSpec, c: DiscreteCurve, u0: float):
    """J, CaraSolution and dJ/d(nodes) for all N+1 nodes."""
    P = stage_values(m, c)
    J, u, ws, wm, we = _adjoint_weights(m, c, u0, P)
    h = c.h
    W = (ws + wm + we)[:, None]
    Lv = m.momentum(c.velocities)
    Lx_nodes = -m.potential.gradient(c.times, c.nodes)
    Lx_mid = -m.potential.gradient(c.mid_times, c.mid_points)
    grad = np.zeros_like(c.nodes)
    half_mid = 0.5 * wm[:, None] * Lx_mid
    grad[:-1] += -W * Lv / h + ws[:, None] * Lx_nodes[:-1] + half_mid
    grad[1:] += W * Lv / h + we[:, None] * Lx_nodes[1:] + half_mid
    return J, CaraSolution(u, "initial"), grad


def gradient(m: ModelSpec, c: DiscreteCurve, u0: float) -> np.ndarray:
    """dJ/d(nodes[1..N-1]) of the discrete action, shape (N-1, n).

    First variation  sum_i w_i (L_x . eta + L_v . eta')  with the adjoint
    weights w_i taken from the RK4 recursion itself, so the result is the
    exact derivative of ``action``.
    """
    return action_and_gradient(m, c, u0)[2][1:-1]


def el_integral_gradient(m: ModelSpec, c: DiscreteCurve, u0: float, cara: CaraSolution | None = None) -> np.ndarray:
    """Midpoint-rule quadrature of  int e^{int_s^b L_u} (L_x . eta + L_v . eta') ds  for nodal hat functions.

    w_i = exp(sum_{j>=i} L_u(mid_j) ds); converges to ``gradient`` as N grows
    (relative error O(1/N)).
    """
    if cara is None:
        cara = action(m, c, u0)[1]
    h = c.h
    u_mid = midpoint_values(m, c, cara)
    Lu = m.discount.dg(u_mid)
    w = np.exp(np.cumsum((Lu * h)[::-1])[::-1])[:, None]
    Lx = -m.potential.gradient(c.mid_times, c.mid_points)
    Lv = m.momentum(c.velocities)
    return 0.5 * h * (w[:-1] * Lx[:-1] + w[1:] * Lx[1:]) + w[:-1] * Lv[:-1] - w[1:] * Lv[1:]


# ------------------------------------------------------------------- L-BFGS


class _KineticPreconditioner:
    """Inverse of the Hessian of sum_i 1/2 v_i.A v_i h over the interior nodes."""

    def __init__(self, m: ModelSpec, N: int, h: float):
        k = N - 1
        self.ab = np.zeros((2, k))
        self.ab[0, 1:] = -1.0
        self.ab[1, :] = 2.0
        self.h = h
        self.Ainv = m.kinetic_inv

    def __call__(self, g: np.ndarray) -> np.ndarray:
        if g.shape[0] == 0:
            return g
        return self.h * solveh_banded(self.ab, g @ self.Ainv, check_finite=False)


def _lbfgs(fg, x0: np.ndarray, precond, gtol: float, max_iter: int, memory: int):
    """Two-loop L-BFGS with Armijo backtracking (c = 1e-4, factor 0.5)."""
    x = x0
    f, g, extra = fg(x)
    S, Y, R = [], [], []
    it = 0
    while it < max_iter:
        ginf = float(np.abs(g).max()) if g.size else 0.0
        if ginf <= gtol:
            break
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(R)):
            a = rho * np.vdot(s, q)
            q -= a * y
            alphas.append(a)
        r = precond(q)
        if S:
            Hy = precond(Y[-1])
            r *= np.vdot(S[-1], Y[-1]) / np.vdot(Y[-1], Hy)
        for (s, y, rho), a in zip(zip(S, Y, R), reversed(alphas)):
            b = rho * np.vdot(y, r)
            r += (a - b) * s
        d = -r
        gd = float(np.vdot(g, d))
        if not gd < 0:
            S.clear(), Y.clear(), R.clear()
            d = -precond(g)
            gd = float(np.vdot(g, d))
        step = 1.0
        slack = 1e-14 * (1.0 + abs(f))
        for _ in range(60):
            x_new = x + step * d
            try:
                f_new, g_new, extra_new = fg(x_new)
            except ArithmeticError:
                f_new = math.inf
            if f_new <= f + 1e-4 * step * gd + slack:
                break
            step *= 0.5
        else:
            return x, f, g, extra, it, "line search failed"
        s = x_new - x
        y = g_new - g
        sy = float(np.vdot(s, y))
        if sy > 1e-14 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            S.append(s), Y.append(y), R.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0), Y.pop(0), R.pop(0)
        x, f, g, extra = x_new, f_new, g_new, extra_new
        it += 1
    return x, f, g, extra, it, ""


def _minimize_at(m: ModelSpec, start: DiscreteCurve, u0: float, opts: MinimizeOptions):
    shape = (start.N - 1, start.dim)

    def fg(z):
        c = start.with_interior(z.reshape(shape))
        J, cara, grad = action_and_gradient(m, c, u0)
        return J, grad[1:-1], (c, cara)

    z0 = np.array(start.nodes[1:-1])
    precond = _KineticPreconditioner(m, start.N, start.h)
    return _lbfgs(fg, z0, precond, opts.gtol, opts.max_iter, opts.memory)


def minimize(m: ModelSpec, a: float, b: float, x, y, u0: float, opts: MinimizeOptions | None = None, **kw) -> MinimizeResult:
    """Minimize J over curves from x (at a) to y (at b), starting from the straight line.

    Converged means grad_inf_norm <= gtol and the Herglotz residual <= rtol.
    Exceeding max_iter yields an unconverged result; a failed line search
    away from the tolerance raises LineSearchError.
    """
    from .verify import herglotz_residual

    if opts is None:
        opts = MinimizeOptions(**kw)
    elif kw:
        opts = MinimizeOptions(**{**opts.__dict__, **kw})
    if not b > a:
        raise ValueError("minimize needs b > a")
    levels = [opts.N]
    if opts.multires:
        if opts.N % 4:
            raise ValueError("multires needs N divisible by 4")
        levels = [opts.N // 4, opts.N // 2, opts.N]
    curve = DiscreteCurve.straight(a, b, x, y, levels[0])
    total = 0
    for N in levels:
        if curve.N != N:
            curve = curve.refine(N)
        z, J, g, (curve, cara), it, msg = _minimize_at(m, curve, u0, opts)
        total += it
        ginf = float(np.abs(g).max()) if g.size else 0.0
        if msg and ginf > opts.gtol:
            log.debug("line search failed at N=%d, |g|=%.3e", N, ginf)
            if N == levels[-1]:
                raise LineSearchError(f"{msg} at iteration {total} with |grad|_inf={ginf:.3e}", curve, J, ginf, total)
    res = herglotz_residual(m, curve, cara).sup_residual
    conv = ginf <= opts.gtol and res <= opts.rtol
    if ginf > opts.gtol:
        message = f"max_iter reached (|grad|_inf={ginf:.3e})"
    elif res > opts.rtol:
        message = f"Herglotz residual {res:.3e} above rtol"
    else:
        message = "converged"
    return MinimizeResult(curve, cara, float(cara.u[-1] - cara.u[0]), ginf, total, res, conv, message)
