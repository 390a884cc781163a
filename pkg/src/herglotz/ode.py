"""Carathéodory equation u' = L(s, xi(s), xi'(s), u) along piecewise-linear curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Linear, ModelSpec


class DivergedError(ArithmeticError):
    def __init__(self, message: str, interval: int | None = None):
        super().__init__(message)
        self.interval = interval


@dataclass(frozen=True, eq=False)
class DiscreteCurve:
    """Piecewise-linear curve with nodes at s_i = a + i (b - a)/N."""

    a: float
    b: float
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if not self.b > self.a:
            raise ValueError("curve needs b > a")
        if nodes.shape[0] < 2:
            raise ValueError("curve needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("curve nodes must be finite")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def straight(cls, a, b, x, y, N) -> "DiscreteCurve":
        x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
        w = np.linspace(0.0, 1.0, N + 1)[:, None]
        return cls(a, b, (1 - w) * x + w * y)

    @classmethod
    def from_function(cls, a, b, f, N) -> "DiscreteCurve":
        s = np.linspace(a, b, N + 1)
        return cls(a, b, np.array([np.atleast_1d(f(si)) for si in s], dtype=float))

    @property
    def N(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.N

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.N + 1)

    @property
    def velocities(self) -> np.ndarray:
        return np.diff(self.nodes, axis=0) / self.h

    @property
    def mid_times(self) -> np.ndarray:
        return self.a + (np.arange(self.N) + 0.5) * self.h

    @property
    def mid_points(self) -> np.ndarray:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    def with_interior(self, interior: np.ndarray) -> "DiscreteCurve":
        nodes = np.array(self.nodes)
        nodes[1:-1] = np.asarray(interior).reshape(self.N - 1, self.dim)
        return DiscreteCurve(self.a, self.b, nodes)

    def __call__(self, s):
        """Linear interpolation of the curve at times s."""
        s = np.asarray(s, float)
        return np.stack([np.interp(s, self.times, self.nodes[:, j]) for j in range(self.dim)], axis=-1)

    def refine(self, N_new: int) -> "DiscreteCurve":
        return DiscreteCurve(self.a, self.b, self(np.linspace(self.a, self.b, N_new + 1)))

    def split(self, k: int) -> tuple["DiscreteCurve", "DiscreteCurve"]:
        s = self.times[k]
        return DiscreteCurve(self.a, s, self.nodes[: k + 1]), DiscreteCurve(s, self.b, self.nodes[k:])


@dataclass(frozen=True, eq=False)
class CaraSolution:
    u: np.ndarray
    direction: str  # "initial" or "terminal"


def scalar_discount(m: ModelSpec):
    """Plain-float g and g' for the inherently sequential u-recursion."""
    d = m.discount
    if isinstance(d, Linear):
        lam = float(d.lam)
        return (lambda u: -lam * u), (lambda u: -lam)
    kappa = float(d.kappa)

    def dg(u):
        c = math.cosh(u) if abs(u) < 700 else math.inf
        return -kappa / (c * c)

    return (lambda u: -kappa * math.tanh(u)), dg


def stage_values(m: ModelSpec, c: DiscreteCurve):
    """u-independent part of L at the RK4 stage times of every interval.

    Returns (P_start, P_mid, P_end), each of shape (N,).  The velocity on an
    interval is its constant chord slope, also at the interval end points.
    """
    s = c.times
    kin = m.kinetic_energy(c.velocities)
    V_nodes = m.potential.value(s, c.nodes)
    V_mid = m.potential.value(c.mid_times, c.mid_points)
    P = (kin - V_nodes[:-1], kin - V_mid, kin - V_nodes[1:])
    for arr in P:
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise DivergedError(f"Lagrangian not finite on interval {bad}", bad)
    return P


def _forward(m, c, u0, P=None, record=False):
    Ps, Pm, Pe = P if P is not None else stage_values(m, c)
    Ps, Pm, Pe = Ps.tolist(), Pm.tolist(), Pe.tolist()
    g, _ = scalar_discount(m)
    h = c.h
    hh = 0.5 * h
    u = float(u0)
    out = [u]
    stages = [] if record else None
    for i in range(c.N):
        k1 = Ps[i] + g(u)
        z2 = u + hh * k1
        k2 = Pm[i] + g(z2)
        z3 = u + hh * k2
        k3 = Pm[i] + g(z3)
        z4 = u + h * k3
        k4 = Pe[i] + g(z4)
        u = u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not math.isfinite(u):
            raise DivergedError(f"u blew up on interval {i}", i)
        out.append(u)
        if record:
            stages.append((z2, z3, z4))
    return np.array(out), stages


def solve_ivp(m: ModelSpec, c: DiscreteCurve, u0: float) -> CaraSolution:
    """Classical RK4 on the curve's own grid, u[0] = u0."""
    u, _ = _forward(m, c, u0)
    return CaraSolution(u, "initial")


def solve_tvp(m: ModelSpec, c: DiscreteCurve, u_terminal: float) -> CaraSolution:
    """RK4 in reversed time from s = b, u[N] = u_terminal."""
    Ps, Pm, Pe = (p.tolist() for p in stage_values(m, c))
    g, _ = scalar_discount(m)
    h = c.h
    hh = 0.5 * h
    u = float(u_terminal)
    out = [u]
    for i in range(c.N - 1, -1, -1):
        k1 = Pe[i] + g(u)
        k2 = Pm[i] + g(u - hh * k1)
        k3 = Pm[i] + g(u - hh * k2)
        k4 = Ps[i] + g(u - h * k3)
        u = u - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not math.isfinite(u):
            raise DivergedError(f"u blew up on interval {i}", i)
        out.append(u)
    return CaraSolution(np.array(out[::-1]), "terminal")


def node_rates(m: ModelSpec, c: DiscreteCurve, cara: CaraSolution):
    """u' at both ends of every interval: (rate at s_i, rate at s_{i+1}) with the interval's velocity."""
    Ps, _, Pe = stage_values(m, c)
    g = m.discount.g
    return Ps + g(cara.u[:-1]), Pe + g(cara.u[1:])


def midpoint_values(m: ModelSpec, c: DiscreteCurve, cara: CaraSolution) -> np.ndarray:
    """u at interval midpoints by cubic Hermite interpolation of the node values."""
    r0, r1 = node_rates(m, c, cara)
    return 0.5 * (cara.u[:-1] + cara.u[1:]) + c.h / 8.0 * (r0 - r1)
