"""Explicit a-priori bounds: action/energy envelopes, velocity bound chain, search radius."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import AssumptionConstants


class BoundsError(ValueError):
    pass


@dataclass
class BoundsReport:
    F1: float
    F2: float
    F3: float
    F4: float
    F5: float
    F6: float
    F7: float
    F8: float
    t: float
    R: float
    u: float
    constants: dict
    r_min: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _C(K: float, t: float) -> float:
    """sup over s in (0, t] of (e^{Ks} - 1)/s; the ratio increases in s, so it is the value at s = t."""
    return math.expm1(K * t) / t


def apriori_F1_F2(k: AssumptionConstants, t: float, R: float, u: float) -> tuple[float, float]:
    """Bounds on |u_xi - u|/t and on the action of a minimizer over a window of length t
    whose end points are at most R apart."""
    if not t > 0:
        raise BoundsError("t must be > 0")
    if not R >= 0:
        raise BoundsError("R must be >= 0")
    K, c0 = k.K, k.c0
    F1 = 3 * _C(K, t) * math.exp(K * t) * abs(u) + 2 * math.exp(2 * K * t) * (float(k.thetabar0(R / t)) + c0)
    F2 = 2 * c0 + (1 + K * t) * F1
    return F1, F2


def lip_bound_chain(k: AssumptionConstants, t: float, R: float, u: float) -> BoundsReport:
    """Velocity bound F8 of a minimizer, built up through F3..F7."""
    F1, F2 = apriori_F1_F2(k, t, R, u)
    K = k.K
    vel = R / t  # bound on the essential infimum of the speed
    F3 = 2 * k.c0 + 3 * K * F1 + float(k.thetabar0(2 * vel)) + k.c1
    F4 = F2
    F5 = math.exp(K * t) * (F3 + k.C1 * t + k.C2 * F4)
    F6 = math.exp(K * t) * F5
    F7 = float(k.thetabar0(1.0)) + k.c1 + K * F1
    F8 = float(k.theta0_star(F6 + F7 + 1)) + k.c0 + F7 + K * F1
    vals = [F1, F2, F3, F4, F5, F6, F7, F8]
    if not all(math.isfinite(v) and v >= 0 for v in vals):
        raise BoundsError("bound chain produced a non-finite or negative value")
    return BoundsReport(*vals, t=t, R=R, u=u, constants=k.to_dict())


def search_radius(k: AssumptionConstants, t1: float, t2: float, kappa1: float, kappa2: float, phi_x_abs) -> float:
    """Radius around x containing every minimizing source point of the inf-convolution."""
    if not t2 > t1:
        raise BoundsError("search_radius needs t2 > t1")
    if kappa1 < 0 or kappa2 < 0:
        raise BoundsError("Lipschitz-in-the-large constants must be >= 0")
    T = t2 - t1
    C = 2 * k.K
    inner = k.c0 + float(k.thetabar0(0.0)) + float(k.theta0_star(kappa2 + math.exp(2 * k.K * T)))
    return kappa1 + (inner + np.abs(phi_x_abs) * C) * T


def lip_in_large_from_modulus(delta_of_eps) -> list[tuple[float, float]]:
    """Turn a modulus of continuity (eps, delta(eps)) into constants K_eps = eps/delta."""
    out = []
    for eps, delta in delta_of_eps:
        if not delta > 0:
            raise BoundsError(f"delta must be > 0 (got {delta} for eps={eps})")
        out.append((float(eps), float(eps) / float(delta)))
    return out


def measure_modulus(x, f, eps: float) -> float:
    """Largest delta on the sample grid with |f(a) - f(b)| <= eps whenever |a - b| <= delta.

    x must be a sorted 1-D sample grid.
    """
    x = np.asarray(x, float)
    f = np.asarray(f, float)
    order = np.argsort(x)
    x, f = x[order], f[order]
    gaps = np.abs(x[None, :] - x[:, None])
    jumps = np.abs(f[None, :] - f[:, None])
    bad = gaps[jumps > eps]
    if bad.size == 0:
        return float(x[-1] - x[0])
    smaller = gaps[gaps < bad.min()]
    return float(smaller.max()) if smaller.size else 0.0


def worst_ratio(x, f, delta: float) -> float:
    """max |f(a) - f(b)| / |a - b| over sample pairs at least delta apart."""
    x = np.asarray(x, float)
    f = np.asarray(f, float)
    gaps = np.abs(x[None, :] - x[:, None])
    jumps = np.abs(f[None, :] - f[:, None])
    mask = gaps >= delta - 1e-15
    mask &= gaps > 0
    return float((jumps[mask] / gaps[mask]).max())
