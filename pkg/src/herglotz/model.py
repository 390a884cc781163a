"""Lagrangian family L(t,x,v,u) = 1/2 v.Av - V(t,x) + g(u) and its Hamiltonian dual."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.stats import qmc

from . import expr as ex


class ModelError(ValueError):
    """Invalid model definition."""


class ModelDomainError(ArithmeticError):
    """Evaluation left the domain where the model is finite/smooth."""


# ----------------------------------------------------------------- pieces


def parse_potential(source: str) -> ex.Node:
    """Expression tree of V(t, x1..xn); raises ExprSyntaxError with a byte offset."""
    return ex.parse(source)


class Potential:
    """Scalar field V(t, x) with cached symbolic partial derivatives."""

    def __init__(self, source: str | ex.Node, dim: int):
        node = ex.parse(source) if isinstance(source, str) else source
        k = ex.max_x_index(node)
        if k > dim:
            raise ModelError(f"potential uses x{k} but the model has dim={dim}")
        self.node = node
        self.dim = dim
        self.source = ex.to_string(node)
        self.d_t = ex.diff(node, "t")
        self.d_x = [ex.diff(node, f"x{i + 1}") for i in range(dim)]
        self.is_zero = node == ex.ZERO or (isinstance(node, ex.Num) and node.value == 0.0)
        self.autonomous = "t" not in ex.variables(node)

    def __repr__(self):
        return f"Potential({self.source!r})"

    def value(self, t, x):
        t, x = np.asarray(t, float), np.asarray(x, float)
        return np.broadcast_to(ex.evaluate(self.node, t, x), np.broadcast_shapes(t.shape, x.shape[:-1])) * 1.0

    def time_derivative(self, t, x):
        t, x = np.asarray(t, float), np.asarray(x, float)
        return np.broadcast_to(ex.evaluate(self.d_t, t, x), np.broadcast_shapes(t.shape, x.shape[:-1])) * 1.0

    def gradient(self, t, x):
        t, x = np.asarray(t, float), np.asarray(x, float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1])
        out = np.empty(shape + (self.dim,))
        for i, d in enumerate(self.d_x):
            out[..., i] = ex.evaluate(d, t, x)
        return out


@dataclass(frozen=True)
class Linear:
    """g(u) = -lam * u."""

    lam: float

    def g(self, u):
        return -self.lam * np.asarray(u, float)

    def dg(self, u):
        return np.full_like(np.asarray(u, float), -self.lam)

    @property
    def sup_abs_dg(self) -> float:
        return abs(self.lam)

    def to_dict(self):
        return {"type": "linear", "lambda": self.lam}


@dataclass(frozen=True)
class Saturating:
    """g(u) = -kappa * tanh(u)."""

    kappa: float

    def g(self, u):
        return -self.kappa * np.tanh(u)

    def dg(self, u):
        c = np.cosh(np.asarray(u, float))
        return -self.kappa / (c * c)

    @property
    def sup_abs_dg(self) -> float:
        return abs(self.kappa)

    def to_dict(self):
        return {"type": "saturating", "kappa": self.kappa}


Discount = Union[Linear, Saturating]


@dataclass(frozen=True)
class AssumptionConstants:
    """Constants of the growth/regularity assumptions, fixed over the time window.

    theta0(r) = theta0_coeff r^2 and thetabar0(r) = thetabar0_coeff r^2 + thetabar0_offset.
    """

    K: float = 0.0
    c0: float = 0.0
    c1: float = 0.0
    theta0_coeff: float = 0.5
    thetabar0_coeff: float = 0.5
    thetabar0_offset: float = 0.0
    C1: float = 0.0
    C2: float = 0.0

    def __post_init__(self):
        for name in ("K", "c0", "c1", "thetabar0_offset", "C1", "C2"):
            if not getattr(self, name) >= 0:
                raise ModelError(f"constant {name} must be >= 0")
        if not (self.theta0_coeff > 0 and self.thetabar0_coeff > 0):
            raise ModelError("theta coefficients must be > 0")

    def theta0(self, r):
        return self.theta0_coeff * np.square(r)

    def thetabar0(self, r):
        return self.thetabar0_coeff * np.square(r) + self.thetabar0_offset

    def theta0_star(self, a):
        """Convex conjugate of theta0: a^2 / (4 theta0_coeff)."""
        return np.square(a) / (4.0 * self.theta0_coeff)

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    dim: int
    kinetic: np.ndarray
    potential: Potential
    discount: Discount
    constants: AssumptionConstants = field(default_factory=AssumptionConstants)

    def __post_init__(self):
        if self.dim < 1:
            raise ModelError("dim must be a positive integer")
        A = np.array(self.kinetic, dtype=float).reshape(self.dim, self.dim)
        if not np.allclose(A, A.T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
            raise ModelError("kinetic matrix must be symmetric")
        eig = np.linalg.eigvalsh(A)
        if not eig[0] > 1e-12 * eig[-1] or eig[-1] <= 0:
            raise ModelError("kinetic matrix must be positive definite")
        A.setflags(write=False)
        object.__setattr__(self, "kinetic", A)
        Ainv = np.linalg.inv(A)
        Ainv.setflags(write=False)
        object.__setattr__(self, "kinetic_inv", Ainv)
        object.__setattr__(self, "eig_min", float(eig[0]))
        object.__setattr__(self, "eig_max", float(eig[-1]))
        if isinstance(self.potential, str):
            object.__setattr__(self, "potential", Potential(self.potential, self.dim))
        elif self.potential.dim != self.dim:
            raise ModelError("potential dimension mismatch")
        k = self.constants
        if self.discount.sup_abs_dg > k.K:
            raise ModelError(f"|g'| can reach {self.discount.sup_abs_dg} > K={k.K}")
        if k.theta0_coeff > 0.5 * self.eig_min * (1 + 1e-12):
            raise ModelError("theta0_coeff must be <= lambda_min(A)/2")
        if k.thetabar0_coeff < 0.5 * self.eig_max * (1 - 1e-12):
            raise ModelError("thetabar0_coeff must be >= lambda_max(A)/2")

    @classmethod
    def create(cls, dim=1, potential="0", kinetic=None, discount=None, constants=None, **const_kw):
        """Build a model; unspecified constants default to the tightest valid envelope."""
        A = np.eye(dim) if kinetic is None else np.asarray(kinetic, float).reshape(dim, dim)
        if discount is None:
            discount = Linear(0.0)
        if constants is None:
            eig = np.linalg.eigvalsh(A)
            base = dict(K=discount.sup_abs_dg, theta0_coeff=0.5 * eig[0], thetabar0_coeff=0.5 * eig[-1])
            base.update(const_kw)
            constants = AssumptionConstants(**base)
        return cls(dim, A, Potential(potential, dim), discount, constants)

    def to_dict(self):
        return {
            "dim": self.dim,
            "kinetic": self.kinetic.tolist(),
            "potential": self.potential.source,
            "discount": self.discount.to_dict(),
            "constants": self.constants.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        dim = int(d.get("dim", 1))
        disc = d.get("discount", {"type": "linear", "lambda": 0.0})
        kind = disc.get("type", "linear")
        if kind == "linear":
            discount = Linear(float(disc.get("lambda", 0.0)))
        elif kind == "saturating":
            discount = Saturating(float(disc["kappa"]))
        else:
            raise ModelError(f"unknown discount type {kind!r}")
        consts = d.get("constants") or {}
        unknown = set(consts) - set(AssumptionConstants.__dataclass_fields__)
        if unknown:
            raise ModelError(f"unknown constants {sorted(unknown)}")
        # missing constants fall back to the tightest valid values
        return cls.create(dim, d.get("potential", "0"), d.get("kinetic"), discount, **{k: float(v) for k, v in consts.items()})

    # ---- batched primitives used by the solvers (no finiteness checks)

    def kinetic_energy(self, v):
        v = np.asarray(v, float)
        return 0.5 * np.einsum("...i,ij,...j->...", v, self.kinetic, v)

    def lagrangian(self, t, x, v, u):
        return self.kinetic_energy(v) - self.potential.value(t, x) + self.discount.g(u)

    def momentum(self, v):
        return np.asarray(v, float) @ self.kinetic

    def velocity(self, p):
        return np.asarray(p, float) @ self.kinetic_inv


def _finite(value, what: str):
    if not np.all(np.isfinite(value)):
        raise ModelDomainError(f"{what} is not finite")
    return value


def _out(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def _check_dims(m: ModelSpec, *vecs):
    for v in vecs:
        if np.shape(v)[-1:] != (m.dim,):
            raise ValueError(f"expected vectors of length {m.dim}, got shape {np.shape(v)}")


def eval_L(m: ModelSpec, t, x, v, u):
    """L(t,x,v,u) = 1/2 v.Av - V(t,x) + g(u)."""
    x, v = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(v, float))
    _check_dims(m, x, v)
    return _out(_finite(m.lagrangian(t, x, v, u), "L"))


def eval_derivs(m: ModelSpec, t, x, v, u):
    """Return (L_t, L_x, L_v, L_u)."""
    x, v = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(v, float))
    _check_dims(m, x, v)
    L_t = -m.potential.time_derivative(t, x)
    L_x = -m.potential.gradient(t, x)
    L_v = m.momentum(v)
    L_u = m.discount.dg(u)
    for val, name in ((L_t, "L_t"), (L_x, "L_x"), (L_u, "L_u")):
        _finite(val, name)
    return _out(L_t), _out(L_x), _out(L_v), _out(L_u)


def legendre(m: ModelSpec, t, x, p, u):
    """Closed-form Legendre transform: returns (H, v_star) with v_star = A^{-1} p."""
    x, p = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(p, float))
    _check_dims(m, x, p)
    if m.eig_min <= 0:  # pragma: no cover - excluded at construction
        raise ModelError("singular kinetic matrix")
    v_star = m.velocity(p)
    H = 0.5 * np.einsum("...i,...i->...", p, v_star) + m.potential.value(t, x) - m.discount.g(u)
    return _out(_finite(H, "H")), _out(v_star)


def hamiltonian_derivs(m: ModelSpec, t, x, p, u):
    """Return (H_t, H_x, H_p, H_u)."""
    x, p = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(p, float))
    _check_dims(m, x, p)
    H_t = m.potential.time_derivative(t, x)
    H_x = m.potential.gradient(t, x)
    H_p = m.velocity(p)
    H_u = -m.discount.dg(u)
    for val, name in ((H_t, "H_t"), (H_x, "H_x"), (H_u, "H_u")):
        _finite(val, name)
    return _out(H_t), _out(H_x), _out(H_p), _out(H_u)


# -------------------------------------------------------------------- audit


@dataclass
class AuditBox:
    t_range: tuple[float, float]
    x_radius: float
    v_radius: float
    u_radius: float

    def to_dict(self):
        return {"t_range": list(self.t_range), "x_radius": self.x_radius,
                "v_radius": self.v_radius, "u_radius": self.u_radius}


@dataclass
class AuditReport:
    """Worst-case margins (>= 0 means satisfied) over sampled points of a box.

    Only a statement about the box: spatial and velocity radii are per-coordinate half-widths.
    """

    margins: dict
    worst_points: dict
    box: AuditBox
    samples: int
    box_restricted: bool = True

    tol: float = 1e-10  # absorbs round-off in margins that are exactly zero analytically

    @property
    def passed(self) -> bool:
        return all(v >= -self.tol for v in self.margins.values())

    def to_dict(self):
        return {
            "passed": self.passed,
            "box_restricted": self.box_restricted,
            "samples": self.samples,
            "box": self.box.to_dict(),
            "margins": dict(self.margins),
            "worst_points": self.worst_points,
        }


def _audit_points(n: int, box: AuditBox, samples: int):
    d = 2 * n + 2
    # corners/centres of every coordinate, then a Halton cloud
    levels = np.array([-1.0, 0.0, 1.0])
    if 3 ** (2 * n + 1) * 2 <= 20000:
        grids = np.meshgrid(*([np.array([0.0, 1.0])] + [levels] * (2 * n + 1)), indexing="ij")
        structured = np.stack([g.ravel() for g in grids], axis=-1)
        structured[:, 1:] = (structured[:, 1:] + 1) / 2
    else:
        structured = np.zeros((0, d))
    cloud = qmc.Halton(d, scramble=False).random(samples + 1)[1:]
    unit = np.vstack([structured, cloud])
    t0, t1 = box.t_range
    t = t0 + (t1 - t0) * unit[:, 0]
    x = box.x_radius * (2 * unit[:, 1:1 + n] - 1)
    v = box.v_radius * (2 * unit[:, 1 + n:1 + 2 * n] - 1)
    u = box.u_radius * (2 * unit[:, -1] - 1)
    return t, x, v, u


def audit_assumptions(m: ModelSpec, box: AuditBox | dict, samples: int = 1024) -> AuditReport:
    """Sample the box and report the worst margin of each assumption.

    L1: lambda_min(A) (exact).  L2: thetabar0(|v|)+c1 >= L(t,x,v,0) >= theta0(|v|)-c0.
    L3: |L_u| <= K.  L4: |L_t| <= C1 + C2 L.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if isinstance(box, dict):
        box = AuditBox(tuple(box["t_range"]), float(box["x_radius"]), float(box["v_radius"]), float(box["u_radius"]))
    k = m.constants
    t, x, v, u = _audit_points(m.dim, box, samples)
    speed = np.linalg.norm(v, axis=-1)
    L0 = m.lagrangian(t, x, v, np.zeros_like(u))
    L = m.lagrangian(t, x, v, u)
    L_t = -m.potential.time_derivative(t, x)
    L_u = m.discount.dg(u)
    checks = {
        "L2_upper": k.thetabar0(speed) + k.c1 - L0,
        "L2_lower": L0 - (k.theta0(speed) - k.c0),
        "L3": k.K - np.abs(L_u),
        "L4": k.C1 + k.C2 * L - np.abs(L_t),
    }
    margins = {"L1": m.eig_min}
    worst = {"L1": {}}
    for name, vals in checks.items():
        vals = np.where(np.isfinite(vals), vals, -np.inf)
        i = int(np.argmin(vals))
        margins[name] = float(vals[i])
        worst[name] = {"t": float(t[i]), "x": x[i].tolist(), "v": v[i].tolist(), "u": float(u[i])}
    return AuditReport(margins, worst, box, len(t))
