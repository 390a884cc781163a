"""Implicit-action (Herglotz) variational problems and contact Hamilton-Jacobi evolution."""

from __future__ import annotations

__version__ = "0.1.0"

from .model import AssumptionConstants, Linear, ModelSpec, Saturating, audit_assumptions
from .ode import DiscreteCurve, solve_ivp, solve_tvp
from .varmin import MinimizeOptions, minimize
from .charflow import ShootOptions, fundamental_neg, fundamental_pos, shoot
from .grid import GridFunction
from .evolve import EvolveOptions, evolve_negative, evolve_positive, markov_check

__all__ = [
    "AssumptionConstants", "Linear", "ModelSpec", "Saturating", "audit_assumptions",
    "DiscreteCurve", "solve_ivp", "solve_tvp", "MinimizeOptions", "minimize",
    "ShootOptions", "fundamental_neg", "fundamental_pos", "shoot", "GridFunction",
    "EvolveOptions", "evolve_negative", "evolve_positive", "markov_check",
]
