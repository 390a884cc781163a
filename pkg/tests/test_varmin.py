from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from herglotz.model import Linear, ModelSpec, Saturating
from herglotz.ode import DiscreteCurve
from herglotz.varmin import (MinimizeOptions, action, action_and_gradient, el_integral_gradient, gradient,
                             minimize)

from oracles import discounted_profile, discounted_value, discounted_value_by_ode

FREE = ModelSpec.create(1)
DISC = ModelSpec.create(1, discount=Linear(1.0))


def test_oracle_values_agree():
    # closed form vs direct integration along the extremal
    assert discounted_value() == pytest.approx(0.2909883534, abs=1e-10)
    assert discounted_value_by_ode() == pytest.approx(discounted_value(), abs=1e-11)
    assert discounted_value_by_ode(u0=1.0) == pytest.approx(math.exp(-1) - 1 + discounted_value(), abs=1e-11)


def test_action_examples():
    J, cara = action(FREE, DiscreteCurve.straight(0, 1, 0, 1, 10), 0.0)
    assert J == pytest.approx(0.5, abs=1e-14)
    assert J == cara.u[-1] - cara.u[0]
    J, _ = action(DISC, DiscreteCurve.straight(0, 1, 0, 0, 100), 1.0)
    assert J == pytest.approx(math.exp(-1) - 1, abs=1e-8)


def test_gradient_zero_on_free_line():
    assert np.abs(gradient(FREE, DiscreteCurve.straight(0, 1, 0, 1, 16), 0.0)).max() < 1e-13


def test_gradient_matches_fd_discounted_line():
    c = DiscreteCurve.straight(0, 1, 0, 1, 32)
    g = gradient(DISC, c, 0.0)
    assert np.abs(g).max() > 1e-3
    fd = np.empty_like(g)
    for i in range(31):
        e = np.zeros((31, 1))
        e[i] = 1e-6
        fd[i] = (action(DISC, c.with_interior(c.nodes[1:-1] + e), 0)[0]
                 - action(DISC, c.with_interior(c.nodes[1:-1] - e), 0)[0]) / 2e-6
    assert np.abs(g - fd).max() <= 1e-4 * np.abs(fd).max()


def test_gradient_small_on_exponential_profile():
    norms = []
    for N in (32, 64, 128):
        c = DiscreteCurve.from_function(0, 1, discounted_profile, N)
        norms.append(np.abs(gradient(DISC, c, 0.0) / c.h).max())
    assert norms[0] / norms[1] > 3.5 and norms[1] / norms[2] > 3.5


def test_integral_formula_converges_to_exact_gradient():
    m = ModelSpec.create(1, potential="x1*sin(t)", discount=Linear(1.0))
    errs = []
    for N in (32, 64, 128):
        c = DiscreteCurve.from_function(0, 1, lambda s: s + 0.3 * math.sin(3 * s), N)
        g = gradient(m, c, 0.2)
        errs.append(np.abs(el_integral_gradient(m, c, 0.2) - g).max() / np.abs(g).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.01


def test_minimize_free():
    r = minimize(FREE, 0, 1, 0, 1, 0.0)
    assert r.converged
    assert r.J == pytest.approx(0.5, abs=1e-8)
    assert np.abs(r.curve.nodes[:, 0] - r.curve.times).max() < 1e-8


def test_minimize_discounted():
    r = minimize(DISC, 0, 1, 0, 1, 0.0, N=128)
    assert r.converged
    assert r.J == pytest.approx(discounted_value(), abs=1e-5)
    assert np.abs(r.curve.nodes[:, 0] - discounted_profile(r.curve.times)).max() < 1e-4
    assert r.J == r.cara.u[-1] - r.cara.u[0]
    assert r.grad_inf_norm <= MinimizeOptions().gtol


def test_minimize_rest_curve():
    r = minimize(DISC, 0, 2, 0.5, 0.5, 0.0)
    assert r.J == pytest.approx(0.0, abs=1e-12)


def test_multires_same_answer():
    m = ModelSpec.create(1, potential="0.5*x1^2*(1+t)", discount=Saturating(0.5))
    a = minimize(m, 0, 1, 0, 1, 0.2, N=128)
    b = minimize(m, 0, 1, 0, 1, 0.2, N=128, multires=True)
    assert a.J == pytest.approx(b.J, abs=1e-10)
    with pytest.raises(ValueError):
        minimize(m, 0, 1, 0, 1, 0.2, N=126, multires=True)


def test_max_iter_gives_unconverged_result():
    m = ModelSpec.create(2, potential="cos(x1)*x2", discount=Linear(0.5))
    r = minimize(m, 0, 1, [0, 0], [1, 2], 0.0, N=64, max_iter=2)
    assert not r.converged and "max_iter" in r.message


def test_minimality_certificate():
    m = ModelSpec.create(1, potential="x1*sin(t)", discount=Linear(1.0))
    r = minimize(m, 0, 1, 0, 1, 0.3, N=64)
    rng = np.random.default_rng(3)
    for _ in range(50):
        pert = r.curve.with_interior(r.curve.nodes[1:-1] + 1e-3 * rng.standard_normal((63, 1)))
        assert action(m, pert, 0.3)[0] >= r.J - 1e-8


def test_grid_convergence_discounted():
    J = [minimize(DISC, 0, 1, 0, 1, 0.0, N=N).J for N in (16, 32, 64, 128)]
    d = np.abs(np.diff(J))
    assert np.all(d[:-1] / d[1:] >= 3.5)


def test_full_gradient_endpoint_consistency():
    # dJ/dx at the start equals minus the weighted momentum there
    c = DiscreteCurve.straight(0, 1, 0, 1, 64)
    _, _, g = action_and_gradient(FREE, c, 0.0)
    assert g[0, 0] == pytest.approx(-1.0) and g[-1, 0] == pytest.approx(1.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.5, 0.5), st.integers(1, 4), st.floats(-0.3, 0.3))
def test_minimizer_beats_perturbations(x, y, u0, k, amp):
    m = ModelSpec.create(1, potential="0.3*sin(x1)*cos(t)", discount=Saturating(0.5))
    r = minimize(m, 0, 1, x, y, u0, N=64)
    s = r.curve.times[1:-1, None]
    bumped = r.curve.with_interior(r.curve.nodes[1:-1] + amp * np.sin(k * np.pi * s))
    assert r.J <= action(m, bumped, u0)[0] + 1e-10
