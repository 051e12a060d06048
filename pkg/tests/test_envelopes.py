import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvxrs.envelopes import (LOGISTIC_CURVATURE, all_vertices, box_bound, candidate_vertices, make_envelope,
                             make_uncertain_envelope, residual_envelope, vertex_point)
from cvxrs.errors import EmptyBox, UnsupportedUncertaintyForm
from cvxrs.model import Affine, BasisFunction, Kind

Z = Affine.zvar
coord = st.floats(-5, 5, allow_nan=False)
NONLINEAR = [Kind.BILINEAR, Kind.SQUARE, Kind.SIN, Kind.COS, Kind.LOGISTIC]


def _basis(kind, rho=(1.0, 1.0)):
    if kind is Kind.BILINEAR:
        return BasisFunction(kind, (Z(0), Z(1)), rho=rho)
    return BasisFunction(kind, (Affine.of({0: 1.0, 1: -0.5}),))


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(NONLINEAR), coord, coord, coord, coord,
       st.floats(0.2, 5), st.floats(0.2, 5))
def test_sandwich_property(kind, a0, b0, a, b, r1, r2):
    basis = _basis(kind, (r1, r2))
    z0, z = np.array([a0, b0]), np.array([a, b])
    env = make_envelope(basis, z0, np.zeros(0))
    v = basis.value(z, np.zeros(0))
    tol = 1e-12 * max(1.0, abs(v))
    assert env.under_value(z, []) <= v + tol
    assert env.over_value(z, []) >= v - tol


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(NONLINEAR), coord, coord)
def test_tight_value_and_gradient_at_anchor(kind, a0, b0):
    basis = _basis(kind)
    z0 = np.array([a0, b0])
    env = make_envelope(basis, z0, np.zeros(0))
    g = basis.gradient(z0, np.zeros(0))[0]
    for piece in (env.over[0], env.under[0]):
        assert piece.value(z0) == pytest.approx(basis.value(z0, []), abs=1e-12)
        assert np.allclose(piece.gradient(z0), g, atol=1e-12)


@pytest.mark.parametrize("kind", NONLINEAR)
def test_curvature_signs(kind, rng):
    env = make_envelope(_basis(kind), rng.uniform(-2, 2, 2), np.zeros(0))
    assert env.over[0].kappa >= 0 and env.under[0].kappa <= 0


def test_square_under_is_tangent():
    env = make_envelope(BasisFunction(Kind.SQUARE, (Z(0),)), np.array([1.5]), np.zeros(0))
    z = np.array([-0.7])
    assert env.over_value(z, []) == pytest.approx(0.49)
    assert env.under_value(z, []) == pytest.approx(2.25 + 3.0 * (-2.2))


def test_logistic_curvature_constant():
    t = np.linspace(-10, 10, 200_001)
    s = 1 / (1 + np.exp(-t))
    assert np.max(np.abs(s * (1 - s) * (1 - 2 * s))) == pytest.approx(LOGISTIC_CURVATURE, abs=1e-10)


def test_uncertain_envelope_encloses_interval(rng):
    basis = BasisFunction(Kind.SIN, (Z(0),), w_index=0)
    env = make_uncertain_envelope(basis, np.array([0.3]), np.zeros(0), (0.8, 1.2))
    assert not env.tight
    for _ in range(2000):
        z, w = rng.uniform(-3, 3, 1), rng.uniform(0.8, 1.2)
        v = w * math.sin(z[0])
        assert env.under_value(z, []) <= v + 1e-12 <= env.over_value(z, []) + 2e-12
    with pytest.raises(UnsupportedUncertaintyForm):
        make_uncertain_envelope(BasisFunction(Kind.SQUARE, (Z(0),)), np.zeros(1), np.zeros(0), (0.9, 1.1))


def test_residual_envelope_subtracts_linear_term(rng):
    basis = _basis(Kind.BILINEAR)
    z0 = rng.normal(size=2)
    lam = rng.normal(size=2)
    env = residual_envelope(make_envelope(basis, z0, np.zeros(0)), lam)
    raw = make_envelope(basis, z0, np.zeros(0))
    z = rng.normal(size=2)
    assert env.over_value(z, []) == pytest.approx(raw.over_value(z, []) - lam @ z)
    assert env.under_value(z, []) == pytest.approx(raw.under_value(z, []) - lam @ z)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.data())
def test_candidate_vertices_contain_box_maximiser(a, data):
    """Brute force: the best vertex of a.z + (sigma.z)^2 over any box is among the candidates."""
    n = len(a)
    sigma = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n)))
    lo = np.array(data.draw(st.lists(st.floats(-3, 0), min_size=n, max_size=n)))
    hi = lo + np.array(data.draw(st.lists(st.floats(0.01, 3), min_size=n, max_size=n)))
    a = np.array(a)
    f = lambda v: a @ v + (sigma @ v) ** 2
    verts = list(itertools.product((False, True), repeat=n))
    best = max(f(np.where(v, hi, lo)) for v in verts)
    cands = candidate_vertices(a, sigma, True)
    assert len(cands) <= n + 1
    assert max(f(np.where(v, hi, lo)) for v in cands) == pytest.approx(best, abs=1e-12, rel=1e-12)


def test_box_bound_matches_dense_sampling(rng):
    basis = BasisFunction(Kind.BILINEAR, (Affine.of({0: 1.0, 1: 1.0}), Z(2)))
    env = make_envelope(basis, np.array([0.2, -0.1, 0.4]), np.zeros(0))
    lo, hi = np.array([-1.0, -0.5, 0.0]), np.array([0.5, 1.0, 2.0])
    bb = box_bound(env, lo, hi, np.zeros(0))
    pts = rng.uniform(lo, hi, (20000, 3))
    over = max(env.over_value(p, []) for p in pts)
    under = min(env.under_value(p, []) for p in pts)
    assert bb.value_u >= over and bb.value_l <= under
    # vertices attain the bound
    vals = [env.over_value(vertex_point(env, v, lo, hi), []) for v in all_vertices(env)]
    assert bb.value_u == pytest.approx(max(vals), abs=1e-14)


def test_sin_box_bound_value():
    env = make_envelope(BasisFunction(Kind.SIN, (Z(0),)), np.array([0.0]), np.zeros(0))
    bb = box_bound(env, np.array([-1.0]), np.array([1.0]), np.zeros(0))
    # over = z + z^2/2 with curvature bound 1 on [-1, 1]: 1.5; the under side mirrors it
    assert bb.value_u == pytest.approx(1.5)
    assert bb.value_l == pytest.approx(-1.5)


def test_empty_box_rejected():
    env = make_envelope(BasisFunction(Kind.SQUARE, (Z(0),)), np.zeros(1), np.zeros(0))
    with pytest.raises(EmptyBox):
        box_bound(env, np.array([1.0]), np.array([0.0]), np.zeros(0))
