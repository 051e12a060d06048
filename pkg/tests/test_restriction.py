import numpy as np
import pytest

from cvxrs import catalog
from cvxrs.catalog import quadratic_roots
from cvxrs.conic import solve, solve_feasibility
from cvxrs.errors import DimensionMismatch, InfiniteMargin, NegativeRadius, SingularJacobian
from cvxrs.model import evaluate_f, evaluate_h, jacobian_z, newton_solve, nominal_point
from cvxrs.restriction import (AdditiveNormBall, IntervalParametric, Objective, build_margin, build_nominal,
                               build_robust_additive, build_robust_parametric, compute_K)


def _feasible_at(prog, u):
    sol = solve_feasibility(prog.to_conic(fix_u=u))
    return sol.ok, sol


@pytest.mark.parametrize("name", ["quadratic", "park-poly:a", "netflow", "poly-chain:5,3"])
def test_K_matches_direct_formula(name):
    p = catalog.get(name)
    sys, pt = p.sys, p.pt
    lam = jacobian_z(sys, pt.z0, pt.u0, pt.w0)
    J = sys.M @ lam @ sys.C
    expected = -np.vstack([sys.C, -sys.C]) @ np.linalg.inv(J) @ sys.M
    K, lam2 = compute_K(sys, pt)
    assert np.allclose(K, expected, atol=1e-12)
    assert np.allclose(lam2, lam)


def test_compute_K_rejects_singular_anchor():
    sys = catalog.quadratic().sys
    with pytest.raises(SingularJacobian):
        compute_K(sys, nominal_point(sys, [0.0], [0.0, 0.0]))


def test_quadratic_restriction_is_sound(rng):
    """Every certified u has a root inside the certified box and inside [-2, 2]."""
    p = catalog.quadratic()
    prog = build_nominal(p.sys, p.pt, p.objective, p.u_bounds)
    certified = 0
    for _ in range(300):
        u = rng.uniform(-8, 8, 2)
        ok, sol = _feasible_at(prog, u)
        if not ok:
            continue
        certified += 1
        _, zu, zl, _ = prog.unpack(sol.x)
        roots = [r for r in quadratic_roots(u) if zl[0] - 1e-7 <= r <= zu[0] + 1e-7]
        assert roots and any(-2 - 1e-9 <= r <= 2 + 1e-9 for r in roots)
    assert certified > 30


def test_anchor_point_is_inside(rng):
    p = catalog.park_poly("b")
    prog = build_nominal(p.sys, p.pt, p.objective)
    v = prog.lift(p.pt.u0, p.pt.z0, p.pt.z0)
    assert np.min(prog.slacks(v)) >= -1e-9


def test_count_bound_closed_form():
    p = catalog.quadratic()
    prog = build_nominal(p.sys, p.pt)
    # q = 1, |I| = 1, n = 1, s = 2
    assert prog.count_bound() == 1 * 2 ** 3 + 2 + 2
    assert prog.constraint_count <= prog.count_bound()


def test_dual_norms():
    rows = np.array([[3.0, -4.0], [1.0, 1.0]])
    assert np.allclose(AdditiveNormBall("two").dual_norm(rows), [5.0, np.sqrt(2)])
    assert np.allclose(AdditiveNormBall("inf", support="exact").dual_norm(rows), [7.0, 2.0])
    assert np.allclose(AdditiveNormBall("inf", support="table").dual_norm(rows), [4.0, 1.0])
    with pytest.raises(NegativeRadius):
        AdditiveNormBall("two", -0.1)


def test_robust_zero_radius_equals_nominal(rng):
    p = catalog.park_poly("a")
    nom = build_nominal(p.sys, p.pt, p.objective)
    rob = build_robust_additive(p.sys, p.pt, AdditiveNormBall("two", 0.0), p.objective)
    a, b = solve(nom.to_conic()), solve(rob.to_conic())
    assert a.ok and b.ok and a.objective == pytest.approx(b.objective, abs=1e-7)


def test_robust_objective_monotone_in_radius():
    p = catalog.park_poly("a")
    vals = []
    for g in (0.0, 0.02, 0.05, 0.1):
        prog = build_robust_additive(p.sys, p.pt, AdditiveNormBall("two", g), p.objective)
        sol = solve(prog.to_conic())
        assert sol.ok
        vals.append(sol.objective)
    assert all(b >= a - 1e-8 for a, b in zip(vals, vals[1:]))


def test_robust_certificate_holds_for_sampled_w(rng):
    p = catalog.park_poly("a")
    g = 0.05
    prog = build_robust_additive(p.sys, p.pt, AdditiveNormBall("two", g), p.objective)
    sol = solve(prog.to_conic())
    u, zu, zl, _ = prog.unpack(sol.x)
    for _ in range(200):
        d = rng.standard_normal(2)
        w = g * rng.uniform() * d / np.linalg.norm(d)
        x, ok = newton_solve(p.sys, u, p.pt.x0, w)
        assert ok
        z = p.sys.C @ x
        assert np.all(z <= zu + 1e-7) and np.all(z >= zl - 1e-7)
        assert np.max(evaluate_h(p.sys, x, u, w)) <= 1e-7


def test_parametric_region_shrinks_with_width():
    u = np.array([0.3, 0.3, -0.3, 0.2])
    status = []
    for width in (0.0, 0.1, 0.2):
        p = catalog.netflow(width=width)
        prog = build_robust_parametric(p.sys, p.pt, p.uncertainty, p.objective)
        status.append(_feasible_at(prog, u)[0])
    assert status == [True, True, False]


def test_parametric_certificate_holds_for_sampled_w(rng):
    p = catalog.netflow(width=0.1)
    u = np.array([0.3, 0.3, -0.3, 0.2])
    prog = build_robust_parametric(p.sys, p.pt, p.uncertainty, p.objective)
    ok, sol = _feasible_at(prog, u)
    assert ok
    _, zu, zl, _ = prog.unpack(sol.x)
    lo, hi = np.array(p.uncertainty.lower), np.array(p.uncertainty.upper)
    for _ in range(100):
        w = rng.uniform(lo, hi)
        x, conv = newton_solve(p.sys, u, p.pt.x0, w)
        assert conv and np.linalg.norm(evaluate_f(p.sys, x, u, w)) <= 1e-9
        z = p.sys.C @ x
        assert np.all(z <= zu + 1e-7) and np.all(z >= zl - 1e-7)


def test_interval_validation():
    with pytest.raises(ValueError):
        IntervalParametric((1.0,), (0.0,))
    p = catalog.netflow()
    with pytest.raises(DimensionMismatch):
        build_robust_parametric(p.sys, p.pt, IntervalParametric((0.9,), (1.1,)))


def test_margin_program_errors():
    p = catalog.quadratic()
    with pytest.raises(InfiniteMargin):
        build_margin(p.sys, p.pt)
    q = catalog.park_poly("a")
    with pytest.raises(DimensionMismatch):
        build_margin(q.sys, q.pt, u=np.zeros(2))


def test_margin_matches_bisection_on_radius():
    """The margin program's optimum equals the largest feasible radius found by bisection."""
    from cvxrs.scrs import robustness_margin
    p = catalog.park_poly("a")
    gamma = robustness_margin(p.sys, p.pt)
    lo, hi = 0.0, 2.0
    u_box = (p.pt.u0, p.pt.u0)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        prog = build_robust_additive(p.sys, p.pt, AdditiveNormBall("two", mid), Objective((0.0, 0.0, 0.0)), u_box)
        if solve_feasibility(prog.to_conic()).ok:
            lo = mid
        else:
            hi = mid
    assert gamma == pytest.approx(lo, abs=1e-6)
