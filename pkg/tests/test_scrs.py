import json
import math

import numpy as np
import pytest

from cvxrs import catalog
from cvxrs.errors import RetrievalFailed
from cvxrs.model import evaluate_f, evaluate_h
from cvxrs.restriction import AdditiveNormBall
from cvxrs.scrs import (Retrieval, ScrsOptions, Termination, kkt_residual, newton_true_set, optimality_gap_bound,
                        retrieve_implicit, run_scrs)


def _park_global_min():
    """Dense search of min u3 = x1^3 - 2 x1 x2 x3 + x2 over the unit sphere."""
    th = np.linspace(0, np.pi, 2001)
    ph = np.linspace(0, 2 * np.pi, 4001)
    T, P = np.meshgrid(th, ph, indexing="ij")
    x1, x2, x3 = np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)
    return float(np.min(x1 ** 3 - 2 * x1 * x2 * x3 + x2))


def _assert_feasible(p, rep, tol=1e-8):
    assert np.linalg.norm(evaluate_f(p.sys, rep.x, rep.u, p.pt.w0)) <= tol
    if p.sys.s:
        assert np.max(evaluate_h(p.sys, rep.x, rep.u, p.pt.w0)) <= tol


@pytest.mark.parametrize("mode", [Retrieval.PICARD, Retrieval.NEWTON])
def test_retrieval_closed_form(mode):
    p = catalog.quadratic()
    x, it = retrieve_implicit(p.sys, [4.0, 1.0], None, [0.0], ScrsOptions(retrieval=mode), anchor=p.pt)
    assert x[0] == pytest.approx(-2 + math.sqrt(3), abs=1e-9)
    assert it >= 1


def test_retrieval_fails_without_root():
    p = catalog.quadratic()
    with pytest.raises(RetrievalFailed):
        retrieve_implicit(p.sys, [0.0, 1.0], None, [0.0], anchor=p.pt)


def test_park_poly_inits_against_global_minimum():
    gmin = _park_global_min()
    objs = {}
    for init in "ab":
        p = catalog.park_poly(init)
        rep = run_scrs(p.sys, p.pt, None, p.objective)
        assert rep.termination is Termination.CONVERGED
        _assert_feasible(p, rep)
        assert rep.objective >= gmin - 1e-6
        objs[init] = rep.objective
    assert objs["b"] == pytest.approx(gmin, abs=1e-5)


def test_park_poly_singular_branch():
    p = catalog.park_poly("c")
    rep = run_scrs(p.sys, p.pt, None, p.objective)
    assert rep.termination is Termination.SINGULAR_AT_LIMIT
    assert rep.message


def test_disk_converges_to_closed_form():
    p = catalog.disk()
    rep = run_scrs(p.sys, p.pt, None, p.objective, u_bounds=p.u_bounds)
    assert rep.termination is Termination.CONVERGED
    assert np.allclose(rep.u, [-math.sqrt(2), -math.sqrt(2)], atol=1e-6)
    assert rep.kkt_residual <= 1e-5


def test_netflow_nominal_and_robust():
    p = catalog.netflow()
    nom = run_scrs(p.sys, p.pt, None, p.objective)
    rob = run_scrs(p.sys, p.pt, p.uncertainty, p.objective)
    assert nom.termination is Termination.CONVERGED and rob.termination is Termination.CONVERGED
    _assert_feasible(p, nom)
    assert rob.objective >= nom.objective - 1e-9
    assert optimality_gap_bound(rob, nom) >= 0
    # the robust point stays feasible at the interval corners
    lo, hi = np.array(p.uncertainty.lower), np.array(p.uncertainty.upper)
    from cvxrs.model import newton_solve
    rng = np.random.default_rng(3)
    for _ in range(50):
        w = np.where(rng.random(lo.size) < 0.5, lo, hi)
        x, ok = newton_solve(p.sys, rob.u, rob.x, w)
        assert ok and np.max(evaluate_h(p.sys, x, rob.u, w)) <= 1e-8


def test_descent_and_report_serialisation():
    p = catalog.park_poly("a")
    rep = run_scrs(p.sys, p.pt, None, p.objective)
    objs = rep.objectives
    assert all(b <= a + 1e-9 for a, b in zip(objs, objs[1:]))
    doc = json.loads(json.dumps(rep.to_dict()))
    assert doc["termination"] == "Converged" and len(doc["iterates"]) == len(objs)


def test_kkt_residual_distinguishes_optimum():
    p = catalog.park_poly("a")
    rep = run_scrs(p.sys, p.pt, None, p.objective)
    from cvxrs.scrs import final_point
    at_opt = kkt_residual(p.sys, final_point(p.sys, rep, p.pt.w0), p.objective)
    at_start = kkt_residual(p.sys, p.pt, p.objective)
    assert at_opt <= 1e-5 < at_start


def test_robust_run_reports_no_kkt():
    p = catalog.park_poly("a")
    rep = run_scrs(p.sys, p.pt, AdditiveNormBall("two", 0.05), p.objective)
    assert rep.termination is Termination.CONVERGED and rep.kkt_residual is None


def test_max_outer_cap():
    p = catalog.park_poly("a")
    rep = run_scrs(p.sys, p.pt, None, p.objective, ScrsOptions(max_outer=2))
    assert rep.termination is Termination.MAX_OUTER and len(rep.iterates) == 3


def test_options_validation():
    with pytest.raises(ValueError):
        ScrsOptions(eps1=0.0)
    with pytest.raises(ValueError):
        ScrsOptions(max_outer=0)


def test_newton_true_set_oracle():
    p = catalog.quadratic()
    oracle = newton_true_set(p.sys, p.pt)
    assert oracle(np.array([0.0, -1.0])) is True          # roots +-1
    assert oracle(np.array([0.0, 1.0])) is None            # no real root
