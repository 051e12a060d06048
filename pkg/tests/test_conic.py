import numpy as np
import pytest
from scipy.optimize import linprog

from cvxrs.conic import ConvexProgram, QuadConstraint, SolverOptions, Status, dump_program, solve, solve_feasibility


def test_lp_matches_linprog(rng):
    for _ in range(20):
        n, k = 4, 6
        A = rng.normal(size=(k, n))
        x0 = rng.uniform(-1, 1, n)
        b = A @ x0 + rng.uniform(0.1, 1.0, k)
        c = rng.normal(size=n)
        ref = linprog(c, A_ub=A, b_ub=b, bounds=[(-3, 3)] * n, method="highs")
        prog = ConvexProgram(c, [QuadConstraint(A[i], -b[i]) for i in range(k)], np.full(n, -3.0), np.full(n, 3.0))
        sol = solve(prog)
        assert sol.ok
        assert sol.objective == pytest.approx(ref.fun, abs=1e-6)
        assert sol.max_violation <= 1e-7


def test_ball_closed_form():
    # min c.v  s.t. |v|^2 <= 4  ->  -2 |c|
    c = np.array([1.0, -2.0, 2.0])
    prog = ConvexProgram(c, [QuadConstraint(np.zeros(3), -2.0, np.eye(3))])
    sol = solve(prog)
    assert sol.ok
    assert sol.objective == pytest.approx(-2 * np.linalg.norm(c), abs=1e-7)
    assert np.allclose(sol.x, -2 * c / np.linalg.norm(c), atol=1e-6)


def test_kkt_conditions_from_duals():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    cons = [QuadConstraint(np.array([1.0, 0.0]), -1.0, P), QuadConstraint(np.array([-1.0, 1.0]), -0.5)]
    c = np.array([-1.0, -1.0])
    sol = solve(ConvexProgram(c, cons), SolverOptions(feas_tol=1e-10, opt_tol=1e-11))
    assert sol.ok
    v, y = sol.x, sol.duals
    assert np.all(y >= -1e-9)
    grad = c + y[0] * (P @ v + cons[0].q) + y[1] * cons[1].q
    assert np.linalg.norm(grad) <= 1e-6
    assert max(abs(y[i] * cons[i].value(v)) for i in range(2)) <= 1e-6


def test_infeasible_detected():
    n = 2
    cons = [QuadConstraint(np.zeros(n), -1.0, 2 * np.eye(n)),          # |v|^2 <= 1
            QuadConstraint(np.array([-1.0, 0.0]), 2.0)]               # v1 >= 2
    assert solve(ConvexProgram(np.ones(n), cons)).status is Status.INFEASIBLE
    assert solve_feasibility(ConvexProgram(np.ones(n), cons)).status is Status.INFEASIBLE


def test_unbounded_detected():
    prog = ConvexProgram(np.array([1.0, 0.0]), [QuadConstraint(np.array([0.0, 1.0]), -1.0)])
    assert solve(prog).status is Status.UNBOUNDED


def test_feasibility_returns_feasible_point():
    cons = [QuadConstraint(np.array([0.0, 0.0]), -1.0, 2 * np.eye(2))]
    sol = solve_feasibility(ConvexProgram(np.array([5.0, 5.0]), cons))
    assert sol.ok and sol.max_violation <= 1e-8


def test_rejects_nonconvex_and_bad_shapes():
    with pytest.raises(ValueError):
        ConvexProgram(np.zeros(2), [QuadConstraint(np.zeros(2), 0.0, -np.eye(2))])
    with pytest.raises(ValueError):
        ConvexProgram(np.zeros(2), [QuadConstraint(np.zeros(3), 0.0)])
    with pytest.raises(ValueError):
        ConvexProgram(np.zeros(2), [], np.ones(2), np.zeros(2))


def test_bounds_only_program():
    prog = ConvexProgram(np.array([1.0, -1.0]), [], np.array([-1.0, -2.0]), np.array([3.0, 4.0]))
    sol = solve(prog)
    assert sol.ok and sol.objective == pytest.approx(-5.0, abs=1e-7)


def test_tolerances_respected():
    c = np.array([1.0, 1.0])
    prog = ConvexProgram(c, [QuadConstraint(np.zeros(2), -0.5, np.eye(2))])
    tight = solve(prog, SolverOptions(feas_tol=1e-11, opt_tol=1e-11))
    assert tight.ok and tight.objective == pytest.approx(-np.sqrt(2), abs=1e-9)


def test_dump_is_deterministic():
    prog = ConvexProgram(np.array([1.0, 2.0]), [QuadConstraint(np.array([1.0, 1.0]), -1.0, tag=("x",))])
    assert dump_program(prog) == dump_program(prog)
    assert isinstance(dump_program(prog), str) and dump_program(prog)
