"""Sequential convex restriction: solve, retrieve, re-anchor, repeat.

Each outer iteration builds the restriction around the current point, solves
it for the next explicit variable ``u``, recovers the implicit variable by the
fixed-point iteration the restriction certifies, and re-anchors there.  Every
accepted iterate is feasible; the objective never increases.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConvexProgram, QuadConstraint, Solution, SolverOptions, Status, solve, solve_feasibility
from .errors import InfiniteMargin, RetrievalFailed, SingularJacobian, ValidationError
from .model import (DecomposedSystem, NominalPoint, evaluate_f, evaluate_h, jacobian_u, jacobian_z,
                    newton_solve, nominal_point, validate)
from .restriction import (AdditiveNormBall, IntervalParametric, NoUncertainty, Objective, RestrictionProgram,
                          UncertaintyModel, build_margin, build_nominal, build_robust_additive,
                          build_robust_parametric, jacobian_blocks)


# a failure at an anchor whose equality Jacobian is this ill-conditioned is
# attributed to the singular boundary rather than to the solver
NEAR_SINGULAR = 1e5

# subproblem objective increases up to this size are attributed to solver tolerance
OBJECTIVE_NOISE = 1e-9


class Retrieval(str, enum.Enum):
    PICARD = "picard"
    NEWTON = "newton"


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_OUTER = "MaxOuter"
    SUBPROBLEM_FAILED = "SubproblemFailed"
    RETRIEVAL_FAILED = "RetrievalFailed"
    SINGULAR_AT_LIMIT = "SingularAtLimit"


@dataclass(frozen=True)
class ScrsOptions:
    eps1: float = 1e-6          # step tolerance on ||u^{k+1} - u^k||
    eps2: float = 1e-8          # objective-change tolerance
    eps3: float = 1e-9          # retrieval residual tolerance
    max_outer: int = 100
    max_picard: int = 500
    retrieval: Retrieval = Retrieval.PICARD
    max_halvings: int = 5
    # subproblems are solved tighter than the solver default: near a local optimum the
    # per-iteration decrease falls below 1e-8 long before the step does
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(feas_tol=1e-10, opt_tol=1e-11))

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0 and self.eps3 > 0):
            raise ValueError("termination tolerances must be positive")
        if self.max_outer < 1 or self.max_picard < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass(frozen=True, eq=False)
class Iterate:
    u: np.ndarray
    x: np.ndarray
    objective: float
    status: str
    retrieval_iterations: int
    step: float
    kkt: float | None = None


@dataclass(eq=False)
class SolveReport:
    iterates: list[Iterate]
    termination: Termination
    kkt_residual: float | None
    margin: float | None = None
    gap_bound: float | None = None
    message: str = ""
    # anchor of the restriction that certified the final point
    anchor: NominalPoint | None = None

    @property
    def u(self) -> np.ndarray:
        return self.iterates[-1].u

    @property
    def x(self) -> np.ndarray:
        return self.iterates[-1].x

    @property
    def objective(self) -> float:
        return self.iterates[-1].objective

    @property
    def objectives(self) -> list[float]:
        return [it.objective for it in self.iterates]

    def to_dict(self) -> dict:
        return {
            "termination": self.termination.value,
            "kkt_residual": self.kkt_residual,
            "margin": self.margin,
            "gap_bound": self.gap_bound,
            "message": self.message,
            "objective": self.objective,
            "u": self.u.tolist(),
            "x": self.x.tolist(),
            "iterates": [
                {"iter": k, "u": it.u.tolist(), "x": it.x.tolist(), "objective": it.objective,
                 "status": it.status, "retrieval_iterations": it.retrieval_iterations, "step": it.step,
                 "kkt": it.kkt}
                for k, it in enumerate(self.iterates)
            ],
        }


# ---------------------------------------------------------------------------
# implicit-variable retrieval


def _project_into_box(sys: DecomposedSystem, x, z_lo, z_hi) -> np.ndarray:
    """Closest ``x`` (Euclidean) with ``z_lo <= Cx <= z_hi``."""
    x = np.asarray(x, dtype=float)
    if np.array_equal(sys.C, np.eye(sys.n)):
        return np.clip(x, z_lo, z_hi)
    z = sys.C @ x
    if np.all(z >= z_lo) and np.all(z <= z_hi):
        return x.copy()
    n = sys.n
    cons = []
    for j in range(sys.q):
        cons.append(QuadConstraint(np.r_[sys.C[j], 0.0], -float(z_hi[j])))
        cons.append(QuadConstraint(np.r_[-sys.C[j], 0.0], float(z_lo[j])))
    P = np.zeros((n + 1, n + 1))
    P[:n, :n] = 2.0 * np.eye(n)
    cons.append(QuadConstraint(np.r_[-2.0 * x, -1.0], float(x @ x), P))
    c = np.zeros(n + 1)
    c[-1] = 1.0
    sol = solve(ConvexProgram(c, cons, np.full(n + 1, -np.inf), np.full(n + 1, np.inf)))
    return sol.x[:n] if sol.ok else x.copy()


def _residual(sys, x, u, w) -> float:
    f = evaluate_f(sys, x, u, w)
    return float(np.linalg.norm(f)) if np.all(np.isfinite(f)) else math.inf


def retrieve_implicit(sys: DecomposedSystem, u, w, x_init, opts: ScrsOptions | None = None, *,
                      anchor: NominalPoint | None = None, box=None, history: list | None = None
                      ) -> tuple[np.ndarray, int]:
    """Solve ``f(x, u, w) = 0`` for ``x`` starting from ``x_init``.

    Picard mode iterates ``x <- x - (M Lam C)^{-1} f(x, u, w)`` with ``Lam`` frozen
    at ``anchor`` (default: the start point); Newton mode refreshes the Jacobian
    every step.  ``box = (z_lo, z_hi)`` projects the start into the certified
    box first.  Every iterate is appended to ``history`` when given.
    A diverging Picard run falls back to Newton once before failing.
    """
    opts = opts or ScrsOptions()
    u = np.asarray(u, dtype=float)
    w = sys._w(w)
    x = np.asarray(x_init, dtype=float).copy()
    if box is not None:
        x = _project_into_box(sys, x, np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float))
    if history is not None:
        history.append(x.copy())
    r0 = _residual(sys, x, u, w)
    if r0 <= opts.eps3:
        return x, 0
    if opts.retrieval is Retrieval.NEWTON:
        return _newton(sys, u, w, x, opts, history)
    if anchor is None:
        J = sys.M @ jacobian_z(sys, sys.C @ x, u, w) @ sys.C
    else:
        J = jacobian_blocks(sys, anchor)[1]
    try:
        lu = np.linalg.inv(J)
    except np.linalg.LinAlgError as exc:
        raise RetrievalFailed("fixed-point Jacobian is singular") from exc
    limit = 10.0 * max(r0, 1e-6)
    r = r0
    for it in range(1, opts.max_picard + 1):
        x = x - lu @ evaluate_f(sys, x, u, w)
        if history is not None:
            history.append(x.copy())
        r = _residual(sys, x, u, w)
        if r <= opts.eps3:
            return x, it
        if not r <= limit:
            break
    try:
        x2, it2 = _newton(sys, u, w, np.asarray(x_init, dtype=float), opts, None)
    except RetrievalFailed:
        raise RetrievalFailed("fixed-point iteration did not converge", it, r) from None
    return x2, it + it2


def _newton(sys, u, w, x, opts: ScrsOptions, history) -> tuple[np.ndarray, int]:
    x = x.copy()
    r = _residual(sys, x, u, w)
    for it in range(1, opts.max_picard + 1):
        J = sys.M @ jacobian_z(sys, sys.C @ x, u, w) @ sys.C
        try:
            x = x - np.linalg.solve(J, evaluate_f(sys, x, u, w))
        except np.linalg.LinAlgError:
            break
        if history is not None:
            history.append(x.copy())
        r = _residual(sys, x, u, w)
        if r <= opts.eps3:
            return x, it
        if not math.isfinite(r):
            break
    raise RetrievalFailed("Newton iteration did not converge", opts.max_picard, r)


# ---------------------------------------------------------------------------
# subproblems


def build_subproblem(sys: DecomposedSystem, pt: NominalPoint, unc: UncertaintyModel, objective: Objective,
                     u_bounds=None) -> RestrictionProgram:
    if isinstance(unc, NoUncertainty):
        return build_nominal(sys, pt, objective, u_bounds)
    if isinstance(unc, AdditiveNormBall):
        if unc.radius is None:
            raise ValueError("optimisation needs a fixed uncertainty radius")
        return build_robust_additive(sys, pt, unc, objective, u_bounds)
    if isinstance(unc, IntervalParametric):
        return build_robust_parametric(sys, pt, unc, objective, u_bounds)
    raise TypeError(f"unknown uncertainty model {unc!r}")


def kkt_from_duals(sys: DecomposedSystem, pt: NominalPoint, prog: RestrictionProgram, sol: Solution,
                   objective: Objective, u_bounds=None, bound_tol: float = 1e-7) -> float:
    """KKT residual of the original problem at ``pt`` with multipliers from the subproblem at ``pt``.

    The row multipliers ``mu`` (box rows) and ``lam`` (inequality rows) give the
    equality multipliers ``nu = J^{-T} C^T (mu_l - mu_u)``; the residual is the max
    of the stationarity norms in ``x`` and ``u``, complementary slackness, dual
    infeasibility and primal infeasibility.  Stationarity in ``u`` is projected on
    active explicit-variable bounds.
    """
    mu, lam = prog.row_duals(sol.duals)
    q = sys.q
    _, J, _ = jacobian_blocks(sys, pt)
    Lz = jacobian_z(sys, pt.z0, pt.u0, pt.w0)
    Lu = jacobian_u(sys, pt.z0, pt.u0, pt.w0)
    nu = np.linalg.solve(J.T, sys.C.T @ (mu[q:] - mu[:q]))
    g_u = np.asarray(objective.c, dtype=float) + (sys.M @ Lu).T @ nu
    g_x = J.T @ nu
    if sys.s:
        g_u = g_u + (sys.L @ Lu).T @ lam
        g_x = g_x + (sys.L @ Lz @ sys.C).T @ lam
    if u_bounds is not None:
        lo, hi = np.asarray(u_bounds[0], dtype=float), np.asarray(u_bounds[1], dtype=float)
        at_lo = pt.u0 <= lo + bound_tol
        at_hi = pt.u0 >= hi - bound_tol
        g_u = np.where(at_lo & ~at_hi, np.minimum(g_u, 0.0), g_u)
        g_u = np.where(at_hi & ~at_lo, np.maximum(g_u, 0.0), g_u)
        g_u = np.where(at_lo & at_hi, 0.0, g_u)
    h = evaluate_h(sys, pt.x0, pt.u0, pt.w0)
    parts = [float(np.linalg.norm(g_u)), float(np.linalg.norm(g_x)), pt.eq_residual]
    if sys.s:
        parts += [float(np.max(np.abs(lam * h))), float(np.max(np.maximum(-lam, 0.0))),
                  float(np.max(np.maximum(h, 0.0)))]
    return max(parts)


def kkt_residual(sys: DecomposedSystem, pt: NominalPoint, objective: Objective, u_bounds=None,
                 opts: SolverOptions | None = None) -> float:
    """Build and solve the nominal subproblem anchored at ``pt`` and score its KKT residual.

    The default solver options are the tight subproblem tolerances; the duals
    must be accurate well below the residual being measured.
    """
    prog = build_nominal(sys, pt, objective, u_bounds)
    sol = solve(prog.to_conic(), opts or ScrsOptions().solver)
    if not sol.ok:
        return math.inf
    return kkt_from_duals(sys, pt, prog, sol, objective, u_bounds)


# ---------------------------------------------------------------------------
# driver


def _certify(prog: RestrictionProgram, u, opts: ScrsOptions) -> tuple[np.ndarray, np.ndarray] | None:
    sol = solve_feasibility(prog.to_conic(fix_u=u), opts.solver)
    if not sol.ok:
        return None
    _, zu, zl, _ = prog.unpack(sol.x)
    return zl, zu


def _retrieve_step(sys, pt, prog, sol, u_new, opts) -> tuple[np.ndarray, np.ndarray, int]:
    """Retrieve x at ``u_new``; on failure halve the step towards ``pt.u0``, re-certifying each trial."""
    _, zu, zl, _ = prog.unpack(sol.x)
    box = (zl, zu)
    u_try = np.asarray(u_new, dtype=float)
    last: RetrievalFailed | None = None
    for _ in range(opts.max_halvings + 1):
        if box is not None:
            try:
                x, its = retrieve_implicit(sys, u_try, pt.w0, pt.x0, opts, anchor=pt, box=box)
                return u_try, x, its
            except RetrievalFailed as exc:
                last = exc
        u_try = 0.5 * (u_try + pt.u0)
        box = _certify(prog, u_try, opts)
    raise last or RetrievalFailed("no certified step could be retrieved")


def run_scrs(sys: DecomposedSystem, pt: NominalPoint, unc: UncertaintyModel | None = None,
             objective: Objective | None = None, opts: ScrsOptions | None = None, u_bounds=None
             ) -> SolveReport:
    """Minimise ``objective`` over the (robust) feasible set by sequential convex restriction.

    ``pt`` must be feasible with a nonsingular equality Jacobian.  The report's
    ``kkt_residual`` is set for nominal runs only.
    """
    unc = NoUncertainty() if unc is None else unc
    opts = opts or ScrsOptions()
    if objective is None:
        objective = Objective(tuple(np.zeros(sys.m)))
    rep = validate(sys, pt)
    if not rep.rank_ok:
        raise ValidationError("; ".join(rep.messages))
    iterates = [Iterate(np.array(pt.u0), np.array(pt.x0), objective.value(pt.u0), "initial", 0, 0.0)]
    nominal = isinstance(unc, NoUncertainty)
    term = Termination.MAX_OUTER
    msg = ""
    kkt: float | None = None
    certifier = pt
    for _ in range(opts.max_outer):
        try:
            prog = build_subproblem(sys, pt, unc, objective, u_bounds)
        except SingularJacobian as exc:
            term, msg = Termination.SINGULAR_AT_LIMIT, str(exc)
            break
        sol = solve(prog.to_conic(), opts.solver)
        if not sol.ok:
            term, msg = _failure(Termination.SUBPROBLEM_FAILED, f"subproblem status {sol.status.value}", pt)
            break
        if nominal:
            kkt = kkt_from_duals(sys, pt, prog, sol, objective, u_bounds)
            iterates[-1] = _with_kkt(iterates[-1], kkt)
        u_new = prog.unpack(sol.x)[0]
        f_old = iterates[-1].objective
        if objective.value(u_new) > f_old + OBJECTIVE_NOISE:
            if not nominal:
                # the robust restriction around the current point need not contain it
                term = Termination.CONVERGED
                msg = "stalled: the re-anchored restriction admits no descent from the current point"
                break
            # the anchor is feasible for the nominal subproblem, so this is solver inaccuracy
            u_new = np.array(pt.u0)
        try:
            u_new, x_new, its = _retrieve_step(sys, pt, prog, sol, u_new, opts)
        except RetrievalFailed as exc:
            term, msg = _failure(Termination.RETRIEVAL_FAILED, str(exc), pt)
            break
        step = float(np.linalg.norm(u_new - pt.u0))
        f_new = objective.value(u_new)
        iterates.append(Iterate(u_new, x_new, f_new, sol.status.value, its, step))
        certifier = pt
        pt = nominal_point(sys, x_new, u_new, pt.w0)
        if step <= opts.eps1 and abs(f_new - f_old) <= opts.eps2:
            term = Termination.CONVERGED
            break
    if term is Termination.CONVERGED and nominal:
        try:
            kkt = kkt_residual(sys, pt, objective, u_bounds, opts.solver)
        except SingularJacobian:
            kkt = math.inf
        iterates[-1] = _with_kkt(iterates[-1], kkt)
    elif not nominal:
        kkt = None
    return SolveReport(iterates, term, kkt, message=msg, anchor=certifier)


def _failure(term: Termination, msg: str, pt: NominalPoint) -> tuple[Termination, str]:
    if pt.jacobian_condition > NEAR_SINGULAR:
        return Termination.SINGULAR_AT_LIMIT, f"{msg} at near-singular Jacobian (condition {pt.jacobian_condition:.3g})"
    return term, msg


def _with_kkt(it: Iterate, kkt: float) -> Iterate:
    return Iterate(it.u, it.x, it.objective, it.status, it.retrieval_iterations, it.step, kkt)


def final_point(sys: DecomposedSystem, report: SolveReport, w0=None) -> NominalPoint:
    return nominal_point(sys, report.x, report.u, w0)


def robustness_margin(sys: DecomposedSystem, pt: NominalPoint, norm: str = "two", support: str = "exact",
                      opts: SolverOptions | None = None, u=None) -> float:
    """Largest additive-uncertainty radius certified at ``u`` (default ``pt.u0``) by the restriction at ``pt``."""
    prog = build_margin(sys, pt, norm, support, u)
    sol = solve(prog.to_conic(), opts)
    if sol.status is Status.UNBOUNDED:
        raise InfiniteMargin("margin program is unbounded")
    if not sol.ok:
        raise RuntimeError(f"margin program failed with status {sol.status.value}")
    return max(0.0, prog.unpack(sol.x)[3])


def optimality_gap_bound(report_robust: SolveReport, report_nominal: SolveReport) -> float:
    """``f0(u*_robust) - f0(u*_nominal)``.

    This bounds the robust optimality gap only insofar as the nominal run found
    the global nominal optimum; it is a stand-in, not a certificate.
    """
    return report_robust.objective - report_nominal.objective


# ---------------------------------------------------------------------------
# region sampling


@dataclass(frozen=True, eq=False)
class RegionSample:
    axes: tuple[int, int]
    grid_i: np.ndarray
    grid_j: np.ndarray
    in_restriction: np.ndarray     # bool, shape (len(grid_i), len(grid_j))
    in_true_set: np.ndarray        # float: 1, 0 or nan when unknown


def _slice_interval(prog: RestrictionProgram, u_fixed, j: int, opts: SolverOptions) -> tuple[float, float] | None:
    base = prog.to_conic()
    lo, hi = base.lower.copy(), base.upper.copy()
    free = np.isnan(u_fixed)
    lo[: prog.m] = np.where(free, lo[: prog.m], u_fixed)
    hi[: prog.m] = np.where(free, hi[: prog.m], u_fixed)
    out = []
    for sign in (1.0, -1.0):
        c = np.zeros(prog.n_vars)
        c[j] = sign
        sol = solve(ConvexProgram(c, base.constraints, lo, hi), opts)
        if sol.status is Status.INFEASIBLE:
            return None
        if sol.status is Status.UNBOUNDED:
            out.append(-sign * math.inf)
        elif sol.ok:
            out.append(float(sol.x[j]))
        else:
            return None
    return out[0], out[1]


def sample_region(prog: RestrictionProgram, axes: tuple[int, int], window, grid: int,
                  true_set=None, opts: SolverOptions | None = None, margin: float = 1e-9) -> RegionSample:
    """Classify a ``grid x grid`` lattice of the ``axes`` plane through ``u0``.

    The restriction is convex, so each line ``u_i = const`` meets it in an
    interval; its end points come from two solves, and lattice points are
    classified strictly inside it (by ``margin``).  ``true_set(u)`` returns
    True/False, or None when unknown.
    """
    opts = opts or SolverOptions()
    i, j = axes
    gi = np.linspace(window[0], window[1], grid)
    gj = np.linspace(window[2], window[3], grid)
    inside = np.zeros((grid, grid), dtype=bool)
    truth = np.full((grid, grid), np.nan)
    u0 = np.array(prog.pt.u0, dtype=float)
    for a, vi in enumerate(gi):
        fixed = u0.copy()
        fixed[i] = vi
        fixed[j] = np.nan
        iv = _slice_interval(prog, fixed, j, opts)
        if iv is not None:
            inside[a] = (gj >= iv[0] + margin) & (gj <= iv[1] - margin)
        if true_set is not None:
            for b, vj in enumerate(gj):
                u = u0.copy()
                u[i], u[j] = vi, vj
                t = true_set(u)
                truth[a, b] = np.nan if t is None else float(bool(t))
    return RegionSample((i, j), gi, gj, inside, truth)


def newton_true_set(sys: DecomposedSystem, pt: NominalPoint, starts: int = 8, seed: int = 0, scale: float = 2.0):
    """Membership oracle by multistart Newton: True if a feasible root is found, otherwise unknown."""
    rng = np.random.default_rng(seed)
    inits = [np.array(pt.x0)] + [np.array(pt.x0) + scale * rng.standard_normal(sys.n) for _ in range(starts - 1)]

    def oracle(u) -> bool | None:
        for x0 in inits:
            x, ok = newton_solve(sys, u, x0, pt.w0)
            if ok and (sys.s == 0 or np.all(evaluate_h(sys, x, u, pt.w0) <= 1e-9)):
                return True
        return None

    return oracle


__all__ = [
    "Iterate", "RegionSample", "Retrieval", "ScrsOptions", "SolveReport", "Termination", "build_subproblem",
    "final_point", "kkt_from_duals", "kkt_residual", "newton_true_set", "optimality_gap_bound",
    "retrieve_implicit", "robustness_margin", "run_scrs", "sample_region",
]
