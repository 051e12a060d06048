"""Convex QCQP solver used for the restriction subproblems.

Problems have a linear objective and constraints of the form
``0.5 v'Pv + q'v + r <= 0`` with ``P`` positive semidefinite, plus variable
bounds (equal bounds pin a variable).  Each quadratic constraint is rewritten
with a factor ``P = F'F`` as the second-order cone row

    || (2 F v, 2t - 1) || <= 2t + 1,    t = -q'v - r,

and the resulting cone program is solved by a primal-dual interior-point
method on the homogeneous self-dual embedding with Nesterov-Todd scaling and
a Mehrotra predictor-corrector.  The embedding yields Farkas-type
certificates for infeasible and unbounded programs.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

PSD_TOL = 1e-10


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(eq=False)
class QuadConstraint:
    """``0.5 v'Pv + q'v + r <= 0``; ``P`` is None for affine constraints."""

    q: np.ndarray
    r: float
    P: np.ndarray | None = None
    tag: tuple = ()

    def value(self, v: np.ndarray) -> float:
        out = float(self.q @ v) + self.r
        if self.P is not None:
            out += 0.5 * float(v @ self.P @ v)
        return out


def _psd_factor(P: np.ndarray, where: str) -> np.ndarray | None:
    """Return F with F'F = P (rows for the nonzero eigenvalues), or None if P = 0."""
    scale = max(1.0, float(np.abs(P).max(initial=0.0)))
    if not np.allclose(P, P.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError(f"{where}: quadratic part is not symmetric")
    ev, V = np.linalg.eigh(0.5 * (P + P.T))
    top = float(np.abs(ev).max(initial=0.0))
    if top == 0.0:
        return None
    if ev[0] < -PSD_TOL * max(1.0, top):
        raise ValueError(f"{where}: quadratic part is not PSD (min eigenvalue {ev[0]:.3g})")
    keep = ev > PSD_TOL * top
    return np.sqrt(ev[keep])[:, None] * V[:, keep].T


@dataclass(eq=False)
class ConvexProgram:
    """minimize ``c'v`` subject to quadratic constraints and ``lower <= v <= upper``."""

    c: np.ndarray
    constraints: list[QuadConstraint]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        if np.any(self.lower > self.upper):
            raise ValueError("a lower bound exceeds its upper bound")
        self._factors = []
        for i, con in enumerate(self.constraints):
            con.q = np.asarray(con.q, dtype=float)
            if con.q.shape != (n,):
                raise ValueError(f"constraint {i} has {con.q.shape} coefficients, expected ({n},)")
            fac = None
            if con.P is not None:
                con.P = np.asarray(con.P, dtype=float)
                if con.P.shape != (n, n):
                    raise ValueError(f"constraint {i} quadratic part has shape {con.P.shape}")
                fac = _psd_factor(con.P, f"constraint {i}")
            self._factors.append(fac)

    @property
    def n(self) -> int:
        return self.c.size

    def values(self, v: np.ndarray) -> np.ndarray:
        return np.array([con.value(v) for con in self.constraints])

    def max_violation(self, v: np.ndarray) -> float:
        viol = float(np.max(self.values(v), initial=0.0))
        return max(viol, float(np.max(self.lower - v, initial=0.0)), float(np.max(v - self.upper, initial=0.0)))


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-8
    max_iter: int = 200


@dataclass(eq=False)
class Solution:
    status: Status
    x: np.ndarray
    objective: float
    duals: np.ndarray
    max_violation: float
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------------------
# cone program:  min c'x  s.t.  Gx + s = h,  Ax = b,  s in R+^l x Q^{k1} x ...


# a stalled solve whose best iterate meets this on residuals and gap counts as optimal
REDUCED_ACCURACY = 1e-6


@dataclass
class _Cone:
    l: int
    soc: list[int]

    @property
    def degree(self) -> int:
        return self.l + len(self.soc)

    def blocks(self):
        off = self.l
        for k in self.soc:
            yield slice(off, off + k)
            off += k

    def identity(self, dim: int) -> np.ndarray:
        e = np.zeros(dim)
        e[: self.l] = 1.0
        for b in self.blocks():
            e[b.start] = 1.0
        return e

    def max_step_to_interior(self, v: np.ndarray) -> float:
        """Smallest alpha with v + alpha e in the cone (may be negative)."""
        out = -math.inf
        if self.l:
            out = float(np.max(-v[: self.l]))
        for b in self.blocks():
            blk = v[b]
            out = max(out, float(np.linalg.norm(blk[1:]) - blk[0]))
        return out

    def jprod(self, u, v):
        out = u * v
        for b in self.blocks():
            out[b.start] = float(u[b] @ v[b])
            out[b.start + 1:b.stop] = u[b.start] * v[b.start + 1:b.stop] + v[b.start] * u[b.start + 1:b.stop]
        return out

    def jdiv(self, lam, d):
        """Solve ``lam o u = d`` for u."""
        out = np.empty_like(d)
        out[: self.l] = d[: self.l] / lam[: self.l]
        for b in self.blocks():
            l0, l1 = lam[b.start], lam[b.start + 1:b.stop]
            d0, d1 = d[b.start], d[b.start + 1:b.stop]
            nl1 = np.linalg.norm(l1)
            det = (l0 - nl1) * (l0 + nl1)
            u0 = (l0 * d0 - l1 @ d1) / det
            out[b.start] = u0
            out[b.start + 1:b.stop] = (d1 - u0 * l1) / l0
        return out

    def step(self, v, dv) -> float:
        """Largest alpha (possibly inf) with v + alpha dv in the cone."""
        amax = math.inf
        if self.l:
            neg = dv[: self.l] < 0
            if np.any(neg):
                amax = float(np.min(-v[: self.l][neg] / dv[: self.l][neg]))
        for b in self.blocks():
            x0, x1 = v[b.start], v[b.start + 1:b.stop]
            d0, d1 = dv[b.start], dv[b.start + 1:b.stop]
            nx1 = np.linalg.norm(x1)
            a = d0 * d0 - d1 @ d1
            bb = x0 * d0 - x1 @ d1
            c = (x0 - nx1) * (x0 + nx1)
            cands = []
            if a == 0.0:
                if bb < 0:
                    cands.append(-c / (2 * bb))
            else:
                disc = bb * bb - a * c
                if disc >= 0:
                    sq = math.sqrt(disc)
                    # stable pair of roots of a t^2 + 2 bb t + c
                    qq = -(bb + math.copysign(sq, bb))
                    roots = [qq / a] + ([c / qq] if qq != 0 else [])
                    cands += [t for t in roots if t > 0 and x0 + t * d0 >= 0]
            if d0 < 0:
                cands.append(-x0 / d0)
            if cands:
                amax = min(amax, min(cands))
        return amax


class _Scaling:
    """Nesterov-Todd scaling: symmetric W with W z = W^{-1} s = lambda."""

    def __init__(self, cone: _Cone, s, z):
        self.cone = cone
        l = cone.l
        self.d = np.sqrt(s[:l] / z[:l])
        self.W, self.Winv = [], []
        lam = np.empty_like(s)
        lam[:l] = np.sqrt(s[:l] * z[:l])
        for b in cone.blocks():
            sb, zb = s[b], z[b]
            ns, nz = np.linalg.norm(sb[1:]), np.linalg.norm(zb[1:])
            sn = math.sqrt(max((sb[0] - ns) * (sb[0] + ns), 1e-300))
            zn = math.sqrt(max((zb[0] - nz) * (zb[0] + nz), 1e-300))
            sbar, zbar = sb / sn, zb / zn
            gam = math.sqrt(max(0.5 * (1.0 + sbar @ zbar), 1e-300))
            J = -np.eye(len(sb))
            J[0, 0] = 1.0
            wbar = (sbar + J @ zbar) / (2.0 * gam)
            beta = math.sqrt(sn / zn)
            v = wbar.copy()
            v[0] += 1.0
            v /= math.sqrt(2.0 * (wbar[0] + 1.0))
            Jv = J @ v
            self.W.append(beta * (2.0 * np.outer(v, v) - J))
            self.Winv.append((2.0 * np.outer(Jv, Jv) - J) / beta)
            lam[b] = self.W[-1] @ zb
        self.lam = lam

    def apply(self, v, inverse=False):
        out = np.empty_like(v)
        l = self.cone.l
        d = self.d if v.ndim == 1 else self.d[:, None]
        out[:l] = v[:l] / d if inverse else v[:l] * d
        for b, Wb in zip(self.cone.blocks(), self.Winv if inverse else self.W):
            out[b] = Wb @ v[b]
        return out


class _KKT:
    """Solves ``[0 A' G'; A 0 0; G 0 -W^2] [x; y; z] = [rx; ry; rz]``.

    Works on the augmented system in ``(x, y, W z)`` rather than normal
    equations, so the condition number is not squared near the boundary.
    """

    def __init__(self, G, A, scaling: _Scaling):
        self.G, self.A, self.sc = G, A, scaling
        n, me = G.shape[1], A.shape[0]
        self.Gs = scaling.apply(G, inverse=True)
        mG = self.Gs.shape[0]
        N = n + me + mG
        K = np.zeros((N, N))
        K[:n, n:n + me] = A.T
        K[:n, n + me:] = self.Gs.T
        K[n:n + me, :n] = A
        K[n + me:, :n] = self.Gs
        K[n + me:, n + me:] = -np.eye(mG)
        gmax = float(np.max(np.abs(self.Gs), initial=0.0))
        reg = 1e-14 * (1.0 + gmax * gmax)
        if not math.isfinite(reg):
            raise ValueError("scaling overflow")
        K[:n, :n] += reg * np.eye(n)
        K[n:n + me, n:n + me] -= reg * np.eye(me)
        self.n, self.me = n, me
        self.lu = sla.lu_factor(K, check_finite=False)

    def _solve_once(self, rx, ry, rz):
        wz = self.sc.apply(rz, inverse=True)
        sol = sla.lu_solve(self.lu, np.concatenate([rx, ry, wz]), check_finite=False)
        n, me = self.n, self.me
        return sol[:n], sol[n:n + me], self.sc.apply(sol[n + me:], inverse=True)

    def solve(self, rx, ry, rz):
        x, y, z = self._solve_once(rx, ry, rz)
        for _ in range(2):  # iterative refinement against the unregularised system
            ex = rx - (self.A.T @ y + self.G.T @ z)
            ey = ry - self.A @ x
            ez = rz - (self.G @ x - self.sc.apply(self.sc.apply(z)))
            dx, dy, dz = self._solve_once(ex, ey, ez)
            x, y, z = x + dx, y + dy, z + dz
        return x, y, z


def _conelp(c, G, h, A, b, cone: _Cone, opts: SolverOptions) -> dict:
    # overflow near an infeasibility/unboundedness certificate is expected; it is
    # caught by the finiteness checks below
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _conelp_impl(c, G, h, A, b, cone, opts)


def _conelp_impl(c, G, h, A, b, cone: _Cone, opts: SolverOptions) -> dict:
    n, mG, me = c.size, G.shape[0], A.shape[0]
    resx0 = max(1.0, float(np.linalg.norm(c)))
    resy0 = max(1.0, float(np.linalg.norm(b)))
    resz0 = max(1.0, float(np.linalg.norm(h)))
    e = cone.identity(mG)
    nu = cone.degree

    try:
        kkt = _KKT(G, A, _Scaling(cone, e.copy(), e.copy()))
    except (np.linalg.LinAlgError, ValueError):
        return {"status": Status.NUMERICAL_FAILURE, "iterations": 0}
    x, _, zt = kkt.solve(np.zeros(n), b, h)
    s = -zt
    _, y, z = kkt.solve(-c, np.zeros(me), np.zeros(mG))
    for v in (s, z):
        a = cone.max_step_to_interior(v)
        if a >= -1e-8 * max(1.0, float(np.linalg.norm(v))):
            v += (1.0 + a) * e
    tau, kappa = 1.0, 1.0

    status = Status.MAX_ITER
    info: dict = {}
    it = 0
    best: dict = {}
    for it in range(opts.max_iter + 1):
        hz, by, cx = float(h @ z), float(b @ y), float(c @ x)
        rx = A.T @ y + G.T @ z + c * tau
        ry = -A @ x + b * tau
        rz = G @ x + s - h * tau
        rt = kappa + cx + by + hz
        mu = (float(s @ z) + tau * kappa) / (nu + 1)
        pres = max(np.linalg.norm(ry) / resy0, np.linalg.norm(rz) / resz0) / tau
        dres = np.linalg.norm(rx) / resx0 / tau
        gap = float(s @ z) / tau**2
        pcost, dcost = cx / tau, -(hz + by) / tau
        relgap = gap / abs(pcost) if abs(pcost) > 1e-12 else math.inf
        info = {"pres": float(pres), "dres": float(dres), "gap": gap, "pcost": pcost, "dcost": dcost}
        if pres <= opts.feas_tol and dres <= opts.feas_tol and (gap <= opts.opt_tol or relgap <= opts.opt_tol):
            status = Status.OPTIMAL
            break
        pinf = dinf = math.inf
        if hz + by < 0:
            pinf = np.linalg.norm(A.T @ y + G.T @ z) / resx0 / -(hz + by)
        if cx < 0:
            dinf = max(np.linalg.norm(A @ x) / resy0, np.linalg.norm(G @ x + s) / resz0) / -cx
        if pinf <= opts.feas_tol:
            status = Status.INFEASIBLE
            break
        if dinf <= opts.feas_tol:
            status = Status.UNBOUNDED
            break
        score = max(pres, dres, min(gap, relgap))
        if score < best.get("opt", (math.inf,))[0]:
            best["opt"] = (score, {"x": x, "y": y, "z": z, "s": s, "tau": tau, "kappa": kappa, "info": info})
        for key, val in (("pinf", pinf), ("dinf", dinf)):
            if val < best.get(key, (math.inf,))[0]:
                best[key] = (val, {"x": x, "y": y, "z": z, "s": s, "tau": tau, "kappa": kappa})
        if it == opts.max_iter:
            break
        if not (np.all(np.isfinite(x)) and math.isfinite(mu) and tau > 0):
            status = Status.NUMERICAL_FAILURE
            break

        try:
            sc = _Scaling(cone, s, z)
            kkt = _KKT(G, A, sc)
        except (np.linalg.LinAlgError, ValueError):
            status = Status.NUMERICAL_FAILURE
            break
        lam = sc.lam
        x1, y1, z1 = kkt.solve(-c, b, h)
        denom = -kappa / tau + float(c @ x1 + b @ y1 + h @ z1)

        def direction(eta, d_s, d_k):
            ws = sc.apply(cone.jdiv(lam, d_s))
            x2, y2, z2 = kkt.solve(-eta * rx, eta * ry, -eta * rz + ws)
            dtau = (-eta * rt + d_k / tau - float(c @ x2 + b @ y2 + h @ z2)) / denom
            dz = z2 + dtau * z1
            dx = x2 + dtau * x1
            ds = -eta * rz - G @ dx + h * dtau
            dk = -(d_k + kappa * dtau) / tau
            return dx, y2 + dtau * y1, dz, ds, dtau, dk

        def max_step(dz, ds, dtau, dk):
            a = min(cone.step(s, ds), cone.step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dk < 0:
                a = min(a, -kappa / dk)
            return a

        ll = cone.jprod(lam, lam)
        _, _, dza, dsa, dta, dka = direction(1.0, ll, tau * kappa)
        sigma = (1.0 - min(1.0, max_step(dza, dsa, dta, dka))) ** 3
        d_s = ll + cone.jprod(sc.apply(dsa, inverse=True), sc.apply(dza)) - sigma * mu * e
        d_k = tau * kappa + dta * dka - sigma * mu
        dx, dy, dz, ds, dtau, dk = direction(1.0 - sigma, d_s, d_k)
        alpha = min(1.0, 0.99 * max_step(dz, ds, dtau, dk))
        if not math.isfinite(alpha) or alpha <= 1e-14 or not np.all(np.isfinite(dx)):
            status = Status.NUMERICAL_FAILURE
            break
        x, y, z, s = x + alpha * dx, y + alpha * dy, z + alpha * dz, s + alpha * ds
        tau, kappa = tau + alpha * dtau, kappa + alpha * dk
    out = {"status": status, "x": x, "y": y, "z": z, "s": s, "tau": tau, "kappa": kappa,
           "iterations": it, "info": info}
    if status in (Status.MAX_ITER, Status.NUMERICAL_FAILURE):
        # stalled: accept the best iterate or certificate seen at a looser tolerance
        if "opt" in best and best["opt"][0] <= REDUCED_ACCURACY:
            out.update(best["opt"][1])
            out["status"] = Status.OPTIMAL
            out["info"] = dict(out["info"], reduced_accuracy=True)
            return out
        loose = math.sqrt(opts.feas_tol)
        for key, st in (("pinf", Status.INFEASIBLE), ("dinf", Status.UNBOUNDED)):
            if key in best and best[key][0] <= loose:
                out.update(best[key][1])
                out["status"] = st
                break
    return out


def _to_cone(prog: ConvexProgram):
    n = prog.n
    lin_rows, lin_h, lin_src = [], [], []
    soc_G, soc_h, soc_src = [], [], []
    for i, (con, fac) in enumerate(zip(prog.constraints, prog._factors)):
        if fac is None:
            lin_rows.append(con.q)
            lin_h.append(-con.r)
            lin_src.append(i)
            continue
        k = fac.shape[0]
        Gb = np.zeros((k + 2, n))
        Gb[0] = Gb[1] = 2.0 * con.q
        Gb[2:] = -2.0 * fac
        hb = np.zeros(k + 2)
        hb[0] = 1.0 - 2.0 * con.r
        hb[1] = -1.0 - 2.0 * con.r
        soc_G.append(Gb)
        soc_h.append(hb)
        soc_src.append(i)
    lo, hi = prog.lower, prog.upper
    fixed = lo == hi
    for j in np.flatnonzero(~fixed):
        for sign, bound in ((1.0, hi[j]), (-1.0, lo[j])):
            if math.isfinite(bound):
                row = np.zeros(n)
                row[j] = sign
                lin_rows.append(row)
                lin_h.append(sign * bound)
                lin_src.append(-1)
    G = np.vstack([np.array(lin_rows, dtype=float).reshape(-1, n)] + soc_G)
    h = np.concatenate([np.array(lin_h, dtype=float)] + soc_h)
    cone = _Cone(len(lin_rows), [g.shape[0] for g in soc_G])
    return G, h, np.eye(n)[fixed], lo[fixed], cone, lin_src, soc_src


def _duals(n_con, cone, z, tau, lin_src, soc_src) -> np.ndarray:
    out = np.zeros(n_con)
    for idx, src in enumerate(lin_src):
        if src >= 0:
            out[src] = z[idx] / tau
    for blk, src in zip(cone.blocks(), soc_src):
        out[src] = 2.0 * (z[blk.start] + z[blk.start + 1]) / tau
    return np.maximum(out, 0.0)


def solve(prog: ConvexProgram, opts: SolverOptions | None = None) -> Solution:
    """Minimise the program; the status distinguishes optimal, infeasible and unbounded inputs.

    ``duals`` holds one nonnegative multiplier per entry of ``prog.constraints``.
    For an unbounded program ``x`` is a normalised improving ray.
    """
    opts = opts or SolverOptions()
    n = prog.n
    nc = len(prog.constraints)
    G, h, A, b, cone, lin_src, soc_src = _to_cone(prog)
    fixed = prog.lower == prog.upper
    if G.shape[0] == 0:
        x = np.where(fixed, prog.lower, 0.0)
        if np.any(prog.c[~fixed]):
            return Solution(Status.UNBOUNDED, x, -math.inf, np.zeros(nc), math.nan)
        return Solution(Status.OPTIMAL, x, float(prog.c @ x), np.zeros(nc), 0.0)
    res = _conelp(prog.c, G, h, A, b, cone, opts)
    status = res["status"]
    if "x" not in res:
        return Solution(status, np.zeros(n), math.nan, np.zeros(nc), math.inf)
    it, info = res["iterations"], res["info"]
    if status is Status.INFEASIBLE:
        return Solution(status, np.full(n, math.nan), math.inf, np.zeros(nc), math.inf, it, info)
    if status is Status.UNBOUNDED:
        ray = res["x"] / max(1e-300, float(np.linalg.norm(res["x"])))
        return Solution(status, ray, -math.inf, np.zeros(nc), math.nan, it, info)
    tau = res["tau"]
    x = res["x"] / tau
    x[fixed] = prog.lower[fixed]
    duals = _duals(nc, cone, res["z"], tau, lin_src, soc_src)
    return Solution(status, x, float(prog.c @ x), duals, prog.max_violation(x), it, info)


def solve_feasibility(prog: ConvexProgram, opts: SolverOptions | None = None) -> Solution:
    """Membership test: solve with a zero objective.

    With no objective the self-dual embedding converges towards the relative
    interior of the feasible set, so certified points keep away from the
    boundary whenever the set has an interior.
    """
    zero = ConvexProgram(np.zeros(prog.n), prog.constraints, prog.lower, prog.upper, prog.names)
    return solve(zero, opts)


def dump_program(prog: ConvexProgram) -> str:
    """Text dump in sparse triplet form.

    Layout::

        vars <n>
        obj <j> <c_j>                     (nonzero objective entries)
        bound <j> <lower> <upper>         (variables with a finite bound)
        con <i> <r_i> [tag...]
        lin <i> <j> <q_ij>
        quad <i> <j> <k> <P_ijk>          (upper triangle, j <= k)
    """
    out = io.StringIO()
    fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    out.write(f"vars {prog.n}\n")
    for j in np.flatnonzero(prog.c):
        out.write(f"obj {j} {fmt(prog.c[j])}\n")
    for j in range(prog.n):
        if math.isfinite(prog.lower[j]) or math.isfinite(prog.upper[j]):
            out.write(f"bound {j} {fmt(prog.lower[j])} {fmt(prog.upper[j])}\n")
    for i, con in enumerate(prog.constraints):
        tag = " ".join(str(t) for t in con.tag)
        out.write(f"con {i} {fmt(con.r)}{' ' + tag if tag else ''}\n")
        for j in np.flatnonzero(con.q):
            out.write(f"lin {i} {j} {fmt(con.q[j])}\n")
        if con.P is not None:
            rr, cc = np.nonzero(np.triu(con.P))
            for j, k in zip(rr, cc):
                out.write(f"quad {i} {j} {k} {fmt(con.P[j, k])}\n")
    return out.getvalue()
