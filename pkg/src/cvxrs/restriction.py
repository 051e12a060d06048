"""Lifted convex restriction programs in ``(u, z^u, z^l[, gamma])``.

The implicit variable satisfies the fixed-point equation

    x = -(M Lam C)^{-1} (M g(Cx, u, w) + B w),    g = psi - Lam z,

and the box ``P(b) = {x : z^l <= Cx <= z^u}`` maps into itself whenever, row
by row, the envelope bounds of ``g`` over the box keep ``A x`` below
``b = (z^u, -z^l)`` with ``A = [C; -C]``.  Each row therefore becomes

    sum_k K+_ik g^u_k + K-_ik g^l_k + xi_i <= b_i,        K = -A (M Lam C)^{-1} M,

and each inequality row ``sum_k L+_jk psi^u_k + L-_jk psi^l_k + zeta_j <= 0``.
Box bounds of convex (concave) envelopes are attained at box vertices, so every
bound is expanded into one convex quadratic constraint per tracked vertex.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .conic import ConvexProgram, QuadConstraint
from .envelopes import (EnvelopePair, Piece, make_envelope, make_uncertain_envelope, prune_vertices,
                        residual_envelope)
from .errors import (DimensionMismatch, InfiniteMargin, NegativeRadius, SingularJacobian,
                     UnsupportedUncertaintyForm)
from .model import (SINGULAR_CONDITION, DecomposedSystem, NominalPoint, condition_number, jacobian_z,
                    sparsity_profile)

# ---------------------------------------------------------------------------
# uncertainty models


@dataclass(frozen=True)
class NoUncertainty:
    pass


@dataclass(frozen=True)
class AdditiveNormBall:
    """``{w : ||w - w0|| <= radius}``; ``radius=None`` makes the radius a decision variable.

    ``support`` selects how the infinity-norm ball enters the margins:
    ``"exact"`` uses its support function (the 1-norm of the row), ``"table"``
    the infinity norm of the row.  The two coincide for the Euclidean ball.
    """

    norm: Literal["two", "inf"] = "two"
    radius: float | None = None
    support: Literal["exact", "table"] = "exact"

    def __post_init__(self):
        if self.norm not in ("two", "inf"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.support not in ("exact", "table"):
            raise ValueError(f"unknown support mode {self.support!r}")
        if self.radius is not None and not self.radius >= 0:
            raise NegativeRadius(f"uncertainty radius must be nonnegative, got {self.radius}")

    def dual_norm(self, rows: np.ndarray) -> np.ndarray:
        if rows.shape[1] == 0:
            return np.zeros(rows.shape[0])
        if self.norm == "two":
            return np.linalg.norm(rows, axis=1)
        if self.support == "exact":
            return np.abs(rows).sum(axis=1)
        return np.abs(rows).max(axis=1)


@dataclass(frozen=True)
class IntervalParametric:
    """Per-coordinate intervals ``lower <= w <= upper``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, dtype=float), np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape:
            raise DimensionMismatch("interval bounds differ in length")
        if np.any(lo > hi):
            raise ValueError("empty uncertainty interval")

    @classmethod
    def around(cls, w0, width) -> "IntervalParametric":
        w0 = np.asarray(w0, dtype=float)
        width = np.broadcast_to(np.asarray(width, dtype=float), w0.shape)
        return cls(tuple(w0 - width), tuple(w0 + width))


UncertaintyModel = NoUncertainty | AdditiveNormBall | IntervalParametric


@dataclass(frozen=True)
class Objective:
    """Linear objective ``c . u + constant`` over the explicit variables."""

    c: tuple[float, ...]
    constant: float = 0.0

    def value(self, u) -> float:
        return float(np.asarray(self.c) @ np.asarray(u, dtype=float)) + self.constant


# ---------------------------------------------------------------------------


def jacobian_blocks(sys: DecomposedSystem, pt: NominalPoint) -> tuple[np.ndarray, np.ndarray, float]:
    """Return ``(Lam, M Lam C, condition)`` at the nominal point."""
    lam = jacobian_z(sys, pt.z0, pt.u0, pt.w0)
    J = sys.M @ lam @ sys.C
    return lam, J, condition_number(J)


def compute_K(sys: DecomposedSystem, pt: NominalPoint) -> tuple[np.ndarray, np.ndarray]:
    """``K = -A (M Lam C)^{-1} M`` (2q x p) and ``Lam`` (p x q); rows of K pair with ``(z^u, -z^l)``."""
    lam, J, cond = jacobian_blocks(sys, pt)
    if not cond <= SINGULAR_CONDITION:
        raise SingularJacobian(cond)
    A = np.vstack([sys.C, -sys.C])
    return -A @ np.linalg.solve(J, sys.M), lam


def _split(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.maximum(a, 0.0), np.minimum(a, 0.0)


@dataclass(eq=False)
class RestrictionProgram:
    """A lifted restriction ready for :mod:`cvxrs.conic`.

    Variable layout: ``[u (m), z^u (q), z^l (q), epigraph variables..., gamma?]``.
    Every constraint carries a tag ``("K", i, ...)`` for the self-mapping rows
    (``i < q`` pairs with ``z^u_i``, ``i >= q`` with ``-z^l_{i-q}``), ``("L", j, ...)`` for
    inequality rows and ``("epi", ...)`` for epigraph definitions.
    """

    sys: DecomposedSystem
    pt: NominalPoint
    K: np.ndarray
    Lam: np.ndarray
    KB: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    xi_gamma: np.ndarray
    zeta_gamma: np.ndarray
    constraints: list[QuadConstraint]
    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_vars: int
    gamma_index: int | None
    epi_rows: dict[int, tuple[str, list[int]]] = field(default_factory=dict)
    names: list[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.sys.m

    @property
    def q(self) -> int:
        return self.sys.q

    @property
    def K_plus(self) -> np.ndarray:
        return _split(self.K)[0]

    @property
    def K_minus(self) -> np.ndarray:
        return _split(self.K)[1]

    @property
    def L_plus(self) -> np.ndarray:
        return _split(self.sys.L)[0]

    @property
    def L_minus(self) -> np.ndarray:
        return _split(self.sys.L)[1]

    @property
    def constraint_count(self) -> int:
        return len(self.constraints)

    def count_bound(self) -> int:
        """Worst-case count ``q 2^(|I|+2) + 2n + s`` before pruning."""
        deg = sparsity_profile(self.sys).degree
        return self.q * 2 ** (deg + 2) + 2 * self.sys.n + self.sys.s

    def unpack(self, v) -> tuple[np.ndarray, np.ndarray, np.ndarray, float | None]:
        v = np.asarray(v, dtype=float)
        m, q = self.m, self.q
        g = float(v[self.gamma_index]) if self.gamma_index is not None else None
        return v[:m], v[m:m + q], v[m + q:m + 2 * q], g

    def lift(self, u, zu, zl, gamma: float | None = None) -> np.ndarray:
        """Full variable vector with every epigraph variable at its tightest value."""
        v = np.zeros(self.n_vars)
        m, q = self.m, self.q
        v[:m] = u
        v[m:m + q] = zu
        v[m + q:m + 2 * q] = zl
        if self.gamma_index is not None:
            v[self.gamma_index] = 0.0 if gamma is None else gamma
        for idx, (direction, rows) in self.epi_rows.items():
            vals = [self.constraints[r].value(v) for r in rows]
            v[idx] = max(vals) if direction == "over" else -max(vals)
        return v

    def slacks(self, v) -> np.ndarray:
        """``-value`` of each constraint; nonnegative means satisfied."""
        return -np.array([con.value(v) for con in self.constraints])

    def to_conic(self, fix_u=None, gamma_lower: float | None = 0.0) -> ConvexProgram:
        lo, hi = self.lower.copy(), self.upper.copy()
        if fix_u is not None:
            lo[: self.m] = hi[: self.m] = np.asarray(fix_u, dtype=float)
        if self.gamma_index is not None and gamma_lower is not None:
            lo[self.gamma_index] = max(lo[self.gamma_index], gamma_lower)
        return ConvexProgram(self.c.copy(), self.constraints, lo, hi, list(self.names))

    def row_duals(self, duals) -> tuple[np.ndarray, np.ndarray]:
        """Aggregate constraint multipliers into per-row ``(mu (2q), lam (s))``."""
        mu = np.zeros(2 * self.q)
        lam = np.zeros(self.sys.s)
        for con, d in zip(self.constraints, duals):
            if con.tag[0] == "K":
                mu[con.tag[1]] += d
            elif con.tag[0] == "L":
                lam[con.tag[1]] += d
        return mu, lam


class _Builder:
    def __init__(self, sys: DecomposedSystem, pt: NominalPoint, gamma_free: bool, c_u, u_bounds):
        self.sys, self.pt = sys, pt
        self.m, self.q = sys.m, sys.q
        self.n_base = self.m + 2 * self.q
        self.n_extra = 0
        self.extra_names: list[str] = []
        self.gamma_free = gamma_free
        self.raw: list[tuple[np.ndarray, float, np.ndarray | None, tuple]] = []
        self.epi: dict[int, tuple[str, list[int]]] = {}
        self.c_u = np.zeros(self.m) if c_u is None else np.asarray(c_u, dtype=float)
        self.u_bounds = u_bounds

    # variable helpers -------------------------------------------------------
    def new_var(self, name: str) -> int:
        idx = self.n_base + self.n_extra
        self.n_extra += 1
        self.extra_names.append(name)
        return idx

    def _sel(self, vertex, support) -> np.ndarray:
        """Matrix mapping the variable vector (base part) to ``y = (z_vertex, u)``."""
        m, q = self.m, self.q
        S = np.zeros((q + m, self.n_base))
        up = dict(zip(support, vertex))
        for j in range(q):
            S[j, m + j if up.get(j, False) else m + q + j] = 1.0
        S[q:, :m] = np.eye(m)
        return S

    def piece_at_vertex(self, piece: Piece, vertex, support, scale: float):
        """``scale * piece(y(vertex))`` as (linear, constant, quadratic) over the base variables."""
        S = self._sel(vertex, support)
        a = S.T @ piece.g
        const = piece.c - float(piece.g @ piece.y0)
        lin = a.copy()
        P = None
        if not piece.is_affine:
            dv = S.T @ piece.d
            d0 = float(piece.d @ piece.y0)
            P = 2.0 * piece.kappa * np.outer(dv, dv)
            lin = lin - 2.0 * piece.kappa * d0 * dv
            const += piece.kappa * d0 * d0
            P = scale * P
        return scale * lin, scale * const, P

    def affine_bound(self, pieces: list[tuple[float, Piece]]):
        """Tight upper bound of ``sum coef * affine_piece`` over the box, linear in the variables."""
        m, q = self.m, self.q
        gz = np.zeros(q)
        lin = np.zeros(self.n_base)
        const = 0.0
        for coef, p in pieces:
            gz += coef * p.g[:q]
            lin[:m] += coef * p.g[q:]
            const += coef * (p.c - float(p.g @ p.y0))
        for j in range(q):
            if gz[j] > 0:
                lin[m + j] += gz[j]
            elif gz[j] < 0:
                lin[m + q + j] += gz[j]
        return lin, const

    def add(self, lin_base, const, P_base, tag, extra: dict[int, float] | None = None):
        self.raw.append((lin_base, const, P_base, tag, extra or {}))
        return len(self.raw) - 1

    # row assembly -----------------------------------------------------------
    def row(self, tag_kind: str, i: int, coefs: np.ndarray, pairs: list[EnvelopePair], rhs_lin: np.ndarray,
            margin_const: float, margin_gamma: float, epi_cache: dict):
        """Emit ``sum_k coef_k bound_k + margin - rhs <= 0``."""
        affine_terms: list[tuple[float, Piece]] = []
        nonlinear: list[tuple[int, float]] = []
        for k in np.flatnonzero(coefs):
            a = float(coefs[k])
            pair = pairs[k]
            if pair.is_affine:
                affine_terms.append((a, pair.over[0]))
            else:
                nonlinear.append((int(k), a))
        lin, const = self.affine_bound(affine_terms)
        lin = lin - rhs_lin
        const += margin_const
        extra_g = {"gamma": margin_gamma} if margin_gamma else {}
        if len(nonlinear) == 1:
            k, a = nonlinear[0]
            pair = pairs[k]
            pieces = pair.over if a > 0 else pair.under
            verts = prune_vertices(pair)["over" if a > 0 else "under"]
            for pi, (piece, vs) in enumerate(zip(pieces, verts)):
                for v in sorted(vs):
                    l2, c2, P2 = self.piece_at_vertex(piece, v, pair.support, a)
                    self.add(lin + l2, const + c2, P2, (tag_kind, i, k, pi, v), extra_g)
            return
        extra: dict = dict(extra_g)
        for k, a in nonlinear:
            t = self._epigraph(pairs[k], "over" if a > 0 else "under", epi_cache, (tag_kind[0] == "K", k))
            extra[t] = extra.get(t, 0.0) + a
        self.add(lin, const, None, (tag_kind, i), extra)

    def _epigraph(self, pair: EnvelopePair, direction: str, cache: dict, key) -> int:
        ck = (key, direction)
        if ck in cache:
            return cache[ck]
        fam = "g" if key[0] else "psi"
        t = self.new_var(f"t_{fam}{key[1]}_{'u' if direction == 'over' else 'l'}")
        cache[ck] = t
        pieces = pair.over if direction == "over" else pair.under
        verts = prune_vertices(pair)[direction]
        rows = []
        sign = 1.0 if direction == "over" else -1.0
        for pi, (piece, vs) in enumerate(zip(pieces, verts)):
            for v in sorted(vs):
                l2, c2, P2 = self.piece_at_vertex(piece, v, pair.support, sign)
                rows.append(self.add(l2, c2, P2, ("epi", fam, key[1], direction, pi, v), {t: -sign}))
        self.epi[t] = (direction, rows)
        return t

    def finish(self, K, lam, KB, xi, zeta, xi_g, zeta_g, maximize_gamma: bool) -> RestrictionProgram:
        n_vars = self.n_base + self.n_extra + (1 if self.gamma_free else 0)
        gamma_index = n_vars - 1 if self.gamma_free else None
        cons = []
        for lin_base, const, P_base, tag, extra in self.raw:
            qv = np.zeros(n_vars)
            qv[: self.n_base] = lin_base
            for key, val in extra.items():
                idx = gamma_index if key == "gamma" else key
                if idx is None:
                    raise AssertionError("gamma term without a gamma variable")
                qv[idx] += val
            P = None
            if P_base is not None:
                P = np.zeros((n_vars, n_vars))
                P[: self.n_base, : self.n_base] = P_base
            cons.append(QuadConstraint(qv, float(const), P, tag))
        c = np.zeros(n_vars)
        if maximize_gamma:
            c[gamma_index] = -1.0
        else:
            c[: self.m] = self.c_u
        lower = np.full(n_vars, -np.inf)
        upper = np.full(n_vars, np.inf)
        if self.u_bounds is not None:
            lower[: self.m] = self.u_bounds[0]
            upper[: self.m] = self.u_bounds[1]
        names = ([f"u{i}" for i in range(self.m)] + [f"zu{j}" for j in range(self.q)]
                 + [f"zl{j}" for j in range(self.q)] + self.extra_names + (["gamma"] if self.gamma_free else []))
        return RestrictionProgram(self.sys, self.pt, K, lam, KB, xi, zeta, xi_g, zeta_g, cons, c, lower, upper,
                                  n_vars, gamma_index, dict(self.epi), names)


def _envelopes(sys: DecomposedSystem, pt: NominalPoint, intervals: IntervalParametric | None):
    pairs = []
    for k, b in enumerate(sys.basis):
        if intervals is not None and b.w_index is not None:
            lo, hi = intervals.lower[b.w_index], intervals.upper[b.w_index]
            pairs.append(make_uncertain_envelope(b, pt.z0, pt.u0, (lo, hi)))
        else:
            pairs.append(make_envelope(b, pt.z0, pt.u0, pt.w0 if sys.r else None))
    return pairs


def _build(sys: DecomposedSystem, pt: NominalPoint, *, objective: Objective | None, u_bounds,
           xi_fn, zeta_fn, gamma_free: bool, maximize_gamma: bool, intervals: IntervalParametric | None
           ) -> RestrictionProgram:
    sys.check_dims(pt.x0, pt.u0, pt.w0)
    K, lam = compute_K(sys, pt)
    A = np.vstack([sys.C, -sys.C])
    _, J, _ = jacobian_blocks(sys, pt)
    KB = -A @ np.linalg.solve(J, sys.B) if sys.r else np.zeros((2 * sys.q, 0))
    xi, xi_g = xi_fn(KB)
    zeta, zeta_g = zeta_fn(sys.D)
    psi_pairs = _envelopes(sys, pt, intervals)
    g_pairs = [residual_envelope(p, lam[k]) for k, p in enumerate(psi_pairs)]
    c_u = None if objective is None else np.asarray(objective.c, dtype=float)
    if c_u is not None and c_u.shape != (sys.m,):
        raise DimensionMismatch(f"objective has {c_u.size} coefficients, expected {sys.m}")
    bld = _Builder(sys, pt, gamma_free, c_u, u_bounds)
    m, q = sys.m, sys.q
    cache: dict = {}
    for i in range(2 * q):
        rhs = np.zeros(bld.n_base)
        if i < q:
            rhs[m + i] = 1.0           # <= z^u_i
        else:
            rhs[m + q + (i - q)] = -1.0  # <= -z^l_i
        bld.row("K", i, K[i], g_pairs, rhs, float(xi[i]), float(xi_g[i]), cache)
    for j in range(sys.s):
        bld.row("L", j, sys.L[j], psi_pairs, np.zeros(bld.n_base), float(zeta[j]), float(zeta_g[j]), cache)
    return bld.finish(K, lam, KB, xi, zeta, xi_g, zeta_g, maximize_gamma)


def _nominal_margins(w0):
    def fn(Mat):
        base = Mat @ w0 if Mat.shape[1] else np.zeros(Mat.shape[0])
        return base, np.zeros(Mat.shape[0])
    return fn


def build_nominal(sys: DecomposedSystem, pt: NominalPoint, objective: Objective | None = None,
                  u_bounds=None) -> RestrictionProgram:
    """Restriction of the nominal system (uncertainty fixed at ``pt.w0``)."""
    return _build(sys, pt, objective=objective, u_bounds=u_bounds, xi_fn=_nominal_margins(pt.w0),
                  zeta_fn=_nominal_margins(pt.w0), gamma_free=False, maximize_gamma=False, intervals=None)


def _ball_margins(w0, unc: AdditiveNormBall, free: bool):
    def fn(Mat):
        base = Mat @ w0 if Mat.shape[1] else np.zeros(Mat.shape[0])
        dn = unc.dual_norm(Mat)
        if free:
            return base, dn
        return base + unc.radius * dn, np.zeros(Mat.shape[0])
    return fn


def build_robust_additive(sys: DecomposedSystem, pt: NominalPoint, unc: AdditiveNormBall,
                          objective: Objective | None = None, u_bounds=None) -> RestrictionProgram:
    """Restriction valid for every ``w`` in the norm ball around ``pt.w0``.

    With ``unc.radius = None`` the radius becomes the last program variable and
    enters each row linearly.
    """
    if unc.radius is not None and unc.radius < 0:
        raise NegativeRadius(f"uncertainty radius must be nonnegative, got {unc.radius}")
    free = unc.radius is None
    fn = _ball_margins(pt.w0, unc, free)
    return _build(sys, pt, objective=objective, u_bounds=u_bounds, xi_fn=fn, zeta_fn=fn,
                  gamma_free=free, maximize_gamma=False, intervals=None)


def build_robust_parametric(sys: DecomposedSystem, pt: NominalPoint, unc: IntervalParametric,
                            objective: Objective | None = None, u_bounds=None) -> RestrictionProgram:
    """Restriction valid for every ``w`` in a box.

    Bases scaled by an uncertain coordinate use envelopes enclosing both interval
    extremes; additive ``B w`` and ``D w`` terms take their worst case over the box.
    """
    lo, hi = np.asarray(unc.lower, dtype=float), np.asarray(unc.upper, dtype=float)
    if lo.shape != (sys.r,):
        raise DimensionMismatch(f"interval has {lo.size} coordinates, expected {sys.r}")
    for k, b in enumerate(sys.basis):
        if b.w_index is not None and lo[b.w_index] != hi[b.w_index] and b.kind.value not in ("sin", "cos", "linear"):
            raise UnsupportedUncertaintyForm(f"basis {k} ({b.kind.value}) cannot carry interval uncertainty")
    mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
    w_used = set(b.w_index for b in sys.basis if b.w_index is not None)

    def fn(Mat):
        if not Mat.shape[1]:
            return np.zeros(Mat.shape[0]), np.zeros(Mat.shape[0])
        return Mat @ mid + np.abs(Mat) @ rad, np.zeros(Mat.shape[0])

    if w_used and sys.r and (np.any(sys.B[:, sorted(w_used)]) or np.any(sys.D[:, sorted(w_used)])):
        raise UnsupportedUncertaintyForm("a w coordinate enters both multiplicatively and additively")
    return _build(sys, pt, objective=objective, u_bounds=u_bounds, xi_fn=fn, zeta_fn=fn,
                  gamma_free=False, maximize_gamma=False, intervals=unc)


def build_margin(sys: DecomposedSystem, pt: NominalPoint, norm: Literal["two", "inf"] = "two",
                 support: Literal["exact", "table"] = "exact", u=None) -> RestrictionProgram:
    """Maximise the admissible ball radius with ``u`` fixed (default ``pt.u0``).

    Raises :class:`InfiniteMargin` when uncertainty enters no certified row.
    """
    unc = AdditiveNormBall(norm=norm, radius=None, support=support)
    fn = _ball_margins(pt.w0, unc, True)
    u = np.array(pt.u0 if u is None else u, dtype=float)
    if u.shape != (sys.m,):
        raise DimensionMismatch(f"u has shape {u.shape}, expected ({sys.m},)")
    prog = _build(sys, pt, objective=None, u_bounds=(u, u), xi_fn=fn, zeta_fn=fn,
                  gamma_free=True, maximize_gamma=True, intervals=None)
    if not (np.any(prog.xi_gamma > 0) or np.any(prog.zeta_gamma > 0)):
        raise InfiniteMargin("uncertainty does not enter any certified row")
    return prog


__all__ = [
    "AdditiveNormBall", "IntervalParametric", "NoUncertainty", "Objective", "RestrictionProgram",
    "UncertaintyModel", "build_margin", "build_nominal", "build_robust_additive", "build_robust_parametric",
    "compute_K", "jacobian_blocks",
]
