"""Decomposed representation of a constrained nonlinear system.

The equality and inequality constraints are written as fixed matrices acting on a
vector of basis functions of the transformed implicit variable ``z = C x``::

    f(x, u, w) = M psi(C x, u, w) + B w
    h(x, u, w) = L psi(C x, u, w) + D w

Basis functions come from a closed catalog (see :class:`Kind`), each acting on
affine forms of ``(z, u)``.  Indices are 0-based throughout.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DimensionMismatch

SINGULAR_CONDITION = 1e12


class Kind(str, enum.Enum):
    LINEAR = "linear"
    SQUARE = "square"
    BILINEAR = "bilinear"
    SIN = "sin"
    COS = "cos"
    LOGISTIC = "logistic"


_ARITY = {
    Kind.LINEAR: 1,
    Kind.SQUARE: 1,
    Kind.BILINEAR: 2,
    Kind.SIN: 1,
    Kind.COS: 1,
    Kind.LOGISTIC: 1,
}


def _logistic(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


@dataclass(frozen=True)
class Affine:
    """``sum_j z_coef[j] z_j + sum_i u_coef[i] u_i + offset``."""

    z: tuple[tuple[int, float], ...] = ()
    u: tuple[tuple[int, float], ...] = ()
    offset: float = 0.0

    def __post_init__(self):
        for name, terms in (("z", self.z), ("u", self.u)):
            idx = [i for i, _ in terms]
            if len(set(idx)) != len(idx):
                raise ValueError(f"duplicate {name} index in affine form: {idx}")

    @classmethod
    def of(cls, z: Mapping[int, float] | None = None, u: Mapping[int, float] | None = None,
           offset: float = 0.0) -> "Affine":
        zt = tuple(sorted((int(i), float(c)) for i, c in (z or {}).items() if c != 0.0))
        ut = tuple(sorted((int(i), float(c)) for i, c in (u or {}).items() if c != 0.0))
        return cls(zt, ut, float(offset))

    @classmethod
    def zvar(cls, j: int, coef: float = 1.0, offset: float = 0.0) -> "Affine":
        return cls.of({j: coef}, None, offset)

    @classmethod
    def uvar(cls, i: int, coef: float = 1.0, offset: float = 0.0) -> "Affine":
        return cls.of(None, {i: coef}, offset)

    @property
    def z_indices(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.z)

    @property
    def u_indices(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.u)

    def value(self, z: np.ndarray, u: np.ndarray) -> float:
        v = self.offset
        for j, c in self.z:
            v += c * z[j]
        for i, c in self.u:
            v += c * u[i]
        return v

    def dense(self, q: int, m: int) -> np.ndarray:
        """Coefficient vector over the stacked variable ``y = (z, u)``."""
        out = np.zeros(q + m)
        for j, c in self.z:
            out[j] = c
        for i, c in self.u:
            out[q + i] = c
        return out


@dataclass(frozen=True)
class BasisFunction:
    """One entry of the basis vector psi.

    ``args`` holds one affine form (two for ``BILINEAR``).  When ``w_index`` is
    set the basis value is multiplied by ``w[w_index]``.  ``rho`` is the
    ``(under, over)`` pair of bilinear envelope parameters.
    """

    kind: Kind
    args: tuple[Affine, ...]
    w_index: int | None = None
    rho: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if len(self.args) != _ARITY[self.kind]:
            raise ValueError(f"{self.kind.value} basis takes {_ARITY[self.kind]} argument(s), got {len(self.args)}")
        if self.rho[0] <= 0 or self.rho[1] <= 0:
            raise ValueError("bilinear rho parameters must be positive")

    @property
    def z_support(self) -> tuple[int, ...]:
        """The index set of z this basis depends on."""
        idx: set[int] = set()
        for a in self.args:
            idx.update(a.z_indices)
        return tuple(sorted(idx))

    @property
    def u_support(self) -> tuple[int, ...]:
        idx: set[int] = set()
        for a in self.args:
            idx.update(a.u_indices)
        return tuple(sorted(idx))

    def _scale(self, w: np.ndarray | None) -> float:
        if self.w_index is None:
            return 1.0
        if w is None:
            raise DimensionMismatch("basis depends on w but no w was given")
        return float(w[self.w_index])

    def value(self, z: np.ndarray, u: np.ndarray, w: np.ndarray | None = None) -> float:
        a = self.args[0].value(z, u)
        k = self.kind
        if k is Kind.LINEAR:
            v = a
        elif k is Kind.SQUARE:
            v = a * a
        elif k is Kind.BILINEAR:
            v = a * self.args[1].value(z, u)
        elif k is Kind.SIN:
            v = math.sin(a)
        elif k is Kind.COS:
            v = math.cos(a)
        else:
            v = float(_logistic(a))
        return self._scale(w) * v

    def derivative_wrt_args(self, z, u) -> tuple[float, ...]:
        """Partial derivatives with respect to each affine argument (unscaled)."""
        a = self.args[0].value(z, u)
        k = self.kind
        if k is Kind.LINEAR:
            return (1.0,)
        if k is Kind.SQUARE:
            return (2.0 * a,)
        if k is Kind.BILINEAR:
            return (self.args[1].value(z, u), a)
        if k is Kind.SIN:
            return (math.cos(a),)
        if k is Kind.COS:
            return (-math.sin(a),)
        s = float(_logistic(a))
        return (s * (1.0 - s),)

    def gradient(self, z, u, w=None) -> tuple[np.ndarray, np.ndarray]:
        """Return (d psi/dz, d psi/du) as dense vectors."""
        q, m = len(z), len(u)
        scale = self._scale(w)
        gz, gu = np.zeros(q), np.zeros(m)
        for d, arg in zip(self.derivative_wrt_args(z, u), self.args):
            for j, c in arg.z:
                gz[j] += scale * d * c
            for i, c in arg.u:
                gu[i] += scale * d * c
        return gz, gu


def _as2d(a, rows: int, cols: int, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.size == 0:
        arr = np.zeros((rows, cols))
    arr = arr.reshape(arr.shape if arr.ndim == 2 else (rows, cols))
    if arr.shape != (rows, cols):
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {(rows, cols)}")
    return arr


@dataclass(frozen=True, eq=False)
class DecomposedSystem:
    """``f = M psi(Cx, u, w) + B w`` and ``h = L psi(Cx, u, w) + D w``."""

    M: np.ndarray
    L: np.ndarray
    C: np.ndarray
    basis: tuple[BasisFunction, ...]
    m: int
    r: int = 0
    B: np.ndarray | None = None
    D: np.ndarray | None = None

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n, p = M.shape
        q = C.shape[0]
        if C.shape[1] != n:
            raise DimensionMismatch(f"C has {C.shape[1]} columns but M has {n} rows")
        L = np.asarray(self.L, dtype=float)
        L = np.zeros((0, p)) if L.size == 0 else np.atleast_2d(L)
        if L.shape[1] != p:
            raise DimensionMismatch(f"L has {L.shape[1]} columns, expected {p}")
        if len(self.basis) != p:
            raise DimensionMismatch(f"{len(self.basis)} basis functions for {p} columns of M")
        s = L.shape[0]
        r = int(self.r)
        B = _as2d(self.B if self.B is not None else np.zeros((n, r)), n, r, "B")
        D = _as2d(self.D if self.D is not None else np.zeros((s, r)), s, r, "D")
        for k, b in enumerate(self.basis):
            for j in b.z_support:
                if not 0 <= j < q:
                    raise DimensionMismatch(f"basis {k} references z[{j}] but q = {q}")
            for i in b.u_support:
                if not 0 <= i < self.m:
                    raise DimensionMismatch(f"basis {k} references u[{i}] but m = {self.m}")
            if b.w_index is not None and not 0 <= b.w_index < r:
                raise DimensionMismatch(f"basis {k} references w[{b.w_index}] but r = {r}")
        for name, arr in (("M", M), ("L", L), ("C", C), ("B", B), ("D", D)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "basis", tuple(self.basis))
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def p(self) -> int:
        return self.M.shape[1]

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @property
    def s(self) -> int:
        return self.L.shape[0]

    def check_dims(self, x=None, u=None, w=None):
        for name, vec, size in (("x", x, self.n), ("u", u, self.m), ("w", w, self.r)):
            if vec is not None and np.shape(vec) != (size,):
                raise DimensionMismatch(f"{name} has shape {np.shape(vec)}, expected ({size},)")

    def _w(self, w):
        if w is None:
            return np.zeros(self.r)
        return np.asarray(w, dtype=float)

    def psi(self, z, u, w=None) -> np.ndarray:
        w = self._w(w)
        return np.array([b.value(z, u, w) for b in self.basis])


def _vec(a) -> np.ndarray:
    return np.asarray(a, dtype=float).reshape(-1)


def evaluate_f(sys: DecomposedSystem, x, u, w=None) -> np.ndarray:
    x, u = _vec(x), _vec(u)
    w = sys._w(w)
    sys.check_dims(x, u, w)
    out = sys.M @ sys.psi(sys.C @ x, u, w)
    if sys.r:
        out = out + sys.B @ w
    return out


def evaluate_h(sys: DecomposedSystem, x, u, w=None) -> np.ndarray:
    x, u = _vec(x), _vec(u)
    w = sys._w(w)
    sys.check_dims(x, u, w)
    if sys.s == 0:
        return np.zeros(0)
    out = sys.L @ sys.psi(sys.C @ x, u, w)
    if sys.r:
        out = out + sys.D @ w
    return out


def jacobian_z(sys: DecomposedSystem, z, u, w=None) -> np.ndarray:
    """p x q matrix of d psi_k / d z_j."""
    z, u = _vec(z), _vec(u)
    w = sys._w(w)
    if z.shape != (sys.q,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({sys.q},)")
    sys.check_dims(u=u, w=w)
    out = np.zeros((sys.p, sys.q))
    for k, b in enumerate(sys.basis):
        out[k] = b.gradient(z, u, w)[0]
    return out


def jacobian_u(sys: DecomposedSystem, z, u, w=None) -> np.ndarray:
    """p x m matrix of d psi_k / d u_i."""
    z, u = _vec(z), _vec(u)
    w = sys._w(w)
    out = np.zeros((sys.p, sys.m))
    for k, b in enumerate(sys.basis):
        out[k] = b.gradient(z, u, w)[1]
    return out


def jacobian_x(sys: DecomposedSystem, x, u, w=None) -> np.ndarray:
    """n x n Jacobian of f with respect to x, i.e. M Lambda C."""
    x = _vec(x)
    return sys.M @ jacobian_z(sys, sys.C @ x, u, w) @ sys.C


def condition_number(a: np.ndarray) -> float:
    """2-norm condition number; +inf once the matrix is rank deficient in floating point."""
    if a.size == 0:
        return 1.0
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= max(a.shape) * np.finfo(float).eps * sv[0]:
        return math.inf
    return float(sv[0] / sv[-1])


def numerical_rank(a: np.ndarray) -> int:
    if a.size == 0:
        return 0
    sv = np.linalg.svd(a, compute_uv=False)
    tol = max(a.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    return int(np.sum(sv > tol))


@dataclass(frozen=True, eq=False)
class NominalPoint:
    x0: np.ndarray
    u0: np.ndarray
    w0: np.ndarray
    z0: np.ndarray
    eq_residual: float
    ineq_violation: float
    jacobian_condition: float


def nominal_point(sys: DecomposedSystem, x0, u0, w0=None) -> NominalPoint:
    """Build a :class:`NominalPoint`, recomputing z0 and the feasibility metadata."""
    x0, u0 = _vec(x0).copy(), _vec(u0).copy()
    w0 = sys._w(w0).copy()
    sys.check_dims(x0, u0, w0)
    z0 = sys.C @ x0
    f = evaluate_f(sys, x0, u0, w0)
    h = evaluate_h(sys, x0, u0, w0)
    viol = float(max(0.0, h.max())) if h.size else 0.0
    cond = condition_number(jacobian_x(sys, x0, u0, w0))
    for a in (x0, u0, w0, z0):
        a.setflags(write=False)
    return NominalPoint(x0, u0, w0, z0, float(np.linalg.norm(f)), viol, cond)


@dataclass(frozen=True)
class SparsityProfile:
    per_basis: tuple[frozenset[int], ...]

    @property
    def degree(self) -> int:
        return max((len(s) for s in self.per_basis), default=0)


def sparsity_profile(sys: DecomposedSystem) -> SparsityProfile:
    return SparsityProfile(tuple(frozenset(b.z_support) for b in sys.basis))


@dataclass(frozen=True)
class ValidationReport:
    rank_C: int
    rank_ok: bool
    eq_residual: float
    eq_ok: bool
    ineq_violation: float
    ineq_ok: bool
    jacobian_condition: float
    jacobian_ok: bool
    messages: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return self.rank_ok and self.eq_ok and self.ineq_ok and self.jacobian_ok


def validate(sys: DecomposedSystem, pt: NominalPoint, tol_feas: float = 1e-8) -> ValidationReport:
    """Check rank(C) = n and the nominal point conditions.

    Soft failures are flagged in the report rather than raised; only
    inconsistent dimensions raise :class:`DimensionMismatch`.
    """
    sys.check_dims(pt.x0, pt.u0, pt.w0)
    rank = numerical_rank(sys.C)
    msgs = []
    rank_ok = rank == sys.n
    if not rank_ok:
        msgs.append(f"rank(C) = {rank} < n = {sys.n}")
    eq_ok = pt.eq_residual <= tol_feas
    if not eq_ok:
        msgs.append(f"nominal equality residual {pt.eq_residual:.3g} exceeds {tol_feas:g}")
    ineq_ok = pt.ineq_violation <= tol_feas
    if not ineq_ok:
        msgs.append(f"nominal inequality violation {pt.ineq_violation:.3g} exceeds {tol_feas:g}")
    jac_ok = pt.jacobian_condition <= SINGULAR_CONDITION
    if not jac_ok:
        msgs.append(f"equality Jacobian is singular (condition {pt.jacobian_condition:.3g})")
    return ValidationReport(rank, rank_ok, pt.eq_residual, eq_ok, pt.ineq_violation, ineq_ok,
                            pt.jacobian_condition, jac_ok, tuple(msgs))


def newton_solve(sys: DecomposedSystem, u, x_init, w=None, tol: float = 1e-12, max_iter: int = 50
                 ) -> tuple[np.ndarray, bool]:
    """Plain Newton iteration on f(., u, w) = 0 for x.  Returns (x, converged)."""
    x = _vec(x_init).copy()
    u = _vec(u)
    for _ in range(max_iter):
        f = evaluate_f(sys, x, u, w)
        if not np.all(np.isfinite(f)):
            return x, False
        if np.linalg.norm(f) <= tol:
            return x, True
        J = jacobian_x(sys, x, u, w)
        try:
            dx = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            return x, False
        x = x - dx
    f = evaluate_f(sys, x, u, w)
    return x, bool(np.all(np.isfinite(f)) and np.linalg.norm(f) <= max(tol, 1e-10))


__all__ = (
    "Affine", "BasisFunction", "DecomposedSystem", "Kind", "NominalPoint", "SparsityProfile",
    "ValidationReport", "condition_number", "evaluate_f", "evaluate_h", "jacobian_u", "jacobian_x",
    "jacobian_z", "newton_solve", "nominal_point", "numerical_rank", "sparsity_profile", "validate",
)
