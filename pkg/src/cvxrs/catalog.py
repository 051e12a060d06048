"""Built-in example problems.

``quadratic``      x^2 + u1 x + u2 = 0 with -2 <= x <= 2
``poly-chain``     x1 (x2 + ... + xn) + u1 = 0, xi + ui = 0, x1 (x2 + ... + xn) <= 10,
                   with the first ``k`` bilinear terms grouped into one basis function
``park-poly``      minimise u3 on a sphere-coupled polynomial system with additive w
``netflow``        sinusoidal flows on a ring network with uncertain line weights
``disk``           x = u with x1^2 + x2^2 <= 4 (linear equality, convex inequality)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import Affine, BasisFunction, DecomposedSystem, Kind, NominalPoint, newton_solve, nominal_point
from .restriction import AdditiveNormBall, IntervalParametric, NoUncertainty, Objective, UncertaintyModel

Z, U = Affine.zvar, Affine.uvar
ONE = Affine.of(offset=1.0)


def _lin(a: Affine) -> BasisFunction:
    return BasisFunction(Kind.LINEAR, (a,))


@dataclass(eq=False)
class Problem:
    name: str
    sys: DecomposedSystem
    pt: NominalPoint
    objective: Objective
    u_bounds: tuple[np.ndarray, np.ndarray] | None = None
    uncertainty: UncertaintyModel = field(default_factory=NoUncertainty)
    initial_points: dict[str, np.ndarray] = field(default_factory=dict)
    # exact membership test of the true feasible set in u, when one is known
    true_set: Callable[[np.ndarray], bool] | None = None


def quadratic() -> Problem:
    """``x^2 + u1 x + u2 = 0`` with ``-2 <= x <= 2``, anchored at ``(0, [4, 0])``."""
    basis = (
        BasisFunction(Kind.BILINEAR, (Z(0), Affine.of({0: 1.0}, {0: 1.0}))),
        _lin(U(1)),
        _lin(Z(0, 1.0, -2.0)),
        _lin(Z(0, -1.0, -2.0)),
    )
    sys = DecomposedSystem(M=[[1.0, 1.0, 0.0, 0.0]], L=[[0, 0, 1, 0], [0, 0, 0, 1]], C=[[1.0]], basis=basis, m=2)
    pt = nominal_point(sys, [0.0], [4.0, 0.0])
    window = (np.array([-8.0, -8.0]), np.array([8.0, 8.0]))
    return Problem("quadratic", sys, pt, Objective((0.0, 1.0)), window, true_set=quadratic_true_set)


def quadratic_roots(u) -> list[float]:
    u1, u2 = float(u[0]), float(u[1])
    disc = u1 * u1 - 4.0 * u2
    if disc < 0:
        return []
    sq = math.sqrt(disc)
    return [(-u1 - sq) / 2.0, (-u1 + sq) / 2.0]


def quadratic_true_set(u) -> bool:
    return any(-2.0 <= r <= 2.0 for r in quadratic_roots(u))


def poly_chain(n: int = 10, k: int = 2) -> Problem:
    """Chain polynomial system with the first ``k - 1`` products grouped.

    Basis: ``[x1 (x2 + ... + xk), x1 x_{k+1}, ..., x1 xn, x1..xn, u1..un, 1]``.
    Anchored at ``x0 = (1, 1, 0, ..., 0)``, ``u0 = (-1, -1, 0, ..., 0)``.
    """
    if n < 2 or not 2 <= k <= n:
        raise ValueError(f"poly-chain needs n >= 2 and 2 <= k <= n, got n={n}, k={k}")
    group = Affine.of({i: 1.0 for i in range(1, k)})
    basis = [BasisFunction(Kind.BILINEAR, (Z(0), group))]
    basis += [BasisFunction(Kind.BILINEAR, (Z(0), Z(i))) for i in range(k, n)]
    nb = len(basis)
    basis += [_lin(Z(i)) for i in range(n)]
    basis += [_lin(U(i)) for i in range(n)]
    basis.append(_lin(ONE))
    p = len(basis)
    M = np.zeros((n, p))
    M[0, :nb] = 1.0
    M[0, nb + n] = 1.0
    for i in range(1, n):
        M[i, nb + i] = 1.0
        M[i, nb + n + i] = 1.0
    L = np.zeros((1, p))
    L[0, :nb] = 1.0
    L[0, -1] = -10.0
    sys = DecomposedSystem(M=M, L=L, C=np.eye(n), basis=tuple(basis), m=n)
    x0 = np.zeros(n)
    x0[:2] = 1.0
    u0 = -x0
    obj = np.zeros(n)
    obj[0] = 1.0
    return Problem(f"poly-chain:{n},{k}", sys, nominal_point(sys, x0, u0), Objective(tuple(obj)))


PARK_U0 = np.array([0.25, 0.0, 2.0])
PARK_X0 = {
    "a": np.array([0.5, -0.866, 0.0]),
    "b": np.array([-0.5, -0.866, 0.0]),
    "c": np.array([0.5, 0.0, 0.866]),
}


def park_poly_system() -> DecomposedSystem:
    """``x.x = 1``, ``u1 = x1^2 - w1``, ``u2 = x2 x3 - w2``, ``x1 u1 - 2 x1 u2 + x2 <= u3``."""
    basis = (
        BasisFunction(Kind.SQUARE, (Z(0),)),
        BasisFunction(Kind.SQUARE, (Z(1),)),
        BasisFunction(Kind.SQUARE, (Z(2),)),
        _lin(ONE),
        _lin(U(0)),
        _lin(U(1)),
        BasisFunction(Kind.BILINEAR, (Z(1), Z(2))),
        BasisFunction(Kind.BILINEAR, (Z(0), Affine.of(None, {0: 1.0, 1: -2.0}))),
        _lin(Z(1)),
        _lin(U(2)),
    )
    M = [
        [1, 1, 1, -1, 0, 0, 0, 0, 0, 0],
        [-1, 0, 0, 0, 1, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 1, -1, 0, 0, 0],
    ]
    L = [[0, 0, 0, 0, 0, 0, 0, 1, 1, -1]]
    B = [[0, 0], [1, 0], [0, 1]]
    return DecomposedSystem(M=M, L=L, C=np.eye(3), basis=basis, m=3, r=2, B=B, D=np.zeros((1, 2)))


def park_poly(init: str = "a", gamma: float | None = None) -> Problem:
    """The polynomial example started from one of three fixed initial conditions.

    The tabulated implicit starting values are rounded; they are polished by
    Newton's method at ``u0`` so the nominal point satisfies ``f = 0``.
    """
    if init not in PARK_X0:
        raise ValueError(f"unknown park-poly initialisation {init!r}; choose from {sorted(PARK_X0)}")
    sys = park_poly_system()
    inits = {}
    for key, x in PARK_X0.items():
        xp, ok = newton_solve(sys, PARK_U0, x, np.zeros(2))
        inits[key] = xp if ok else x
    pt = nominal_point(sys, inits[init], PARK_U0, np.zeros(2))
    unc: UncertaintyModel = NoUncertainty()
    if gamma is not None:
        unc = AdditiveNormBall("two", gamma)
    return Problem(f"park-poly:{init}", sys, pt, Objective((0.0, 0.0, 1.0)), uncertainty=unc,
                   initial_points=inits)


def ring_incidence(nodes: int) -> np.ndarray:
    """Node-by-edge incidence of the directed ring 0->1->...->nodes-1->0 (+1 at the tail)."""
    E = np.zeros((nodes, nodes))
    for e in range(nodes):
        E[e, e] = 1.0
        E[(e + 1) % nodes, e] = -1.0
    return E


def netflow(nodes: int = 5, width: float = 0.1, angle_limit: float = math.pi / 4) -> Problem:
    """Sinusoidal flows ``w_e sin(theta_i - theta_j)`` on a ring with unit nominal weights.

    Node 0 is the reference (angle fixed at 0) and balances supply; the
    explicit variables are the supplies at the remaining nodes.  Each edge's
    angle difference is limited to ``angle_limit`` and its weight lies in
    ``[1 - width, 1 + width]``.
    """
    if nodes < 3:
        raise ValueError("netflow needs at least 3 nodes")
    E = ring_incidence(nodes)
    ne = E.shape[1]
    n = nodes                    # theta_1..theta_{N-1} and b_0
    m = nodes - 1
    q = ne + 1
    C = np.zeros((q, n))
    C[:ne, : nodes - 1] = E[1:].T
    C[ne, n - 1] = 1.0
    basis = [BasisFunction(Kind.SIN, (Z(e),), w_index=e) for e in range(ne)]
    basis.append(_lin(Z(ne)))
    basis += [_lin(U(i)) for i in range(m)]
    basis += [_lin(Z(e)) for e in range(ne)]
    basis.append(_lin(ONE))
    p = len(basis)
    M = np.zeros((n, p))
    M[:, :ne] = -E
    M[0, ne] = 1.0
    for i in range(m):
        M[i + 1, ne + 1 + i] = 1.0
    L = np.zeros((2 * ne, p))
    off = ne + 1 + m
    for e in range(ne):
        L[e, off + e] = 1.0
        L[e, -1] = -angle_limit
        L[ne + e, off + e] = -1.0
        L[ne + e, -1] = -angle_limit
    sys = DecomposedSystem(M=M, L=L, C=C, basis=tuple(basis), m=m, r=ne)
    w0 = np.ones(ne)
    pt = nominal_point(sys, np.zeros(n), np.zeros(m), w0)
    return Problem(f"netflow:{nodes}", sys, pt, Objective(tuple(np.ones(m))),
                   uncertainty=IntervalParametric.around(w0, width))


def disk(radius: float = 2.0) -> Problem:
    """Linear equalities ``x = u`` with the convex inequality ``x1^2 + x2^2 <= radius^2``."""
    basis = (_lin(Z(0)), _lin(Z(1)), _lin(U(0)), _lin(U(1)),
             BasisFunction(Kind.SQUARE, (Z(0),)), BasisFunction(Kind.SQUARE, (Z(1),)), _lin(ONE))
    M = [[1, 0, -1, 0, 0, 0, 0], [0, 1, 0, -1, 0, 0, 0]]
    L = [[0, 0, 0, 0, 1, 1, -radius * radius]]
    sys = DecomposedSystem(M=M, L=L, C=np.eye(2), basis=basis, m=2)
    pt = nominal_point(sys, np.zeros(2), np.zeros(2))
    window = (np.full(2, -1.5 * radius), np.full(2, 1.5 * radius))
    return Problem("disk", sys, pt, Objective((1.0, 1.0)), window,
                   true_set=lambda u: float(u[0]) ** 2 + float(u[1]) ** 2 <= radius * radius)


def _parse_params(text: str) -> tuple[list[str], dict[str, str]]:
    pos, kw = [], {}
    for tok in filter(None, (t.strip() for t in text.split(","))):
        if "=" in tok:
            k, v = tok.split("=", 1)
            kw[k.strip()] = v.strip()
        else:
            pos.append(tok)
    return pos, kw


NAMES = ("quadratic", "poly-chain", "park-poly", "netflow", "disk")


def get(spec: str) -> Problem:
    """Look up ``name[:params]``, e.g. ``poly-chain:10,3``, ``park-poly:c`` or ``netflow:n=6``."""
    name, _, params = spec.partition(":")
    pos, kw = _parse_params(params)
    if name == "quadratic":
        return quadratic()
    if name == "poly-chain":
        n = int(kw.get("n", pos[0] if pos else 10))
        k = int(kw.get("k", pos[1] if len(pos) > 1 else 2))
        return poly_chain(n, k)
    if name == "park-poly":
        init = kw.get("init", pos[0] if pos else "a")
        return park_poly(init)
    if name == "netflow":
        nodes = int(kw.get("n", pos[0] if pos else 5))
        width = float(kw.get("width", pos[1] if len(pos) > 1 else 0.1))
        return netflow(nodes, width)
    if name == "disk":
        return disk(float(kw.get("radius", pos[0] if pos else 2.0)))
    raise KeyError(f"unknown catalog problem {name!r}; available: {', '.join(NAMES)}")
