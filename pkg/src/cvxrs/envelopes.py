"""Concave envelope pairs for the basis catalog, and their bounds over boxes.

Every envelope in the catalog is a list of *pieces*, each a rank-one quadratic
over the stacked variable ``y = (z, u)``::

    piece(y) = c + g . (y - y0) + kappa * (d . (y - y0))**2

An over-estimator is the pointwise max of pieces with ``kappa >= 0`` (convex), an
under-estimator the pointwise min of pieces with ``kappa <= 0`` (concave).  A
nominal envelope has exactly one piece on each side and is tight in value and
gradient at the anchor ``y0``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyBox, UnsupportedKind, UnsupportedUncertaintyForm
from .model import BasisFunction, Kind

LOGISTIC_CURVATURE = math.sqrt(3.0) / 18.0


@dataclass(frozen=True, eq=False)
class Piece:
    c: float
    g: np.ndarray
    kappa: float
    d: np.ndarray
    y0: np.ndarray

    def value(self, y: np.ndarray) -> float:
        dy = y - self.y0
        t = float(self.d @ dy)
        return self.c + float(self.g @ dy) + self.kappa * t * t

    def gradient(self, y: np.ndarray) -> np.ndarray:
        dy = y - self.y0
        return self.g + 2.0 * self.kappa * float(self.d @ dy) * self.d

    def scaled(self, w: float) -> "Piece":
        return Piece(w * self.c, w * self.g, w * self.kappa, self.d, self.y0)

    def shifted(self, lam_y: np.ndarray) -> "Piece":
        """Subtract the linear function ``lam_y . y``."""
        return Piece(self.c - float(lam_y @ self.y0), self.g - lam_y, self.kappa, self.d, self.y0)

    @property
    def is_affine(self) -> bool:
        return self.kappa == 0.0 or not np.any(self.d)


@dataclass(frozen=True, eq=False)
class EnvelopePair:
    """Convex over-estimator and concave under-estimator of one scalar function.

    ``support`` lists the z indices the envelope may depend on; vertices are
    tuples of booleans aligned with it (True selects the upper bound).
    """

    over: tuple[Piece, ...]
    under: tuple[Piece, ...]
    support: tuple[int, ...]
    q: int
    m: int
    tight: bool = True

    def _y(self, z, u) -> np.ndarray:
        return np.concatenate([np.asarray(z, dtype=float), np.asarray(u, dtype=float)])

    def over_value(self, z, u) -> float:
        y = self._y(z, u)
        return max(p.value(y) for p in self.over)

    def under_value(self, z, u) -> float:
        y = self._y(z, u)
        return min(p.value(y) for p in self.under)

    @property
    def is_affine(self) -> bool:
        """True when over and under coincide with a single affine function."""
        if len(self.over) != 1 or len(self.under) != 1:
            return False
        a, b = self.over[0], self.under[0]
        return (a.is_affine and b.is_affine and a.c == b.c and np.array_equal(a.g, b.g)
                and np.array_equal(a.y0, b.y0))


@dataclass(frozen=True)
class BoxBound:
    value_u: float
    value_l: float
    active_vertices: tuple[tuple[bool, ...], ...]


class UncertainEnvelopePair(EnvelopePair):
    """Envelope valid for every w in an interval; one piece per extreme of w."""


def _pieces_for(kind: Kind, X: np.ndarray, X0: float, Y: np.ndarray | None, Y0: float | None,
                y0: np.ndarray, rho: tuple[float, float]) -> tuple[Piece, Piece]:
    zero = np.zeros_like(X)
    if kind is Kind.LINEAR:
        p = Piece(X0, X, 0.0, zero, y0)
        return p, p
    if kind is Kind.SQUARE:
        # x^2 is its own convex over-estimator; the tangent line is the concave under-estimator.
        over = Piece(X0 * X0, 2.0 * X0 * X, 1.0, X, y0)
        under = Piece(X0 * X0, 2.0 * X0 * X, 0.0, zero, y0)
        return over, under
    if kind is Kind.BILINEAR:
        rho_l, rho_u = rho
        g = Y0 * X + X0 * Y
        over = Piece(X0 * Y0, g, 0.25, rho_u * X + Y / rho_u, y0)
        under = Piece(X0 * Y0, g, -0.25, rho_l * X - Y / rho_l, y0)
        return over, under
    if kind is Kind.SIN:
        c, g, k = math.sin(X0), math.cos(X0) * X, 0.5
    elif kind is Kind.COS:
        c, g, k = math.cos(X0), -math.sin(X0) * X, 0.5
    elif kind is Kind.LOGISTIC:
        s = 1.0 / (1.0 + math.exp(-X0))
        c, g, k = s, s * (1.0 - s) * X, 0.5 * LOGISTIC_CURVATURE
    else:  # pragma: no cover - the Kind enum is closed
        raise UnsupportedKind(kind)
    return Piece(c, g, k, X, y0), Piece(c, g, -k, X, y0)


def _scaled_pair(over: Piece, under: Piece, w: float) -> tuple[Piece, Piece]:
    if w >= 0:
        return over.scaled(w), under.scaled(w)
    return under.scaled(w), over.scaled(w)


def _base_pieces(basis: BasisFunction, z0, u0) -> tuple[Piece, Piece]:
    z0 = np.asarray(z0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    q, m = len(z0), len(u0)
    y0 = np.concatenate([z0, u0])
    X = basis.args[0].dense(q, m)
    X0 = basis.args[0].value(z0, u0)
    Y = Y0 = None
    if basis.kind is Kind.BILINEAR:
        Y = basis.args[1].dense(q, m)
        Y0 = basis.args[1].value(z0, u0)
    return _pieces_for(basis.kind, X, X0, Y, Y0, y0, basis.rho)


def make_envelope(basis: BasisFunction, z0, u0, w0=None) -> EnvelopePair:
    """Closed-form quadratic envelope pair of ``basis`` anchored at ``(z0, u0, w0)``."""
    over, under = _base_pieces(basis, z0, u0)
    if basis.w_index is not None:
        if w0 is None:
            raise UnsupportedUncertaintyForm("basis is scaled by w but no nominal w was given")
        over, under = _scaled_pair(over, under, float(w0[basis.w_index]))
    return EnvelopePair((over,), (under,), basis.z_support, len(z0), len(u0))


def make_uncertain_envelope(basis: BasisFunction, z0, u0, w_interval: tuple[float, float]
                            ) -> UncertainEnvelopePair:
    """Envelope enclosing ``w * phi(z, u)`` for every ``w`` in ``w_interval``.

    Because the basis is linear in its multiplier, the extremes of the interval
    bound it for every intermediate value; the resulting envelope is the max
    (min) over both extremes and is generally not tight at the anchor.
    """
    if basis.w_index is None or basis.kind not in (Kind.SIN, Kind.COS, Kind.LINEAR):
        raise UnsupportedUncertaintyForm(
            f"interval uncertainty is supported only as a multiplier on sin/cos/linear bases, got {basis.kind.value}")
    lo, hi = map(float, w_interval)
    if lo > hi:
        raise ValueError(f"empty uncertainty interval [{lo}, {hi}]")
    over0, under0 = _base_pieces(basis, z0, u0)
    overs, unders = [], []
    for wt in ((lo,) if lo == hi else (lo, hi)):
        o, un = _scaled_pair(over0, under0, wt)
        overs.append(o)
        unders.append(un)
    return UncertainEnvelopePair(tuple(overs), tuple(unders), basis.z_support, len(z0), len(u0),
                                 tight=lo == hi)


def residual_envelope(pair: EnvelopePair, lam_row) -> EnvelopePair:
    """Envelope of ``psi_k(z, u) - lam_row . z`` from the envelope of ``psi_k``."""
    lam = np.asarray(lam_row, dtype=float)
    lam_y = np.concatenate([lam, np.zeros(pair.m)])
    return replace(pair, over=tuple(p.shifted(lam_y) for p in pair.over),
                   under=tuple(p.shifted(lam_y) for p in pair.under))


def candidate_vertices(a: np.ndarray, sigma: np.ndarray, quadratic: bool) -> list[tuple[bool, ...]]:
    """Vertices that can maximise ``a . z + phi(sigma . z)`` over any box, phi convex.

    At a maximiser the function is majorised by its linearisation with slope
    ``a + lam * sigma`` for some scalar ``lam``, so the maximiser can be taken to
    sit at the upper bound exactly where that slope is positive.  Sweeping
    ``lam`` over the real line visits at most one sign pattern per gap between
    the breakpoints ``-a_j / sigma_j``.
    """
    a = np.asarray(a, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if not quadratic or not np.any(sigma):
        return [tuple(bool(v) for v in a > 0)]
    nz = sigma != 0
    with np.errstate(over="ignore", divide="ignore"):
        bps = np.unique(-a[nz] / sigma[nz])
    # breakpoints that overflow lie beyond every finite probe; the limits cover them
    bps = bps[np.isfinite(bps)]
    probes = [0.0] if bps.size == 0 else [bps[0] - 1.0, bps[-1] + 1.0]
    probes += [0.5 * lo + 0.5 * hi for lo, hi in zip(bps[:-1], bps[1:])]
    out: list[tuple[bool, ...]] = []
    with np.errstate(over="ignore", invalid="ignore"):
        patterns = [(a + lam * sigma) > 0 for lam in probes]
    for sign in (-1.0, 1.0):
        patterns.append(np.where(nz, sign * sigma > 0, a > 0))
    for pat in patterns:
        v = tuple(bool(t) for t in pat)
        if v not in out:
            out.append(v)
    return out


def _piece_vertices(piece: Piece, support: tuple[int, ...], maximize: bool) -> list[tuple[bool, ...]]:
    idx = list(support)
    a = piece.g[idx]
    sig = piece.d[idx]
    quadratic = piece.kappa != 0.0
    if not maximize:
        a = -a
    return candidate_vertices(a, sig, quadratic)


def prune_vertices(pair: EnvelopePair) -> dict[str, list[list[tuple[bool, ...]]]]:
    """Per piece, the vertices at which the over (max) / under (min) bound can occur."""
    return {
        "over": [_piece_vertices(p, pair.support, True) for p in pair.over],
        "under": [_piece_vertices(p, pair.support, False) for p in pair.under],
    }


def all_vertices(pair: EnvelopePair) -> list[tuple[bool, ...]]:
    return list(itertools.product((False, True), repeat=len(pair.support)))


def vertex_point(pair: EnvelopePair, vertex, z_lo, z_hi) -> np.ndarray:
    """Dense z with the support coordinates set by ``vertex`` (others at the lower bound)."""
    z = np.array(z_lo, dtype=float, copy=True)
    for j, up in zip(pair.support, vertex):
        if up:
            z[j] = z_hi[j]
    return z


def box_bound(pair: EnvelopePair, z_lo, z_hi, u, prune: bool = True) -> BoxBound:
    """Upper bound of the over-estimator and lower bound of the under-estimator on a box.

    ``z_lo`` and ``z_hi`` are dense length-q vectors; only coordinates in the
    envelope support matter.
    """
    z_lo = np.asarray(z_lo, dtype=float)
    z_hi = np.asarray(z_hi, dtype=float)
    if np.any(z_lo[list(pair.support)] > z_hi[list(pair.support)]):
        raise EmptyBox("box has a lower bound above its upper bound")
    u = np.asarray(u, dtype=float)
    if prune:
        sets = prune_vertices(pair)
        over_sets, under_sets = sets["over"], sets["under"]
    else:
        full = all_vertices(pair)
        over_sets = [full] * len(pair.over)
        under_sets = [full] * len(pair.under)
    vu, vl = -math.inf, math.inf
    active: list[tuple[bool, ...]] = []
    for pieces, sets, upper in ((pair.over, over_sets, True), (pair.under, under_sets, False)):
        for piece, verts in zip(pieces, sets):
            for v in verts:
                y = np.concatenate([vertex_point(pair, v, z_lo, z_hi), u])
                val = piece.value(y)
                if upper:
                    vu = max(vu, val)
                else:
                    vl = min(vl, val)
                if v not in active:
                    active.append(v)
    return BoxBound(vu, vl, tuple(active))
