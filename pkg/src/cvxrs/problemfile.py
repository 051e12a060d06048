"""Problem files: a JSON document validated against a strict schema.

Top-level keys (unknown keys are rejected)::

    schema_version  1
    name            free text
    m, r            explicit and uncertain dimensions (r defaults to 0)
    M, C            matrices; L, B, D optional
    basis           list of {kind, args, w_index?, rho?}
    nominal         {x0, u0, w0?}
    uncertainty     {kind: "none"} | {kind: "norm_ball", norm, radius, support}
                    | {kind: "interval", lower, upper}
    objective       {c, constant?}
    u_bounds        optional {lower, upper}

A matrix is either a dense list of rows or ``{"shape": [rows, cols],
"triplets": [[i, j, value], ...]}``.  An affine argument is ``{"z": {"j":
coef}, "u": {"i": coef}, "offset": c}`` with zero-based string indices.
"""
from __future__ import annotations

import json
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from .catalog import Problem
from .errors import DimensionMismatch, ParseError, ValidationError
from .model import Affine, BasisFunction, DecomposedSystem, Kind, nominal_point, validate
from .restriction import AdditiveNormBall, IntervalParametric, NoUncertainty, Objective

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SparseMatrix(_Strict):
    shape: tuple[int, int]
    triplets: list[tuple[int, int, float]] = []


Matrix = Union[list[list[float]], SparseMatrix]


class AffineSpec(_Strict):
    z: dict[int, float] = {}
    u: dict[int, float] = {}
    offset: float = 0.0


class BasisSpec(_Strict):
    kind: Kind
    args: list[AffineSpec]
    w_index: int | None = None
    rho: tuple[float, float] = (1.0, 1.0)


class NominalSpec(_Strict):
    x0: list[float]
    u0: list[float]
    w0: list[float] | None = None


class NoUncertaintySpec(_Strict):
    kind: Literal["none"] = "none"


class NormBallSpec(_Strict):
    kind: Literal["norm_ball"]
    norm: Literal["two", "inf"] = "two"
    radius: float | None = None
    support: Literal["exact", "table"] = "exact"


class IntervalSpec(_Strict):
    kind: Literal["interval"]
    lower: list[float]
    upper: list[float]


UncertaintySpec = Annotated[Union[NoUncertaintySpec, NormBallSpec, IntervalSpec], Field(discriminator="kind")]


class ObjectiveSpec(_Strict):
    c: list[float]
    constant: float = 0.0


class BoundsSpec(_Strict):
    lower: list[float]
    upper: list[float]


class ProblemFile(_Strict):
    schema_version: Literal[1]
    name: str = "problem"
    m: int = Field(ge=0)
    r: int = Field(default=0, ge=0)
    M: Matrix
    C: Matrix
    L: Matrix | None = None
    B: Matrix | None = None
    D: Matrix | None = None
    basis: list[BasisSpec]
    nominal: NominalSpec
    uncertainty: UncertaintySpec = NoUncertaintySpec()
    objective: ObjectiveSpec
    u_bounds: BoundsSpec | None = None


# ---------------------------------------------------------------------------


def _dense(mat: Matrix | None, field: str) -> np.ndarray | None:
    if mat is None:
        return None
    if isinstance(mat, SparseMatrix):
        out = np.zeros(mat.shape)
        for i, j, v in mat.triplets:
            if not (0 <= i < mat.shape[0] and 0 <= j < mat.shape[1]):
                raise ParseError(f"triplet ({i}, {j}) outside shape {mat.shape}", field=field)
            out[i, j] += v
        return out
    rows = {len(r) for r in mat}
    if len(rows) > 1:
        raise ParseError("ragged matrix rows", field=field)
    return np.array(mat, dtype=float).reshape(len(mat), rows.pop() if rows else 0)


def _affine(spec: AffineSpec) -> Affine:
    return Affine.of(spec.z, spec.u, spec.offset)


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return None


def parse_problem(text: str) -> Problem:
    """Parse and validate a problem file.

    Raises :class:`ParseError` (with line and field when known) for malformed
    input and :class:`ValidationError` when the problem is well-formed but
    fails the dimension, rank or nominal-feasibility checks.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    try:
        spec = ProblemFile.model_validate(raw)
    except PydanticValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err["loc"])
        key = next((str(p) for p in reversed(err["loc"]) if isinstance(p, str)), None)
        line = _line_of(text, key) if key else None
        raise ParseError(err["msg"], line=line, field=loc or None) from None
    return problem_from_spec(spec)


def problem_from_spec(spec: ProblemFile) -> Problem:
    M, C = _dense(spec.M, "M"), _dense(spec.C, "C")
    L, B, D = _dense(spec.L, "L"), _dense(spec.B, "B"), _dense(spec.D, "D")
    if L is None:
        L = np.zeros((0, M.shape[1]))
    basis = []
    for k, b in enumerate(spec.basis):
        try:
            basis.append(BasisFunction(b.kind, tuple(_affine(a) for a in b.args), b.w_index, b.rho))
        except ValueError as exc:
            raise ParseError(str(exc), field=f"basis.{k}") from None
    try:
        sys = DecomposedSystem(M=M, L=L, C=C, basis=tuple(basis), m=spec.m, r=spec.r, B=B, D=D)
        pt = nominal_point(sys, spec.nominal.x0, spec.nominal.u0, spec.nominal.w0)
    except DimensionMismatch as exc:
        raise ValidationError(str(exc)) from None
    rep = validate(sys, pt)
    if not rep.ok:
        raise ValidationError("; ".join(rep.messages))
    unc = spec.uncertainty
    if isinstance(unc, NormBallSpec):
        model = AdditiveNormBall(unc.norm, unc.radius, unc.support)
    elif isinstance(unc, IntervalSpec):
        model = IntervalParametric(tuple(unc.lower), tuple(unc.upper))
    else:
        model = NoUncertainty()
    if len(spec.objective.c) != spec.m:
        raise ValidationError(f"objective has {len(spec.objective.c)} coefficients, expected {spec.m}")
    bounds = None
    if spec.u_bounds is not None:
        bounds = (np.array(spec.u_bounds.lower, dtype=float), np.array(spec.u_bounds.upper, dtype=float))
        if bounds[0].shape != (spec.m,) or bounds[1].shape != (spec.m,):
            raise ValidationError("u_bounds must have m entries on each side")
    return Problem(spec.name, sys, pt, Objective(tuple(spec.objective.c), spec.objective.constant), bounds, model)


# ---------------------------------------------------------------------------


def _affine_dict(a: Affine) -> dict:
    out: dict = {}
    if a.z:
        out["z"] = {str(j): c for j, c in a.z}
    if a.u:
        out["u"] = {str(i): c for i, c in a.u}
    if a.offset:
        out["offset"] = a.offset
    return out


def problem_to_dict(p: Problem) -> dict:
    sys = p.sys
    out: dict = {
        "schema_version": SCHEMA_VERSION,
        "name": p.name,
        "m": sys.m,
        "r": sys.r,
        "M": sys.M.tolist(),
        "C": sys.C.tolist(),
    }
    if sys.s:
        out["L"] = sys.L.tolist()
    if sys.r:
        out["B"] = sys.B.tolist()
        if sys.s:
            out["D"] = sys.D.tolist()
    basis = []
    for b in sys.basis:
        entry: dict = {"kind": b.kind.value, "args": [_affine_dict(a) for a in b.args]}
        if b.w_index is not None:
            entry["w_index"] = b.w_index
        if b.rho != (1.0, 1.0):
            entry["rho"] = list(b.rho)
        basis.append(entry)
    out["basis"] = basis
    nominal = {"x0": p.pt.x0.tolist(), "u0": p.pt.u0.tolist()}
    if sys.r:
        nominal["w0"] = p.pt.w0.tolist()
    out["nominal"] = nominal
    unc = p.uncertainty
    if isinstance(unc, AdditiveNormBall):
        out["uncertainty"] = {"kind": "norm_ball", "norm": unc.norm, "radius": unc.radius, "support": unc.support}
    elif isinstance(unc, IntervalParametric):
        out["uncertainty"] = {"kind": "interval", "lower": list(unc.lower), "upper": list(unc.upper)}
    else:
        out["uncertainty"] = {"kind": "none"}
    out["objective"] = {"c": list(p.objective.c), "constant": p.objective.constant}
    if p.u_bounds is not None:
        out["u_bounds"] = {"lower": np.asarray(p.u_bounds[0]).tolist(), "upper": np.asarray(p.u_bounds[1]).tolist()}
    return out


def dump_problem(p: Problem) -> str:
    return json.dumps(problem_to_dict(p), indent=2)


__all__ = ["ProblemFile", "SCHEMA_VERSION", "dump_problem", "parse_problem", "problem_from_spec", "problem_to_dict"]
