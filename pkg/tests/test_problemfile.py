import json

import numpy as np
import pytest

from cvxrs import catalog
from cvxrs.errors import ParseError, ValidationError
from cvxrs.model import evaluate_f, evaluate_h
from cvxrs.problemfile import dump_problem, parse_problem, problem_to_dict

NAMES = ["quadratic", "poly-chain:10,4", "park-poly:a", "netflow", "disk"]


@pytest.mark.parametrize("name", NAMES)
def test_round_trip(name, rng):
    p = catalog.get(name)
    text = dump_problem(p)
    q = parse_problem(text)
    assert dump_problem(q) == text
    for _ in range(5):
        x = p.pt.x0 + rng.standard_normal(p.sys.n)
        u = p.pt.u0 + rng.standard_normal(p.sys.m)
        assert np.array_equal(evaluate_f(p.sys, x, u, p.pt.w0), evaluate_f(q.sys, x, u, q.pt.w0))
        assert np.array_equal(evaluate_h(p.sys, x, u, p.pt.w0), evaluate_h(q.sys, x, u, q.pt.w0))


def _doc():
    return problem_to_dict(catalog.quadratic())


def test_sparse_matrix_equals_dense():
    doc = _doc()
    doc["L"] = {"shape": [2, 4], "triplets": [[0, 2, 1.0], [1, 3, 1.0]]}
    q = parse_problem(json.dumps(doc))
    assert np.array_equal(q.sys.L, catalog.quadratic().sys.L)


def test_json_syntax_error_reports_line():
    text = '{\n  "schema_version": 1,\n  "m": 2,,\n}'
    with pytest.raises(ParseError) as exc:
        parse_problem(text)
    assert exc.value.line == 3


def test_unknown_key_reports_field_and_line():
    doc = _doc()
    doc["bogus"] = 1
    text = json.dumps(doc, indent=2)
    with pytest.raises(ParseError) as exc:
        parse_problem(text)
    assert exc.value.field == "bogus"
    assert text.splitlines()[exc.value.line - 1].strip().startswith('"bogus"')


def test_schema_version_checked():
    doc = _doc()
    doc["schema_version"] = 2
    with pytest.raises(ParseError):
        parse_problem(json.dumps(doc))


def test_unknown_basis_kind():
    doc = _doc()
    doc["basis"][0]["kind"] = "tanh"
    with pytest.raises(ParseError) as exc:
        parse_problem(json.dumps(doc))
    assert exc.value.field.startswith("basis.0")


def test_dimension_mismatch_is_validation_error():
    doc = _doc()
    doc["M"] = [[1.0, 1.0, 0.0]]
    with pytest.raises(ValidationError):
        parse_problem(json.dumps(doc))


def test_infeasible_nominal_is_validation_error():
    doc = _doc()
    doc["nominal"]["x0"] = [1.0]
    with pytest.raises(ValidationError):
        parse_problem(json.dumps(doc))


def test_rank_deficient_C():
    doc = _doc()
    doc["C"] = [[0.0]]
    with pytest.raises(ValidationError):
        parse_problem(json.dumps(doc))


def test_objective_length_checked():
    doc = _doc()
    doc["objective"]["c"] = [1.0]
    with pytest.raises(ValidationError):
        parse_problem(json.dumps(doc))
