import math

import numpy as np
import pytest

from cvxrs import catalog
from cvxrs.model import validate


@pytest.mark.parametrize("spec", ["quadratic", "poly-chain", "poly-chain:6,3", "poly-chain:n=4,k=4",
                                  "park-poly:a", "park-poly:b", "park-poly:c", "netflow", "netflow:n=6,width=0.05",
                                  "disk", "disk:radius=3"])
def test_catalog_anchors_validate(spec):
    p = catalog.get(spec)
    assert validate(p.sys, p.pt).ok


def test_lookup_errors():
    with pytest.raises(KeyError):
        catalog.get("nope")
    with pytest.raises(ValueError):
        catalog.get("poly-chain:4,5")
    with pytest.raises(ValueError):
        catalog.get("park-poly:z")


def test_quadratic_roots_closed_form():
    assert catalog.quadratic_roots((0.0, -1.0)) == [-1.0, 1.0]
    assert catalog.quadratic_roots((0.0, 1.0)) == []
    r = catalog.quadratic_roots((4.0, 1.0))
    assert r[1] == pytest.approx(-2 + math.sqrt(3))


def test_ring_incidence_columns_sum_to_zero():
    E = catalog.ring_incidence(5)
    assert np.allclose(E.sum(axis=0), 0) and np.all(np.abs(E).sum(axis=0) == 2)
