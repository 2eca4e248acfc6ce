"""Cached meshes and small numerical helpers shared by the test modules."""

from __future__ import annotations

import functools
import math

import numpy as np

from willmore_minmax.fixtures import make_fixture
from willmore_minmax.mesh import Immersion, TriangulatedSphere, build_icosphere

FOUR_PI = 4.0 * math.pi


@functools.lru_cache(maxsize=None)
def ico(level: int) -> TriangulatedSphere:
    return build_icosphere(level)


@functools.lru_cache(maxsize=None)
def fixture(spec: str, level: int) -> Immersion:
    return make_fixture(spec, level)


def unit_sphere(level: int) -> Immersion:
    m = ico(level)
    return Immersion(m, m.vertices)


def observed_orders(values) -> list[float]:
    """log2 ratios of successive values (one icosphere level halves the mesh size)."""
    v = [float(x) for x in values]
    return [math.log2(a / b) for a, b in zip(v, v[1:])]


def decreases_at_order(values, order: float = 1.0, floor: float = 1e-7) -> bool:
    """True when every refinement step gains ``order``, or the values already sit at roundoff.

    A residual that is identically zero in exact arithmetic is dominated by
    roundoff, which grows slowly with the vertex count; ``floor`` bounds it.
    """
    v = [float(x) for x in values]
    if max(v) < floor:
        return True
    return all(o >= order for o in observed_orders(v))


# Acceptance outcomes keyed by criterion number: (passed, detail).  Filled by
# test_acceptance.py and printed at the end of the run by conftest.py.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_TITLES = {
    1: "round-sphere energies and runtime",
    2: "conformal invariance of W under inversion",
    3: "dilation invariance of W + Onofri",
    4: "Onofri and Ghoussoub-Lin nonnegativity corpus",
    5: "Aubin balance postcondition, round trip, runtime",
    6: "analytic gradient against finite differences",
    7: "criticality and conservation residuals",
    8: "loop residues",
    9: "inverted catenoid W = 8 pi",
    10: "minmax harness",
    11: "sigma derivative and monotonicity",
    12: "eversion path report",
}
