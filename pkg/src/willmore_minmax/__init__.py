"""Discrete viscosity-relaxed Willmore energy on triangulated spheres.

Modules: ``mesh`` (reference spheres, immersions, discrete geometry, Möbius
maps), ``gauge`` (conformal factor, Aubin balancing, Onofri functionals),
``energy`` (W, smoother, relaxed energy), ``variation`` (gradients, first
variations, conservation laws, residues), ``minmax`` (path width relaxation
and σ-annealing), ``fixtures``, ``io`` and ``cli``.
"""

__version__ = "0.1.0"

from .energy import EnergyBreakdown, ViscosityParams, relaxed_energy, smoother, willmore
from .errors import (
    CheckFailed,
    ConvergenceError,
    GaugeError,
    GeometryError,
    MeshIOError,
    ParameterError,
    WillmoreError,
)
from .gauge import GaugeState, aubin_balance, conformal_factor, onofri_energy
from .mesh import Immersion, MobiusR3, MobiusS2, TriangulatedSphere, build_icosphere, induced_geometry

__all__ = [
    "CheckFailed",
    "ConvergenceError",
    "EnergyBreakdown",
    "GaugeError",
    "GaugeState",
    "GeometryError",
    "Immersion",
    "MeshIOError",
    "MobiusR3",
    "MobiusS2",
    "ParameterError",
    "TriangulatedSphere",
    "ViscosityParams",
    "WillmoreError",
    "aubin_balance",
    "build_icosphere",
    "conformal_factor",
    "induced_geometry",
    "onofri_energy",
    "relaxed_energy",
    "smoother",
    "willmore",
]
