"""Sample immersions of the icosphere used by tests, benchmarks and the CLI.

Fixture names are parsed from ``name[:param[:param...]]`` strings, e.g.
``ellipsoid:1:1:2`` or ``bump-sphere:0.2``.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ParameterError
from .mesh import Immersion, MobiusS2, TriangulatedSphere, build_icosphere


def _polar(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    phi = np.arccos(np.clip(p[:, 2], -1.0, 1.0))
    theta = np.arctan2(p[:, 1], p[:, 0])
    return phi, theta


def sphere(mesh: TriangulatedSphere, radius: float = 1.0) -> Immersion:
    return Immersion(mesh, radius * mesh.vertices)


def ellipsoid(mesh: TriangulatedSphere, a: float, b: float, c: float) -> Immersion:
    """Radial (non-conformal) parametrization ``p -> diag(a, b, c) p``."""
    if min(a, b, c) <= 0:
        raise ParameterError("ellipsoid semi-axes must be positive")
    return Immersion(mesh, mesh.vertices * np.array([a, b, c], float))


def conformal_spheroid(mesh: TriangulatedSphere, a: float, c: float) -> Immersion:
    """Spheroid with semi-axes (a, a, c) parametrized conformally over the sphere.

    A point at polar angle ``φ`` is sent to the spheroid point at parameter
    angle ``t`` with equal isothermal coordinate,
    ``∫ sqrt(a² cos² t + c² sin² t) / (a sin t) dt = log tan(φ/2)``,
    so the map is conformal up to discretization error.
    """
    if a <= 0 or c <= 0:
        raise ParameterError("spheroid semi-axes must be positive")
    k = c / a

    def rhs(t, y):
        return [math.sin(y[0]) / math.sin(t) * math.sqrt(math.cos(t) ** 2 + (k * math.sin(t)) ** 2)]

    eps = 1e-9
    up = solve_ivp(rhs, (math.pi / 2, eps), [math.pi / 2], rtol=1e-12, atol=1e-14, dense_output=True)
    down = solve_ivp(rhs, (math.pi / 2, math.pi - eps), [math.pi / 2], rtol=1e-12, atol=1e-14, dense_output=True)
    ts = np.concatenate([np.linspace(eps, math.pi / 2, 20001)[:-1], np.linspace(math.pi / 2, math.pi - eps, 20001)])
    phis = np.where(ts < math.pi / 2, up.sol(ts)[0], down.sol(ts)[0])
    phis = np.concatenate([[0.0], phis, [math.pi]])
    ts = np.concatenate([[0.0], ts, [math.pi]])
    phi, theta = _polar(mesh.vertices)
    t = np.interp(phi, phis, ts)
    x = np.stack([a * np.sin(t) * np.cos(theta), a * np.sin(t) * np.sin(theta), c * np.cos(t)], 1)
    return Immersion(mesh, x)


def inverted_catenoid(mesh: TriangulatedSphere) -> Immersion:
    """Catenoid in conformal coordinates inverted in the unit sphere.

    The sphere minus its poles is mapped conformally onto the catenoid
    ``(cosh s cos θ, cosh s sin θ, s)`` through ``s = log tan(φ/2)``; the
    inversion ``X / |X|²`` closes both ends at the origin, so the two poles
    land on the same point.
    """
    phi, theta = _polar(mesh.vertices)
    out = np.zeros((mesh.n_vertices, 3))
    inner = (phi > 0) & (phi < math.pi)
    s = np.log(np.tan(0.5 * phi[inner]))
    x = np.stack([np.cosh(s) * np.cos(theta[inner]), np.cosh(s) * np.sin(theta[inner]), s], 1)
    out[inner] = x / np.einsum("ij,ij->i", x, x)[:, None]
    return Immersion(mesh, out)


def bump_sphere(mesh: TriangulatedSphere, amp: float, width: float = 0.35) -> Immersion:
    """Unit sphere with a Gaussian radial bump centred at the north pole."""
    p = mesh.vertices
    d2 = np.sum((p - np.array([0.0, 0.0, 1.0])) ** 2, 1)
    r = 1.0 + amp * np.exp(-d2 / (2.0 * width**2))
    if np.any(r <= 0):
        raise ParameterError("bump amplitude makes the radius non-positive")
    return Immersion(mesh, r[:, None] * p)


def perturbation_field(mesh: TriangulatedSphere, seed: int, degree: int = 3) -> np.ndarray:
    """Smooth random radial profile: polynomial of degree ``degree`` in x, y, z with max |q| = 1."""
    rng = np.random.default_rng(seed)
    p = mesh.vertices
    q = np.zeros(len(p))
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            for k in range(degree + 1 - i - j):
                if i + j + k:
                    q += rng.standard_normal() * p[:, 0] ** i * p[:, 1] ** j * p[:, 2] ** k
    return q / np.abs(q).max()


def perturbed_sphere(mesh: TriangulatedSphere, amp: float, seed: int) -> Immersion:
    """``r = 1 + amp q(p)`` for a smooth random profile ``q``."""
    return Immersion(mesh, (1.0 + amp * perturbation_field(mesh, seed))[:, None] * mesh.vertices)


def mobius_sphere(mesh: TriangulatedSphere, a: float, axis=(0.0, 0.0, 1.0)) -> Immersion:
    """Round unit sphere sampled through the Möbius map with ball parameter ``a·axis``."""
    ax = np.asarray(axis, float)
    return Immersion(mesh, MobiusS2(a * ax / np.linalg.norm(ax))(mesh.vertices))


_BUILDERS: dict[str, tuple[Callable, tuple[type, ...], tuple]] = {
    "sphere": (sphere, (float,), (1.0,)),
    "ellipsoid": (ellipsoid, (float, float, float), (1.0, 1.0, 2.0)),
    "conformal-spheroid": (conformal_spheroid, (float, float), (1.0, 1.5)),
    "inverted-catenoid": (inverted_catenoid, (), ()),
    "bump-sphere": (bump_sphere, (float, float), (0.2, 0.35)),
    "perturbed-sphere": (perturbed_sphere, (float, int), (0.05, 0)),
    "mobius-sphere": (mobius_sphere, (float,), (0.3,)),
}


def fixture_names() -> list[str]:
    return sorted(_BUILDERS)


def make_fixture(spec: str, level: int) -> Immersion:
    """Build the fixture described by ``name[:param...]`` on an icosphere of ``level``."""
    name, *raw = spec.split(":")
    if name not in _BUILDERS:
        raise ParameterError(f"unknown fixture {name!r}; choose from {', '.join(fixture_names())}")
    fn, types, defaults = _BUILDERS[name]
    if len(raw) > len(types):
        raise ParameterError(f"fixture {name!r} takes at most {len(types)} parameters")
    try:
        args = [typ(v) for typ, v in zip(types, raw)] + list(defaults[len(raw):])
    except ValueError as exc:
        raise ParameterError(f"bad fixture parameter in {spec!r}") from exc
    return fn(build_icosphere(level), *args)
