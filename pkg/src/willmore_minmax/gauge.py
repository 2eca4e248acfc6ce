"""Conformal factor relative to the unit-volume round metric, Aubin balancing,
Onofri-type functionals and the Liouville residual."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from . import functional
from .errors import ConvergenceError, GaugeError, ParameterError
from .mesh import (
    Immersion,
    MobiusS2,
    angle_defects,
    ball_translation,
    check_faces,
    cotan_laplacian,
    face_normals_and_areas,
    vertex_areas,
)

logger = logging.getLogger(__name__)

K_G0 = 4.0 * np.pi  # curvature of g0 = g_{S^2} / 4 pi
BALANCE_TOL = 1e-9
BALANCE_MAX_ITER = 200
BALANCE_DAMPING = 0.5
# Balanced-gauge precondition used by functionals that require an Aubin gauge.
BALANCE_CHECK_TOL = 1e-6


def tol_onofri(level: int) -> float:
    """Onofri discretization tolerance: 5e-3 at level 4, halved per level."""
    return 5e-3 * 2.0 ** (4 - level)


@dataclass(frozen=True, eq=False)
class GaugeState:
    """Conformal factor ``alpha`` with respect to ``g0 = m^* g_{S^2} / 4 pi``.

    ``cells`` holds the g0 mass of each vertex cell (sums to 1) and
    ``g0_density`` the same mass divided by the reference vertex area.
    """

    alpha: np.ndarray
    mobius: MobiusS2
    g0_density: np.ndarray
    cells: np.ndarray
    source: str = ""

    def to_json(self) -> dict:
        return {"mobius": self.mobius.to_json(), "alpha": self.alpha.tolist()}

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.mobius.a.tobytes())
        h.update(self.mobius.rot.tobytes())
        h.update(self.alpha.tobytes())
        return h.hexdigest()[:16]


def g0_cells(mesh, m: MobiusS2) -> np.ndarray:
    """Normalized vertex-cell masses of the reference mesh pushed by ``m``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        y = m(mesh.vertices)
        y /= np.linalg.norm(y, axis=1)[:, None]
    if not np.all(np.isfinite(y)):
        raise GaugeError(f"degenerate g0 cell: ball parameter |a| = {np.linalg.norm(m.a):.12f}")
    _, fa = face_normals_and_areas(y, mesh.faces)
    try:
        check_faces(y, mesh.faces, fa)
    except Exception as exc:  # geometry error on the pushed sphere
        raise GaugeError(f"degenerate g0 cell: ball parameter |a| = {np.linalg.norm(m.a):.6f}") from exc
    cells = vertex_areas(y, mesh.faces)
    if not np.all(cells > 0):
        raise GaugeError("g0 cell with non-positive mass")
    return cells / cells.sum()


def conformal_factor(im: Immersion, m: MobiusS2 | None = None) -> GaugeState:
    """Discrete conformal factor ``alpha_v = 1/2 log(A_v / c_v)``."""
    m = MobiusS2.identity() if m is None else m
    cells = g0_cells(im.mesh, m)
    va = vertex_areas(im.positions, im.mesh.faces)
    check_faces(im.positions, im.mesh.faces)
    alpha = 0.5 * np.log(va / cells)
    return GaugeState(alpha, m, cells / im.mesh.reference_vertex_areas, cells, im.digest())


def conformal_barycenter(points: np.ndarray, weights: np.ndarray, m: MobiusS2) -> np.ndarray:
    """Normalized barycenter of the weighted point measure pushed by ``m``."""
    return weights @ m(points) / weights.sum()


def balance_measure(
    points: np.ndarray,
    weights: np.ndarray,
    *,
    tol: float = BALANCE_TOL,
    max_iter: int = BALANCE_MAX_ITER,
    damping: float = BALANCE_DAMPING,
) -> tuple[MobiusS2, int]:
    """Möbius map moving the conformal barycenter of a point measure to 0.

    Damped fixed point: ``m <- T_{-damping * B} o m`` where ``B`` is the
    current barycenter and ``T`` the ball translation.
    """
    if not 0 < damping <= 1:
        raise ParameterError("damping must lie in (0, 1]")
    w = np.asarray(weights, float)
    if np.any(w < 0) or not w.sum() > 0:
        raise ParameterError("weights must be non-negative with positive total")
    m = MobiusS2.identity()
    bnorm = np.inf
    for it in range(max_iter + 1):
        b = conformal_barycenter(points, w, m)
        bnorm = float(np.linalg.norm(b))
        if bnorm < tol:
            return m, it
        step = -damping * b
        try:
            m = MobiusS2(step).compose(m)
        except ParameterError as exc:
            raise ConvergenceError(f"balancing left the ball (|B| = {bnorm:.3e})", residual=bnorm) from exc
    raise ConvergenceError(
        f"conformal barycenter did not converge in {max_iter} iterations (|B| = {bnorm:.3e})", residual=bnorm
    )


def aubin_balance(im: Immersion, *, tol: float = BALANCE_TOL, max_iter: int = BALANCE_MAX_ITER) -> GaugeState:
    """Aubin gauge: Möbius normalization with vanishing conformal barycenter."""
    va = vertex_areas(im.positions, im.mesh.faces)
    m, iters = balance_measure(im.mesh.vertices, va, tol=tol, max_iter=max_iter)
    logger.debug("balanced in %d iterations, |a| = %.3e", iters, np.linalg.norm(m.a))
    return conformal_factor(im, m)


def barycenter_norm(im: Immersion, g: GaugeState) -> float:
    """``|sum_v A_v m(p_v)| / A``, the relative conformal barycenter of a gauge."""
    va = vertex_areas(im.positions, im.mesh.faces)
    return float(np.linalg.norm(conformal_barycenter(im.mesh.vertices, va, g.mobius)))


def require_consistent(im: Immersion, g: GaugeState, atol: float = 1e-8) -> None:
    if len(g.alpha) != im.mesh.n_vertices:
        raise GaugeError("gauge size does not match the immersion")
    va = vertex_areas(im.positions, im.mesh.faces)
    expect = 0.5 * np.log(va / g.cells)
    if not np.allclose(expect, g.alpha, rtol=0.0, atol=atol):
        raise GaugeError("conformal factor is inconsistent with the immersion")


def require_balanced(im: Immersion, g: GaugeState, tol: float = BALANCE_CHECK_TOL) -> None:
    require_consistent(im, g)
    b = barycenter_norm(im, g)
    if b >= tol:
        raise GaugeError(f"gauge is not balanced (|B|/A = {b:.3e} >= {tol:.1e})")


@dataclass(frozen=True)
class OnofriReport:
    dirichlet: float
    linear: float
    log_area: float
    onofri_value: float
    tolerance: float
    passed: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _terms(im: Immersion, g: GaugeState) -> functional.Forward:
    return functional.forward(im.positions, im.mesh.faces, g.cells)


def onofri_energy(im: Immersion, g: GaugeState, level: int | None = None) -> OnofriReport:
    """Discrete Onofri functional ``1/2 int|d alpha|^2 + 4pi int alpha - 2pi log int e^{2 alpha}``."""
    require_consistent(im, g)
    fw = _terms(im, g)
    lvl = im.mesh.subdivision_level if level is None else level
    tol = tol_onofri(lvl if lvl >= 0 else 4)
    val = fw.onofri
    return OnofriReport(fw.D, fw.Lin, fw.LogA, val, tol, bool(val >= -tol))


def ghoussoub_lin_check(im: Immersion, g: GaugeState) -> float:
    """``1/3 int|d alpha|^2 + 4pi int alpha - 2pi log int e^{2 alpha}`` in an Aubin gauge."""
    require_balanced(im, g)
    fw = _terms(im, g)
    dirichlet_integral = 2.0 * fw.D
    return dirichlet_integral / 3.0 + fw.Lin - fw.LogA


@dataclass(frozen=True)
class LiouvilleResidual:
    field: np.ndarray
    l1: float


def liouville_residual(im: Immersion, g: GaugeState) -> LiouvilleResidual:
    """Residual of ``-Δα = K_Φ - e^{-2α} K_{g0}`` per unit area.

    The g0 curvature term uses the angle defects of the pushed reference mesh
    (the discrete curvature of g0), so the residual integrates to zero.
    """
    require_consistent(im, g)
    x, faces = im.positions, im.mesh.faces
    lap = cotan_laplacian(x, faces)
    va = vertex_areas(x, faces)
    y = g.mobius(im.mesh.vertices)
    y /= np.linalg.norm(y, axis=1)[:, None]
    r = (lap @ g.alpha - angle_defects(x, faces) + angle_defects(y, faces)) / va
    return LiouvilleResidual(r, float(np.sum(np.abs(r) * va)))


def conformal_distortion(im: Immersion, g: GaugeState) -> np.ndarray:
    """Per-face quasi-conformal ratio (>= 1) of the affine map g0 mesh -> immersion."""
    y = g.mobius(im.mesh.vertices)
    y /= np.linalg.norm(y, axis=1)[:, None]
    f = im.mesh.faces
    src, dst = y[f], im.positions[f]
    e_src = np.stack([src[:, 1] - src[:, 0], src[:, 2] - src[:, 0]], 2)  # (F, 3, 2)
    e_dst = np.stack([dst[:, 1] - dst[:, 0], dst[:, 2] - dst[:, 0]], 2)
    # Intrinsic 2x2 Gram matrices; distortion from the generalized eigenvalues.
    g_src = np.einsum("fki,fkj->fij", e_src, e_src)
    g_dst = np.einsum("fki,fkj->fij", e_dst, e_dst)
    ev = np.linalg.eigvals(np.linalg.solve(g_src, g_dst)).real
    ev.sort(axis=1)
    return np.sqrt(ev[:, 1] / ev[:, 0])
