"""Gradients, first variations, conservation-law residuals and residues.

Sign conventions
----------------
Curvature-sensitive formulas here use the geometric mean curvature vector
``Hg = 1/2 Δ_g Φ`` (pointing toward the center of a round sphere), the
scalar ``hg = Hg . n`` and the second fundamental form ``II = ∂²Φ . n`` with
trace ``2 hg``.  These are the negatives of the fields stored on
:class:`~willmore_minmax.mesh.DiscreteGeometry` (which reports ``H = +1`` on
the outward unit sphere); ``n`` is the same outward normal in both.

A vector-valued 1-form on a face is stored as a (3, 3) matrix ``M`` acting on
tangent vectors, ``ω(v) = M v``.  The Hodge star is ``(*ω)(v) = ω(-n × v)``,
and the wedge of scalar 1-forms with vectors ``A``, ``B`` is ``(A × B) . n``.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import functional
from .energy import ViscosityParams
from .errors import ParameterError
from .gauge import K_G0, GaugeState, require_balanced, require_consistent
from .mesh import DiscreteGeometry, Immersion, face_gradient, induced_geometry, max_weighted_normals

logger = logging.getLogger(__name__)

FD_RELATIVE_STEP = 1e-5


# ----------------------------------------------------------------------------
# Variation fields
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VariationField:
    """Per-vertex vector field with its mesh analogue of the W^{2,4} norm."""

    w: np.ndarray
    norm_phi: float

    def to_json(self) -> dict:
        return {"w": self.w.tolist(), "norm_phi": self.norm_phi}


def variation_field(im: Immersion, w: np.ndarray, geo: DiscreteGeometry | None = None) -> VariationField:
    """Wrap ``w`` and compute ``(Σ (|Δw|⁴ + |dw|⁴ + |w|⁴) dvol)^{1/4}``."""
    w = np.asarray(w, float)
    if w.shape != (im.mesh.n_vertices, 3):
        raise ParameterError(f"variation field shape {w.shape} does not match the mesh")
    geo = induced_geometry(im) if geo is None else geo
    lap = (geo.laplacian @ w) / geo.vertex_areas[:, None]
    dw = face_gradient(w, geo.faces, geo.hat_gradients)
    total = (
        np.sum(np.sum(lap**2, 1) ** 2 * geo.vertex_areas)
        + np.sum(np.sum(dw**2, (1, 2)) ** 2 * geo.face_areas)
        + np.sum(np.sum(w**2, 1) ** 2 * geo.vertex_areas)
    )
    return VariationField(w, float(total) ** 0.25)


def _weights(p: ViscosityParams, weights: Sequence[float] | None) -> tuple[float, float, float]:
    return tuple(float(c) for c in (p.weights() if weights is None else weights))  # type: ignore[return-value]


def _eval(x: np.ndarray, faces: np.ndarray, cells: np.ndarray, cw: tuple[float, float, float]) -> float:
    fw = functional.forward(x, faces, cells if cw[2] else None)
    return cw[0] * fw.W + cw[1] * fw.S + cw[2] * fw.onofri


def grad_fd(
    im: Immersion,
    g: GaugeState,
    p: ViscosityParams,
    h: float | None = None,
    *,
    weights: Sequence[float] | None = None,
    relative_step: bool = False,
    workers: int | None = None,
) -> VariationField:
    """Central-difference gradient of the relaxed energy.

    ``h`` is the coordinate step; it is multiplied by the mesh diameter when
    ``relative_step`` is set.  Without ``h`` the step is
    ``FD_RELATIVE_STEP`` times the diameter.  The Möbius part of the gauge
    stays frozen; ``alpha`` is recomputed at every probe from the perturbed
    areas.  ``weights`` overrides the (W, smoother, Onofri) coefficients.
    """
    require_consistent(im, g)
    if h is None:
        h, relative_step = FD_RELATIVE_STEP, True
    h = float(h)
    if not h > 0:
        raise ParameterError("finite-difference step must be positive")
    step = h * im.diameter() if relative_step else h
    cw = _weights(p, weights)
    x0 = np.array(im.positions)
    faces, cells = im.mesh.faces, g.cells
    n = len(x0)

    def probe(i: int) -> np.ndarray:
        out = np.empty(3)
        x = x0.copy()
        for k in range(3):
            x[i, k] = x0[i, k] + step
            ep = _eval(x, faces, cells, cw)
            x[i, k] = x0[i, k] - step
            em = _eval(x, faces, cells, cw)
            x[i, k] = x0[i, k]
            out[k] = (ep - em) / (2.0 * step)
        return out

    if workers is None:
        workers = int(os.environ.get("WILLMORE_THREADS", "1") or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(probe, range(n)))
    else:
        rows = [probe(i) for i in range(n)]
    return variation_field(im, np.array(rows))


def grad_analytic(
    im: Immersion, g: GaugeState, p: ViscosityParams, *, weights: Sequence[float] | None = None
) -> VariationField:
    """Exact gradient of the discrete relaxed energy (frozen Möbius gauge)."""
    require_consistent(im, g)
    cw = _weights(p, weights)
    fw = functional.forward(im.positions, im.mesh.faces, g.cells if cw[2] else None)
    return variation_field(im, functional.backward(fw, cW=cw[0], cS=cw[1], cO=cw[2]))


def gradient_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """``‖analytic − fd‖∞ / ‖analytic‖∞`` over vertex coordinates."""
    scale = np.abs(analytic).max()
    return float(np.abs(analytic - fd).max() / scale) if scale > 0 else float(np.abs(fd).max())


@dataclass(frozen=True)
class StepSweep:
    steps: tuple[float, ...]
    errors: tuple[float, ...]
    c1: float
    c2: float
    worst_ratio: float
    fits: bool


def fit_fd_error_model(steps: Sequence[float], errors: Sequence[float], roundoff: float = 1e-9) -> StepSweep:
    """Fit ``e(h) ≈ C₁ h² + C₂ roundoff / h`` with ``C₁, C₂ ≥ 0``.

    The fit minimizes relative residuals; it is accepted when every observed
    error lies within a factor 10 of the model.
    """
    from scipy.optimize import nnls

    hs = np.asarray(steps, float)
    es = np.asarray(errors, float)
    basis = np.stack([hs**2, roundoff / hs], 1) / es[:, None]
    coef, _ = nnls(basis, np.ones_like(es))
    model = np.stack([hs**2, roundoff / hs], 1) @ coef
    with np.errstate(divide="ignore"):
        ratio = np.maximum(model / es, es / model)
    worst = float(np.max(ratio)) if np.all(model > 0) else float("inf")
    return StepSweep(tuple(hs), tuple(es), float(coef[0]), float(coef[1]), worst, bool(worst <= 10.0))


# ----------------------------------------------------------------------------
# Per-face helpers
# ----------------------------------------------------------------------------


def _skew(n: np.ndarray) -> np.ndarray:
    z = np.zeros(len(n))
    return np.stack(
        [np.stack([z, -n[:, 2], n[:, 1]], 1), np.stack([n[:, 2], z, -n[:, 0]], 1), np.stack([-n[:, 1], n[:, 0], z], 1)],
        1,
    )


def _star(m: np.ndarray, nf: np.ndarray) -> np.ndarray:
    return -np.einsum("fij,fjk->fik", m, _skew(nf))


def _face_mean(values: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return values[faces].mean(1)


@dataclass(frozen=True, eq=False)
class _Fields:
    """Geometric-sign curvature fields used by the smooth-formula cross-checks.

    Normals are Max-weighted and the mean curvature vector is taken as its
    normal part ``hg n``: the tangential noise of the cotangent vector and
    the first-order error of area-weighted normals would otherwise be
    amplified by the extra derivatives in these formulas.
    """

    geo: DiscreteGeometry
    normals: np.ndarray  # (V, 3)
    hvec: np.ndarray  # (V, 3) geometric mean curvature vector
    hs: np.ndarray  # (V,) geometric scalar mean curvature
    shape: np.ndarray  # (F, 3, 3) geometric-sign shape operator, dn = -S dΦ
    proj: np.ndarray  # (F, 3, 3) tangent projections
    dn: np.ndarray  # (F, 3, 3) face gradient of the vertex normals
    dh: np.ndarray  # (F, 3, 3) face gradient of hvec


def _fields(im: Immersion) -> _Fields:
    return _fields_from_geo(induced_geometry(im))


def _fields_from_geo(geo: DiscreteGeometry) -> _Fields:
    n = max_weighted_normals(geo.positions, geo.faces)
    hs = -np.einsum("ij,ij->i", geo.mean_curvature_vec, n)
    hvec = hs[:, None] * n
    nf = geo.face_normals
    proj = np.eye(3)[None] - nf[:, :, None] * nf[:, None, :]
    dn = face_gradient(n, geo.faces, geo.hat_gradients)
    tang = np.einsum("fij,fjk,fkl->fil", proj, dn, proj)
    shape = -0.5 * (tang + np.transpose(tang, (0, 2, 1)))
    dh = face_gradient(hvec, geo.faces, geo.hat_gradients)
    return _Fields(geo, n, hvec, hs, shape, proj, dn, dh)


def _frob(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("fij,fij->f", a, b)


# ----------------------------------------------------------------------------
# First variations
# ----------------------------------------------------------------------------


def first_variation_fH(
    im: Immersion,
    f: Callable[[np.ndarray], np.ndarray],
    f_prime: Callable[[np.ndarray], np.ndarray],
    w: VariationField | np.ndarray,
) -> float:
    """Per-face quadrature of the first variation of ``∫ f(H) dvol`` along ``w``.

    Using ``(*a) ∧ b = -<a, b> dvol`` the three wedge integrals become
    ``-½∫<d(f'(H) n), dw> + ∫ f'(H) <dn, dw> + ∫ f(H) <dΦ, dw>``.
    """
    wv = w.w if isinstance(w, VariationField) else np.asarray(w, float)
    fl = _fields(im)
    geo = fl.geo
    faces = geo.faces
    fp_v = np.asarray(f_prime(fl.hs), float)
    u = fp_v[:, None] * fl.normals
    du = face_gradient(u, faces, geo.hat_gradients)
    dw = face_gradient(wv, faces, geo.hat_gradients)
    fp_f = _face_mean(fp_v, faces)
    f_f = _face_mean(np.asarray(f(fl.hs), float), faces)
    div_w = np.einsum("fkk->f", dw)
    dens = -0.5 * _frob(du, dw) + fp_f * _frob(fl.dn, dw) + f_f * div_w
    return float(np.sum(dens * geo.face_areas))


@dataclass(frozen=True)
class OnofriVariation:
    exact: float
    structural: float
    terms: dict

    def to_json(self) -> dict:
        return asdict(self)


def first_variation_onofri(
    im: Immersion, g: GaugeState, w: VariationField | np.ndarray, *, literal_alpha_weight: bool = False
) -> OnofriVariation:
    """Derivative of the discrete Onofri functional along ``w``.

    ``exact`` differentiates the discrete functional.  ``structural``
    evaluates the smooth first-variation integrand per face: the Dirichlet and
    linear parts through

        (|dα|² *dΦ) ∧ dw − 2 (<dΦ, dα> *dα) ∧ dw + 2 (II ⌞ *dα) ∧ dw − K (e^{−2α} *dΦ) ∧ dw

    and the log-area part through the area variation.  The weight of the last
    term is ``e^{−2α}``, the value forced by dilation invariance;
    ``literal_alpha_weight`` switches it to ``α e^{−2α}`` for comparison.
    """
    require_balanced(im, g)
    wv = w.w if isinstance(w, VariationField) else np.asarray(w, float)
    fw = functional.forward(im.positions, im.mesh.faces, g.cells)
    exact = float(np.sum(functional.backward(fw, cW=0.0, cS=0.0, cO=1.0) * wv))

    fl = _fields(im)
    geo = fl.geo
    faces, nf, fa = geo.faces, geo.face_normals, geo.face_areas
    ga = face_gradient(g.alpha, faces, geo.hat_gradients)
    dw = face_gradient(wv, faces, geo.hat_gradients)
    div_w = np.einsum("fkk->f", dw)
    ga2 = np.einsum("fi,fi->f", ga, ga)
    t1 = -ga2 * div_w
    t2 = 2.0 * np.einsum("fk,fkd,fd->f", ga, dw, ga)
    z = np.cross(nf, ga)
    sz = np.einsum("fij,fj->fi", fl.shape, z)
    wn = np.einsum("fkd,fk->fd", dw, nf)
    t3 = 2.0 * np.einsum("fi,fi->f", np.cross(sz, wn), nf)
    e2a = np.exp(-2.0 * g.alpha)
    weight = g.alpha * e2a if literal_alpha_weight else e2a
    t4 = K_G0 * _face_mean(weight, faces) * div_w
    dA = float(np.sum(div_w * fa))
    parts = {k: float(np.sum(v * fa)) for k, v in (("dirichlet_flux", t1), ("gradient", t2), ("second_form", t3), ("volume", t4))}
    structural = 0.5 * sum(parts.values()) - 0.5 * K_G0 * dA / fw.area
    parts["log_area"] = -0.5 * K_G0 * dA / fw.area
    return OnofriVariation(exact, float(structural), parts)


# ----------------------------------------------------------------------------
# Conservation laws
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ConservationReport:
    dL_closedness: float
    scalar_law: float
    vector_law: float
    codazzi: float
    D_curl: float

    def to_json(self) -> dict:
        return asdict(self)


def _fhat(t: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """``l_σ f_σ`` and its derivative."""
    s2 = sigma**2
    return t**2 + s2 * (1.0 + t**2) ** 2, 2.0 * t + 4.0 * s2 * t * (1.0 + t**2)


def _vertex_loop(m: np.ndarray, geo: DiscreteGeometry) -> np.ndarray:
    """Integral of per-face constant 1-forms around each barycentric dual cell."""
    faces, x = geo.faces, geo.positions
    p = x[faces]
    n = len(x)
    out = np.zeros((n,) + m.shape[1:-1])
    for c in range(3):
        seg = 0.5 * (p[:, (c + 2) % 3] - p[:, (c + 1) % 3])
        val = np.einsum("f...d,fd->f...", m, seg)
        out += functional._scatter(faces[:, c], val, n)
    return out


def _l2_vertex(r: np.ndarray, va: np.ndarray) -> float:
    r2 = r**2 if r.ndim == 1 else np.sum(r**2, 1)
    return float(np.sqrt(np.sum(r2 * va)))


def _l2_face(r: np.ndarray, fa: np.ndarray) -> float:
    r2 = r**2 if r.ndim == 1 else np.sum(r**2, 1)
    return float(np.sqrt(np.sum(r2 * fa)))


def dL_form(im: Immersion, g: GaugeState, p: ViscosityParams, fl: _Fields | None = None) -> np.ndarray:
    """Per-face matrix of ``l_σ dL`` for the relaxed Lagrangian.

    The volume coefficient is ``-K e^{−2α} + K / A`` (the constant that makes
    the round sphere critical); see :func:`first_variation_onofri`.
    """
    fl = _fields(im) if fl is None else fl
    geo = fl.geo
    faces, nf = geo.faces, geo.face_normals
    l = p.l_sigma
    f_v, fp_v = _fhat(fl.hs, p.sigma)
    du = face_gradient(fp_v[:, None] * fl.normals, faces, geo.hat_gradients)
    ga = face_gradient(g.alpha, faces, geo.hat_gradients)
    ga2 = np.einsum("fi,fi->f", ga, ga)
    e2a = _face_mean(np.exp(-2.0 * g.alpha), faces)
    b = -2.0 * _face_mean(f_v, faces) + l * (ga2 - K_G0 * e2a + K_G0 / geo.total_area)
    z = np.cross(nf, ga)
    sz = np.einsum("fij,fj->fi", fl.shape, z)
    m = _star(du, nf) - 2.0 * _face_mean(fp_v, faces)[:, None, None] * _star(fl.dn, nf)
    m += b[:, None, None] * _star(fl.proj, nf)
    m += -2.0 * l * ga[:, :, None] * z[:, None, :]
    m += 2.0 * l * nf[:, :, None] * sz[:, None, :]
    return m


def conservation_residuals(im: Immersion, g: GaugeState, p: ViscosityParams) -> ConservationReport:
    """Residual norms of the conservation laws of the relaxed Lagrangian.

    * ``dL_closedness``: closedness of ``dL`` around every vertex dual cell.
    * ``scalar_law``: ``dΦ·∧dL − 2(f'(H)H − 2f(H) − K e^{−2α} + K/A) dvol``.
    * ``vector_law``: ``dΦ×∧dL − dΦ∧df'(H) + 2 dα∧dD``.
    * ``codazzi``: exterior derivative of the ℝ³-valued form ``S dΦ`` built
      from piecewise-linear vertex shape operators.
    * ``D_curl``: closedness of ``dD = S dΦ`` around vertex dual cells.

    All are area-weighted L² norms of densities, scaled by ``l_σ`` where the
    Lagrangian enters.
    """
    require_consistent(im, g)
    fl = _fields(im)
    geo = fl.geo
    faces, nf, fa, va = geo.faces, geo.face_normals, geo.face_areas, geo.vertex_areas
    l = p.l_sigma
    m = dL_form(im, g, p, fl)

    closed = _vertex_loop(m, geo) / va[:, None]

    f_v, fp_v = _fhat(fl.hs, p.sigma)
    wedge_dot = np.einsum("fkd,fkd->f", np.cross(fl.proj, m), np.repeat(nf[:, None, :], 3, 1))
    e2a = _face_mean(np.exp(-2.0 * g.alpha), faces)
    rhs = 2.0 * (_face_mean(fp_v * fl.hs, faces) - 2.0 * _face_mean(f_v, faces) + l * (K_G0 / geo.total_area - K_G0 * e2a))
    scalar = wedge_dot - rhs

    frame = geo.frames
    e1, e2 = frame[:, 0], frame[:, 1]
    lhs = np.cross(e1, np.einsum("fij,fj->fi", m, e2)) - np.cross(e2, np.einsum("fij,fj->fi", m, e1))
    gfp = face_gradient(fp_v, faces, geo.hat_gradients)
    ga = face_gradient(g.alpha, faces, geo.hat_gradients)
    d_alpha_dD = np.einsum("fij,fj->fi", fl.shape, np.cross(nf, ga))
    vector = lhs - np.cross(gfp, nf) + 2.0 * l * d_alpha_dD

    d_curl = _vertex_loop(fl.shape, geo) / va[:, None]

    # Codazzi: d(S dΦ) for the piecewise-linear vertex shape operators, by
    # the trapezoid rule around each face.
    weighted = np.repeat((fl.shape * fa[:, None, None]).reshape(-1, 9), 3, 0)
    s_v = functional._scatter(faces.ravel(), weighted, len(va)).reshape(-1, 3, 3)
    s_v /= functional._scatter(faces.ravel(), np.repeat(fa, 3), len(va))[:, None, None]
    pv = np.eye(3)[None] - fl.normals[:, :, None] * fl.normals[:, None, :]
    s_v = np.einsum("vij,vjk,vkl->vil", pv, s_v, pv)
    x = geo.positions
    cod = np.zeros((len(faces), 3))
    for c in range(3):
        ia, ib = faces[:, c], faces[:, (c + 1) % 3]
        cod += 0.5 * np.einsum("fij,fj->fi", s_v[ia] + s_v[ib], x[ib] - x[ia])
    cod /= fa[:, None]

    return ConservationReport(
        dL_closedness=_l2_vertex(closed, va),
        scalar_law=_l2_face(scalar, fa),
        vector_law=_l2_face(vector, fa),
        codazzi=_l2_face(cod, fa),
        D_curl=_l2_vertex(d_curl, va),
    )


# ----------------------------------------------------------------------------
# Willmore Euler-Lagrange residual and residues
# ----------------------------------------------------------------------------


def willmore_current(fl: _Fields, h2_coeff: float = 1.0) -> np.ndarray:
    """Per-face matrix of ``∇Hg − 2 hg ∇n − c hg² ∇Φ`` (default ``c = 1``).

    With ``c = 1`` the divergence is ``(Δ h + 2h(h² − K)) n`` per unit area,
    and the current vanishes identically on round spheres.
    """
    faces = fl.geo.faces
    h_f = _face_mean(fl.hs, faces)
    return fl.dh - 2.0 * h_f[:, None, None] * fl.dn - h2_coeff * (h_f**2)[:, None, None] * fl.proj


@dataclass(frozen=True)
class ELResidual:
    field: np.ndarray
    norm: float


def willmore_el_residual(geo_or_im, *, h2_coeff: float = 1.0) -> ELResidual:
    """Discrete divergence of the Willmore current per unit vertex area."""
    geo = induced_geometry(geo_or_im) if isinstance(geo_or_im, Immersion) else geo_or_im
    fl = _fields_from_geo(geo)
    j = willmore_current(fl, h2_coeff)
    div = np.einsum("fij,fcj->fci", j, geo.hat_gradients) * -geo.face_areas[:, None, None]
    r = functional._scatter(geo.faces.ravel(), div.reshape(-1, 3), len(geo.vertex_areas)) / geo.vertex_areas[:, None]
    return ELResidual(r, _l2_vertex(r, geo.vertex_areas))



def validate_loop(im: Immersion, loop: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Check that ``loop`` is a simple closed edge cycle; return (vertices, left faces)."""
    lp = np.asarray(loop, dtype=np.int64)
    if lp.ndim != 1 or len(lp) < 3:
        raise ParameterError("a loop needs at least three vertices")
    if len(np.unique(lp)) != len(lp):
        raise ParameterError("loop is not simple (repeated vertex)")
    n = im.mesh.n_vertices
    if lp.min() < 0 or lp.max() >= n:
        raise ParameterError("loop vertex out of range")
    f = im.mesh.faces
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    key = directed[:, 0] * n + directed[:, 1]
    order = np.argsort(key)
    skey = key[order]
    a, b = lp, np.roll(lp, -1)
    want = a * n + b
    pos = np.searchsorted(skey, want)
    pos = np.minimum(pos, len(skey) - 1)
    found = skey[pos] == want
    if not np.all(found):
        # An edge may exist only in the opposite direction; it is still an
        # edge of the mesh but then the left face is the other one.
        rev = b * n + a
        rpos = np.minimum(np.searchsorted(skey, rev), len(skey) - 1)
        if not np.all(found | (skey[rpos] == rev)):
            raise ParameterError("consecutive loop vertices are not joined by a mesh edge")
        raise ParameterError("loop edge has no face on its left (inconsistent orientation)")
    left = order[pos] % len(f)
    return lp, left


def _loop_flux(im: Immersion, loop: Sequence[int], integrand: Callable) -> np.ndarray:
    lp, left = validate_loop(im, loop)
    fl = _fields(im)
    geo = fl.geo
    x = geo.positions
    a, b = lp, np.roll(lp, -1)
    t = x[b] - x[a]
    length = np.linalg.norm(t, axis=1)
    t /= length[:, None]
    nf = geo.face_normals[left]
    nu = np.cross(t, nf)
    vals = integrand(fl, left, a, b, t, nu)
    return np.sum(vals * length[:, None], 0)


def willmore_residue(im: Immersion, loop: Sequence[int], *, h2_coeff: float = 1.0) -> np.ndarray:
    """Flux ``∮ ∂_ν Hg − 2 hg ∂_ν n − c hg² ∂_ν Φ`` across an edge loop.

    ``ν`` is the conormal pointing from the loop's left face across the edge,
    so the result is the flux out of the region on the left of the loop.
    """

    def integrand(fl, left, a, b, t, nu):
        h_mid = 0.5 * (fl.hs[a] + fl.hs[b])
        return (
            np.einsum("fij,fj->fi", fl.dh[left], nu)
            - 2.0 * h_mid[:, None] * np.einsum("fij,fj->fi", fl.dn[left], nu)
            - h2_coeff * (h_mid**2)[:, None] * nu
        )

    return _loop_flux(im, loop, integrand)


def first_residue(im: Immersion, loop: Sequence[int], *, literal_pi: bool = False) -> np.ndarray:
    """Flux ``∮ ∂_ν Hg − 3 π_n(∂_ν Hg) + ∂_τ n × Hg`` with ``τ = −n × ν``.

    ``π_n`` is the projection onto the normal line.  ``literal_pi`` replaces
    the coefficient 3 by 3π.
    """
    coeff = 3.0 * math.pi if literal_pi else 3.0

    def integrand(fl, left, a, b, t, nu):
        # Normal data are taken from the left face, like ν and the gradients.
        nf = fl.geo.face_normals[left]
        h_vec = (0.5 * (fl.hs[a] + fl.hs[b]))[:, None] * nf
        dh_nu = np.einsum("fij,fj->fi", fl.dh[left], nu)
        normal_part = np.einsum("fi,fi->f", dh_nu, nf)[:, None] * nf
        tau = -np.cross(nf, nu)
        dn_tau = np.einsum("fij,fj->fi", fl.dn[left], tau)
        return dh_nu - coeff * normal_part + np.cross(dn_tau, h_vec)

    return _loop_flux(im, loop, integrand)


def region_boundary(mesh, face_mask: np.ndarray) -> np.ndarray:
    """Boundary cycle of a face region, oriented with the region on its left."""
    f = mesh.faces[np.asarray(face_mask, bool)]
    if len(f) == 0:
        raise ParameterError("empty region")
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    n = mesh.n_vertices
    key = set((directed[:, 0] * n + directed[:, 1]).tolist())
    bnd = [(int(a), int(b)) for a, b in directed if int(b) * n + int(a) not in key]
    if not bnd:
        raise ParameterError("region has no boundary")
    nxt = {}
    for a, b in bnd:
        if a in nxt:
            raise ParameterError("region boundary is not a simple cycle")
        nxt[a] = b
    start = bnd[0][0]
    cyc = [start]
    cur = nxt[start]
    while cur != start:
        cyc.append(cur)
        cur = nxt[cur]
        if len(cyc) > len(bnd):
            raise ParameterError("region boundary is not a simple cycle")
    if len(cyc) != len(bnd):
        raise ParameterError("region boundary has several components")
    return np.array(cyc, dtype=np.int64)


def cap_loop(mesh, axis=(0.0, 0.0, 1.0), height: float = 0.0) -> np.ndarray:
    """Edge loop around the reference cap ``{p . axis > height}``.

    The loop bounds the faces whose three reference vertices lie in the cap
    and is oriented with the cap on its left.
    """
    ax = np.asarray(axis, float)
    ax = ax / np.linalg.norm(ax)
    inside = mesh.vertices @ ax > height
    return region_boundary(mesh, inside[mesh.faces].all(1))


# ----------------------------------------------------------------------------
# Lagrange multiplier
# ----------------------------------------------------------------------------


def multiplier_closed_form(fw: functional.Forward, p: ViscosityParams) -> float:
    """``2σ² Σ(1 − |H|⁴) A_v + l_σ 4π Σ α c − 4π l_σ``."""
    h2 = fw.h
    term = 2.0 * p.sigma**2 * float(np.sum((1.0 - h2**2) * fw.va))
    if fw.alpha is None:
        raise ParameterError("multiplier needs the conformal factor")
    return term + p.l_sigma * K_G0 * float(fw.alpha @ fw.c) - K_G0 * p.l_sigma


def lagrange_multiplier(im: Immersion, g: GaugeState, p: ViscosityParams) -> float:
    """Closed-form multiplier ``C`` of the area-constrained relaxed problem."""
    require_balanced(im, g)
    if not p.area_constrained:
        raise ParameterError("lagrange_multiplier requires area_constrained parameters")
    return multiplier_closed_form(functional.forward(im.positions, im.mesh.faces, g.cells), p)


def dilation_multiplier(im: Immersion, p: ViscosityParams) -> float:
    """``2σ² Σ(1 − |H|⁴) A_v / A``: twice the multiplier any constrained critical point realizes.

    Derived from the exact dilation identity ``d/dt F^σ(e^t Φ) = 2σ² Σ(1 − |H|⁴) A_v``
    together with ``d/dt A(e^t Φ) = 2A``.
    """
    fw = functional.forward(im.positions, im.mesh.faces)
    return 2.0 * p.sigma**2 * float(np.sum((1.0 - fw.h**2) * fw.va)) / fw.area
