"""Reference sphere meshes, immersions, discrete metric quantities and Möbius maps.

Conventions
-----------
* ``L`` denotes the positive semi-definite cotangent stiffness matrix,
  ``u^T L u = sum over edges of (cot a + cot b)/2 * (u_i - u_j)^2``.
* Vertex areas ``A_v`` are mixed Voronoi areas: circumcentric corner areas
  on acute faces, the half/quarter split on obtuse ones, and a smooth blend
  on faces within a few degrees of a right angle.  They partition the
  surface area exactly.
* The mean curvature vector is ``H_v = (L X)_v / (2 A_v)``.  On a convex
  surface with outward oriented faces it points outward, so the scalar
  ``H = H_v . n_v`` equals ``+1/r`` on a round sphere of radius ``r``.
* The per-face second fundamental form is expressed in a face-local
  orthonormal frame and has trace ``2H`` in the same sign convention.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError, ParameterError

logger = logging.getLogger(__name__)

MAX_LEVEL = 8
DEGENERACY_FACTOR = 1e-12
# Width, in corner cotangent, of the transition between Voronoi and split areas.
MIXED_AREA_BAND = 0.2


# ----------------------------------------------------------------------------
# Reference mesh
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TriangulatedSphere:
    """Closed oriented triangulation of S^2 with vertices on the unit sphere."""

    vertices: np.ndarray
    faces: np.ndarray
    subdivision_level: int = -1

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ParameterError("vertices must have shape (V, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ParameterError("faces must have shape (F, 3)")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ParameterError("face indices out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces

    @cached_property
    def reference_vertex_areas(self) -> np.ndarray:
        """Mixed vertex areas of the reference triangulation."""
        return vertex_areas(self.vertices, self.faces)

    @cached_property
    def vertex_faces(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR-style incidence: ``(indptr, face_ids)`` listing faces around each vertex."""
        f = self.faces
        corner_vertex = f.ravel()
        order = np.argsort(corner_vertex, kind="stable")
        counts = np.bincount(corner_vertex, minlength=self.n_vertices)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return indptr, order // 3

    def check_invariants(self, tol: float = 1e-12) -> None:
        """Raise ``GeometryError`` unless the mesh is a closed oriented sphere."""
        if self.euler_characteristic != 2:
            raise GeometryError(f"Euler characteristic {self.euler_characteristic} != 2")
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        key = directed[:, 0] * self.n_vertices + directed[:, 1]
        if len(np.unique(key)) != len(key):
            raise GeometryError("an oriented edge appears twice (inconsistent orientation)")
        rev = directed[:, 1] * self.n_vertices + directed[:, 0]
        if not np.all(np.isin(rev, key)):
            raise GeometryError("mesh has boundary edges")
        radius_err = np.abs(np.linalg.norm(self.vertices, axis=1) - 1.0)
        if radius_err.max() > tol:
            raise GeometryError(f"reference point off the unit sphere by {radius_err.max():.3e}")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.faces.tobytes())
        h.update(self.vertices.tobytes())
        return h.hexdigest()[:16]


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    # Poles on the z axis; rings at z = +-1/sqrt(5) offset by pi/5.
    z0 = 1.0 / np.sqrt(5.0)
    s = 2.0 / np.sqrt(5.0)
    k = np.arange(5)
    up = np.stack([s * np.cos(2 * np.pi * k / 5), s * np.sin(2 * np.pi * k / 5), np.full(5, z0)], 1)
    th = 2 * np.pi * k / 5 + np.pi / 5
    lo = np.stack([s * np.cos(th), s * np.sin(th), np.full(5, -z0)], 1)
    verts = np.vstack([[0.0, 0.0, 1.0], up, lo, [0.0, 0.0, -1.0]])
    faces = []
    for i in range(5):
        j = (i + 1) % 5
        u_i, u_j, l_i, l_j = 1 + i, 1 + j, 6 + i, 6 + j
        faces += [(0, u_i, u_j), (u_i, l_i, u_j), (u_j, l_i, l_j), (11, l_j, l_i)]
    faces = np.array(faces, dtype=np.int64)
    # Orient outward.
    x = verts[faces]
    n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    flip = np.einsum("ij,ij->i", n, x.sum(1)) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return verts, faces


def _subdivide(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nv = len(verts)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    key = np.minimum(e[:, 0], e[:, 1]) * nv + np.maximum(e[:, 0], e[:, 1])
    uniq, inv = np.unique(key, return_inverse=True)
    a, b = uniq // nv, uniq % nv
    mid = verts[a] + verts[b]
    mid /= np.linalg.norm(mid, axis=1)[:, None]
    m = (inv + nv).reshape(3, -1).T  # midpoints of edges (01, 12, 20)
    v0, v1, v2 = faces.T
    m01, m12, m20 = m.T
    new_faces = np.concatenate(
        [
            np.stack([v0, m01, m20], 1),
            np.stack([v1, m12, m01], 1),
            np.stack([v2, m20, m12], 1),
            np.stack([m01, m12, m20], 1),
        ]
    )
    return np.vstack([verts, mid]), new_faces


def build_icosphere(subdivision_level: int) -> TriangulatedSphere:
    """Icosahedron subdivided ``subdivision_level`` times, projected to S^2.

    The icosahedron is placed with vertices at both poles (0, 0, +-1), so the
    mesh is centrally symmetric at every level.
    """
    if not isinstance(subdivision_level, (int, np.integer)) or not 0 <= subdivision_level <= MAX_LEVEL:
        raise ParameterError(f"subdivision level must be an integer in [0, {MAX_LEVEL}], got {subdivision_level!r}")
    verts, faces = _icosahedron()
    for _ in range(int(subdivision_level)):
        verts, faces = _subdivide(verts, faces)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    return TriangulatedSphere(verts, faces, int(subdivision_level))


# ----------------------------------------------------------------------------
# Immersions and per-face primitives
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Immersion:
    """Vertex positions in R^3 over a reference triangulation."""

    mesh: TriangulatedSphere
    positions: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float, copy=True)
        if x.shape != (self.mesh.n_vertices, 3):
            raise ParameterError(
                f"positions shape {x.shape} does not match mesh with {self.mesh.n_vertices} vertices"
            )
        if not np.all(np.isfinite(x)):
            raise GeometryError("positions contain non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)

    def with_positions(self, positions: np.ndarray) -> "Immersion":
        return Immersion(self.mesh, positions)

    def diameter(self) -> float:
        x = self.positions
        return float(np.linalg.norm(x.max(0) - x.min(0)))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.mesh.faces.tobytes())
        h.update(self.positions.tobytes())
        return h.hexdigest()[:16]


def _face_areas(x: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p = x[faces]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def mixed_area_blend(cot: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voronoi weight of each face in the mixed-area rule.

    Returns ``(w, dw, corner)``: the weight ``w`` of the circumcentric shares
    (``1 - w`` goes to the half/quarter split), its derivative with respect
    to the smallest corner cotangent, and the index of that corner.  ``w``
    rises from 0 at a right angle to 1 at ``cot = MIXED_AREA_BAND`` along a
    quintic smoothstep.  Both rules agree at a right angle, so the areas are
    twice continuously differentiable in the positions.
    """
    corner = np.argmin(cot, axis=1)
    m = cot[np.arange(len(cot)), corner]
    t = np.clip(m / MIXED_AREA_BAND, 0.0, 1.0)
    w = t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    dw = 30.0 * t**2 * (1.0 - t) ** 2 / MIXED_AREA_BAND
    return w, dw, corner


def voronoi_shares(sq: np.ndarray, cot: np.ndarray) -> np.ndarray:
    """Circumcentric corner shares ``(|e_ca|² cot_b + |e_cb|² cot_a) / 8`` from squared edge lengths (F, 3, 2)."""
    out = np.empty(cot.shape)
    for c in range(3):
        a, b = (c + 1) % 3, (c + 2) % 3
        out[:, c] = (sq[:, c, 0] * cot[:, b] + sq[:, c, 1] * cot[:, a]) / 8.0
    return out


def split_shares(corner: np.ndarray, face_areas: np.ndarray) -> np.ndarray:
    """Half of the face to ``corner``, a quarter to each other corner."""
    out = np.repeat(0.25 * face_areas[:, None], 3, 1)
    out[np.arange(len(out)), corner] = 0.5 * face_areas
    return out


def mixed_corner_areas(x: np.ndarray, faces: np.ndarray, cot: np.ndarray, face_areas: np.ndarray) -> np.ndarray:
    """Share of each face's area attributed to its corners, shape (F, 3).

    Faces whose angles all stay clear of 90 degrees use circumcentric
    (Voronoi) shares; obtuse faces give half their area to the obtuse corner
    and a quarter to each other corner; near-right faces blend the two (see
    :func:`mixed_area_blend`).
    """
    p = x[faces]
    sq = np.empty(faces.shape + (2,))
    for c in range(3):
        a, b = (c + 1) % 3, (c + 2) % 3
        sq[:, c, 0] = np.einsum("ij,ij->i", p[:, a] - p[:, c], p[:, a] - p[:, c])
        sq[:, c, 1] = np.einsum("ij,ij->i", p[:, b] - p[:, c], p[:, b] - p[:, c])
    w, _, corner = mixed_area_blend(cot)
    vor = voronoi_shares(sq, cot)
    if np.all(w == 1.0):
        return vor
    return w[:, None] * vor + (1.0 - w)[:, None] * split_shares(corner, face_areas)


def vertex_areas(x: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Mixed Voronoi vertex areas."""
    _, fa = face_normals_and_areas(x, faces)
    corner = mixed_corner_areas(x, faces, cotangents(x, faces), fa)
    return np.bincount(faces.ravel(), weights=corner.ravel(), minlength=len(x))


def face_normals_and_areas(x: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit face normals and face areas (no degeneracy check)."""
    p = x[faces]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    dbl = np.linalg.norm(cr, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        nrm = cr / dbl[:, None]
    return nrm, 0.5 * dbl


def max_weighted_normals(x: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Vertex normals weighting each corner cross product by ``1 / (|e1|² |e2|²)``.

    Exact for meshes inscribed in a sphere and second order on smooth
    surfaces, unlike area weighting which is only first order on irregular
    stars.
    """
    p = x[faces]
    out = np.zeros_like(x, dtype=float)
    for c in range(3):
        e1 = p[:, (c + 1) % 3] - p[:, c]
        e2 = p[:, (c + 2) % 3] - p[:, c]
        w = np.cross(e1, e2) / (np.einsum("ij,ij->i", e1, e1) * np.einsum("ij,ij->i", e2, e2))[:, None]
        for k in range(3):
            out[:, k] += np.bincount(faces[:, c], weights=w[:, k], minlength=len(x))
    return out / np.linalg.norm(out, axis=1)[:, None]


def cotangents(x: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Cotangent of the interior angle at each face corner, shape (F, 3)."""
    p = x[faces]
    out = np.empty(faces.shape)
    for c in range(3):
        u = p[:, (c + 1) % 3] - p[:, c]
        v = p[:, (c + 2) % 3] - p[:, c]
        out[:, c] = np.einsum("ij,ij->i", u, v) / np.linalg.norm(np.cross(u, v), axis=1)
    return out


def cotan_laplacian(x: np.ndarray, faces: np.ndarray, cot: np.ndarray | None = None) -> sp.csr_matrix:
    """Positive semi-definite cotangent stiffness matrix."""
    n = len(x)
    if cot is None:
        cot = cotangents(x, faces)
    rows, cols, vals = [], [], []
    for c in range(3):
        a, b = faces[:, (c + 1) % 3], faces[:, (c + 2) % 3]
        w = 0.5 * cot[:, c]
        rows += [a, b, a, b]
        cols += [b, a, a, b]
        vals += [-w, -w, w, w]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def barycentric_gradients(x: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Gradients of the three hat functions on each face, shape (F, 3, 3).

    ``grads[f, c]`` is the ambient gradient of the hat function of corner ``c``.
    """
    p = x[faces]
    nrm, area = face_normals_and_areas(x, faces)
    g = np.empty((len(faces), 3, 3))
    for c in range(3):
        edge = p[:, (c + 2) % 3] - p[:, (c + 1) % 3]
        g[:, c] = np.cross(nrm, edge) / (2.0 * area)[:, None]
    return g


def face_gradient(values: np.ndarray, faces: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Per-face gradient of a piecewise-linear field.

    Scalar ``values`` (V,) give (F, 3); vector ``values`` (V, k) give (F, k, 3),
    row ``j`` being the gradient of component ``j``.
    """
    vf = values[faces]
    if vf.ndim == 2:
        return np.einsum("fc,fcd->fd", vf, grads)
    return np.einsum("fck,fcd->fkd", vf, grads)


def face_frames(x: np.ndarray, faces: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Orthonormal tangent frame per face, shape (F, 2, 3)."""
    p = x[faces]
    t1 = p[:, 1] - p[:, 0]
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(normals, t1)
    return np.stack([t1, t2], 1)


def check_faces(x: np.ndarray, faces: np.ndarray, areas: np.ndarray | None = None) -> np.ndarray:
    """Face areas after the degeneracy check; raises ``GeometryError`` naming the face."""
    if areas is None:
        areas = _face_areas(x, faces)
    total = areas.sum()
    thresh = DEGENERACY_FACTOR * total / len(faces)
    bad = np.flatnonzero(~(areas > thresh))
    if bad.size:
        f = int(bad[0])
        raise GeometryError(
            f"degenerate face {f} (area {areas[f]:.3e} below threshold {thresh:.3e})", face=f
        )
    return areas


# ----------------------------------------------------------------------------
# Discrete geometry
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteGeometry:
    """Metric and curvature data of an immersion.

    Beyond the listed core fields, a few per-face primitives are kept because
    every downstream module needs them.
    """

    face_areas: np.ndarray
    vertex_areas: np.ndarray
    mean_curvature_vec: np.ndarray
    mean_curvature: np.ndarray
    normals: np.ndarray
    second_fundamental: np.ndarray
    log_conformal: np.ndarray
    gauss_curvature: np.ndarray
    total_area: float
    face_normals: np.ndarray = field(repr=False)
    cotangents: np.ndarray = field(repr=False)
    laplacian: sp.csr_matrix = field(repr=False)
    angle_defects: np.ndarray = field(repr=False)
    hat_gradients: np.ndarray = field(repr=False)
    frames: np.ndarray = field(repr=False)
    positions: np.ndarray = field(repr=False)
    faces: np.ndarray = field(repr=False)

    @property
    def shape_operator(self) -> np.ndarray:
        """Per-face second fundamental form as an ambient symmetric (3, 3) map."""
        t = self.frames
        return np.einsum("fia,fij,fjb->fab", t, self.second_fundamental, t)


def angle_defects(x: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p = x[faces]
    ang = np.empty(faces.shape)
    for c in range(3):
        u = p[:, (c + 1) % 3] - p[:, c]
        v = p[:, (c + 2) % 3] - p[:, c]
        ang[:, c] = np.arctan2(np.linalg.norm(np.cross(u, v), axis=1), np.einsum("ij,ij->i", u, v))
    return 2.0 * np.pi - np.bincount(faces.ravel(), weights=ang.ravel(), minlength=len(x))


def induced_geometry(im: Immersion) -> DiscreteGeometry:
    """Discrete metric, curvature and normal data of ``im``."""
    x = im.positions
    faces = im.mesh.faces
    n = im.mesh.n_vertices
    fn, fa = face_normals_and_areas(x, faces)
    check_faces(x, faces, fa)
    cot = cotangents(x, faces)
    va = np.bincount(faces.ravel(), weights=mixed_corner_areas(x, faces, cot, fa).ravel(), minlength=n)
    lap = cotan_laplacian(x, faces, cot)
    hvec = 0.5 * (lap @ x) / va[:, None]

    vn = np.zeros((n, 3))
    for c in range(3):
        np.add.at(vn, faces[:, c], fn * fa[:, None])
    vn /= np.linalg.norm(vn, axis=1)[:, None]
    hs = np.einsum("ij,ij->i", hvec, vn)

    grads = barycentric_gradients(x, faces)
    frames = face_frames(x, faces, fn)
    dn = face_gradient(vn, faces, grads)  # (F, 3, 3): rows are gradients of n components
    # II_ij = t_i . (dn t_j); dn t_j = sum_k n_k-gradient . t_j along component k
    dn_t = np.einsum("fkd,fjd->fkj", dn, frames)  # column j is dn applied to t_j
    ii = np.einsum("fik,fkj->fij", frames, dn_t)
    ii = 0.5 * (ii + np.transpose(ii, (0, 2, 1)))

    defects = angle_defects(x, faces)
    lam = 0.5 * np.log(va / im.mesh.reference_vertex_areas)
    for arr in (fa, va, hvec, hs, vn, ii, lam, defects, fn, cot, grads, frames):
        arr.setflags(write=False)
    return DiscreteGeometry(
        face_areas=fa,
        vertex_areas=va,
        mean_curvature_vec=hvec,
        mean_curvature=hs,
        normals=vn,
        second_fundamental=ii,
        log_conformal=lam,
        gauss_curvature=defects / va,
        total_area=float(fa.sum()),
        face_normals=fn,
        cotangents=cot,
        laplacian=lap,
        angle_defects=defects,
        hat_gradients=grads,
        frames=frames,
        positions=x,
        faces=faces,
    )


def signed_volume(im: Immersion) -> float:
    """Enclosed signed volume, one third of the flux of the position field."""
    p = im.positions[im.mesh.faces]
    return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)


# ----------------------------------------------------------------------------
# Ambient Möbius group
# ----------------------------------------------------------------------------


def _as_rotation(rot) -> np.ndarray:
    r = np.eye(3) if rot is None else np.asarray(rot, dtype=float)
    if r.shape != (3, 3):
        raise ParameterError("rotation must be a 3x3 matrix")
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
        raise ParameterError("rotation must be orthogonal with determinant +1")
    return r


@dataclass(frozen=True)
class MobiusR3:
    """Similarity ``x -> e^t R x + b`` or inversion in the sphere ``|x - c| = r``."""

    kind: str
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    log_scale: float = 0.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("similarity", "inversion"):
            raise ParameterError(f"unknown Möbius kind {self.kind!r}")
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", np.asarray(self.translation, float).reshape(3))
        object.__setattr__(self, "center", np.asarray(self.center, float).reshape(3))
        if self.kind == "inversion" and not self.radius > 0:
            raise ParameterError("inversion radius must be positive")

    @classmethod
    def similarity(cls, rotation=None, log_scale: float = 0.0, translation=None) -> "MobiusR3":
        return cls(
            "similarity",
            rotation=np.eye(3) if rotation is None else rotation,
            log_scale=float(log_scale),
            translation=np.zeros(3) if translation is None else translation,
        )

    @classmethod
    def dilation(cls, t: float) -> "MobiusR3":
        return cls.similarity(log_scale=t)

    @classmethod
    def inversion(cls, center, radius: float = 1.0) -> "MobiusR3":
        return cls("inversion", center=center, radius=float(radius))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, float)
        if self.kind == "similarity":
            if self.log_scale == 0.0 and not self.translation.any() and np.array_equal(self.rotation, np.eye(3)):
                return x.copy()
            return np.exp(self.log_scale) * x @ self.rotation.T + self.translation
        d = x - self.center
        return self.center + self.radius**2 * d / np.einsum("...i,...i->...", d, d)[..., None]


def apply_mobius_r3(im: Immersion, m: MobiusR3) -> Immersion:
    """Map every vertex of ``im`` by ``m``."""
    if m.kind == "inversion":
        dist = np.linalg.norm(im.positions - m.center, axis=1).min()
        scale = max(im.diameter(), 1e-300)
        if dist <= 1e-6 * scale:
            raise GeometryError(f"inversion center within {dist:.3e} of the surface")
    out = im.with_positions(m(im.positions))
    check_faces(out.positions, out.mesh.faces)
    return out


# ----------------------------------------------------------------------------
# Conformal group of S^2 (ball model)
# ----------------------------------------------------------------------------


def ball_translation(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Hyperbolic translation of the unit ball sending 0 to ``a``; preserves S^2."""
    a = np.asarray(a, float)
    x = np.asarray(x, float)
    ax = x @ a
    xx = np.einsum("...i,...i->...", x, x)
    aa = a @ a
    num = (1.0 + 2.0 * ax + xx)[..., None] * a + (1.0 - aa) * x
    return num / (1.0 + 2.0 * ax + aa * xx)[..., None]


@dataclass(frozen=True)
class MobiusS2:
    """Orientation preserving conformal map ``p -> rot . T_a(p)`` of S^2."""

    a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rot: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        a = np.asarray(self.a, float).reshape(3)
        if not np.all(np.isfinite(a)) or a @ a >= 1.0:
            raise ParameterError(f"ball parameter must satisfy |a| < 1, got |a| = {np.linalg.norm(a):.6g}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "rot", _as_rotation(self.rot))

    @classmethod
    def identity(cls) -> "MobiusS2":
        return cls()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return ball_translation(self.a, x) @ self.rot.T

    def inverse(self) -> "MobiusS2":
        return MobiusS2(-self.rot @ self.a, self.rot.T)

    def compose(self, inner: "MobiusS2") -> "MobiusS2":
        """``self ∘ inner``, renormalized to the (a, rot) form."""
        d = self(inner(np.zeros(3)))
        basis = ball_translation(-d, self(inner(np.eye(3))))
        u, _, vt = np.linalg.svd(basis.T)
        r = u @ vt
        return MobiusS2(r.T @ d, r)

    def conformal_factor(self, p: np.ndarray) -> np.ndarray:
        """Linear stretch ``|dm_p|`` at points of S^2."""
        aa = self.a @ self.a
        return (1.0 - aa) / (1.0 + 2.0 * (p @ self.a) + aa)

    def to_json(self) -> dict:
        return {"a": self.a.tolist(), "rot": self.rot.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "MobiusS2":
        return cls(np.asarray(d["a"], float), np.asarray(d["rot"], float))


def apply_mobius_s2(mesh: TriangulatedSphere, m: MobiusS2) -> TriangulatedSphere:
    """Reference mesh with points moved by ``m`` (combinatorics unchanged)."""
    if not isinstance(m, MobiusS2):
        raise ParameterError("expected a MobiusS2 element")
    y = m(mesh.vertices)
    y /= np.linalg.norm(y, axis=1)[:, None]
    return TriangulatedSphere(y, mesh.faces, mesh.subdivision_level)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rotation matrix by ``angle`` about ``axis`` (Rodrigues)."""
    k = np.asarray(axis, float)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx
