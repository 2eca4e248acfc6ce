"""Discrete energy terms as explicit functions of vertex positions, with exact gradients.

The relaxed energy is assembled from five scalar terms

* ``W  = sum_v |Y_v|^2 / (4 A_v)``                      (Willmore, ``Y = L X``)
* ``S  = sum_v (1 + |Y_v|^2 / (4 A_v^2))^2 A_v``        (smoother)
* ``D  = 1/2 alpha^T L alpha``                          (Dirichlet part)
* ``Lin = 4 pi sum_v alpha_v c_v``                      (linear part)
* ``LogA = 2 pi log sum_v A_v``                          (log-area part)

with ``alpha_v = 1/2 log(A_v / c_v)`` for fixed g0 cell masses ``c``.  The
gradient is obtained by reverse accumulation through the cotangents, the
mixed vertex areas and the area ratio; nothing is approximated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import mixed_area_blend, split_shares, voronoi_shares

FOUR_PI = 4.0 * np.pi


def _scatter(idx: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    if vals.ndim == 1:
        return np.bincount(idx, weights=vals, minlength=n)
    return np.stack([np.bincount(idx, weights=vals[:, k], minlength=n) for k in range(vals.shape[1])], 1)


@dataclass
class Forward:
    """Intermediate quantities of one evaluation, reused by :func:`backward`."""

    x: np.ndarray
    faces: np.ndarray
    p: np.ndarray
    nh: np.ndarray
    dbl: np.ndarray
    cot: np.ndarray
    sq: np.ndarray  # squared edge lengths |u_c|^2, |v_c|^2 per corner, (F, 3, 2)
    blend: np.ndarray  # Voronoi weight per face
    dblend: np.ndarray  # its derivative in the smallest corner cotangent
    blend_corner: np.ndarray
    vor: np.ndarray  # circumcentric corner shares
    split: np.ndarray  # half/quarter corner shares
    va: np.ndarray
    y: np.ndarray
    h: np.ndarray
    alpha: np.ndarray | None
    lap_alpha: np.ndarray | None
    c: np.ndarray | None
    W: float
    S: float
    D: float
    Lin: float
    LogA: float

    @property
    def area(self) -> float:
        return float(self.va.sum())

    @property
    def onofri(self) -> float:
        return self.D + self.Lin - self.LogA


def _laplace_apply(u: np.ndarray, faces: np.ndarray, cot: np.ndarray, n: int) -> np.ndarray:
    """Apply the cotangent stiffness matrix without assembling it."""
    out = np.zeros((n,) + u.shape[1:])
    for c in range(3):
        ia, ib = faces[:, (c + 1) % 3], faces[:, (c + 2) % 3]
        w = 0.5 * cot[:, c]
        d = u[ia] - u[ib]
        wd = w[:, None] * d if d.ndim == 2 else w * d
        out += _scatter(ia, wd, n) - _scatter(ib, wd, n)
    return out


def forward(x: np.ndarray, faces: np.ndarray, c: np.ndarray | None = None) -> Forward:
    """Evaluate all terms; ``c`` (g0 cell masses) enables the Onofri terms."""
    n = len(x)
    p = x[faces]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    dbl = np.linalg.norm(cr, axis=1)
    nh = cr / dbl[:, None]
    cot = np.empty(faces.shape)
    sq = np.empty(faces.shape + (2,))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cot[:, k] = np.einsum("ij,ij->i", u, v) / dbl
        sq[:, k, 0] = np.einsum("ij,ij->i", u, u)
        sq[:, k, 1] = np.einsum("ij,ij->i", v, v)
    blend, dblend, blend_corner = mixed_area_blend(cot)
    vor = voronoi_shares(sq, cot)
    split = split_shares(blend_corner, 0.5 * dbl)
    corner = blend[:, None] * vor + (1.0 - blend)[:, None] * split
    va = np.bincount(faces.ravel(), weights=corner.ravel(), minlength=n)

    y = _laplace_apply(x, faces, cot, n)
    yy = np.einsum("ij,ij->i", y, y)
    h = yy / (4.0 * va**2)
    W = float(np.sum(yy / (4.0 * va)))
    S = float(np.sum((1.0 + h) ** 2 * va))

    alpha = lap_alpha = None
    D = Lin = LogA = 0.0
    if c is not None:
        alpha = 0.5 * np.log(va / c)
        lap_alpha = _laplace_apply(alpha, faces, cot, n)
        D = 0.5 * float(alpha @ lap_alpha)
        Lin = FOUR_PI * float(alpha @ c)
        LogA = 0.5 * FOUR_PI * float(np.log(va.sum()))
    return Forward(x, faces, p, nh, dbl, cot, sq, blend, dblend, blend_corner, vor, split, va, y, h, alpha, lap_alpha, c, W, S, D, Lin, LogA)


def _area_face_grad(fw: Forward, g_face: np.ndarray, gp: np.ndarray) -> None:
    """Accumulate ``g_face * d(face area)/d p`` into per-corner gradients ``gp``."""
    p, nh = fw.p, fw.nh
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        gp[:, k] += 0.5 * g_face[:, None] * np.cross(nh, p[:, b] - p[:, a])


def backward(fw: Forward, cW: float = 1.0, cS: float = 0.0, cO: float = 0.0, cA: float = 0.0) -> np.ndarray:
    """Gradient of ``cW W + cS S + cO (D + Lin - LogA) + cA Area`` w.r.t. positions."""
    faces, p, n = fw.faces, fw.p, len(fw.x)
    va, y, h = fw.va, fw.y, fw.h
    if cO and fw.alpha is None:
        raise ValueError("Onofri gradient requested without g0 cells")

    g_y = (cW / 2.0 + cS * (1.0 + h))[:, None] * y / va[:, None]
    g_a = cW * (-h) + cS * (1.0 + h) * (1.0 - 3.0 * h) + cA
    g_alpha = None
    if cO:
        g_alpha = cO * (fw.lap_alpha + FOUR_PI * fw.c)
        g_a = g_a + g_alpha / (2.0 * va) - cO * 0.5 * FOUR_PI / va.sum()

    gp = np.zeros(p.shape)  # per-face, per-corner gradient
    gcot = np.zeros(faces.shape)

    # Y = L(x) x: linear part and cotangent dependence.
    for k in range(3):
        ia, ib = faces[:, (k + 1) % 3], faces[:, (k + 2) % 3]
        a, b = (k + 1) % 3, (k + 2) % 3
        dg = g_y[ia] - g_y[ib]
        dx = p[:, a] - p[:, b]
        gcot[:, k] += 0.5 * np.einsum("ij,ij->i", dg, dx)
        gp[:, a] += 0.5 * fw.cot[:, k, None] * dg
        gp[:, b] -= 0.5 * fw.cot[:, k, None] * dg
        if g_alpha is not None:
            d_alpha = fw.alpha[ia] - fw.alpha[ib]
            gcot[:, k] += cO * 0.25 * d_alpha**2

    # Mixed vertex areas: Voronoi shares, split shares and the blend weight.
    g_corner = g_a[faces]
    w = fw.blend
    rows = np.arange(len(faces))
    g_face = (1.0 - w) * 2.0 * np.sum(fw.split * g_corner, axis=1) / fw.dbl
    gcot[rows, fw.blend_corner] += fw.dblend * np.sum((fw.vor - fw.split) * g_corner, axis=1)
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        gk = w * g_corner[:, k] / 8.0
        gcot[:, b] += gk * fw.sq[:, k, 0]
        gcot[:, a] += gk * fw.sq[:, k, 1]
        du = 2.0 * (gk * fw.cot[:, b])[:, None] * (p[:, a] - p[:, k])
        dv = 2.0 * (gk * fw.cot[:, a])[:, None] * (p[:, b] - p[:, k])
        gp[:, a] += du
        gp[:, b] += dv
        gp[:, k] -= du + dv
    _area_face_grad(fw, g_face, gp)

    # Cotangents.
    nh, dbl = fw.nh, fw.dbl
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        u = p[:, a] - p[:, k]
        v = p[:, b] - p[:, k]
        ck = fw.cot[:, k, None]
        s = (gcot[:, k] / dbl)[:, None]
        du = s * (v - ck * np.cross(v, nh))
        dv = s * (u - ck * np.cross(nh, u))
        gp[:, a] += du
        gp[:, b] += dv
        gp[:, k] -= du + dv

    return _scatter(faces.ravel(), gp.reshape(-1, 3), n)


def area_gradient(x: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Gradient of the total surface area."""
    p = x[faces]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    nh = cr / np.linalg.norm(cr, axis=1)[:, None]
    gp = np.empty(p.shape)
    for k in range(3):
        gp[:, k] = 0.5 * np.cross(nh, p[:, (k + 2) % 3] - p[:, (k + 1) % 3])
    return _scatter(faces.ravel(), gp.reshape(-1, 3), len(x))
