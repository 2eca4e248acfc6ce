"""Width relaxation of paths of immersions and σ-annealing.

A path is a sequence of frames sharing one reference mesh.  Its width at
viscosity σ is ``max_k F^σ(frame_k)``, each frame evaluated in its Aubin
gauge.  Relaxation lowers the width by descending the frames around the
argmax; annealing repeats this along a decreasing σ schedule and filters the
σ values by the Struwe quantity ``s(σ) = σ log(1/σ) ∂_σ F^σ``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import functional
from .energy import EnergyBreakdown, ViscosityParams, combine
from .errors import GeometryError, ParameterError
from .gauge import aubin_balance, balance_measure, g0_cells
from .mesh import (
    Immersion,
    TriangulatedSphere,
    barycentric_gradients,
    check_faces,
    face_gradient,
    face_normals_and_areas,
    max_weighted_normals,
    signed_volume,
)
from .variation import dilation_multiplier, lagrange_multiplier

logger = logging.getLogger(__name__)

ENERGY_MODES = ("relaxed", "willmore")


# ----------------------------------------------------------------------------
# Configuration and state
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class StepRule:
    """Backtracking line search: Armijo constant, shrink factor, retry budget."""

    armijo: float = 1e-4
    shrink: float = 0.5
    grow: float = 2.0
    max_backtracks: int = 30
    initial_displacement: float = 0.05  # first trial step as a fraction of the mean edge length


@dataclass(frozen=True)
class MinmaxConfig:
    sigma_schedule: tuple[float, ...] = ()
    inner_steps: int = 10
    step_rule: StepRule = field(default_factory=StepRule)
    area_constrained: bool = False
    struwe_tol: float = 0.5
    max_sweeps: int = 50
    stagnation_tol: float = 1e-6
    window: int = 1
    energy: str = "relaxed"
    reparametrize: bool = False

    def __post_init__(self):
        sched = tuple(float(s) for s in self.sigma_schedule)
        object.__setattr__(self, "sigma_schedule", sched)
        if any(not (0.0 < s < 1.0) for s in sched):
            raise ParameterError("σ values must lie in (0, 1)")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ParameterError("σ schedule must be strictly decreasing")
        if not self.struwe_tol > 0:
            raise ParameterError("struwe_tol must be positive")
        if self.energy not in ENERGY_MODES:
            raise ParameterError(f"energy must be one of {ENERGY_MODES}")
        if self.window < 0 or self.inner_steps < 0 or self.max_sweeps < 0:
            raise ParameterError("window, inner_steps and max_sweeps must be non-negative")

    @staticmethod
    def geometric_schedule(start: float = 0.2, stop: float = 0.01, ratio: float = 1.0 / math.sqrt(2.0)) -> tuple[float, ...]:
        """``σ_{k+1} = ratio σ_k`` from ``start`` down to ``stop`` (inclusive within rounding)."""
        out = [start]
        while out[-1] * ratio >= stop * (1.0 - 1e-12):
            out.append(out[-1] * ratio)
        return tuple(out)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FrameEnergy:
    total: float
    breakdown: EnergyBreakdown | None


@dataclass(eq=False)
class PathState:
    """Frames of a path on a shared reference mesh; pinned endpoints never move."""

    frames: list[Immersion]
    endpoints_pinned: bool = True
    reparametrized: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.frames) < 3:
            raise ParameterError("a path needs at least three frames")
        mesh = self.frames[0].mesh
        for k, im in enumerate(self.frames):
            if im.mesh is not mesh and (
                im.mesh.n_vertices != mesh.n_vertices or not np.array_equal(im.mesh.faces, mesh.faces)
            ):
                raise ParameterError(f"frame {k} does not share the path mesh")

    @property
    def mesh(self) -> TriangulatedSphere:
        return self.frames[0].mesh

    def __len__(self) -> int:
        return len(self.frames)

    def movable(self) -> list[int]:
        n = len(self.frames)
        return list(range(1, n - 1)) if self.endpoints_pinned else list(range(n))

    def energy(self, k: int, p: ViscosityParams, mode: str = "relaxed") -> FrameEnergy:
        key = (k, p.sigma, p.area_constrained, mode, self.frames[k].digest())
        if key not in self._cache:
            self._cache[key] = frame_energy(self.frames[k], p, mode)
        return self._cache[key]

    def energies(self, p: ViscosityParams, mode: str = "relaxed") -> np.ndarray:
        return np.array([self.energy(k, p, mode).total for k in range(len(self.frames))])

    def replace_frame(self, k: int, im: Immersion) -> None:
        if self.endpoints_pinned and k in (0, len(self.frames) - 1):
            raise ParameterError("pinned endpoints cannot be replaced")
        self.frames[k] = im

    def copy(self) -> "PathState":
        return PathState(list(self.frames), self.endpoints_pinned, self.reparametrized)


# ----------------------------------------------------------------------------
# Frame energies and gradients
# ----------------------------------------------------------------------------


def _balanced_cells(mesh: TriangulatedSphere, va: np.ndarray) -> np.ndarray:
    m, _ = balance_measure(mesh.vertices, va)
    return g0_cells(mesh, m)


def _evaluate(x: np.ndarray, mesh: TriangulatedSphere, p: ViscosityParams, mode: str):
    faces = mesh.faces
    if mode == "willmore":
        fw = functional.forward(x, faces)
        return fw.W, fw, None
    va = functional.forward(x, faces).va
    cells = _balanced_cells(mesh, va)
    fw = functional.forward(x, faces, cells)
    return fw.W + p.sigma**2 * fw.S + p.l_sigma * fw.onofri, fw, cells


def frame_energy(im: Immersion, p: ViscosityParams, mode: str = "relaxed") -> FrameEnergy:
    """``F^σ`` in the Aubin gauge (or ``W`` alone when ``mode == "willmore"``)."""
    total, fw, _ = _evaluate(im.positions, im.mesh, p, mode)
    if mode == "willmore":
        return FrameEnergy(total, None)
    return FrameEnergy(total, combine(fw.W, fw.S, fw.onofri, fw.area, p, mesh_hash=im.digest()))


def _gradient(fw: functional.Forward, p: ViscosityParams, mode: str) -> np.ndarray:
    if mode == "willmore":
        return functional.backward(fw, cW=1.0)
    return functional.backward(fw, cW=1.0, cS=p.sigma**2, cO=p.l_sigma)


def _mean_edge(x: np.ndarray, mesh: TriangulatedSphere) -> float:
    e = mesh.edges
    return float(np.linalg.norm(x[e[:, 0]] - x[e[:, 1]], axis=1).mean())


def _rescale_to_unit_area(x: np.ndarray, faces: np.ndarray) -> np.ndarray:
    c = x.mean(0)
    area = functional.forward(x, faces).area
    return c + (x - c) / math.sqrt(area)


@dataclass(frozen=True)
class DescentResult:
    immersion: Immersion
    energies: tuple[float, ...]
    stalled: bool
    multipliers: tuple[float, ...]


def descend_frame(
    im: Immersion,
    p: ViscosityParams,
    steps: int,
    *,
    rule: StepRule = StepRule(),
    mode: str = "relaxed",
    frame: int | None = None,
) -> DescentResult:
    """Gradient descent on the frame energy with backtracking line search.

    The direction is the area-weighted (L²) gradient ``g_v / A_v``.  With
    ``p.area_constrained`` the area gradient is projected out in the same
    inner product and each accepted step is rescaled to unit area; the
    projection coefficient ``μ`` is recorded, ``2μ`` being the realized
    Lagrange multiplier.  Accepted steps strictly decrease the energy.
    """
    mesh = im.mesh
    faces = mesh.faces
    x = np.array(im.positions)
    if p.area_constrained:
        x = _rescale_to_unit_area(x, faces)
    energy, fw, cells = _evaluate(x, mesh, p, mode)
    trace = [energy]
    mults = []
    t = None
    stalled = False
    for _ in range(steps):
        g = _gradient(fw, p, mode)
        va = fw.va
        d = g / va[:, None]
        if p.area_constrained:
            va_grad = functional.area_gradient(x, faces)
            mu = float(np.sum(va_grad * d)) / float(np.sum(va_grad * va_grad / va[:, None]))
            g = g - mu * va_grad
            d = g / va[:, None]
            mults.append(2.0 * mu)
        slope = float(np.sum(g * d))
        if not slope > 0:
            break
        if t is None:
            t = rule.initial_displacement * _mean_edge(x, mesh) / float(np.abs(d).max())
        accepted = False
        for _ in range(rule.max_backtracks):
            trial = x - t * d
            if p.area_constrained:
                trial = _rescale_to_unit_area(trial, faces)
            try:
                check_faces(trial, faces)
                e_new, fw_new, cells_new = _evaluate(trial, mesh, p, mode)
            except (GeometryError, FloatingPointError, ValueError) as exc:
                logger.debug("trial step rejected: %s", exc)
                e_new = math.inf
            if math.isfinite(e_new) and e_new < energy - rule.armijo * t * slope:
                accepted = True
                break
            t *= rule.shrink
        if not accepted:
            stalled = True
            logger.info("line search stalled%s", "" if frame is None else f" on frame {frame}")
            break
        x, energy, fw, cells = trial, e_new, fw_new, cells_new
        trace.append(energy)
        t *= rule.grow
    return DescentResult(im.with_positions(x), tuple(trace), stalled, tuple(mults))


# ----------------------------------------------------------------------------
# Paths
# ----------------------------------------------------------------------------


def init_path(start: Immersion, end: Immersion, interior: int | Sequence[Immersion], pinned: bool = True) -> PathState:
    """Path from ``start`` to ``end``.

    ``interior`` is either the total frame count ``M`` (linear vertex
    interpolation) or the sequence of interior frames.
    """
    if start.mesh.n_vertices != end.mesh.n_vertices or not np.array_equal(start.mesh.faces, end.mesh.faces):
        raise ParameterError("start and end frames do not share a mesh")
    mesh = start.mesh
    if isinstance(interior, (int, np.integer)):
        m = int(interior)
        if m < 3:
            raise ParameterError("a path needs at least three frames")
        frames = [start]
        for k in range(1, m - 1):
            s = k / (m - 1)
            x = (1.0 - s) * start.positions + s * end.positions
            try:
                check_faces(x, mesh.faces)
            except GeometryError as exc:
                raise GeometryError(f"interpolated frame {k} is degenerate: {exc}", face=exc.face, frame=k) from exc
            frames.append(Immersion(mesh, x))
        frames.append(end)
    else:
        frames = [start]
        for k, im in enumerate(interior, start=1):
            if im.mesh.n_vertices != mesh.n_vertices or not np.array_equal(im.mesh.faces, mesh.faces):
                raise ParameterError(f"frame {k} does not share the path mesh")
            try:
                check_faces(im.positions, mesh.faces)
            except GeometryError as exc:
                raise GeometryError(f"frame {k} is degenerate: {exc}", face=exc.face, frame=k) from exc
            frames.append(Immersion(mesh, im.positions))
        frames.append(end)
    return PathState(frames, pinned)


def path_from_frames(frames: Sequence[Immersion], pinned: bool = True) -> PathState:
    return init_path(frames[0], frames[-1], list(frames[1:-1]), pinned)


def orientation_report(path: PathState) -> dict:
    """Signed volumes of the endpoints; an everting path reverses the sign."""
    v0 = signed_volume(path.frames[0])
    v1 = signed_volume(path.frames[-1])
    return {"start_volume": v0, "end_volume": v1, "everting": bool(abs(v0 + v1) <= 1e-6 * max(abs(v0), abs(v1)) and v0 * v1 < 0)}


def redistribute(path: PathState) -> PathState:
    """Equal-spacing reparametrization in the L² metric on positions."""
    xs = np.stack([im.positions for im in path.frames])
    seg = np.sqrt(np.sum((xs[1:] - xs[:-1]) ** 2, axis=(1, 2)))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0:
        return path.copy()
    targets = np.linspace(0.0, cum[-1], len(xs))
    frames = [path.frames[0]]
    for k in range(1, len(xs) - 1):
        j = int(np.clip(np.searchsorted(cum, targets[k]) - 1, 0, len(seg) - 1))
        s = (targets[k] - cum[j]) / seg[j] if seg[j] > 0 else 0.0
        frames.append(path.frames[0].with_positions((1 - s) * xs[j] + s * xs[j + 1]))
    frames.append(path.frames[-1])
    return PathState(frames, path.endpoints_pinned, reparametrized=True)


@dataclass(frozen=True)
class Sweep:
    sigma: float
    sweep: int
    width: float
    argmax: int
    frames_descended: tuple[int, ...]
    stalled: tuple[int, ...]


class WidthIncreased(AssertionError):
    """Raised if a sweep ever increases the path width (must never happen)."""


def minmax_relax(path: PathState, p: ViscosityParams, cfg: MinmaxConfig) -> tuple[PathState, list[Sweep]]:
    """Lower the width ``max_k F^σ(frame_k)`` by descending frames around the argmax.

    Stops when the argmax sits on a pinned endpoint (the width can no longer
    decrease), on stagnation, or after ``cfg.max_sweeps`` sweeps.
    """
    path = path.copy()
    mode = cfg.energy
    p = replace(p, area_constrained=cfg.area_constrained)
    trace: list[Sweep] = []
    e = path.energies(p, mode)
    width = float(e.max())
    movable = set(path.movable())
    for sweep in range(cfg.max_sweeps):
        pinned_max = max((e[k] for k in range(len(e)) if k not in movable), default=-math.inf)
        if pinned_max >= width - 1e-12 * abs(width):
            logger.debug("width attained at a pinned endpoint; nothing to relax")
            break
        k_max = int(np.argmax(e))
        window = [k for k in range(k_max - cfg.window, k_max + cfg.window + 1) if k in movable]
        stalled = []
        for k in window:
            res = descend_frame(path.frames[k], p, cfg.inner_steps, rule=cfg.step_rule, mode=mode, frame=k)
            if res.stalled:
                stalled.append(k)
            if res.energies[-1] < e[k]:
                path.replace_frame(k, res.immersion)
        if cfg.reparametrize:
            path = redistribute(path)
        e = path.energies(p, mode)
        new_width = float(e.max())
        if new_width > width * (1.0 + 1e-12) + 1e-14:
            raise WidthIncreased(f"width increased from {width!r} to {new_width!r} in sweep {sweep}")
        trace.append(Sweep(p.sigma, sweep, new_width, int(np.argmax(e)), tuple(window), tuple(stalled)))
        decrease = width - new_width
        width = new_width
        if decrease <= cfg.stagnation_tol * abs(width):
            break
    return path, trace


@dataclass(frozen=True)
class SigmaRecord:
    sigma: float
    width: float
    argmax: int
    willmore_at_max: float
    struwe: float
    accepted: bool
    sweeps: int
    multiplier: float | None = None
    realized_multiplier: float | None = None


@dataclass
class MinmaxReport:
    beta_trace: list[dict]
    sigma_records: list[SigmaRecord]
    argmax_frames: list[int]
    willmore_at_max: list[float]
    bubble_flags: list[list[dict]]
    accepted_sigmas: list[float]
    beta0_estimate: float | None
    min_struwe: float
    sigma_monotone: bool
    frame_energies: list[float]
    reparametrized: bool
    orientation: dict

    @property
    def position_vs_16pi(self) -> float | None:
        return None if self.beta0_estimate is None else self.beta0_estimate / (16.0 * math.pi)

    @property
    def willmore_at_max_vs_16pi(self) -> list[float]:
        """Willmore energy of the top frame per σ, in units of 16π, whether or not σ was accepted."""
        return [w / (16.0 * math.pi) for w in self.willmore_at_max]

    def to_json(self) -> dict:
        d = asdict(self)
        d["position_vs_16pi"] = self.position_vs_16pi
        d["willmore_at_max_vs_16pi"] = self.willmore_at_max_vs_16pi
        return d


def anneal(
    path: PathState,
    cfg: MinmaxConfig,
    *,
    bubble_epsilon: float | None = None,
    bubble_radius: float = 0.25,
) -> tuple[PathState, MinmaxReport]:
    """Run :func:`minmax_relax` for every σ of the schedule, reusing the path.

    σ is accepted when ``s(σ) < cfg.struwe_tol`` at the argmax frame; the
    β(0) estimate is ``W`` at the argmax frame of the smallest accepted σ.
    """
    if not cfg.sigma_schedule:
        raise ParameterError("empty σ schedule")
    beta_trace, records = [], []
    cur = path.copy()
    for sigma in cfg.sigma_schedule:
        p = ViscosityParams(sigma, area_constrained=cfg.area_constrained)
        initial = float(cur.energies(p, cfg.energy).max())
        cur, sweeps = minmax_relax(cur, p, cfg)
        e = cur.energies(p, cfg.energy)
        k = int(np.argmax(e))
        fe = frame_energy(cur.frames[k], p, "relaxed")
        b = fe.breakdown
        mult = realized = None
        if cfg.area_constrained:
            im_k = cur.frames[k]
            mult = lagrange_multiplier(im_k, aubin_balance(im_k), p)
            realized = dilation_multiplier(im_k, p)
        rec = SigmaRecord(
            sigma=sigma,
            width=float(e[k]),
            argmax=k,
            willmore_at_max=b.willmore,
            struwe=b.struwe,
            accepted=bool(b.struwe < cfg.struwe_tol),
            sweeps=len(sweeps),
            multiplier=mult,
            realized_multiplier=realized,
        )
        records.append(rec)
        beta_trace.append({"sigma": sigma, "initial_width": initial, "sweeps": [asdict(s) for s in sweeps], "width": rec.width})
    accepted = [r for r in records if r.accepted]
    widths = [r.width for r in records]
    bubbles = []
    if bubble_epsilon is not None:
        bubbles = [[asdict(b) for b in detect_bubbles(im, bubble_epsilon, bubble_radius)] for im in cur.frames]
    last_p = ViscosityParams(cfg.sigma_schedule[-1], area_constrained=cfg.area_constrained)
    report = MinmaxReport(
        beta_trace=beta_trace,
        sigma_records=records,
        argmax_frames=[r.argmax for r in records],
        willmore_at_max=[r.willmore_at_max for r in records],
        bubble_flags=bubbles,
        accepted_sigmas=[r.sigma for r in accepted],
        beta0_estimate=accepted[-1].willmore_at_max if accepted else None,
        min_struwe=min(r.struwe for r in records),
        sigma_monotone=bool(all(b <= a * (1 + 1e-12) for a, b in zip(widths, widths[1:]))),
        frame_energies=[float(v) for v in cur.energies(last_p, cfg.energy)],
        reparametrized=cur.reparametrized,
        orientation=orientation_report(cur),
    )
    return cur, report


# ----------------------------------------------------------------------------
# Bubble detection
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Bubble:
    center: int
    radius: float
    energy: float


def normal_energy_density(im: Immersion) -> np.ndarray:
    """Per-face ``|dn|² A_f`` with Max-weighted vertex normals (sums to 8π on the round sphere)."""
    x, f = im.positions, im.mesh.faces
    grads = barycentric_gradients(x, f)
    dn = face_gradient(max_weighted_normals(x, f), f, grads)
    _, fa = face_normals_and_areas(x, f)
    return np.sum(dn**2, axis=(1, 2)) * fa


def detect_bubbles(im: Immersion, epsilon: float, radius: float = 0.25) -> list[Bubble]:
    """Greedy partition of the reference sphere into geodesic balls; flag those with ``∫|dn|² ≥ ε``.

    Each round takes the unassigned face of largest ``|dn|²`` density, centres
    a ball of the given geodesic radius at its nearest reference vertex and
    assigns every unassigned face whose reference centroid lies inside.
    """
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    if not radius > 0:
        raise ParameterError("radius must be positive")
    mesh = im.mesh
    e = normal_energy_density(im)
    _, fa = face_normals_and_areas(im.positions, mesh.faces)
    density = e / fa
    cen = mesh.vertices[mesh.faces].mean(1)
    cen /= np.linalg.norm(cen, axis=1)[:, None]
    free = np.ones(len(e), bool)
    cos_r = math.cos(radius)
    out = []
    while free.any():
        idx = np.flatnonzero(free)
        f0 = idx[np.argmax(density[idx])]
        corners = mesh.faces[f0]
        v = int(corners[np.argmax(mesh.vertices[corners] @ cen[f0])])
        inside = free & (cen @ mesh.vertices[v] >= cos_r)
        inside[f0] = True
        total = float(e[inside].sum())
        free &= ~inside
        if total >= epsilon:
            out.append(Bubble(v, radius, total))
    return out
