"""Willmore energy, the smoother, and the relaxed energy ``F^σ = W + σ² S + l_σ 𝒪``."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import functional
from .errors import ParameterError
from .gauge import GaugeState, require_balanced, require_consistent, tol_onofri
from .mesh import DiscreteGeometry, Immersion


@dataclass(frozen=True)
class ViscosityParams:
    """Viscosity parameter ``sigma`` in (0, 1) and optional area constraint."""

    sigma: float
    area_constrained: bool = False
    lambda_multiplier: float = 0.0
    l_sigma: float = field(init=False)

    def __post_init__(self):
        s = float(self.sigma)
        if not (0.0 < s < 1.0) or not math.isfinite(s):
            raise ParameterError(f"sigma must lie in (0, 1), got {self.sigma!r}")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "l_sigma", 1.0 / math.log(1.0 / s))

    def weights(self) -> tuple[float, float, float]:
        """Coefficients of (W, smoother, Onofri) in ``F^σ``."""
        return 1.0, self.sigma**2, self.l_sigma


def f_sigma(t, sigma: float):
    """``log(1/σ) [t² + σ²(1 + t²)²]``."""
    t = np.asarray(t, float)
    return math.log(1.0 / sigma) * (t**2 + sigma**2 * (1.0 + t**2) ** 2)


def f_sigma_prime(t, sigma: float):
    t = np.asarray(t, float)
    return math.log(1.0 / sigma) * (2.0 * t + 4.0 * sigma**2 * t * (1.0 + t**2))


@dataclass(frozen=True)
class EnergyBreakdown:
    willmore: float
    smoother: float
    onofri: float
    total: float
    area: float
    sigma_derivative: float
    sigma: float
    l_sigma: float
    multiplier: float | None = None
    mesh_hash: str = ""
    gauge_hash: str = ""

    @property
    def struwe(self) -> float:
        """``σ log(1/σ) ∂_σ F^σ``."""
        return self.sigma * math.log(1.0 / self.sigma) * self.sigma_derivative

    def to_json(self) -> dict:
        d = asdict(self)
        d["struwe"] = self.struwe
        return d


def willmore(geo: DiscreteGeometry) -> float:
    """``Σ_v |H_v|² A_v``."""
    h2 = np.einsum("ij,ij->i", geo.mean_curvature_vec, geo.mean_curvature_vec)
    return float(np.sum(h2 * geo.vertex_areas))


def smoother(geo: DiscreteGeometry) -> float:
    """``Σ_v (1 + |H_v|²)² A_v``."""
    h2 = np.einsum("ij,ij->i", geo.mean_curvature_vec, geo.mean_curvature_vec)
    return float(np.sum((1.0 + h2) ** 2 * geo.vertex_areas))


def combine(W: float, S: float, O: float, area: float, p: ViscosityParams, **extra) -> EnergyBreakdown:
    s, l = p.sigma, p.l_sigma
    return EnergyBreakdown(
        willmore=W,
        smoother=S,
        onofri=O,
        total=W + s**2 * S + l * O,
        area=area,
        sigma_derivative=2.0 * s * S + (l**2 / s) * O,
        sigma=s,
        l_sigma=l,
        **extra,
    )


def relaxed_energy(im: Immersion, g: GaugeState, p: ViscosityParams) -> EnergyBreakdown:
    """All parts of ``F^σ`` for an immersion in the gauge ``g``."""
    require_consistent(im, g)
    fw = functional.forward(im.positions, im.mesh.faces, g.cells)
    mult = None
    if p.area_constrained:
        from .variation import multiplier_closed_form

        mult = multiplier_closed_form(fw, p)
    return combine(
        fw.W, fw.S, fw.onofri, fw.area, p, multiplier=mult, mesh_hash=im.digest(), gauge_hash=g.digest()
    )


def relaxed_energy_at(positions: np.ndarray, faces: np.ndarray, cells: np.ndarray, p: ViscosityParams) -> float:
    """``F^σ`` of raw positions with frozen g0 cells (hot path for probes)."""
    fw = functional.forward(positions, faces, cells)
    return fw.W + p.sigma**2 * fw.S + p.l_sigma * fw.onofri


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    passed: bool
    applicable: bool = True


@dataclass(frozen=True)
class BoundsReport:
    checks: tuple[BoundCheck, ...]
    alarm: bool

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks if c.applicable)

    def to_json(self) -> dict:
        return {"checks": [asdict(c) for c in self.checks], "alarm": self.alarm, "all_passed": self.all_passed}


def energy_bounds_report(im: Immersion, g: GaugeState, p: ViscosityParams) -> BoundsReport:
    """Inter-energy inequalities between ``F^σ``, ``W``, the smoother and the area.

    * area bound: ``|log A| l_σ <= 2 + l_σ log(σ² S)``
    * lower bound: ``F^σ >= W + σ² S`` (failure beyond ``l_σ tol`` raises the alarm)
    * gradient bound: ``l_σ ∫|dα|² <= 6 (F^σ - W)``
    * log-area bound: ``l_σ log(A) / 2 <= 1 + l_σ log(F^σ - W)`` when ``F^σ > W``
    """
    require_balanced(im, g)
    e = relaxed_energy(im, g, p)
    fw = functional.forward(im.positions, im.mesh.faces, g.cells)
    l, s = p.l_sigma, p.sigma
    lvl = im.mesh.subdivision_level
    tol = tol_onofri(lvl if lvl >= 0 else 4)
    excess = e.total - e.willmore

    checks = []
    lhs = abs(math.log(e.area)) * l
    rhs = 2.0 + l * math.log(s**2 * e.smoother)
    checks.append(BoundCheck("area_bound", lhs, rhs, lhs <= rhs))
    lb_rhs = e.willmore + s**2 * e.smoother
    checks.append(BoundCheck("lower_bound", e.total, lb_rhs, e.total >= lb_rhs))
    alarm = e.total < lb_rhs - l * tol
    lhs = l * 2.0 * fw.D
    checks.append(BoundCheck("gradient_bound", lhs, 6.0 * excess, lhs <= 6.0 * excess))
    if excess > 0:
        lhs = 0.5 * math.log(e.area) * l
        rhs = 1.0 + l * math.log(excess)
        checks.append(BoundCheck("log_area_bound", lhs, rhs, lhs <= rhs))
    else:
        checks.append(BoundCheck("log_area_bound", float("nan"), float("nan"), True, applicable=False))
    return BoundsReport(tuple(checks), bool(alarm))
