"""Command-line front end.

Every command writes a JSON run report (stdout or ``--out``) and exits with

    0 ok, 2 I/O error, 3 failed check, 4 convergence failure, 5 bad parameters

Options may also come from a JSON file given with ``--config``; flags given
on the command line take precedence.  ``WILLMORE_THREADS`` sets the worker
count for finite-difference gradients.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .energy import ViscosityParams, energy_bounds_report, relaxed_energy
from .errors import CheckFailed, MeshIOError, ParameterError, WillmoreError
from .fixtures import fixture_names, make_fixture
from .gauge import (
    aubin_balance,
    barycenter_norm,
    conformal_distortion,
    ghoussoub_lin_check,
    liouville_residual,
    onofri_energy,
)
from .io import load_immersion, read_path_dir, save_immersion
from .mesh import Immersion, MobiusS2, random_rotation
from .minmax import MinmaxConfig, StepRule, anneal, detect_bubbles, path_from_frames
from .variation import (
    FD_RELATIVE_STEP,
    cap_loop,
    conservation_residuals,
    first_residue,
    grad_analytic,
    grad_fd,
    gradient_error,
    willmore_el_residual,
    willmore_residue,
)

logger = logging.getLogger("willmore_minmax")

GRAD_CHECK_TOL = 1e-4


def _add_input(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("input surface")
    g.add_argument("--mesh", help="OFF or OBJ file of the immersion")
    g.add_argument("--reference", help="reference sphere mesh sharing the vertex order of --mesh")
    g.add_argument("--fixture", help=f"built-in surface: {', '.join(fixture_names())} (name:param:...)")
    g.add_argument("--level", type=int, help="icosphere level for --fixture (default 4)")


def _add_sigma(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--sigma", type=float, help="viscosity parameter in (0, 1) (default 0.1)")
    sp.add_argument("--area-constrained", action="store_true", default=None)


class _Parser(argparse.ArgumentParser):
    # Usage errors are bad parameters, not I/O failures.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(ParameterError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="willmore-minmax", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--config", help="JSON file with default option values")
    ap.add_argument("--out", help="write the JSON report here instead of stdout")
    ap.add_argument("--seed", type=int, help="seed for randomized checks")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("energy", help="energies and bound checks")
    _add_input(sp)
    _add_sigma(sp)

    sp = sub.add_parser("gauge", help="Aubin gauge, Onofri functionals and Liouville residual")
    _add_input(sp)
    sp.add_argument("--invariance-trials", type=int, help="random Möbius gauges to compare (needs --seed)")

    sp = sub.add_parser("grad-check", help="analytic gradient against central differences")
    _add_input(sp)
    _add_sigma(sp)
    sp.add_argument("--h", type=float, help="finite-difference step in length units (default 1e-5 x mesh diameter)")
    sp.add_argument("--tol", type=float, help=f"relative tolerance (default {GRAD_CHECK_TOL})")

    sp = sub.add_parser("residual", help="Euler-Lagrange and conservation-law residuals")
    _add_input(sp)
    _add_sigma(sp)

    sp = sub.add_parser("residue", help="Willmore and first residues across an edge loop")
    _add_input(sp)
    sp.add_argument("--loop", help="comma-separated vertex indices of a simple edge cycle")
    sp.add_argument("--cap-height", type=float, help="use the boundary of the reference cap {p.axis > height}")
    sp.add_argument("--axis", help="cap axis as x,y,z (default 0,0,1)")
    sp.add_argument("--literal-pi", action="store_true", default=None, help="coefficient 3π instead of 3 in the first residue")

    sp = sub.add_parser("minmax", help="anneal a path directory")
    sp.add_argument("--path", help="directory with manifest.json and frame files")
    sp.add_argument("--schedule", help="'geometric' or comma-separated decreasing σ values")
    sp.add_argument("--inner-steps", type=int)
    sp.add_argument("--max-sweeps", type=int)
    sp.add_argument("--window", type=int)
    sp.add_argument("--struwe-tol", type=float)
    sp.add_argument("--energy", choices=["relaxed", "willmore"])
    sp.add_argument("--area-constrained", action="store_true", default=None)
    sp.add_argument("--reparametrize", action="store_true", default=None)
    sp.add_argument("--bubble-epsilon", type=float)
    sp.add_argument("--expect-eversion", action="store_true", default=None)

    sp = sub.add_parser("bubbles", help="flag balls of concentrated bending energy")
    _add_input(sp)
    sp.add_argument("--epsilon", type=float, help="energy threshold (default 1.0)")
    sp.add_argument("--radius", type=float, help="geodesic ball radius on the reference sphere (default 0.25)")

    sp = sub.add_parser("make-fixture", help="write a built-in surface to a mesh file")
    sp.add_argument("name", nargs="?", help=f"one of {', '.join(fixture_names())} (name:param:...)")
    sp.add_argument("--level", type=int)
    sp.add_argument("--output", "-o", help="destination .off or .obj file")
    return ap


def _merge_config(args: argparse.Namespace) -> dict[str, Any]:
    opts: dict[str, Any] = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise MeshIOError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ParameterError("config file must hold a JSON object")
        opts.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "verbose"):
            opts[k] = v
    return opts


def _surface(o: dict) -> Immersion:
    if o.get("mesh"):
        if not Path(o["mesh"]).exists():
            raise MeshIOError(f"mesh file {o['mesh']} does not exist")
        return load_immersion(o["mesh"], o.get("reference"))
    if o.get("fixture"):
        return make_fixture(o["fixture"], int(o.get("level", 4)))
    raise ParameterError("give --mesh or --fixture")


def _params(o: dict) -> ViscosityParams:
    return ViscosityParams(float(o.get("sigma", 0.1)), area_constrained=bool(o.get("area_constrained", False)))


def _vec(text: str) -> np.ndarray:
    try:
        v = np.array([float(t) for t in str(text).split(",")])
    except ValueError as exc:
        raise ParameterError(f"bad vector {text!r}") from exc
    if v.shape != (3,):
        raise ParameterError(f"expected three components, got {text!r}")
    return v


def cmd_energy(o: dict) -> tuple[dict, dict, str | None]:
    im = _surface(o)
    p = _params(o)
    g = aubin_balance(im)
    e = relaxed_energy(im, g, p)
    bounds = energy_bounds_report(im, g, p)
    return {"energy": e.to_json(), "bounds": bounds.to_json()}, {"lower_bound_alarm_clear": not bounds.alarm}, im.digest()


def cmd_gauge(o: dict) -> tuple[dict, dict, str | None]:
    im = _surface(o)
    g = aubin_balance(im)
    on = onofri_energy(im, g)
    gl = ghoussoub_lin_check(im, g)
    lv = liouville_residual(im, g)
    dist = conformal_distortion(im, g)
    res = {
        "gauge": g.to_json(),
        "barycenter_norm": barycenter_norm(im, g),
        "onofri": on.to_json(),
        "ghoussoub_lin": gl,
        "liouville_l1": lv.l1,
        "conformal_distortion": {"max": float(dist.max()), "mean": float(dist.mean())},
    }
    checks = {"onofri": on.passed, "ghoussoub_lin": gl >= -on.tolerance, "balanced": res["barycenter_norm"] < 1e-6}
    trials = int(o.get("invariance_trials", 0) or 0)
    if trials:
        if o.get("seed") is None:
            raise ParameterError("--invariance-trials needs --seed")
        from .gauge import conformal_factor

        rng = np.random.default_rng(int(o["seed"]))
        values = []
        for _ in range(trials):
            a = rng.standard_normal(3)
            a *= 0.5 * rng.random() / np.linalg.norm(a)
            gm = conformal_factor(im, MobiusS2(a, random_rotation(rng)))
            values.append(onofri_energy(im, gm).onofri_value)
        spread = float(max(abs(v - on.onofri_value) for v in values))
        res["gauge_invariance"] = {"values": values, "max_deviation": spread}
        checks["gauge_invariance"] = spread <= 1e-2
    return res, checks, im.digest()


def cmd_grad_check(o: dict) -> tuple[dict, dict, str | None]:
    im = _surface(o)
    p = _params(o)
    g = aubin_balance(im)
    h = o.get("h")
    step = FD_RELATIVE_STEP * im.diameter() if h is None else float(h)
    tol = float(o.get("tol", GRAD_CHECK_TOL))
    ga = grad_analytic(im, g, p)
    gf = grad_fd(im, g, p, step)
    err = gradient_error(ga.w, gf.w)
    return {"h": step, "max_relative_deviation": err, "norm_phi": ga.norm_phi}, {"gradient": err < tol}, im.digest()


def cmd_residual(o: dict) -> tuple[dict, dict, str | None]:
    im = _surface(o)
    p = _params(o)
    g = aubin_balance(im)
    cr = conservation_residuals(im, g, p)
    el = willmore_el_residual(im)
    return {"conservation": cr.to_json(), "willmore_el": el.norm, "liouville_l1": liouville_residual(im, g).l1}, {}, im.digest()


def cmd_residue(o: dict) -> tuple[dict, dict, str | None]:
    im = _surface(o)
    if o.get("loop"):
        try:
            loop = [int(t) for t in str(o["loop"]).split(",")]
        except ValueError as exc:
            raise ParameterError("loop must be comma-separated integers") from exc
    elif o.get("cap_height") is not None:
        axis = _vec(o["axis"]) if o.get("axis") else np.array([0.0, 0.0, 1.0])
        loop = cap_loop(im.mesh, axis, float(o["cap_height"])).tolist()
    else:
        raise ParameterError("give --loop or --cap-height")
    wr = willmore_residue(im, loop)
    fr = first_residue(im, loop, literal_pi=bool(o.get("literal_pi", False)))
    return {"loop": loop, "willmore_residue": wr.tolist(), "first_residue": fr.tolist()}, {}, im.digest()


def _schedule(text) -> tuple[float, ...]:
    if text is None or text == "geometric":
        return MinmaxConfig.geometric_schedule()
    if isinstance(text, (list, tuple)):
        return tuple(float(s) for s in text)
    try:
        return tuple(float(s) for s in str(text).split(","))
    except ValueError as exc:
        raise ParameterError(f"bad schedule {text!r}") from exc


def cmd_minmax(o: dict) -> tuple[dict, dict, str | None]:
    if not o.get("path"):
        raise ParameterError("give --path")
    _, frames, pinned = read_path_dir(o["path"])
    path = path_from_frames(frames, pinned)
    cfg = MinmaxConfig(
        sigma_schedule=_schedule(o.get("schedule")),
        inner_steps=int(o.get("inner_steps", 10)),
        step_rule=StepRule(),
        area_constrained=bool(o.get("area_constrained", False)),
        struwe_tol=float(o.get("struwe_tol", 0.5)),
        max_sweeps=int(o.get("max_sweeps", 50)),
        window=int(o.get("window", 1)),
        energy=o.get("energy", "relaxed"),
        reparametrize=bool(o.get("reparametrize", False)),
    )
    eps = o.get("bubble_epsilon")
    _, rep = anneal(path, cfg, bubble_epsilon=None if eps is None else float(eps))
    res = {"config": cfg.to_json(), "report": rep.to_json()}
    checks = {"lower_bound": rep.beta0_estimate is None or rep.beta0_estimate >= 4.0 * math.pi * 0.98}
    if o.get("expect_eversion"):
        checks["everting_endpoints"] = rep.orientation["everting"]
    return res, checks, frames[0].mesh.digest()


def cmd_bubbles(o: dict) -> tuple[dict, dict, str | None]:
    im = _surface(o)
    eps = float(o.get("epsilon", 1.0))
    radius = float(o.get("radius", 0.25))
    balls = detect_bubbles(im, eps, radius)
    return {"epsilon": eps, "radius": radius, "bubbles": [b.__dict__ for b in balls]}, {}, im.digest()


def cmd_make_fixture(o: dict) -> tuple[dict, dict, str | None]:
    if not o.get("name") or not o.get("output"):
        raise ParameterError("make-fixture needs a fixture name and --output")
    im = make_fixture(o["name"], int(o.get("level", 4)))
    save_immersion(o["output"], im)
    return {"fixture": o["name"], "level": im.mesh.subdivision_level, "n_vertices": im.mesh.n_vertices, "output": o["output"]}, {}, im.digest()


COMMANDS = {
    "energy": cmd_energy,
    "gauge": cmd_gauge,
    "grad-check": cmd_grad_check,
    "residual": cmd_residual,
    "residue": cmd_residue,
    "minmax": cmd_minmax,
    "bubbles": cmd_bubbles,
    "make-fixture": cmd_make_fixture,
}


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def run(opts: dict) -> tuple[dict, int]:
    """Execute one job; returns the report and the exit status."""
    command = opts["command"]
    config = {k: v for k, v in sorted(opts.items()) if k != "out"}
    report: dict[str, Any] = {"command": command, "config": config, "config_hash": _hash(config)}
    t0 = time.perf_counter()
    try:
        results, checks, mesh_hash = COMMANDS[command](opts)
    except WillmoreError as exc:
        report.update(error={"type": type(exc).__name__, "message": str(exc)}, passed=False)
        report["timing"] = {"seconds": time.perf_counter() - t0}
        return report, exc.exit_code
    report["results"] = results
    report["mesh_hash"] = mesh_hash
    report["checks"] = {k: bool(v) for k, v in checks.items()}
    report["passed"] = all(report["checks"].values())
    report["timing"] = {"seconds": time.perf_counter() - t0}
    return report, 0 if report["passed"] else CheckFailed.exit_code


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = _merge_config(args)
    except WillmoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    report, status = run(opts)
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
    if opts.get("out"):
        try:
            Path(opts["out"]).write_text(text + "\n")
        except OSError as exc:
            print(f"error: cannot write {opts['out']}: {exc}", file=sys.stderr)
            return MeshIOError.exit_code
    else:
        print(text)
    if "error" in report:
        print(f"error: {report['error']['message']}", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
