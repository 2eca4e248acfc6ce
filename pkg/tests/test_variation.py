import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import decreases_at_order, fixture, ico, observed_orders, unit_sphere
from willmore_minmax import functional
from willmore_minmax.energy import ViscosityParams
from willmore_minmax.errors import GaugeError, ParameterError
from willmore_minmax.fixtures import conformal_spheroid, perturbation_field, perturbed_sphere
from willmore_minmax.gauge import aubin_balance, conformal_factor
from willmore_minmax.mesh import Immersion, MobiusS2, induced_geometry, random_rotation, rotation_about, vertex_areas
from willmore_minmax.variation import (
    cap_loop,
    conservation_residuals,
    dilation_multiplier,
    first_residue,
    first_variation_fH,
    first_variation_onofri,
    fit_fd_error_model,
    grad_analytic,
    grad_fd,
    gradient_error,
    lagrange_multiplier,
    region_boundary,
    validate_loop,
    variation_field,
    willmore_el_residual,
    willmore_residue,
)

P = ViscosityParams(0.1)
FOUR_PI = 4.0 * math.pi


def smooth_field(mesh, seeds=(1, 2, 3)):
    return np.stack([perturbation_field(mesh, s) for s in seeds], 1)


def similarity_modes(x):
    return [np.tile(e, (len(x), 1)) for e in np.eye(3)] + [np.cross(e, x) for e in np.eye(3)] + [x]


# --- variation fields ------------------------------------------------------------


def test_variation_field_norm():
    im = fixture("ellipsoid:1:1:2", 3)
    assert variation_field(im, np.zeros((642, 3))).norm_phi == 0.0
    w = smooth_field(im.mesh)
    v = variation_field(im, w)
    assert v.norm_phi > 0
    assert variation_field(im, 3 * w).norm_phi == pytest.approx(3 * v.norm_phi, rel=1e-12)
    assert len(json.loads(json.dumps(v.to_json()))["w"]) == 642
    with pytest.raises(ParameterError):
        variation_field(im, np.zeros((10, 3)))


# --- gradient oracle -------------------------------------------------------------


def test_grad_fd_rejects_bad_step():
    im = unit_sphere(1)
    with pytest.raises(ParameterError):
        grad_fd(im, aubin_balance(im), P, 0.0)


def test_grad_fd_workers_agree():
    im = fixture("ellipsoid:1:1:2", 1)
    g = aubin_balance(im)
    a = grad_fd(im, g, P, 1e-5).w
    b = grad_fd(im, g, P, 1e-5, workers=4).w
    assert np.array_equal(a, b)


def test_grad_fd_relative_step():
    m = ico(1)
    im = Immersion(m, 3.0 * m.vertices)
    g = aubin_balance(im)
    a = grad_fd(im, g, P, 1e-5 * im.diameter()).w
    b = grad_fd(im, g, P, 1e-5, relative_step=True).w
    assert np.array_equal(a, b)
    assert np.array_equal(grad_fd(im, g, P).w, b)


@pytest.mark.parametrize("spec, level", [("sphere", 2), ("ellipsoid:1:1:2", 3)])
def test_gradient_matches_fd(spec, level):
    im = fixture(spec, level)
    g = aubin_balance(im)
    assert gradient_error(grad_analytic(im, g, P).w, grad_fd(im, g, P, 1e-5).w) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_fd_perturbed(seed):
    im = perturbed_sphere(ico(2), 0.05, seed)
    g = aubin_balance(im)
    assert gradient_error(grad_analytic(im, g, P).w, grad_fd(im, g, P, 1e-5).w) < 1e-4


@pytest.mark.parametrize("weights", [(1, 0, 0), (0, 1, 0), (0, 0, 1)])
def test_gradient_parts_match_fd(weights):
    im = fixture("bump-sphere:0.3", 2)
    g = aubin_balance(im)
    a = grad_analytic(im, g, P, weights=weights).w
    assert gradient_error(a, grad_fd(im, g, P, 1e-5, weights=weights).w) < 1e-4


@pytest.mark.parametrize("spec", ["sphere", "ellipsoid:1:1:2"])
def test_fd_step_sweep_fits_error_model(spec):
    im = fixture(spec, 2)
    g = aubin_balance(im)
    a = grad_analytic(im, g, P).w
    steps = (1e-4, 1e-5, 1e-6)
    errors = [gradient_error(a, grad_fd(im, g, P, h).w) for h in steps]
    fit = fit_fd_error_model(steps, errors)
    assert fit.fits and fit.worst_ratio <= 10.0
    assert fit.c1 > 0


def test_error_model_rejects_wrong_shape():
    # Errors growing with h faster than h² fit neither term.
    assert not fit_fd_error_model((1e-4, 1e-5, 1e-6), (1.0, 1e-6, 1e-12)).fits


def test_gradient_radial_at_fivefold_vertices():
    # The 12 icosahedron vertices have 5-fold stabilizers, which force a radial gradient.
    for level in (2, 3):
        im = unit_sphere(level)
        ga = grad_analytic(im, aubin_balance(im), P).w[:12]
        cos = np.abs(np.einsum("ij,ij->i", ga, im.positions[:12])) / np.linalg.norm(ga, axis=1)
        assert np.arccos(np.clip(cos, 0, 1)).max() < 2e-2


@pytest.mark.xfail(strict=True, reason="icosphere vertices off the 5-fold axes have no symmetry forcing radiality")
def test_gradient_radial_everywhere_on_unit_sphere():
    im = unit_sphere(3)
    gf = grad_fd(im, aubin_balance(im), P).w
    cos = np.abs(np.einsum("ij,ij->i", gf, im.positions)) / np.linalg.norm(gf, axis=1)
    assert np.arccos(np.clip(cos, 0, 1)).max() < 2e-2


@pytest.mark.parametrize("spec", ["sphere", "ellipsoid:1:1:2", "perturbed-sphere:0.2:1"])
def test_similarity_zero_modes(spec):
    im = fixture(spec, 3)
    g = aubin_balance(im)
    grad = grad_analytic(im, g, P, weights=(1.0, 0.0, P.l_sigma)).w
    x = im.positions
    scale = np.abs(grad).max() * np.abs(x).max() + 1e-300
    for mode in similarity_modes(x):
        assert abs(np.sum(grad * mode)) <= 1e-8 * max(scale, 1.0)


def test_translation_zero_mode_fd():
    im = fixture("ellipsoid:1:1:2", 2)
    g = aubin_balance(im)
    gf = grad_fd(im, g, P, 1e-5).w
    scale = np.abs(gf).max()
    for e in np.eye(3):
        assert abs(np.sum(gf @ e)) <= 1e-8 * scale * len(gf)


def test_willmore_gradient_vanishes_on_sphere_only():
    sph, ell = [], []
    for level in (3, 4, 5):
        s, e = unit_sphere(level), fixture("ellipsoid:1:1:2", level)
        sph.append(np.abs(grad_analytic(s, aubin_balance(s), P, weights=(1, 0, 0)).w).max())
        ell.append(np.abs(grad_analytic(e, aubin_balance(e), P, weights=(1, 0, 0)).w).max())
    assert decreases_at_order(sph, 1.0), sph
    assert not decreases_at_order(ell, 1.0) and min(ell) > 10 * max(sph)


def test_willmore_gradient_weak_pairing_ellipsoid_converges_to_nonzero():
    vals = []
    for level in (3, 4, 5):
        im = fixture("ellipsoid:1:1:2", level)
        grad = grad_analytic(im, aubin_balance(im), P, weights=(1, 0, 0)).w
        vals.append(float(np.sum(grad * smooth_field(im.mesh))))
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])
    assert abs(vals[2]) > 1.0


# --- first_variation_fH ------------------------------------------------------------


def f_t2(t):
    return t**2


def fp_t2(t):
    return 2 * t


def f_sm(t):
    return (1 + t**2) ** 2


def fp_sm(t):
    return 4 * t * (1 + t**2)


def fH_case(spec, level):
    im = fixture(spec, level)
    w = smooth_field(im.mesh)
    value = first_variation_fH(im, f_sm, fp_sm, variation_field(im, w))
    eps = 1e-6
    s = lambda x: functional.forward(x, im.mesh.faces).S  # noqa: E731
    fd = (s(im.positions + eps * w) - s(im.positions - eps * w)) / (2 * eps)
    l2 = math.sqrt(np.sum(np.sum(w**2, 1) * vertex_areas(im.positions, im.mesh.faces)))
    return abs(value - fd), max(1e-3 * abs(fd), 5e-3 * l2)


def test_fH_constant_field_zero():
    im = fixture("ellipsoid:1:1:2", 3)
    w = np.tile([0.3, -1.0, 2.0], (im.mesh.n_vertices, 1))
    assert abs(first_variation_fH(im, f_t2, fp_t2, w)) <= 1e-10 * FOUR_PI
    assert abs(first_variation_fH(im, f_sm, fp_sm, w)) <= 1e-10 * FOUR_PI


def test_fH_sphere_dilation_zero():
    vals = []
    for level in (3, 4, 5):
        im = unit_sphere(level)
        vals.append(abs(first_variation_fH(im, f_t2, fp_t2, im.positions)))
    assert max(vals) < 1e-2 and decreases_at_order(vals, 1.0), vals


def test_fH_perturbed_sphere_level4():
    err, tol = fH_case("perturbed-sphere:0.1:3", 4)
    assert err <= tol


@pytest.mark.xfail(strict=True, reason="O(h²) quadrature error exceeds the tolerance at level 4")
def test_fH_ellipsoid_level4():
    err, tol = fH_case("ellipsoid:1:1:2", 4)
    assert err <= tol


def test_fH_ellipsoid_level5():
    err, tol = fH_case("ellipsoid:1:1:2", 5)
    assert err <= tol


@pytest.mark.parametrize("spec", ["ellipsoid:1:1:2", "conformal-spheroid:1:2"])
def test_fH_second_order_convergence(spec):
    errs = [fH_case(spec, level)[0] for level in (3, 4, 5)]
    assert all(o > 1.8 for o in observed_orders(errs)), errs


# --- first_variation_onofri ----------------------------------------------------------


def onofri_fd(im, g, w, eps=1e-6):
    o = lambda x: functional.forward(x, im.mesh.faces, g.cells).onofri  # noqa: E731
    return (o(im.positions + eps * w) - o(im.positions - eps * w)) / (2 * eps)


@pytest.mark.parametrize("spec", ["sphere", "ellipsoid:1:1:2", "bump-sphere:0.3"])
def test_onofri_exact_derivative_matches_fd(spec):
    im = fixture(spec, 3)
    g = aubin_balance(im)
    w = smooth_field(im.mesh)
    ov = first_variation_onofri(im, g, w)
    fd = onofri_fd(im, g, w)
    # On the sphere both sides vanish by symmetry and the FD quotient is roundoff.
    assert ov.exact == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_onofri_variation_dilation_zero():
    for spec in ("sphere", "ellipsoid:1:1:2"):
        im = fixture(spec, 4)
        assert abs(first_variation_onofri(im, aubin_balance(im), im.positions).exact) < 1e-9


def test_onofri_structural_dilation_converges():
    # The structural form integrates e^{-2α} by face means, so it is only O(h²)-close to zero.
    vals = []
    for level in (3, 4, 5):
        im = fixture("ellipsoid:1:1:2", level)
        vals.append(abs(first_variation_onofri(im, aubin_balance(im), im.positions).structural))
    assert all(o > 1.8 for o in observed_orders(vals)), vals
    assert abs(first_variation_onofri(unit_sphere(4), aubin_balance(unit_sphere(4)), unit_sphere(4).positions).structural) < 1e-9


def test_onofri_variation_terms():
    im = fixture("ellipsoid:1:1:2", 3)
    ov = first_variation_onofri(im, aubin_balance(im), smooth_field(im.mesh))
    t = ov.terms
    assert set(t) == {"dirichlet_flux", "gradient", "second_form", "volume", "log_area"}
    inner = 0.5 * (t["dirichlet_flux"] + t["gradient"] + t["second_form"] + t["volume"])
    assert ov.structural == pytest.approx(inner + t["log_area"], rel=1e-12)
    lit = first_variation_onofri(im, aubin_balance(im), smooth_field(im.mesh), literal_alpha_weight=True)
    assert lit.exact == ov.exact and lit.structural != ov.structural
    assert json.loads(json.dumps(ov.to_json()))["exact"] == ov.exact


def test_onofri_variation_requires_balance():
    im = fixture("ellipsoid:1:1:2", 2)
    with pytest.raises(GaugeError):
        first_variation_onofri(im, conformal_factor(im, MobiusS2(np.array([0.3, 0, 0]))), im.positions)


def _normal_bump(im):
    geo = induced_geometry(im)
    bump = np.exp(-np.sum((im.mesh.vertices - np.array([0.0, 0.0, 1.0])) ** 2, 1) / 0.3)
    return bump[:, None] * geo.normals


@pytest.mark.xfail(strict=True, reason="a normal bump leaves the conformal class the area-ratio factor tracks")
def test_onofri_structural_normal_bump_ellipsoid():
    rel = []
    for level in (4, 5):
        im = fixture("ellipsoid:1:1:2", level)
        ov = first_variation_onofri(im, aubin_balance(im), _normal_bump(im))
        rel.append(abs(ov.structural / ov.exact - 1))
    assert rel[0] <= 0.10 and rel[1] < rel[0]


@pytest.mark.parametrize("c", [2.0, 0.7])
def test_onofri_structural_conformal_family(c):
    rel = []
    for level in (3, 4, 5):
        m = ico(level)
        im = conformal_spheroid(m, 1.0, c)
        d = 1e-4
        w = (conformal_spheroid(m, 1.0, c + d).positions - conformal_spheroid(m, 1.0, c - d).positions) / (2 * d)
        ov = first_variation_onofri(im, aubin_balance(im), w)
        rel.append(abs(ov.structural / ov.exact - 1))
    assert rel[1] <= 0.10
    assert rel[0] > rel[1] > rel[2]


# --- conservation laws ----------------------------------------------------------------


def test_conservation_sphere_refinement():
    reports = [conservation_residuals(unit_sphere(level), aubin_balance(unit_sphere(level)), P) for level in (3, 4, 5)]
    for name in ("dL_closedness", "scalar_law", "vector_law", "codazzi", "D_curl"):
        vals = [getattr(r, name) for r in reports]
        assert decreases_at_order(vals, 1.0), (name, vals)
        assert min(vals) >= 0


def test_conservation_rotation_invariant():
    im = fixture("perturbed-sphere:0.1:2", 3)
    rot = random_rotation(np.random.default_rng(11))
    rim = Immersion(im.mesh, im.positions @ rot.T)
    a = conservation_residuals(im, aubin_balance(im), P).to_json()
    b = conservation_residuals(rim, aubin_balance(rim), P).to_json()
    for k in a:
        assert abs(a[k] - b[k]) <= 1e-12 * max(1.0, abs(a[k])), k


def test_conservation_perturbation_exceeds_sphere():
    s = unit_sphere(3)
    q = fixture("perturbed-sphere:0.1:3", 3)
    rs = conservation_residuals(s, aubin_balance(s), P)
    rq = conservation_residuals(q, aubin_balance(q), P)
    assert rq.dL_closedness > rs.dL_closedness
    assert rq.scalar_law > rs.scalar_law and rq.vector_law > rs.vector_law


def test_vector_law_converges_on_ellipsoid():
    vals = []
    for level in (3, 4, 5):
        im = fixture("ellipsoid:1:1:2", level)
        vals.append(conservation_residuals(im, aubin_balance(im), P).vector_law)
    assert vals[0] > vals[1] > vals[2]


def test_conservation_ladder_correlation():
    rng = np.random.default_rng(0)
    closed, scalar = [], []
    for _ in range(30):
        im = perturbed_sphere(ico(3), rng.uniform(0, 0.2), int(rng.integers(1000)))
        r = conservation_residuals(im, aubin_balance(im), P)
        closed.append(r.dL_closedness)
        scalar.append(r.scalar_law)
    assert np.corrcoef(closed, scalar)[0, 1] > 0.9


# --- Euler-Lagrange residual ---------------------------------------------------------


def test_el_residual_sphere():
    vals = [willmore_el_residual(unit_sphere(level)).norm for level in (3, 4, 5)]
    assert decreases_at_order(vals, 1.0), vals


def test_el_residual_ellipsoid_bounded_away():
    vals = [willmore_el_residual(induced_geometry(fixture("ellipsoid:1:1:2", level))).norm for level in (3, 4, 5)]
    assert min(vals) > 1.0


def _catenoid_weak(level):
    im = fixture("inverted-catenoid", level)
    geo = induced_geometry(im)
    r = willmore_el_residual(geo).field
    z = im.mesh.vertices[:, 2]
    cutoff = np.clip(0.49 - z**2, 0, None) ** 3  # C² and zero near both ends
    return abs(float(np.sum(np.sum(r * cutoff[:, None] * geo.normals, 1) * geo.vertex_areas)))


def test_el_residual_catenoid_weak_away_from_center():
    vals = [_catenoid_weak(level) for level in (3, 4, 5)]
    assert all(o > 1.8 for o in observed_orders(vals)), vals


@pytest.mark.xfail(strict=True, reason="pointwise divergence of a third-derivative field does not converge")
def test_el_residual_catenoid_pointwise_away_from_center():
    vals = []
    for level in (3, 4, 5):
        im = fixture("inverted-catenoid", level)
        geo = induced_geometry(im)
        r = willmore_el_residual(geo).field
        sel = np.abs(im.mesh.vertices[:, 2]) < 0.5
        vals.append(math.sqrt(np.sum(np.sum(r[sel] ** 2, 1) * geo.vertex_areas[sel])))
    assert vals[0] > vals[1] > vals[2]


def test_el_residual_h2_coefficient_matters_on_sphere():
    assert willmore_el_residual(unit_sphere(3), h2_coeff=2.0).norm > 1.0


# --- loops and residues --------------------------------------------------------------------


def test_cap_loop_is_valid():
    m = ico(3)
    loop = cap_loop(m, height=0.3)
    im = Immersion(m, m.vertices)
    lp, left = validate_loop(im, loop)
    assert len(left) == len(loop)
    assert np.all(m.vertices[m.faces[left]][:, :, 2].max(1) > 0.3)


def test_loop_errors():
    im = unit_sphere(2)
    loop = cap_loop(im.mesh, height=0.3)
    with pytest.raises(ParameterError):
        validate_loop(im, [0, 1])
    with pytest.raises(ParameterError):
        validate_loop(im, list(loop) + [loop[0]])
    with pytest.raises(ParameterError):
        validate_loop(im, [0, 100, 150])
    with pytest.raises(ParameterError):
        validate_loop(im, list(loop[::-1][:-1]) + [10**6])
    with pytest.raises(ParameterError):
        region_boundary(im.mesh, np.zeros(im.mesh.n_faces, bool))
    # Reversing the loop flips the flux.
    assert np.allclose(
        willmore_residue(fixture("bump-sphere:0.3", 2), loop[::-1]),
        -willmore_residue(fixture("bump-sphere:0.3", 2), loop),
        atol=0.5,
    )


@pytest.mark.parametrize("height", [0.0, 0.3, 0.6, -0.5])
def test_sphere_residues_vanish(height):
    im = unit_sphere(5)
    loop = cap_loop(im.mesh, height=height)
    assert np.linalg.norm(willmore_residue(im, loop)) < 1e-3
    assert np.linalg.norm(first_residue(im, loop)) < 1e-3


def test_sphere_residue_homology():
    im = unit_sphere(5)
    a = willmore_residue(im, cap_loop(im.mesh, height=0.2))
    b = willmore_residue(im, cap_loop(im.mesh, axis=(1.0, 1.0, 0.0), height=-0.4))
    assert np.linalg.norm(a - b) < 1e-3


@pytest.mark.parametrize("level", [3, 4, 5])
def test_catenoid_residue_nonzero(level):
    im = fixture("inverted-catenoid", level)
    for h in (0.8, 0.3):
        loop = cap_loop(im.mesh, height=h)
        wr = willmore_residue(im, loop)
        fr = first_residue(im, loop)
        assert np.linalg.norm(wr) > 10.0
        assert np.linalg.norm(fr) > 20.0


def test_catenoid_residue_values_level5():
    im = fixture("inverted-catenoid", 5)
    for h in (0.8, 0.6, 0.3, -0.3):
        loop = cap_loop(im.mesh, height=h)
        wr, fr = willmore_residue(im, loop), first_residue(im, loop)
        assert np.abs(wr[:2]).max() < 1e-6 and np.abs(fr[:2]).max() < 1e-6
        assert wr[2] == pytest.approx(FOUR_PI, rel=5e-2)
        assert fr[2] == pytest.approx(-2 * FOUR_PI, rel=5e-2)


def test_first_residue_literal_pi_switch():
    im = fixture("bump-sphere:0.3", 3)
    loop = cap_loop(im.mesh, height=0.5)
    assert not np.allclose(first_residue(im, loop), first_residue(im, loop, literal_pi=True))


def test_residues_vanish_on_flat_region():
    m = ico(4)
    x = m.vertices.copy()
    top = x[:, 2] > 0.3
    x[top] *= (0.3 / x[top, 2])[:, None]  # central projection onto the plane z = 0.3
    im = Immersion(m, x)
    loop = cap_loop(m, height=0.7)
    assert np.abs(first_residue(im, loop)).max() < 1e-8
    assert np.abs(willmore_residue(im, loop)).max() < 1e-8


# --- Lagrange multiplier ---------------------------------------------------------------


def _unit_area_sphere(level):
    m = ico(level)
    return Immersion(m, m.vertices / math.sqrt(FOUR_PI))


def test_multiplier_unit_area_sphere():
    im = _unit_area_sphere(4)
    c = lagrange_multiplier(im, aubin_balance(im), ViscosityParams(0.1, area_constrained=True))
    expect = 2 * 0.01 * (1 - 16 * math.pi**2) - FOUR_PI / math.log(10)
    assert c == pytest.approx(expect, rel=1e-3)


def test_multiplier_requires_constrained_params_and_balance():
    im = _unit_area_sphere(2)
    with pytest.raises(ParameterError):
        lagrange_multiplier(im, aubin_balance(im), P)
    ell = fixture("ellipsoid:1:1:2", 2)
    with pytest.raises(GaugeError):
        lagrange_multiplier(ell, conformal_factor(ell, MobiusS2(np.array([0.3, 0, 0]))), ViscosityParams(0.1, area_constrained=True))


def test_multiplier_vanishes_with_sigma():
    im = fixture("ellipsoid:1:1:2", 3)
    g = aubin_balance(im)
    cs = [abs(lagrange_multiplier(im, g, ViscosityParams(s, area_constrained=True))) for s in (1e-2, 1e-4, 1e-8, 1e-16, 1e-64)]
    assert all(b < a for a, b in zip(cs, cs[1:]))
    assert cs[-1] < 0.2 * cs[0]


@pytest.mark.parametrize("t", [-0.5, 0.7])
def test_multiplier_under_dilation(t):
    im = fixture("ellipsoid:1:1:2", 3)
    big = Immersion(im.mesh, math.exp(t) * im.positions)
    p = ViscosityParams(0.1, area_constrained=True)
    fw = functional.forward(im.positions, im.mesh.faces)
    area, h4 = fw.area, float(np.sum(fw.h**2 * fw.va))
    c0 = lagrange_multiplier(im, aubin_balance(im), p)
    c1 = lagrange_multiplier(big, aubin_balance(big), p)
    delta = 2 * p.sigma**2 * ((math.exp(2 * t) - 1) * area - (math.exp(-2 * t) - 1) * h4) + p.l_sigma * FOUR_PI * t
    assert c1 - c0 == pytest.approx(delta, rel=1e-9, abs=1e-12)


def test_dilation_multiplier_identity():
    # d/dt F^σ(e^t Φ) at t = 0 equals 2μ·A with μ the dilation multiplier.
    im = fixture("ellipsoid:1:1:2", 3)
    g = aubin_balance(im)
    x = im.positions
    grad = grad_analytic(im, g, P).w
    fw = functional.forward(x, im.mesh.faces)
    assert float(np.sum(grad * x)) == pytest.approx(dilation_multiplier(im, P) * fw.area, rel=1e-9)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 1000), angle=st.floats(0.0, 6.28))
def test_residue_rotation_covariance(seed, angle):
    im = perturbed_sphere(ico(3), 0.1, seed)
    rot = rotation_about((0.2, 0.5, 1.0), angle)
    loop = cap_loop(im.mesh, height=0.2)
    a = willmore_residue(im, loop)
    b = willmore_residue(Immersion(im.mesh, im.positions @ rot.T), loop)
    assert np.allclose(rot @ a, b, atol=1e-9 * (1 + np.abs(a).max()))
