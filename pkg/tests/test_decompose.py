import csv

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from nlsbubble.decompose import (
    analytic_jacobian_diagonal,
    build_localization,
    build_records,
    decompose,
    direct_profile_residual,
    localized_mass,
    modulation_residuals,
    orthogonality_residuals,
    profile_residual,
    project_out_modes,
    remainder_scalars,
    scal_bubble,
    track_decompositions,
    write_records,
)
from nlsbubble.errors import DegenerateCenters, InsufficientSlices, NoConvergence, ShapeMismatch
from nlsbubble.field import Field, Grid, h1_norm, l2_norm, mass, zeros
from nlsbubble.profiles import ModParams, ProfileSpec, make_U, pseudo_conformal_params, sum_S


@pytest.fixture(scope="module")
def g1():
    return Grid.centered(1, 2048, 80.0)


@pytest.fixture(scope="module")
def spec2():
    return ProfileSpec([1.0, 1.5], [[-6.0], [6.0]], [0.0, 0.7], T=1.0)


def _synthetic(grid, params, rng, eps=1e-3, width=20.0):
    """Modulated profile plus ``eps`` times a unit field free of every bubble's modulated directions."""
    z = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    z = gaussian_filter(z.real, width, mode="wrap") + 1j * gaussian_filter(z.imag, width, mode="wrap")
    r2 = sum(x**2 for x in grid.coords)
    g = project_out_modes(z * np.exp(-r2 / 200), params, grid)
    g /= np.sqrt(np.sum(np.abs(g) ** 2) * grid.dV)
    return make_U(params, None, grid) + eps * Field(grid, g, params.t), g


# -- localization --------------------------------------------------------------


def test_localization_single_bubble(g1):
    loc = build_localization([[0.0]], g1)
    assert loc.K == 1 and np.isnan(loc.sigma)
    assert np.all(loc.phis[0] == 1.0)


def test_localization_two_bubbles(g1):
    loc = build_localization([[-5.0], [5.0]], g1)
    assert loc.sigma == pytest.approx(10 / 12, abs=1e-15)
    assert np.abs(loc.phis[0] + loc.phis[1] - 1).max() < 1e-14
    x = g1.coords[0]
    # each cutoff is 1 near its own center and 0 near the other
    assert np.all(loc.phis[0][np.abs(x + 5) < 1] == 1.0) and np.all(loc.phis[1][np.abs(x - 5) < 1] == 1.0)
    grad_max = max(np.abs(w.grad).max() for w in loc.weights)
    assert grad_max * loc.sigma <= 3.0
    # closed form: max of the quintic smoothstep slope is 15/8, spread over 4 sigma
    assert grad_max == pytest.approx(15 / 8 / (4 * loc.sigma), rel=1e-4)


def test_localization_order_independent_of_numbering(g1):
    a = build_localization([[-5.0], [5.0], [20.0]], g1)
    b = build_localization([[20.0], [-5.0], [5.0]], g1)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        np.testing.assert_array_equal(a.phis[i], b.phis[j])


def test_localization_2d_partition():
    g = Grid.centered(2, 128, 40.0)
    loc = build_localization([[-6.0, 0.0], [6.0, 1.0], [0.0, 8.0]], g)
    total = sum(loc.phis)
    assert np.abs(total - 1).max() < 1e-14
    with pytest.raises(DegenerateCenters):
        build_localization([[1.0, 1.0], [1.0, 1.0]], g)


# -- decompose -----------------------------------------------------------------


def test_exact_sum_recovered(g1, spec2):
    t = 0.3
    p0 = pseudo_conformal_params(spec2, t)
    dec = decompose(sum_S(spec2, t, g1), p0, spec2)
    assert h1_norm(dec.remainder) < 1e-10
    np.testing.assert_allclose(dec.params.to_vector(), p0.to_vector(), atol=1e-12)
    assert dec.residual < 1e-10 and dec.basin_ok


def test_perturbed_guess_converges_quickly(g1, spec2):
    t = 0.3
    p0 = pseudo_conformal_params(spec2, t)
    guess = ModParams.from_vector(p0.to_vector() * 1.01, 2, 1, t)
    dec = decompose(sum_S(spec2, t, g1), guess, spec2)
    assert dec.newton_iters <= 6 and dec.residual < 1e-10
    assert np.abs(dec.params.to_vector() - p0.to_vector()).max() < 1e-10
    # quadratic convergence: each residual is far below the previous one
    h = np.array(dec.residual_history)
    assert np.all(h[2:] < 10 * h[1:-1] ** 1.5)


def test_jacobian_diagonal_matches_leading_order(g1, spec2, gs1):
    t = 0.3
    p0 = pseudo_conformal_params(spec2, t)
    guess = ModParams.from_vector(p0.to_vector() * 1.001, 2, 1, t)
    dec = decompose(sum_S(spec2, t, g1), guess, spec2)
    np.testing.assert_allclose(dec.fd_diagonal, dec.analytic_diagonal, rtol=1e-6)
    diag = analytic_jacobian_diagonal(gs1, 1)
    assert np.all(np.isfinite(list(diag.values())))


def test_synthetic_recovery(g1):
    rng = np.random.default_rng(7)
    ps = ModParams([0.8, 1.1], [[-5.5], [6.3]], [[0.3], [-0.2]], [0.4, 0.6], [1.0, 2.0], 0.3)
    for _ in range(3):
        v, g = _synthetic(g1, ps, rng)
        assert max(scal_bubble(g, ps, k, g1) for k in range(2)) < 1e-12
        guess = ModParams.from_vector(ps.to_vector() * 1.01, 2, 1, ps.t)
        dec = decompose(v, guess)
        assert np.abs(dec.params.to_vector() - ps.to_vector()).max() < 1e-8
        assert dec.residual < 1e-10 and dec.newton_iters <= 8


def test_fixed_point_and_reconstruction(g1):
    rng = np.random.default_rng(11)
    ps = ModParams([0.8, 1.1], [[-5.5], [6.3]], [[0.3], [-0.2]], [0.4, 0.6], [1.0, 2.0], 0.3)
    v, _ = _synthetic(g1, ps, rng, eps=1e-2)
    dec = decompose(v, ps)
    again = decompose(v, dec.params)
    assert np.abs(again.params.to_vector() - dec.params.to_vector()).max() < 1e-12
    assert again.newton_iters == 0
    rebuilt = make_U(dec.params, None, g1) + dec.remainder
    assert np.abs(rebuilt.values - v.values).max() < 1e-14
    assert np.abs(orthogonality_residuals(v, dec.params)).max() < 1e-10


def test_no_convergence_and_shape_errors(g1, spec2):
    t = 0.3
    p0 = pseudo_conformal_params(spec2, t)
    guess = ModParams.from_vector(p0.to_vector() * 1.05, 2, 1, t)
    with pytest.raises(NoConvergence):
        decompose(sum_S(spec2, t, g1), guess, spec2, max_iter=1)
    g2 = Grid.centered(2, 64, 20.0)
    with pytest.raises(ShapeMismatch):
        decompose(zeros(g2), p0)


def test_basin_flag(g1, spec2):
    t = 0.3
    p0 = pseudo_conformal_params(spec2, t)
    far = p0.replace(alpha=p0.alpha + 0.5)
    dec = decompose(sum_S(spec2, t, g1), far, spec2)
    assert not dec.basin_ok
    assert np.abs(dec.params.to_vector() - p0.to_vector()).max() < 1e-10


def test_decomposition_save(tmp_path, g1, spec2):
    dec = decompose(sum_S(spec2, 0.3, g1), pseudo_conformal_params(spec2, 0.3), spec2)
    paths = dec.save(tmp_path)
    assert all(p.exists() for p in paths)
    assert ModParams.from_text(paths[1].read_text()).K == 2


# -- localized mass and scalars ------------------------------------------------


def test_localized_mass_zero_remainder(g1, spec2):
    dec = decompose(sum_S(spec2, 0.3, g1), pseudo_conformal_params(spec2, 0.3), spec2)
    assert np.abs(localized_mass(dec)).max() < 1e-8


def test_localized_mass_sums_to_mass_excess(g1, gs1):
    rng = np.random.default_rng(3)
    ps = ModParams([0.8, 1.1], [[-8.0], [8.0]], [[0.0], [0.0]], [0.4, 0.6], [1.0, 2.0], 0.3)
    v, _ = _synthetic(g1, ps, rng, eps=1e-2)
    dec = decompose(v, ps)
    M = localized_mass(dec)
    assert abs(M.sum() - (mass(v) - 2 * gs1.constants.massQ)) < 1e-6


def test_remainder_scalars(g1, spec2):
    t = 0.3
    dec = decompose(sum_S(spec2, t, g1), pseudo_conformal_params(spec2, t), spec2)
    sc = remainder_scalars(dec, spec2)
    assert sc.D < 1e-10
    assert max(l2_norm(e) for e in sc.eps) < 1e-10
    L = 1.0 - t
    expected = np.sum(spec2.omega * L + spec2.omega**2 * L)
    assert sc.P == pytest.approx(expected, abs=1e-12)


def test_renormalized_remainder_is_unitary(g1):
    rng = np.random.default_rng(5)
    ps = ModParams([0.8, 1.1], [[-5.5], [6.3]], [[0.3], [-0.2]], [0.4, 0.6], [1.0, 2.0], 0.3)
    v, _ = _synthetic(g1, ps, rng, eps=1e-2)
    dec = decompose(v, ps)
    spec = ProfileSpec([1.0, 1.0], [[-5.5], [6.3]], [0.0, 0.0], T=1.0)
    sc = remainder_scalars(dec, spec)
    for k, e in enumerate(sc.eps):
        ref = np.sum(np.abs(dec.remainder.values) ** 2 * dec.loc.phis[k] ** 2) * g1.dV
        assert l2_norm(e) ** 2 == pytest.approx(ref, rel=1e-10)


# -- modulation equations ------------------------------------------------------


def _pc_track(spec, times):
    return [pseudo_conformal_params(spec, t) for t in times]


def test_mod_vanishes_on_exact_track(spec2):
    errs = []
    for h in (2e-3, 1e-3):
        tr = modulation_residuals(_pc_track(spec2, 0.2 + h * np.arange(21)))
        errs.append(tr.mod[1:-1].max())
    assert errs[1] < 1e-5
    # truncation of the centered differences only
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_mod_gamma_cancellation():
    # gamma' = -gamma^2/lambda^2 with lambda fixed: gamma(t) = 1/(t + 1)
    times = 0.01 * np.arange(6)
    track = [ModParams([1.0], [[0.0]], [[0.0]], [1 / (t + 1)], [0.0], t) for t in times]
    tr = modulation_residuals(track)
    c2 = tr.lam**2 * tr.dgamma + tr.gamma**2
    assert np.abs(c2[1:-1]).max() < 1e-4
    assert tr.terms.shape == (6, 1, 5)


def test_mod_needs_three_slices(spec2):
    with pytest.raises(InsufficientSlices):
        modulation_residuals(_pc_track(spec2, [0.1, 0.2]))
    with pytest.raises(InsufficientSlices):
        modulation_residuals(_pc_track(spec2, [0.1, 0.3, 0.2]))


def test_profile_residual_vanishes_on_exact_track(g1, spec2):
    tr = modulation_residuals(_pc_track(spec2, 0.3 + 1e-3 * np.arange(5)))
    _, n0, ng = profile_residual(tr.slice_params(2), tr.slice_derivatives(2), g1)
    assert n0 < 1e-4 and ng < 1e-3


def test_profile_residual_single_defect(g1, gs1):
    lam, eps = 0.7, 1e-3
    params = ModParams([lam], [[0.5]], [[0.0]], [0.0], [0.3], 0.0)
    # exact for every combination except lam lam' + gamma = eps
    derivs = {
        "lam": np.array([eps / lam]),
        "alpha": np.array([[0.0]]),
        "beta": np.array([[0.0]]),
        "gamma": np.array([0.0]),
        "theta": np.array([1 / lam**2]),
    }
    _, n0, _ = profile_residual(params, derivs, g1)
    assert n0 == pytest.approx(eps * np.sqrt(gs1.constants.lambdaQ2) / lam**2, rel=1e-6)


def test_profile_residual_matches_direct_evaluation():
    g = Grid.centered(1, 2048, 60.0)

    def P(t):
        return ModParams([1 + 0.3 * t], [[0.2 + 0.5 * t]], [[0.3 - 0.2 * t]], [0.4 + 0.3 * t**2], [1.0 + 2 * t], t)

    t, h = 0.5, 1e-4
    dP = {"lam": np.array([0.3]), "alpha": np.array([[0.5]]), "beta": np.array([[-0.2]]), "gamma": np.array([0.6 * t]), "theta": np.array([2.0])}
    Us = [make_U(P(s), None, g) for s in (t - h, t, t + h)]
    direct = direct_profile_residual(Us, 1)
    eta, n0, _ = profile_residual(P(t), dP, g)
    assert l2_norm(direct - eta) < 1e-6 * n0
    with pytest.raises(InsufficientSlices):
        direct_profile_residual(Us, 0)


# -- tracking and records ------------------------------------------------------


def test_track_and_records(tmp_path, g1, spec2):
    times = [0.2, 0.25, 0.3, 0.35]
    snaps = [sum_S(spec2, t, g1) for t in times]
    decs = track_decompositions(snaps, spec2)
    for dec, t in zip(decs, times):
        np.testing.assert_allclose(dec.params.to_vector(), pseudo_conformal_params(spec2, t).to_vector(), atol=1e-10)
    recs = build_records(decs, spec2, ledger0=(mass(snaps[0]), 0.0))
    for r, u in zip(recs, snaps):
        assert r.mass_drift == pytest.approx(mass(u) - mass(snaps[0]), abs=1e-12)
    path = write_records(recs, tmp_path / "diagnostics.csv")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    expected = ["t", "D", "P", "E", "Mod", "Mod_1", "Mod_2", "M_1", "M_2", "lambda_1", "lambda_2",
                "alpha_1", "alpha_2", "beta_1", "beta_2", "gamma_1", "gamma_2", "theta_1", "theta_2",
                "ortho_residual", "newton_iters"]
    assert list(rows[0])[: len(expected)] == expected
    assert float(rows[1]["D"]) < 1e-10
