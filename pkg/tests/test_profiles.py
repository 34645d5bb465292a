import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsbubble.errors import ConfigInvalid, ResolutionExceeded, ShapeMismatch
from nlsbubble.evolve import SolverConfig, run
from nlsbubble.field import Grid, grad_norm, h1_norm, mass, weighted_l2_norm
from nlsbubble.profiles import (
    ModParams,
    ProfileSpec,
    inverse_pseudo_conformal,
    make_S,
    make_U,
    make_W,
    norm_transfer,
    pseudo_conformal,
    pseudo_conformal_params,
    soliton_params,
    sum_S,
    sum_W,
    symmetry_transform,
)


# -- specs and parameters ------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ConfigInvalid):
        ProfileSpec([0.0], [[0.0]], [0.0], T=1.0)
    with pytest.raises(ConfigInvalid):
        ProfileSpec([1.0, 1.0], [[1.0], [1.0]], [0.0, 0.0], frame="soliton")
    with pytest.raises(ShapeMismatch):
        ProfileSpec([1.0, 1.0], [[1.0], [2.0]], [0.0], T=1.0)
    spec = ProfileSpec([1.0, 2.0], [[-3.0, 0.0], [4.0, 0.0]], [0.0, 1.0], T=1.0)
    assert spec.K == 2 and spec.d == 2 and spec.min_separation == 7.0


def test_spec_and_params_text_roundtrip():
    spec = ProfileSpec([1.0, 2.0], [[-3.0], [4.0]], [0.0, 1.0], T=1.5)
    back = ProfileSpec.from_text(spec.to_text())
    np.testing.assert_array_equal(back.omega, spec.omega)
    np.testing.assert_array_equal(back.centers, spec.centers)
    assert back.T == 1.5 and back.frame == "blowup"
    p = pseudo_conformal_params(spec, 0.25)
    q = ModParams.from_text(p.to_text())
    np.testing.assert_array_equal(q.to_vector(), p.to_vector())
    assert q.t == 0.25


def test_blowup_requires_t():
    spec = ProfileSpec([1.0], [[0.0]], [0.0], frame="soliton")
    with pytest.raises(ConfigInvalid):
        make_S(spec, 0, 0.0, Grid.centered(1, 256, 40.0))


# -- W and S -------------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(
    st.floats(0.6, 1.6),
    st.floats(-2.0, 2.0),
    st.floats(-3.0, 3.0),
    st.floats(0.0, 2.0),
)
def test_mass_of_w_any_parameters(omega, v, vt, t):
    from nlsbubble.groundstate import ground_state

    g = Grid.centered(1, 2048, 80.0)
    spec = ProfileSpec([omega], [[v]], [vt], frame="soliton")
    assert mass(make_W(spec, 0, t, g)) == pytest.approx(ground_state(1).constants.massQ, abs=1e-8)


def test_w_at_rest_is_real_positive(grid1, gs1):
    spec = ProfileSpec([1.4], [[0.0]], [0.0], frame="soliton")
    w = make_W(spec, 0, 0.0, grid1)
    assert np.all(w.values.imag == 0) and np.all(w.values.real > 0)
    x = grid1.coords[0]
    np.testing.assert_allclose(w.values.real, 1.4**-0.5 * gs1.Q_at(np.stack([x / 1.4])), rtol=1e-14)


def test_w_is_exact_solution():
    g = Grid.centered(1, 1024, 64.0)
    spec = ProfileSpec([1.0], [[0.5]], [0.3], frame="soliton")
    tr = run(make_W(spec, 0, 0.0, g), SolverConfig(dt0=1e-4, t_end=1.0))
    assert h1_norm(tr.snapshots[-1] - make_W(spec, 0, 1.0, g)) < 1e-6


def test_s_gradient_rate(gs1):
    # ||grad S||^2 = ||grad Q||^2 / L^2 + ||yQ||^2 / 4, so the product is flat once L is small
    spec = ProfileSpec([1.0], [[0.0]], [0.0], T=1.0)
    L = np.logspace(np.log10(0.2), np.log10(0.02), 6)
    g = Grid.centered(1, 16384, 40.0)
    ratios = np.array([grad_norm(make_S(spec, 0, 1 - l, g)) * l for l in L])
    assert np.ptp(ratios) / ratios.mean() < 0.01
    c = gs1.constants
    np.testing.assert_allclose(ratios, np.sqrt(c.gradQ2 + L**2 * c.xQ2 / 4), rtol=1e-10)


def test_s_mass_and_energy(grid1, gs1):
    spec = ProfileSpec([1.2], [[1.0]], [0.5], T=1.0)
    for t in (0.0, 0.5):
        s = make_S(spec, 0, t, grid1)
        assert mass(s) == pytest.approx(gs1.constants.massQ, abs=1e-8)
        from nlsbubble.field import energy

        assert energy(s) == pytest.approx(1.2**2 * gs1.constants.xQ2 / 8, abs=1e-6)


def test_s_resolution_guard():
    spec = ProfileSpec([1.0], [[0.0]], [0.0], T=1.0)
    g = Grid.centered(1, 256, 40.0)  # h = 0.156
    with pytest.raises(ResolutionExceeded):
        make_S(spec, 0, 0.9, g)


# -- U -------------------------------------------------------------------------


def test_u_matches_sum_s(grid1):
    spec = ProfileSpec([1.0, 1.5], [[-6.0], [6.0]], [0.0, 0.7], T=1.0)
    t = 0.3
    U = make_U(pseudo_conformal_params(spec, t), spec, grid1)
    assert np.abs(U.values - sum_S(spec, t, grid1).values).max() < 1e-13


def test_u_matches_sum_w(grid1):
    spec = ProfileSpec([1.0, 0.8], [[-1.0], [1.0]], [0.0, 0.5], frame="soliton")
    t = 7.0
    U = make_U(soliton_params(spec, t), spec, grid1)
    assert np.abs(U.values - sum_W(spec, t, grid1).values).max() < 1e-13


def test_u_plain_is_real_positive(grid1):
    p = ModParams([0.9, 1.1], [[-4.0], [5.0]], [[0.0], [0.0]], [0.0, 0.0], [0.0, 0.0])
    U = make_U(p, None, grid1)
    assert np.all(U.values.imag == 0) and np.all(U.values.real > 0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(-5.0, 5.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-4.0, 4.0))
def test_u_single_bubble_mass(lam, alpha, beta, gamma, theta):
    from nlsbubble.groundstate import ground_state

    g = Grid.centered(1, 4096, 100.0)
    p = ModParams([lam], [[alpha]], [[beta]], [gamma], [theta])
    assert mass(make_U(p, None, g)) == pytest.approx(ground_state(1).constants.massQ, abs=1e-8)


def test_u_two_dimensional(grid2, gs2):
    p = ModParams([1.2], [[0.5, -0.3]], [[0.2, 0.1]], [0.3], [0.4])
    assert mass(make_U(p, None, grid2)) == pytest.approx(gs2.constants.massQ, abs=1e-8)


def test_u_shape_checks(grid1):
    p = ModParams([1.0], [[0.0, 0.0]], [[0.0, 0.0]], [0.0], [0.0])
    with pytest.raises(ShapeMismatch):
        make_U(p, None, grid1)


# -- symmetry transform --------------------------------------------------------


def test_symmetry_identity():
    g = Grid.centered(1, 1024, 60.0)
    spec = ProfileSpec([1.0], [[0.4]], [0.2], frame="soliton")
    u = make_W(spec, 0, 0.0, g)
    out = symmetry_transform(u, 0.0, (1.0, 0.0, 0.0, 0.0, 0.0), 0.0)
    assert np.abs(out.values - u.values).max() < 1e-12


def test_symmetry_mass_invariance(rng):
    g = Grid.centered(1, 1024, 60.0)
    spec = ProfileSpec([1.0], [[0.4]], [0.2], frame="soliton")
    u = make_W(spec, 0, 0.0, g)
    for lam0, beta0, x0 in ((1.3, 0.5, 2.0), (0.8, -0.3, -1.0)):
        out = symmetry_transform(u, -0.2 / lam0**2, (lam0, beta0, 1.1, x0, 0.2), 0.0)
        assert mass(out) == pytest.approx(mass(u), abs=1e-10)


def test_symmetry_scaling_maps_w_to_w():
    g = Grid.centered(1, 1024, 60.0)
    w1 = make_W(ProfileSpec([1.0], [[0.0]], [0.0], frame="soliton"), 0, 0.0, g)
    out = symmetry_transform(w1, 0.0, (1.7, 0.0, 0.0, 0.0, 0.0), 0.0)
    w2 = make_W(ProfileSpec([1.7], [[0.0]], [0.0], frame="soliton"), 0, 0.0, g)
    assert h1_norm(out - w2) < 1e-8


def test_symmetry_boost_maps_w_to_moving_w():
    # Galilean boost of a standing wave with beta0 = v gives the travelling wave
    g = Grid.centered(1, 2048, 80.0)
    spec0 = ProfileSpec([1.0], [[0.0]], [0.0], frame="soliton")
    t = 1.5
    u = make_W(spec0, 0, t, g)
    out = symmetry_transform(u, t, (1.0, 0.6, 0.0, 0.0, 0.0), t)
    w = make_W(ProfileSpec([1.0], [[0.6]], [0.0], frame="soliton"), 0, t, g)
    assert h1_norm(out - w) < 1e-8


def test_symmetry_time_consistency_check():
    g = Grid.centered(1, 1024, 40.0)
    u = make_W(ProfileSpec([1.0], [[0.0]], [0.0], frame="soliton"), 0, 0.0, g)
    with pytest.raises(ValueError):
        symmetry_transform(u, 0.5, (1.0, 0.0, 0.0, 0.0, 0.0), 0.0)


def test_symmetry_resolution_guard():
    g = Grid.centered(1, 1024, 40.0)
    u = make_W(ProfileSpec([1.0], [[0.0]], [0.0], frame="soliton"), 0, 0.0, g)
    with pytest.raises(ResolutionExceeded):
        symmetry_transform(u, 0.0, (0.05, 0.0, 0.0, 0.0, 0.0), 0.0)


# -- pseudo-conformal transform ------------------------------------------------


@pytest.fixture(scope="module")
def pc_setup():
    T, t = 1.0, 0.5
    spec_w = ProfileSpec([1.3], [[0.7]], [0.4], frame="soliton")
    spec_s = ProfileSpec([1.3], [[0.7]], [0.4], T=T)
    src = Grid.centered(1, 1024, 80.0)
    tgt = Grid.centered(1, 1024, 40.0)
    W = make_W(spec_w, 0, 1 / (T - t), src)
    return T, t, spec_s, src, tgt, W


def test_pseudo_conformal_maps_w_to_s(pc_setup):
    T, t, spec_s, src, tgt, W = pc_setup
    v = pseudo_conformal(W, T, t, tgt)
    assert h1_norm(v - make_S(spec_s, 0, t, tgt)) < 1e-8


def test_pseudo_conformal_two_bubbles(pc_setup):
    T, t = 1.0, 0.6
    spec_w = ProfileSpec([1.0, 0.9], [[-4.0], [4.0]], [0.0, 1.0], frame="soliton")
    spec_s = ProfileSpec([1.0, 0.9], [[-4.0], [4.0]], [0.0, 1.0], T=T)
    src = Grid.centered(1, 2048, 160.0)
    tgt = Grid.centered(1, 2048, 40.0)
    v = pseudo_conformal(sum_W(spec_w, 1 / (T - t), src), T, t, tgt)
    assert h1_norm(v - sum_S(spec_s, t, tgt)) < 1e-8


def test_norm_transfer_identities(pc_setup):
    T, t, _, _, tgt, W = pc_setup
    nt = norm_transfer(W, T, t, tgt)
    assert abs(nt["l2_v"] - nt["l2_u"]) < 1e-10
    assert abs(nt["x_v"] - nt["x_u_scaled"]) < 1e-8
    assert abs(nt["grad_v_scaled"] - nt["grad_u_cov"]) < 1e-8
    assert nt["grad_v"] <= 2 * nt["grad_bound"]


def test_pseudo_conformal_norms_direct(pc_setup):
    T, t, _, _, tgt, W = pc_setup
    v = pseudo_conformal(W, T, t, tgt)
    assert abs(mass(v) - mass(W)) < 1e-10
    assert abs(weighted_l2_norm(v) - (T - t) * weighted_l2_norm(W)) < 1e-8


def test_pseudo_conformal_inverse(pc_setup):
    T, t, _, src, tgt, W = pc_setup
    v = pseudo_conformal(W, T, t, tgt)
    back = inverse_pseudo_conformal(v, T, src)
    assert back.time == pytest.approx(W.time)
    assert h1_norm(back - W) < 1e-8


def test_gradient_transfer_bound_on_profiles():
    T = 1.0
    src = Grid.centered(1, 2048, 120.0)
    tgt = Grid.centered(1, 2048, 60.0)
    for omega, v, t in ((1.0, 0.0, 0.0), (1.3, 0.7, 0.5), (0.8, -1.5, 0.3), (1.1, 2.0, 0.2)):
        W = make_W(ProfileSpec([omega], [[v]], [0.0], frame="soliton"), 0, 1 / (T - t), src)
        nt = norm_transfer(W, T, t, tgt)
        assert nt["grad_v"] <= 2 * nt["grad_bound"]


def test_pseudo_conformal_time_checks(pc_setup):
    T, t, _, _, tgt, W = pc_setup
    with pytest.raises(ValueError):
        pseudo_conformal(W, T, 0.3, tgt)
    with pytest.raises(ValueError):
        pseudo_conformal(W, T, T + 0.1, tgt)
