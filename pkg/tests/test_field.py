import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_random
from nlsbubble.errors import BoundaryMass, ShapeMismatch, ZeroField
from nlsbubble.field import (
    Field,
    Grid,
    energy,
    field_from_bytes,
    field_to_bytes,
    gagliardo_nirenberg_check,
    grad_norm,
    h1_norm,
    load_field,
    mass,
    momentum,
    nonlinearity_layers,
    save_field,
    save_field_csv,
    sigma_norm,
    zeros,
)
from nlsbubble.profiles import ProfileSpec, make_S, make_W, sum_S


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid((100,), (10.0,), (0.0,))
    with pytest.raises(ValueError):
        Grid((32,), (10.0,), (0.0,))
    with pytest.raises(ValueError):
        Grid((64,), (-1.0,), (0.0,))
    g = Grid.centered(2, 64, 10.0)
    assert g.h == (10 / 64, 10 / 64)
    assert g.coords[0][0, 0] == -5.0


def test_field_shape_mismatch():
    g = Grid.centered(1, 64, 10.0)
    with pytest.raises(ShapeMismatch):
        Field(g, np.zeros(65))
    other = Grid.centered(1, 128, 10.0)
    with pytest.raises(ShapeMismatch):
        zeros(g) + zeros(other)


def test_mass_zero(grid1):
    assert mass(zeros(grid1)) == 0.0


@pytest.mark.parametrize("omega,v,vt,t", [(1.0, 0.0, 0.0, 0.0), (0.7, 1.3, 0.4, 0.5), (1.5, -2.0, 2.0, 1.0)])
def test_mass_of_soliton(grid1, gs1, omega, v, vt, t):
    spec = ProfileSpec([omega], [[v]], [vt], frame="soliton")
    assert mass(make_W(spec, 0, t, grid1)) == pytest.approx(gs1.constants.massQ, abs=1e-8)


def test_mass_two_blowup_bubbles(grid1, gs1):
    spec = ProfileSpec([1.0, 1.0], [[-5.0], [5.0]], [0.0, 0.0], T=1.0)
    assert abs(mass(sum_S(spec, 0.5, grid1)) - 2 * gs1.constants.massQ) < 1e-6
    # at T - t = 1 the overlap is visible and equals the cross term
    s1, s2 = make_S(spec, 0, 0.0, grid1), make_S(spec, 1, 0.0, grid1)
    cross = 2 * np.sum(s1.values * np.conj(s2.values)).real * grid1.dV
    assert mass(s1 + s2) - 2 * gs1.constants.massQ == pytest.approx(cross, abs=1e-12)


def test_energy_of_q(grid1, gs1):
    q = Field(grid1, gs1.Q_at(np.stack(grid1.coords)))
    assert abs(energy(q)) < 1e-8


@pytest.mark.parametrize("v", [0.5, 1.0, -2.0])
def test_energy_of_moving_soliton(grid1, gs1, v):
    spec = ProfileSpec([1.0], [[v]], [0.0], frame="soliton")
    w = make_W(spec, 0, 0.0, grid1)
    assert energy(w) == pytest.approx(v**2 / 8 * gs1.constants.massQ, abs=1e-7)


@pytest.mark.parametrize("t", [0.0, 0.3, 0.6])
def test_energy_of_blowup_solution(grid1, gs1, t):
    spec = ProfileSpec([1.0], [[0.0]], [0.0], T=1.0)
    assert energy(make_S(spec, 0, t, grid1)) == pytest.approx(gs1.constants.xQ2 / 8, abs=1e-6)


def test_momentum(grid1, gs1, rng):
    x = grid1.coords[0]
    real = Field(grid1, np.exp(-x**2))
    assert np.abs(momentum(real)).max() < 1e-14
    spec = ProfileSpec([0.8], [[1.4]], [0.3], frame="soliton")
    w = make_W(spec, 0, 0.0, grid1)
    assert momentum(w)[0] == pytest.approx(1.4 / 2 * gs1.constants.massQ, abs=1e-8)
    u = Field(grid1, smooth_random(grid1, rng))
    beta = 2 * np.pi * 3 / grid1.box_length[0]  # periodic plane wave
    shifted = Field(grid1, u.values * np.exp(1j * beta * x))
    assert momentum(shifted)[0] == pytest.approx(momentum(u)[0] + beta * mass(u), rel=1e-12)


def test_parseval_and_invariances(grid2, rng):
    u = Field(grid2, smooth_random(grid2, rng))
    spec_l2 = np.sum(np.abs(np.fft.fftn(u.values)) ** 2) * grid2.dV / np.prod(grid2.n)
    assert mass(u) == pytest.approx(spec_l2, rel=1e-12)
    rolled = Field(grid2, np.roll(u.values, (17, -5), axis=(0, 1)))
    assert mass(rolled) == pytest.approx(mass(u), rel=1e-12)
    np.testing.assert_allclose(momentum(rolled), momentum(u), rtol=1e-12, atol=1e-14)
    assert energy(u * np.exp(0.7j)) == pytest.approx(energy(u), rel=1e-12)


def test_sigma_norm(grid1, gs1):
    assert sigma_norm(zeros(grid1))[0] == 0.0
    q = Field(grid1, gs1.Q_at(np.stack(grid1.coords)))
    c = gs1.constants
    total, h1, xn = sigma_norm(q)
    assert h1 == pytest.approx(np.sqrt(c.massQ + c.gradQ2), abs=1e-8)
    assert xn == pytest.approx(np.sqrt(c.xQ2), abs=1e-8)
    assert total == pytest.approx(h1 + xn, abs=1e-14)


def test_sigma_norm_of_blowup_solution(grid1, gs1):
    spec = ProfileSpec([1.3], [[0.0]], [0.0], T=1.0)
    t = 0.4
    s = make_S(spec, 0, t, grid1)
    L = 1.3 * (1 - t)
    assert sigma_norm(s)[2] == pytest.approx(L * np.sqrt(gs1.constants.xQ2), abs=1e-8)


def test_sigma_norm_boundary_guard():
    g = Grid.centered(1, 256, 10.0)
    with pytest.raises(BoundaryMass):
        sigma_norm(Field(g, np.ones(g.shape)))


def test_nonlinearity_layers_zero_remainder(grid1, rng):
    U = Field(grid1, smooth_random(grid1, rng))
    fU, f1, f2 = nonlinearity_layers(U, zeros(grid1))
    assert np.abs(f1.values).max() == 0 and np.abs(f2.values).max() == 0
    assert np.allclose(fU.values, np.abs(U.values) ** 4 * U.values)


def test_nonlinearity_layers_real_collapse(grid1):
    x = grid1.coords[0]
    U = Field(grid1, np.exp(-x**2))
    R = Field(grid1, np.sin(x) * np.exp(-x**2 / 4))
    _, f1, _ = nonlinearity_layers(U, R)
    np.testing.assert_allclose(f1.values, 5 * U.values.real**4 * R.values, atol=1e-15)


def test_nonlinearity_at_zero_u():
    fU, f1, f2 = nonlinearity_layers(np.zeros(3), np.ones(3), d=2)
    assert np.all(f1 == 0) and np.all(fU == 0)
    np.testing.assert_allclose(f2, np.ones(3))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1, 2]), st.floats(1e-3, 10.0))
def test_nonlinearity_layers_exact(seed, d, scale):
    r = np.random.default_rng(seed)
    U = r.standard_normal(50) + 1j * r.standard_normal(50)
    R = scale * (r.standard_normal(50) + 1j * r.standard_normal(50))
    fU, f1, f2 = nonlinearity_layers(U, R, d)
    total = np.abs(U + R) ** (4 / d) * (U + R)
    assert np.allclose(fU + f1 + f2, total, rtol=1e-12, atol=1e-12 * np.abs(total).max())


def test_nonlinearity_first_layer_is_derivative():
    r = np.random.default_rng(5)
    U = r.standard_normal(20) + 1j * r.standard_normal(20)
    R = r.standard_normal(20) + 1j * r.standard_normal(20)
    for d in (1, 2):
        h = 1e-6
        f = lambda z: np.abs(z) ** (4 / d) * z  # noqa: E731
        fd = (f(U + h * R) - f(U - h * R)) / (2 * h)
        _, f1, _ = nonlinearity_layers(U, R, d)
        np.testing.assert_allclose(f1, fd, rtol=1e-7, atol=1e-8)


def test_gagliardo_nirenberg(grid1, gs1, rng):
    u = Field(grid1, smooth_random(grid1, rng))
    assert gagliardo_nirenberg_check(u, 2.0) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ZeroField):
        gagliardo_nirenberg_check(zeros(grid1), 6.0)
    with pytest.raises(ValueError):
        gagliardo_nirenberg_check(u, 1.0)
    y = np.stack(grid1.coords)
    q = Field(grid1, gs1.Q_at(y))
    fine = Grid.centered(1, 4096, 80.0)
    q_fine = Field(fine, gs1.Q_at(np.stack(fine.coords)))
    ratio = gagliardo_nirenberg_check(q, 6.0)
    assert ratio > 0
    assert abs(ratio - gagliardo_nirenberg_check(q_fine, 6.0)) < 1e-8
    lam = 1.7
    q_lam = Field(grid1, lam**-0.5 * gs1.Q_at(y / lam))
    assert gagliardo_nirenberg_check(q_lam, 6.0) == pytest.approx(ratio, abs=1e-10)


def test_serialization_roundtrip(tmp_path, grid2, rng):
    u = Field(grid2, smooth_random(grid2, rng), 0.25)
    data = field_to_bytes(u)
    v = field_from_bytes(data)
    assert v.grid.same_as(u.grid) and v.time == 0.25
    np.testing.assert_array_equal(v.values, u.values)
    p = save_field(u, tmp_path / "u.nlsf")
    np.testing.assert_array_equal(load_field(p).values, u.values)
    assert field_to_bytes(load_field(p)) == data
    csv = save_field_csv(u, tmp_path / "u.csv").read_text().splitlines()
    assert csv[0] == "x,y,re,im" and len(csv) == 1 + grid2.n[0] * grid2.n[1]
    with pytest.raises(ValueError):
        field_from_bytes(b"XXXX" + data[4:])


def test_h1_norm_consistency(grid1, rng):
    u = Field(grid1, smooth_random(grid1, rng))
    assert h1_norm(u) ** 2 == pytest.approx(mass(u) + grad_norm(u) ** 2, rel=1e-13)
