import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfc

from bsguided.bsop import (
    assemble_C0,
    assemble_decomposition,
    assemble_gamma,
    assemble_lambda_p,
    apply_gamma_spectral,
    bound_c,
    channel_green,
    channel_green_da,
    estimate_c,
    gamma_kernel,
    green_1d,
    hs_norm,
    limit_rates,
    phi_mixed,
)
from bsguided.errors import ConfigError, DomainError, SingularDispersionError
from bsguided.geometry import dispersion_root, make_lattice
from bsguided.grid import make_grid
from bsguided.potential import PotentialSpec, build_potential

E = 0.1


@pytest.fixture(scope="module")
def setup(lat):
    grid = make_grid(lat, 30.0, 128, 2, 7)
    pot = build_potential(PotentialSpec(), grid)
    return grid, pot


def _bandlimited_oracle(t, a, h):
    Om = mpmath.pi / h
    a = mpmath.mpc(a)
    f = lambda xi: mpmath.cos(xi * t) / (xi**2 + a**2)  # noqa: E731
    n = 16
    pts = [Om * j / n for j in range(n + 1)]
    return complex(mpmath.quad(f, pts) / mpmath.pi)


@pytest.mark.parametrize("a", [0.3, 1.0, 2.5, 0.2 - 0.3j, 0.05 + 0.8j])
def test_bandlimited_green_against_quadrature(a):
    h = 0.3
    t = np.array([0.0, 0.3, 1.2, 4.5, 9.0])
    got = channel_green(t, a, h, "bandlimited")
    mpmath.mp.dps = 30
    ref = np.array([_bandlimited_oracle(mpmath.mpf(float(x)), a, h) for x in t])
    np.testing.assert_allclose(got, ref, rtol=1e-11, atol=1e-13)


def test_green_derivative_against_finite_difference():
    t = np.linspace(0, 6, 13)
    for rule in ("trapezoid", "bandlimited"):
        for a in (0.7, 0.3 + 0.4j):
            d = 1e-6
            fd = (channel_green(t, a + d, 0.3, rule) - channel_green(t, a - d, 0.3, rule)) / (2 * d)
            np.testing.assert_allclose(channel_green_da(t, a, 0.3, rule), fd, rtol=1e-7, atol=1e-9)


def test_green_1d_definition():
    t = np.array([-2.0, 0.0, 1.5])
    np.testing.assert_allclose(green_1d(t, 0.5), np.exp(-0.5 * np.abs(t)) / 1.0)


def test_kernel_diagonal_is_real(setup):
    grid, pot = setup
    k = np.array([0.45, 0.1])
    x = np.array([0.3, 0.5, -0.2])
    val = gamma_kernel(x, x, k, E, 0.0, 3, pot)
    lat = grid.lat
    total = 0.0
    for n2 in range(-3, 4):
        for n3 in range(-3, 4):
            kk = (k[0] + n2) ** 2 + (k[1] + n3) ** 2
            total += 1.0 / math.sqrt(kk - E)
    ref = lat.kernel_const * pot(*x) ** 2 * total
    assert val.imag == pytest.approx(0.0, abs=1e-15)
    assert val.real == pytest.approx(ref, rel=1e-12)


def test_kernel_zero_momentum_single_mode(setup):
    _, pot = setup
    x = np.array([0.4, 0.3, 0.1])
    y = np.array([-1.1, -0.2, 0.6])
    val = gamma_kernel(x, y, [0.0, 0.0], E, 0.0, 0, pot)
    sE = math.sqrt(E)
    ref = pot.grid.lat.kernel_const * pot(*x) * pot(*y) * np.exp(1j * sE * 1.5) / (-1j * sE)
    assert val == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("k", [[0.45, 0.1], [0.2, 0.05]])
def test_kernel_conjugation_symmetry(setup, k):
    _, pot = setup
    x = np.array([0.4, 0.3, 0.1])
    y = np.array([-1.1, -0.2, 0.6])
    for eps in (0.01, 0.2):
        a = gamma_kernel(x, y, k, E, eps, 2, pot)
        b = gamma_kernel(y, x, k, E, -eps, 2, pot)
        assert np.conj(a) == pytest.approx(b, rel=1e-12)


def test_kernel_mode_truncation(setup):
    _, pot = setup
    k = np.array([0.45, 0.1])
    x = np.array([0.4, 0.3, 0.1])
    y = np.array([-0.6, -0.2, 0.6])
    diff = abs(gamma_kernel(x, y, k, E, 0.0, 6, pot) - gamma_kernel(x, y, k, E, 0.0, 4, pot))
    # triangle inequality over the rings 5 and 6 that differ
    t = abs(x[0] - y[0])
    tail = 0.0
    for n2 in range(-6, 7):
        for n3 in range(-6, 7):
            if max(abs(n2), abs(n3)) > 4:
                pI = dispersion_root((k[0] + n2) ** 2 + (k[1] + n3) ** 2, E, 0.0).p_I
                tail += math.exp(-pI * t) / pI
    bound = pot.grid.lat.kernel_const * pot(*x) * pot(*y) * tail
    assert 0 < diff <= bound * (1 + 1e-12)


def test_dual_path(setup):
    grid, pot = setup
    rng = np.random.default_rng(3)
    k = np.array([0.32, 0.01])
    op = assemble_gamma(grid, pot, k, E)
    for _ in range(3):
        v = rng.standard_normal((grid.N1, grid.n_l**2)) + 1j * rng.standard_normal((grid.N1, grid.n_l**2))
        a = op.apply_nodes(v)
        b = apply_gamma_spectral(v, grid, pot, k, complex(E))
        w = grid.weights
        assert math.sqrt(np.sum(w * np.abs(a - b) ** 2)) <= 1e-6 * math.sqrt(np.sum(w * np.abs(v) ** 2))


@pytest.mark.parametrize("eps", [0.0, 0.01, 0.1])
def test_adjoint(setup, eps):
    grid, pot = setup
    k = [0.5, 0.2]
    gp = assemble_gamma(grid, pot, k, E, eps).dense()
    gm = assemble_gamma(grid, pot, k, E, -eps).dense()
    assert np.linalg.norm(gp.conj().T - gm) <= 1e-10 * np.linalg.norm(gp)


def test_sign_flip_breaks_adjoint(setup):
    """Mutation check: with negated decay rates the adjoint identity fails."""
    grid, pot = setup
    k = [0.5, 0.2]
    gp = assemble_gamma(grid, pot, k, E, 0.01)
    gm = assemble_gamma(grid, pot, k, E, -0.01)
    bad_roots = gm.roots.real - 1j * gm.roots.imag
    from bsguided.bsop import _generators

    gm_bad = gm._like(_generators(grid, bad_roots, gm.rule), "mutant")
    assert (gp.adjoint() - gm).frobenius() <= 1e-10 * gp.frobenius()
    assert (gp.adjoint() - gm_bad).frobenius() > 1e-3 * gp.frobenius()


def test_rank_one_split(setup):
    grid, pot = setup
    k = [0.4, 0.0]
    op = assemble_gamma(grid, pot, k, E)
    lam, P, C = assemble_decomposition(grid, pot, k, E)
    Pd = P.dense()
    assert np.linalg.norm(Pd @ Pd - Pd) <= 1e-10
    sv = np.linalg.svd(Pd, compute_uv=False)
    assert sv[0] == pytest.approx(1.0, abs=1e-10) and sv[1] <= 1e-10
    pI = dispersion_root(0.16, E, 0.0).p_I
    assert lam.imag == 0.0 or abs(lam.imag) < 1e-15
    assert lam.real == pytest.approx(grid.lat.kernel_const / pI, rel=1e-12) and lam.real > 0
    recon = P.scaled(lam) + C
    assert (op - recon).frobenius() <= 1e-12 * op.frobenius()
    assert hs_norm(assemble_lambda_p(grid, pot, k, E)) == pytest.approx(abs(lam), rel=1e-10)
    np.testing.assert_allclose(Pd @ phi_mixed(grid, pot), phi_mixed(grid, pot), atol=1e-12)


def test_hs_norm_matches_dense(setup):
    grid, pot = setup
    for k, eps in (([0.5, 0.2], 0.0), ([0.1, 0.1], 0.05)):
        op = assemble_gamma(grid, pot, k, E, eps)
        assert hs_norm(op) == pytest.approx(np.linalg.norm(op.dense()), rel=1e-10)


def test_open_channel_part(setup):
    grid, pot = setup
    c0 = assemble_C0(grid, pot, [0.1, 0.1], E).dense()
    assert np.linalg.norm(c0 - c0.conj().T) > 1e-3 * np.linalg.norm(c0)
    with pytest.raises(DomainError):
        assemble_C0(grid, pot, [0.5, 0.0], E)


def test_positive_below_spectrum(setup):
    grid, pot = setup
    rng = np.random.default_rng(5)
    for _ in range(3):
        v = rng.standard_normal((grid.N1, grid.n_l**2)) + 1j * rng.standard_normal((grid.N1, grid.n_l**2))
        gv = apply_gamma_spectral(v, grid, pot, [0.2, 0.3], -5.0)
        q = np.sum(grid.weights * gv * np.conj(v))
        assert q.real > 0 and abs(q.imag) <= 1e-10 * q.real


def test_constant_potential_channel_division(lat):
    grid = make_grid(lat, 30.0, 256, 1, 5)
    # W is constant on the box to 1e-9, so Gamma acts as W^2 R0 on the zero channel
    pot = build_potential(PotentialSpec(longitudinal="bump", R=1e6, transverse="const"), grid)
    k = np.array([0.3, 0.1])
    z = -0.7
    a = math.sqrt(k @ k - z)
    e0 = grid.transverse_basis(k)[:, 0]
    x = grid.x1
    W = pot.samples[0, 0]
    v = np.exp(-0.5 * x**2)[:, None] * e0[None, :]
    out = apply_gamma_spectral(v, grid, pot, k, z)
    # closed form of int exp(-a|x-y|)/(2a) exp(-y^2/2) dy
    conv = (
        math.sqrt(math.pi / 2) * math.exp(a * a / 2) / (2 * a)
        * (np.exp(-a * x) * erfc((a - x) / math.sqrt(2)) + np.exp(a * x) * erfc((a + x) / math.sqrt(2)))
    )  # fmt: skip
    expect = W**2 * conv[:, None] * e0[None, :]
    np.testing.assert_allclose(out, expect, rtol=0, atol=1e-8 * np.max(np.abs(expect)))


def test_remainder_bound(setup):
    grid, pot = setup
    c = estimate_c(grid, pot, E, n_angles=2)
    assert 0 < c <= bound_c(pot, 1.0)


def test_rates_evanescent_and_identity(setup):
    grid, pot = setup
    tab = limit_rates(grid, pot, [0.5, 0.2], E, (1e-2, 1e-3, 1e-4))
    assert 0.8 <= tab.slopes["plus"] <= 1.2 and 0.8 <= tab.slopes["minus"] <= 1.2
    g0 = assemble_gamma(grid, pot, [0.5, 0.2], E, 0.0)
    assert (g0 - assemble_gamma(grid, pot, [0.5, 0.2], E, 0.0)).frobenius() == 0.0


def test_rates_open_channel_incoming_limit(setup):
    grid, pot = setup
    tab = limit_rates(grid, pot, [0.15, 0.1], E, (1e-2, 1e-3, 1e-4))
    assert tab.region == "B_E_minus"
    assert tab.rows["minus_incoming"][-1] < 1e-3
    assert 0.8 <= tab.slopes["minus_incoming"] <= 1.2


def test_assembly_errors(setup):
    grid, pot = setup
    with pytest.raises(SingularDispersionError):
        assemble_gamma(grid, pot, [math.sqrt(E), 0.0], E, 0.0)
    with pytest.raises(ConfigError):
        assemble_gamma(grid, pot, [0.5, 0.0], E, 0.0, rule="simpson")
    with pytest.raises(ConfigError):
        limit_rates(grid, pot, [0.5, 0.0], E, (1e-3, 1e-2))


def test_refinement_stability(lat):
    norms = []
    for N1, L in ((64, 20.0), (128, 20.0), (256, 20.0)):
        grid = make_grid(lat, L, N1, 1, 5)
        pot = build_potential(PotentialSpec(), grid)
        norms.append(hs_norm(assemble_gamma(grid, pot, [0.5, 0.2], E)))
    assert abs(norms[2] - norms[1]) <= abs(norms[1] - norms[0]) + 1e-12
    assert abs(norms[2] - norms[1]) <= 1e-3 * norms[2]


def test_trapezoid_rule_converges_to_bandlimited(lat):
    gaps = []
    for N1 in (64, 128, 256):
        grid = make_grid(lat, 20.0, N1, 1, 5)
        pot = build_potential(PotentialSpec(), grid)
        a = hs_norm(assemble_gamma(grid, pot, [0.5, 0.2], E, rule="trapezoid"))
        b = hs_norm(assemble_gamma(grid, pot, [0.5, 0.2], E, rule="bandlimited"))
        gaps.append(abs(a - b))
    assert gaps[2] < gaps[1] < gaps[0]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), alpha=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_matvec_linear(setup, seed, alpha):
    grid, pot = setup
    op = assemble_gamma(grid, pot, [0.2, 0.1], E, 0.03)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(grid.dim) + 1j * rng.standard_normal(grid.dim)
    y = rng.standard_normal(grid.dim)
    lhs = op.matvec(alpha * x + y)
    rhs = alpha * op.matvec(x) + op.matvec(y)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * (1 + abs(alpha)) * (np.linalg.norm(x) + np.linalg.norm(y))


def test_rectangular_lattice_assembles():
    lt = make_lattice(math.pi, 2 * math.pi)
    grid = make_grid(lt, 20.0, 64, 1, 5)
    pot = build_potential(PotentialSpec(), grid)
    op = assemble_gamma(grid, pot, [0.5, 0.2], 0.1)
    assert op.is_hermitian and hs_norm(op) > 0
