import math

import numpy as np
import pytest

from bsguided.bsop import assemble_decomposition, assemble_gamma
from bsguided.errors import ConfigError, DomainError, RegimeViolation
from bsguided.grid import make_grid
from bsguided.potential import PotentialSpec, build_potential
from bsguided.spectral import (
    S0,
    check_regime,
    eigenvalues,
    fh_gradient,
    in_closed_annulus,
    in_open_annulus,
    inverse_norm_threshold,
    lambda1,
    leading_eig,
    outside_annulus_bound,
    overlap_bound,
    overlap_threshold,
    q_minus,
    q_plus,
    separation_check,
    separation_radius,
    sign_margin,
)


def _polar(r, th):
    return np.array([r * math.cos(th), r * math.sin(th)])


def test_regime_constants(lat):
    assert q_minus(6, lat.beta) == pytest.approx(5.277e-3, rel=1e-3)
    assert q_plus(6, lat.beta) == pytest.approx(7.916e-3, rel=1e-3)
    assert inverse_norm_threshold(6) == 60
    assert sign_margin(6) == pytest.approx(1 / 30)
    assert overlap_threshold(6) == pytest.approx(0.40825, abs=1e-5)
    assert separation_radius(6, 1.0) == pytest.approx(4.8) and separation_radius(6, 1.0) > 4
    for s in (5.3, 6, 10, 100):
        assert q_minus(s, 1.0) < q_plus(s, 1.0)


def test_check_regime():
    check_regime(6, 0.1, 1.0)
    with pytest.raises(ConfigError):
        check_regime(S0, 0.1, 1.0)
    with pytest.raises(ConfigError):
        check_regime(6, 0.0, 1.0)
    with pytest.raises(ConfigError):
        check_regime(6, 0.1, -1.0)
    with pytest.raises(RegimeViolation):
        check_regime(6, 1 / 6, 1.0)


def test_rank_one_operator(small):
    grid, pot, E = small.grid, small.pot, small.E
    k = [0.4, 0.1]
    lam, P, _ = assemble_decomposition(grid, pot, k, E)
    ep = leading_eig(P.scaled(lam), n_eigs=3, with_disk=False)
    assert ep.lambda1 == pytest.approx(lam, rel=1e-10)
    ov, _, _ = overlap_bound(ep.psi1, k, pot, 6.0)
    assert ov == pytest.approx(1.0, abs=1e-10)


def test_perturbation_disk(small):
    k = _polar(0.5 * (small.annulus.inner_radius + small.annulus.outer_radius), 0.4)
    ep = leading_eig(assemble_gamma(small.grid, small.pot, k, small.E), n_eigs=4)
    assert ep.c_measured < abs(ep.Lambda) / 4
    assert ep.in_disk


def test_hermitian_spectrum_is_real(lat):
    grid = make_grid(lat, 20.0, 64, 1, 5)
    pot = build_potential(PotentialSpec(), grid)
    op = assemble_gamma(grid, pot, [0.5, 0.1], 0.1)
    vals = np.linalg.eigvals(op.dense())
    assert np.max(np.abs(vals.imag)) <= 1e-10
    top, _ = eigenvalues(op, 4)
    assert np.all(np.diff(np.abs(top)) <= 0)


def test_krylov_agrees_with_dense(lat, monkeypatch):
    from bsguided import spectral

    grid = make_grid(lat, 20.0, 64, 1, 5)
    pot = build_potential(PotentialSpec(), grid)
    for k, eps in (([0.5, 0.1], 0.0), ([0.2, 0.1], 0.01)):
        op = assemble_gamma(grid, pot, k, 0.1, eps)
        dense, _ = spectral.eigenvalues(op, 3)
        monkeypatch.setattr(spectral, "DENSE_EIG_LIMIT", 10)
        kry, _ = spectral.eigenvalues(op, 3)
        monkeypatch.undo()
        np.testing.assert_allclose(kry, dense, rtol=1e-9)


def test_separation_inside_annulus(small):
    # the eps window has to stay well below p_I^2 ~ (q_- g)^2 ~ 5e-5 at the inner edge
    a = small.annulus
    for j, f in enumerate((0.1, 0.5, 0.9)):
        k = _polar(a.inner_radius + f * (a.outer_radius - a.inner_radius), 0.7 * j)
        for eps in (0.0, 1e-6, -1e-6):
            rep = separation_check(small.grid, small.pot, k, small.E, eps, small.g, small.s, small.c)
            assert rep.ok
            assert rep.c_measured <= small.c


def test_separation_rejects_large_coupling(small):
    k = _polar(0.5 * (small.annulus.inner_radius + small.annulus.outer_radius), 0.0)
    with pytest.raises(RegimeViolation):
        separation_check(small.grid, small.pot, k, small.E, 0.0, 2.0 / (small.s * small.c), small.s, small.c)
    with pytest.raises(DomainError):
        separation_check(small.grid, small.pot, [0.5, 0.0], small.E, 0.0, small.g, small.s, small.c)


def test_inverse_bound_outside(small):
    a = small.annulus
    sE = math.sqrt(small.E)
    probes = [(1.2 * a.outer_radius, 0.3, 0.0), (0.6 * sE, 1.0, 1e-3), (0.6 * sE, 1.0, -1e-3), (0.0, 0.0, 0.0)]
    for r, th, eps in probes:
        ok, val = outside_annulus_bound(small.grid, small.pot, _polar(r, th), small.E, eps, small.g, small.s, small.c)
        assert ok and 1.0 <= val <= 60
    with pytest.raises(DomainError):
        outside_annulus_bound(small.grid, small.pot, _polar(a.inner_radius * 1.0001, 0), small.E, 0.0, small.g, small.s, small.c)


def test_annulus_membership(small):
    a = small.annulus
    kap = small.grid.lat.kernel_const
    mid = _polar(0.5 * (a.inner_radius + a.outer_radius), 1.0)
    assert in_open_annulus(mid, small.E, small.g, small.s, kap)
    edge = _polar(a.inner_radius, 1.0)
    assert in_closed_annulus(edge, small.E, small.g, small.s, kap)
    assert not in_open_annulus([0.1, 0.0], small.E, small.g, small.s, kap)


def test_feynman_hellmann_against_differences(small):
    a = small.annulus
    h = 1e-7
    for th in (0.3, 1.9):
        k = _polar(0.5 * (a.inner_radius + a.outer_radius), th)
        grad = fh_gradient(small.grid, small.pot, k, small.E)
        fd = np.array(
            [(lambda1(small.grid, small.pot, k + h * e, small.E) - lambda1(small.grid, small.pot, k - h * e, small.E)) / (2 * h)
             for e in np.eye(2)]
        )  # fmt: skip
        assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(grad)


def test_gradient_symmetry_on_axis(small):
    grad = fh_gradient(small.grid, small.pot, [0.35, 0.0], small.E)
    assert abs(grad[1]) <= 1e-8 * abs(grad[0])
    assert grad[0] < 0  # lambda_1 decreases away from the circle |k|^2 = E


def test_gradient_needs_evanescent_channels(small):
    with pytest.raises(DomainError):
        fh_gradient(small.grid, small.pot, [0.1, 0.0], small.E)


def test_overlap_on_annulus(small):
    a = small.annulus
    k = _polar(0.5 * (a.inner_radius + a.outer_radius), 2.0)
    ep = leading_eig(assemble_gamma(small.grid, small.pot, k, small.E), n_eigs=3)
    ov, bound, holds = overlap_bound(ep.psi1, k, small.pot, small.s)
    assert holds and ov >= bound and ov <= 1 + 1e-12
