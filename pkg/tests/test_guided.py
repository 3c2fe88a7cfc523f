import math

import numpy as np
import pytest

from bsguided.bsop import assemble_gamma
from bsguided.errors import DomainError, NotOnCurveError
from bsguided.fermi import radial_root
from bsguided.guided import (
    boundary_case_check,
    build_guided_state,
    decay_report,
    null_residual,
    null_vector,
    zero_mode_fourier,
)
from bsguided.lap import state_norm
from bsguided.potential import PotentialSpec, build_potential
from bsguided.spectral import leading_eig


@pytest.fixture(scope="module")
def node(small):
    root = radial_root(0.4, small.annulus, small.ctx)
    v = null_vector(root.k, small.E, small.g, small.grid, small.pot)
    return root.k, v


def test_null_vector_is_leading_eigenfunction(small, node):
    k, v = node
    assert null_residual(v, k, small.E, small.g, small.grid, small.pot) <= 1e-6
    ep = leading_eig(assemble_gamma(small.grid, small.pot, k, small.E), n_eigs=3, with_disk=False)
    ov = np.sum(small.grid.weights * np.conj(ep.psi1) * v)
    assert abs(ov) == pytest.approx(1.0, abs=1e-8)


def test_guided_state(small, node):
    k, v = node
    state = build_guided_state(v, k, small.E, small.g, small.grid, small.pot)
    assert state.eigen_residual <= 1e-6
    assert state.wu_mismatch <= 1e-6
    assert state_norm(small.pot.samples * state.u, small.grid) > 0.5
    double = build_guided_state(2 * v, k, small.E, small.g, small.grid, small.pot)
    for a, b in zip(double.channels, state.channels):
        np.testing.assert_allclose(a, 2 * b, rtol=1e-12, atol=1e-14)


def test_decay_and_moments(small, node):
    k, v = node
    state = build_guided_state(v, k, small.E, small.g, small.grid, small.pot)
    rep = decay_report(state, small.grid, 6)
    assert rep["rate_relative_error"] <= 0.1
    assert rep["moments_finite"] and rep["moments_increasing"]
    assert float(rep["moments"]["0"]) == pytest.approx(state.norm(), rel=1e-12)


def test_off_curve_is_structured(small):
    k = np.array([0.5 * (small.annulus.outer_radius + small.annulus.inner_radius) * 1.02, 0.0])
    with pytest.raises(NotOnCurveError) as err:
        null_vector(k, small.E, small.g, small.grid, small.pot)
    assert err.value.distance > 1e-6
    assert err.value.exit_code == 2
    with pytest.raises(DomainError):
        null_vector([0.1, 0.0], small.E, small.g, small.grid, small.pot)


def test_boundary_case_with_half_space_potential(small):
    pot = build_potential(PotentialSpec(longitudinal="bump", R=5.0), small.grid)
    rep = boundary_case_check([math.sqrt(small.E), 0.0], small.E, small.g, small.grid, pot)
    assert rep.applicable and not rep.inconclusive
    assert rep.stays_above_limit and rep.supports_no_state


def test_boundary_case_without_half_space(small):
    rep = boundary_case_check([0.0, math.sqrt(small.E)], small.E, small.g, small.grid, small.pot)
    assert not rep.applicable and not rep.supports_no_state
    with pytest.raises(DomainError):
        boundary_case_check([0.3, 0.0], small.E, small.g, small.grid, small.pot)


def test_zero_mode_detector(small):
    grid = small.grid
    k = np.array([math.sqrt(small.E), 0.0])
    e0 = grid.transverse_basis(k)[:, 0]
    even = np.exp(-grid.x1**2)[:, None] * e0[None, :]
    val, der = zero_mode_fourier(even, grid, k)
    # (2 pi)^(-1/2) int exp(-x^2) dx = 2^(-1/2); the first moment vanishes
    assert abs(val) == pytest.approx(1 / math.sqrt(2), rel=1e-10)
    assert abs(der) < 1e-12
    odd = grid.x1[:, None] * even
    val, der = zero_mode_fourier(odd, grid, k)
    assert abs(val) < 1e-12 and abs(der) > 0.1
