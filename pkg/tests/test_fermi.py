import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsguided.errors import ConfigError, RegimeViolation
from bsguided.fermi import (
    continuation,
    curve_report,
    g_scaling,
    is_simple,
    make_annulus,
    radial_root,
    radial_scan,
    trace_curve,
    winding_number,
)


def test_annulus_with_stated_constant(lat):
    ann = make_annulus(lat, 0.1, 1e-3, 6.0, coupling=lat.beta)
    assert ann.q_minus == pytest.approx(5.277e-3, rel=1e-3)
    assert ann.q_plus == pytest.approx(7.916e-3, rel=1e-3)
    tiny = make_annulus(lat, 0.1, 1e-9, 6.0)
    assert tiny.inner_radius == pytest.approx(math.sqrt(0.1), rel=1e-12)
    assert tiny.outer_radius == pytest.approx(math.sqrt(0.1), rel=1e-12)


def test_annulus_validation(lat):
    with pytest.raises(ConfigError):
        make_annulus(lat, 0.1, 0.5, 5.0)
    with pytest.raises(ConfigError):
        make_annulus(lat, 0.2, 0.5, 6.0, delta=1.0)
    with pytest.raises(RegimeViolation):
        make_annulus(lat, 0.1, 0.5, 6.0, c=1.0)


@settings(max_examples=50, deadline=None)
@given(s=st.floats(5.3, 1e3), g=st.floats(1e-6, 1.0), E=st.floats(1e-3, 0.12))
def test_annulus_ordering(lat, s, g, E):
    ann = make_annulus(lat, E, g, s)
    assert ann.q_minus < ann.q_plus
    assert math.sqrt(E) <= ann.inner_radius <= ann.outer_radius
    # the radii are sqrt(E + (q g)^2); strict order needs (q g)^2 above the rounding of E
    if (ann.q_minus * g) ** 2 > 1e-12 * E:
        assert math.sqrt(E) < ann.inner_radius < ann.outer_radius


def test_radial_roots(small):
    a, ctx = small.annulus, small.ctx
    r0 = radial_root(0.0, a, ctx)
    r1 = radial_root(math.pi / 2, a, ctx)
    assert r0.residual <= 1e-8 and r1.residual <= 1e-8
    assert a.inner_radius < r0.radius < a.outer_radius
    # the square lattice and the radial transverse bump are invariant under quarter turns
    assert r1.radius == pytest.approx(r0.radius, abs=1e-10)
    assert r0.inner_value > 0 > r0.outer_value


def test_root_moves_in_with_smaller_coupling(small):
    a, ctx = small.annulus, small.ctx
    half = make_annulus(small.cfg.lat, small.E, a.g / 2, small.s)
    r_full = radial_root(0.3, a, ctx).radius
    r_half = radial_root(0.3, half, ctx).radius
    sE = math.sqrt(small.E)
    assert sE < r_half < r_full
    assert (r_half - sE) / (r_full - sE) == pytest.approx(0.25, abs=0.03)


def test_no_sign_change_is_reported(small):
    lat = small.cfg.lat
    shifted = make_annulus(lat, small.E, small.g, small.s, coupling=10 * lat.kernel_const)
    with pytest.raises(RegimeViolation, match="inner value"):
        radial_root(0.0, shifted, small.ctx)


def test_four_node_curve(small):
    curve = radial_scan(small.annulus, small.ctx, 4)
    rep = curve_report(curve, small.annulus, small.ctx)
    assert rep["closed"] and rep["simple"] and rep["winding_number"] == 1
    assert rep["inside_annulus"] and rep["max_residual"] <= 1e-8
    assert rep["min_gradient_norm"] > 0 and rep["sign_bracket_ok"]


def test_continuation_matches_radial_scan(small):
    cont = continuation(small.annulus, small.ctx, 12)
    assert cont.winding_number == 1 and cont.simple
    assert np.max(cont.residual) <= 1e-8
    assert cont.closure_gap <= cont.step
    for k in cont.k[:: max(1, len(cont) // 4)]:
        th = math.atan2(k[1], k[0])
        ref = radial_root(th, small.annulus, small.ctx).radius
        assert np.hypot(*k) == pytest.approx(ref, abs=1e-6)


def test_trace_curve_modes(small):
    with pytest.raises(ConfigError):
        trace_curve(small.annulus, small.ctx, 8, mode="spiral")
    with pytest.raises(ConfigError):
        radial_scan(small.annulus, small.ctx, 2)


def test_g_scaling_exponent(small):
    gs = g_scaling(small.cfg.lat, small.E, small.g, small.s, small.ctx)
    assert 1.8 <= gs["exponent"] <= 2.2


def _star(radii):
    th = 2 * np.pi * np.arange(len(radii)) / len(radii)
    return np.column_stack([radii * np.cos(th), radii * np.sin(th)])


@settings(max_examples=100, deadline=None)
@given(radii=st.lists(st.floats(0.5, 2.0), min_size=3, max_size=40))
def test_star_shaped_polygons(radii):
    pts = _star(np.array(radii))
    assert winding_number(pts) == 1
    assert winding_number(pts[::-1]) == -1
    assert is_simple(pts)


def test_figure_eight_and_offset_loop():
    eight = np.array([[0, 0], [1, 1], [2, 0], [1, -1], [0, 0.01], [-1, 1], [-2, 0], [-1, -1]], float)
    assert not is_simple(eight)
    away = _star(np.ones(16)) + np.array([5.0, 0.0])
    assert winding_number(away) == 0
