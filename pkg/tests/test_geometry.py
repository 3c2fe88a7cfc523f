import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from bsguided.errors import ConfigError, DivergentSumError, DomainError, SingularDispersionError
from bsguided.geometry import (
    QuasiMomentum,
    classify,
    dispersion_root,
    dispersion_roots,
    energy_threshold,
    enumerate_modes,
    make_lattice,
    mode_indices,
    summability_sum,
)


def test_square_lattice_constants(lat):
    assert lat.b2_len == pytest.approx(1.0) and lat.b3_len == pytest.approx(1.0)
    assert lat.cell_area_S == pytest.approx(4 * math.pi**2)
    assert lat.cell_area_B == pytest.approx(1.0)
    # hand value of |B| / (16 pi^2) for |B| = 1
    assert lat.beta == pytest.approx(6.3326e-3, rel=1e-4)
    assert lat.cell_area_S * lat.cell_area_B == pytest.approx((2 * math.pi) ** 2)
    assert lat.kernel_const == pytest.approx(2 * lat.beta)


def test_rectangular_dual_lengths():
    lt = make_lattice(math.pi, 4 * math.pi)
    assert lt.b2_len == pytest.approx(2.0) and lt.b3_len == pytest.approx(0.5)


@pytest.mark.parametrize("a2,a3", [(0, 1), (-1, 1), (1, float("inf"))])
def test_bad_lattice(a2, a3):
    with pytest.raises(ConfigError):
        make_lattice(a2, a3)


def test_energy_threshold(lat):
    assert energy_threshold(lat, 1.0) == pytest.approx(0.125)
    assert energy_threshold(lat, 0.0) == pytest.approx(0.25)
    for d in (0.0, 0.5, 1.0, 3.0):
        by_a = math.pi**2 / (1 + d) * min(lat.a2_len, lat.a3_len) ** -2
        assert energy_threshold(lat, d) == pytest.approx(by_a)


def test_mode_counts(lat):
    assert mode_indices(0) == [(0, 0)]
    assert len(mode_indices(1)) == 9
    assert len(mode_indices(4)) == 81
    modes = enumerate_modes(lat, 2)
    assert modes[0].is_zero
    rings = [max(abs(m.n2), abs(m.n3)) for m in modes]
    assert rings == sorted(rings)


def test_quasi_momentum_cell(lat):
    q = QuasiMomentum.from_k(lat, 0.3, -0.2)
    assert q.norm_sq == pytest.approx(0.13)
    with pytest.raises(DomainError):
        QuasiMomentum(0.6, 0.0, lat)


def test_dispersion_hand_values():
    assert dispersion_root(1.0, 0.1, 0.0).value == pytest.approx(0.94868j, abs=1e-5)
    assert dispersion_root(0.05, 0.1, 0.0).value == pytest.approx(0.22361, abs=1e-5)
    r = dispersion_root(1.0, 0.1, 0.1)
    assert r.p_I == pytest.approx(0.95014, abs=1e-5)
    assert r.p_R == pytest.approx(0.05263, abs=1e-5)


def test_dispersion_singular():
    with pytest.raises(SingularDispersionError):
        dispersion_root(0.1, 0.1, 0.0)
    with pytest.raises(SingularDispersionError):
        dispersion_roots(np.array([0.3, 0.1]), 0.1, 0.0)


def test_open_channel_branches():
    p = dispersion_root(0.05, 0.1, 0.0).value
    for eps in (1e-4, 1e-8, 1e-12):
        assert dispersion_root(0.05, 0.1, eps).value == pytest.approx(p, abs=10 * eps)
        assert dispersion_root(0.05, 0.1, -eps).value == pytest.approx(-p, abs=10 * eps)


@settings(max_examples=200, deadline=None)
@given(
    q=st.floats(0.0, 50.0),
    E=st.floats(1e-3, 1.0),
    eps=st.floats(-1.0, 1.0),
)
@example(q=0.0, E=0.5, eps=5e-324)  # subnormal eps once lost the real part
def test_dispersion_root_properties(q, E, eps):
    if eps == 0.0 and q == E:
        return
    r = dispersion_root(q, E, eps)
    p = r.value
    assert r.p_I >= 0
    assert p * p == pytest.approx(complex(E - q, eps), abs=1e-10 * max(1.0, q))
    vec = dispersion_roots(np.array([q]), E, eps)[0]
    assert vec == pytest.approx(p, rel=1e-12, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(q=st.floats(0.0, 5.0), E=st.floats(1e-3, 0.12), eps=st.floats(1e-6, 1.0))
def test_decay_rate_grows_with_eps(q, E, eps):
    if q == E:
        return
    assert dispersion_root(q, E, eps).p_I >= dispersion_root(q, E, 0.0).p_I - 1e-15


def test_classify():
    assert classify([math.sqrt(0.2), 0.0], 0.1) == "B_E_plus"
    assert classify([math.sqrt(0.05), 0.0], 0.1) == "B_E_minus"
    assert classify([0.0, math.sqrt(0.1)], 0.1) == "boundary"
    with pytest.raises(DomainError):
        classify([0, 0], 0.0)


def _brute(lat, k, E, mu, M, eps=0.0):
    total = 0.0
    for n2 in range(-M, M + 1):
        for n3 in range(-M, M + 1):
            if n2 == 0 and n3 == 0:
                continue
            kk = (k[0] + n2 * lat.b2_len) ** 2 + (k[1] + n3 * lat.b3_len) ** 2
            d = E - kk
            h = math.hypot(d, eps)
            total += math.sqrt((h - d) / 2) ** -mu
    return total


def test_summability_against_brute_force(lat):
    v4, t4 = summability_sum(lat, [0, 0], 0.1, 3.0, 4)
    v8, t8 = summability_sum(lat, [0, 0], 0.1, 3.0, 8)
    ref = _brute(lat, (0, 0), 0.1, 3.0, 64)
    assert v8 >= v4
    assert v4 <= v8 + t8 and ref <= v8 + t8
    assert ref <= v4 + t4
    assert v8 == pytest.approx(_brute(lat, (0, 0), 0.1, 3.0, 8), rel=1e-12)


def test_summability_eps_and_domain(lat):
    k = [0.1, 0.2]
    v0, _ = summability_sum(lat, k, 0.1, 3.0, 6)
    for eps in (0.01, 0.3, -0.2):
        ve, _ = summability_sum(lat, k, 0.1, 3.0, 6, eps=eps)
        assert ve <= v0
    with pytest.raises(DivergentSumError):
        summability_sum(lat, k, 0.1, 2.0, 4)
    with pytest.raises(DomainError):
        summability_sum(lat, k, 0.2, 3.0, 4, delta=1.0)
