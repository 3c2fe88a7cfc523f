"""Lattice geometry, quasi-momenta, dual modes and dispersion roots.

The periodic directions carry an orthogonal lattice with periods ``a2``,
``a3``.  Quasi-momenta ``k`` live in the Brillouin cell of the dual lattice
and each dual vector ``K`` labels one longitudinal channel whose dispersion
root ``p = sqrt(z - |k+K|^2)`` (imaginary part nonnegative) controls how the
channel propagates or decays along ``x1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import ConfigError, DivergentSumError, DomainError, SingularDispersionError

BOUNDARY_TOL = 1e-14


@dataclass(frozen=True)
class LatticeGeometry:
    """Orthogonal two-dimensional lattice and its dual.

    Attributes
    ----------
    a2_len, a3_len : float
        Lengths of the orthogonal periods.
    b2_len, b3_len : float
        Dual lengths ``2*pi/a_j``.
    cell_area_S, cell_area_B : float
        Areas of the period cell and of the Brillouin cell.
    beta : float
        The constant ``|B| / (16 pi^2)``.
    """

    a2_len: float
    a3_len: float
    b2_len: float
    b3_len: float
    cell_area_S: float
    cell_area_B: float
    beta: float

    @property
    def kernel_const(self) -> float:
        """Prefactor ``1/(2|S|)`` of the free Green function per channel.

        The free resolvent of ``-Laplacian`` restricted to one Bloch fiber has
        kernel ``sum_K e^{i<k+K, x-y>} * i e^{ip|x1-y1|} / (2 p |S|)``, so
        this constant (equal to ``2*beta``) is the one that multiplies
        ``i e^{ip|t|}/p`` in the kernel actually assembled.
        """
        return 1.0 / (2.0 * self.cell_area_S)

    @property
    def b_min(self) -> float:
        return min(self.b2_len, self.b3_len)


def make_lattice(a2_len: float, a3_len: float) -> LatticeGeometry:
    """Build the lattice with orthogonal periods of the given lengths."""
    a2 = float(a2_len)
    a3 = float(a3_len)
    if not (math.isfinite(a2) and math.isfinite(a3)) or a2 <= 0 or a3 <= 0:
        raise ConfigError(f"lattice lengths must be positive, got ({a2_len}, {a3_len})")
    b2 = 2.0 * math.pi / a2
    b3 = 2.0 * math.pi / a3
    area_s = a2 * a3
    area_b = b2 * b3
    return LatticeGeometry(a2, a3, b2, b3, area_s, area_b, area_b / (16.0 * math.pi**2))


@dataclass(frozen=True)
class QuasiMomentum:
    """Quasi-momentum given by its coordinates in the dual basis."""

    t2: float
    t3: float
    lat: LatticeGeometry

    def __post_init__(self) -> None:
        for t in (self.t2, self.t3):
            if not (-0.5 < t <= 0.5):
                raise DomainError(f"dual coordinate {t} outside the Brillouin cell (-1/2, 1/2]")

    @property
    def k2(self) -> float:
        return self.t2 * self.lat.b2_len

    @property
    def k3(self) -> float:
        return self.t3 * self.lat.b3_len

    @property
    def k(self) -> np.ndarray:
        return np.array([self.k2, self.k3])

    @property
    def norm_sq(self) -> float:
        return self.k2**2 + self.k3**2

    @classmethod
    def from_k(cls, lat: LatticeGeometry, k2: float, k3: float) -> "QuasiMomentum":
        return cls(k2 / lat.b2_len, k3 / lat.b3_len, lat)


KLike = Union[QuasiMomentum, Sequence[float], np.ndarray]


def as_k(k: KLike) -> np.ndarray:
    """Return a quasi-momentum as a float array ``(k2, k3)``."""
    if isinstance(k, QuasiMomentum):
        return k.k
    arr = np.asarray(k, dtype=float).reshape(-1)
    if arr.shape != (2,):
        raise DomainError(f"quasi-momentum must have two components, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class DualMode:
    """Dual lattice vector ``K = n2 b2 + n3 b3``."""

    n2: int
    n3: int
    lat: LatticeGeometry

    @property
    def K2(self) -> float:
        return self.n2 * self.lat.b2_len

    @property
    def K3(self) -> float:
        return self.n3 * self.lat.b3_len

    @property
    def K(self) -> np.ndarray:
        return np.array([self.K2, self.K3])

    @property
    def is_zero(self) -> bool:
        return self.n2 == 0 and self.n3 == 0


def energy_threshold(lat: LatticeGeometry, delta: float) -> float:
    """Energy ``E_delta = min_j |b_j|^2 / (4 (1 + delta))``.

    Below this energy only the zero mode can be an open channel.
    """
    if delta < 0:
        raise ConfigError(f"delta must be nonnegative, got {delta}")
    return lat.b_min**2 / (4.0 * (1.0 + delta))


def mode_indices(M: int) -> list[tuple[int, int]]:
    """Integer pairs with ``max(|n2|,|n3|) <= M``, sorted ring by ring."""
    if M < 0:
        raise ConfigError(f"mode cutoff must be nonnegative, got {M}")
    pairs = [(n2, n3) for n2 in range(-M, M + 1) for n3 in range(-M, M + 1)]
    return sorted(pairs, key=lambda n: (max(abs(n[0]), abs(n[1])), n[0], n[1]))


def enumerate_modes(lat: LatticeGeometry, M: int) -> list[DualMode]:
    """Modes with ``|n_j| <= M``; zero mode first, then ring by ring."""
    return [DualMode(n2, n3, lat) for n2, n3 in mode_indices(M)]


@dataclass(frozen=True)
class DispersionRoot:
    """Root ``p = p_R + i p_I`` of ``z - |k+K|^2`` with ``p_I >= 0``."""

    p_R: float
    p_I: float

    @property
    def value(self) -> complex:
        return complex(self.p_R, self.p_I)


def dispersion_root(k_plus_K_norm_sq: float, E: float, eps: float) -> DispersionRoot:
    """Branch-resolved dispersion root for one channel.

    Raises
    ------
    SingularDispersionError
        When ``eps == 0`` and ``|k+K|^2 == E`` (the root vanishes).
    """
    d = E - k_plus_K_norm_sq
    if eps == 0.0:
        if d == 0.0:
            raise SingularDispersionError("dispersion root vanishes: |k+K|^2 = E with eps = 0")
        if d > 0:
            return DispersionRoot(math.sqrt(d), 0.0)
        return DispersionRoot(0.0, math.sqrt(-d))
    h = math.hypot(d, eps)
    # take the component without cancellation directly, the other from p_R p_I = eps/2;
    # dividing by the small component instead loses everything for tiny eps
    if d > 0:
        p_R = math.copysign(math.sqrt((h + d) / 2.0), eps)
        return DispersionRoot(p_R, abs(eps) / (2.0 * abs(p_R)))
    p_I = math.sqrt((h - d) / 2.0)
    return DispersionRoot(eps / (2.0 * p_I), p_I)


def dispersion_roots(kK_sq: np.ndarray, E: float, eps: float) -> np.ndarray:
    """Vectorised :func:`dispersion_root` returning complex values."""
    d = E - np.asarray(kK_sq, dtype=float)
    if eps == 0.0:
        if np.any(d == 0.0):
            raise SingularDispersionError("dispersion root vanishes: |k+K|^2 = E with eps = 0")
        return np.where(d > 0, np.sqrt(np.abs(d)) + 0j, 1j * np.sqrt(np.abs(d)))
    h = np.hypot(d, eps)
    big = np.sqrt((h + np.abs(d)) / 2.0)
    small = abs(eps) / (2.0 * big)
    p_R = np.copysign(np.where(d > 0, big, small), eps)
    p_I = np.where(d > 0, small, big)
    return p_R + 1j * p_I


def classify(k: KLike, E: float) -> str:
    """Tag ``k`` as ``B_E_plus``, ``B_E_minus`` or ``boundary``."""
    if E <= 0:
        raise DomainError("energy must be positive")
    kv = as_k(k)
    diff = float(kv @ kv) - E
    if abs(diff) < BOUNDARY_TOL:
        return "boundary"
    return "B_E_plus" if diff > 0 else "B_E_minus"


def _minorant_sq(n: Iterable[int], lat: LatticeGeometry, E_ref: float) -> float:
    s = sum((2 * abs(nj) - 1) ** 2 for nj in n if nj != 0)
    return s * lat.b_min**2 / 4.0 - E_ref


def summability_sum(
    lat: LatticeGeometry,
    k: KLike,
    E: float,
    mu: float,
    M: int,
    delta: float | None = None,
    eps: float = 0.0,
) -> tuple[float, float]:
    """Truncated sum of ``p_I(k+K, E+i eps)^(-mu)`` over ``K != 0`` and a tail bound.

    The tail bound sums the explicit lower bound on ``p_I`` over all modes
    outside the window ``|n_j| <= M``.  With ``delta`` given the bound uses
    ``E_delta``; otherwise it uses ``E`` itself, which is the sharpest case.

    Returns
    -------
    value, tail_bound : float
    """
    if mu <= 2:
        raise DivergentSumError(f"the lattice sum diverges for mu <= 2 (got {mu})")
    kv = as_k(k)
    E_ref = E if delta is None else energy_threshold(lat, delta)
    if delta is not None and not (0 < E < E_ref):
        raise DomainError(f"E = {E} must lie in (0, E_delta = {E_ref})")
    value = 0.0
    for n2, n3 in mode_indices(M)[1:]:
        K = np.array([n2 * lat.b2_len, n3 * lat.b3_len])
        root = dispersion_root(float((kv + K) @ (kv + K)), E, eps)
        value += root.p_I ** (-mu)
    return value, _ring_tail(lat, E_ref, mu, M)


def _ring_tail(lat: LatticeGeometry, E_ref: float, mu: float, M: int) -> float:
    # ring m (max|n_j| = m) holds 8m modes whose minorant is at least
    # ((2m-1)^2 |b|_min^2/4 - E_ref)^(1/2)
    n_explicit = max(M + 1, 4096)
    m = np.arange(M + 1, n_explicit + 1, dtype=float)
    base = (2 * m - 1) ** 2 * lat.b_min**2 / 4.0 - E_ref
    if np.any(base <= 0):
        return math.inf
    tail = float(np.sum(8 * m * base ** (-mu / 2)))
    # beyond the explicit range: (2m-1)^2 b^2/4 - E_ref >= m^2 b^2/2 once m >= 4
    # and E_ref <= b^2/4, which makes the remaining sum at most an integral
    c = lat.b_min**2 / 2.0
    tail += 8.0 * c ** (-mu / 2) * n_explicit ** (2 - mu) / (mu - 2)
    return tail
