"""Quadrature grid on the truncated cylinder ``[-L, L] x S``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import LatticeGeometry, mode_indices

MAX_DIMENSION = 20000


@dataclass(frozen=True)
class Grid:
    """Uniform midpoint nodes in ``x1`` times a uniform tensor grid on ``S``.

    The longitudinal nodes are ``x1_i = -L + (i + 1/2) h`` with ``h = 2L/N1``
    and the transverse nodes sit at the cell centres of an ``n_l x n_l``
    subdivision of the period cell.  Every node has the weight ``h * |S| / n_l^2``.
    The Birman-Schwinger matrices act on the mixed representation of size
    ``N1 * (2M+1)^2`` (longitudinal node times transverse mode).
    """

    lat: LatticeGeometry
    L: float
    N1: int
    M: int
    n_l: int
    x1: np.ndarray = field(repr=False, compare=False)
    xl: np.ndarray = field(repr=False, compare=False)
    modes: np.ndarray = field(repr=False, compare=False)

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N1

    @property
    def omega(self) -> float:
        """Transverse quadrature weight of a single node."""
        return self.lat.cell_area_S / self.n_l**2

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def dim(self) -> int:
        return self.N1 * self.n_modes

    @property
    def weights(self) -> np.ndarray:
        """Full node weights, shape ``(N1, n_l**2)``."""
        return np.full((self.N1, self.n_l**2), self.h * self.omega)

    @property
    def K(self) -> np.ndarray:
        """Dual vectors of the retained modes, shape ``(n_modes, 2)``."""
        return self.modes * np.array([self.lat.b2_len, self.lat.b3_len])

    def transverse_basis(self, k: np.ndarray | None = None, modes: np.ndarray | None = None) -> np.ndarray:
        """Matrix ``E[nu, K] = exp(i <k+K, x_nu>) / |S|^{1/2}``."""
        modes = self.modes if modes is None else modes
        K = modes * np.array([self.lat.b2_len, self.lat.b3_len])
        if k is not None:
            K = K + np.asarray(k, dtype=float)
        return np.exp(1j * self.xl @ K.T) / np.sqrt(self.lat.cell_area_S)

    def full_modes(self) -> np.ndarray:
        """The ``n_l^2`` modes resolved without aliasing by the transverse nodes."""
        lo = -(self.n_l // 2)
        r = np.arange(lo, lo + self.n_l)
        pairs = [(a, b) for a in r for b in r]
        return np.array(sorted(pairs, key=lambda n: (max(abs(n[0]), abs(n[1])), n[0], n[1])))


def make_grid(lat: LatticeGeometry, L: float, N1: int, M: int, n_l: int) -> Grid:
    """Validate the discretisation parameters and build the grid."""
    if not L > 0:
        raise ConfigError(f"box half-length L must be positive, got {L}")
    if N1 < 16 or N1 % 2:
        raise ConfigError(f"N1 must be an even integer >= 16, got {N1}")
    if M < 0:
        raise ConfigError(f"mode cutoff M must be nonnegative, got {M}")
    if n_l < 2 * M + 1:
        raise ConfigError(f"n_l = {n_l} cannot resolve the {2 * M + 1} modes per direction")
    dim = N1 * (2 * M + 1) ** 2
    if dim > MAX_DIMENSION:
        raise ConfigError(f"dimension N = {dim} exceeds the memory guard {MAX_DIMENSION}")
    h = 2.0 * L / N1
    x1 = -L + (np.arange(N1) + 0.5) * h
    s = -0.5 + (np.arange(n_l) + 0.5) / n_l
    s2, s3 = np.meshgrid(s, s, indexing="ij")
    xl = np.column_stack([s2.ravel() * lat.a2_len, s3.ravel() * lat.a3_len])
    modes = np.array(mode_indices(M), dtype=float)
    return Grid(lat, float(L), int(N1), int(M), int(n_l), x1, xl, modes)
