"""The potential factor ``W >= 0`` with ``V = -g W^2``.

``W`` is a product ``w(x1) b(x_l)`` of a longitudinal profile that decays
along the non-periodic axis and a transverse profile that is periodic in the
lattice.  After sampling, ``W`` is scaled so that its quadrature L2 norm on the
grid equals one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import ConfigError
from .geometry import LatticeGeometry
from .grid import Grid

LONGITUDINAL_KINDS = ("rational", "gaussian", "bump")
TRANSVERSE_KINDS = ("bump", "const", "fourier")


@dataclass(frozen=True)
class PotentialSpec:
    """Declarative description of ``W = w(x1) * b(x_l)``.

    Parameters
    ----------
    longitudinal : {"rational", "gaussian", "bump"}
        ``(1+x1^2)^(-q)``, ``exp(-x1^2/(2 sigma^2))`` or the smooth bump
        ``exp(-1/(1-(x1/R)^2))`` supported on ``[-R, R]``.
    transverse : {"bump", "const", "fourier"}
        Radial smooth bump of radius ``radius`` centred in the cell, a
        constant, or ``c0 + sum c_n cos(<K_n, x_l>)``.
    fourier : tuple of ((n2, n3), c)
        Cosine coefficients for the ``fourier`` profile; the ``(0, 0)`` entry
        is the constant term.
    """

    longitudinal: str = "rational"
    q: float = 2.0
    sigma: float = 1.0
    R: float = 5.0
    transverse: str = "bump"
    radius: float | None = None
    fourier: tuple = ()

    def __post_init__(self) -> None:
        if self.longitudinal not in LONGITUDINAL_KINDS:
            raise ConfigError(f"unknown longitudinal profile {self.longitudinal!r}")
        if self.transverse not in TRANSVERSE_KINDS:
            raise ConfigError(f"unknown transverse profile {self.transverse!r}")
        if self.longitudinal == "rational" and not self.q > 0:
            raise ConfigError("rational profile needs q > 0")
        if self.longitudinal == "gaussian" and not self.sigma > 0:
            raise ConfigError("gaussian profile needs sigma > 0")
        if self.longitudinal == "bump" and not self.R > 0:
            raise ConfigError("bump profile needs R > 0")
        if self.radius is not None and not self.radius > 0:
            raise ConfigError("transverse bump radius must be positive")
        if self.transverse == "fourier" and not self.fourier:
            raise ConfigError("fourier transverse profile needs coefficients")


def longitudinal_profile(spec: PotentialSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Unnormalised ``w(x1)`` as a vectorised callable."""
    if spec.longitudinal == "rational":
        return lambda x: (1.0 + np.asarray(x, float) ** 2) ** (-spec.q)
    if spec.longitudinal == "gaussian":
        return lambda x: np.exp(-np.asarray(x, float) ** 2 / (2.0 * spec.sigma**2))
    return lambda x: _bump(np.asarray(x, float) / spec.R)


def _bump(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def _reduce_to_cell(lat: LatticeGeometry, x2: np.ndarray, x3: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s2 = np.asarray(x2, float) / lat.a2_len
    s3 = np.asarray(x3, float) / lat.a3_len
    s2 = s2 - np.round(s2)
    s3 = s3 - np.round(s3)
    return s2 * lat.a2_len, s3 * lat.a3_len


def bump_radius(spec: PotentialSpec, lat: LatticeGeometry) -> float:
    return spec.radius if spec.radius is not None else 0.4 * min(lat.a2_len, lat.a3_len)


def transverse_profile(spec: PotentialSpec, lat: LatticeGeometry) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Unnormalised periodic ``b(x_l)`` as a vectorised callable."""
    if spec.transverse == "const":
        return lambda x2, x3: np.ones(np.broadcast(np.asarray(x2), np.asarray(x3)).shape)
    if spec.transverse == "bump":
        rho = bump_radius(spec, lat)

        def b(x2, x3):
            y2, y3 = _reduce_to_cell(lat, x2, x3)
            return _bump(np.hypot(y2, y3) / rho)

        return b
    terms = [((int(n[0]), int(n[1])), float(c)) for n, c in spec.fourier]

    def bf(x2, x3):
        x2 = np.asarray(x2, float)
        x3 = np.asarray(x3, float)
        out = np.zeros(np.broadcast(x2, x3).shape)
        for (n2, n3), c in terms:
            out = out + c * np.cos(n2 * lat.b2_len * x2 + n3 * lat.b3_len * x3)
        return out

    return bf


@dataclass(frozen=True)
class HalfspaceFlags:
    """Structural hypotheses used by the non-existence result at ``|k| = sqrt(E)``."""

    c4_smooth_transverse: bool
    vanishes_near_boundary: bool
    vanishes_on_halfspace: bool
    halfspace_interval: tuple[float, float] | None


def halfspace_flags(spec: PotentialSpec, lat: LatticeGeometry) -> HalfspaceFlags:
    """Read the flags off the declared structure of ``spec``."""
    smooth = True  # every supported transverse profile is C-infinity and periodic
    near_boundary = False
    if spec.transverse == "bump":
        near_boundary = bump_radius(spec, lat) < 0.5 * min(lat.a2_len, lat.a3_len)
    if spec.longitudinal == "bump":
        return HalfspaceFlags(smooth, near_boundary, True, (spec.R, math.inf))
    return HalfspaceFlags(smooth, near_boundary, False, None)


@dataclass(frozen=True)
class Potential:
    """Normalised potential sampled on a grid.

    Attributes
    ----------
    w : ndarray, shape (N1,)
        Normalised longitudinal factor at the ``x1`` nodes (``h sum w^2 = 1``).
    b : ndarray, shape (n_l**2,)
        Normalised transverse factor at the transverse nodes.
    samples : ndarray, shape (N1, n_l**2)
        ``W`` at every grid node; its quadrature norm is one.
    gram : ndarray
        ``B[K, K'] = sum_nu omega b^2 conj(e_K) e_K'`` over the retained modes,
        so the transverse Gram block at node ``i`` is ``w_i^2 B``.
    gram_sqrt : ndarray
        Positive square root of ``gram``.
    """

    spec: PotentialSpec
    grid: Grid
    w_scale: float
    b_scale: float
    w: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    samples: np.ndarray = field(repr=False)
    gram: np.ndarray = field(repr=False)
    gram_sqrt: np.ndarray = field(repr=False)

    @property
    def norm_const(self) -> float:
        return self.w_scale * self.b_scale

    def longitudinal(self, x1: np.ndarray) -> np.ndarray:
        return self.w_scale * longitudinal_profile(self.spec)(x1)

    def transverse(self, x2: np.ndarray, x3: np.ndarray) -> np.ndarray:
        return self.b_scale * transverse_profile(self.spec, self.grid.lat)(x2, x3)

    def __call__(self, x1, x2, x3) -> np.ndarray:
        """Closed-form normalised ``W(x1, x2, x3)``."""
        return self.longitudinal(x1) * self.transverse(x2, x3)

    @property
    def is_real_gram(self) -> bool:
        return bool(np.max(np.abs(self.gram.imag)) <= 1e-14 * np.max(np.abs(self.gram)))

    def quadrature_norm(self) -> float:
        return float(np.sqrt(np.sum(self.grid.weights * self.samples**2)))

    def sup_norm(self) -> float:
        return float(np.max(self.samples))

    def weighted_norm(self, tau: float) -> float:
        """``||(1+x1^2)^(tau/2) W||`` by quadrature."""
        wt = (1.0 + self.grid.x1**2) ** (tau / 2.0)
        return float(np.sqrt(np.sum(self.grid.weights * (wt[:, None] * self.samples) ** 2)))

    def l2_linf_norm(self) -> float:
        """``|| sup_{x_l} W(x1, .) ||_{L2(R)}``."""
        return float(np.sqrt(self.grid.h * np.sum(np.max(self.samples, axis=1) ** 2)))

    def linf_l2_norm(self) -> float:
        """``sup_{x1} ||W(x1, .)||_{L2(S)}``."""
        return float(np.sqrt(np.max(self.grid.omega * np.sum(self.samples**2, axis=1))))


def build_potential(spec: PotentialSpec, grid: Grid) -> Potential:
    """Sample ``W`` on ``grid`` and normalise it in the quadrature norm."""
    lat = grid.lat
    w_raw = longitudinal_profile(spec)(grid.x1)
    b_raw = transverse_profile(spec, lat)(grid.xl[:, 0], grid.xl[:, 1])
    if np.any(w_raw < 0) or np.any(b_raw < -1e-14 * max(1.0, float(np.max(np.abs(b_raw))))):
        raise ConfigError("potential profiles must be nonnegative")
    b_raw = np.maximum(b_raw, 0.0)
    nw = math.sqrt(grid.h * float(np.sum(w_raw**2)))
    nb = math.sqrt(grid.omega * float(np.sum(b_raw**2)))
    if nw == 0.0 or nb == 0.0:
        raise ConfigError("potential vanishes on the grid (degenerate)")
    if spec.transverse == "fourier":
        fine = np.linspace(-0.5, 0.5, 129)
        f2, f3 = np.meshgrid(fine * lat.a2_len, fine * lat.a3_len)
        if np.min(transverse_profile(spec, lat)(f2, f3)) < -1e-12:
            raise ConfigError("fourier transverse profile takes negative values")
    w = w_raw / nw
    b = b_raw / nb
    E0 = grid.transverse_basis()
    gram = (E0.conj().T * (grid.omega * b**2)) @ E0
    gram = 0.5 * (gram + gram.conj().T)
    if np.max(np.abs(gram.imag)) <= 1e-14 * np.max(np.abs(gram)):
        gram = gram.real.copy()
    evals, evecs = scipy.linalg.eigh(gram)
    evals = np.clip(evals, 0.0, None)
    gram_sqrt = (evecs * np.sqrt(evals)) @ evecs.conj().T
    return Potential(spec, grid, 1.0 / nw, 1.0 / nb, w, b, np.outer(w, b), gram, gram_sqrt)


def decay_margin(spec: PotentialSpec, L: float = 40.0, margin: float = 1e-3, n_samples: int = 64) -> tuple[float, bool]:
    """Fit the power-law decay exponent of ``sup_{x_l} W`` on ``[L/2, L]``.

    Returns the exponent ``-d log W / d log x1`` and whether it exceeds
    ``3/2 + margin``.  A profile that vanishes (or underflows) on the window
    decays faster than any power and gets ``inf``.
    """
    if not L > 0 or n_samples < 4:
        raise ConfigError("decay fit needs L > 0 and at least 4 samples")
    x = np.linspace(L / 2, L, n_samples)
    vals = longitudinal_profile(spec)(x)
    pos = vals > 0
    if np.count_nonzero(pos) < 2:
        return math.inf, True
    if np.count_nonzero(pos) < n_samples:
        # support ends or values underflow inside the window
        return math.inf, True
    slope = np.polyfit(np.log(x), np.log(vals), 1)[0]
    exponent = float(-slope)
    return exponent, exponent >= 1.5 + margin


def transverse_fourier_sq(pot: Potential, n2: int, n3: int, n_quad: int | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``x1 -> (W^2)_K(x1) = int_S W(x1, .)^2 conj(phi_K)`` for ``K = (n2, n3)``.

    ``phi_K(x_l) = exp(i <K, x_l>) / |S|^{1/2}``; the transverse integral uses
    ``n_quad`` midpoint nodes per direction (default: the grid's ``n_l``).
    """
    lat = pot.grid.lat
    n = pot.grid.n_l if n_quad is None else int(n_quad)
    s = -0.5 + (np.arange(n) + 0.5) / n
    s2, s3 = np.meshgrid(s * lat.a2_len, s * lat.a3_len, indexing="ij")
    K = np.array([n2 * lat.b2_len, n3 * lat.b3_len])
    phi = np.exp(1j * (K[0] * s2 + K[1] * s3)) / math.sqrt(lat.cell_area_S)
    b2 = pot.transverse(s2, s3) ** 2
    coef = complex(np.sum(b2 * phi.conj()) * lat.cell_area_S / n**2)

    def f(x1):
        return pot.longitudinal(x1) ** 2 * coef

    return f


def transverse_decay_bound(pot: Potential, n2: int, n3: int, n_fine: int = 256) -> float:
    """Right-hand side ``|S|^{1/2} (1+|K|^2)^{-2} ||(1-Lap_l)^2 W^2||_inf``.

    The fourth-order transverse operator is applied spectrally on a fine
    periodic grid, which is exact up to the smoothness of ``b^2``.
    """
    lat = pot.grid.lat
    s = np.arange(n_fine) / n_fine - 0.5
    s2, s3 = np.meshgrid(s * lat.a2_len, s * lat.a3_len, indexing="ij")
    b2 = pot.transverse(s2, s3) ** 2
    f2 = np.fft.fftfreq(n_fine, d=1.0 / n_fine) * lat.b2_len
    f3 = np.fft.fftfreq(n_fine, d=1.0 / n_fine) * lat.b3_len
    sym = (1.0 + f2[:, None] ** 2 + f3[None, :] ** 2) ** 2
    op_b2 = np.fft.ifft2(np.fft.fft2(b2) * sym).real
    sup_w2 = float(np.max(pot.longitudinal(pot.grid.x1)) ** 2)
    if pot.spec.longitudinal != "bump":
        sup_w2 = max(sup_w2, float(pot.longitudinal(0.0)) ** 2)
    K2 = (n2 * lat.b2_len) ** 2 + (n3 * lat.b3_len) ** 2
    return math.sqrt(lat.cell_area_S) / (1.0 + K2) ** 2 * sup_w2 * float(np.max(np.abs(op_b2)))
