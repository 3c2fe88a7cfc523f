"""Generalized Fourier transform and limiting absorption for the free operator.

States are node samples ``u[i, nu]`` on the grid (longitudinal node ``i``,
transverse node ``nu``).  The transverse nodes resolve exactly the
``n_l**2`` modes returned by :meth:`Grid.full_modes`, so projecting onto the
Bloch waves ``exp(i <k+K, x_l>)/|S|^{1/2}`` is a unitary change of basis.  The
longitudinal transform is a DFT scaled by ``(2 pi)^{-1/2} h`` which makes the
discrete Parseval identity exact.

The free resolvent ``R0(k, z)`` acts channel by channel.  Two independent
evaluations are available:

* ``"fft"``: division by ``xi^2 + |k+K|^2 - z`` on a zero-padded periodic
  grid (requires a decaying channel);
* ``"kernel"``: convolution with the band-limited one-dimensional Green
  function, as in the Birman-Schwinger assembly.  This route also handles the
  boundary values ``E +- i0`` (outgoing or incoming kernel on open channels)
  and the threshold ``|k|^2 = E`` on the hyperplane of states whose zero-mode
  transform vanishes at ``xi = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.integrate import quad
from scipy.linalg import matmul_toeplitz
from scipy.special import sici

from .bsop import channel_green, loglog_slope, padded_length, resolvent_channels
from .errors import DomainError, HypothesisViolation, SingularSymbolError
from .geometry import BOUNDARY_TOL, KLike, as_k, classify
from .grid import Grid

SIGMA_MAX = 6.0
HYPERPLANE_TOL = 1e-10


@dataclass(frozen=True)
class BoundaryValue:
    """Spectral parameter ``E + i0`` (``sign=+1``) or ``E - i0`` (``sign=-1``)."""

    E: float
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise DomainError("boundary value sign must be +1 or -1")


ZLike = Union[complex, float, BoundaryValue]


# ---------------------------------------------------------------------------
# transverse projection and the generalized Fourier transform


def _basis(grid: Grid, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    modes = grid.full_modes().astype(float)
    return modes, grid.transverse_basis(k, modes)


def to_channels(u: np.ndarray, grid: Grid, k: KLike) -> tuple[np.ndarray, np.ndarray]:
    """Channel profiles ``u_K(x_i)`` for all resolved modes, shape ``(n_l**2, N1)``."""
    kv = as_k(k)
    modes, Eb = _basis(grid, kv)
    return modes, ((np.asarray(u) @ np.conj(Eb)) * grid.omega).T


def from_channels(c: np.ndarray, grid: Grid, k: KLike) -> np.ndarray:
    """Inverse of :func:`to_channels`."""
    _, Eb = _basis(grid, as_k(k))
    return c.T @ Eb.T


@dataclass
class GFTCoefficients:
    """Samples of ``u~(xi_m, k+K)`` for every resolved mode ``K``.

    ``values[j, m]`` belongs to mode ``modes[j]`` and frequency ``xi[m]``; the
    frequencies are in DFT order with spacing ``pi/L``.
    """

    k: np.ndarray
    modes: np.ndarray
    xi: np.ndarray
    values: np.ndarray
    x0: float
    h: float

    @property
    def dxi(self) -> float:
        return abs(self.xi[1] - self.xi[0])

    def norm(self) -> float:
        """``(sum_K int |u~|^2 d xi)^{1/2}`` by the rectangle rule on the DFT frequencies."""
        return math.sqrt(float(np.sum(np.abs(self.values) ** 2)) * self.dxi)


def _xi(grid: Grid) -> np.ndarray:
    return 2.0 * math.pi * np.fft.fftfreq(grid.N1, d=grid.h)


def gft(u: np.ndarray, grid: Grid, k: KLike) -> GFTCoefficients:
    """Generalized Fourier coefficients of the node samples ``u``."""
    kv = as_k(k)
    modes, c = to_channels(u, grid, kv)
    xi = _xi(grid)
    x0 = float(grid.x1[0])
    vals = np.fft.fft(c, axis=1) * np.exp(-1j * xi * x0)[None, :] * (grid.h / math.sqrt(2 * math.pi))
    return GFTCoefficients(kv, modes, xi, vals, x0, grid.h)


def igft(coef: GFTCoefficients, grid: Grid) -> np.ndarray:
    """Node samples reconstructed from :func:`gft` output."""
    c = np.fft.ifft(coef.values * np.exp(1j * coef.xi * coef.x0)[None, :] * (math.sqrt(2 * math.pi) / grid.h), axis=1)
    return from_channels(c, grid, coef.k)


def gft_at(u: np.ndarray, grid: Grid, k: KLike, mode: Sequence[int], xi: np.ndarray) -> np.ndarray:
    """``u~(xi, k+K)`` at arbitrary frequencies for the single mode ``K`` (integer pair)."""
    kv = as_k(k)
    m = np.asarray(mode, dtype=float).reshape(1, 2)
    e = grid.transverse_basis(kv, m)[:, 0]
    prof = (np.asarray(u) @ np.conj(e)) * grid.omega
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    ph = np.exp(-1j * np.outer(xi, grid.x1))
    return (ph @ prof) * (grid.h / math.sqrt(2 * math.pi))


def state_norm(u: np.ndarray, grid: Grid) -> float:
    """Quadrature norm of node samples."""
    return math.sqrt(float(np.sum(grid.weights * np.abs(u) ** 2)))


def weighted_norm(u: np.ndarray, grid: Grid, sigma: float) -> float:
    """``||(1 + x1^2)^{sigma/2} u||`` by box quadrature; ``sigma`` may be negative."""
    if sigma > SIGMA_MAX:
        raise DomainError(f"weight exponent {sigma} exceeds the cap {SIGMA_MAX}")
    wt = (1.0 + grid.x1**2) ** (sigma / 2.0)
    return state_norm(wt[:, None] * u, grid)


def hyperplane_defect(f: np.ndarray, grid: Grid, k: KLike) -> tuple[complex, float]:
    """``u~(0, k)`` and the same quantity relative to ``(2pi)^{-1/2} int |f_0|``."""
    v = complex(gft_at(f, grid, k, (0, 0), np.array([0.0]))[0])
    _, c = to_channels(f, grid, k)
    j0 = int(np.argmin(np.sum(np.abs(grid.full_modes()), axis=1)))
    scale = grid.h * float(np.sum(np.abs(c[j0]))) / math.sqrt(2 * math.pi)
    return v, abs(v) / scale if scale > 0 else 0.0


def project_hyperplane(f: np.ndarray, grid: Grid, k: KLike, width: float = 2.0) -> np.ndarray:
    """Remove ``u~(0, k)`` from ``f`` by subtracting a multiple of a Gaussian zero-mode profile."""
    kv = as_k(k)
    e0 = grid.transverse_basis(kv, np.zeros((1, 2)))[:, 0]
    rho = np.exp(-0.5 * (grid.x1 / width) ** 2)[:, None] * e0[None, :]
    a = gft_at(f, grid, kv, (0, 0), np.array([0.0]))[0]
    b = gft_at(rho, grid, kv, (0, 0), np.array([0.0]))[0]
    return f - (a / b) * rho


# ---------------------------------------------------------------------------
# the free resolvent


def _threshold_kernel(t: np.ndarray, h: float) -> np.ndarray:
    """Band-limited ``-|t|/2`` (the ``a -> 0`` kernel with its constant removed)."""
    t = np.abs(np.asarray(t, dtype=float))
    Om = math.pi / h
    si, _ = sici(Om * t)
    tail = (np.cos(Om * t) / Om - t * (math.pi / 2 - si)) / math.pi
    return -0.5 * t - tail


def _channel_a(kK2: float, z: ZLike) -> complex:
    """Decay parameter ``a`` with ``g = exp(-a|t|)/(2a)`` for the given spectral parameter."""
    if isinstance(z, BoundaryValue):
        d = kK2 - z.E
        if abs(d) < BOUNDARY_TOL:
            return 0j
        if d > 0:
            return complex(math.sqrt(d))
        return -1j * z.sign * math.sqrt(-d)
    a = np.sqrt(complex(kK2 - complex(z)))
    if a.real <= 0:
        raise SingularSymbolError(f"symbol xi^2 + {kK2:.6g} - z vanishes on the real line")
    return complex(a)


def _kernel_apply(c: np.ndarray, a: complex, h: float, pad: int = 0) -> np.ndarray:
    """``h sum_j g_h(x_m - x_j) c_j`` on the box extended by ``pad`` nodes on each side."""
    n = len(c)
    col_t = (np.arange(n + 2 * pad) - pad) * h
    row_t = (np.arange(n) + pad) * h
    if a == 0:
        col, row = _threshold_kernel(col_t, h), _threshold_kernel(row_t, h)
    else:
        col, row = channel_green(col_t, a, h, "bandlimited"), channel_green(row_t, a, h, "bandlimited")
    return h * matmul_toeplitz((col.astype(complex), row.astype(complex)), c.astype(complex), check_finite=False)


def _check_threshold(f: np.ndarray, grid: Grid, k: np.ndarray) -> None:
    v, rel = hyperplane_defect(f, grid, k)
    if rel > HYPERPLANE_TOL:
        raise HypothesisViolation(
            f"|k|^2 = E needs a state with vanishing zero-mode transform at xi = 0; got |u~(0,k)| = {abs(v):.3e}"
        )


def apply_R0(f: np.ndarray, grid: Grid, k: KLike, z: ZLike, method: str = "auto") -> np.ndarray:
    """Free resolvent ``R0(k, z) f`` on the box nodes.

    Parameters
    ----------
    f : ndarray, shape (N1, n_l**2)
        Node samples, taken to vanish outside the box.
    z : complex or BoundaryValue
        A spectral parameter off the spectrum of every channel, or ``E +- i0``.
    method : {"auto", "fft", "kernel"}
        ``"fft"`` divides by the symbol on padded grids; ``"kernel"`` convolves
        with the band-limited Green function.  ``"auto"`` uses the FFT for
        decaying channels and the kernel for open or threshold channels.

    Raises
    ------
    SingularSymbolError
        A finite real ``z`` inside the spectrum of some channel.
    HypothesisViolation
        ``|k|^2 = E`` with a state off the hyperplane ``u~(0, k) = 0``.
    """
    if method not in ("auto", "fft", "kernel"):
        raise DomainError(f"unknown resolvent method {method!r}")
    kv = as_k(k)
    modes, c = to_channels(f, grid, kv)
    K = modes * np.array([grid.lat.b2_len, grid.lat.b3_len])
    kK2 = np.sum((kv + K) ** 2, axis=1)
    a = np.array([_channel_a(float(q), z) for q in kK2])
    if np.any(a == 0):
        _check_threshold(f, grid, kv)
    out = np.empty_like(c, dtype=complex)
    fft_ch = np.flatnonzero(a.real > 0) if method != "kernel" else np.array([], dtype=int)
    if method == "fft" and len(fft_ch) < len(a):
        raise SingularSymbolError("the FFT route needs every channel to decay")
    if len(fft_ch):
        zc = complex(z.E) if isinstance(z, BoundaryValue) else complex(z)
        out[fft_ch], _ = resolvent_channels(c[fft_ch], grid, kv, zc, modes=modes[fft_ch])
    for j in np.setdiff1d(np.arange(len(a)), fft_ch):
        out[j] = _kernel_apply(c[j], a[j], grid.h)
    return from_channels(out, grid, kv)


def resolvent_identity_defect(f: np.ndarray, grid: Grid, k: KLike, z: complex, extra: float = 320.0) -> float:
    """Relative defect of ``(H0(k) - z) R0(k, z) f = f``.

    ``R0 f`` is evaluated with the band-limited Green kernel on an extended
    grid, then ``H0 - z`` is applied as the Fourier symbol
    ``xi^2 + |k+K|^2 - z``.  The two routes share no code, so agreement tests
    both.  The sampled band-limited kernel has an algebraic ``(-1)^n/n^2``
    tail whose truncation is amplified by ``xi^2`` near the Nyquist
    frequency, hence the generous extension ``extra`` (in decay lengths).
    For states with a sizeable spectrum near ``pi/h`` the defect is limited
    by this truncation rather than by the resolvent itself.
    """
    kv = as_k(k)
    modes, c = to_channels(f, grid, kv)
    K = modes * np.array([grid.lat.b2_len, grid.lat.b3_len])
    num = 0.0
    for j in range(len(modes)):
        kK2 = float(np.sum((kv + K[j]) ** 2))
        a = _channel_a(kK2, complex(z))
        n = padded_length(grid.N1, grid.h, a.real, extra=extra)
        pad = (n - grid.N1 + 1) // 2
        u = _kernel_apply(c[j], a, grid.h, pad)
        m = len(u)
        xi = 2.0 * math.pi * np.fft.fftfreq(m, d=grid.h)
        back = np.fft.ifft(np.fft.fft(u) * (xi**2 + kK2 - complex(z)))
        ref = np.zeros(m, dtype=complex)
        ref[pad : pad + grid.N1] = c[j]
        num += float(np.sum(np.abs(back - ref) ** 2))
    den = float(np.sum(np.abs(c) ** 2))
    return math.sqrt(num / den) if den > 0 else 0.0


def branch_difference(f: np.ndarray, grid: Grid, k: KLike, E: float) -> dict:
    """Channel content of ``R0(E+i0) f - R0(E-i0) f``.

    Returns the integer modes, their ``|k+K|^2 - E`` and the relative norm of
    the difference in every channel.
    """
    kv = as_k(k)
    d = apply_R0(f, grid, kv, BoundaryValue(E, 1)) - apply_R0(f, grid, kv, BoundaryValue(E, -1))
    modes, c = to_channels(d, grid, kv)
    K = modes * np.array([grid.lat.b2_len, grid.lat.b3_len])
    per = np.sqrt(grid.h * np.sum(np.abs(c) ** 2, axis=1))
    tot = state_norm(d, grid)
    return {
        "modes": modes.astype(int),
        "gap": np.sum((kv + K) ** 2, axis=1) - E,
        "channel_norms": per,
        "total": tot,
        "open_fraction": float(np.sqrt(np.sum(per[np.sum((kv + K) ** 2, axis=1) < E] ** 2)) / tot) if tot > 0 else 0.0,
    }


# ---------------------------------------------------------------------------
# limiting absorption


@dataclass
class LapTable:
    """Convergence of ``R0(E +- i eps) f`` toward the boundary value."""

    region: str
    sign: int
    sigma: float
    eps: list
    differences: list
    slope: float
    pairings: list
    pairing_bound: float

    @property
    def decreasing(self) -> bool:
        d = self.differences
        return all(d[i + 1] < d[i] for i in range(len(d) - 1))

    @property
    def pairings_bounded(self) -> bool:
        return all(p <= self.pairing_bound * (1 + 1e-12) for p in self.pairings)


def lap_convergence(
    grid: Grid,
    k: KLike,
    E: float,
    f: np.ndarray,
    eps_sequence: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
    sigma: float = 2.0,
    sign: int = 1,
    probe: np.ndarray | None = None,
) -> LapTable:
    """Distance between ``R0(E +- i eps) f`` and ``R0(E +- i0) f`` as ``eps`` decreases.

    The distance is the plain norm for ``k`` in ``B_E^+`` and the
    ``H_{-sigma}`` norm otherwise.  Alongside, the pairing
    ``|<eps R0(E +- i eps) f, v>|`` with a fixed probe ``v`` is recorded
    together with its bound ``||f|| ||v||``.

    Raises
    ------
    DomainError
        ``sigma <= 1/2`` in ``B_E^-`` or ``sigma <= 1`` at the threshold.
    HypothesisViolation
        Threshold ``|k|^2 = E`` and ``u~(0, k) != 0``.
    """
    kv = as_k(k)
    region = classify(kv, E)
    if region == "B_E_minus" and sigma <= 0.5:
        raise DomainError("limiting absorption in B_E^- needs sigma > 1/2")
    if region == "boundary":
        if sigma <= 1.0:
            raise DomainError("limiting absorption at |k|^2 = E needs sigma > 1")
        _check_threshold(f, grid, kv)
    if probe is None:
        probe = np.exp(-0.5 * grid.x1**2)[:, None] * np.ones((1, grid.n_l**2))
    u0 = apply_R0(f, grid, kv, BoundaryValue(E, sign), method="kernel")
    tau = 0.0 if region == "B_E_plus" else -sigma
    diffs, pairs = [], []
    for eps in eps_sequence:
        u = apply_R0(f, grid, kv, complex(E, sign * eps), method="kernel")
        diffs.append(weighted_norm(u - u0, grid, tau))
        pairs.append(abs(complex(np.sum(grid.weights * eps * u * np.conj(probe)))))
    bound = state_norm(f, grid) * state_norm(probe, grid)
    return LapTable(region, sign, sigma, list(eps_sequence), diffs, loglog_slope(eps_sequence, diffs), pairs, bound)


# ---------------------------------------------------------------------------
# Hoelder estimates of the transform


def _weight_integral(p: float) -> float:
    """``int_R (1 + x^2)^(-p) dx`` by adaptive quadrature."""
    val, _ = quad(lambda x: (1.0 + x * x) ** (-p), 0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)
    return 2.0 * val


def c_sigma(sigma: float) -> float:
    """Uniform bound ``|u~| <= c_sigma ||u||_{H_sigma}``, valid for ``sigma > 1/2``."""
    if sigma <= 0.5:
        raise DomainError("the uniform bound needs sigma > 1/2")
    return math.sqrt(_weight_integral(sigma) / (2 * math.pi))


def c_sigma_alpha(sigma: float, alpha: float) -> float:
    """Hoelder constant ``2^{1-alpha} (2pi)^{-1/2} (int (1+x^2)^{alpha-sigma})^{1/2}``."""
    _check_alpha(sigma, alpha)
    return 2.0 ** (1.0 - alpha) * math.sqrt(_weight_integral(sigma - alpha) / (2 * math.pi))


def _check_alpha(sigma: float, alpha: float) -> None:
    if not (0.0 <= alpha <= 1.0 and alpha < sigma - 0.5):
        raise DomainError(f"Hoelder exponent {alpha} must lie in [0, 1] and below sigma - 1/2 = {sigma - 0.5}")


@dataclass
class HolderReport:
    sigma: float
    alpha: float
    ratio: float
    constant: float

    @property
    def holds(self) -> bool:
        return bool(np.isfinite(self.ratio) and self.ratio <= self.constant)


def holder_estimate(
    u: np.ndarray,
    grid: Grid,
    k: KLike,
    sigma: float,
    alpha: float,
    mode: Sequence[int] = (0, 0),
    xi_pairs: np.ndarray | None = None,
    n_pairs: int = 400,
    seed: int = 0,
) -> HolderReport:
    """Largest ``|u~(xi) - u~(xi')| / (|xi - xi'|^alpha ||u||_{H_sigma})`` over sampled pairs.

    For ``alpha = 0`` the ratio is ``max |u~(xi)| / ||u||_{H_sigma}`` and is
    compared with the uniform constant ``c_sigma``; otherwise it is compared
    with ``c_{sigma, alpha}``.  Pairs default to a seeded random sample of
    frequencies in ``[-pi/h, pi/h]`` with separations over several scales.
    """
    _check_alpha(sigma, alpha)
    nrm = weighted_norm(u, grid, sigma)
    Om = math.pi / grid.h
    if xi_pairs is None:
        rng = np.random.default_rng(seed)
        x = rng.uniform(-Om, Om, n_pairs)
        d = 10.0 ** rng.uniform(-4, 0.5, n_pairs) * rng.choice([-1.0, 1.0], n_pairs)
        xi_pairs = np.column_stack([x, x + d])
    xi_pairs = np.asarray(xi_pairs, dtype=float)
    if alpha == 0.0:
        vals = gft_at(u, grid, k, mode, xi_pairs.ravel())
        return HolderReport(sigma, alpha, float(np.max(np.abs(vals))) / nrm, c_sigma(sigma))
    a = gft_at(u, grid, k, mode, xi_pairs[:, 0])
    b = gft_at(u, grid, k, mode, xi_pairs[:, 1])
    gap = np.abs(xi_pairs[:, 0] - xi_pairs[:, 1])
    keep = gap > 0
    ratio = np.abs(a - b)[keep] / (gap[keep] ** alpha * nrm)
    return HolderReport(sigma, alpha, float(np.max(ratio)), c_sigma_alpha(sigma, alpha))


# ---------------------------------------------------------------------------
# weighted second-order norm of R0 f


def h2_weighted_norm_of_resolvent(f: np.ndarray, grid: Grid, k: KLike, z: complex, sigma: float) -> float:
    """``||(1 + x1^2)^{sigma/2} R0(k, z) f||_{H^2}`` with the ``H^2`` norm taken on the symbol side.

    ``R0 f`` is computed on padded periodic grids so that its tails outside
    the box are kept; the weighted profile is transformed back and measured
    with the multiplier ``1 + xi^2 + |k+K|^2``.
    """
    kv = as_k(k)
    modes, c = to_channels(f, grid, kv)
    K = modes * np.array([grid.lat.b2_len, grid.lat.b3_len])
    _, padded = resolvent_channels(c, grid, kv, complex(z), modes=modes)
    total = 0.0
    for j, u in enumerate(padded):
        n = len(u)
        idx = np.arange(n)
        x = -grid.L + (idx + 0.5) * grid.h
        half = grid.N1 + (n - grid.N1) // 2
        x = np.where(idx < half, x, x - n * grid.h)
        wu = (1.0 + x**2) ** (sigma / 2.0) * u
        xi = 2.0 * math.pi * np.fft.fftfreq(n, d=grid.h)
        mult = 1.0 + xi**2 + float(np.sum((kv + K[j]) ** 2))
        spec = np.fft.fft(wu) * mult
        total += grid.h * float(np.sum(np.abs(spec) ** 2)) / n
    return math.sqrt(total)


@dataclass
class NormEquivalence:
    """Ratios ``||R0 f||_{H^{2,sigma}} / ||f||_{H_sigma}`` over a batch, per ``z``."""

    z: list
    lower: list
    upper: list

    @property
    def spread(self) -> float:
        """Largest ``max/min`` of the per-``z`` ratios."""
        return float(max(u / l for u, l in zip(self.upper, self.lower)))

    @property
    def stability(self) -> float:
        """Relative variation of the lower and upper ratios across ``z``."""
        lo, up = np.array(self.lower), np.array(self.upper)
        return float(max(lo.max() / lo.min(), up.max() / up.min()) - 1.0)


def white_noise_batch(grid: Grid, n: int, seed: int) -> list[np.ndarray]:
    """Seeded complex white-noise states on the grid."""
    rng = np.random.default_rng(seed)
    shape = (grid.N1, grid.n_l**2)
    return [rng.standard_normal(shape) + 1j * rng.standard_normal(shape) for _ in range(n)]


def weighted_norm_equiv(
    grid: Grid,
    k: KLike,
    z_values: Sequence[complex],
    fs: Sequence[np.ndarray],
    sigma: float = 2.0,
) -> NormEquivalence:
    """Batch ratios for the two-sided bound of ``R0(k, z)`` from ``H_sigma`` into ``H^{2,sigma}``.

    Raises
    ------
    DomainError
        Some ``z`` violates ``|Re z| < |k|^2`` or ``|Im z| <= 1``, or a state is zero.
    """
    kv = as_k(k)
    k2 = float(kv @ kv)
    for z in z_values:
        if not (abs(complex(z).real) < k2 and abs(complex(z).imag) <= 1.0):
            raise DomainError(f"z = {z} must satisfy |Re z| < |k|^2 = {k2:.6g} and |Im z| <= 1")
    norms = [weighted_norm(f, grid, sigma) for f in fs]
    if not fs or min(norms) == 0.0:
        raise DomainError("the batch must contain nonzero states")
    lower, upper = [], []
    for z in z_values:
        r = [h2_weighted_norm_of_resolvent(f, grid, kv, complex(z), sigma) / nf for f, nf in zip(fs, norms)]
        lower.append(min(r))
        upper.append(max(r))
    return NormEquivalence([complex(z) for z in z_values], lower, upper)
