"""Discretised Birman-Schwinger operator ``Gamma_k(z) = W R0(k, z) W``.

Representation
--------------
Expanding the transverse dependence in the Bloch modes
``e_K(x_l) = exp(i <k+K, x_l>) / |S|^{1/2}`` turns the free resolvent into a
direct sum of one-dimensional Green functions

    g(t; a) = exp(-a |t|) / (2 a),   a = -i p(k+K, z),  Re a >= 0,

one per dual mode ``K``.  With ``x1`` nodes ``x_i`` (spacing ``h``) and the
transverse Gram matrix ``B`` of the normalised transverse profile, the
Nystrom matrix of ``Gamma`` on the nodes is ``Z G Z^*`` where ``G`` is block
diagonal over channels.  Its nonzero spectrum coincides with that of the
*mixed* matrix

    M = (R (x) D_w) G (R (x) D_w),     R = B^{1/2},  D_w = diag(w_i),

of size ``N1 (2M+1)^2``; this is the matrix stored in :class:`DiscretizedOp`.
Its Frobenius norm equals the quadrature Hilbert-Schmidt norm of the kernel.

Longitudinal quadrature
-----------------------
``rule="trapezoid"`` weights the kernel by ``h g(x_i - x_j)``, which is
second-order accurate because of the kink of ``g`` at ``t = 0``.  The default
``rule="bandlimited"`` replaces ``g`` by its band-limited part

    g_h(t) = (1/2pi) int_{-pi/h}^{pi/h} e^{i xi t} / (xi^2 + a^2) d xi
           = g(t) - T(t),   T(t) = (1/pi) int_{pi/h}^inf cos(xi t)/(xi^2 + a^2) d xi,

the exact Green function for sinc-interpolated data.  The correction ``T`` has
a closed form in terms of the exponential integral.  With this rule the
Nystrom action coincides with the padded-FFT evaluation of the free resolvent
up to the periodisation error, which is what the dual-path check measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import exp1

from .errors import ConfigError, DomainError, NumericalError, SingularSymbolError
from .geometry import KLike, LatticeGeometry, as_k, classify, dispersion_root, dispersion_roots, energy_threshold, mode_indices
from .grid import Grid
from .potential import Potential

RULES = ("bandlimited", "trapezoid")
DENSE_LIMIT = 8000


# ---------------------------------------------------------------------------
# one-dimensional Green functions


def _exp_e1(w: np.ndarray) -> np.ndarray:
    """``exp(w) E1(w)`` without overflow, for ``w`` off the negative real axis."""
    w = np.asarray(w, dtype=complex)
    out = np.empty_like(w)
    small = np.abs(w) <= 30.0
    if np.any(small):
        out[small] = np.exp(w[small]) * exp1(w[small])
    if np.any(~small):
        wl = w[~small]
        # modified Lentz evaluation of e^w E1(w) = 1/(w+1- 1/(w+3- 4/(w+5- ...)))
        f = wl + 1.0
        C = f.copy()
        D = np.zeros_like(f)
        for n in range(1, 200):
            an = -float(n * n)
            bn = wl + (2 * n + 1)
            D = 1.0 / (bn + an * D)
            C = bn + an / C
            delta = C * D
            f = f * delta
            if n % 8 == 0 and np.max(np.abs(delta - 1.0)) < 1e-15:
                break
        out[~small] = 1.0 / f
    return out


def green_1d(t: np.ndarray, a: complex) -> np.ndarray:
    """Free Green function ``exp(-a|t|)/(2a)`` of ``-d^2/dt^2 + a^2``."""
    return np.exp(-a * np.abs(t)) / (2.0 * a)


def _tail_parts(t: np.ndarray, a: complex, Om: float):
    """Return ``D`` and ``dD/da`` with ``T = D/(4 pi i a)`` for ``t > 0``."""
    # the four terms sigma = +-1, c = +-ia evaluated in one batch
    s = np.array([1.0, 1.0, -1.0, -1.0])[:, None]
    c = np.array([1j * a, -1j * a, 1j * a, -1j * a])[:, None]
    sign = np.array([1.0, -1.0, 1.0, -1.0])[:, None]
    ph = np.exp(1j * s * Om * t[None, :])
    F = ph * _exp_e1(-1j * s * t[None, :] * (Om - c))
    D = np.sum(sign * F, axis=0)
    # d/da of sign*F(c(a)) equals i*dF/dc for both signs
    Fc = ph / (Om - c) + 1j * s * t[None, :] * F
    dD = np.sum(1j * Fc, axis=0)
    return D, dD


def bandlimited_tail(t: np.ndarray, a: complex, h: float) -> np.ndarray:
    """``T(t) = (1/pi) int_{pi/h}^inf cos(xi t)/(xi^2+a^2) d xi``."""
    t = np.abs(np.asarray(t, dtype=float))
    Om = math.pi / h
    out = np.empty(t.shape, dtype=complex)
    zero = t == 0.0
    out[zero] = np.arctan(a / Om) / (math.pi * a)
    if np.any(~zero):
        D, _ = _tail_parts(t[~zero], a, Om)
        out[~zero] = D / (4j * math.pi * a)
    return out


def bandlimited_tail_da(t: np.ndarray, a: complex, h: float) -> np.ndarray:
    """Derivative of :func:`bandlimited_tail` with respect to ``a``."""
    t = np.abs(np.asarray(t, dtype=float))
    Om = math.pi / h
    out = np.empty(t.shape, dtype=complex)
    zero = t == 0.0
    out[zero] = (1.0 / (Om * (1.0 + (a / Om) ** 2))) / (math.pi * a) - np.arctan(a / Om) / (math.pi * a**2)
    if np.any(~zero):
        D, dD = _tail_parts(t[~zero], a, Om)
        out[~zero] = -D / (4j * math.pi * a**2) + dD / (4j * math.pi * a)
    return out


def channel_green(t: np.ndarray, a: complex, h: float, rule: str) -> np.ndarray:
    """Green function of one channel under the chosen longitudinal rule."""
    g = green_1d(t, a)
    if rule == "trapezoid":
        return g
    if rule == "bandlimited":
        return g - bandlimited_tail(t, a, h)
    raise ConfigError(f"unknown quadrature rule {rule!r}")


def channel_green_da(t: np.ndarray, a: complex, h: float, rule: str) -> np.ndarray:
    """Derivative of :func:`channel_green` with respect to ``a``."""
    at = a * np.abs(t)
    d = -np.exp(-at) * (at + 1.0) / (2.0 * a**2)
    if rule == "bandlimited":
        d = d - bandlimited_tail_da(t, a, h)
    return d


# ---------------------------------------------------------------------------
# channels


def channel_roots(grid: Grid, k: KLike, E: float, eps: float) -> np.ndarray:
    """Dispersion roots ``p(k+K, E+i eps)`` for every retained mode."""
    kv = as_k(k)
    kK = kv[None, :] + grid.K
    return dispersion_roots(np.sum(kK**2, axis=1), E, eps)


def _toeplitz_index(n: int) -> np.ndarray:
    i = np.arange(n)
    return np.abs(i[:, None] - i[None, :])


def _w2_autocorrelation(w: np.ndarray) -> np.ndarray:
    """``c_n = sum_{|i-j| = n} w_i^2 w_j^2``."""
    w2 = w**2
    full = np.correlate(w2, w2, mode="full")
    n = len(w)
    c = full[n - 1 :].copy()
    c[1:] *= 2.0
    return c


@dataclass
class DiscretizedOp:
    """Mixed-representation matrix of ``Gamma``, ``C``, ``C0`` or ``Lambda P``.

    The matrix is never stored densely unless :meth:`dense` is called.  The
    channel kernels are symmetric Toeplitz matrices ``h g_K(|i - j| h)``
    described by their first rows ``gen[K, n]``.

    Attributes
    ----------
    grid, pot : Grid, Potential
    k : ndarray
        Quasi-momentum.
    E, eps : float
        Spectral parameter ``z = E + i eps``.
    kind : str
        ``Gamma``, ``C``, ``C0``, ``LambdaP``, ``P`` or a derived label.
    gen : ndarray, shape (n_modes, N1)
        First rows of the channel kernel matrices.
    roots : ndarray
        Dispersion roots of every channel.
    rule : str
        Longitudinal quadrature rule.
    """

    grid: Grid
    pot: Potential
    k: np.ndarray
    E: float
    eps: float
    kind: str
    gen: np.ndarray = field(repr=False)
    roots: np.ndarray = field(repr=False)
    rule: str = "bandlimited"
    _mats: np.ndarray | None = field(default=None, repr=False)

    # -- structure -------------------------------------------------------
    @property
    def z(self) -> complex:
        return complex(self.E, self.eps)

    @property
    def shape(self) -> tuple[int, int]:
        n = self.grid.dim
        return (n, n)

    @property
    def is_real(self) -> bool:
        """True when the mixed matrix is real symmetric."""
        return bool(np.all(self.gen.imag == 0.0)) and np.isrealobj(self.pot.gram_sqrt)

    @property
    def is_hermitian(self) -> bool:
        return bool(np.all(self.gen.imag == 0.0))

    def channel_matrices(self) -> np.ndarray:
        if self._mats is None:
            idx = _toeplitz_index(self.grid.N1)
            mats = self.gen[:, idx]
            self._mats = mats.real.copy() if self.is_real else mats
        return self._mats

    # -- algebra ---------------------------------------------------------
    def _like(self, gen: np.ndarray, kind: str) -> "DiscretizedOp":
        return replace(self, gen=gen, kind=kind, _mats=None)

    def adjoint(self) -> "DiscretizedOp":
        return self._like(np.conj(self.gen), f"{self.kind}^H")

    def __sub__(self, other: "DiscretizedOp") -> "DiscretizedOp":
        self._check_compatible(other)
        return self._like(self.gen - other.gen, f"({self.kind})-({other.kind})")

    def __add__(self, other: "DiscretizedOp") -> "DiscretizedOp":
        self._check_compatible(other)
        return self._like(self.gen + other.gen, f"({self.kind})+({other.kind})")

    def scaled(self, c: complex) -> "DiscretizedOp":
        return self._like(c * self.gen, f"{c}*{self.kind}")

    def _check_compatible(self, other: "DiscretizedOp") -> None:
        if other.grid is not self.grid or other.pot is not self.pot or not np.allclose(other.k, self.k):
            raise ConfigError("operators live on different grids, potentials or quasi-momenta")

    # -- application -----------------------------------------------------
    def matvec(self, m: np.ndarray) -> np.ndarray:
        """Apply the mixed matrix to a vector (or a batch of column vectors)."""
        C, N1 = self.grid.n_modes, self.grid.N1
        R = self.pot.gram_sqrt
        w = self.pot.w
        X = np.asarray(m).reshape(C, N1, -1)
        Y = np.einsum("ab,bin->ain", R, X) * w[None, :, None]
        Y = np.matmul(self.channel_matrices(), Y)
        Y = np.einsum("ab,bin->ain", R, Y * w[None, :, None])
        return Y.reshape(m.shape) if np.ndim(m) == 1 else Y.reshape(C * N1, -1)

    def rmatvec(self, m: np.ndarray) -> np.ndarray:
        return self.adjoint().matvec(m)

    def dense(self) -> np.ndarray:
        """Materialise the mixed matrix (guarded by ``DENSE_LIMIT``)."""
        C, N1 = self.grid.n_modes, self.grid.N1
        if self.grid.dim > DENSE_LIMIT:
            raise ConfigError(f"dense matrix of size {self.grid.dim} exceeds the limit {DENSE_LIMIT}")
        R = self.pot.gram_sqrt
        w = self.pot.w
        Gw = self.channel_matrices() * (w[:, None] * w[None, :])[None]
        T3 = np.einsum("ac,cb->abc", R, R)  # T3[a, b, c] = R[a, c] R[c, b]
        out = (T3.reshape(C * C, C) @ Gw.reshape(C, N1 * N1)).reshape(C, C, N1, N1)
        return np.ascontiguousarray(out.transpose(0, 2, 1, 3).reshape(C * N1, C * N1))

    def frobenius(self) -> float:
        """Frobenius norm from the Toeplitz structure, without forming the matrix."""
        c = _w2_autocorrelation(self.pot.w)
        B2 = np.abs(self.pot.gram) ** 2
        G = self.gen
        val = np.einsum("n,an,ab,bn->", c, np.conj(G), B2, G)
        return float(math.sqrt(max(val.real, 0.0)))

    # -- node representation ----------------------------------------------
    def project(self, f: np.ndarray) -> np.ndarray:
        """Transverse coefficients ``c[K, i] = sum_nu omega conj(e_K) f[i, nu]``."""
        E = self.grid.transverse_basis(self.k)
        return (np.asarray(f) @ np.conj(E)).T * self.grid.omega

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        E = self.grid.transverse_basis(self.k)
        return (E @ c).T

    def apply_nodes(self, f: np.ndarray) -> np.ndarray:
        """Nystrom action on a function sampled at the grid nodes, shape (N1, n_l^2)."""
        W = self.pot.samples
        c = self.project(W * f)
        y = np.matmul(self.channel_matrices(), c[:, :, None])[:, :, 0]
        return W * self.synthesize(y)

    def lift(self, m: np.ndarray, lam: complex) -> np.ndarray:
        """Node-space eigenfunction for a mixed-space eigenvector ``m`` with eigenvalue ``lam``.

        The result is normalised in the quadrature L2 norm.
        """
        C, N1 = self.grid.n_modes, self.grid.N1
        y = (self.pot.gram_sqrt @ np.asarray(m).reshape(C, N1)) * self.pot.w[None, :]
        y = np.matmul(self.channel_matrices(), y[:, :, None])[:, :, 0]
        f = self.pot.samples * self.synthesize(y) / (math.sqrt(self.grid.h) * lam)
        nrm = math.sqrt(float(np.sum(self.grid.weights * np.abs(f) ** 2)))
        return f / nrm


def phi_mixed(grid: Grid, pot: Potential) -> np.ndarray:
    """Unit vector representing ``phi_k = W e^{i<k, x_l>}`` in the mixed space."""
    zero = 0  # the zero mode is listed first
    v = math.sqrt(grid.h * grid.lat.cell_area_S) * pot.gram_sqrt[:, zero][:, None] * pot.w[None, :]
    return v.reshape(-1)


# ---------------------------------------------------------------------------
# assembly


def _check_rule(rule: str) -> None:
    if rule not in RULES:
        raise ConfigError(f"unknown quadrature rule {rule!r}; expected one of {RULES}")


def _generators(grid: Grid, roots: np.ndarray, rule: str) -> np.ndarray:
    t = np.arange(grid.N1) * grid.h
    gen = np.empty((len(roots), grid.N1), dtype=complex)
    for c, p in enumerate(roots):
        gen[c] = grid.h * channel_green(t, -1j * p, grid.h, rule)
    if np.all(np.abs(gen.imag) <= 1e-300):
        gen = gen.real + 0j
    return gen


def _real_if_evanescent(gen: np.ndarray, roots: np.ndarray, eps: float) -> np.ndarray:
    # all channels closed and eps = 0: the kernel is real; drop rounding noise
    if eps == 0.0 and np.all(roots.real == 0.0):
        return gen.real + 0j
    return gen


def assemble_gamma(grid: Grid, pot: Potential, k: KLike, E: float, eps: float = 0.0, rule: str = "bandlimited") -> DiscretizedOp:
    """Nystrom discretisation of ``Gamma_k(E + i eps)``.

    Raises
    ------
    SingularDispersionError
        When a channel has ``|k+K|^2 = E`` and ``eps = 0``.
    """
    _check_rule(rule)
    kv = as_k(k)
    roots = channel_roots(grid, kv, E, eps)
    gen = _real_if_evanescent(_generators(grid, roots, rule), roots, eps)
    return DiscretizedOp(grid, pot, kv, float(E), float(eps), "Gamma", gen, roots, rule)


def lambda_value(lat: LatticeGeometry, p: complex) -> complex:
    """``Lambda = i kappa / p`` with ``kappa = 1/(2|S|)``."""
    return 1j * lat.kernel_const / p


def split_gamma(gamma: DiscretizedOp) -> tuple[complex, DiscretizedOp, DiscretizedOp]:
    """Split an assembled ``Gamma`` into ``Lambda``, ``P`` and ``C = Gamma - Lambda P``."""
    grid = gamma.grid
    p0 = gamma.roots[0]
    lam = lambda_value(grid.lat, p0)
    gen_p = np.zeros_like(gamma.gen)
    gen_p[0, :] = grid.h * grid.lat.cell_area_S
    P = gamma._like(gen_p, "P")
    gen_c = gamma.gen.copy()
    # Lambda P has the constant channel-0 kernel i/(2p): remove it
    gen_c[0, :] -= grid.h * 1j / (2.0 * p0)
    if gamma.is_hermitian:
        gen_c = gen_c.real + 0j
    return lam, P, gamma._like(gen_c, "C")


def assemble_decomposition(
    grid: Grid, pot: Potential, k: KLike, E: float, eps: float = 0.0, rule: str = "bandlimited"
) -> tuple[complex, DiscretizedOp, DiscretizedOp]:
    """Split ``Gamma = Lambda P + C`` with ``P`` the projector onto ``phi_k``."""
    return split_gamma(assemble_gamma(grid, pot, k, E, eps, rule))


def assemble_lambda_p(grid: Grid, pot: Potential, k: KLike, E: float, eps: float = 0.0) -> DiscretizedOp:
    lam, P, _ = assemble_decomposition(grid, pot, k, E, eps)
    return P._like(lam * P.gen, "LambdaP")


def assemble_C0(grid: Grid, pot: Potential, k: KLike, E: float, rule: str = "bandlimited") -> DiscretizedOp:
    """Outgoing open-channel part of ``Gamma_k(E)`` for ``k`` in ``B_E^-``."""
    _check_rule(rule)
    kv = as_k(k)
    if classify(kv, E) != "B_E_minus":
        raise DomainError("C0 is defined only for k in B_E^- (|k|^2 < E)")
    roots = channel_roots(grid, kv, E, 0.0)
    gen = np.zeros((grid.n_modes, grid.N1), dtype=complex)
    t = np.arange(grid.N1) * grid.h
    gen[0] = grid.h * channel_green(t, -1j * roots[0], grid.h, rule)
    return DiscretizedOp(grid, pot, kv, float(E), 0.0, "C0", gen, roots, rule)


def gamma_kernel(
    x: np.ndarray, y: np.ndarray, k: KLike, E: float, eps: float, M: int, pot: Potential
) -> complex:
    """Pointwise kernel ``i kappa W(x) W(y) sum_K e^{ip|x1-y1|}/p e^{i<k+K, x_l-y_l>}``.

    ``x`` and ``y`` are points ``(x1, x2, x3)``; the lattice sum runs over
    ``|n_j| <= M``.
    """
    lat = pot.grid.lat
    kv = as_k(k)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    t = abs(x[0] - y[0])
    dxl = x[1:] - y[1:]
    total = 0j
    for n2, n3 in mode_indices(M):
        kK = kv + np.array([n2 * lat.b2_len, n3 * lat.b3_len])
        p = dispersion_root(float(kK @ kK), E, eps).value
        total += np.exp(1j * p * t) / p * np.exp(1j * (kK @ dxl))
    return complex(1j * lat.kernel_const * pot(x[0], x[1], x[2]) * pot(y[0], y[1], y[2]) * total)


# ---------------------------------------------------------------------------
# spectral route


def padded_length(N1: int, h: float, a_re: float, extra: float = 80.0, cap: int = 1 << 22) -> int:
    """FFT length whose periodic images are damped by ``exp(-extra/2)`` or better."""
    from scipy.fft import next_fast_len

    if a_re <= 0:
        raise SingularSymbolError("channel without decay cannot be periodised")
    n = N1 + int(math.ceil(extra / (a_re * h)))
    n = max(n, 2 * N1)
    if n > cap:
        raise SingularSymbolError(f"channel decay rate {a_re:.3e} needs an FFT length above {cap}")
    return next_fast_len(n)


def resolvent_channels(
    c: np.ndarray, grid: Grid, k: KLike, z: complex, extent: int | None = None, modes: np.ndarray | None = None
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Apply ``(xi^2 + |k+K|^2 - z)^{-1}`` channel by channel on padded periodic grids.

    ``c`` holds channel data ``(n_channels, N1)`` on the box nodes for the
    given integer ``modes`` (default: the retained modes of the grid).  Every
    channel is embedded in a zero-padded periodic grid long enough for its
    decay rate.  Returns the result on the box nodes and the full padded
    arrays (box first, padding after).
    """
    kv = as_k(k)
    modes = grid.modes if modes is None else np.asarray(modes, float)
    if c.shape[0] != len(modes):
        raise ConfigError("channel count does not match the modes")
    K = modes * np.array([grid.lat.b2_len, grid.lat.b3_len])
    out = np.empty(c.shape, dtype=complex)
    padded = []
    for j in range(c.shape[0]):
        kK2 = float(np.sum((kv + K[j]) ** 2))
        a = np.sqrt(complex(kK2 - z))  # principal root: Re a >= 0
        if a.real <= 0:
            raise SingularSymbolError(f"symbol xi^2 + {kK2:.6g} - z vanishes on the real line")
        n = padded_length(grid.N1, grid.h, a.real) if extent is None else max(extent, padded_length(grid.N1, grid.h, a.real))
        xi = 2.0 * math.pi * np.fft.fftfreq(n, d=grid.h)
        sym = xi**2 + kK2 - z
        if np.min(np.abs(sym)) < 1e-12:
            raise SingularSymbolError("near-singular symbol")
        buf = np.zeros(n, dtype=complex)
        buf[: grid.N1] = c[j]
        u = np.fft.ifft(np.fft.fft(buf) / sym)
        out[j] = u[: grid.N1]
        padded.append(u)
    return out, padded


def apply_gamma_spectral(state: np.ndarray, grid: Grid, pot: Potential, k: KLike, z: complex) -> np.ndarray:
    """Matrix-free ``W R0(k, z) W`` on node samples via FFT symbol division."""
    kv = as_k(k)
    Eb = grid.transverse_basis(kv)
    W = pot.samples
    c = ((W * state) @ np.conj(Eb)).T * grid.omega
    u, _ = resolvent_channels(c, grid, kv, complex(z))
    return W * (Eb @ u).T


# ---------------------------------------------------------------------------
# norms, bounds and rates


def hs_norm(op: DiscretizedOp) -> float:
    """Hilbert-Schmidt (Frobenius) norm of the discretised operator."""
    return op.frobenius()


def alpha_mu(lat: LatticeGeometry, delta: float, mu: float, n_max: int = 400) -> float:
    """Bound ``sum_{K != 0} m_K^{-mu}`` using the explicit lower bound ``m_K <= p_I(k+K, E)``.

    ``m_K^2 = (1+delta) E_delta sum_{n_j != 0} (2|n_j| - 1)^2 - E_delta`` holds
    uniformly in ``k`` and in ``E < E_delta``.
    """
    if mu <= 2:
        raise DomainError("alpha_mu needs mu > 2")
    Ed = energy_threshold(lat, delta)
    n = np.arange(-n_max, n_max + 1)
    s = (2 * np.abs(n) - 1.0) ** 2
    s[n == 0] = 0.0
    tot = s[:, None] + s[None, :]
    m2 = (1 + delta) * Ed * tot - Ed
    mask = tot > 0
    if np.any(m2[mask] <= 0):
        return math.inf
    val = float(np.sum(m2[mask] ** (-mu / 2)))
    # remaining rings max|n_j| > n_max: m_K^2 >= |b|_min^2 m^2 / 2, 8m modes per ring
    c = lat.b_min**2 / 2.0
    return val + 8.0 * c ** (-mu / 2) * n_max ** (2 - mu) / (mu - 2)


def bound_c(pot: Potential, delta: float) -> float:
    """Hilbert-Schmidt bound on ``C_k(E + i eps)`` uniform in ``k``, ``eps`` and ``E < E_delta``.

    Sum of the bounds for the zero-mode remainder, ``2 kappa ||W||_{H_1}``,
    and for the closed channels,
    ``kappa |S| ||W||_{L2(L_inf)} ||W||_inf alpha_3(delta)^{1/2}``.
    """
    lat = pot.grid.lat
    kappa = lat.kernel_const
    c1 = 2.0 * kappa * pot.weighted_norm(1.0)
    c2 = kappa * lat.cell_area_S * pot.l2_linf_norm() * pot.sup_norm() * math.sqrt(alpha_mu(lat, delta, 3.0))
    return c1 + c2


def loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.any(y <= 0):
        return math.nan
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class RateTable:
    """Measured distances to the limits along a decreasing ``eps`` sequence."""

    region: str
    eps: np.ndarray
    rows: dict[str, np.ndarray]
    slopes: dict[str, float]


def limit_rates(grid: Grid, pot: Potential, k: KLike, E: float, eps_sequence, rule: str = "bandlimited") -> RateTable:
    """Hilbert-Schmidt distances of ``Gamma(E +- i eps)`` to their limits.

    For ``k`` in ``B_E^+`` the rows are ``plus`` and ``minus`` (distance to
    ``Gamma(E)``).  For ``k`` in ``B_E^-`` the rows are

    ``plus``
        ``||Gamma(E+i eps) - Gamma(E)||``;
    ``C0_plus``
        ``||C0(E+i eps) - C0(E)||``, the open-channel part of the same difference;
    ``minus_stated``
        ``||Gamma(E-i eps) - (Gamma(E) - 2 C0(E))||``;
    ``minus_incoming``
        ``||Gamma(E-i eps) - (Gamma(E) - C0(E) + C0(E)^*)||``, the distance to
        the incoming boundary value.
    """
    eps_arr = np.asarray(list(eps_sequence), dtype=float)
    if eps_arr.size < 2 or np.any(eps_arr <= 0) or np.any(np.diff(eps_arr) >= 0):
        raise ConfigError("eps_sequence must be positive and strictly decreasing")
    kv = as_k(k)
    region = classify(kv, E)
    if region == "boundary":
        raise DomainError("limit rates are not defined on |k|^2 = E")
    g0 = assemble_gamma(grid, pot, kv, E, 0.0, rule)
    rows: dict[str, list[float]] = {}
    if region == "B_E_plus":
        for e in eps_arr:
            rows.setdefault("plus", []).append(hs_norm(assemble_gamma(grid, pot, kv, E, e, rule) - g0))
            rows.setdefault("minus", []).append(hs_norm(assemble_gamma(grid, pot, kv, E, -e, rule) - g0))
    else:
        c0 = assemble_C0(grid, pot, kv, E, rule)
        stated = g0 - c0.scaled(2.0)
        incoming = (g0 - c0) + c0.adjoint()
        for e in eps_arr:
            gp = assemble_gamma(grid, pot, kv, E, e, rule)
            gm = assemble_gamma(grid, pot, kv, E, -e, rule)
            rows.setdefault("plus", []).append(hs_norm(gp - g0))
            c0p = gp._like(np.where(np.arange(grid.n_modes)[:, None] == 0, gp.gen, 0.0), "C0(E+ieps)")
            rows.setdefault("C0_plus", []).append(hs_norm(c0p - c0))
            rows.setdefault("minus_stated", []).append(hs_norm(gm - stated))
            rows.setdefault("minus_incoming", []).append(hs_norm(gm - incoming))
    table = {key: np.array(v) for key, v in rows.items()}
    slopes = {key: loglog_slope(eps_arr, v) for key, v in table.items()}
    return RateTable(region, eps_arr, table, slopes)


def estimate_c(
    grid: Grid,
    pot: Potential,
    E: float,
    radii=None,
    eps_values=(0.0, 0.01, -0.01),
    n_angles: int = 3,
    rule: str = "bandlimited",
) -> float:
    """Largest measured ``||C_k(E + i eps)||_HS`` over a sample of ``k``.

    By default the sample covers radii ``(0, .15, .3, .32, .33, .4, .5, .6, .7)``
    times the shortest dual period, ``n_angles`` directions in the first
    quadrant and ``eps`` in ``{0, +-0.01}``.
    """
    if radii is None:
        radii = [f * grid.lat.b_min for f in (0.0, 0.15, 0.3, 0.32, 0.33, 0.4, 0.5, 0.6, 0.7)]
    worst = 0.0
    for r in radii:
        for j in range(n_angles if r > 0 else 1):
            th = (math.pi / 2) * j / n_angles
            kv = np.array([r * math.cos(th), r * math.sin(th)])
            for e in eps_values:
                if e == 0.0 and abs(r * r - E) < 1e-12:
                    continue
                _, _, C = assemble_decomposition(grid, pot, kv, E, e, rule)
                worst = max(worst, hs_norm(C))
    if not worst > 0:
        raise NumericalError("could not measure the remainder norm")
    return worst
