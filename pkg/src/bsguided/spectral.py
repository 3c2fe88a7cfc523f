"""Leading eigenpairs of ``Gamma``, disk separation, inverse bounds and gradients.

The regime is fixed by a parameter ``s > s0 = 3 + sqrt(5)`` and a coupling
``0 < g < 1/(s c)``, where ``c`` bounds the remainder ``C`` of the rank-one
splitting ``Gamma = Lambda P + C``.  The quasi-momenta whose zero-mode decay
rate lies between ``q_- g`` and ``q_+ g`` form the annulus around
``|k| = sqrt(E)`` where ``g lambda_1 = 1`` can happen; outside it
``1 - g Gamma`` is boundedly invertible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigs, eigsh

from .bsop import DiscretizedOp, assemble_gamma, channel_green_da, hs_norm, phi_mixed, split_gamma
from .errors import ConfigError, DomainError, IllConditionedError, NumericalError, RegimeViolation
from .geometry import KLike, as_k, classify, dispersion_root
from .grid import Grid
from .potential import Potential

S0 = 3.0 + math.sqrt(5.0)
DENSE_EIG_LIMIT = 600
DEGENERATE_GAP = 1e-8


# ---------------------------------------------------------------------------
# regime constants


def q_minus(s: float, kappa: float) -> float:
    """Lower decay-rate coefficient ``(s-1)/s * kappa``."""
    return (s - 1.0) / s * kappa


def q_plus(s: float, kappa: float) -> float:
    """Upper decay-rate coefficient ``(s-1)/(s-2) * kappa``."""
    return (s - 1.0) / (s - 2.0) * kappa


def inverse_norm_threshold(s: float) -> float:
    """Bound ``2 s (s-1)`` on ``||(1 - g Gamma)^{-1}||`` outside the annulus."""
    return 2.0 * s * (s - 1.0)


def separation_radius(s: float, c: float) -> float:
    """Lower bound ``s(s-2)/(s-1) * c`` on ``|Lambda|`` inside the annulus."""
    return s * (s - 2.0) / (s - 1.0) * c


def sign_margin(s: float) -> float:
    """Margin ``1/(s(s-1))`` in the sign bracket of ``g lambda_1 - 1``."""
    return 1.0 / (s * (s - 1.0))


def overlap_threshold(s: float) -> float:
    """Lower bound ``(1 - 4(s-1)/(s(s-2)))^{1/2}`` on ``|<phi_k, psi_1>|``."""
    return math.sqrt(1.0 - 4.0 * (s - 1.0) / (s * (s - 2.0)))


def check_regime(s: float, g: float, c: float) -> None:
    """Check ``s > s0``, ``c > 0`` and ``0 < g < 1/(s c)``.

    Raises
    ------
    ConfigError
        For ``s <= s0``, ``c <= 0`` or ``g <= 0``.
    RegimeViolation
        For a coupling at or above ``1/(s c)``.
    """
    if not s > S0:
        raise ConfigError(f"s = {s} must exceed s0 = 3 + sqrt(5) = {S0:.6f}")
    if not c > 0:
        raise ConfigError(f"remainder bound c must be positive, got {c}")
    if not g > 0:
        raise ConfigError(f"coupling g must be positive, got {g}")
    if not g < 1.0 / (s * c):
        raise RegimeViolation(f"coupling g = {g} must lie below 1/(s c) = {1.0 / (s * c):.6g}")


# ---------------------------------------------------------------------------
# eigenpairs


@dataclass
class EigenPair:
    """Leading eigenpair of a discretised operator.

    Attributes
    ----------
    lambda1 : complex
        Eigenvalue of largest modulus.
    psi1 : ndarray, shape (N1, n_l**2)
        Eigenfunction on the grid nodes, unit quadrature norm, phase chosen so
        that its overlap with ``phi_k`` is real and nonnegative.
    vec : ndarray
        Unit eigenvector in the mixed representation (same phase convention).
    gap : float
        ``|lambda_1| - |lambda_2|``.
    in_disk : bool or None
        Whether ``lambda_1`` lies in the closed disk of radius ``c`` around
        ``Lambda``; ``None`` when the operator is not a full ``Gamma``.
    eigenvalues : ndarray
        Computed eigenvalues sorted by decreasing modulus.
    residual : float
        ``||M v - lambda_1 v||`` for the mixed matrix ``M``.
    """

    lambda1: complex
    psi1: np.ndarray
    vec: np.ndarray
    gap: float
    in_disk: bool | None
    eigenvalues: np.ndarray
    residual: float
    Lambda: complex | None = None
    c_measured: float | None = None

    @property
    def lambda2(self) -> complex:
        return complex(self.eigenvalues[1]) if len(self.eigenvalues) > 1 else 0j


def _krylov(op: DiscretizedOp, n_eigs: int, hermitian: bool) -> tuple[np.ndarray, np.ndarray]:
    n = op.grid.dim
    real = op.is_real
    dtype = float if real else complex
    A = LinearOperator((n, n), matvec=op.matvec, dtype=dtype)
    # deterministic start: phi_k is close to the leading eigenvector
    v0 = phi_mixed(op.grid, op.pot).astype(dtype) + 1e-3 * np.cos(np.arange(n) * 0.7).astype(dtype)
    ncv = min(n, max(2 * n_eigs + 1, 24))
    try:
        if hermitian:
            vals, vecs = eigsh(A, k=n_eigs, which="LM", v0=v0, ncv=ncv, tol=1e-14, maxiter=5000)
        else:
            vals, vecs = eigs(A, k=n_eigs, which="LM", v0=v0.astype(complex), ncv=ncv, tol=1e-14, maxiter=5000)
    except ArpackNoConvergence as exc:
        raise NumericalError(f"Krylov eigensolver did not converge for {op.kind} at k={op.k}: {exc}") from exc
    return vals, vecs


def eigenvalues(op: DiscretizedOp, n_eigs: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of largest modulus (decreasing) and their mixed eigenvectors."""
    n = op.grid.dim
    hermitian = op.is_hermitian
    if n <= DENSE_EIG_LIMIT:
        A = op.dense()
        if hermitian:
            vals, vecs = scipy.linalg.eigh(A)
        else:
            vals, vecs = scipy.linalg.eig(A)
    else:
        vals, vecs = _krylov(op, min(n_eigs, n - 2), hermitian)
    if not np.all(np.isfinite(vals)):
        raise NumericalError(f"eigensolver returned non-finite values for {op.kind} at k={op.k}")
    order = np.argsort(-np.abs(vals), kind="stable")[:n_eigs]
    return np.asarray(vals)[order], np.asarray(vecs)[:, order]


def leading_eig(op: DiscretizedOp, n_eigs: int = 4, with_disk: bool = True) -> EigenPair:
    """Leading eigenpair of ``op`` (dense for ``N <= DENSE_EIG_LIMIT``, Krylov otherwise).

    For a ``Gamma`` operator the disk test uses ``c = ||C||_HS`` measured at
    the same ``k`` and ``z``.
    """
    vals, vecs = eigenvalues(op, n_eigs)
    lam = complex(vals[0])
    if op.is_hermitian:
        lam = complex(lam.real, 0.0)
    v = vecs[:, 0]
    v = v / np.linalg.norm(v)
    ov = np.vdot(phi_mixed(op.grid, op.pot), v)
    if abs(ov) > 0:
        v = v * (abs(ov) / ov)
    elif op.is_real:
        v = v * np.sign(v[np.argmax(np.abs(v))])
    if op.is_real:
        v = v.real.copy()
    residual = float(np.linalg.norm(op.matvec(v) - lam * v))
    scale = max(hs_norm(op), abs(lam), 1e-300)
    if residual > 1e-10 * scale:
        raise NumericalError(f"eigen-residual {residual:.3e} exceeds 1e-10 * ||Gamma|| = {1e-10 * scale:.3e}")
    gap = abs(lam) - (abs(vals[1]) if len(vals) > 1 else 0.0)
    in_disk = None
    Lam = cm = None
    if with_disk and op.kind == "Gamma":
        Lam, _, C = split_gamma(op)
        cm = hs_norm(C)
        in_disk = bool(abs(lam - Lam) <= cm * (1 + 1e-12))
    psi = op.lift(v, lam) if abs(lam) > 0 else np.zeros((op.grid.N1, op.grid.n_l**2))
    return EigenPair(lam, psi, v, float(gap), in_disk, vals, residual, Lam, cm)


def lambda1(grid: Grid, pot: Potential, k: KLike, E: float, eps: float = 0.0, rule: str = "bandlimited") -> float:
    """Leading eigenvalue of ``Gamma_k(E)`` as a real number (``k`` in ``B_E^+``, ``eps = 0``)."""
    op = assemble_gamma(grid, pot, k, E, eps, rule)
    ep = leading_eig(op, n_eigs=2, with_disk=False)
    return ep.lambda1.real if eps == 0.0 else ep.lambda1


# ---------------------------------------------------------------------------
# regime checks


@dataclass
class SeparationReport:
    """Outcome of the disk-separation test inside the annulus."""

    k: tuple[float, float]
    Lambda: complex
    c_measured: float
    radius_bound: float
    lambda1: complex
    lambda2: complex
    disks_disjoint: bool
    lambda_exceeds_radius: bool
    lambda1_in_disk: bool
    lambda1_simple: bool
    others_in_small_disk: bool

    @property
    def ok(self) -> bool:
        return (
            self.disks_disjoint
            and self.lambda_exceeds_radius
            and self.lambda1_in_disk
            and self.lambda1_simple
            and self.others_in_small_disk
        )


def zero_mode_decay(k: KLike, E: float) -> float:
    """``p_I(k, E)`` of the zero mode (0 in ``B_E^-``)."""
    kv = as_k(k)
    return dispersion_root(float(kv @ kv), E, 0.0).p_I


def in_closed_annulus(k: KLike, E: float, g: float, s: float, kappa: float, tol: float = 1e-12) -> bool:
    kv = as_k(k)
    if classify(kv, E) != "B_E_plus":
        return False
    pI = zero_mode_decay(kv, E)
    return q_minus(s, kappa) * g * (1 - tol) <= pI <= q_plus(s, kappa) * g * (1 + tol)


def in_open_annulus(k: KLike, E: float, g: float, s: float, kappa: float) -> bool:
    kv = as_k(k)
    if classify(kv, E) != "B_E_plus":
        return False
    pI = zero_mode_decay(kv, E)
    return q_minus(s, kappa) * g < pI < q_plus(s, kappa) * g


def separation_check(
    grid: Grid, pot: Potential, k: KLike, E: float, eps: float, g: float, s: float, c: float, rule: str = "bandlimited"
) -> SeparationReport:
    """Verify the disk picture at a quasi-momentum of the closed annulus.

    Checks ``|Lambda| > s(s-2)/(s-1) c > 4c`` (so the disks of radius ``c``
    around ``0`` and ``Lambda`` are disjoint), that ``lambda_1`` is a simple
    eigenvalue in the disk around ``Lambda``, and that the remaining
    eigenvalues lie in the disk around ``0``.  Here ``c`` is the regime
    constant, which must dominate the remainder norm measured at this ``k``.
    """
    check_regime(s, g, c)
    kv = as_k(k)
    kappa = grid.lat.kernel_const
    if not in_closed_annulus(kv, E, g, s, kappa):
        raise DomainError(f"k = {tuple(kv)} lies outside the closed annulus")
    op = assemble_gamma(grid, pot, kv, E, eps, rule)
    ep = leading_eig(op, n_eigs=4)
    Lam = ep.Lambda
    cm = ep.c_measured
    r = separation_radius(s, c)
    lam2 = ep.lambda2
    return SeparationReport(
        k=(float(kv[0]), float(kv[1])),
        Lambda=Lam,
        c_measured=cm,
        radius_bound=r,
        lambda1=ep.lambda1,
        lambda2=lam2,
        disks_disjoint=bool(abs(Lam) > 2 * c and cm <= c),
        lambda_exceeds_radius=bool(abs(Lam) > r > 4 * c),
        lambda1_in_disk=bool(abs(ep.lambda1 - Lam) <= c),
        lambda1_simple=bool(abs(ep.lambda1 - lam2) > DEGENERATE_GAP),
        others_in_small_disk=bool(abs(lam2) <= c),
    )


def min_singular_value(op: DiscretizedOp, g: float) -> tuple[float, np.ndarray]:
    """Smallest singular value of ``1 - g M`` and its right singular vector."""
    n = op.grid.dim
    if n <= DENSE_EIG_LIMIT:
        A = np.eye(n) - g * op.dense()
        _, sv, vh = scipy.linalg.svd(A)
        return float(sv[-1]), np.conj(vh[-1])
    real = op.is_real
    dtype = float if real else complex
    adj = op.adjoint()

    def ata(x):
        y = x - g * op.matvec(x)
        return y - g * adj.matvec(y)

    AtA = LinearOperator((n, n), matvec=ata, dtype=dtype)
    v0 = np.cos(np.arange(n) * 0.37).astype(dtype)
    try:
        vals, vecs = eigsh(AtA, k=2, which="SA", v0=v0, tol=1e-12, maxiter=20000, ncv=40)
    except ArpackNoConvergence as exc:
        raise NumericalError(f"smallest singular value did not converge: {exc}") from exc
    i = int(np.argmin(vals))
    return math.sqrt(max(float(vals[i]), 0.0)), vecs[:, i]


def inverse_norm(op: DiscretizedOp, g: float) -> float:
    """``||(1 - g Gamma)^{-1}||`` on the node space.

    The node matrix is ``U M U^*`` plus zero on the complement of the range
    of an isometry ``U``, so the inverse norm is ``max(1, 1/sigma_min(1 - g M))``.
    """
    smin, _ = min_singular_value(op, g)
    if smin == 0.0:
        return math.inf
    return max(1.0, 1.0 / smin)


def outside_annulus_bound(
    grid: Grid, pot: Potential, k: KLike, E: float, eps: float, g: float, s: float, c: float, rule: str = "bandlimited"
) -> tuple[bool, float]:
    """Invertibility of ``1 - g Gamma_k(E + i eps)`` off the annulus.

    Returns
    -------
    holds : bool
        Whether the inverse norm is at most ``2 s (s-1)``.
    inv_norm : float
    """
    check_regime(s, g, c)
    kv = as_k(k)
    kappa = grid.lat.kernel_const
    if in_open_annulus(kv, E, g, s, kappa):
        raise DomainError(f"k = {tuple(kv)} lies inside the annulus")
    op = assemble_gamma(grid, pot, kv, E, eps, rule)
    val = inverse_norm(op, g)
    return bool(val <= inverse_norm_threshold(s)), val


# ---------------------------------------------------------------------------
# Feynman-Hellmann gradient


def gamma_derivative(op: DiscretizedOp, j: int) -> DiscretizedOp:
    """``d Gamma / d k_j`` as an operator with the same Toeplitz structure.

    Each channel kernel depends on ``k`` through ``a = sqrt(|k+K|^2 - E)``
    and ``da/dk_j = (k_j + K_j)/a``.
    """
    grid = op.grid
    t = np.arange(grid.N1) * grid.h
    kK = op.k[None, :] + grid.K
    gen = np.empty_like(op.gen)
    for c, p in enumerate(op.roots):
        a = -1j * p
        gen[c] = grid.h * channel_green_da(t, a, grid.h, op.rule) * (kK[c, j] / a)
    if op.is_hermitian:
        gen = gen.real + 0j
    return op._like(gen, f"d{op.kind}/dk{j + 2}")


def fh_gradient(
    grid: Grid, pot: Potential, k: KLike, E: float, pair: EigenPair | None = None, rule: str = "bandlimited"
) -> np.ndarray:
    """Gradient ``(d lambda_1/d k_2, d lambda_1/d k_3)`` by the Feynman-Hellmann formula.

    Raises
    ------
    DomainError
        Unless every channel is evanescent (``k`` in ``B_E^+``).
    IllConditionedError
        When ``lambda_1`` is within ``1e-8`` of ``lambda_2``.
    """
    kv = as_k(k)
    if classify(kv, E) != "B_E_plus":
        raise DomainError("the gradient formula needs k in B_E^+ (real symmetric problem)")
    op = assemble_gamma(grid, pot, kv, E, 0.0, rule)
    if pair is None:
        pair = leading_eig(op, n_eigs=3, with_disk=False)
    if abs(pair.lambda1 - pair.lambda2) < DEGENERATE_GAP:
        raise IllConditionedError(f"lambda_1 is degenerate at k = {tuple(kv)} (gap {abs(pair.lambda1 - pair.lambda2):.2e})")
    v = pair.vec
    out = np.empty(2)
    for j in range(2):
        d = gamma_derivative(op, j)
        out[j] = float(np.real(np.vdot(v, d.matvec(v))))
    return out


def overlap_bound(psi1: np.ndarray, k: KLike, pot: Potential, s: float) -> tuple[float, float, bool]:
    """``|<phi_k, psi_1>|`` against ``(1 - 4(s-1)/(s(s-2)))^{1/2}``.

    ``phi_k = W e^{i<k, x_l>}`` has unit norm because ``W`` is normalised.

    Returns
    -------
    overlap, bound, holds
    """
    grid = pot.grid
    kv = as_k(k)
    phase = np.exp(1j * grid.xl @ kv)
    phi = pot.samples * phase[None, :]
    ov = abs(np.sum(grid.weights * np.conj(phi) * psi1))
    nrm = math.sqrt(float(np.sum(grid.weights * np.abs(phi) ** 2)))
    ov /= nrm
    b = overlap_threshold(s)
    return float(ov), b, bool(ov >= b)
