"""Annulus construction and tracing of the Fermi curve ``g lambda_1(k, E) = 1``."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, RegimeViolation, TracingError
from .geometry import LatticeGeometry, energy_threshold
from .grid import Grid
from .potential import Potential
from .spectral import S0, check_regime, fh_gradient, lambda1, q_minus, q_plus, sign_margin

ROOT_TOL = 1e-8


@dataclass(frozen=True)
class Annulus:
    """Rotation-invariant layer ``q_- g < p_I(k, E) < q_+ g`` around ``|k| = sqrt(E)``.

    ``coupling`` is the constant multiplying ``i e^{ip|t|}/p`` in the kernel;
    by default the one of the assembled operator, ``1/(2|S|)``.
    """

    E: float
    g: float
    s: float
    coupling: float
    q_minus: float
    q_plus: float

    @property
    def inner_radius(self) -> float:
        return math.sqrt(self.E + (self.q_minus * self.g) ** 2)

    @property
    def outer_radius(self) -> float:
        return math.sqrt(self.E + (self.q_plus * self.g) ** 2)

    def contains(self, k, closed: bool = False) -> bool:
        r = float(np.hypot(*np.asarray(k, float)))
        if closed:
            return self.inner_radius <= r <= self.outer_radius
        return self.inner_radius < r < self.outer_radius


def make_annulus(
    lat: LatticeGeometry,
    E: float,
    g: float,
    s: float,
    c: float | None = None,
    delta: float | None = None,
    coupling: float | None = None,
) -> Annulus:
    """Build the annulus after checking ``s > s0``, ``g > 0`` and, when given,
    ``g < 1/(s c)`` and ``E < E_delta``."""
    if not s > S0:
        raise ConfigError(f"s = {s} must exceed s0 = 3 + sqrt(5) = {S0:.6f}")
    if not g > 0:
        raise ConfigError(f"coupling g must be positive, got {g}")
    if not E > 0:
        raise ConfigError(f"energy E must be positive, got {E}")
    if delta is not None:
        Ed = energy_threshold(lat, delta)
        if not E < Ed:
            raise ConfigError(f"E = {E} must lie below E_delta = {Ed:.6g}")
    if c is not None:
        check_regime(s, g, c)
    kap = lat.kernel_const if coupling is None else float(coupling)
    return Annulus(float(E), float(g), float(s), kap, q_minus(s, kap), q_plus(s, kap))


@dataclass
class SolverContext:
    """Discretisation used to evaluate ``lambda_1``."""

    grid: Grid
    pot: Potential
    rule: str = "bandlimited"
    tol: float = ROOT_TOL
    threads: int = 1

    def lam(self, k: np.ndarray, E: float) -> float:
        return lambda1(self.grid, self.pot, k, E, 0.0, self.rule)


@dataclass
class RadialRoot:
    theta: float
    radius: float
    k: np.ndarray
    lambda1: float
    residual: float
    inner_value: float  # g lambda_1 - 1 at the inner radius
    outer_value: float  # g lambda_1 - 1 at the outer radius


def _ray(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def radial_root(theta: float, annulus: Annulus, ctx: SolverContext) -> RadialRoot:
    """Root of ``r -> g lambda_1(r e_theta) - 1`` inside the annulus.

    The sign change between the inner and the outer radius is checked first;
    the root is bracketed by Brent's method (bisection safeguarded secant
    steps) and accepted when ``|g lambda_1 - 1| <= tol``.

    Raises
    ------
    RegimeViolation
        No sign change across the annulus; both endpoint values are reported.
    """
    e = _ray(theta)
    g = annulus.g
    E = annulus.E

    def f(r: float) -> float:
        return g * ctx.lam(r * e, E) - 1.0

    ri, ro = annulus.inner_radius, annulus.outer_radius
    fi, fo = f(ri), f(ro)
    if not (fi > 0 > fo):
        raise RegimeViolation(
            f"no sign change of g*lambda1 - 1 on the ray theta={theta:.6f}: "
            f"inner value {fi:.6e}, outer value {fo:.6e}"
        )
    r = brentq(f, ri, ro, xtol=1e-15 * ro, rtol=1e-15, maxiter=200)
    lam = ctx.lam(r * e, E)
    res = abs(g * lam - 1.0)
    if res > ctx.tol:
        raise RegimeViolation(f"root on ray theta={theta:.6f} has residual {res:.3e} > {ctx.tol:.1e}")
    return RadialRoot(float(theta), float(r), r * e, float(lam), float(res), float(fi), float(fo))


@dataclass
class FermiCurve:
    """Ordered polyline on ``g lambda_1 = 1`` with its closure diagnostics."""

    mode: str
    E: float
    g: float
    k: np.ndarray
    lambda1: np.ndarray
    residual: np.ndarray
    step: float
    closure_gap: float = math.nan
    winding_number: int = 0
    simple: bool = False
    sign_bracket: list = field(default_factory=list)

    @property
    def theta(self) -> np.ndarray:
        return np.mod(np.arctan2(self.k[:, 1], self.k[:, 0]), 2 * math.pi)

    @property
    def radius(self) -> np.ndarray:
        return np.hypot(self.k[:, 0], self.k[:, 1])

    def __len__(self) -> int:
        return len(self.k)


def winding_number(points: np.ndarray) -> int:
    """Winding number of the closed polyline about the origin."""
    ang = np.arctan2(points[:, 1], points[:, 0])
    d = np.diff(np.concatenate([ang, ang[:1]]))
    d = (d + math.pi) % (2 * math.pi) - math.pi
    return int(round(float(np.sum(d)) / (2 * math.pi)))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def is_simple(points: np.ndarray) -> bool:
    """True when no two non-adjacent segments of the closed polyline intersect."""
    n = len(points)
    if n < 4:
        return n == 3
    segs = [(points[i], points[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(*segs[i], *segs[j]):
                return False
    return True


def _finish(curve: FermiCurve) -> FermiCurve:
    pts = curve.k
    curve.winding_number = winding_number(pts)
    curve.simple = is_simple(pts)
    return curve


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def radial_scan(annulus: Annulus, ctx: SolverContext, n_theta: int = 128, refine: bool = False) -> FermiCurve:
    """One radial root per uniformly spaced ray.

    With ``refine`` set, one extra pass adds a ray midway between neighbours
    whose radii differ by more than three times the median difference.
    """
    if n_theta < 3:
        raise ConfigError("n_theta must be at least 3")
    thetas = list(2 * math.pi * np.arange(n_theta) / n_theta)
    roots = _map(lambda th: radial_root(th, annulus, ctx), thetas, ctx.threads)
    if refine and n_theta >= 8:
        r = np.array([x.radius for x in roots])
        dr = np.abs(np.diff(np.concatenate([r, r[:1]])))
        med = float(np.median(dr))
        extra = [
            0.5 * (thetas[i] + (thetas[i + 1] if i + 1 < n_theta else 2 * math.pi))
            for i in range(n_theta)
            if med > 0 and dr[i] > 3 * med
        ]
        if extra:
            roots += _map(lambda th: radial_root(th, annulus, ctx), extra, ctx.threads)
            roots.sort(key=lambda x: x.theta)
    k = np.array([x.k for x in roots])
    seg = np.linalg.norm(np.diff(np.vstack([k, k[:1]]), axis=0), axis=1)
    curve = FermiCurve(
        mode="radial_scan",
        E=annulus.E,
        g=annulus.g,
        k=k,
        lambda1=np.array([x.lambda1 for x in roots]),
        residual=np.array([x.residual for x in roots]),
        step=float(np.max(seg)),
        closure_gap=float(seg[-1]),
        sign_bracket=[(x.theta, x.inner_value, x.outer_value) for x in roots],
    )
    return _finish(curve)


def _correct(k: np.ndarray, annulus: Annulus, ctx: SolverContext, max_iter: int = 12) -> tuple[np.ndarray, float] | None:
    """Minimum-norm Newton correction onto ``g lambda_1 = 1``.

    Newton runs on ``1 - 1/(g lambda_1)``, which is close to linear in the
    zero-mode decay rate and so avoids the overshoot of the raw residual.
    Only the corrected point has to lie in the closed annulus.
    """
    g, E = annulus.g, annulus.E
    for _ in range(max_iter):
        lam = ctx.lam(k, E)
        if abs(g * lam - 1.0) <= ctx.tol:
            return (k, lam) if annulus.contains(k, closed=True) else None
        f = 1.0 - 1.0 / (g * lam)
        grad = fh_gradient(ctx.grid, ctx.pot, k, E, rule=ctx.rule) / (g * lam**2)
        dk = -f * grad / float(grad @ grad)
        # stay strictly outside the circle |k|^2 = E where the gradient is defined
        while float((k + dk) @ (k + dk)) <= E:
            dk *= 0.5
        k = k + dk
    return None


def continuation(annulus: Annulus, ctx: SolverContext, n_theta: int = 128, max_halvings: int = 5) -> FermiCurve:
    """Pseudo-arclength predictor-corrector tracing seeded on the ray ``theta = 0``.

    The tangent is the gradient of ``lambda_1`` rotated by a right angle and
    oriented counterclockwise.  Tracing stops once the path has turned by
    more than ``3 pi / 2`` and returns to within half a step of the seed.
    """
    seed = radial_root(0.0, annulus, ctx)
    step0 = 2 * math.pi * seed.radius / n_theta
    pts = [seed.k]
    lams = [seed.lambda1]
    turned = 0.0
    k = seed.k
    max_nodes = 8 * n_theta
    while len(pts) < max_nodes:
        grad = fh_gradient(ctx.grid, ctx.pot, k, annulus.E, rule=ctx.rule)
        t = np.array([-grad[1], grad[0]]) / float(np.hypot(*grad))
        if t @ np.array([-k[1], k[0]]) < 0:
            t = -t
        ds = step0
        out = None
        for _ in range(max_halvings + 1):
            out = _correct(k + ds * t, annulus, ctx)
            if out is not None:
                break
            ds *= 0.5
        if out is None:
            raise TracingError(f"continuation failed after {max_halvings} step halvings", arc=np.array(pts))
        k_new, lam = out
        a0 = math.atan2(k[1], k[0])
        a1 = math.atan2(k_new[1], k_new[0])
        turned += (a1 - a0 + math.pi) % (2 * math.pi) - math.pi
        k = k_new
        return_gap = float(np.linalg.norm(k - seed.k))
        if turned > 1.5 * math.pi and return_gap <= 0.5 * step0 + 1e-15:
            break
        pts.append(k)
        lams.append(lam)
    else:
        raise TracingError("continuation did not return to the seed", arc=np.array(pts))
    kk = np.array(pts)
    lam_arr = np.array(lams)
    res = np.abs(annulus.g * lam_arr - 1.0)
    # the returning node duplicates the seed; its distance to it is the closure gap
    curve = FermiCurve("continuation", annulus.E, annulus.g, kk, lam_arr, res, step0, return_gap)
    return _finish(curve)


def trace_curve(annulus: Annulus, ctx: SolverContext, n_theta: int = 128, mode: str = "radial_scan") -> FermiCurve:
    """Trace the Fermi curve by radial scan (default) or continuation."""
    if mode == "radial_scan":
        return radial_scan(annulus, ctx, n_theta)
    if mode == "continuation":
        return continuation(annulus, ctx, n_theta)
    raise ConfigError(f"unknown tracing mode {mode!r}")


def curve_report(curve: FermiCurve, annulus: Annulus, ctx: SolverContext | None = None, with_gradient: bool = True) -> dict:
    """Diagnostics of a traced curve.

    The smoothness statistic is the largest second difference of the radius
    along the curve relative to the annulus width.  With ``ctx`` given, the
    Feynman-Hellmann gradient is evaluated at every node and its smallest
    norm is reported as the empirical lower bound on ``|grad lambda_1|``.
    """
    r = curve.radius
    d2 = np.roll(r, -1) - 2 * r + np.roll(r, 1)
    width = annulus.outer_radius - annulus.inner_radius
    rep = {
        "n_nodes": int(len(curve)),
        "mode": curve.mode,
        "min_radius": float(np.min(r)),
        "max_radius": float(np.max(r)),
        "inner_radius": annulus.inner_radius,
        "outer_radius": annulus.outer_radius,
        "inside_annulus": bool(np.all((r > annulus.inner_radius) & (r < annulus.outer_radius))),
        "max_residual": float(np.max(curve.residual)),
        "closure_gap": float(curve.closure_gap),
        "step": float(curve.step),
        "closed": bool(curve.closure_gap <= curve.step * (1 + 1e-12)),
        "winding_number": int(curve.winding_number),
        "simple": bool(curve.simple),
        "smoothness": float(np.max(np.abs(d2)) / width) if width > 0 else math.nan,
    }
    if ctx is not None and with_gradient:
        norms = [float(np.hypot(*fh_gradient(ctx.grid, ctx.pot, k, annulus.E, rule=ctx.rule))) for k in curve.k]
        rep["min_gradient_norm"] = float(min(norms))
    if curve.sign_bracket:
        m = sign_margin(annulus.s)
        rep["sign_bracket_ok"] = bool(all(fi > m and fo < -m for _, fi, fo in curve.sign_bracket))
        rep["sign_bracket_min_margin"] = float(min(min(fi, -fo) for _, fi, fo in curve.sign_bracket))
    return rep


def g_scaling(
    lat: LatticeGeometry, E: float, g0: float, s: float, ctx: SolverContext, factors=(0.25, 0.5, 1.0), thetas=(0.0,)
) -> dict:
    """Fit ``radius - sqrt(E) ~ g^alpha`` over the couplings ``factor * g0``."""
    gs = [f * g0 for f in factors]
    offsets = []
    for gv in gs:
        ann = make_annulus(lat, E, gv, s)
        rr = [radial_root(th, ann, ctx).radius for th in thetas]
        offsets.append(float(np.mean(rr)) - math.sqrt(E))
    if min(offsets) <= 0:
        raise RegimeViolation("root radius does not exceed sqrt(E)")
    alpha = float(np.polyfit(np.log(gs), np.log(offsets), 1)[0])
    return {"g": gs, "radius_offset": offsets, "exponent": alpha}
