"""Command line: ``bsguided {trace, scan, guided, verify}``.

Each command reads the defaults, an optional YAML file and ``--set``
overrides, writes CSV data and a ``report.json`` into ``--out`` and exits
with 0 (all checks pass), 1 (configuration error), 2 (regime violation or a
failed check) or 3 (numerical failure).  Wall-clock timings go to a separate
``timing.json`` so that reports are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .checks import Check, Setup, _jsonable, check_regime_bounds, make_setup, run_all
from .config import load_config, validate
from .errors import BSGuidedError, ConfigError, NotOnCurveError
from .fermi import _map, curve_report, g_scaling, radial_root, trace_curve
from .guided import boundary_case_check, build_guided_state, decay_report, null_residual, null_vector
from .spectral import lambda1

log = logging.getLogger("bsguided")

REPORT = "report.json"
TIMING = "timing.json"


# ---------------------------------------------------------------------------
# output helpers


def fmt(x) -> str:
    """Scientific notation with 17 significant digits."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.16e}"


def write_csv(path: Path, command: str, cfg_hash: str, columns: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    """UTF-8 CSV whose first row records the command and the configuration hash."""
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"# bsguided {command}", f"config_hash={cfg_hash}"])
        w.writerow(list(columns))
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _base_report(command: str, st_or_cfg, cfg_raw: dict, cfg_hash: str) -> dict:
    rep = {"command": command, "config": cfg_raw, "config_hash": cfg_hash, "version": __version__}
    if isinstance(st_or_cfg, Setup):
        a = st_or_cfg.annulus
        rep["coupling"] = {"g": st_or_cfg.g, "c": st_or_cfg.c}
        rep["annulus"] = {"inner_radius": a.inner_radius, "outer_radius": a.outer_radius, "q_minus": a.q_minus, "q_plus": a.q_plus}
    return rep


def _finish(rep: dict, checks: list[Check], artifacts: list[str]) -> int:
    rep["checks"] = [c.as_dict() for c in checks]
    rep["artifacts"] = sorted(artifacts)
    failed = [c for c in checks if c.gating and not c.passed]
    rep["passed"] = not failed
    if not failed:
        return 0
    codes = [c.values.get("exit_code", 2) for c in failed]
    return 3 if 3 in codes else 2


# ---------------------------------------------------------------------------
# commands


def cmd_trace(st: Setup, out: Path, rep: dict) -> int:
    opts = st.cfg.raw["trace"]
    n_theta = int(opts["n_theta"])
    curve = trace_curve(st.annulus, st.ctx, n_theta, str(opts["mode"]))
    summary = curve_report(curve, st.annulus, st.ctx, with_gradient=bool(opts["gradient"]))
    rows = (
        (th, k[0], k[1], r, lam, res)
        for th, k, r, lam, res in zip(curve.theta, curve.k, curve.radius, curve.lambda1, curve.residual)
    )
    write_csv(out / "curve.csv", "trace", rep["config_hash"], ["theta", "k2", "k3", "radius", "lambda1", "residual"], rows)
    rep["curve"] = summary
    checks = check_regime_bounds(st) + [
        Check("curve_closed", "closure gap at most one step", summary["closed"], {"closure_gap": summary["closure_gap"], "step": summary["step"]}),
        Check("curve_simple", "no two segments of the polyline intersect", summary["simple"], {}),
        Check("curve_winding", "the curve winds once around the origin", summary["winding_number"] == 1, {"winding_number": summary["winding_number"]}),
        Check("curve_residuals", "every node satisfies g lambda_1 = 1 to 1e-8", summary["max_residual"] <= 1e-8, {"max_residual": summary["max_residual"]}),
    ]  # fmt: skip
    if opts["g_sweep"]:
        gs = g_scaling(st.cfg.lat, st.E, st.g, st.s, st.ctx)
        rep["g_scaling"] = gs
        checks.append(Check("curve_g_squared", "radius offset scales like g^2", 1.8 <= gs["exponent"] <= 2.2, gs))
    return _finish(rep, checks, ["curve.csv"])


def cmd_scan(st: Setup, out: Path, rep: dict) -> int:
    opts = st.cfg.raw["scan"]
    n_theta, n_r, margin = int(opts["n_theta"]), int(opts["n_r"]), float(opts["margin"])
    a = st.annulus
    w = a.outer_radius - a.inner_radius
    radii = np.linspace(a.inner_radius - margin * w, a.outer_radius + margin * w, n_r)
    thetas = 2 * math.pi * np.arange(n_theta) / n_theta
    pts = [np.array([r * math.cos(t), r * math.sin(t)]) for t in thetas for r in radii]

    def value(k):
        if float(k @ k) <= st.E * (1 + 1e-12):
            return math.nan
        return lambda1(st.grid, st.pot, k, st.E, 0.0, st.cfg.rule)

    lams = _map(value, pts, st.cfg.threads)
    rows = [(k[0], k[1], lam, st.g * lam - 1.0) for k, lam in zip(pts, lams)]
    write_csv(out / "scan.csv", "scan", rep["config_hash"], ["k2", "k3", "lambda1", "g_lambda1_minus_1"], rows)
    f = np.array([r[3] for r in rows]).reshape(n_theta, n_r)
    changes = []
    for ray in f:
        ok = ray[np.isfinite(ray)]
        changes.append(int(np.sum(np.diff(np.sign(ok)) != 0)))
    rep["scan"] = {"radii": radii, "thetas": thetas, "sign_changes_per_ray": changes}
    checks = check_regime_bounds(st) + [
        Check("scan_sign_change", "g lambda_1 - 1 changes sign exactly once along every ray", all(c == 1 for c in changes), {"sign_changes": changes})
    ]  # fmt: skip
    return _finish(rep, checks, ["scan.csv"])


def cmd_guided(st: Setup, out: Path, rep: dict) -> int:
    opts = st.cfg.raw["guided"]
    grid = st.grid
    if opts["boundary"]:
        th = float(opts["theta"])
        k = math.sqrt(st.E) * np.array([math.cos(th), math.sin(th)])
        br = boundary_case_check(k, st.E, st.g, grid, st.pot, rule=st.cfg.rule)
        rep["boundary_case"] = {
            "k": k, "eps": br.eps, "min_singular_values": br.min_singular_values, "extrapolated": br.extrapolated,
            "extrapolated_linear": br.extrapolated_linear, "applicable": br.applicable, "inconclusive": br.inconclusive,
            "fourier_value": br.fourier_value, "fourier_derivative": br.fourier_derivative,
        }  # fmt: skip
        checks = [
            Check("boundary_hypotheses", "potential is compactly supported and vanishes on a half-space", br.applicable, {}),
            Check("boundary_no_state", "smallest singular value stays above a positive extrapolated limit", br.stays_above_limit and not br.inconclusive,
                  {"extrapolated": br.extrapolated}),
        ]  # fmt: skip
        return _finish(rep, checks, [])
    if opts["k"] is not None:
        try:
            k = np.array([float(v) for v in opts["k"]])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"guided.k must be a pair of numbers, got {opts['k']!r}") from exc
        if k.shape != (2,):
            raise ConfigError(f"guided.k must be a pair of numbers, got {opts['k']!r}")
    else:
        k = radial_root(float(opts["theta"]), st.annulus, st.ctx).k
    v = null_vector(k, st.E, st.g, grid, st.pot, st.cfg.rule)
    state = build_guided_state(v, k, st.E, st.g, grid, st.pot)
    dec = decay_report(state, grid, int(opts["m_max"]))
    rows = (
        (x1, xl[0], xl[1], u.real, u.imag)
        for i, x1 in enumerate(grid.x1)
        for xl, u in zip(grid.xl, state.u[i])
    )
    write_csv(out / "state.csv", "guided", rep["config_hash"], ["x1", "x2", "x3", "re_u", "im_u"], rows)
    rep["guided"] = {
        "k": k,
        "null_residual": null_residual(v, k, st.E, st.g, grid, st.pot, st.cfg.rule),
        "eigen_residual": state.eigen_residual,
        "wu_mismatch": state.wu_mismatch,
        "truncation": state.truncation,
        "decay": dec,
    }
    checks = [
        Check("guided_residual", "eigen-residual of the guided state at most 1e-6", state.eigen_residual <= 1e-6, {"residual": state.eigen_residual}),
        Check("guided_decay", "decay rate within 10% of 2 p_I(k, E)", dec["rate_relative_error"] <= 0.1, {"relative_error": dec["rate_relative_error"]}),
        Check("guided_moments", "weighted moments are finite", dec["moments_finite"], {}),
    ]  # fmt: skip
    return _finish(rep, checks, ["state.csv"])


def cmd_verify(st: Setup, out: Path, rep: dict) -> int:
    opts = st.cfg.raw["verify"]
    nodes = opts["guided_nodes"]
    if nodes != "all" and (not isinstance(nodes, int) or nodes < 1):
        raise ConfigError(f"verify.guided_nodes must be 'all' or a positive integer, got {nodes!r}")
    eps = [float(e) for e in opts["eps_sequence"]]
    checks = run_all(st, int(opts["n_theta"]), nodes, eps)
    for c in checks:
        log.info("%-28s %s", c.name, "pass" if c.passed else "FAIL")
    return _finish(rep, checks, [])


COMMANDS = {"trace": cmd_trace, "scan": cmd_scan, "guided": cmd_guided, "verify": cmd_verify}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsguided", description="Fermi curves and guided states of weakly coupled periodic waveguides.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "trace": "trace the curve g lambda_1(k, E) = 1",
        "scan": "sample lambda_1 on rays across the annulus",
        "guided": "build the guided state at a curve node",
        "verify": "run the property suite",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", metavar="PATH", help="YAML configuration file")
        sp.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
        sp.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], help="override a configuration key (repeatable)")
        sp.add_argument("--threads", type=int, metavar="N", help="worker threads for independent k-points")
        sp.add_argument("--seed", type=int, metavar="N", help="seed for random probes")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _split_timing(rep: dict) -> dict:
    """Move wall-clock entries out of the check values; they differ run to run."""
    found = {}
    for chk in rep.get("checks", []):
        vals = chk.get("values", {})
        secs = {k: vals.pop(k) for k in [k for k in vals if k.startswith("seconds")]}
        if secs:
            found[chk["name"]] = secs
    return found


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    try:
        raw = load_config(args.config, overrides)
        cfg = validate(raw)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return exc.exit_code
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rep = _base_report(args.command, None, raw, cfg.hash)
    try:
        st = make_setup(cfg, strict=args.command != "verify")
        rep = _base_report(args.command, st, raw, cfg.hash)
        code = COMMANDS[args.command](st, out, rep)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return exc.exit_code
    except BSGuidedError as exc:
        err = {"type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if isinstance(exc, NotOnCurveError):
            err["eigenvalue_distance"] = exc.distance
        rep["error"] = err
        rep["passed"] = False
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        code = exc.exit_code
    timing = {"command": args.command, "seconds": time.perf_counter() - t0, "checks": _split_timing(rep)}
    write_json(out / REPORT, rep)
    write_json(out / TIMING, timing)
    return code


if __name__ == "__main__":
    sys.exit(main())
