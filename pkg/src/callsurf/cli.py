"""Command-line front end: fit, audit and diagnostics subcommands.

All outputs are plain CSV/JSON with fixed 12-significant-digit formatting,
so identical inputs produce byte-identical files.

Exit codes: 0 success, 1 configuration or I/O problem, 2 LP infeasible or
solver failure, 3 arbitrage audit failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytics
from .constraints import ToleranceSpec
from .errors import CallSurfError, InfeasibleError, SolverStateError
from .lp_core import SolverOptions, to_lp
from .market_data import (
    Curve,
    IngestionOptions,
    QuoteKind,
    load_curves,
    load_quotes,
    structure_from_grid,
)
from .recovery import RecoveryConfig, recover

FMT = "%.12g"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_AUDIT = 3


@dataclass
class RunConfig:
    """Parsed key-value run configuration."""

    quotes: str
    spot: float
    curves: str | None = None
    rate: float = 0.0
    dividend: float = 0.0
    quote_kind: str = "call_price"
    mode: str = "tensor_wl1"
    m_t: int = 11
    m_k: int = 104
    n_t: int = 7
    n_k: int = 14
    alphas: tuple | None = None
    poly_orders: int = 3
    tolerance_mode: str = "relative"
    epsilon: float = 5e-4
    strike_extension: float = 0.15
    maturity_extension: float | None = None
    enforce_extended: bool = True
    relax_to_feasible: bool = False
    outdir: str = "out"
    export_surface: bool = True
    export_coefficients: bool = True
    export_diagnostics: bool = True
    export_lp: bool = False

    _BOOL = ("enforce_extended", "relax_to_feasible", "export_surface",
             "export_coefficients", "export_diagnostics", "export_lp")
    _INT = ("m_t", "m_k", "n_t", "n_k", "poly_orders")
    _FLOAT = ("spot", "rate", "dividend", "epsilon", "strike_extension")

    @classmethod
    def from_file(cls, path):
        values = {}
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CallSurfError(f"{path}: line {lineno}: expected key = value")
                key, _, val = line.partition("=")
                values[key.strip()] = val.strip()
        if "quotes" not in values or "spot" not in values:
            raise CallSurfError(f"{path}: config must set at least 'quotes' and 'spot'")
        kwargs = {}
        for key, val in values.items():
            if key not in cls.__dataclass_fields__:
                raise CallSurfError(f"{path}: unknown config key {key!r}")
            if key in cls._BOOL:
                kwargs[key] = val.lower() in ("1", "true", "yes", "on")
            elif key in cls._INT:
                kwargs[key] = int(val)
            elif key in cls._FLOAT:
                kwargs[key] = float(val)
            elif key == "maturity_extension":
                kwargs[key] = None if val.lower() == "auto" else float(val)
            elif key == "alphas":
                kwargs[key] = None if val.lower() == "auto" else tuple(float(v) for v in val.split(",") if v.strip())
            else:
                kwargs[key] = val
        return cls(**kwargs)

    def recovery_config(self):
        return RecoveryConfig(
            mode=self.mode,
            m_t=self.m_t,
            m_k=self.m_k,
            n_t=self.n_t,
            n_k=self.n_k,
            alphas=self.alphas,
            poly_orders=self.poly_orders,
            tolerance=ToleranceSpec(self.tolerance_mode, self.epsilon),
            strike_extension=self.strike_extension,
            maturity_extension=self.maturity_extension,
            enforce_extended=self.enforce_extended,
            solver=SolverOptions(),
        )

    def load_market(self):
        if self.curves:
            rate_curve, dividend_curve = load_curves(self.curves)
        else:
            rate_curve, dividend_curve = Curve.flat(self.rate), Curve.flat(self.dividend)
        opts = IngestionOptions(
            spot=self.spot,
            rate_curve=rate_curve,
            dividend_curve=dividend_curve,
            quote_kind=QuoteKind(self.quote_kind),
        )
        return load_quotes(self.quotes, opts)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join("" if _is_nan(v) else (FMT % v if isinstance(v, float) else str(v)) for v in row) + "\n")


def _is_nan(v):
    return isinstance(v, float) and v != v


def _write_surface(path, surface):
    rows = []
    g = surface.grid
    for m in range(g.n_slices):
        for k in range(g.n_strikes):
            rows.append((float(g.maturities[m]), float(g.strikes[m, k]), float(surface.prices[m, k])))
    _write_rows(path, "maturity,strike,price", rows)


def _write_coefficients(path, surface):
    basis = surface.basis
    rows = []
    for i, x in enumerate(surface.coefficients):
        label = basis.column_labels[i] if i < len(basis.column_labels) else f"col{i}"
        rows.append((i, label, float(basis.column_weights[i]), float(x)))
    _write_rows(path, "index,label,weight,value", rows)


def _write_diagnostics(path, prices, grid, diag):
    rows = [tuple(float(v) for v in row) for row in analytics.diagnostics_rows(prices, grid, diag)]
    _write_rows(path, analytics.DIAGNOSTICS_HEADER, rows)


def _write_lp_dump(outdir, system):
    np.savetxt(outdir / "lp_L.csv", system.L, fmt=FMT, delimiter=",")
    np.savetxt(outdir / "lp_J.csv", system.J, fmt=FMT, delimiter=",")
    np.savetxt(outdir / "lp_A.csv", system.A, fmt=FMT, delimiter=",")
    np.savetxt(outdir / "lp_target.csv", system.c_target, fmt=FMT, delimiter=",")
    np.savetxt(outdir / "lp_epsilon.csv", system.epsilon, fmt=FMT, delimiter=",")
    meta = {name: list(span) for name, span in system.blocks.items()}
    (outdir / "lp_blocks.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _write_audit(path, report):
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def cmd_fit(args):
    config = RunConfig.from_file(args.config)
    quote_set = config.load_market()
    cfg = config.recovery_config()
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    try:
        surface = _fit_with_optional_relax(quote_set, cfg, config.relax_to_feasible)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        (outdir / "audit.json").write_text(json.dumps(
            {"pass": False, "status": "infeasible", "family_violations": exc.family_violations},
            indent=2, sort_keys=True) + "\n")
        return EXIT_SOLVER
    except SolverStateError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    if config.export_surface:
        _write_surface(outdir / "surface.csv", surface)
    if config.export_coefficients:
        _write_coefficients(outdir / "coefficients.csv", surface)
    if config.export_diagnostics:
        diag = surface.diagnostics()
        _write_diagnostics(outdir / "diagnostics.csv", surface.prices, surface.grid, diag)
    if config.export_lp:
        from .constraints import assemble
        system = assemble(surface.grid, surface.basis, quote_set, cfg.tolerance, cfg.enforce_extended)
        _write_lp_dump(outdir, system)
    _write_audit(outdir / "audit.json", surface.audit)

    if not surface.audit.passed:
        print("audit failed", file=sys.stderr)
        return EXIT_AUDIT
    return EXIT_OK


def _fit_with_optional_relax(quote_set, cfg, relax, max_scale=1e6):
    """Run the recovery; optionally bisect a global tolerance multiplier to
    the smallest power-of-two scale that is feasible (a convenience knob,
    not part of the recovery itself)."""
    try:
        return recover(quote_set, cfg)
    except InfeasibleError:
        if not relax:
            raise
    lo, hi = 1.0, 2.0
    tol = cfg.tolerance
    surface = None
    while hi <= max_scale:
        try:
            scaled = ToleranceSpec(tol.mode, tol.value * hi) if tol.mode != "bidask" else tol
            if tol.mode == "bidask":
                raise InfeasibleError("cannot relax bid-ask bands")
            surface = recover(quote_set, _with_tolerance(cfg, scaled))
            break
        except InfeasibleError:
            lo, hi = hi, hi * 2.0
    if surface is None:
        raise InfeasibleError(f"still infeasible after scaling tolerance by {max_scale:g}")
    # shrink back toward the smallest feasible multiplier
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        try:
            surface = recover(quote_set, _with_tolerance(cfg, ToleranceSpec(tol.mode, tol.value * mid)))
            hi = mid
        except InfeasibleError:
            lo = mid
    return surface


def _with_tolerance(cfg, tol):
    from dataclasses import replace
    return replace(cfg, tolerance=tol)


def _load_surface_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.size == 0:
        raise CallSurfError(f"{path}: empty surface file")
    T = np.asarray(data["maturity"], dtype=float)
    K = np.asarray(data["strike"], dtype=float)
    C = np.asarray(data["price"], dtype=float)
    mats, inverse = np.unique(T, return_inverse=True)
    counts = np.bincount(inverse)
    if np.any(counts != counts[0]):
        raise CallSurfError(f"{path}: slices carry different strike counts")
    m_k = int(counts[0])
    strikes = np.empty((mats.size, m_k))
    prices = np.empty((mats.size, m_k))
    for m in range(mats.size):
        sel = inverse == m
        order = np.argsort(K[sel])
        strikes[m] = K[sel][order]
        prices[m] = C[sel][order]
    return mats, strikes, prices


def cmd_audit(args):
    if args.curves:
        rate_curve, dividend_curve = load_curves(args.curves)
    else:
        rate_curve, dividend_curve = Curve.flat(args.rate), Curve.flat(args.dividend)
    mats, strikes, prices = _load_surface_csv(args.surface)
    grid = structure_from_grid(mats, strikes, args.spot, rate_curve, dividend_curve)
    report = analytics.audit(prices, grid)
    out = Path(args.out) if args.out else Path("audit.json")
    _write_audit(out, report)
    name, fam = report.worst
    print(f"audit {'pass' if report.passed else 'FAIL'}: worst family {name}, slack {fam.worst:.3e} "
          f"at (T={fam.maturity:g}, K={fam.strike:g})")
    return EXIT_OK if report.passed else EXIT_AUDIT


def cmd_diagnostics(args):
    if args.curves:
        rate_curve, dividend_curve = load_curves(args.curves)
    else:
        rate_curve, dividend_curve = Curve.flat(args.rate), Curve.flat(args.dividend)
    mats, strikes, prices = _load_surface_csv(args.surface)
    grid = structure_from_grid(mats, strikes, args.spot, rate_curve, dividend_curve)
    diag = analytics.compute_diagnostics(prices, grid)
    out = Path(args.out) if args.out else Path("diagnostics.csv")
    _write_diagnostics(out, prices, grid, diag)
    for note in diag.notes:
        print(note, file=sys.stderr)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="callsurf", description="Arbitrage-free call-surface recovery from sparse quotes")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="recover a surface from quotes per a config file")
    p_fit.add_argument("--config", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_audit = sub.add_parser("audit", help="re-audit a surface.csv for arbitrage")
    p_audit.add_argument("--surface", required=True)
    p_audit.add_argument("--curves", default=None)
    p_audit.add_argument("--spot", type=float, required=True)
    p_audit.add_argument("--rate", type=float, default=0.0)
    p_audit.add_argument("--dividend", type=float, default=0.0)
    p_audit.add_argument("--out", default=None)
    p_audit.set_defaults(func=cmd_audit)

    p_diag = sub.add_parser("diagnostics", help="implied vol / density / local vol for a surface.csv")
    p_diag.add_argument("--surface", required=True)
    p_diag.add_argument("--curves", default=None)
    p_diag.add_argument("--spot", type=float, required=True)
    p_diag.add_argument("--rate", type=float, default=0.0)
    p_diag.add_argument("--dividend", type=float, default=0.0)
    p_diag.add_argument("--out", default=None)
    p_diag.set_defaults(func=cmd_diagnostics)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CallSurfError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
