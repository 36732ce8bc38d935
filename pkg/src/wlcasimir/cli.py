"""Command line interface.

Subcommands::

    wlcasimir loops gen   --n-loops N_L --points N --seed S --out FILE
    wlcasimir energy      --geometry {slab,sphere,cylinder} --a A [--R R] ENSEMBLE [--out CSV]
    wlcasimir scan        --geometry {sphere,cylinder} --ratios X1,X2,... ENSEMBLE [--out CSV]
    wlcasimir density     --geometry ... --h LO:HI:N --z LO:HI:N ENSEMBLE [--out CSV]
    wlcasimir fit         --curve CSV [--x-max 0.1] [--out JSON]
    wlcasimir bounds      [--curve CSV | --c1 C1 --c2 C2] --tolerance T [T ...] [--out JSON]

``ENSEMBLE`` is either ``--ensemble FILE`` or ``--seed S --n-loops N_L
--points N``.  Exit codes: 0 success, 1 numerical or I/O failure, 2 usage
error.  The number of worker threads is read from ``WLCASIMIR_THREADS``
(default: number of CPUs); results do not depend on it.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import analysis, engine, loopgen
from .geometry import Cylinder, Plate, SlabPair, Sphere

__all__ = ["main", "CurveFormatError", "ENERGY_COLUMNS", "SCAN_COLUMNS", "read_curve_csv", "write_rows", "fmt"]

ENERGY_COLUMNS = ["a_over_R", "E", "E_err", "E0_pfa", "E_norm", "E_norm_err",
                  "n_L", "N", "m", "runtime_s"]
SCAN_COLUMNS = ENERGY_COLUMNS + ["flag"]
DENSITY_UNITS = {"sphere": "rho[L0]", "cylinder": "x[L0]", "slab": "x[L0]"}

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class CurveFormatError(ValueError):
    """Malformed curve CSV."""


def fmt(v) -> str:
    """CSV cell: integers verbatim, floats with 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_rows(stream, columns, rows):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])


class _RowWriter:
    """CSV writer that flushes each row, so partial output survives failures."""

    def __init__(self, path, columns):
        self.columns = columns
        self.path = path
        self.f = open(path, "w", newline="") if path else None
        self.buf = io.StringIO()
        for s in self._streams():
            csv.writer(s, lineterminator="\n").writerow(columns)

    def _streams(self):
        return [self.f] if self.f else [self.buf]

    def row(self, r):
        for s in self._streams():
            csv.writer(s, lineterminator="\n").writerow([fmt(r[c]) for c in self.columns])
            s.flush()

    def close(self):
        if self.f:
            self.f.close()
        else:
            sys.stdout.write(self.buf.getvalue())


def read_curve_csv(path) -> analysis.Curve:
    """Curve from a scan CSV; rows with a non-zero flag or NaN are skipped."""
    xs, vs, es = [], [], []
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        missing = {"a_over_R", "E_norm", "E_norm_err"} - set(rd.fieldnames or [])
        if missing:
            raise CurveFormatError(f"{path}: missing columns {sorted(missing)}")
        for i, row in enumerate(rd, start=2):
            try:
                if int(row.get("flag") or 0):
                    continue
                x, v, e = float(row["a_over_R"]), float(row["E_norm"]), float(row["E_norm_err"])
            except (TypeError, ValueError):
                raise CurveFormatError(f"{path}: line {i} is not a valid curve row") from None
            if all(map(math.isfinite, (x, v, e))):
                xs.append(x)
                vs.append(v)
                es.append(e)
    order = np.argsort(xs)
    return analysis.Curve(np.array(xs)[order], np.array(vs)[order], np.array(es)[order])


def _positive_int(s):
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {s!r}") from None
    return v


def _ratios(s):
    try:
        vals = [float(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratio list {s!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty ratio list")
    return vals


def _grid(s):
    try:
        lo, hi, n = s.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be LO:HI:N, got {s!r}") from None


def _add_ensemble(p):
    g = p.add_argument_group("ensemble")
    g.add_argument("--ensemble", type=Path, help="WLC1 ensemble file")
    g.add_argument("--seed", type=_positive_int, help="seed of a generated ensemble")
    g.add_argument("--n-loops", type=_positive_int, help="loops in a generated ensemble")
    g.add_argument("--points", type=_positive_int, help="points per loop")


def _add_engine(p):
    g = p.add_argument_group("engine")
    g.add_argument("--mass", type=float, default=0.0)
    g.add_argument("--qtol", type=float, default=engine.EngineConfig.qtol)
    g.add_argument("--trunc-tol", type=float, default=engine.EngineConfig.trunc_tol)
    g.add_argument("--blocks", type=_positive_int, default=engine.EngineConfig.n_blocks)
    g.add_argument("--estimator", choices=["direct", "ratio"], default="direct")
    g.add_argument("--batch-size", type=_positive_int, default=engine.EngineConfig.batch_size)


def _add_geometry(p, kinds=("slab", "sphere", "cylinder"), ratios=False):
    p.add_argument("--geometry", choices=list(kinds), required=True)
    p.add_argument("--a", type=float, default=1.0 if ratios else None, required=not ratios,
                   help="surface separation (length unit L0)")
    if not ratios:
        p.add_argument("--R", type=float, help="sphere or cylinder radius")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wlcasimir", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    loops = sub.add_parser("loops", help="loop ensembles")
    lsub = loops.add_subparsers(dest="loops_command", required=True)
    gen = lsub.add_parser("gen", help="generate an ensemble file")
    gen.add_argument("--n-loops", type=_positive_int, required=True)
    gen.add_argument("--points", type=_positive_int, required=True)
    gen.add_argument("--seed", type=_positive_int, required=True)
    gen.add_argument("--out", type=Path, required=True)

    en = sub.add_parser("energy", help="interaction energy of one geometry")
    _add_geometry(en)
    _add_ensemble(en)
    _add_engine(en)
    en.add_argument("--out", type=Path, help="CSV output (default stdout)")

    sc = sub.add_parser("scan", help="normalized energies over a/R with a=const")
    _add_geometry(sc, ("sphere", "cylinder"), ratios=True)
    sc.add_argument("--ratios", type=_ratios, required=True, help="comma separated a/R values")
    _add_ensemble(sc)
    _add_engine(sc)
    sc.add_argument("--out", type=Path, help="CSV output (default stdout)")

    de = sub.add_parser("density", help="energy density on a section")
    _add_geometry(de)
    de.add_argument("--h", type=_grid, default=None, help="horizontal grid LO:HI:N (write --h=-2:2:41 for negative LO)")
    de.add_argument("--z", type=_grid, required=True, help="vertical grid LO:HI:N")
    _add_ensemble(de)
    _add_engine(de)
    de.add_argument("--out", type=Path, help="CSV output (default stdout)")

    fi = sub.add_parser("fit", help="constrained quadratic fit of a curve")
    fi.add_argument("--curve", type=Path, required=True)
    fi.add_argument("--x-max", type=float, default=0.1)
    fi.add_argument("--out", type=Path, help="JSON report")

    bo = sub.add_parser("bounds", help="PFA validity thresholds")
    bo.add_argument("--curve", type=Path, help="scan CSV; default is the reference fit")
    bo.add_argument("--source", choices=["fit", "curve"], default="fit",
                    help="use the fitted polynomial or the interpolated curve")
    bo.add_argument("--x-max", type=float, default=0.1)
    bo.add_argument("--c1", type=float, help="override the fit coefficient c1")
    bo.add_argument("--c2", type=float, help="override the fit coefficient c2")
    bo.add_argument("--tolerance", type=float, nargs="+", default=[0.001, 0.01])
    bo.add_argument("--band-convention", choices=["stat", "halfwidth"], default="stat")
    bo.add_argument("--base-accuracy", type=float, default=0.001)
    bo.add_argument("--out", type=Path, help="JSON report")
    return p


def _ensemble(args) -> loopgen.Ensemble:
    gen = (args.seed, args.n_loops, args.points)
    if args.ensemble is not None:
        if any(v is not None for v in gen):
            raise UsageError("--ensemble excludes --seed/--n-loops/--points")
        try:
            return loopgen.load_ensemble(args.ensemble)
        except OSError as exc:
            raise OSError(f"cannot read ensemble {args.ensemble}: {exc}") from exc
    if any(v is None for v in gen):
        raise UsageError("give --ensemble FILE or all of --seed, --n-loops, --points")
    try:
        return loopgen.generate_ensemble(loopgen.EnsembleMeta(args.n_loops, args.points, args.seed))
    except loopgen.InvalidMetaError as exc:
        raise UsageError(str(exc)) from exc


def _config(args) -> engine.EngineConfig:
    try:
        return engine.EngineConfig(mass=args.mass, qtol=args.qtol, trunc_tol=args.trunc_tol,
                                   n_blocks=args.blocks, estimator=args.estimator,
                                   batch_size=args.batch_size)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _bodies(kind, a, R):
    try:
        if kind == "slab":
            return SlabPair(a)
        if R is None:
            raise UsageError(f"--R is required for geometry {kind}")
        return (Plate(), Sphere(R, a) if kind == "sphere" else Cylinder(R, a))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _e0(kind, a, R):
    if kind == "slab":
        return -math.pi**2 / (1440.0 * a**3)
    if kind == "sphere":
        return analysis.pfa_sphere(a, R)
    return analysis.pfa_cylinder_zeroth(a, R)


def _row(kind, a, R, res: Optional[engine.EnergyResult], ens, mass, runtime, flag=0):
    e0 = _e0(kind, a, R)
    x = a / R if R else float("nan")
    if res is None:
        v = err = float("nan")
    else:
        v, err = res.value, res.stat_error
    return {"a_over_R": x, "E": v, "E_err": err, "E0_pfa": e0, "E_norm": v / e0,
            "E_norm_err": abs(err / e0), "n_L": ens.n_loops, "N": ens.n_points, "m": mass,
            "runtime_s": runtime, "flag": flag}


def _progress(label):
    if not sys.stderr.isatty():
        return None
    t0 = time.perf_counter()

    def cb(done, total):
        print(f"\r{label}: {done}/{total} loops, {time.perf_counter() - t0:.1f}s",
              end="" if done < total else "\n", file=sys.stderr, flush=True)

    return cb


def cmd_loops_gen(args):
    try:
        meta = loopgen.EnsembleMeta(args.n_loops, args.points, args.seed)
    except loopgen.InvalidMetaError as exc:
        raise UsageError(str(exc)) from exc
    ens = loopgen.generate_ensemble(meta)
    loopgen.save_ensemble(ens, args.out)
    print(f"wrote {args.out}: n_L={meta.n_loops} N={meta.n_points} seed={meta.seed} "
          f"tag={meta.algorithm_tag} bytes={args.out.stat().st_size}")
    return EXIT_OK


def cmd_energy(args):
    bodies = _bodies(args.geometry, args.a, args.R)
    config = _config(args)
    if args.geometry == "slab" and config.estimator == "ratio":
        raise UsageError("the ratio estimator does not apply to a slab")
    ens = _ensemble(args)
    t0 = time.perf_counter()
    res = engine.casimir_energy(bodies, ens, config)
    runtime = time.perf_counter() - t0
    row = _row(args.geometry, args.a, args.R, res, ens, args.mass, runtime)
    out = _RowWriter(args.out, ENERGY_COLUMNS)
    out.row(row)
    out.close()
    m = res.meta
    print(f"{args.geometry}: E = {res.value:.10g} +- {res.stat_error:.3g}  "
          f"E/E0 = {row['E_norm']:.6f} +- {row['E_norm_err']:.6f}  "
          f"[{m['estimator']}, n_L={ens.n_loops}, N={ens.n_points}, "
          f"unconverged={m['n_unconverged']}, {runtime:.1f}s]", file=sys.stderr)
    if m["n_unconverged"] or m["n_uncertified"]:
        print(f"warning: {m['n_unconverged']} loops missed qtol, {m['n_uncertified']} "
              f"had uncertified truncation", file=sys.stderr)
    return EXIT_OK


def cmd_scan(args):
    ratios = args.ratios
    if any(r <= 0 or not math.isfinite(r) for r in ratios):
        raise UsageError("ratios must be positive")
    if len(set(ratios)) != len(ratios):
        raise UsageError("duplicate ratios")
    if any(b < a for a, b in zip(ratios, ratios[1:])):
        raise UsageError("ratios must be sorted increasingly")
    if not args.a > 0:
        raise UsageError("--a must be positive")
    config = _config(args)
    ens = _ensemble(args)
    geoms = [_bodies(args.geometry, args.a, args.a / x) for x in ratios]
    t0 = time.perf_counter()
    values, info, flags, controls = engine.loop_values(geoms, ens, config,
                                                       progress=_progress("scan"))
    runtime = time.perf_counter() - t0
    out = _RowWriter(args.out, SCAN_COLUMNS)
    status = EXIT_OK
    for i, (x, g) in enumerate(zip(ratios, geoms)):
        R = args.a / x
        try:
            res = engine.summarize(g, ens, config, values[:, i], info[:, i], flags[:, i],
                                   controls, runtime)
            fl = 1 if (res.meta["n_unconverged"] or res.meta["n_uncertified"]) else 0
            out.row(_row(args.geometry, args.a, R, res, ens, args.mass, runtime, fl))
            print(f"a/R={x:g}: E/E0 = {res.value / _e0(args.geometry, args.a, R):.6f}"
                  f" +- {res.stat_error / abs(_e0(args.geometry, args.a, R)):.6f}", file=sys.stderr)
        except (ArithmeticError, ValueError) as exc:
            out.row(_row(args.geometry, args.a, R, None, ens, args.mass, runtime, 2))
            print(f"a/R={x:g}: failed: {exc}", file=sys.stderr)
            status = EXIT_NUMERIC
    out.close()
    return status


def cmd_density(args):
    bodies = _bodies(args.geometry, args.a, args.R)
    config = _config(args)
    ens = _ensemble(args)
    h = np.zeros(1) if args.h is None else args.h
    grid = engine.energy_density(bodies, ens, h, args.z, config)
    cols = [DENSITY_UNITS[args.geometry], "z[L0]", "density[1/L0^4]"]
    rows = [{cols[0]: hv, cols[1]: zv, cols[2]: grid.values[i, j]}
            for i, hv in enumerate(grid.h) for j, zv in enumerate(grid.z)]
    out = _RowWriter(args.out, cols)
    for r in rows:
        out.row(r)
    out.close()
    return EXIT_OK


def _fit_report(fit: analysis.FitResult) -> dict:
    return {"c1": fit.c1, "c2": fit.c2, "cov": fit.cov.tolist(), "chi2": fit.chi2, "dof": fit.dof,
            "band": "x*sqrt(v11 + 2*x*v12 + x^2*v22)",
            "v11": fit.cov[0, 0], "v12": fit.cov[0, 1], "v22": fit.cov[1, 1],
            "reference_slopes": {"semiclassical": analysis.SEMICLASSICAL_SLOPE,
                                 "optical": analysis.OPTICAL_SLOPE}}


def _write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, default=float)
    if path:
        Path(path).write_text(text + "\n")
    return text


def cmd_fit(args):
    curve = read_curve_csv(args.curve)
    fit = analysis.fit_constrained_quadratic(curve, args.x_max)
    rep = _fit_report(fit)
    print(f"p(x) = 1 + {fit.c1:.6g} x + {fit.c2:.6g} x^2 +- x sqrt({fit.cov[0, 0]:.6g} "
          f"+ 2x ({fit.cov[0, 1]:.6g}) + x^2 ({fit.cov[1, 1]:.6g}))  chi2/dof = {fit.chi2:.3g}/{fit.dof}")
    _write_json(args.out, {"fit": rep, "curve": str(args.curve), "x_max": args.x_max})
    return EXIT_OK


def cmd_bounds(args):
    if args.curve is not None:
        curve = read_curve_csv(args.curve)
        if args.source == "fit":
            wl = analysis.fit_constrained_quadratic(curve, args.x_max)
        else:
            wl = curve
    else:
        if args.source == "curve":
            raise UsageError("--source curve needs --curve")
        wl = analysis.REFERENCE_FIT
    if isinstance(wl, analysis.FitResult) and (args.c1 is not None or args.c2 is not None):
        wl = analysis.FitResult(wl.c1 if args.c1 is None else args.c1,
                                wl.c2 if args.c2 is None else args.c2, wl.cov, meta=wl.meta)
    results = []
    status = EXIT_OK
    for t in args.tolerance:
        if not t > 0:
            raise UsageError("tolerances must be positive")
        try:
            b = analysis.pfa_validity_bound(wl, t, args.band_convention, args.base_accuracy)
            results.append({"tolerance": t, "threshold": b.threshold, "convention": b.convention,
                            "base_accuracy": b.base_accuracy, "half_width": b.half_width,
                            "source": b.source, "non_monotone": b.non_monotone})
            note = " (gap function not monotone)" if b.non_monotone else ""
            print(f"tolerance {t:g}: a/R threshold = {b.threshold:.6g} "
                  f"[{b.convention}, half-width {b.half_width:.3g}]{note}")
        except analysis.BoundError as exc:
            results.append({"tolerance": t, "threshold": None, "error": str(exc),
                            "convention": args.band_convention})
            print(f"tolerance {t:g}: no threshold: {exc}")
            status = EXIT_NUMERIC
    rep = {"bounds": results}
    if isinstance(wl, analysis.FitResult):
        rep["fit"] = _fit_report(wl)
    _write_json(args.out, rep)
    return status


_COMMANDS = {"energy": cmd_energy, "scan": cmd_scan, "density": cmd_density,
             "fit": cmd_fit, "bounds": cmd_bounds}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "loops":
            return cmd_loops_gen(args)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except (analysis.FitError, analysis.BoundError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, loopgen.EnsembleFormatError, CurveFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
