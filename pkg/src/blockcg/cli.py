"""Command-line front end.

::

    blockcg list
    blockcg example ex4.1 --out out/ex41
    blockcg example ex4.4 --s 8 --m 15 25 --jmax 10
    blockcg spectrum values.txt --s 2 --m 10 20 --k1 2
    blockcg poisson --grid 20 --ic0 --m 20

Exit status: 0 when every bound configuration completed, 1 on partial
failure or an I/O problem, 2 on a usage error (bad arguments, unreadable
spectrum values).
"""
import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import BlockCGError, NonPositive, ParseError
from .experiments import (
    SCENARIOS,
    BoundRequest,
    Scenario,
    env_seed,
    get_scenario,
    registry_grid,
    run_scenario,
    with_overrides,
)

log = logging.getLogger("blockcg")

RESIDUAL_COLUMNS = ("iteration", "residual_ainvF", "theta_min", "theta_max")
BOUND_COLUMNS = ("j", "actual", "comparison", "b1", "b1_ls_sqrt2", "b2", "gamma_m", "alpha")
DEFAULT_JMAX = 10


class UsageError(Exception):
    pass


def load_spectrum_file(path):
    """Read eigenvalues, one per line; ``#`` starts a comment.

    Returns the values sorted ascending. Repeated values are kept.

    Raises
    ------
    ParseError
        For a line that is not a number (1-based line number).
    NonPositive
        For a value that is not strictly positive.
    """
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise ParseError(lineno, raw.rstrip("\n")) from None
            if not (v > 0.0 and math.isfinite(v)):
                raise NonPositive(v, where=lineno)
            values.append(v)
    if not values:
        raise ParseError(0, "no values found")
    return sorted(values)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0.0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _common(p):
    p.add_argument("--s", type=_positive_int, help="block size (number of right-hand sides)")
    p.add_argument("--m", type=_positive_int, nargs="+", help="iterations at which to start the bounds")
    p.add_argument("--jmax", type=_nonneg_int, help="bound horizon")
    p.add_argument("--k1", type=_nonneg_int, help="lowest eigenpairs to deflate")
    p.add_argument("--k2", type=_nonneg_int, help="highest eigenpairs to deflate")
    p.add_argument("--tol", type=_positive_float, help="stopping tolerance on the A^-1-F residual norm")
    p.add_argument("--max-m", type=_positive_int, dest="max_m", help="iteration cap")
    p.add_argument("--seed", type=int, help="seed for the random initial guess (s > 1)")
    p.add_argument("--out", default="blockcg-out", help="output directory")
    p.add_argument("--format", nargs="+", choices=("csv", "json"), default=["csv", "json"],
                   help="which outputs to write")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="blockcg", description="Block CG runs with superlinear convergence bounds.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list the registered scenarios")
    ex = sub.add_parser("example", help="run a registered scenario")
    ex.add_argument("id", choices=SCENARIOS, metavar="id", help=f"one of {', '.join(SCENARIOS)}")
    _common(ex)
    sp = sub.add_parser("spectrum", help="diagonal matrix with eigenvalues read from a file")
    sp.add_argument("file")
    _common(sp)
    po = sub.add_parser("poisson", help="5-point Poisson matrix, optionally IC(0) preconditioned")
    po.add_argument("--grid", type=int, default=20)
    po.add_argument("--ic0", action="store_true", help="apply the IC(0) preconditioner symmetrically")
    _common(po)
    return parser


def _bound_grid(default, args, k1_default):
    """Registry grid, overridden field by field from the flags."""
    if args.m:
        jmax = DEFAULT_JMAX if args.jmax is None else args.jmax
        k1 = k1_default if args.k1 is None else args.k1
        k2 = 0 if args.k2 is None else args.k2
        grid = tuple(BoundRequest(m, jmax, k1, k2) for m in args.m)
    else:
        grid = tuple(
            BoundRequest(r.m,
                         r.j_max if args.jmax is None else args.jmax,
                         r.k1 if args.k1 is None else args.k1,
                         r.k2 if args.k2 is None else args.k2)
            for r in default)
    # the same (m, k1, k2) twice would write one file twice
    seen = {}
    for r in grid:
        key = (r.m, r.k1, r.k2)
        if key not in seen or r.j_max > seen[key].j_max:
            seen[key] = r
    return tuple(seen.values())


def scenario_from_args(args):
    """Translate parsed arguments into a :class:`Scenario`."""
    seed = env_seed() if args.seed is None else args.seed
    if args.command == "example":
        sc = get_scenario(args.id, s=args.s, seed=seed)
        k1_default = sc.bounds[0].k1 if sc.bounds else 1
        grid = _bound_grid(sc.bounds, args, k1_default)
    elif args.command == "spectrum":
        try:
            values = load_spectrum_file(args.file)
        except (ParseError, NonPositive) as exc:
            raise UsageError(f"{args.file}: {exc}") from exc
        sc = Scenario(id=f"spectrum:{Path(args.file).name}", matrix="spectrum", s=args.s or 1,
                      values=tuple(values), seed=seed)
        grid = _bound_grid((), args, 1)
    else:
        if args.grid < 2:
            raise UsageError("--grid must be at least 2")
        sc = Scenario(id=f"poisson:g{args.grid}{'+ic0' if args.ic0 else ''}", matrix="poisson",
                      s=args.s or 1, grid=args.grid, precondition=args.ic0, seed=seed)
        grid = _bound_grid((), args, 1)
    for r in grid:
        if r.k1 + r.k2 < 1:
            raise UsageError("k1 + k2 must be at least 1")
    if sc.s > sc.n:
        raise UsageError(f"block size {sc.s} exceeds the dimension {sc.n}")
    return with_overrides(sc, bounds=grid, tol=args.tol, max_m=args.max_m)


# ---------------------------------------------------------------- output

def _num(x):
    """Shortest round-trip text for a float."""
    return repr(float(x))


def _json_num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(str(v) if isinstance(v, int) else _num(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def bounds_filename(req):
    return f"bounds_m{req.m}_k{req.k1}_{req.k2}.csv"


def summary(artifact):
    """The JSON-ready summary of a run (no timestamps, stable key order)."""
    sc = artifact.scenario
    configs = []
    for req, series in artifact.bounds.items():
        configs.append({
            "m": req.m,
            "j_max": req.j_max,
            "k1": req.k1,
            "k2": req.k2,
            "file": bounds_filename(req),
            "gamma_m": _json_num(series.gamma_m),
            "alpha": _json_num(series.alpha),
            "alpha_unreliable": bool(series.alpha_unreliable),
            "least_squares_well_posed": bool(series.well_posed),
            "theta_low": [_json_num(t) for t in series.theta_low],
            "theta_high": [_json_num(t) for t in series.theta_high],
        })
    return {
        "provenance": artifact.provenance,
        "seed": sc.seed,
        "block_size": sc.s,
        "configs": configs,
        "errors": artifact.errors,
        "superlinearity_onset": artifact.onset,
        "final_residual_ainvF": _json_num(artifact.trace.norms[-1]),
    }


def emit(artifact, out_dir, formats=("csv", "json")):
    """Write the run's files into ``out_dir`` and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        path = out / "residuals.csv"
        _write_csv(path, RESIDUAL_COLUMNS, artifact.residual_rows)
        written.append(path)
        for req, series in artifact.bounds.items():
            path = out / bounds_filename(req)
            _write_csv(path, BOUND_COLUMNS, ([r[c] for c in BOUND_COLUMNS] for r in series.rows()))
            written.append(path)
    if "json" in formats:
        path = out / "summary.json"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(summary(artifact), indent=2, sort_keys=True, allow_nan=False) + "\n")
        written.append(path)
    return written


def _list():
    for sid in SCENARIOS:
        sc = get_scenario(sid)
        sizes = ", ".join(str(s) for s in registry_grid(sid))
        print(f"{sid}  n={sc.n}  s in {{{sizes}}}  {sc.note}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit 2 from argparse
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        _list()
        return 0
    try:
        sc = scenario_from_args(args)
    except UsageError as exc:
        parser.exit(2, f"blockcg: error: {exc}\n")
    except OSError as exc:
        print(f"blockcg: {exc}", file=sys.stderr)
        return 1
    try:
        artifact = run_scenario(sc)
    except (BlockCGError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"blockcg: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    try:
        paths = emit(artifact, args.out, args.format)
    except OSError as exc:
        print(f"blockcg: cannot write output: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        log.info("wrote %s", os.fspath(p))
    for err in artifact.errors:
        print(f"blockcg: config m={err['m']} k1={err['k1']} k2={err['k2']} failed: {err['error']}: {err['message']}",
              file=sys.stderr)
    return 0 if artifact.ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
