"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 solver incomplete,
3 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .critsys import critical_residual, fiber_sample
from .duality import (
    LEMMA_TOL,
    dual_solve,
    dual_spec,
    dualize_point,
    marginal_defects,
    multiplier_defect,
    verify_pairing,
)
from .models import ModelSpec, SpecError, data_structure_errors, membership_failures
from .monodromy import DEDUP_TOL, RESIDUAL_TOL, IncompleteError, SolutionSet, populate, solve_for_data
from .numkit import InputError
from .serialization import (
    certificate_dict,
    dumps,
    encode_complex,
    encode_point,
    encode_spec,
    points_csv,
    read_data,
    read_solution,
    solution_document,
    write_output,
)
from .tracker import TrackOptions

EXIT_OK, EXIT_VERIFY, EXIT_INCOMPLETE, EXIT_INPUT = 0, 1, 2, 3

log = logging.getLogger("mldual")


class UsageError(Exception):
    pass


def _env_seed() -> int:
    raw = os.environ.get("MLDUAL_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"MLDUAL_SEED must be an integer, got {raw!r}") from None


def _add_spec(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--kind", choices=("rect", "sym", "skew"), required=required)
    p.add_argument("--m", type=int, required=required)
    p.add_argument("--n", type=int, default=None, help="columns (rect only; defaults to m)")
    p.add_argument("--rank", "-r", type=int, required=required)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (default: $MLDUAL_SEED or 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for path tracking")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--corrector-tol", type=float, default=TrackOptions.corrector_tol)
    p.add_argument("--dedup-tol", type=float, default=DEDUP_TOL)
    p.add_argument("--max-loops", type=int, default=200)
    p.add_argument("--quiet-loops", type=int, default=10)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mldual", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mldual {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="critical points for a data matrix or a generic one")
    _add_spec(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="JSON data matrix")
    src.add_argument("--generic", action="store_true", help="use a random generic data matrix")
    p.add_argument("--via-dual", action="store_true",
                   help="solve the dual rank and map back, keeping only exact-rank points")
    _add_common(p)

    p = sub.add_parser("dualize", help="apply the duality map to a solution file")
    p.add_argument("--points", required=True)
    _add_common(p)

    p = sub.add_parser("verify", help="certify a solution file")
    p.add_argument("--points", required=True)
    _add_common(p)

    p = sub.add_parser("degree", help="ML-degree by monodromy over several seeds")
    _add_spec(p)
    p.add_argument("--seeds", default="0,1", help="comma-separated seeds")
    _add_common(p)

    p = sub.add_parser("table", help="grid of ML-degrees as CSV")
    p.add_argument("--kind", choices=("rect", "sym"), default="rect")
    p.add_argument("--min-m", type=int, default=3)
    p.add_argument("--max-m", type=int, required=True)
    p.add_argument("--max-n", type=int, default=None)
    p.add_argument("--seeds", default="0,1")
    _add_common(p)
    p.set_defaults(format="csv")

    p = sub.add_parser("fiber-sample", help="random (P, U) pair with P critical for U")
    _add_spec(p)
    _add_common(p)
    return parser


def _spec(args) -> ModelSpec:
    n = args.n if args.kind == "rect" else args.m
    if args.kind != "rect" and args.n not in (None, args.m):
        raise UsageError(f"{args.kind} models are square; drop --n or set it to --m")
    return ModelSpec(args.kind, args.m, args.m if n is None else n, args.rank)


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad seed list {text!r}") from None
    if len(seeds) < 2:
        raise UsageError("need at least two seeds")
    return seeds


def _opts(args) -> TrackOptions:
    return replace(TrackOptions(), corrector_tol=args.corrector_tol)


def _meta(args, **more) -> dict:
    return {
        "command": args.command,
        "seed": args.seed,
        "tolerances": {"corrector": args.corrector_tol, "dedup": args.dedup_tol,
                       "residual": RESIDUAL_TOL, "lemma": LEMMA_TOL},
        **more,
    }


def _emit(args, spec, U, points, certificate=None, meta=None, **extra) -> None:
    if args.format == "csv":
        write_output(points_csv(spec, points), args.out)
        return
    doc = solution_document(spec, U, points, certificate, meta or _meta(args), **extra)
    write_output(dumps(doc), args.out)


def _populate(spec, args) -> SolutionSet:
    return populate(spec, args.seed, _opts(args), quiet_loops=args.quiet_loops,
                    max_loops=args.max_loops, workers=args.threads, dedup_tol=args.dedup_tol)


# -- commands ----------------------------------------------------------------

def cmd_solve(args) -> int:
    spec = _spec(args)
    if args.via_dual and spec.kind == "skew":
        raise UsageError("--via-dual needs rect or sym (the skew dual model is not solvable directly)")
    if args.generic:
        if args.via_dual:
            raise UsageError("--via-dual needs --data")
        try:
            solset = _populate(spec, args)
        except IncompleteError as exc:
            log.error("%s", exc)
            solset = exc.solset
        _emit(args, spec, solset.U, solset.points, certificate_dict(solset))
        return EXIT_OK if solset.certified else EXIT_INCOMPLETE
    U = read_data(args.data)
    if U.shape != spec.shape:
        raise UsageError(f"data shape {U.shape} does not match model {spec.shape}")
    errs = data_structure_errors(spec, U)
    if errs:
        raise UsageError("; ".join(errs))
    solve_spec = dual_spec(spec) if args.via_dual else spec
    try:
        base = _populate(solve_spec, args)
    except IncompleteError as exc:
        log.error("%s", exc)
        base = exc.solset
    if args.via_dual:
        solset = dual_solve(solve_spec, U, args.seed, _opts(args), base=base, workers=args.threads)
    else:
        solset = solve_for_data(spec, U, args.seed, _opts(args), base=base, workers=args.threads)
    extra = {"failures": [vars(f) for f in solset.failures]}
    if args.via_dual:
        extra["degenerate"] = [encode_point(p) for p in solset.degenerate]
    _emit(args, spec, U, solset.points, certificate_dict(solset), **extra)
    complete = base.certified and not solset.failures
    return EXIT_OK if complete else EXIT_INCOMPLETE


def cmd_dualize(args) -> int:
    spec, U, points, _ = read_solution(args.points)
    dspec = dual_spec(spec)
    duals, degenerate, pairs = [], [], []
    for k, point in enumerate(points):
        try:
            pair = dualize_point(point, U)
        except ZeroDivisionError as exc:
            raise UsageError(f"point {k}: {exc}") from None
        (degenerate if pair.degenerate else duals).append(pair.dual)
        pairs.append({"index": k, "dual_rank": pair.dual.num_rank, "degenerate": pair.degenerate,
                      "log_product": encode_complex(pair.log_product)})
    if args.format == "csv":
        write_output(points_csv(dspec, duals + degenerate), args.out)
        return EXIT_OK
    doc = solution_document(dspec, U, duals, None, _meta(args, primal_model=encode_spec(spec)),
                            degenerate=[encode_point(p) for p in degenerate], pairs=pairs)
    write_output(dumps(doc), args.out)
    return EXIT_OK


def point_checks(spec: ModelSpec, point, U) -> list[str]:
    """Names of the per-point invariants violated by a stored critical point."""
    out = []
    res = critical_residual(spec, point.P, U)
    if not res <= RESIDUAL_TOL:
        out.append(f"critical residual {res:.3g}")
    out += [f"membership: {f}" for f in membership_failures(spec, point.P)]
    defects = marginal_defects(spec, point.P, U)
    out += [f"marginal lemma ({k}) {v:.3g}" for k, v in defects.items() if not v <= LEMMA_TOL]
    if np.isfinite(point.lam) and point.lam != 0:
        d = multiplier_defect(point, U)
        if not d <= LEMMA_TOL:
            out.append(f"multiplier {d:.3g}")
    return out


def cmd_verify(args) -> int:
    spec, U, points, doc = read_solution(args.points)
    failures = []
    per_point = []
    for k, p in enumerate(points):
        bad = point_checks(spec, p, U)
        per_point.append({"index": k, "failures": bad})
        failures += [f"point {k}: {b}" for b in bad]
    solset = SolutionSet(spec, U, dedup_tol=args.dedup_tol)
    for p in points:
        if not solset.add(p):
            failures.append("duplicate points")
    pairing = verify_pairing(solset, args.dedup_tol) if points else None
    if pairing is not None:
        failures += [f"duality: {f}" for f in pairing.failures]
    report = {
        "model": encode_spec(spec),
        "count": len(points),
        "points": per_point,
        "duality": None if pairing is None else pairing.as_dict(),
        "certificate": doc.get("certificate", {}),
        "failures": failures,
        "pass": not failures,
        "meta": {"version": __version__, **_meta(args)},
    }
    write_output(dumps(report), args.out)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_OK if not failures else EXIT_VERIFY


def _degree_runs(spec, seeds, args) -> tuple[int | None, list[dict], int]:
    runs, status = [], EXIT_OK
    for s in seeds:
        try:
            ss = populate(spec, s, _opts(args), quiet_loops=args.quiet_loops, max_loops=args.max_loops,
                          workers=args.threads, dedup_tol=args.dedup_tol)
        except IncompleteError as exc:
            ss, status = exc.solset, EXIT_INCOMPLETE
        runs.append({"seed": s, "count": len(ss), **certificate_dict(ss)})
    counts = {r["count"] for r in runs}
    if status == EXIT_OK and len(counts) != 1:
        status = EXIT_VERIFY
    return (counts.pop() if len(counts) == 1 else None), runs, status


def cmd_degree(args) -> int:
    spec = _spec(args)
    degree, runs, status = _degree_runs(spec, _seeds(args.seeds), args)
    print(degree if degree is not None else "unstable: " + ",".join(str(r["count"]) for r in runs))
    if args.out:
        doc = {"model": encode_spec(spec), "degree": degree, "runs": runs, "meta": {"version": __version__, **_meta(args)}}
        write_output(dumps(doc), args.out)
    return status


def cmd_table(args) -> int:
    seeds = _seeds(args.seeds)
    max_n = args.max_m if args.max_n is None or args.kind == "sym" else args.max_n
    if args.min_m < 1 or args.max_m < args.min_m or max_n < args.max_m:
        raise UsageError("need 1 <= min-m <= max-m <= max-n")
    rows, status = [], EXIT_OK
    for m in range(args.min_m, args.max_m + 1):
        for n in (range(m, max_n + 1) if args.kind == "rect" else [m]):
            cells = []
            for r in range(1, m + 1):
                degree, _, st = _degree_runs(ModelSpec(args.kind, m, n, r), seeds, args)
                status = max(status, st)
                cells.append(degree)
            rows.append((m, n, cells))
    if args.format == "json":
        doc = {"kind": args.kind, "seeds": seeds,
               "rows": [{"m": m, "n": n, "degrees": cells} for m, n, cells in rows]}
        write_output(dumps(doc), args.out)
        return status
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "n", *[f"r={r}" for r in range(1, args.max_m + 1)]])
    for m, n, cells in rows:
        w.writerow([m, n, *["" if c is None else c for c in cells], *[""] * (args.max_m - m)])
    write_output(buf.getvalue(), args.out)
    return status


def cmd_fiber_sample(args) -> int:
    spec = _spec(args)
    point, U = fiber_sample(spec, args.seed)
    _emit(args, spec, U, [point])
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "dualize": cmd_dualize,
    "verify": cmd_verify,
    "degree": cmd_degree,
    "table": cmd_table,
    "fiber-sample": cmd_fiber_sample,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; that code means "incomplete" here.
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _env_seed()
        return COMMANDS[args.command](args)
    except (UsageError, InputError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
