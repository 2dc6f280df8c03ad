"""Command-line interface: ``dyadic-h1 <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 malformed input.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .atoms import DEFAULT_C, Atom, remark_l2_check, validate_atom
from .decomposition import DecompositionError, decompose, max_parent_average
from .dyadic import CubeId, DyadicError
from .experiments import (DISTRIBUTIONS, ExperimentConfig, SuiteAbort, _map, remark_envelope,
                          run_scaling_suite)
from .fileio import (GridFileError, format_float, parse_cube_list, read_atom,
                     read_grid_function, write_atom, write_text)
from .hardy import h1_norms
from .radial import maximal_norm_experiment, ring_lower_bound_check
from .shells import h1_of_shell_function, lower_bound_h

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_MALFORMED = 2


class UsageError(ValueError):
    pass


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_float(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _depth_map(text: str) -> Dict[int, int]:
    """``2`` (all dims) or ``1:5,2:4,3:3``; key 0 holds the default."""
    out: Dict[int, int] = {}
    try:
        for tok in text.split(","):
            if ":" in tok:
                d, L = tok.split(":")
                out[int(d)] = int(L)
            else:
                out[0] = int(tok)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad depth spec {text!r}") from None
    return out


# -- subcommands --------------------------------------------------------------


def cmd_norms(args) -> int:
    f, _ = read_grid_function(args.file)
    rep = h1_norms(f)
    write_text("h1_maximal,h1_square,ratio\r\n" + rep.csv_row() + "\r\n", args.out)
    return EXIT_OK


DECOMPOSE_COLUMNS = ["d", "L", "h1_maximal", "lambda_sum", "n_atoms", "n_corrections",
                     "max_parent_avg"]


def cmd_decompose(args) -> int:
    f, _ = read_grid_function(args.file)
    try:
        res = decompose(f)
    except DecompositionError as exc:
        raise UsageError(str(exc)) from None
    reports = res.validate()
    hm = h1_norms(f).h1_maximal
    row = [f.dim, f.depth, hm, res.lambda_sum, len(res.terms), len(res.correction_atoms),
           max_parent_average(res)]
    if args.emit_atoms:
        out = Path(args.emit_atoms)
        out.mkdir(parents=True, exist_ok=True)
        for i, (lam, atom) in enumerate(res.atoms()):
            kind = "atom" if i < len(res.terms) else "corr"
            write_atom(atom, lam, out / f"{i:04d}_{kind}.txt")
    if args.csv:
        text = _csv(DECOMPOSE_COLUMNS, [row])
    else:
        lines = [f"{k}={format_float(v) if isinstance(v, float) else v}"
                 for k, v in zip(DECOMPOSE_COLUMNS, row)]
        if res.mean != 0.0:
            lines.append(f"mean={format_float(res.mean)}")
        for i, (lam, atom) in enumerate(res.atoms()):
            black = ";".join(str(c) for c in atom.black_cubes)
            lines.append(f"atom {i} cube={atom.cube} lambda={format_float(lam)} "
                         f"valid={'true' if reports[i].valid else 'false'} black={black}")
        text = "\n".join(lines) + "\n"
    write_text(text, args.out)
    if not all(r.valid for r in reports):
        print("error: decomposition emitted an invalid atom", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_validate_atom(args) -> int:
    f, comments = read_grid_function(args.file)
    black = [c for spec in (args.black or []) for c in parse_cube_list(spec)]
    if args.cube is None:
        # fall back to the '# atom cube=... black=...' header of an emitted atom file
        if not any(c.startswith("atom ") for c in comments):
            raise UsageError("--cube is required for files without an '# atom' header")
        stored, _ = read_atom(args.file)
        cube = stored.cube
        black = black if args.black else list(stored.black_cubes)
    else:
        cube = CubeId.parse(args.cube)
    if cube.dim != f.dim or cube.level > f.depth:
        raise UsageError(f"cube {cube} does not fit a d={f.dim}, L={f.depth} grid")
    atom = Atom.from_function(cube, f, black, c_bound=args.c)
    rep = validate_atom(atom, classical=args.classical)
    write_text("\n".join(rep.lines()) + "\n", args.out)
    return EXIT_OK if rep.valid else EXIT_INVALID


def cmd_scaling(args) -> int:
    depth = {d: args.depth.get(d, args.depth.get(0, 2)) for d in args.dims}
    storage = {d: "sparse" for d in args.sparse_dims}
    cfg = ExperimentConfig(seed=args.seed, dims=args.dims, depth=depth, trials=args.trials,
                           distribution=args.distribution, storage=storage,
                           out=Path(args.out) if args.out else None, threads=args.threads)
    try:
        text, _ = run_scaling_suite(cfg)
    except SuiteAbort as exc:
        where = f" (instance written to {exc.instance_path})" if exc.instance_path else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_INVALID
    if cfg.out is None:
        sys.stdout.write(text)
    return EXIT_OK


def _kernel_job(item):
    d, atom_id, path, tmax, per_decade = item
    atom, _ = read_atom(path)
    return maximal_norm_experiment(d, [(atom_id, atom)], tmax, per_decade=per_decade)[0]


def cmd_kernel_experiment(args) -> int:
    files = sorted(Path(args.atoms).glob("*.txt"))
    if not files:
        raise UsageError(f"no atom files (*.txt) in {args.atoms}")
    for p in files:
        atom, _ = read_atom(p)  # parse up front so malformed input fails before work starts
        if atom.dim != args.d:
            raise UsageError(f"{p}: atom dimension {atom.dim} differs from --d {args.d}")
    if args.d > 3:
        raise UsageError("kernel-experiment supports d <= 3")
    tmax = args.tmax if args.tmax is not None else 1.0 / args.d
    items = [(args.d, p.stem, str(p), tmax, args.per_decade) for p in files]
    rows = _map(_kernel_job, items, args.threads)
    text = _csv(["d", "atom_id", "l1", "maximal_l1", "ratio"],
                [[args.d, r.atom_id, r.l1, r.maximal_l1, r.ratio] for r in rows])
    write_text(text, args.out)
    return EXIT_OK


def lower_bound_rows(dims: Sequence[int], ring_points: int, seed: int):
    rows = []
    for d in dims:
        h, _ = lower_bound_h(d)
        val = h1_of_shell_function(h)
        ring = ring_lower_bound_check(d, ring_points, seed)
        rows.append([d, val, val / math.log2(d), ring.min_ratio])
    return rows


def cmd_lower_bound(args) -> int:
    if any(d < 2 for d in args.dims):
        raise UsageError("lower-bound needs every d >= 2")
    rows = lower_bound_rows(args.dims, args.ring_points, args.seed)
    write_text(_csv(["d", "h1_of_h", "h1_over_log2d", "ring_bound_min_ratio"], rows), args.out)
    return EXIT_OK


L2_COLUMNS = ["d", "instance", "lhs", "rhs", "ratio", "max_parent_avg", "max_remainder_avg",
              "hypotheses_ok"]


def _parse_pairs(text: str):
    """``P>c1;c2 | P2>c3`` with cubes as ``level:i1,...``."""
    pairs = []
    for chunk in text.split("|"):
        if not chunk.strip():
            continue
        if ">" not in chunk:
            raise UsageError(f"pair {chunk.strip()!r} must look like parent>child;child")
        p, kids = chunk.split(">", 1)
        pairs.append((CubeId.parse(p), parse_cube_list(kids)))
    return pairs


def _l2_row(d, i, rep):
    return [d, i, rep.lhs, rep.rhs, rep.ratio if rep.ratio is not None else "",
            rep.max_parent_avg, rep.max_remainder_avg, "true" if rep.hypotheses_ok else "false"]


def cmd_l2_check(args) -> int:
    if args.file:
        if not args.pairs:
            raise UsageError("--pairs is required with a function file")
        f, _ = read_grid_function(args.file)
        rep = remark_l2_check(f, _parse_pairs(args.pairs), args.c_h)
        write_text(_csv(L2_COLUMNS, [_l2_row(f.dim, 0, rep)]), args.out)
        return EXIT_OK if rep.hypotheses_ok else EXIT_INVALID
    rows = remark_envelope(args.random, args.seed, args.dims, args.depth, args.c_h)
    write_text(_csv(L2_COLUMNS, [_l2_row(d, i, r) for d, i, r in rows]), args.out)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base random seed (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: machine parallelism)")
    common.add_argument("--out", default=None, help="output file (default: stdout)")

    p = argparse.ArgumentParser(prog="dyadic-h1", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("norms", parents=[common], help="H^1 norms of a grid function as CSV")
    s.add_argument("file")
    s.set_defaults(func=cmd_norms)

    s = sub.add_parser("decompose", parents=[common], help="atomic decomposition")
    s.add_argument("file")
    s.add_argument("--emit-atoms", metavar="DIR")
    s.add_argument("--csv", action="store_true", help="print a one-row CSV summary")
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("validate-atom", parents=[common], help="check the atom conditions")
    s.add_argument("file")
    s.add_argument("--cube", help="level:i1,...,id (default: from the file's '# atom' header)")
    s.add_argument("--black", action="append", help="black cubes, ';'-separated; repeatable")
    s.add_argument("--c", type=float, default=DEFAULT_C, help="parent-average constant")
    s.add_argument("--classical", action="store_true",
                   help="classical atom: no black cubes, L-infinity bound on the whole cube")
    s.set_defaults(func=cmd_validate_atom)

    s = sub.add_parser("scaling", parents=[common], help="random-instance scaling suite")
    s.add_argument("--dims", type=_int_list, default=[1, 2, 3])
    s.add_argument("--depth", type=_depth_map, default={0: 2},
                   help="L for all dims, or per dim as 1:5,2:4")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--distribution", choices=DISTRIBUTIONS, default="uniform-cells")
    s.add_argument("--sparse-dims", type=_int_list, default=[],
                   help="dimensions that use sparse storage")
    s.set_defaults(func=cmd_scaling)

    s = sub.add_parser("kernel-experiment", parents=[common],
                       help="radial maximal L1 ratios for atom files")
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--atoms", required=True, help="directory of atom files")
    s.add_argument("--tmax", type=float, default=None, help="largest scale (default 1/d)")
    s.add_argument("--per-decade", type=int, default=64)
    s.set_defaults(func=cmd_kernel_experiment)

    s = sub.add_parser("lower-bound", parents=[common], help="shell norms and the ring bound")
    s.add_argument("--dims", type=_int_list, default=[4, 8, 16, 32, 64])
    s.add_argument("--ring-points", type=int, default=50)
    s.set_defaults(func=cmd_lower_bound)

    s = sub.add_parser("l2-check", parents=[common], help="L2 bound of the parent operator")
    s.add_argument("file", nargs="?")
    s.add_argument("--pairs", help="parent>child;child|parent>child ...")
    s.add_argument("--random", type=int, default=200, help="random instances per dimension")
    s.add_argument("--dims", type=_int_list, default=[1, 2, 3])
    s.add_argument("--depth", type=int, default=3)
    s.add_argument("--c-h", type=float, default=DEFAULT_C)
    s.set_defaults(func=cmd_l2_check)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GridFileError, DyadicError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
