"""Random instances and the batch experiments behind the CLI.

Every random object is drawn from ``SeedSequence([seed, d, L, trial])`` so a
trial can be regenerated in isolation.  CSV floats are printed with 17
significant digits, which round-trips IEEE doubles.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .atoms import atom_h1_check, remark_l2_check, validate_atom
from .decomposition import (build_stopping_tree, decompose, max_parent_average,
                            reconstruct, stopping_tree_invariants)
from .dyadic import CubeId, GridFunction, default_storage
from .fileio import dumps_grid_function, format_float
from .hardy import h1_norms

DISTRIBUTIONS = ("uniform-cells", "sparse-spikes", "haar-random")


def trial_rng(seed: int, d: int, depth: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, d, depth, trial]))


def gen_random_meanzero(d: int, depth: int, seed, distribution: str = "uniform-cells",
                        storage: Optional[str] = None, scale: float = 1.0) -> GridFunction:
    """A reproducible random mean-zero function on the level-``depth`` grid.

    ``seed`` is an int, a ``SeedSequence`` or a ``Generator``.

    * ``uniform-cells``: iid uniform values on [-scale, scale].
    * ``sparse-spikes``: 1 to 4 pairs of opposite spikes ``+v, -v`` on two distinct
      random cells.
    * ``haar-random``: sum of random martingale differences, one mean-zero
      pattern on the children of each cube, kept with probability 1/2 (the root
      pattern is kept if all were dropped).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    storage = storage or default_storage(d, depth)
    n = 1 << depth
    if distribution == "sparse-spikes":
        cells: Dict[Tuple[int, ...], float] = {}
        for _ in range(int(rng.integers(1, 5))):
            v = float(rng.uniform(0.1, 1.0)) * scale
            a = tuple(int(i) for i in rng.integers(0, n, d))
            b = tuple(int(i) for i in rng.integers(0, n, d))
            while b == a and n > 1:
                b = tuple(int(i) for i in rng.integers(0, n, d))
            cells[a] = cells.get(a, 0.0) + v
            cells[b] = cells.get(b, 0.0) - v
        cells = {k: v for k, v in cells.items() if v != 0.0}
        f = GridFunction.from_cells(d, depth, cells, storage="sparse")
        return f.to_storage(storage)
    if distribution == "uniform-cells":
        arr = rng.uniform(-scale, scale, size=(n,) * d)
    elif distribution == "haar-random":
        arr = np.zeros((n,) * d)
        keep = [rng.random((1 << level,) * d) < 0.5 for level in range(depth)]
        if depth and not any(k.any() for k in keep):
            keep[0][...] = True  # never return the zero function
        for level in range(depth):
            m = 1 << level
            coef = rng.standard_normal((m,) * d + (2,) * d) * scale
            coef -= coef.mean(axis=tuple(range(d, 2 * d)), keepdims=True)
            coef *= keep[level].reshape((m,) * d + (1,) * d)
            # interleave (cube, child) axes into the level+1 grid, then spread
            order = [ax for i in range(d) for ax in (i, d + i)]
            diff = coef.transpose(order).reshape((2 * m,) * d)
            reps = 1 << (depth - level - 1)
            for ax in range(d):
                diff = np.repeat(diff, reps, axis=ax)
            arr += diff
    else:
        raise ValueError(f"unknown distribution {distribution!r}; choose from {DISTRIBUTIONS}")
    arr = arr - arr.mean()
    return GridFunction.from_array(arr, storage=storage)


# -- scaling suite ------------------------------------------------------------


@dataclass
class ExperimentConfig:
    seed: int = 0
    dims: List[int] = field(default_factory=lambda: [1, 2, 3])
    depth: Dict[int, int] = field(default_factory=dict)
    trials: int = 100
    distribution: str = "uniform-cells"
    storage: Dict[int, str] = field(default_factory=dict)
    tolerances: Dict[str, float] = field(default_factory=lambda: {"recon_rel": 1e-10, "c_atom": 8.0})
    out: Optional[Path] = None
    threads: Optional[int] = None

    def depth_for(self, d: int) -> int:
        return self.depth.get(d, 2)

    def storage_for(self, d: int) -> Optional[str]:
        return self.storage.get(d)


SCALING_COLUMNS = [
    "d", "L", "trial", "distribution", "h1_maximal", "h1_square", "ratio", "lambda_sum",
    "lambda_ratio", "n_atoms", "n_corrections", "pass_rate", "max_atom_h1", "max_c_prime",
    "max_parent_avg", "recon_rel_err", "tree_ok",
]


@dataclass
class TrialResult:
    d: int
    L: int
    trial: int
    distribution: str
    h1_maximal: float
    h1_square: float
    ratio: float
    lambda_sum: float
    lambda_ratio: float
    n_atoms: int
    n_corrections: int
    pass_rate: float
    max_atom_h1: float
    max_c_prime: float
    max_parent_avg: float
    recon_rel_err: float
    tree_ok: bool
    atom_h1: List[float] = field(default_factory=list, repr=False)
    atom_c_prime: List[float] = field(default_factory=list, repr=False)
    failure: Optional[str] = field(default=None, repr=False)

    def row(self) -> List[str]:
        out = []
        for name in SCALING_COLUMNS:
            v = getattr(self, name)
            if isinstance(v, bool):
                out.append("true" if v else "false")
            elif isinstance(v, float):
                out.append(format_float(v))
            else:
                out.append(str(v))
        return out


def analyze_function(f: GridFunction, *, d: int, L: int, trial: int = 0,
                     distribution: str = "given", strict_tree: bool = True) -> TrialResult:
    """Norms, decomposition, atom checks and reconstruction error for one function."""
    norms = h1_norms(f)
    res = decompose(f)
    atoms = list(res.atoms())
    n_valid = 0
    h1s: List[float] = []
    cps: List[float] = []
    failure = None
    for lam, atom in atoms:
        rep = validate_atom(atom)
        if rep.valid:
            n_valid += 1
        elif failure is None:
            failure = f"atom on {atom.cube} lambda={lam!r}: " + " ".join(rep.lines())
        chk = atom_h1_check(atom, validate=False)
        h1s.append(chk.h1_norm)
        cps.append(chk.c_prime)
    rec = reconstruct(res)
    l1 = f.lp_norm(1)
    err = rec.max_abs_diff(f) if l1 == 0 else (rec - f.to_storage(rec.storage)).lp_norm(1) / l1
    if abs(f.integral()) > 1e-12 * max(l1, 1e-300):
        tree_ok = True  # the tree is built for the mean-removed function only
    else:
        disjoint_ok, incl_ok = stopping_tree_invariants(build_stopping_tree(f), f, strict=strict_tree)
        tree_ok = disjoint_ok and incl_ok
    lam_sum = res.lambda_sum
    hm = norms.h1_maximal
    return TrialResult(
        d, L, trial, distribution, hm, norms.h1_square,
        norms.ratio if norms.ratio is not None else float("nan"),
        lam_sum, lam_sum / hm if hm > 0 else float("nan"),
        len(res.terms), len(res.correction_atoms),
        n_valid / len(atoms) if atoms else 1.0,
        max(h1s, default=0.0), max(cps, default=0.0), max_parent_average(res),
        float(err), bool(tree_ok), h1s, cps, failure,
    )


def run_trial(args) -> TrialResult:
    seed, d, L, trial, distribution, storage = args
    f = gen_random_meanzero(d, L, trial_rng(seed, d, L, trial), distribution, storage)
    r = analyze_function(f, d=d, L=L, trial=trial, distribution=distribution)
    if r.failure is not None:
        r.failure = r.failure + "\n" + dumps_grid_function(
            f, [f"failing instance seed={seed} d={d} L={L} trial={trial}"])
    return r


def _map(fn, items, threads: Optional[int]):
    threads = threads or os.cpu_count() or 1
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


class SuiteAbort(RuntimeError):
    """An emitted atom failed validation; ``instance_path`` holds the serialized input."""

    def __init__(self, msg: str, instance_path: Optional[Path]):
        super().__init__(msg)
        self.instance_path = instance_path


def scaling_csv(results: Sequence[TrialResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(SCALING_COLUMNS)
    for r in results:
        w.writerow(r.row())
    return buf.getvalue()


QUANTILES = (0.0, 0.5, 0.9, 0.99, 1.0)
SUMMARY_METRICS = ("lambda_ratio", "ratio", "max_atom_h1", "max_c_prime", "max_parent_avg")


def summary_csv(results: Sequence[TrialResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["d", "metric", "n"] + [f"q{q:g}" for q in QUANTILES])
    for d in sorted({r.d for r in results}):
        rows = [r for r in results if r.d == d]
        for m in SUMMARY_METRICS:
            vals = np.array([getattr(r, m) for r in rows], dtype=float)
            vals = vals[np.isfinite(vals)]
            qs = np.quantile(vals, QUANTILES) if vals.size else [float("nan")] * len(QUANTILES)
            w.writerow([d, m, vals.size] + [format_float(q) for q in qs])
    return buf.getvalue()


def run_scaling_suite(cfg: ExperimentConfig) -> Tuple[str, List[TrialResult]]:
    """Run all (d, trial) pairs; returns the CSV text and the per-trial results.

    Writes ``cfg.out`` and ``<stem>.summary.csv`` next to it when ``cfg.out`` is
    set.  An invalid atom aborts the run after writing the offending instance
    to ``<stem>.failure.txt``.
    """
    items = [(cfg.seed, d, cfg.depth_for(d), t, cfg.distribution, cfg.storage_for(d))
             for d in cfg.dims for t in range(cfg.trials)]
    results = _map(run_trial, items, cfg.threads)
    for r in results:
        if r.failure is not None:
            path = None
            if cfg.out is not None:
                path = Path(cfg.out).with_suffix(".failure.txt")
                path.write_text(r.failure, encoding="utf-8")
            raise SuiteAbort(f"invalid atom in d={r.d} trial={r.trial}: "
                             f"{r.failure.splitlines()[0]}", path)
    text = scaling_csv(results)
    if cfg.out is not None:
        out = Path(cfg.out)
        out.write_text(text, encoding="utf-8", newline="")
        out.with_suffix(".summary.csv").write_text(summary_csv(results), encoding="utf-8",
                                                   newline="")
    return text, results


@dataclass(frozen=True)
class TrendResult:
    slope: float
    ci_low: float
    ci_high: float
    n: int

    @property
    def not_increasing(self) -> bool:
        """The 95% interval contains 0 or lies below it."""
        return self.ci_low <= 0.0


def trend_test(x: Sequence[float], y: Sequence[float], level: float = 0.95,
               resolution: Optional[float] = None) -> TrendResult:
    """Least-squares slope of y on x with a two-sided t confidence interval.

    With ``resolution``, y is first rounded to multiples of it, so that
    floating-point noise in otherwise equal measurements cannot fake a trend.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if resolution:
        y = np.round(y / resolution) * resolution
    fit = stats.linregress(x, y)
    tq = stats.t.ppf(0.5 + level / 2, x.size - 2)
    return TrendResult(float(fit.slope), float(fit.slope - tq * fit.stderr),
                       float(fit.slope + tq * fit.stderr), int(x.size))


# -- parent-operator instances --------------------------------------------------


def gen_remark_instance(d: int, depth: int, rng: np.random.Generator, c_h: float = 8.0,
                        max_parents: int = 6):
    """Random ``(f, pairs)`` for the parent operator whose hypotheses hold with ``c_h``.

    Parents are distinct cubes at random levels (nesting allowed); each gets a
    random nonempty set of children as black cubes, kept pairwise disjoint
    across parents.  f is random, larger on black cubes, and is then rescaled
    so the larger hypothesis quantity equals ``c_h`` (the extreme admissible
    case; the inequality compares a quadratic with a linear quantity).
    """
    n_par = int(rng.integers(1, max_parents + 1))
    pairs = []
    blacks: List[CubeId] = []
    parents = set()
    for _ in range(20 * n_par):
        if len(pairs) >= n_par:
            break
        level = int(rng.integers(0, depth))
        p = CubeId(level, tuple(int(i) for i in rng.integers(0, 1 << level, d)))
        if p in parents:
            continue
        kids = [c for c in p.children() if rng.random() < 0.5] or [p.children()[int(rng.integers(0, 1 << d))]]
        kids = [c for c in kids if all(not c.overlaps(b) for b in blacks)]
        if not kids:
            continue
        parents.add(p)
        blacks.extend(kids)
        pairs.append((p, kids))
    n = 1 << depth
    arr = rng.standard_normal((n,) * d)
    for b in blacks:
        sl = b.slices(depth)
        arr[sl] = arr[sl] * float(rng.uniform(0.0, 4.0)) + float(rng.normal(0.0, 2.0))
    f = GridFunction(d, depth, dense=arr)
    rep = remark_l2_check(f, pairs, c_h)
    worst = max(rep.max_parent_avg, rep.max_remainder_avg)
    if worst > 0:
        f = GridFunction(d, depth, dense=arr * (c_h / worst))
    return f, pairs


def remark_envelope(n: int, seed: int, dims: Sequence[int] = (1, 2, 3), depth: int = 3,
                    c_h: float = 8.0):
    """Ratios ``int |Tf|^2 / int |f_c|`` over ``n`` instances per dimension."""
    rows = []
    for d in dims:
        for i in range(n):
            rng = trial_rng(seed, d, depth, i)
            f, pairs = gen_remark_instance(d, depth, rng, c_h)
            rep = remark_l2_check(f, pairs, c_h * (1 + 1e-12))
            rows.append((d, i, rep))
    return rows
