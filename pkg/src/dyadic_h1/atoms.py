"""Atoms with structured exceptional sets: validation, H^1 bounds, and the L^2 parent operator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .dyadic import (CubeId, DyadicError, GridFunction, coarsen_sum, default_storage,
                     essentially_disjoint, expand)
from . import hardy

DEFAULT_C = 8.0
# Relative slack on the inequality checks; absorbs rounding in normalized atoms.
CHECK_RTOL = 1e-10


class AtomStructureError(DyadicError):
    """Black cubes that are not inside the atom's cube, overlap, or are too fine."""


class InvalidAtomError(ValueError):
    pass


@dataclass(eq=False)
class Atom:
    """Candidate atom supported on ``cube``.

    ``values`` is the window of the function over ``cube`` at resolution
    ``depth`` (shape ``(2**(depth - cube.level),)*d``); the function is zero
    elsewhere.  Atoms read from a whole-grid function keep the totals of
    whatever lies outside the cube in ``outside`` so that the support check can
    report it.
    """

    cube: CubeId
    values: np.ndarray
    depth: int
    black_cubes: Tuple[CubeId, ...] = ()
    c_bound: float = DEFAULT_C
    outside: Optional[GridFunction] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        w = 1 << (self.depth - self.cube.level)
        if self.values.shape != (w,) * self.cube.dim:
            raise DyadicError(f"atom window must have shape {(w,) * self.cube.dim}, "
                              f"got {self.values.shape}")
        self.black_cubes = tuple(self.black_cubes)

    @classmethod
    def from_function(cls, cube: CubeId, f: GridFunction, black_cubes: Sequence[CubeId] = (),
                      c_bound: float = DEFAULT_C) -> "Atom":
        arr = f.to_array()
        window = arr[cube.slices(f.depth)].copy()
        arr[cube.slices(f.depth)] = 0.0
        outside = GridFunction(f.dim, f.depth, dense=arr) if np.any(arr) else None
        return cls(cube, window, f.depth, tuple(black_cubes), c_bound, outside)

    @property
    def dim(self) -> int:
        return self.cube.dim

    @property
    def cell_volume(self) -> float:
        return math.ldexp(1.0, -self.dim * self.depth)

    @property
    def f(self) -> GridFunction:
        """The atom as a function on the whole unit cube."""
        storage = default_storage(self.dim, self.depth)
        if storage == "dense":
            arr = np.zeros((1 << self.depth,) * self.dim)
            arr[self.cube.slices(self.depth)] = self.values
            g = GridFunction(self.dim, self.depth, dense=arr)
        else:
            cells = {}
            base = [i << (self.depth - self.cube.level) for i in self.cube.index]
            for idx in np.argwhere(self.values != 0):
                cells[tuple(int(b + i) for b, i in zip(base, idx))] = float(self.values[tuple(idx)])
            g = GridFunction(self.dim, self.depth, sparse=cells)
        return g if self.outside is None else g + self.outside.to_storage(g.storage)

    def integral(self) -> float:
        total = float(np.sum(self.values)) * self.cell_volume
        return total + (self.outside.integral() if self.outside is not None else 0.0)

    def l1_norm(self) -> float:
        total = float(np.sum(np.abs(self.values))) * self.cell_volume
        return total + (self.outside.lp_norm(1) if self.outside is not None else 0.0)

    def linf_norm(self) -> float:
        m = float(np.max(np.abs(self.values)))
        return max(m, self.outside.linf_norm()) if self.outside is not None else m

    def scaled(self, c: float) -> "Atom":
        out = None if self.outside is None else self.outside * c
        return Atom(self.cube, self.values * c, self.depth, self.black_cubes, self.c_bound, out)

    def local_means(self) -> List[np.ndarray]:
        """Averages over subcubes of ``cube`` at levels cube.level..depth (index 0 = cube)."""
        k = self.depth - self.cube.level
        out = [None] * (k + 1)
        out[k] = self.values
        for j in range(k - 1, -1, -1):
            out[j] = coarsen_sum(out[j + 1], 1) * math.ldexp(1.0, -self.dim)
        return out


@dataclass(frozen=True)
class AtomReport:
    mean_ok: bool
    support_ok: bool
    l1_ok: bool
    linf_ok: bool
    exceptional_cover_ok: bool
    parent_avg_ok: bool
    constancy_ok: bool
    worst_parent_avg: float
    h1_norm: float

    @property
    def valid(self) -> bool:
        return (self.mean_ok and self.support_ok and self.l1_ok and self.linf_ok
                and self.exceptional_cover_ok and self.parent_avg_ok and self.constancy_ok)

    def lines(self) -> List[str]:
        keys = ["valid", "mean_ok", "support_ok", "l1_ok", "linf_ok", "exceptional_cover_ok",
                "parent_avg_ok", "constancy_ok", "worst_parent_avg", "h1_norm"]
        out = []
        for k in keys:
            v = getattr(self, k)
            out.append(f"{k}={str(v).lower() if isinstance(v, bool) else format(v, '.17g')}")
        return out


def _check_structure(atom: Atom):
    for b in atom.black_cubes:
        if b.dim != atom.dim:
            raise AtomStructureError(f"black cube {b} has dimension {b.dim}, atom has {atom.dim}")
        if b.level > atom.depth:
            raise AtomStructureError(f"black cube {b} is finer than depth {atom.depth}")
        if not atom.cube.contains(b):
            raise AtomStructureError(f"black cube {b} is not inside {atom.cube}")
    if not essentially_disjoint(atom.black_cubes):
        raise AtomStructureError("black cubes are not essentially disjoint")


def _parent_average(atom: Atom, means: List[np.ndarray], black: CubeId) -> float:
    if black.level == 0:
        return 0.0
    p = black.parent()
    if p.level >= atom.cube.level:
        shift = p.level - atom.cube.level
        local = tuple(i - (o << shift) for i, o in zip(p.index, atom.cube.index))
        return float(means[shift][local])
    # The parent strictly contains the atom's cube.
    total = float(np.sum(atom.values)) * atom.cell_volume
    return total / p.volume


def _local_maximal(atom: Atom, means: List[np.ndarray]) -> np.ndarray:
    k = len(means) - 1
    m = np.abs(atom.values)
    for j in range(k):
        m = np.maximum(m, expand(np.abs(means[j]), k - j))
    return m


def _h1_and_cprime(atom: Atom) -> Tuple[float, float]:
    """``||a||_{H^1}`` and the least C' with ``M*a <= C'/|Q| + |a|`` everywhere."""
    if atom.outside is not None:
        g = atom.f
        mf = hardy.maximal_function(g)
        excess = (mf - g.abs()).linf_norm() if mf.storage == "dense" else max(
            (v - abs(g.value_at(k)) for k, v in mf.items()), default=0.0)
        return mf.lp_norm(1), max(excess, 0.0) * atom.cube.volume
    means = atom.local_means()
    mloc = _local_maximal(atom, means)
    vol_q = atom.cube.volume
    cprime = float(np.max(mloc - np.abs(atom.values))) * vol_q
    # averages come from summed pyramids; excesses below this are rounding
    noise = 64 * np.finfo(float).eps * float(np.max(mloc)) * vol_q
    h1 = float(np.sum(mloc)) * atom.cell_volume
    # Ancestors of the cube average the atom's (near-zero) integral over larger cubes.
    integral = abs(float(np.sum(atom.values)) * atom.cell_volume)
    lvl = atom.cube.level
    if lvl > 0 and integral > 0:
        h1 += lvl * (1.0 - math.ldexp(1.0, -atom.dim)) * integral
        cprime = max(cprime, integral / atom.cube.parent().volume * vol_q)
    return h1, cprime if cprime > noise else 0.0


def validate_atom(atom: Atom, *, classical: bool = False, rtol: float = CHECK_RTOL) -> AtomReport:
    """Check the atom conditions on ``atom``.

    With ``classical=True`` only the mean, support, L^1 and L^infinity
    conditions are required; the black-cube conditions are reported as passing.
    """
    _check_structure(atom)
    d = atom.dim
    vol_q = atom.cube.volume
    integral = atom.integral()
    l1 = atom.l1_norm()
    linf = atom.linf_norm()

    mean_ok = abs(integral) <= rtol * l1 if l1 > 0 else integral == 0.0
    support_ok = atom.outside is None or atom.outside.lp_norm(1) == 0.0
    l1_ok = l1 <= 1.0 + rtol
    linf_ok = linf * vol_q <= math.ldexp(1.0, d + 1) * (1.0 + rtol)

    means = atom.local_means()
    worst = 0.0
    for b in atom.black_cubes:
        worst = max(worst, abs(_parent_average(atom, means, b)) * vol_q)

    if classical:
        cover_ok = parent_ok = const_ok = True
    else:
        covered = np.zeros(atom.values.shape, dtype=bool)
        const_ok = True
        for b in atom.black_cubes:
            sl = b.local_slices(atom.cube, atom.depth)
            covered[sl] = True
            block = atom.values[sl]
            if not np.all(block == block.flat[0]):
                const_ok = False
        exceptional = np.abs(atom.values) * vol_q > 1.0 + rtol
        cover_ok = not np.any(exceptional & ~covered)
        if atom.outside is not None and atom.outside.linf_norm() * vol_q > 1.0 + rtol:
            cover_ok = False
        parent_ok = worst <= atom.c_bound * (1.0 + rtol)

    h1, _ = _h1_and_cprime(atom)
    return AtomReport(mean_ok, support_ok, l1_ok, linf_ok, cover_ok, parent_ok, const_ok,
                      worst, h1)


class H1Check(NamedTuple):
    h1_norm: float
    c_prime: float
    pointwise_ok: bool


def atom_h1_check(atom: Atom, threshold: float = DEFAULT_C, *, validate: bool = True) -> H1Check:
    """H^1 norm of an atom and the smallest constant in ``M*a <= C'/|Q| + |a|``."""
    if validate:
        report = validate_atom(atom)
        if not report.valid:
            raise InvalidAtomError(f"atom on {atom.cube} fails validation: {report}")
    h1, cprime = _h1_and_cprime(atom)
    return H1Check(h1, cprime, cprime <= threshold)


# -- the parent operator T --------------------------------------------------

Pair = Tuple[CubeId, Sequence[CubeId]]


def _check_pairs(pairs: Sequence[Pair]):
    parents = [p for p, _ in pairs]
    if len(set(parents)) != len(parents):
        raise DyadicError("parents must be pairwise distinct")
    for p, kids in pairs:
        for c in kids:
            if c.level != p.level + 1 or c.parent() != p:
                raise DyadicError(f"{c} is not an immediate child of {p}")


def remark_T(f: GridFunction, pairs: Sequence[Pair]) -> GridFunction:
    """``T f = sum_P 1_P/|P| * sum_{black children c of P} int_c f``."""
    _check_pairs(pairs)
    out = GridFunction.zeros(f.dim, f.depth, storage="dense" if f.storage == "dense" else None)
    if not pairs:
        return out.to_storage(f.storage)
    arr = out.to_array()
    for p, kids in pairs:
        mass = sum(f.average(c) * c.volume for c in kids)
        arr[p.slices(f.depth)] += mass / p.volume
    return GridFunction.from_array(arr, storage=f.storage)


@dataclass(frozen=True)
class L2CheckReport:
    lhs: float
    rhs: float
    ratio: Optional[float]
    max_parent_avg: float
    max_remainder_avg: float
    hypotheses_ok: bool


def remark_l2_check(f: GridFunction, pairs: Sequence[Pair], c_h: float = DEFAULT_C) -> L2CheckReport:
    """Compare ``int |T f|^2`` with ``int |f_c|``, f_c being f on the black cubes.

    The hypotheses behind the inequality are measured, not assumed: for each
    parent P, ``|<f>_P|`` and ``|int_{P minus black cubes inside P} f| / |P|``
    must not exceed ``c_h``.
    """
    tf = remark_T(f, pairs)
    lhs = tf.lp_norm(2) ** 2
    blacks = [c for _, kids in pairs for c in kids]
    rhs = f.restrict(blacks).lp_norm(1) if blacks else 0.0
    max_par = 0.0
    max_rem = 0.0
    for p, _ in pairs:
        avg = f.average(p)
        inner = sum(f.average(c) * c.volume for c in blacks if p.contains(c))
        rem = abs(avg * p.volume - inner) / p.volume
        max_par = max(max_par, abs(avg))
        max_rem = max(max_rem, rem)
    ok = max_par <= c_h and max_rem <= c_h
    return L2CheckReport(lhs, rhs, lhs / rhs if rhs > 0 else None, max_par, max_rem, ok)
