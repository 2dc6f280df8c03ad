"""Constructive atomic decomposition of mean-zero grid functions.

The pipeline follows the stopping-time construction:

1. ``build_stopping_tree`` finds generations of maximal dyadic cubes on which
   the average of f breaks through ``2**(R+2)``, R being the dyadic bracket of
   the enclosing cube's average.
2. ``pre_atoms`` writes f as a telescoping sum of blocks ``omega`` (one per tree
   node) with weights ``lambda``.
3. ``correction_pass`` replaces the values of a normalized block on the sibling
   children of each parent cube by their common mean, emitting the difference as
   a separate correction atom.

The result reconstructs f exactly (up to rounding) as ``sum lambda * atom``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .atoms import Atom, AtomReport, validate_atom
from .dyadic import CubeId, DyadicError, GridFunction, essentially_disjoint, expand
from . import hardy

# Averages below this multiple of ||f||_inf count as zero when picking the first generation.
ZERO_RTOL = 1e-12
# Blocks smaller than this fraction of their own scale are rounding residue.
NOISE_RTOL = 1e-14


class DecompositionError(ValueError):
    pass


class InternalConsistencyError(AssertionError):
    """A bound that holds by construction was violated: an implementation bug."""


def dyadic_bracket(x: float) -> int:
    """The integer R with ``2**R <= |x| < 2**(R+1)``."""
    if x == 0 or not math.isfinite(x):
        raise ValueError(f"no dyadic bracket for {x}")
    return math.frexp(abs(x))[1] - 1


@dataclass
class StoppingNode:
    cube: CubeId
    average: float
    R: Optional[int]  # None for the root, whose average is zero
    children: List["StoppingNode"] = field(default_factory=list)
    residual: float = 0.0  # root only: largest sub-threshold |average| met in the search

    @property
    def alpha(self) -> int:
        """Exponent with ``|cube| = 2**-alpha``; kept for reference only."""
        return self.cube.dim * self.cube.level

    @property
    def threshold(self) -> float:
        return 0.0 if self.R is None else math.ldexp(1.0, self.R + 2)

    def walk(self) -> Iterator["StoppingNode"]:
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass
class PreAtom:
    cube: CubeId
    omega: np.ndarray  # values on the cube, depth-L window
    lam: float
    child_cubes: List[CubeId]
    depth: int
    average: float = 0.0

    def omega_function(self) -> GridFunction:
        return Atom(self.cube, self.omega, self.depth).f


@dataclass
class DecompositionResult:
    dim: int
    depth: int
    terms: List[Tuple[float, Atom]]
    correction_atoms: List[Tuple[float, Atom]]
    tree: StoppingNode
    mean: float = 0.0  # subtracted from a non-mean-zero input; not an atom

    @property
    def lambda_sum(self) -> float:
        return sum(abs(w) for w, _ in self.terms) + sum(abs(w) for w, _ in self.correction_atoms)

    def atoms(self) -> Iterator[Tuple[float, Atom]]:
        yield from self.terms
        yield from self.correction_atoms

    def validate(self) -> List[AtomReport]:
        return [validate_atom(a) for _, a in self.atoms()]


# -- stopping tree ------------------------------------------------------------


def _pyramid(arr: np.ndarray, depth: int) -> List[np.ndarray]:
    d = arr.ndim
    out = [None] * (depth + 1)
    out[depth] = arr
    for n in range(depth - 1, -1, -1):
        shape = []
        for s in out[n + 1].shape:
            shape += [s // 2, 2]
        out[n] = out[n + 1].reshape(shape).mean(axis=tuple(range(1, 2 * d, 2)))
    return out


def _stopping_cubes(means: List[np.ndarray], cube: CubeId, hits) -> Tuple[List[CubeId], float]:
    """Maximal strict subcubes of ``cube`` whose |average| passes ``hits``.

    Returns the cubes ordered by level then lexicographically, together with the
    largest |average| over the cubes left uncovered (including ``cube`` itself).
    """
    depth = len(means) - 1
    d = cube.dim
    covered = np.zeros((1,) * d, dtype=bool)
    residual = abs(float(means[cube.level][cube.index]))
    found: List[CubeId] = []
    for n in range(cube.level + 1, depth + 1):
        k = n - cube.level
        block = np.abs(means[n][cube.slices(n)])
        covered = expand(covered, 1)
        hit = hits(block) & ~covered
        base = [i << k for i in cube.index]
        for idx in np.argwhere(hit):
            found.append(CubeId(n, tuple(int(b + i) for b, i in zip(base, idx))))
        covered = covered | hit
        free = block[~covered]
        if free.size:
            residual = max(residual, float(free.max()))
    return found, residual


def _dense_mean_zero(f: GridFunction) -> np.ndarray:
    if f.storage == "sparse" and f.n_cells > 2 ** 24:
        raise DecompositionError(
            f"decomposition materializes the grid; 2**{f.dim * f.depth} cells is too many")
    return f.to_array()


def _build_tree(arr: np.ndarray, depth: int, means: List[np.ndarray]) -> StoppingNode:
    d = arr.ndim
    fmax = float(np.max(np.abs(arr))) if arr.size else 0.0
    tol = ZERO_RTOL * fmax
    root_cube = CubeId.root(d)
    root = StoppingNode(root_cube, float(means[0].flat[0]), None)
    if fmax == 0.0:
        return root
    kids, root.residual = _stopping_cubes(means, root_cube, lambda b: b > tol)
    stack = []
    for c in kids:
        avg = float(means[c.level][c.index])
        node = StoppingNode(c, avg, dyadic_bracket(avg))
        root.children.append(node)
        stack.append(node)
    while stack:
        node = stack.pop()
        if node.cube.level == depth:
            continue
        thr = node.threshold
        kids, _ = _stopping_cubes(means, node.cube, lambda b, thr=thr: b >= thr)
        for c in kids:
            avg = float(means[c.level][c.index])
            child = StoppingNode(c, avg, dyadic_bracket(avg))
            node.children.append(child)
            stack.append(child)
    return root


def _require_mean_zero(f: GridFunction, arr: np.ndarray):
    scale = float(np.sum(np.abs(arr)))
    if abs(float(np.sum(arr))) > 1e-10 * max(scale, 1e-300):
        raise DecompositionError("function must have mean zero over the unit cube")


def build_stopping_tree(f: GridFunction) -> StoppingNode:
    """Generations of stopping cubes for a mean-zero f.

    The first generation consists of the maximal cubes with nonzero average
    (|average| above ``1e-12 * ||f||_inf``); each node's children are the maximal
    strict subcubes with ``|average| >= 2**(R+2)``.  Recursion ends at level L.
    """
    arr = _dense_mean_zero(f)
    _require_mean_zero(f, arr)
    return _build_tree(arr, f.depth, _pyramid(arr, f.depth))


def stopping_tree_invariants(tree: StoppingNode, f: GridFunction, *, strict: bool = True):
    """Check that equal-R cubes are essentially disjoint and lie where M*f > 2**R.

    Returns ``(disjoint_ok, inclusion_ok)``.  With ``strict=False`` the inclusion
    uses ``M*f >= 2**R``; the strict form fails when an average is exactly a
    power of two.
    """
    by_r: Dict[int, List[CubeId]] = {}
    nodes = [n for n in tree.walk() if n.R is not None]
    for n in nodes:
        by_r.setdefault(n.R, []).append(n.cube)
    disjoint_ok = all(essentially_disjoint(cubes) for cubes in by_r.values())
    mstar = hardy.maximal_function(f.to_storage("dense")).to_array()
    inclusion_ok = True
    for n in nodes:
        region = mstar[n.cube.slices(f.depth)]
        bound = math.ldexp(1.0, n.R)
        ok = np.all(region > bound) if strict else np.all(region >= bound)
        if not ok:
            inclusion_ok = False
            break
    return disjoint_ok, inclusion_ok


# -- pre-atoms ----------------------------------------------------------------


def _pre_atom(arr: np.ndarray, depth: int, node: StoppingNode) -> PreAtom:
    cube = node.cube
    window = np.array(arr[cube.slices(depth)], dtype=float)
    vol = cube.volume
    if node.R is None:
        omega = window
        lam = 0.0
        for c in node.children:
            omega[c.cube.local_slices(cube, depth)] = c.average
            lam += math.ldexp(1.0, c.R + 1) * c.cube.volume
        # Sub-threshold averages are rounding-level but nonzero; cover them so
        # the outside and parent-average bounds hold for the root atom too.
        if node.residual > 0:
            lam += math.ldexp(1.0, dyadic_bracket(node.residual) + 1) * vol
    else:
        omega = window - node.average
        lam = (math.ldexp(1.0, node.R + 1) + math.ldexp(1.0, node.R + 2)) * vol
        for c in node.children:
            omega[c.cube.local_slices(cube, depth)] = c.average - node.average
            lam += math.ldexp(1.0, c.R + 1) * c.cube.volume
    scale = (abs(node.average) + float(np.max(np.abs(window)))) if window.size else 0.0
    if float(np.max(np.abs(omega))) <= NOISE_RTOL * scale:
        omega = np.zeros_like(omega)
    return PreAtom(cube, omega, lam, [c.cube for c in node.children], depth, node.average)


def pre_atoms(f: GridFunction, tree: StoppingNode) -> List[PreAtom]:
    """One block per tree node, in depth-first order; their omegas sum to f."""
    arr = _dense_mean_zero(f)
    return [_pre_atom(arr, f.depth, node) for node in tree.walk()]


def normalize_and_check(p: PreAtom, rtol: float = 1e-10) -> Tuple[float, np.ndarray]:
    """``a = omega / lambda`` with the bounds that hold by construction asserted.

    Off the child cubes ``|a| <= 1/|Q|``; on them a equals the jump of averages
    over lambda; and ``||a||_{L^1} <= 1``.
    """
    if not np.any(p.omega):
        return 0.0, np.zeros_like(p.omega)
    if not p.lam > 0:
        raise InternalConsistencyError(f"nonpositive lambda {p.lam} on {p.cube}")
    a = p.omega / p.lam
    vol = p.cube.volume
    mask = np.ones(a.shape, dtype=bool)
    for c in p.child_cubes:
        mask[c.local_slices(p.cube, p.depth)] = False
    if np.any(np.abs(a[mask]) * vol > 1.0 + rtol):
        raise InternalConsistencyError(f"|a| exceeds 1/|Q| off the child cubes of {p.cube}")
    l1 = float(np.sum(np.abs(a))) * math.ldexp(1.0, -p.cube.dim * p.depth)
    if l1 > 1.0 + rtol:
        raise InternalConsistencyError(f"pre-atom on {p.cube} has L1 norm {l1} > 1")
    return p.lam, a


# -- correction pass ------------------------------------------------------------


def _recenter(values: np.ndarray) -> np.ndarray:
    return values - float(np.mean(values))


def correction_pass(cube: CubeId, values: np.ndarray, child_cubes: List[CubeId], depth: int):
    """Equalize the atom over the sibling child cubes of every parent.

    ``values`` is the normalized block on ``cube``.  For each parent cube P of
    some child (processed by level, then index) the children under P get the
    common value ``mean(C_k)``; the removed part ``b`` is constant on each child,
    mean zero on P, and is returned as a correction atom on P together with its
    L^1 mass.  Returns ``(adjusted_values, [(mass, correction_atom), ...])``.
    """
    adjusted = np.array(values, dtype=float)
    d = cube.dim
    groups: Dict[CubeId, List[CubeId]] = {}
    for c in child_cubes:
        groups.setdefault(c.parent(), []).append(c)
    corrections = []
    for parent in sorted(groups, key=lambda p: (p.level, p.index)):
        kids = groups[parent]
        if len(kids) < 2:
            continue
        slices = [k.local_slices(cube, depth) for k in kids]
        ck = np.array([float(adjusted[sl].flat[0]) for sl in slices])
        b = _recenter(ck - float(np.mean(ck)))
        kid_vol = kids[0].volume
        mass = float(np.sum(np.abs(b))) * kid_vol
        if mass <= NOISE_RTOL * float(np.sum(np.abs(ck))) * kid_vol:
            continue
        window = np.zeros((1 << (depth - parent.level),) * d)
        for kid, bk, sl in zip(kids, b, slices):
            adjusted[sl] = float(adjusted[sl].flat[0]) - bk
            window[kid.local_slices(parent, depth)] = bk / mass
        corrections.append((mass, Atom(parent, window, depth, tuple(kids))))
    return adjusted, corrections


# -- full pipeline ------------------------------------------------------------


def decompose(f: GridFunction) -> DecompositionResult:
    """Atomic decomposition ``f = mean + sum lambda_i a_i``.

    A nonzero mean is subtracted first and recorded in ``result.mean``.
    """
    arr = _dense_mean_zero(f)
    depth = f.depth
    d = f.dim
    mean = float(np.mean(arr)) if arr.size else 0.0
    scale = float(np.mean(np.abs(arr))) if arr.size else 0.0
    if abs(mean) > 1e-14 * scale:
        arr = arr - mean
    else:
        mean = 0.0
    means = _pyramid(arr, depth)
    tree = _build_tree(arr, depth, means)
    terms: List[Tuple[float, Atom]] = []
    corrections: List[Tuple[float, Atom]] = []
    for node in tree.walk():
        p = _pre_atom(arr, depth, node)
        lam, a = normalize_and_check(p)
        if lam == 0.0:
            continue
        before = float(np.sum(np.abs(a)))
        adjusted, corr = correction_pass(p.cube, a, p.child_cubes, depth)
        for mass, atom in corr:
            corrections.append((lam * mass, atom))
        after = float(np.sum(np.abs(adjusted)))
        if after <= NOISE_RTOL * before:
            continue
        adjusted = _recenter(adjusted)
        terms.append((lam, Atom(p.cube, adjusted, depth, tuple(p.child_cubes))))
    return DecompositionResult(d, depth, terms, corrections, tree, mean)


def reconstruct(result: DecompositionResult) -> GridFunction:
    """``mean + sum lambda * atom`` over terms and corrections."""
    d, depth = result.dim, result.depth
    arr = np.full((1 << depth,) * d, result.mean)
    for w, atom in result.atoms():
        if atom.dim != d or atom.depth != depth:
            raise DyadicError(
                f"atom grid d={atom.dim},L={atom.depth} does not match d={d},L={depth}")
        arr[atom.cube.slices(depth)] += w * atom.values
    return GridFunction(d, depth, dense=arr)


def max_parent_average(result: DecompositionResult) -> float:
    worst = 0.0
    for _, atom in result.atoms():
        means = atom.local_means()
        for b in atom.black_cubes:
            if b.level > atom.cube.level:
                p = b.parent()
                shift = p.level - atom.cube.level
                local = tuple(i - (o << shift) for i, o in zip(p.index, atom.cube.index))
                worst = max(worst, abs(float(means[shift][local])) * atom.cube.volume)
    return worst
