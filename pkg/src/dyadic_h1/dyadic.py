"""Dyadic cubes in [0,1)^d and piecewise-constant functions resolved at a finest level.

Levels count refinements: a cube at level n has sidelength 2**-n, so larger n
means finer cubes.  All volumes and averages are sums of cell values scaled by
powers of two, so no geometric floating-point coordinates are involved.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

# Past this many cells a function defaults to sparse storage.
DENSE_CELL_LIMIT = 2 ** 22
# Deepest refinement level a CubeId may reach.
MAX_LEVEL = 64

Index = Tuple[int, ...]


class DyadicError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class CubeId:
    """A dyadic cube ``2**-level * ([0,1)^d + index)`` inside the unit cube."""

    level: int
    index: Index

    def __post_init__(self):
        if self.level < 0:
            raise DyadicError(f"negative level {self.level}")
        if self.level > MAX_LEVEL:
            raise DyadicError(f"level {self.level} exceeds MAX_LEVEL={MAX_LEVEL}")
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))
        n = 1 << self.level
        for i in self.index:
            if not 0 <= i < n:
                raise DyadicError(f"index {self.index} out of range at level {self.level}")

    @classmethod
    def _trusted(cls, level: int, index: Index) -> "CubeId":
        # skips validation; for cubes derived from an already valid one
        obj = object.__new__(cls)
        object.__setattr__(obj, "level", level)
        object.__setattr__(obj, "index", index)
        return obj

    @classmethod
    def root(cls, dim: int) -> "CubeId":
        return cls(0, (0,) * dim)

    @property
    def dim(self) -> int:
        return len(self.index)

    @property
    def volume(self) -> float:
        return math.ldexp(1.0, -self.dim * self.level)

    @property
    def side(self) -> float:
        return math.ldexp(1.0, -self.level)

    def parent(self) -> "CubeId":
        if self.level == 0:
            raise DyadicError("root has no parent")
        return CubeId._trusted(self.level - 1, tuple(i >> 1 for i in self.index))

    def ancestor(self, level: int) -> "CubeId":
        if not 0 <= level <= self.level:
            raise DyadicError(f"no ancestor at level {level} for {self}")
        shift = self.level - level
        return CubeId._trusted(level, tuple(i >> shift for i in self.index))

    def children(self) -> list["CubeId"]:
        """The 2**d children, last coordinate varying fastest."""
        if self.level + 1 > MAX_LEVEL:
            raise DyadicError(f"cannot refine past MAX_LEVEL={MAX_LEVEL}")
        base = tuple(2 * i for i in self.index)
        return [
            CubeId._trusted(self.level + 1, tuple(b + k for b, k in zip(base, bits)))
            for bits in itertools.product((0, 1), repeat=self.dim)
        ]

    def contains(self, other: "CubeId") -> bool:
        """True when ``other`` is this cube or one of its descendants."""
        if other.level < self.level or len(other.index) != len(self.index):
            return False
        shift = other.level - self.level
        return all((i >> shift) == j for i, j in zip(other.index, self.index))

    def overlaps(self, other: "CubeId") -> bool:
        return self.contains(other) or other.contains(self)

    def slices(self, depth: int) -> Tuple[slice, ...]:
        """Array slices selecting this cube's cells on a level-``depth`` grid."""
        if depth < self.level:
            raise DyadicError(f"cube at level {self.level} is finer than depth {depth}")
        w = 1 << (depth - self.level)
        return tuple(slice(i * w, (i + 1) * w) for i in self.index)

    def local_slices(self, outer: "CubeId", depth: int) -> Tuple[slice, ...]:
        """Slices of this cube inside the level-``depth`` window array of ``outer``."""
        if not outer.contains(self):
            raise DyadicError(f"{self} is not inside {outer}")
        w = 1 << (depth - self.level)
        shift = self.level - outer.level
        return tuple(
            slice((i - (o << shift)) * w, (i - (o << shift) + 1) * w)
            for i, o in zip(self.index, outer.index)
        )

    def __str__(self) -> str:
        return f"{self.level}:" + ",".join(str(i) for i in self.index)

    @classmethod
    def parse(cls, text: str) -> "CubeId":
        """Parse ``level:i1,i2,...``."""
        try:
            level_s, idx_s = text.strip().split(":")
            level = int(level_s)
            index = tuple(int(s) for s in idx_s.split(","))
        except ValueError as exc:
            raise DyadicError(f"malformed cube {text!r}; expected level:i1,...,id") from exc
        return cls(level, index)


def essentially_disjoint(cubes: Sequence[CubeId]) -> bool:
    """No cube of the family contains another (dyadic cubes either nest or are disjoint)."""
    seen = set(cubes)
    if len(seen) != len(cubes):
        return False
    for c in cubes:
        for lvl in range(c.level):
            if c.ancestor(lvl) in seen:
                return False
    return True


def expand(a: np.ndarray, levels: int) -> np.ndarray:
    """Repeat every entry of ``a`` over a ``2**levels`` block along each axis."""
    if levels == 0:
        return a
    r = 1 << levels
    a = np.asarray(a)
    inter = []
    target = []
    for s in a.shape:
        inter += [s, 1]
        target += [s, r]
    return np.broadcast_to(a.reshape(inter), target).reshape([s * r for s in a.shape])


def coarsen_sum(a: np.ndarray, levels: int) -> np.ndarray:
    """Sum ``2**levels`` blocks along each axis."""
    if levels == 0:
        return a
    r = 1 << levels
    shape = []
    for s in a.shape:
        shape += [s // r, r]
    return a.reshape(shape).sum(axis=tuple(range(1, 2 * a.ndim, 2)))


def default_storage(dim: int, depth: int) -> str:
    return "dense" if dim * depth <= DENSE_CELL_LIMIT.bit_length() - 1 else "sparse"


class GridFunction:
    """Piecewise-constant real function on [0,1)^d, constant on level-``depth`` cells.

    Storage is either a dense ndarray of shape ``(2**depth,)*dim`` or a sparse
    dict mapping cell indices to values (missing cells are zero).  Instances are
    treated as immutable; derived pyramids are cached.
    """

    __slots__ = ("dim", "depth", "_dense", "_sparse", "_cache")

    def __init__(self, dim: int, depth: int, *, dense: Optional[np.ndarray] = None,
                 sparse: Optional[Mapping[Index, float]] = None):
        if dim < 1 or depth < 0:
            raise DyadicError(f"invalid grid dim={dim} depth={depth}")
        if (dense is None) == (sparse is None):
            raise DyadicError("exactly one of dense/sparse storage must be given")
        self.dim = dim
        self.depth = depth
        self._cache: dict = {}
        n = 1 << depth
        if dense is not None:
            arr = np.asarray(dense, dtype=float)
            if arr.shape != (n,) * dim:
                raise DyadicError(f"dense values must have shape {(n,) * dim}, got {arr.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            self._dense = arr
            self._sparse = None
        else:
            entries: Dict[Index, float] = {}
            for key, v in sparse.items():
                key = tuple(int(i) for i in key)
                if len(key) != dim or any(not 0 <= i < n for i in key):
                    raise DyadicError(f"cell index {key} out of range for d={dim} L={depth}")
                v = float(v)
                if v != 0.0:
                    entries[key] = v
            self._dense = None
            self._sparse = entries

    # -- construction ----------------------------------------------------

    @classmethod
    def from_array(cls, values, storage: Optional[str] = None) -> "GridFunction":
        arr = np.asarray(values, dtype=float)
        n = arr.shape[0] if arr.ndim else 0
        if arr.ndim == 0 or n & (n - 1) or any(s != n for s in arr.shape):
            raise DyadicError(f"array shape {arr.shape} is not a dyadic grid")
        depth = n.bit_length() - 1
        f = cls(arr.ndim, depth, dense=arr)
        return f if storage in (None, "dense") else f.to_storage(storage)

    @classmethod
    def from_cells(cls, dim: int, depth: int, cells: Mapping[Index, float],
                   storage: Optional[str] = None) -> "GridFunction":
        f = cls(dim, depth, sparse=cells)
        storage = storage or default_storage(dim, depth)
        return f if storage == "sparse" else f.to_storage(storage)

    @classmethod
    def zeros(cls, dim: int, depth: int, storage: Optional[str] = None) -> "GridFunction":
        storage = storage or default_storage(dim, depth)
        if storage == "dense":
            return cls(dim, depth, dense=np.zeros((1 << depth,) * dim))
        return cls(dim, depth, sparse={})

    @classmethod
    def indicator(cls, cube: CubeId, depth: int, value: float = 1.0,
                  storage: Optional[str] = None) -> "GridFunction":
        storage = storage or default_storage(cube.dim, depth)
        if storage == "dense":
            arr = np.zeros((1 << depth,) * cube.dim)
            arr[cube.slices(depth)] = value
            return cls(cube.dim, depth, dense=arr)
        return cls(cube.dim, depth, sparse={k: value for k in cells_of(cube, depth)})

    # -- storage ---------------------------------------------------------

    @property
    def storage(self) -> str:
        return "dense" if self._dense is not None else "sparse"

    @property
    def n_cells(self) -> int:
        return 1 << (self.dim * self.depth)

    @property
    def cell_volume(self) -> float:
        return math.ldexp(1.0, -self.dim * self.depth)

    def to_storage(self, storage: str) -> "GridFunction":
        if storage == self.storage:
            return self
        if storage == "dense":
            return GridFunction(self.dim, self.depth, dense=self.to_array())
        if storage == "sparse":
            return GridFunction(self.dim, self.depth, sparse=dict(self.items()))
        raise DyadicError(f"unknown storage {storage!r}")

    def to_array(self) -> np.ndarray:
        """Dense copy of the values (materializes sparse storage)."""
        if self._dense is not None:
            return self._dense.copy()
        arr = np.zeros((1 << self.depth,) * self.dim)
        for k, v in self._sparse.items():
            arr[k] = v
        return arr

    def items(self) -> Iterator[Tuple[Index, float]]:
        """Nonzero cells as ``(index, value)`` in lexicographic order."""
        if self._dense is not None:
            for idx in np.argwhere(self._dense != 0):
                k = tuple(int(i) for i in idx)
                yield k, float(self._dense[k])
        else:
            for k in sorted(self._sparse):
                yield k, self._sparse[k]

    def value_at(self, index: Index) -> float:
        if self._dense is not None:
            return float(self._dense[tuple(index)])
        return self._sparse.get(tuple(index), 0.0)

    # -- pyramid of cube sums -------------------------------------------

    def level_sums(self, n: int):
        """Sums of raw cell values over every level-``n`` cube.

        Dense storage returns an array of shape ``(2**n,)*d``; sparse storage a
        dict holding the cubes that contain at least one nonzero cell.
        """
        if not 0 <= n <= self.depth:
            raise DyadicError(f"level {n} outside 0..{self.depth}")
        key = ("sums", n)
        if key in self._cache:
            return self._cache[key]
        if n == self.depth:
            out = self._dense if self._dense is not None else self._sparse
        elif self._dense is not None:
            out = coarsen_sum(self.level_sums(n + 1), 1)
        else:
            out = {}
            for k, v in self.level_sums(n + 1).items():
                pk = tuple(i >> 1 for i in k)
                out[pk] = out.get(pk, 0.0) + v
        self._cache[key] = out
        return out

    def level_means(self, n: int):
        """Averages over level-``n`` cubes, same container type as :meth:`level_sums`."""
        key = ("means", n)
        if key not in self._cache:
            scale = math.ldexp(1.0, -self.dim * (self.depth - n))
            sums = self.level_sums(n)
            if isinstance(sums, dict):
                self._cache[key] = {k: v * scale for k, v in sums.items()}
            else:
                self._cache[key] = sums * scale
        return self._cache[key]

    def average(self, cube: CubeId) -> float:
        """Exact mean of the function over ``cube``."""
        if cube.dim != self.dim:
            raise DyadicError(f"cube dimension {cube.dim} != function dimension {self.dim}")
        if cube.level > self.depth:
            raise DyadicError(f"cube level {cube.level} exceeds depth {self.depth}")
        means = self.level_means(cube.level)
        if isinstance(means, dict):
            return means.get(cube.index, 0.0)
        return float(means[cube.index])

    def conditional_expectation(self, n: int) -> "GridFunction":
        """Replace the function by its average on each level-``n`` cube."""
        if not 0 <= n <= self.depth:
            raise DyadicError(f"conditional expectation level {n} outside 0..{self.depth}")
        if n == self.depth:
            return self
        means = self.level_means(n)
        if self._dense is not None:
            return GridFunction(self.dim, self.depth, dense=expand(means, self.depth - n))
        cells: Dict[Index, float] = {}
        for k, m in means.items():
            if m != 0.0:
                for cell in cells_of(CubeId(n, k), self.depth):
                    cells[cell] = m
        return GridFunction(self.dim, self.depth, sparse=cells)

    # -- norms -------------------------------------------------------------

    def _values(self) -> np.ndarray:
        if self._dense is not None:
            return self._dense.ravel()
        return np.fromiter(self._sparse.values(), dtype=float, count=len(self._sparse))

    def integral(self) -> float:
        return float(np.sum(self._values())) * self.cell_volume

    def lp_norm(self, p: int = 1) -> float:
        v = np.abs(self._values())
        if p == 1:
            return float(np.sum(v)) * self.cell_volume
        if p == 2:
            return math.sqrt(float(np.sum(v * v)) * self.cell_volume)
        raise DyadicError(f"p must be 1 or 2, got {p}")

    def linf_norm(self) -> float:
        v = self._values()
        return float(np.max(np.abs(v))) if v.size else 0.0

    # -- algebra -----------------------------------------------------------

    def _check_compatible(self, other: "GridFunction"):
        if (self.dim, self.depth) != (other.dim, other.depth):
            raise DyadicError(
                f"grid mismatch: d={self.dim},L={self.depth} vs d={other.dim},L={other.depth}")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check_compatible(other)
        if self._dense is not None or other._dense is not None:
            return GridFunction(self.dim, self.depth, dense=self.to_array() + other.to_array())
        cells = dict(self._sparse)
        for k, v in other._sparse.items():
            cells[k] = cells.get(k, 0.0) + v
        return GridFunction(self.dim, self.depth, sparse=cells)

    def __neg__(self) -> "GridFunction":
        return self * -1.0

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return self + (-other)

    def __mul__(self, c: float) -> "GridFunction":
        c = float(c)
        if self._dense is not None:
            return GridFunction(self.dim, self.depth, dense=self._dense * c)
        return GridFunction(self.dim, self.depth, sparse={k: v * c for k, v in self._sparse.items()})

    __rmul__ = __mul__

    def abs(self) -> "GridFunction":
        if self._dense is not None:
            return GridFunction(self.dim, self.depth, dense=np.abs(self._dense))
        return GridFunction(self.dim, self.depth, sparse={k: abs(v) for k, v in self._sparse.items()})

    def restrict(self, cubes: Iterable[CubeId]) -> "GridFunction":
        """Keep values on the union of ``cubes``, zero elsewhere."""
        cubes = list(cubes)
        if self._dense is not None:
            mask = np.zeros(self._dense.shape, dtype=bool)
            for c in cubes:
                mask[c.slices(self.depth)] = True
            return GridFunction(self.dim, self.depth, dense=np.where(mask, self._dense, 0.0))
        keep = {}
        for k, v in self._sparse.items():
            cell = CubeId(self.depth, k)
            if any(c.contains(cell) for c in cubes):
                keep[k] = v
        return GridFunction(self.dim, self.depth, sparse=keep)

    def max_abs_diff(self, other: "GridFunction") -> float:
        return (self - other).linf_norm()

    def __repr__(self) -> str:
        return f"GridFunction(d={self.dim}, L={self.depth}, storage={self.storage})"


def cells_of(cube: CubeId, depth: int) -> Iterator[Index]:
    """All level-``depth`` cell indices inside ``cube``, lexicographic."""
    w = 1 << (depth - cube.level)
    ranges = [range(i * w, (i + 1) * w) for i in cube.index]
    return itertools.product(*ranges)
