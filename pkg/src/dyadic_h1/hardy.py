"""Martingale maximal and square functions and the H^1 norms built from them."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .dyadic import CubeId, GridFunction, Index, cells_of, expand


@dataclass(frozen=True)
class NormReport:
    h1_maximal: float
    h1_square: float
    ratio: Optional[float]

    def csv_row(self) -> str:
        ratio = "" if self.ratio is None else format(self.ratio, ".17g")
        return f"{self.h1_maximal:.17g},{self.h1_square:.17g},{ratio}"


def _kahan_add(total: np.ndarray, comp: np.ndarray, x: np.ndarray):
    y = x - comp
    t = total + y
    comp = (t - total) - y
    return t, comp


def _sparse_fold(f: GridFunction, init, step: Callable, leaf: Callable, empty: Callable):
    """Depth-first fold over the cubes that carry nonzero cells.

    ``step(state, mean, level)`` updates the running state when entering a cube,
    ``leaf(state, index)`` handles a level-L cell and ``empty(state, cube,
    parent_mean)`` handles a child subtree holding no nonzero cells.
    """
    d, L = f.dim, f.depth
    means = [f.level_means(n) for n in range(L + 1)]

    def visit(level: int, idx: Index, state):
        m = means[level].get(idx, 0.0)
        state = step(state, m, level)
        if level == L:
            leaf(state, idx)
            return
        for child in CubeId(level, idx).children():
            if child.index in means[level + 1]:
                visit(level + 1, child.index, state)
            else:
                empty(state, child, m)

    root = (0,) * d
    if root in means[0]:
        visit(0, root, init)
    else:
        empty(init, CubeId.root(d), 0.0)


def maximal_function(f: GridFunction) -> GridFunction:
    """Pointwise ``max_n |E_n f|`` over levels 0..L (level L is f itself)."""
    L = f.depth
    if f.storage == "dense":
        m = np.abs(f.level_means(L))
        for n in range(L):
            m = np.maximum(m, expand(np.abs(f.level_means(n)), L - n))
        return GridFunction(f.dim, L, dense=m)

    out: Dict[Index, float] = {}

    def empty(state, cube, _):
        if state > 0:
            for cell in cells_of(cube, L):
                out[cell] = state

    def leaf(state, idx):
        out[idx] = state

    _sparse_fold(f, 0.0, lambda s, m, lvl: max(s, abs(m)), leaf, empty)
    return GridFunction(f.dim, L, sparse=out)


def square_function(f: GridFunction) -> GridFunction:
    """Pointwise ``sqrt(|E_0 f|^2 + sum_n |E_{n+1} f - E_n f|^2)``.

    The ``E_0`` term vanishes for mean-zero f; it is kept so that the formula
    also covers functions with nonzero mean.  Levels are accumulated coarse to
    fine with compensated summation.
    """
    L = f.depth
    if f.storage == "dense":
        shape = (1 << L,) * f.dim
        total = np.zeros(shape)
        comp = np.zeros(shape)
        prev = np.zeros(shape)
        for n in range(L + 1):
            cur = expand(f.level_means(n), L - n)
            diff = cur - prev
            total, comp = _kahan_add(total, comp, diff * diff)
            prev = cur
        return GridFunction(f.dim, L, dense=np.sqrt(total))

    out: Dict[Index, float] = {}

    def step(state, m, level):
        acc, comp, prev = state
        diff = m - prev
        y = diff * diff - comp
        t = acc + y
        return (t, (t - acc) - y, m)

    def empty(state, cube, parent_mean):
        acc = state[0] + parent_mean * parent_mean
        if acc > 0:
            v = math.sqrt(acc)
            for cell in cells_of(cube, L):
                out[cell] = v

    def leaf(state, idx):
        out[idx] = math.sqrt(state[0])

    _sparse_fold(f, (0.0, 0.0, 0.0), step, leaf, empty)
    return GridFunction(f.dim, L, sparse=out)


def _sparse_h1_maximal(f: GridFunction) -> float:
    acc = [0.0]
    cell = f.cell_volume

    def empty(state, cube, _):
        acc[0] += state * cube.volume

    def leaf(state, idx):
        acc[0] += state * cell

    _sparse_fold(f, 0.0, lambda s, m, lvl: max(s, abs(m)), leaf, empty)
    return acc[0]


def _sparse_h1_square(f: GridFunction) -> float:
    acc = [0.0]
    cell = f.cell_volume

    def step(state, m, level):
        s, prev = state
        return (s + (m - prev) ** 2, m)

    def empty(state, cube, parent_mean):
        acc[0] += math.sqrt(state[0] + parent_mean * parent_mean) * cube.volume

    def leaf(state, idx):
        acc[0] += math.sqrt(state[0]) * cell

    _sparse_fold(f, (0.0, 0.0), step, leaf, empty)
    return acc[0]


def h1_maximal(f: GridFunction) -> float:
    """``||M* f||_{L^1}``; sparse inputs are folded without materializing M* f."""
    if f.storage == "sparse":
        return _sparse_h1_maximal(f)
    return maximal_function(f).lp_norm(1)


def h1_square(f: GridFunction) -> float:
    if f.storage == "sparse":
        return _sparse_h1_square(f)
    return square_function(f).lp_norm(1)


def h1_norms(f: GridFunction) -> NormReport:
    hm = h1_maximal(f)
    hs = h1_square(f)
    return NormReport(hm, hs, hs / hm if hm > 0 else None)
