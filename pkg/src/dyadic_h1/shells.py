"""Functions built from centered cubes ``[-2**s, 2**s]^d`` and their exact dyadic H^1 norms.

Coefficients are kept as exact rationals: every quantity here is a dyadic
rational, and magnitudes like ``(2A)**-d`` for d = 64 sit far below what a
float can carry through a sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Tuple


@dataclass(frozen=True)
class ShellFunction:
    """``sum_s c_s * 1_{[-2**s, 2**s]^d}`` with exact rational coefficients."""

    dim: int
    terms: Tuple[Tuple[int, Fraction], ...]

    @classmethod
    def from_terms(cls, dim: int, terms: Iterable[Tuple[int, Fraction]]) -> "ShellFunction":
        acc: Dict[int, Fraction] = {}
        for s, c in terms:
            acc[int(s)] = acc.get(int(s), Fraction(0)) + Fraction(c)
        return cls(dim, tuple(sorted((s, c) for s, c in acc.items() if c != 0)))

    def __add__(self, other: "ShellFunction") -> "ShellFunction":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return ShellFunction.from_terms(self.dim, self.terms + other.terms)

    def __neg__(self) -> "ShellFunction":
        return ShellFunction(self.dim, tuple((s, -c) for s, c in self.terms))

    def __sub__(self, other: "ShellFunction") -> "ShellFunction":
        return self + (-other)

    def log_terms(self) -> List[Tuple[int, int, float]]:
        """``(s, sign, ln|c_s|)`` per term, computed without forming the float."""
        out = []
        for s, c in self.terms:
            sign = 1 if c > 0 else -1
            out.append((s, sign, math.log(abs(c.numerator)) - math.log(c.denominator)))
        return out

    def integral(self) -> Fraction:
        return sum((c * Fraction(2) ** (self.dim * (s + 1)) for s, c in self.terms), Fraction(0))

    def __call__(self, x) -> Fraction:
        r = max(abs(float(v)) for v in x)
        return sum((c for s, c in self.terms if r <= math.ldexp(1.0, s)), Fraction(0))


def lower_bound_h(d: int) -> Tuple[ShellFunction, List[ShellFunction]]:
    """The two-cube function h and its telescoping shells.

    ``A = 2**(2*floor(log2 d))``, ``h = 2**-d 1_{[-1,1]^d} - (2A)**-d 1_{[-A,A]^d}``
    and ``h^s = 2**(-d(s+1)) 1_{[-2**s,2**s]^d} - 2**(-d(s+2)) 1_{[-2**(s+1),2**(s+1)]^d}``
    for ``s = 0 .. 2*floor(log2 d) - 1``; the shells sum to h.
    """
    if d < 2:
        raise ValueError("the lower-bound example needs d >= 2")
    top = 2 * (d.bit_length() - 1)
    two = Fraction(2)
    h = ShellFunction.from_terms(d, [(0, two ** -d), (top, -(two ** (-d * (top + 1))))])
    shells = [
        ShellFunction.from_terms(d, [(s, two ** (-d * (s + 1))), (s + 1, -(two ** (-d * (s + 2))))])
        for s in range(top)
    ]
    return h, shells


def shell_h1_exact(g: ShellFunction) -> Fraction:
    """``||M* g||_{L^1(R^d)}`` over the standard dyadic lattice, as an exact rational.

    The lattice respects the coordinate orthants, and inside the positive
    orthant g is ``sum c_s 1_{[0, 2**s)^d}``.  A point whose smallest enclosing
    corner cube is ``[0, 2**m)^d`` sees the value ``sum_{s >= m} c_s`` at every
    scale below ``2**m`` and the corner-cube average
    ``G(l) = sum_{s >= l} c_s + sum_{s < l} c_s 2**(d(s-l))`` at scales ``l >= m``,
    so M* g is constant on each shell region.
    """
    if not g.terms:
        return Fraction(0)
    d = g.dim
    two = Fraction(2)
    if g.integral() != 0:
        raise ValueError("shell function has nonzero integral; its H^1 norm is infinite")
    levels = [s for s, _ in g.terms]
    lo, hi = min(levels), max(levels)

    def inner(m: int) -> Fraction:
        return sum((c for s, c in g.terms if s >= m), Fraction(0))

    def corner(l: int) -> Fraction:
        return sum((c if s >= l else c * two ** (d * (s - l)) for s, c in g.terms), Fraction(0))

    corner_abs = {l: abs(corner(l)) for l in range(lo, hi + 1)}

    def value(m: int) -> Fraction:
        tail = max((corner_abs[l] for l in range(max(m, lo), hi + 1)), default=Fraction(0))
        return max(abs(inner(m)), tail)

    total = value(lo) * two ** (d * lo)
    for m in range(lo + 1, hi + 1):
        total += value(m) * (two ** (d * m) - two ** (d * (m - 1)))
    return total * two ** d


def h1_of_shell_function(g: ShellFunction) -> float:
    return float(shell_h1_exact(g))
