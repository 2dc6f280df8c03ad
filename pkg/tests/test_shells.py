from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dyadic_h1 import GridFunction
from dyadic_h1.hardy import h1_maximal
from dyadic_h1.shells import ShellFunction, h1_of_shell_function, lower_bound_h, shell_h1_exact


def test_lower_bound_h_d4():
    h, shells = lower_bound_h(4)
    assert h.terms == ((0, Fraction(1, 16)), (4, -Fraction(1, 32 ** 4)))
    assert len(shells) == 4
    total = shells[0]
    for s in shells[1:]:
        total = total + s
    assert total == h
    assert h.integral() == 0


@pytest.mark.parametrize("d", [2, 3, 4, 8, 16, 32, 64])
def test_shell_norms_exact(d):
    _, shells = lower_bound_h(d)
    target = 2 * (1 - Fraction(1, 2 ** d))
    assert all(shell_h1_exact(s) == target for s in shells)


def test_zero_and_errors():
    assert shell_h1_exact(ShellFunction.from_terms(3, [])) == 0
    assert shell_h1_exact(ShellFunction.from_terms(3, [(1, 0)])) == 0
    with pytest.raises(ValueError):
        shell_h1_exact(ShellFunction.from_terms(2, [(0, 1)]))
    with pytest.raises(ValueError):
        lower_bound_h(1)


def test_log_terms_do_not_underflow():
    h, _ = lower_bound_h(64)
    (_, s0, l0), (_, s1, l1) = h.log_terms()
    assert s0 == 1 and s1 == -1
    assert l1 == pytest.approx(-64 * 13 * np.log(2))


def test_evaluation():
    h, _ = lower_bound_h(2)
    assert h((0.5, -0.5)) == Fraction(1, 4) - Fraction(1, 8 ** 2)
    assert h((3.0, 0.0)) == -Fraction(1, 64)
    assert h((5.0, 0.0)) == 0


def _grid_oracle(g: ShellFunction) -> float:
    """||M* g||_1 on one orthant by a finite dyadic grid, times 2^d orthants.

    Inside the positive orthant g is sum c_s 1_[0,2^s)^d; the orthant integral
    vanishes, so scales beyond the largest shell contribute nothing.
    """
    d = g.dim
    if not g.terms:
        return 0.0
    lo = min(s for s, _ in g.terms)
    hi = max(s for s, _ in g.terms)
    depth = hi - lo
    n = 1 << depth
    idx = np.indices((n,) * d).reshape(d, -1).T
    cell_max = idx.max(axis=1) if d > 1 else idx[:, 0]
    vals = np.zeros(n ** d)
    for s, c in g.terms:
        vals += float(c) * (cell_max < (1 << (s - lo)))
    f = GridFunction(d, depth, dense=vals.reshape((n,) * d))
    return h1_maximal(f) * 2.0 ** (d * hi) * 2 ** d


@st.composite
def mean_zero_shells(draw):
    d = draw(st.sampled_from([1, 2, 3]))
    levels = sorted(draw(st.sets(st.integers(0, 5 if d < 3 else 3), min_size=2, max_size=4)))
    coefs = [Fraction(draw(st.integers(-9, 9)), 2 ** draw(st.integers(0, 6))) for _ in levels[:-1]]
    top = levels[-1]
    mass = sum(c * Fraction(2) ** (d * (s + 1)) for s, c in zip(levels, coefs))
    coefs.append(-mass / Fraction(2) ** (d * (top + 1)))
    return ShellFunction.from_terms(d, zip(levels, coefs))


@given(mean_zero_shells())
def test_closed_form_matches_grid(g):
    assert g.integral() == 0
    exact = float(shell_h1_exact(g))
    assert exact == pytest.approx(_grid_oracle(g), rel=1e-12, abs=1e-15)


@given(mean_zero_shells(), st.integers(-5, 5))
def test_homogeneity(g, k):
    c = Fraction(3, 2) ** k
    scaled = ShellFunction.from_terms(g.dim, [(s, c * v) for s, v in g.terms])
    assert shell_h1_exact(scaled) == c * shell_h1_exact(g)
    assert h1_of_shell_function(g) == float(shell_h1_exact(g))
