import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from dyadic_h1 import CubeId, GridFunction
from dyadic_h1.atoms import Atom
from dyadic_h1.decomposition import decompose
from dyadic_h1.radial import (LogValue, convolve, default_t_grid, kernel_mass, kernel_mass_mc,
                              kernel_normalize, linearized_T, maximal_norm_experiment,
                              maximal_radial, ramp_integral, ring_bound_log,
                              ring_lower_bound_check, sampling_lattice)
from dyadic_h1.shells import ShellFunction, lower_bound_h


def h1_shell(d):
    return ShellFunction.from_terms(d, [(0, Fraction(1, 2 ** d))])


def test_d1_constant():
    k = kernel_normalize(1)
    assert k.c_norm == pytest.approx(1 / 3, rel=1e-15)
    assert k.radius == 2.0


@pytest.mark.parametrize("d", [1, 2, 3, 5, 10, 64])
def test_ramp_closed_form(d):
    ref, _ = quad(lambda r: (1 - d * (r - 1)) * r ** (d - 1), 1, 1 + 1 / d, epsabs=0, epsrel=1e-13)
    assert ramp_integral(d) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3, 7])
def test_profile_and_c0(d):
    k = kernel_normalize(d)
    assert k.profile(1.0) == pytest.approx(k.c_norm)
    assert k.profile(k.radius) == 0.0 and k.profile(k.radius + 1) == 0.0
    assert 0 < k.c0 <= 1
    # phi >= c0/|B| on the unit ball, with equality
    assert k.c_norm == pytest.approx(k.c0 / math.exp(k.log_ball_volume), rel=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3, 8])
@pytest.mark.parametrize("t", [0.25, 1.0, 4.0])
def test_mass_quadrature(d, t):
    assert kernel_mass(kernel_normalize(d), t) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_mass_monte_carlo(d):
    est, se = kernel_mass_mc(kernel_normalize(d), 1.0, n=200_000, seed=d)
    assert abs(est - 1.0) <= 5 * se


def test_convolve_constant_one():
    f = GridFunction.from_array(np.ones((8, 8)))
    assert convolve(kernel_normalize(2), 0.2, f, [0.5, 0.5]) == pytest.approx(1.0, abs=1e-3)


def test_convolve_far_cube_zero():
    f = GridFunction.indicator(CubeId(2, (0, 0)), 3)
    assert convolve(kernel_normalize(2), 0.1, f, [0.9, 0.9]) == 0.0


def test_convolve_haar_symmetry():
    f = GridFunction.from_array([1.0, -1.0])
    assert abs(convolve(kernel_normalize(1), 2.0, f, [0.5])) <= 1e-12


def test_convolve_small_t_warns():
    f = GridFunction.from_array(np.ones(4))
    with pytest.warns(RuntimeWarning, match="smaller than a cell"):
        v = convolve(kernel_normalize(1), 0.01, f, [0.5])
    assert v == pytest.approx(1.0, abs=1e-3)


def test_convolve_rejects_bad_input():
    f = GridFunction.from_array(np.ones(4))
    with pytest.raises(ValueError):
        convolve(kernel_normalize(1), 0.0, f, [0.5])
    with pytest.raises(ValueError):
        convolve(kernel_normalize(2), 0.5, f, [0.5])


@pytest.mark.filterwarnings("ignore:kernel support is smaller")
@settings(max_examples=25)
@given(st.integers(0, 2 ** 16), st.floats(0.05, 1.0), st.floats(-3, 3))
def test_convolve_linear(seed, t, c):
    rng = np.random.default_rng(seed)
    k = kernel_normalize(1)
    f = GridFunction.from_array(rng.standard_normal(8))
    g = GridFunction.from_array(rng.standard_normal(8))
    x = [float(rng.random())]
    lhs = convolve(k, t, f * c + g, x, rtol=1e-7)
    rhs = c * convolve(k, t, f, x, rtol=1e-7) + convolve(k, t, g, x, rtol=1e-7)
    assert lhs == pytest.approx(rhs, abs=1e-5 * (1 + abs(c)))


def test_convolve_translation():
    """Shifting f by one cell and x by one cell side leaves the value unchanged."""
    k = kernel_normalize(2)
    arr = np.zeros((8, 8))
    arr[2:4, 1:3] = [[1.0, -2.0], [0.5, 3.0]]
    f = GridFunction.from_array(arr)
    g = GridFunction.from_array(np.roll(arr, (1, 2), axis=(0, 1)))
    x = np.array([0.3, 0.2])
    a = convolve(k, 0.15, f, x)
    b = convolve(k, 0.15, g, x + [1 / 8, 2 / 8])
    assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


def test_maximal_zero_and_indicator():
    k = kernel_normalize(2)
    assert maximal_radial(k, GridFunction.zeros(2, 3), [0.5, 0.5]) == 0.0
    f = GridFunction.indicator(CubeId(1, (0, 0)), 3)
    assert maximal_radial(k, f, [0.25, 0.25]) == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        maximal_radial(k, f, [0.25, 0.25], t_grid=[])


@settings(max_examples=20)
@given(st.integers(0, 2 ** 16))
def test_maximal_monotone_in_grid(seed):
    rng = np.random.default_rng(seed)
    k = kernel_normalize(1)
    f = GridFunction.from_array(rng.standard_normal(8))
    grid = default_t_grid(3, per_decade=8)
    sub = grid[rng.random(grid.size) < 0.5]
    if sub.size == 0:
        sub = grid[:1]
    x = [float(rng.random())]
    assert maximal_radial(k, f, x, grid) >= maximal_radial(k, f, x, sub) * (1 - 1e-12)


def test_sampling_lattice():
    pts = sampling_lattice(1, 0.25, 2.0)
    np.testing.assert_allclose(pts[:, 0], np.arange(-0.375, 1.5, 0.25))


def test_kernel_experiment_haar():
    a = Atom(CubeId.root(1), np.array([0.5, -0.5]), 1)
    (row,) = maximal_norm_experiment(1, [("haar", a)])
    assert row.atom_id == "haar" and np.isfinite(row.ratio) and row.ratio >= 1.0
    (half,) = maximal_norm_experiment(1, [a.scaled(0.5)])
    assert half.ratio == pytest.approx(row.ratio, rel=1e-9)


def test_kernel_experiment_lattice_convergence():
    res = decompose(GridFunction.from_array([4.0, -2.0, -1.0, -1.0]))
    atom = next(iter(res.atoms()))[1]
    (base,) = maximal_norm_experiment(1, [atom])
    (wide,) = maximal_norm_experiment(1, [atom], side=1 + 8.0)
    assert abs(wide.ratio - base.ratio) <= 0.05 * base.ratio


def test_kernel_experiment_2d():
    a = Atom(CubeId.root(2), np.array([[0.5, -0.5], [-0.5, 0.5]]), 1)
    (row,) = maximal_norm_experiment(2, [a], per_decade=16)
    assert 1.0 <= row.ratio < 50


@pytest.mark.parametrize("d", [1, 2, 3])
def test_T_at_origin(d):
    """t = 4 covers [-1,1]^d inside the flat part, so T h1(0) = c_norm 4^-d."""
    k = kernel_normalize(d)
    v = linearized_T(k, h1_shell(d), np.zeros(d))
    assert v.value == pytest.approx(k.c_norm / 4 ** d, rel=1e-12)
    w = linearized_T(k, h1_shell(d), np.zeros(d), shortcuts=False)
    assert w.value == pytest.approx(v.value, rel=1e-6)


def test_T_ball_inside_cube():
    """A cube containing the kernel support gives its height times the mass 1."""
    k = kernel_normalize(2)
    g = ShellFunction.from_terms(2, [(4, Fraction(3, 7))])
    v = linearized_T(k, g, np.array([1.0, 0.0]))
    assert v.value == pytest.approx(3 / 7, rel=1e-12)
    w = linearized_T(k, g, np.array([1.0, 0.0]), shortcuts=False)
    assert w.value == pytest.approx(3 / 7, rel=1e-3)


def test_T_zero_and_range():
    k = kernel_normalize(2)
    assert linearized_T(k, ShellFunction.from_terms(2, []), np.zeros(2)) == LogValue(0, -math.inf)
    with pytest.raises(ValueError):
        linearized_T(k, h1_shell(2), np.array([5.0, 0.0]))


def test_T_underflow_is_reported():
    d = 256
    k = kernel_normalize(d)
    x = np.zeros(d)
    x[0] = 500.0
    v = linearized_T(k, h1_shell(d), x)
    assert v.sign == 1 and math.isfinite(v.log) and v.log < -700
    with pytest.raises(FloatingPointError):
        _ = v.value


def test_ring_bound_d2_radius3():
    k = kernel_normalize(2)
    x = np.array([3.0, 0.0])
    v = linearized_T(k, h1_shell(2), x)
    bound = k.c0 / 2 / math.exp(k.log_ball_volume) * 7.0 ** -2
    assert ring_bound_log(k, x) == pytest.approx(math.log(bound), rel=1e-14)
    assert v.value >= bound


@pytest.mark.parametrize("d", [2, 3])
def test_ring_check_quadrature_path(d):
    a = ring_lower_bound_check(d, 10, seed=1, shortcuts=False)
    b = ring_lower_bound_check(d, 10, seed=1)
    assert a.all_ok and b.all_ok
    np.testing.assert_allclose(a.log_ratios, b.log_ratios, atol=1e-6)


def test_lower_bound_sum_of_T():
    """T is linear: T h equals the sum over its telescoping shells."""
    k = kernel_normalize(2)
    h, shells = lower_bound_h(2)
    x = np.array([2.5, 1.0])
    total = sum(linearized_T(k, s, x).value if linearized_T(k, s, x).sign else 0.0 for s in shells)
    assert linearized_T(k, h, x).value == pytest.approx(total, rel=1e-9)
