"""Radial kernel maximal operator: kernel, dilated convolutions, and the lower-bound probe.

The kernel profile is constant on the unit ball, decreases linearly to zero
on ``1 <= |x| <= 1 + 1/d`` and is normalized to unit mass.  Convolutions
against grid functions use midpoint quadrature on a subgrid aligned with the
dyadic cells, refined until two successive levels agree.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, NamedTuple, Optional, Sequence

import numpy as np

from .atoms import Atom
from .dyadic import GridFunction, expand
from .shells import ShellFunction

# Largest number of quadrature samples materialized at once.
MAX_SAMPLES = 2 ** 22


def log_unit_ball_volume(d: int) -> float:
    return 0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0)


def log_unit_sphere_area(d: int) -> float:
    """Natural log of the surface area of the unit sphere in R^d."""
    return math.log(2.0) + 0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d)


def ramp_integral(d: int) -> float:
    """``int_1^{1+1/d} (1 - d(r-1)) r**(d-1) dr`` in closed form."""
    lb = math.log1p(1.0 / d)
    return ((1.0 + d) * math.expm1(d * lb) / d
            - d * math.expm1((d + 1) * lb) / (d + 1))


@dataclass(frozen=True)
class RadialKernel:
    dim: int
    c_norm: float
    log_c_norm: float
    ramp: float
    log_ball_volume: float

    @property
    def radius(self) -> float:
        return 1.0 + 1.0 / self.dim

    @property
    def c0(self) -> float:
        """``c_norm * |B|``: the kernel dominates ``c0/|B| * 1_B``."""
        return 1.0 / (1.0 + self.dim * self.ramp)

    @property
    def log_c0(self) -> float:
        return -math.log1p(self.dim * self.ramp)

    def shape(self, r):
        """Unnormalized profile: 1 on [0,1], linear down to 0 at 1+1/d."""
        r = np.asarray(r, dtype=float)
        ramp = np.clip((self.radius - r) * self.dim, 0.0, 1.0)
        return np.where(r <= 1.0, 1.0, ramp)

    def profile(self, r):
        return self.c_norm * self.shape(r)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.profile(np.linalg.norm(x, axis=-1))

    def dilated(self, x, t: float) -> np.ndarray:
        """``phi_t(x) = t**-d phi(x/t)``."""
        x = np.asarray(x, dtype=float)
        return self.profile(np.linalg.norm(x, axis=-1) / t) / t ** self.dim


def kernel_normalize(d: int) -> RadialKernel:
    """The kernel in dimension d with ``int phi = 1``.

    Mass of the shape is ``V_d + S_{d-1} * ramp = V_d (1 + d * ramp)`` since the
    sphere area is d times the ball volume.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    ramp = ramp_integral(d)
    log_v = log_unit_ball_volume(d)
    log_c = -log_v - math.log1p(d * ramp)
    return RadialKernel(d, math.exp(log_c), log_c, ramp, log_v)


def kernel_mass(k: RadialKernel, t: float = 1.0) -> float:
    """``int phi_t`` by adaptive radial quadrature of the dilated kernel."""
    from scipy.integrate import quad

    d = k.dim
    log_s = log_unit_sphere_area(d)

    def integrand(r):
        return float(k.profile(r / t)) / t ** d * math.exp(log_s + (d - 1) * math.log(r)) if r > 0 else 0.0

    a, _ = quad(integrand, 0.0, t, epsabs=0, epsrel=1e-13, limit=200)
    b, _ = quad(integrand, t, t * k.radius, epsabs=0, epsrel=1e-13, limit=200)
    return a + b


def kernel_mass_mc(k: RadialKernel, t: float = 1.0, n: int = 10 ** 6, seed: int = 0):
    """Monte Carlo ``int phi_t`` over the bounding box; returns ``(estimate, standard error)``."""
    rng = np.random.default_rng(seed)
    half = t * k.radius
    vol = (2.0 * half) ** k.dim
    chunks = []
    for start in range(0, n, 2 ** 18):
        y = rng.uniform(-half, half, size=(min(2 ** 18, n - start), k.dim))
        chunks.append(k.dilated(y, t) * vol)
    vals = np.concatenate(chunks)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


# -- convolution with grid functions ------------------------------------------


def _grid_values(f: GridFunction) -> np.ndarray:
    if f.dim > 3:
        raise ValueError("dense convolution quadrature is limited to d <= 3")
    return f.to_array()


def _min_q(t: float, n: int, q0: int) -> int:
    """Smallest power-of-two subdivision with sample spacing at most t/4."""
    q = max(q0, 1)
    while 1.0 / (n * q) > t / 4.0:
        q *= 2
    return q


def _samples(arr: np.ndarray, x: np.ndarray, reach: float, q: int):
    """Distances to ``x`` and quadrature weights of the subcell midpoints within ``reach``."""
    n = arr.shape[0]
    d = arr.ndim
    lo = np.floor((x - reach) * n).astype(int)
    hi = np.floor((x + reach) * n).astype(int)
    if np.any(hi < 0) or np.any(lo > n - 1):
        return np.empty(0), np.empty(0)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, n - 1)
    block = arr[tuple(slice(l, h + 1) for l, h in zip(lo, hi))]
    if not np.any(block):
        return np.empty(0), np.empty(0)
    weights = expand(block, q.bit_length() - 1)
    r2 = np.zeros(weights.shape)
    for ax in range(d):
        c = (np.arange(lo[ax] * q, (hi[ax] + 1) * q) + 0.5) / (n * q) - x[ax]
        shape = [1] * d
        shape[ax] = c.size
        r2 = r2 + (c * c).reshape(shape)
    keep = (weights != 0) & (r2 <= reach * reach)
    return np.sqrt(r2[keep]), weights[keep] * (1.0 / (n * q)) ** d


def _conv_many(k: RadialKernel, arr: np.ndarray, x: np.ndarray, ts: np.ndarray, q: int):
    """Signed and absolute convolutions at every t in ``ts`` with subdivision q."""
    r, w = _samples(arr, x, float(ts.max()) * k.radius, q)
    vals = np.zeros(ts.size)
    absv = np.zeros(ts.size)
    if r.size == 0:
        return vals, absv
    aw = np.abs(w)
    chunk = max(1, MAX_SAMPLES // r.size)
    d = k.dim
    for i in range(0, ts.size, chunk):
        tt = ts[i:i + chunk, None]
        phi = k.shape(r[None, :] / tt) * (k.c_norm / tt ** d)
        vals[i:i + chunk] = phi @ w
        absv[i:i + chunk] = phi @ aw
    return vals, absv


def _q_cap(d: int, n: int, reach_cells: float) -> int:
    """Largest subdivision keeping the sample window under MAX_SAMPLES."""
    span = min(float(n), max(1.0, 2.0 * reach_cells + 2.0))
    q = 1
    while (span * 2 * q) ** d <= MAX_SAMPLES:
        q *= 2
    return q


def _adaptive(k: RadialKernel, arr: np.ndarray, x: np.ndarray, ts: np.ndarray,
              q0: int, rtol: float) -> np.ndarray:
    n = arr.shape[0]
    out = np.zeros(ts.size)
    qs = np.array([_min_q(t, n, q0) for t in ts])
    for q in np.unique(qs):
        idx = np.nonzero(qs == q)[0]
        q = int(q)
        prev, _ = _conv_many(k, arr, x, ts[idx], q)
        while idx.size:
            cap = _q_cap(k.dim, n, float(ts[idx].max()) * k.radius * n)
            if 2 * q > cap:
                warnings.warn(f"quadrature refinement capped at q={q}; returning last estimate",
                              RuntimeWarning, stacklevel=3)
                out[idx] = prev
                break
            q *= 2
            cur, absv = _conv_many(k, arr, x, ts[idx], q)
            done = np.abs(cur - prev) <= rtol * np.maximum(np.abs(cur), absv)
            out[idx[done]] = cur[done]
            idx, prev = idx[~done], cur[~done]
    return out


def convolve(k: RadialKernel, t: float, f: GridFunction, x, *, q: int = 4,
             rtol: float = 1e-4) -> float:
    """``(phi_t * f)(x)`` by refined midpoint quadrature (d <= 3)."""
    if not t > 0:
        raise ValueError("t must be positive")
    arr = _grid_values(f)
    if k.dim != f.dim:
        raise ValueError("kernel and function dimensions differ")
    x = np.asarray(x, dtype=float)
    if t * k.radius < 1.0 / arr.shape[0]:
        warnings.warn("kernel support is smaller than a cell; refining subsamples",
                      RuntimeWarning, stacklevel=2)
    return float(_adaptive(k, arr, x, np.array([float(t)]), q, rtol)[0])


def default_t_grid(depth: int, t_max: float = 4.0, per_decade: int = 64,
                   t_min: Optional[float] = None) -> np.ndarray:
    t_min = math.ldexp(1.0, -depth - 2) if t_min is None else t_min
    n = int(math.ceil(per_decade * math.log10(t_max / t_min))) + 1
    return np.geomspace(t_min, t_max, max(n, 1))


def maximal_radial(k: RadialKernel, f: GridFunction, x, t_grid: Optional[Sequence[float]] = None,
                   *, q: int = 4, rtol: float = 1e-4) -> float:
    """``max_t |phi_t * f(x)|`` over a finite grid of scales.

    The grid replaces the supremum over all t > 0, so the value is a lower
    bound for the true maximal function.  Values at a shared scale can differ
    in the last bits between grids, since scales are evaluated in batches.
    """
    arr = _grid_values(f)
    ts = default_t_grid(f.depth) if t_grid is None else np.asarray(t_grid, dtype=float)
    if ts.size == 0:
        raise ValueError("empty t grid")
    x = np.asarray(x, dtype=float)
    return float(np.max(np.abs(_adaptive(k, arr, x, np.sort(ts), q, rtol))))


class MaximalRatio(NamedTuple):
    atom_id: str
    l1: float
    maximal_l1: float
    ratio: float


def sampling_lattice(d: int, spacing: float, side: float) -> np.ndarray:
    """Midpoints ``(k + 1/2) * spacing`` inside the cube of the given side centered at 1/2."""
    lo = 0.5 - side / 2
    hi = 0.5 + side / 2
    ks = np.arange(math.ceil(lo / spacing - 0.5), math.floor(hi / spacing - 0.5) + 1)
    axis = (ks + 0.5) * spacing
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def maximal_l1(k: RadialKernel, f: GridFunction, t_grid: np.ndarray, spacing: float,
               side: float, *, rtol: float = 1e-4) -> float:
    """Riemann sum of the grid-sampled maximal function over a lattice cube."""
    arr = _grid_values(f)
    ts = np.sort(np.asarray(t_grid, dtype=float))
    reach = float(ts.max()) * k.radius
    total = 0.0
    for x in sampling_lattice(f.dim, spacing, side):
        # Points farther than the widest kernel from [0,1]^d see nothing.
        gap = np.maximum(np.maximum(-x, x - 1.0), 0.0)
        if np.sqrt(np.sum(gap * gap)) > reach:
            continue
        total += float(np.max(np.abs(_adaptive(k, arr, x, ts, 4, rtol))))
    return total * spacing ** f.dim


def maximal_norm_experiment(d: int, atoms: Iterable, t_max: Optional[float] = None, *,
                            spacing: Optional[float] = None, side: Optional[float] = None,
                            per_decade: int = 64, rtol: float = 1e-4) -> List[MaximalRatio]:
    """``||M a||_{L^1} / ||a||_{L^1}`` per atom, M restricted to ``t <= t_max``.

    ``atoms`` holds ``Atom`` objects or ``(atom_id, Atom)`` pairs.  The lattice
    covers ``(1 + 4/d) [0,1]^d`` by default, which contains the support of
    ``phi_t * a`` for ``t <= 1/d``.
    """
    if d > 3:
        raise ValueError("the convolution experiment is limited to d <= 3")
    k = kernel_normalize(d)
    t_max = 1.0 / d if t_max is None else t_max
    side = 1.0 + 4.0 / d if side is None else side
    rows = []
    for i, item in enumerate(atoms):
        atom_id, atom = item if isinstance(item, tuple) else (str(i), item)
        if not isinstance(atom, Atom) or atom.dim != d:
            raise ValueError(f"atom {atom_id} is not a {d}-dimensional Atom")
        h = spacing if spacing is not None else math.ldexp(1.0, -atom.depth - (1 if d == 1 else 0))
        ts = default_t_grid(atom.depth, t_max=t_max, per_decade=per_decade)
        l1 = atom.l1_norm()
        ml1 = maximal_l1(k, atom.f, ts, h, side, rtol=rtol)
        rows.append(MaximalRatio(atom_id, l1, ml1, ml1 / l1 if l1 > 0 else float("nan")))
    return rows


# -- linearized operator for the lower bound ------------------------------------


class LogValue(NamedTuple):
    """A real number as ``sign * exp(log)``."""

    sign: int
    log: float

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        v = self.sign * math.exp(self.log)
        if v == 0.0:
            raise FloatingPointError(f"value exp({self.log}) underflows; use the log form")
        return v


def _log_cube_shape_integral(k: RadialKernel, t: float, x: np.ndarray, a: float, *,
                             shortcuts: bool = True, rng=None, n_mc: int = 2 ** 16,
                             rtol: float = 1e-7) -> float:
    """``ln int_{[-a,a]^d} shape(|x - y| / t) dy`` (``-inf`` when zero)."""
    d = k.dim
    reach = t * k.radius
    gap = np.maximum(np.abs(x) - a, 0.0)
    if float(np.sqrt(np.sum(gap * gap))) >= reach:
        return -math.inf
    if shortcuts:
        far = float(np.sqrt(np.sum((np.abs(x) + a) ** 2)))
        if far <= t:
            return d * math.log(2.0 * a)
        if np.all(np.abs(x) + reach <= a):
            return d * math.log(t) + math.log1p(d * k.ramp) + k.log_ball_volume
    lo = np.maximum(-a, x - reach)
    hi = np.minimum(a, x + reach)
    log_box = float(np.sum(np.log(hi - lo)))
    if d > 3:
        rng = np.random.default_rng(0) if rng is None else rng
        y = lo + (hi - lo) * rng.random((n_mc, d))
        mean = float(np.mean(k.shape(np.linalg.norm(y - x, axis=1) / t)))
        return log_box + math.log(mean) if mean > 0 else -math.inf
    n = 16
    prev = None
    while True:
        axes = [lo[i] + (np.arange(n) + 0.5) * (hi[i] - lo[i]) / n for i in range(d)]
        r2 = np.zeros((n,) * d)
        for i, ax in enumerate(axes):
            shape = [1] * d
            shape[i] = n
            r2 = r2 + ((ax - x[i]) ** 2).reshape(shape)
        mean = float(np.mean(k.shape(np.sqrt(r2) / t)))
        if prev is not None and abs(mean - prev) <= rtol * max(mean, 1e-300):
            break
        if (2 * n) ** d > MAX_SAMPLES:
            warnings.warn("cube-kernel quadrature capped before convergence", RuntimeWarning,
                          stacklevel=2)
            break
        prev = mean
        n *= 2
    return log_box + math.log(mean) if mean > 0 else -math.inf


def _logsumexp_signed(items: List[LogValue]) -> LogValue:
    items = [it for it in items if it.sign != 0 and it.log > -math.inf]
    if not items:
        return LogValue(0, -math.inf)
    top = max(it.log for it in items)
    s = sum(it.sign * math.exp(it.log - top) for it in items)
    if s == 0.0:
        return LogValue(0, -math.inf)
    return LogValue(1 if s > 0 else -1, top + math.log(abs(s)))


def linearized_T(k: RadialKernel, g: ShellFunction, x, *, shortcuts: bool = True,
                 rng=None) -> LogValue:
    """``(phi_{t(x)} * g)(x)`` with ``t(x) = |x| + 4``, returned in log form."""
    if k.dim != g.dim:
        raise ValueError("kernel and shell function dimensions differ")
    x = np.asarray(x, dtype=float)
    d = k.dim
    rx = float(np.linalg.norm(x))
    if rx > 2 * d:
        raise ValueError(f"|x| = {rx} exceeds 2d = {2 * d}")
    t = rx + 4.0
    parts = []
    for s, sign, log_c in g.log_terms():
        log_j = _log_cube_shape_integral(k, t, x, math.ldexp(1.0, s), shortcuts=shortcuts, rng=rng)
        if log_j > -math.inf:
            parts.append(LogValue(sign, log_c + k.log_c_norm - d * math.log(t) + log_j))
    return _logsumexp_signed(parts)


def ring_bound_log(k: RadialKernel, x) -> float:
    """``ln( c0 / (2|B|) * (|x| + 4)**-d )``."""
    return (k.log_c0 - math.log(2.0) - k.log_ball_volume
            - k.dim * math.log(float(np.linalg.norm(x)) + 4.0))


def sample_ring(d: int, n: int, rng) -> np.ndarray:
    """Uniform points in the ring ``d <= |x| <= 2d``."""
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    u = rng.random(n)
    radius = d * np.exp(np.log1p(u * (2.0 ** d - 1.0)) / d)
    return z * radius[:, None]


class RingCheck(NamedTuple):
    dim: int
    log_ratios: np.ndarray  # ln(T h_1(x)) - ln(bound) per sample
    all_ok: bool

    @property
    def min_ratio(self) -> float:
        return math.exp(float(np.min(self.log_ratios)))


def ring_lower_bound_check(d: int, n_points: int = 50, seed: int = 0, *,
                           shortcuts: bool = True) -> RingCheck:
    """Test ``T h_1(x) >= c0/(2|B|) (|x|+4)**-d`` at random ring points."""
    k = kernel_normalize(d)
    rng = np.random.default_rng(seed)
    h1 = ShellFunction.from_terms(d, [(0, Fraction(1, 2 ** d))])
    logs = []
    for x in sample_ring(d, n_points, rng):
        val = linearized_T(k, h1, x, shortcuts=shortcuts, rng=rng)
        if val.sign <= 0:
            logs.append(-math.inf)
            continue
        logs.append(val.log - ring_bound_log(k, x))
    logs = np.array(logs)
    return RingCheck(d, logs, bool(np.all(logs >= 0.0)))
