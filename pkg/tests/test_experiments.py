import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dyadic_h1 import GridFunction
from dyadic_h1 import experiments as ex
from dyadic_h1.atoms import remark_l2_check
from dyadic_h1.experiments import (DISTRIBUTIONS, SCALING_COLUMNS, ExperimentConfig, SuiteAbort,
                                   analyze_function, gen_random_meanzero, gen_remark_instance,
                                   run_scaling_suite, trend_test, trial_rng)


@pytest.mark.parametrize("dist", DISTRIBUTIONS)
@pytest.mark.parametrize("d,L", [(1, 4), (2, 3), (3, 2), (6, 2)])
def test_generator_mean_zero_and_deterministic(dist, d, L):
    f = gen_random_meanzero(d, L, trial_rng(7, d, L, 0), dist)
    g = gen_random_meanzero(d, L, trial_rng(7, d, L, 0), dist)
    np.testing.assert_array_equal(f.to_array(), g.to_array())
    assert abs(f.integral()) <= 1e-14 * max(1.0, f.lp_norm(1))


@given(st.sampled_from(DISTRIBUTIONS), st.integers(1, 3), st.integers(1, 2),
       st.integers(0, 2 ** 20))
def test_generator_never_returns_zero(dist, d, L, seed):
    assert gen_random_meanzero(d, L, seed, dist).linf_norm() > 0


def test_generator_storage_and_scale():
    f = gen_random_meanzero(5, 2, 1, "sparse-spikes", storage="sparse")
    assert f.storage == "sparse" and len(dict(f.items())) <= 8
    z = gen_random_meanzero(2, 3, 1, "haar-random", scale=0.0)
    assert z.linf_norm() == 0.0
    with pytest.raises(ValueError):
        gen_random_meanzero(1, 2, 0, "gaussian")


def test_haar_random_level_structure():
    """Every martingale difference is mean zero on its parent cube."""
    f = gen_random_meanzero(2, 3, 3, "haar-random")
    for n in range(3):
        parents = f.level_means(n)
        kids = f.level_means(n + 1)
        assert np.allclose(kids.reshape(parents.shape[0], 2, parents.shape[1], 2).mean(axis=(1, 3)),
                           parents, atol=1e-12)


def test_known_instance_row():
    f = GridFunction.from_array([4.0, -2.0, -1.0, -1.0])
    r = analyze_function(f, d=1, L=2)
    assert r.h1_maximal == 2.0 and r.lambda_sum == 6.0 and r.lambda_ratio == 3.0
    assert r.pass_rate == 1.0 and r.recon_rel_err == 0.0 and r.failure is None
    assert len(r.row()) == len(SCALING_COLUMNS)


def test_header_only(tmp_path):
    cfg = ExperimentConfig(trials=0, out=tmp_path / "s.csv")
    text, results = run_scaling_suite(cfg)
    assert results == [] and text == ",".join(SCALING_COLUMNS) + "\r\n"
    assert (tmp_path / "s.csv").read_bytes() == text.encode()


def test_suite_deterministic(tmp_path):
    kw = dict(seed=5, dims=[1, 2], depth={1: 3, 2: 2}, trials=4)
    a, res = run_scaling_suite(ExperimentConfig(**kw, threads=1, out=tmp_path / "a.csv"))
    b, _ = run_scaling_suite(ExperimentConfig(**kw, threads=2, out=tmp_path / "b.csv"))
    assert a == b
    assert (tmp_path / "a.summary.csv").read_text() == (tmp_path / "b.summary.csv").read_text()
    assert [(r.d, r.trial) for r in res] == [(1, t) for t in range(4)] + [(2, t) for t in range(4)]
    assert all(np.isfinite(r.lambda_ratio) and r.lambda_ratio > 0 for r in res)
    assert all(r.pass_rate == 1.0 for r in res)


def test_suite_aborts_on_invalid_atom(tmp_path, monkeypatch):
    real = ex.validate_atom

    def broken(atom, **kw):
        return dataclasses.replace(real(atom, **kw), l1_ok=False)

    monkeypatch.setattr(ex, "validate_atom", broken)
    with pytest.raises(SuiteAbort) as info:
        run_scaling_suite(ExperimentConfig(dims=[1], depth={1: 2}, trials=2, threads=1,
                                           out=tmp_path / "s.csv"))
    text = info.value.instance_path.read_text()
    assert "l1_ok=false" in text and "d=1 L=2 storage=dense" in text


def test_trend_test():
    rng = np.random.default_rng(0)
    x = np.repeat(np.arange(1, 7), 50)
    flat = trend_test(x, 3 + 0.1 * rng.standard_normal(x.size))
    assert flat.not_increasing and flat.ci_low <= 0 <= flat.ci_high
    up = trend_test(x, x + 0.1 * rng.standard_normal(x.size))
    assert not up.not_increasing and up.slope == pytest.approx(1.0, abs=0.05)


def test_trend_test_resolution_removes_rounding_noise():
    x = np.repeat(np.arange(1, 7), 20)
    y = 1.0 - np.where(x >= 3, 0.0, 2.0 ** -52)
    assert not trend_test(x, y).not_increasing
    flat = trend_test(x, y, resolution=1e-12)
    assert flat.not_increasing and flat.slope == 0.0
    up = trend_test(x, 1e-3 * x, resolution=1e-12)
    assert up.slope == pytest.approx(1e-3) and not up.not_increasing


@given(st.integers(1, 3), st.integers(0, 2 ** 20))
def test_remark_instances_satisfy_hypotheses(d, seed):
    f, pairs = gen_remark_instance(d, 3, np.random.default_rng(seed))
    parents = [p for p, _ in pairs]
    assert len(set(parents)) == len(parents) and pairs
    rep = remark_l2_check(f, pairs, 8.0 * (1 + 1e-12))
    assert rep.hypotheses_ok
    assert max(rep.max_parent_avg, rep.max_remainder_avg) == pytest.approx(8.0)
