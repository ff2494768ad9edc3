import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import single_context
from stratcal.diagnostics import (DiagnosticsReport, autocorr_time, diagnose, ess,
                                  reproducibility_check, r_hat, suggest_thin)
from stratcal.errors import ShapeMismatch, TooFewSamples
from stratcal.inference import SamplerConfig, run_sampler


def ar1(rho, n, rng, chains=None):
    shape = (n,) if chains is None else (chains, n)
    e = rng.standard_normal(shape) * math.sqrt(1 - rho ** 2)
    x = np.empty(shape)
    x[..., 0] = rng.standard_normal(shape[:-1])
    for t in range(1, n):
        x[..., t] = rho * x[..., t - 1] + e[..., t]
    return x


# --------------------------------------------------------------------- R-hat

def test_rhat_identical_chains():
    x = np.random.default_rng(0).standard_normal(10_000)
    assert r_hat([x, x]) == pytest.approx(1.0, abs=0.01)


def test_rhat_iid_chains():
    x = np.random.default_rng(1).standard_normal((4, 5000))
    assert r_hat(x) == pytest.approx(1.0, abs=0.01)


def test_rhat_separated_chains():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 2000))
    x[1] += 10
    assert r_hat(x) > 1.1


def test_rhat_detects_scale_difference():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4000))
    x[1] *= 5
    assert r_hat(x) > 1.05


@pytest.mark.parametrize("bad", [np.zeros((1, 100)), np.zeros((3, 3)), np.zeros(50)])
def test_rhat_too_few(bad):
    with pytest.raises(TooFewSamples):
        r_hat(bad)


def test_rhat_constant():
    assert r_hat(np.full((3, 50), 4.0)) == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(-1e3, 1e3).filter(lambda a: abs(a) > 1e-3),
       st.floats(-1e4, 1e4))
def test_rhat_affine_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 200)) + rng.normal(0, 0.3, (3, 1))
    # rank ties can shift with rounding, hence the loose tolerance
    assert r_hat(a * x + b) == pytest.approx(r_hat(x), rel=1e-4)


# ----------------------------------------------------------------------- ESS

def test_ess_iid():
    x = np.random.default_rng(4).standard_normal(10_000)
    assert 8000 <= ess(x) <= 12_000


def test_ess_constant():
    assert ess(np.full(500, 3.0)) == 1.0


def test_ess_ar1():
    rho, n = 0.9, 10_000
    target = n * (1 - rho) / (1 + rho)
    x = ar1(rho, n, np.random.default_rng(5))
    assert abs(ess(x) - target) <= 0.25 * target


def test_ess_bounds_and_monotone():
    rng = np.random.default_rng(6)
    values = []
    for rho in (0.0, 0.5, 0.8, 0.95):
        x = ar1(rho, 20_000, np.random.default_rng(60))
        e = ess(x)
        assert 0 < e <= x.size
        values.append(e)
    assert values == sorted(values, reverse=True)
    assert ess(rng.standard_normal((4, 100))) <= 400


def test_ess_too_few():
    with pytest.raises(TooFewSamples):
        ess(np.arange(9.0))


def test_thinning_loses_less_than_stride():
    x = ar1(0.9, 40_000, np.random.default_rng(7))
    full = ess(x)
    for k in (2, 5, 10):
        thinned = ess(x[::k])
        assert thinned > full / k
        assert thinned <= full * 1.1


def test_autocorr_and_thin():
    x = ar1(0.9, 20_000, np.random.default_rng(8))
    tau = autocorr_time(x)
    assert tau == pytest.approx(19, rel=0.3)
    assert suggest_thin(x) == math.ceil(tau)
    assert suggest_thin(np.random.default_rng(0).standard_normal(1000)) <= 2


# -------------------------------------------------------------------- reports

class _Fake:
    def __init__(self, labels, samples):
        self.labels = labels
        self.samples = samples


def test_report_pass_fail_and_json():
    rng = np.random.default_rng(9)
    good = [_Fake(("a", "b"), rng.standard_normal((2000, 2))) for _ in range(4)]
    rep = diagnose(good)
    assert rep.passed and rep.failures() == []
    assert set(rep.to_json()["parameters"]) == {"a", "b"}
    json.loads(rep.dumps())
    assert "a" in rep.to_table()

    bad = [_Fake(("a",), rng.standard_normal((2000, 1)) + 10 * i) for i in range(2)]
    rep = diagnose(bad)
    assert not rep.passed
    assert any("R-hat" in f for f in rep.failures())


def test_report_low_ess_fails():
    x = ar1(0.99, 3000, np.random.default_rng(10), chains=2)
    rep = diagnose([_Fake(("a",), c[:, None]) for c in x])
    assert rep.ess["a"] < 400
    assert not rep.passed


def test_single_chain_fails_gate():
    rep = diagnose([_Fake(("a",), np.random.default_rng(0).standard_normal((5000, 1)))])
    assert rep.r_hat["a"] is None
    assert not rep.passed


def test_report_flags_degenerate():
    rep = diagnose([_Fake(("c",), np.ones((100, 1))) for _ in range(2)])
    assert rep.degenerate == ("c",)
    assert rep.r_hat["c"] == 1.0 and rep.ess["c"] == 1.0


def test_mismatched_chains():
    with pytest.raises(ShapeMismatch):
        diagnose([_Fake(("a",), np.zeros((10, 1))), _Fake(("b",), np.zeros((10, 1)))])
    with pytest.raises(ShapeMismatch):
        diagnose([_Fake(("a",), np.zeros((10, 1))), _Fake(("a",), np.zeros((12, 1)))])


# ------------------------------------------------------------ reproducibility

@pytest.fixture(scope="module")
def minimal_runs(intcal):
    # unimodal calibration, and a window tight enough that boundary tails stop at its edges
    m = single_context([("t", 5600, 40)], window=(6600, 6150))
    return [run_sampler(m, intcal, SamplerConfig(iterations=400_000, burn_in=20_000, thin=10,
                                                 chains=4, seed=s)) for s in (1, 2)]


def test_reproducibility_long_runs_pass(minimal_runs):
    rep = reproducibility_check(minimal_runs, tolerance=10)
    assert rep.passed, rep.to_json()


def test_reproducibility_zero_tolerance_fails(minimal_runs):
    rep = reproducibility_check(minimal_runs, tolerance=0)
    assert not rep.passed
    assert set(rep.failing_means) == set(rep.labels)


def test_reproducibility_shape_mismatch(minimal_runs, intcal):
    other = single_context([("u", 5600, 40)], window=(6600, 6150))
    run = run_sampler(other, intcal, SamplerConfig(iterations=2000, burn_in=500, chains=2,
                                                   thin=1))
    with pytest.raises(ShapeMismatch):
        reproducibility_check([minimal_runs[0], run], tolerance=10)


def test_reproducibility_requires_tolerance(minimal_runs):
    with pytest.raises(TypeError):
        reproducibility_check(minimal_runs)
