import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import identity_curve, model_from, single_context
from stratcal.calcurve import CalibrationCurve
from stratcal.errors import GridTooLarge, TooFewSamples
from stratcal.summary import (DensityGrid, calibrate_independent, grid_posterior_oracle, hpd,
                              marginal_density, tv_distance)


def _normal_grid(mu=0.0, sd=1.0, step=0.01, half=8.0):
    theta = np.arange(mu - half * sd, mu + half * sd + step / 2, step)
    return DensityGrid.from_weights(theta, stats.norm.pdf(theta, mu, sd), step)


# ------------------------------------------------------------- DensityGrid

def test_density_grid_normalisation_enforced():
    with pytest.raises(ValueError):
        DensityGrid(np.arange(3.0), np.array([0.2, 0.2, 0.2]), 1.0)
    with pytest.raises(ValueError):
        DensityGrid(np.array([0.0, 1.0, 3.0]), np.full(3, 1 / 3), 1.0)
    g = DensityGrid(np.arange(4.0), np.full(4, 0.25), 1.0)
    assert g.mean() == pytest.approx(1.5)


def test_csv_round_trip():
    g = _normal_grid(5000, 50, step=1.0)
    back = DensityGrid.from_csv(g.to_csv())
    np.testing.assert_allclose(back.density, g.density, rtol=1e-12)
    assert back.theta.tobytes() == g.theta.tobytes()


@pytest.mark.parametrize("text", ["", "theta,density\n", "theta,density\n1,2,3\n",
                                  "theta,density\n1,x\n", "theta,density\n5,1\n4,1\n"])
def test_csv_errors(text):
    with pytest.raises(ValueError):
        DensityGrid.from_csv(text)


# ---------------------------------------------------------------- calibration

def test_identity_curve_is_normal():
    curve = identity_curve(3000, 7000)
    g = calibrate_independent(5000, 50, curve, grid_step=1)
    assert abs(g.mass.sum() - 1) < 1e-9
    err = np.abs(g.density - stats.norm.pdf(g.theta, 5000, 50)).max()
    assert err < 1e-6


def test_coarser_step_same_normalisation(intcal):
    fine = calibrate_independent(5900, 50, intcal, grid_step=1)
    coarse = calibrate_independent(5900, 50, intcal, grid_step=5)
    assert abs(coarse.mass.sum() - 1) < 1e-9
    assert np.all(np.diff(coarse.theta) == 5)
    assert coarse.mean() == pytest.approx(fine.mean(), abs=1.0)


def test_plateau_is_uniform():
    cal = np.array([4000.0, 4900.0, 5000.0, 5200.0, 5300.0, 6000.0])
    mu = np.array([3000.0, 3900.0, 4000.0, 4000.0, 4100.0, 4800.0])
    curve = CalibrationCurve("plateau", cal, mu, np.zeros(6))
    g = calibrate_independent(4000, 30, curve)
    inside = (g.theta >= 5000) & (g.theta <= 5200)
    plateau = g.density[inside]
    assert plateau.max() - plateau.min() < 1e-15
    assert plateau.min() == pytest.approx(g.density.max())


def test_shipped_curve_mode_in_crossing_region(intcal):
    g = calibrate_independent(5900, 50, intcal)
    assert abs(g.mass.sum() - 1) < 1e-9
    mu, _ = intcal.interp(g.mode())
    assert abs(mu - 5900) < 50
    # the curve crosses 5900 BP between roughly 6630 and 6800 cal BP
    assert 6600 < g.mode() < 6850


def test_grid_must_lie_in_domain():
    with pytest.raises(ValueError):
        calibrate_independent(5000, 50, identity_curve(3000, 7000), lo=2000, hi=6000)


# ----------------------------------------------------------------------- HPD

def test_hpd_normal():
    g = _normal_grid()
    res = hpd(g, 0.95)
    assert len(res.intervals) == 1
    lo, hi = res.intervals[0]
    assert lo == pytest.approx(-1.96, abs=0.011)
    assert hi == pytest.approx(1.96, abs=0.011)


def test_hpd_bimodal():
    theta = np.arange(-10, 10.0005, 0.01)
    dens = stats.norm.pdf(theta, -4, 1) + stats.norm.pdf(theta, 4, 1)
    res = hpd(DensityGrid.from_weights(theta, dens, 0.01), 0.95)
    assert len(res.intervals) == 2
    assert res.intervals[0][1] < 0 < res.intervals[1][0]


def test_hpd_near_one():
    g = _normal_grid(step=0.05)
    res = hpd(g, 0.999999)
    assert res.achieved_mass >= 0.999999
    lo, hi = res.outer
    assert hi - lo > 0.6 * (g.theta[-1] - g.theta[0])


def test_hpd_probability_range():
    with pytest.raises(ValueError):
        hpd(_normal_grid(), 1.0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=60).filter(lambda w: sum(w) > 1e-3),
       st.floats(0.05, 0.99))
def test_hpd_mass_and_minimality(weights, p):
    g = DensityGrid.from_weights(np.arange(len(weights), dtype=float), weights, 1.0)
    res = hpd(g, p)
    assert res.achieved_mass >= p - 1e-12
    chosen = np.zeros(len(weights), dtype=bool)
    for lo, hi in res.intervals:
        chosen[int(lo):int(hi) + 1] = True
    assert g.mass[chosen].sum() == pytest.approx(res.achieved_mass)
    smallest = g.mass[chosen].min()
    assert res.achieved_mass - smallest < p + 1e-12
    # nothing outside is denser than something inside
    if (~chosen).any():
        assert g.density[~chosen].max() <= g.density[chosen].min() + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(0.5, 5))
def test_unimodal_gives_one_interval(mu, sd):
    theta = np.arange(-100, 100.001, 0.1)
    g = DensityGrid.from_weights(theta, stats.norm.pdf(theta, mu, sd), 0.1)
    assert len(hpd(g, 0.9).intervals) == 1


# ------------------------------------------------------------- marginals

def test_marginal_spike():
    g = marginal_density(np.full(500, 5000.0))
    assert g.theta.tolist() == [5000.0]
    assert g.mass[0] == pytest.approx(1.0)


def test_marginal_uniform():
    rng = np.random.default_rng(0)
    x = rng.uniform(1000, 1100, 200_000)
    g = marginal_density(x)
    inner = g.density[1:-1]
    assert np.abs(inner - 0.01).max() < 5 * math.sqrt(0.01 / 200_000)


def test_marginal_needs_100():
    with pytest.raises(TooFewSamples):
        marginal_density(np.arange(99.0))


def test_smoothing_keeps_mass():
    rng = np.random.default_rng(1)
    g = marginal_density(rng.normal(5000, 30, 5000), smooth=5.0)
    assert abs(g.mass.sum() - 1) < 1e-9


def test_tv_distance_basics():
    a = _normal_grid(0, 1, step=0.5)
    assert tv_distance(a, a) == 0.0
    far = DensityGrid(np.array([100.0]), np.array([2.0]), 0.5)
    assert tv_distance(a, far) == pytest.approx(1.0)


# ------------------------------------------------------------------ oracle

def test_oracle_single_theta_equals_independent():
    curve = identity_curve(4000, 6000)
    m = single_context([("t", 5000, 40)], window=(5300, 4700), boundaries=False)
    orc = grid_posterior_oracle(m, curve)
    ind = calibrate_independent(5000, 40, curve, lo=4700, hi=5300, trim=0)
    # the oracle half-weights the two window-edge cells; elsewhere the shapes agree
    a, b = orc.marginals["t"].density, ind.density
    np.testing.assert_allclose(a[1:-1] / a[1:-1].sum(), b[1:-1] / b[1:-1].sum(), rtol=1e-9)
    assert tv_distance(orc.marginals["t"], ind) < 1e-9


def test_oracle_ordered_pair_analytic():
    """Flat curve: marginal of the older date is N(a; x1, s) * Phi((a - x2) / (s * sqrt(2)))."""
    curve = identity_curve(4000, 6000)
    s = 30.0
    m = single_context([("a", 5000, s), ("b", 5000, s)], window=(5250, 4750), ordered=True,
                       boundaries=False)
    orc = grid_posterior_oracle(m, curve)
    t = orc.marginals["a"].theta
    # b integrates over b < a of N(b; x2, s): Phi((a - x2) / s)
    w = stats.norm.pdf(t, 5000, s) * stats.norm.cdf((t - 5000) / s)
    exact = DensityGrid.from_weights(t, w, 1.0)
    assert tv_distance(orc.marginals["a"], exact) < 2e-3
    mirror = orc.marginals["b"].density[::-1]
    np.testing.assert_allclose(mirror, orc.marginals["a"].density, rtol=1e-9, atol=1e-15)


def test_oracle_joint_normalised():
    curve = identity_curve(4000, 6000)
    m = single_context([("t", 5000, 40)], window=(5100, 4950))
    orc = grid_posterior_oracle(m, curve)
    assert orc.joint.shape == (151, 151, 151)
    assert orc.joint.sum() == pytest.approx(1.0)
    for lab in m.labels:
        assert abs(orc.marginals[lab].mass.sum() - 1) < 1e-9


def test_oracle_rejects_large_models(sequence, intcal):
    with pytest.raises(GridTooLarge):
        grid_posterior_oracle(sequence, intcal)
    m = single_context([("t", 5000, 40)], window=(7000, 4000))
    with pytest.raises(GridTooLarge):
        grid_posterior_oracle(m, identity_curve(3000, 8000))


def test_hpd_width_counts_cells():
    theta = np.arange(10.0)
    w = np.array([0, 5, 0, 0, 4, 4, 4, 0, 0, 0], dtype=float)
    res = hpd(DensityGrid.from_weights(theta, w, 1.0), 0.99)
    assert res.intervals == ((1.0, 1.0), (4.0, 6.0))
    assert res.width == 4.0
    coarse = hpd(DensityGrid.from_weights(theta * 5, w, 5.0), 0.99)
    assert coarse.width == 20.0
