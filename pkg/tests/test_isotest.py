import math

import numpy as np
import pytest

from artifact import isotest as it
from artifact.covariance import IsotropicCovariance
from artifact.fieldsim import AffineModel, replicate_seed, sample_field
from artifact.levelcurve import FunctionalTriple, NoCrossing
from artifact.specialfn import f_map

TWO_OVER_PI = 2 / math.pi


def _triple(x, y, j_one=1.0):
    return FunctionalTriple(j_one=j_one, j_star=(x * j_one, y * j_one), x_n=x, y_n=y, n=1.0)


@pytest.fixture(scope="module")
def factor():
    return it.iso_factor(IsotropicCovariance(), 0.0)


def _run(model, n, count, seed, h=0.125):
    cov = IsotropicCovariance()
    return [it.run_test(sample_field(cov, model, n, h, replicate_seed(seed, r)), 0.0, cov)
            for r in range(count)]


def test_statistic_T_examples():
    assert it.statistic_T(_triple(TWO_OVER_PI, 0.0), (1.0, 0.0), 10) == pytest.approx([0.0, 0.0], abs=1e-14)
    n = 12
    t = it.statistic_T(_triple(TWO_OVER_PI + 1 / (2 * n), 0.0), (1.0, 0.0), n)
    assert t == pytest.approx([1.0, 0.0], abs=1e-12)
    with pytest.raises(NoCrossing):
        it.statistic_T(_triple(0.5, 0.0, j_one=0.0), (1.0, 0.0), n)


def test_decide():
    reject, gamma = it.decide(0.0, 0.05)
    assert not reject and gamma == pytest.approx(5.991464547107979, rel=1e-14)
    assert it.decide(6.0, 0.05)[0]
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            it.decide(1.0, bad)


def test_statistic_xi_algebra(factor):
    zero = it.statistic_Xi(np.zeros(2), 1.3, factor)
    assert zero.xi == 0.0 and zero.p_value == 1.0 and not zero.reject
    rng = np.random.default_rng(1)
    for _ in range(20):
        t = rng.normal(size=2)
        res = it.statistic_Xi(t, 0.8, factor, alpha=0.1)
        assert res.xi == pytest.approx(float(res.s_vec @ res.s_vec), abs=1e-12)
        assert res.p_value == pytest.approx(math.exp(-res.xi / 2), rel=1e-15)
        assert res.reject == (res.p_value < 0.1)
        # S^t S = tau^2 T^t Sigma*^-1 T
        assert res.xi == pytest.approx(0.64 * t @ np.linalg.solve(factor.sigma_star, t), rel=1e-12)


def test_xi_invariant_to_factor_sign(factor):
    flipped = it.IsoFactor(factor.sigma_star, factor.rotation * np.array([1.0, -1.0]), factor.gamma)
    t = np.array([0.7, -1.9])
    assert it.statistic_Xi(t, 1.1, flipped).xi == pytest.approx(it.statistic_Xi(t, 1.1, factor).xi, abs=1e-10)


def test_non_pd_factor_rejected():
    with pytest.raises(ValueError):
        it.factorize(np.array([[1.0, 0.0], [0.0, -1e-3]]))
    bad = it.IsoFactor(np.eye(2), np.eye(2), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        it.statistic_Xi(np.ones(2), 1.0, bad)


def test_iso_factor_cache_hits():
    cov = IsotropicCovariance(1.0, 1.0)
    a = it.iso_factor(cov, 0.25, Q=4)
    b = it.iso_factor(IsotropicCovariance(1.0, 1.0), 0.25, Q=4)
    assert a is b
    assert it.iso_factor(cov, 0.5, Q=4) is not a


def test_result_row():
    res = it.statistic_Xi(np.array([0.1, 0.2]), 1.0, it.iso_factor(IsotropicCovariance(), 0.0), n=10, u=0.0)
    row = it.result_row(res)
    assert len(row) == len(it.TEST_COLUMNS) and row[4] in ("0", "1") and row[-1] == "0.050000000000000003"


@pytest.mark.slow
def test_null_mean_xi():
    xis = np.array([r.xi for r in _run(AffineModel(1.0, 1.0, 0.0), 15, 200, seed=31)])
    assert 1.2 <= xis.mean() <= 3.2


@pytest.mark.slow
def test_power_and_mean_shift():
    model = AffineModel.from_theta(1.0, 0.5, math.pi / 6)
    results = _run(model, 20, 200, seed=32)
    assert np.mean([r.reject for r in results]) >= 0.8
    target = np.linalg.norm(np.array(f_map(0.5, math.pi / 6)) - [TWO_OVER_PI, 0.0])
    norms = np.array([np.linalg.norm(r.t_vec) / 40 for r in results])
    assert abs(norms.mean() - target) < 5 * norms.std(ddof=1) / math.sqrt(len(norms)) + 0.005


@pytest.mark.slow
def test_xi_scaled_trend():
    aniso = AffineModel.from_theta(1.0, 0.5, math.pi / 6)
    iso = AffineModel(1.0, 1.0, 0.0)
    means_a, means_i, sds_a = [], [], []
    for n in (10, 15, 20):
        xa = np.array([r.xi for r in _run(aniso, n, 60, seed=40)]) / (2 * n) ** 2
        xi = np.array([r.xi for r in _run(iso, n, 60, seed=41)]) / (2 * n) ** 2
        means_a.append(xa.mean())
        sds_a.append(xa.std())
        means_i.append(xi.mean())
    assert np.all(np.diff(sds_a) < 0)
    assert np.all(np.diff(means_i) < 0)
    assert min(means_a) > 10 * max(means_i)
