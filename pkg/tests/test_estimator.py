import math

import numpy as np
import pytest
from scipy import integrate, stats

from artifact import estimator as est
from artifact.covariance import IsotropicCovariance, second_spectral_moment
from artifact.estimator import EstimateCase, InadmissibleRatio
from artifact.fieldsim import AffineModel, field_from_function, replicate_seed, sample_field
from artifact.levelcurve import NoCrossing, extract_level_curve, functional_triple
from artifact.specialfn import elliptic_I, f_map
from artifact.varstack import build_stack

TWO_OVER_PI = 2 / math.pi


def _replicates(model, n, count, h=0.125, u=0.0, seed=2024, cov=None):
    cov = cov or IsotropicCovariance()
    out = []
    for r in range(count):
        field = sample_field(cov, model, n, h, replicate_seed(seed, r))
        out.append(functional_triple(extract_level_curve(field, u), model.vstar, n))
    return out


# -- point inversion ---------------------------------------------------------

def test_round_trip_example():
    x, y = f_map(0.5, math.pi / 6)
    res = est.estimate(x, y)
    assert res.case is EstimateCase.INTERIOR
    assert res.lambda_hat == pytest.approx(0.5, abs=1e-9)
    assert res.theta_hat == pytest.approx(math.pi / 6, abs=1e-9)


def test_round_trip_grid():
    worst = 0.0
    for lam in np.linspace(0.05, 0.95, 30):
        for theta in np.linspace(-1.5, 1.5, 30):
            res = est.estimate(*f_map(lam, theta))
            worst = max(worst, abs(res.lambda_hat - lam), abs(res.theta_hat - theta))
    assert worst < 1e-8


def test_isotropic_point_and_tie_window():
    res = est.estimate(TWO_OVER_PI, 0.0)
    assert res.case is EstimateCase.ISOTROPIC and res.lambda_hat == 1.0 and math.isnan(res.theta_hat)
    assert est.estimate(TWO_OVER_PI + 5e-13, -5e-13).case is EstimateCase.ISOTROPIC
    assert est.estimate(TWO_OVER_PI + 1e-9, 0.0).case is EstimateCase.AXIS_Y_ZERO_X_LARGE


def test_axis_branch():
    x = 1.0 / elliptic_I(0.7)
    assert x > TWO_OVER_PI
    res = est.estimate(x, 0.0)
    assert res.case is EstimateCase.AXIS_Y_ZERO_X_LARGE
    assert res.lambda_hat == pytest.approx(0.7, abs=1e-10) and res.theta_hat == 0.0


def test_vertical_axis_point():
    x, _ = f_map(0.4, math.pi / 2)
    res = est.estimate(x, 0.0)
    assert res.case is EstimateCase.INTERIOR
    assert res.lambda_hat == pytest.approx(0.4, abs=1e-9)
    assert res.theta_hat == pytest.approx(math.pi / 2, abs=1e-5)


@pytest.mark.parametrize("x, y", [(0.0, 0.1), (-0.2, 0.0), (0.8, 0.6), (0.9, 0.5)])
def test_inadmissible(x, y):
    with pytest.raises(InadmissibleRatio, match="observed ratio outside admissible disk"):
        est.estimate(x, y)


def test_solution_invariants():
    rng = np.random.default_rng(3)
    for _ in range(300):
        lam, theta = rng.uniform(0.05, 0.99), rng.uniform(-1.55, 1.55)
        x, y = f_map(lam, theta)
        res = est.estimate(x, y)
        assert abs(est.quartic_residual(res.lambda_hat, x, y)) <= 1e-9
        assert (x * x + y * y) * elliptic_I(res.lambda_hat) ** 2 - 1 <= 1e-9
        fx, fy = f_map(res.lambda_hat, res.theta_hat)
        assert fx == pytest.approx(x, abs=1e-10) and fy == pytest.approx(y, abs=1e-10)
        if y != 0.0:
            assert math.copysign(1, res.theta_hat) == -math.copysign(1, y)


def test_solver_monotone_on_bracket():
    rng = np.random.default_rng(17)
    count = 0
    while count < 10_000:
        x, y = rng.uniform(0.0, 1.0), rng.uniform(-1.0, 1.0)
        if not (x > 0 and x * x + y * y < 1):
            continue
        count += 1
        lam0 = est.lambda_zero(x, y)
        grid = np.linspace(0.02, 0.98, 6) * lam0
        f1, f2 = np.array([est.solver_functions(lam, x, y) for lam in grid]).T
        assert np.all(np.diff(f1) < 0)
        assert np.all(np.diff(f2) >= -1e-12)


def test_theta_half_pi_only_on_vertical_axis():
    rng = np.random.default_rng(8)
    for _ in range(2000):
        x, y = f_map(rng.uniform(0.05, 0.95), rng.uniform(-1.5, 1.5))
        assert est.estimate(x, y).theta_hat != pytest.approx(math.pi / 2, abs=1e-3)
    x, _ = f_map(0.6, math.pi / 2)
    assert x < TWO_OVER_PI
    assert est.estimate(x, 0.0).theta_hat == pytest.approx(math.pi / 2, abs=1e-5)


def test_inverse_I():
    assert est.inverse_I(elliptic_I(0.3)) == pytest.approx(0.3, abs=1e-10)
    with pytest.raises(ValueError):
        est.inverse_I(0.5)


def test_no_crossing_from_plane_field():
    field = field_from_function(lambda x, y: 0.1 * x + 0.2 * y, 3.0, 0.25)
    with pytest.raises(NoCrossing):
        est.estimate_from_field(field, 50.0, (1.0, 0.0))


def test_estimate_row_layout():
    res = est.estimate(*f_map(0.5, 0.3), n=10)
    row = est.estimate_row(res)
    assert len(row) == len(est.ESTIMATE_COLUMNS)
    assert row[6] == "Interior" and row[7:] == ["", "", "", ""]


# -- scale parameters --------------------------------------------------------

def test_tau_formula_properties():
    cov = IsotropicCovariance(1.5, 0.7)
    assert est.estimate_tau(0.4, 0.3, cov) == pytest.approx(2 * est.estimate_tau(0.2, 0.3, cov), rel=1e-15)
    ratio = est.estimate_tau(0.3, 1.2, cov) / est.estimate_tau(0.5, 0.0, cov)
    assert ratio == pytest.approx(0.3 / 0.5 * math.exp(1.2 ** 2 / 3.0), rel=1e-14)
    with pytest.raises(ValueError):
        est.estimate_tau(0.0, 0.0, cov)


def test_phi_scale():
    cov = IsotropicCovariance(1.5, 0.7)
    u = 0.4
    density = stats.norm(scale=math.sqrt(1.5)).pdf(u)
    expected = density * math.sqrt(second_spectral_moment(cov)) * math.sqrt(math.pi / 2)
    assert est.phi_scale(u, 1.0, cov) == pytest.approx(expected, rel=1e-10)
    values = [est.phi_scale(u, lam, cov) for lam in np.linspace(0.05, 1.0, 40)]
    assert np.all(np.diff(values) > 0)


def test_phi_scale_against_gaussian_expectation():
    cov = IsotropicCovariance()
    lam, u = 0.45, -0.5
    mu = second_spectral_moment(cov)

    def integrand(r, a):
        return r * math.hypot(math.cos(a), lam * math.sin(a)) * r * math.exp(-r * r / 2) / (2 * math.pi)

    mean_norm = integrate.dblquad(integrand, 0, 2 * math.pi, 0, 12)[0]
    assert est.phi_scale(u, lam, cov) == pytest.approx(stats.norm.pdf(u) * math.sqrt(mu) * mean_norm, rel=1e-8)


def test_tau_and_lambda1_agree_at_isotropy():
    cov = IsotropicCovariance(1.2, 0.9)
    for j, u in [(0.2, 0.0), (0.9, -1.1)]:
        tau = est.estimate_tau(j, u, cov)
        lambda1 = est.estimate_lambda1(j, u, 1.0, cov)
        # tau_hat = c * lambda1_hat where c collapses to 1 at lambda = 1
        c = 2 * math.sqrt(1.2 / second_spectral_moment(cov)) * math.exp(u * u / 2.4) * est.phi_scale(u, 1.0, cov)
        assert tau == pytest.approx(lambda1 * c, rel=1e-10)
        assert c == pytest.approx(1.0, rel=1e-12)


# -- confidence regions ------------------------------------------------------

@pytest.fixture(scope="module")
def aniso_stack():
    return build_stack(0.0, IsotropicCovariance(), AffineModel.from_theta(1.0, 0.5, math.pi / 6), 8)


def test_confidence_region_geometry(aniso_stack):
    res = est.estimate(*f_map(0.5, math.pi / 6), n=10)
    r10 = est.confidence_region(res, aniso_stack, 10, 0.1).ci
    r20 = est.confidence_region(res, aniso_stack, 20, 0.1).ci
    assert r10.area() / r20.area() == pytest.approx(4.0, rel=1e-14)
    assert r10.radius_sq == pytest.approx(-2 * math.log(0.1))
    assert r10.lambda_interval[0] < 0.5 < r10.lambda_interval[1] <= 1.0
    assert r10.contains((0.5, math.pi / 6), (0.5, math.pi / 6))
    degenerate = est.confidence_region(res, aniso_stack, 10, 1.0).ci
    assert degenerate.area() == 0.0 and degenerate.lambda_interval[0] == degenerate.lambda_interval[1]


def test_confidence_region_errors(aniso_stack):
    iso = est.estimate(TWO_OVER_PI, 0.0)
    with pytest.raises(ValueError):
        est.confidence_region(iso, aniso_stack, 10, 0.1)
    iso_stack = build_stack(0.0, IsotropicCovariance(), AffineModel(1.0, 1.0, 0.0), 4)
    res = est.estimate(*f_map(0.5, 0.2))
    with pytest.raises(ValueError):
        est.confidence_region(res, iso_stack, 10, 0.1)


@pytest.mark.slow
def test_confidence_region_coverage():
    model = AffineModel.from_theta(1.0, 0.5, math.pi / 6)
    cov = IsotropicCovariance()
    covered = total = 0
    for t in _replicates(model, 20, 200):
        res = est.estimate(t.x_n, t.y_n, n=20)
        if res.case is not EstimateCase.INTERIOR:
            continue
        lam1 = est.estimate_lambda1(t.j_one, 0.0, res.lambda_hat, cov)
        fitted = AffineModel.from_theta(lam1, res.lambda_hat, res.theta_hat)
        region = est.confidence_region(res, build_stack(0.0, cov, fitted, 8), 20, 0.1).ci
        total += 1
        covered += region.contains((res.lambda_hat, res.theta_hat), (0.5, math.pi / 6))
    assert total >= 190 and covered / total >= 0.75


# -- limit law under isotropy ------------------------------------------------

SIGMA_SS = np.array([[0.25, 0.06], [0.06, 0.8]])


def test_fU_normalization_and_support():
    total = integrate.quad(lambda t: est.limit_density_fU(t, SIGMA_SS), 0, np.inf, limit=400)[0]
    assert total == pytest.approx(1.0, abs=1e-6)
    assert est.limit_density_fU(-1.0, SIGMA_SS) == 0.0 and est.limit_density_fU(0.0, SIGMA_SS) == 0.0
    assert est.limit_cdf_fU(1e6, SIGMA_SS) == pytest.approx(1.0, abs=1e-12)
    t = np.array([0.5, 2.0, 7.0])
    num = [integrate.quad(lambda s: est.limit_density_fU(s, SIGMA_SS), 0, v)[0] for v in t]
    assert est.limit_cdf_fU(t, SIGMA_SS) == pytest.approx(num, abs=1e-8)


def test_fU_diagonal_against_simulation():
    sigma = np.diag([0.3, 0.7])
    draws = np.sort(est.sample_U(sigma, 1_000_000, np.random.default_rng(99)))
    # sup-distance on a dense grid of quantiles (the exact KS needs 10^6 angular sums)
    grid = np.quantile(draws, np.linspace(0.0005, 0.9995, 4000))
    empirical = np.searchsorted(draws, grid, side="right") / draws.size
    assert np.abs(empirical - est.limit_cdf_fU(grid, sigma)).max() < 0.01


def test_fU_correlated_against_simulation():
    draws = est.sample_U(SIGMA_SS, 200_000, np.random.default_rng(7))
    assert stats.kstest(draws, lambda t: est.limit_cdf_fU(t, SIGMA_SS)).statistic < 0.01


def test_fU_rejects_non_pd():
    with pytest.raises(ValueError):
        est.limit_density_fU(1.0, np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        est.limit_density_fU(1.0, np.array([[1.0, 0.2], [0.0, 1.0]]))


# -- Monte Carlo sanity bands ------------------------------------------------

@pytest.mark.slow
def test_isotropic_lambda_band():
    model = AffineModel(1.0, 1.0, 0.0)
    lams = np.array([est.estimate(t.x_n, t.y_n).lambda_hat for t in _replicates(model, 15, 200)])
    assert np.mean((lams > 0.7) & (lams <= 1.0)) >= 0.95


@pytest.mark.slow
def test_anisotropic_median_and_tau():
    model = AffineModel.from_theta(1.0, 0.5, math.pi / 6)
    triples = _replicates(model, 20, 200, seed=77)
    lams = np.array([est.estimate(t.x_n, t.y_n).lambda_hat for t in triples])
    assert abs(np.median(lams) - 0.5) < 0.05


@pytest.mark.slow
def test_tau_unbiased_under_isotropy():
    model = AffineModel(1.0, 1.0, 0.0)
    cov = IsotropicCovariance()
    taus = np.array([est.estimate_tau(t.j_one, 0.0, cov) for t in _replicates(model, 10, 200, seed=5)])
    assert abs(taus.mean() - 1.0) < 5 * taus.std(ddof=1) / math.sqrt(len(taus))


@pytest.mark.slow
def test_lambda1_recovered():
    model = AffineModel.from_theta(2.0, 0.5, 0.4)
    cov = IsotropicCovariance()
    vals = []
    for t in _replicates(model, 10, 200, h=0.0625, seed=6):
        lam = est.estimate(t.x_n, t.y_n).lambda_hat
        vals.append(est.estimate_lambda1(t.j_one, 0.0, lam, cov))
    vals = np.array(vals)
    assert abs(vals.mean() - 2.0) < 5 * vals.std(ddof=1) / math.sqrt(len(vals))
