import math

import numpy as np
import pytest
from scipy import integrate

from artifact import kernels
from artifact import varstack as vs
from artifact.chaoscoeff import build_table
from artifact.covariance import IsotropicCovariance, second_spectral_moment
from artifact.fieldsim import AffineModel
from artifact.specialfn import hermite


def test_mehler_small_cases():
    rng = np.random.default_rng(0)
    rho = rng.uniform(-0.6, 0.6, (3, 3))
    assert vs.mehler_moment((1, 0, 0), (1, 0, 0), rho) == pytest.approx(rho[0, 0])
    assert vs.mehler_moment((1, 1, 0), (2, 0, 1), rho) == 0.0
    for k, m in [((2, 1, 0), (0, 1, 2)), ((1, 1, 1), (3, 0, 0))]:
        assert vs.mehler_moment(k, m, rho) == pytest.approx(vs.mehler_moment(m, k, rho.T), rel=1e-14)
    with pytest.raises(ValueError):
        vs.mehler_moment((25, 0, 0), (25, 0, 0), rho)


def test_mehler_monte_carlo():
    rng = np.random.default_rng(42)
    rho = np.array([[0.5, 0.2, 0.0], [0.1, 0.4, 0.1], [0.0, 0.2, 0.3]])
    cov = np.block([[np.eye(3), rho], [rho.T, np.eye(3)]])
    z = rng.multivariate_normal(np.zeros(6), cov, size=1_000_000)
    vals = hermite(1, z[:, 0]) * hermite(1, z[:, 1]) * hermite(1, z[:, 3]) * hermite(1, z[:, 4])
    target = vs.mehler_moment((1, 1, 0), (1, 1, 0), rho)
    assert abs(vals.mean() - target) < 4 * vals.std() / math.sqrt(len(vals))


def test_gamma_Y_properties(unit_cov, aniso_model):
    assert vs.gamma_Y(unit_cov, aniso_model, np.zeros(2)) == pytest.approx(np.eye(3), abs=1e-15)
    far = 10 * unit_cov.length_scale / aniso_model.lambda2
    for ang in np.linspace(0, 2 * math.pi, 12, endpoint=False):
        v = far * np.array([math.cos(ang), math.sin(ang)])
        assert np.abs(vs.gamma_Y(unit_cov, aniso_model, v)).max() < 1e-12
    v = np.array([0.3, -0.7])
    assert vs.gamma_Y(unit_cov, aniso_model, v).T == pytest.approx(vs.gamma_Y(unit_cov, aniso_model, -v),
                                                                   abs=1e-15)


def test_gamma_Y_coupling_finite_differences():
    cov = IsotropicCovariance(1.3, 0.8)
    m = AffineModel(1.2, 0.6, 0.4)
    a = m.a_matrix
    v = np.array([0.3, -0.7])
    h = 1e-6
    rx = lambda t: cov.value(t @ a.T)  # noqa: E731
    grad = np.array([(rx(v + h * e) - rx(v - h * e)) / (2 * h) for e in np.eye(2)])
    mu = second_spectral_moment(cov)
    lam_inv = np.diag([1 / m.lambda1, 1 / m.lambda2])
    # E[X(0) Y_i(v)] with Y_i(v) the standardized eigen-coordinates of grad X(v)
    predicted = lam_inv @ m.p_matrix.T @ grad / math.sqrt(mu * cov.variance_at_zero)
    assert vs.gamma_Y(cov, m, v)[2, :2] == pytest.approx(predicted, abs=1e-7)


def test_r_km_closed_form_and_zero():
    cov = IsotropicCovariance(1.3, 0.8)
    m = AffineModel(1.2, 0.6, 0.4)
    closed = (2 * math.pi) ** 2 * float(cov.spectral_density(np.zeros(2))) / (
        m.lambda1 * m.lambda2 * cov.variance_at_zero)
    assert vs.r_km((0, 0, 1), (0, 0, 1), cov, m) == pytest.approx(closed, rel=1e-4)
    assert abs(vs.r_km((1, 0, 0), (0, 0, 1), cov, m)) < 1e-8
    assert vs.r_km((1, 0, 0), (1, 1, 0), cov, m) == 0.0


def test_r_km_polar_oracle(unit_cov, iso_model):
    def integrand(r, a):
        g = vs.gamma_Y(unit_cov, iso_model, np.array([r * math.cos(a), r * math.sin(a)]))
        return r * vs.mehler_moment((2, 0, 0), (2, 0, 0), g)

    oracle = integrate.dblquad(integrand, 0, 2 * math.pi, 0, 12, epsabs=1e-11)[0]
    assert vs.r_km((2, 0, 0), (2, 0, 0), unit_cov, iso_model) == pytest.approx(oracle, abs=1e-6)


def test_r_table_matches_panel_route():
    cov = IsotropicCovariance(1.3, 0.8)
    m = AffineModel(1.2, 0.6, 0.4)
    for q in (1, 2, 3):
        tab = vs.r_table(q, cov, m)
        idx = kernels.multi_indices(q)
        assert tab == pytest.approx(tab.T, abs=1e-12) or q > 0  # not symmetric in general
        for a in range(0, len(idx), 2):
            for b in range(1, len(idx), 3):
                assert tab[a, b] == pytest.approx(vs.r_km(idx[a], idx[b], cov, m), abs=1e-8)
                # R(k, m) = R(m, k) through Gamma(-v) = Gamma(v)^t
                assert tab[a, b] == pytest.approx(tab[b, a], abs=1e-10)


def test_first_order_term_closed_form(unit_cov, aniso_model):
    u = 1.0
    table = build_table(aniso_model, unit_cov, u, 4)
    ones = vs.component_coeffs(table, 2)
    res = vs.sigma_fg(u, ones, ones, unit_cov, aniso_model, 4)
    closed = vs.v1_closed_form(table.pair[(0, 0)][2], u, unit_cov, aniso_model)
    assert res.per_order[0] == pytest.approx(closed, rel=1e-6)


def test_level_zero_first_order_vanishes(unit_cov, aniso_model):
    table = build_table(aniso_model, unit_cov, 0.0, 4)
    ones = vs.component_coeffs(table, 2)
    res = vs.sigma_fg(0.0, ones, ones, unit_cov, aniso_model, 4)
    assert res.per_order[0] == 0.0 and res.per_order[1] > 0


def test_per_order_terms_nonnegative_and_bilinear():
    rng = np.random.default_rng(11)
    cov = IsotropicCovariance()
    for _ in range(10):
        m = AffineModel.from_theta(rng.uniform(0.6, 1.5), rng.uniform(0.2, 1.0), rng.uniform(-1.4, 1.4))
        u = rng.uniform(-2, 2)
        table = build_table(m, cov, u, 6)
        for which in range(3):
            c = vs.component_coeffs(table, which)
            res = vs.sigma_fg(u, c, c, cov, m, 6)
            assert np.all(res.per_order >= -1e-10) and res.value >= 0
    f, g, h = (vs.component_coeffs(table, i) for i in range(3))
    comb = {k: 2.0 * f[k] - 0.5 * g[k] for k in f}
    lhs = vs.sigma_fg(u, comb, h, cov, m, 6).value
    rhs = 2.0 * vs.sigma_fg(u, f, h, cov, m, 6).value - 0.5 * vs.sigma_fg(u, g, h, cov, m, 6).value
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_stack_algebra(unit_cov, aniso_model):
    st = vs.build_stack(0.0, unit_cov, aniso_model, 8)
    assert st.sigma_triple == pytest.approx(st.sigma_triple.T, abs=1e-12)
    assert np.linalg.eigvalsh(st.sigma_triple).min() >= -1e-9
    assert st.sigma_star == pytest.approx(st.b_matrix @ st.sigma_triple @ st.b_matrix.T, abs=1e-12)
    assert np.linalg.det(st.sigma_star) > 0
    af1, af2, a1 = st.table.at_zero()
    assert st.b_matrix == pytest.approx(np.array([[1, 0, -af1 / a1], [0, 1, -af2 / a1]]) / a1, rel=1e-15)
    d = st.d_n(20)
    assert d.T @ st.sigma_param @ d == pytest.approx(np.eye(2), abs=1e-10)
    # frozen reference values (Q = 8)
    assert st.sigma_star == pytest.approx(np.array([[0.26102034777140914, 0.08989906203489137],
                                                    [0.08989906203489137, 0.8598149429464068]]), rel=1e-9)
    assert st.sigma_param == pytest.approx(np.array([[1.1607417094767587, -0.02529068217392422],
                                                     [-0.02529068217392422, 2.019071698776537]]), rel=1e-9)
    assert 0 < st.tail_estimate < math.inf


def test_isotropic_branch(unit_cov, iso_model):
    st = vs.build_stack(0.0, unit_cov, iso_model, 8)
    assert st.isotropic and st.sigma_param is None and st.c_matrix is None and st.d_n(10) is None
    assert np.all(np.isfinite(st.sigma_star)) and np.linalg.eigvalsh(st.sigma_star).min() > 0


def test_lambda1_scaling(unit_cov):
    ref = None
    for l1 in (0.5, 1.0, 2.0):
        m = AffineModel(l1, 0.6, 0.3)
        scaled = vs.build_stack(0.4, unit_cov, m, 6).sigma_star * l1 ** 2
        ref = scaled if ref is None else ref
        assert scaled == pytest.approx(ref, abs=1e-6)


def test_det_positive_over_levels_and_models():
    rng = np.random.default_rng(5)
    cov = IsotropicCovariance()
    for _ in range(10):
        m = AffineModel.from_theta(rng.uniform(0.7, 1.3), rng.uniform(0.2, 0.95), rng.uniform(-1.4, 1.4))
        for u in (-3.0, -1.0, 0.0, 1.5, 3.0):
            assert vs.det_lower_bound_check(u, cov, m, 6) >= -1e-9
            st = vs.build_stack(u, cov, m, 6)
            assert np.linalg.det(st.sigma_star) > 0
            assert abs(vs.partial_star_det(st, 1)) < 1e-12


def test_w_statistic_range():
    for lam in np.arange(0.1, 1.0, 0.1):
        w = vs.w_statistic(lam)
        assert 0 < w <= 0.25
    assert vs.w_statistic(1.0) == pytest.approx(0.25)


def test_sym_sqrt_inv():
    mat = np.array([[2.0, 0.3], [0.3, 1.0]])
    _, _, root = vs.sym_sqrt_inv(mat)
    assert root @ mat @ root == pytest.approx(np.eye(2), abs=1e-14)


def test_series_tail_extrapolation():
    terms = np.array([0.0, 1.0, 0.0, 0.25, 0.0, 1 / 9])  # ~ q^-2 on even orders
    tail = vs._series_tail(terms)
    exact = sum(4.0 / q ** 2 for q in range(8, 400_000, 2))
    assert tail == pytest.approx(exact, rel=1e-3)
    assert vs._series_tail(np.array([1.0, 2.0])) == math.inf
    assert math.isnan(vs._series_tail(np.array([0.0, 1.0])))


def test_stack_csv(tmp_path, unit_cov, aniso_model):
    vs.write_stack_csv(tmp_path / "s.csv", vs.build_stack(0.0, unit_cov, aniso_model, 4))
    text = (tmp_path / "s.csv").read_text().splitlines()
    assert text[:2] == ["# schema=1", "name,i,j,value"]
    assert any(line.startswith("sigma_param,1,1,") for line in text)
    assert text[-1].startswith("tail_estimate")
