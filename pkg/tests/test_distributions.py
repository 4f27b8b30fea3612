import math

import numpy as np
import pytest
from scipy import integrate

from netquant import distributions as dist
from netquant.errors import DomainError

# high-precision reference values (40-digit mpmath evaluations)
NCDF_1_5 = 0.9331927987311419339955
NINV_0975 = 1.959963984540054235525
NINV_01 = -1.281551565544600466965
T5_CDF_1 = 0.8183912661754386871999


def test_norm_cdf_reference():
    assert dist.norm_cdf(1.5) == pytest.approx(NCDF_1_5, abs=1e-15)
    assert dist.norm_cdf(0.0) == 0.5


def test_norm_quantile_reference():
    assert dist.norm_quantile(0.975) == pytest.approx(NINV_0975, abs=1e-14)
    assert dist.norm_quantile(0.1) == pytest.approx(NINV_01, abs=1e-14)
    assert dist.norm_quantile(0.5) == 0.0


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_norm_quantile_domain(p):
    with pytest.raises(DomainError):
        dist.norm_quantile(p)


def test_norm_pdf_integrates_to_cdf():
    val, _ = integrate.quad(dist.norm_pdf, -np.inf, 0.7)
    assert val == pytest.approx(dist.norm_cdf(0.7), abs=1e-12)


def test_quantile_inverts_cdf():
    p = np.linspace(0.001, 0.999, 51)
    np.testing.assert_allclose(dist.norm_cdf(dist.norm_quantile(p)), p, atol=1e-14)


@pytest.mark.parametrize("shape", [1, 2, 3])
@pytest.mark.parametrize("scale", [1.0, 2.0])
def test_gamma_cdf_closed_form(shape, scale):
    # integer shape: 1 - exp(-x) sum_{k<a} x^k / k!
    for x in (0.0, 0.3, 1.0, 4.5, 12.0):
        z = x / scale
        exact = 1.0 - math.exp(-z) * sum(z ** k / math.factorial(k) for k in range(shape))
        assert dist.gamma_cdf(x, shape, scale) == pytest.approx(exact, abs=1e-14)


def test_gamma_cdf_rejects_negative():
    with pytest.raises(DomainError):
        dist.gamma_cdf(-0.1, 2, 2)
    with pytest.raises(DomainError):
        dist.gamma_cdf(1.0, 0, 2)


def test_t_cdf_reference_and_quadrature():
    assert dist.t_cdf(1.0, 5) == pytest.approx(T5_CDF_1, abs=1e-14)
    dens = lambda x: math.gamma(3) / (math.sqrt(5 * math.pi) * math.gamma(2.5)) * (1 + x * x / 5) ** -3
    val, _ = integrate.quad(dens, -np.inf, -0.8)
    assert dist.t_cdf(-0.8, 5) == pytest.approx(val, abs=1e-12)


def test_t_quantile_inverts():
    for p in (0.05, 0.3, 0.9):
        assert dist.t_cdf(dist.t_quantile(p, 5), 5) == pytest.approx(p, abs=1e-10)


def test_innovation_dist_parse_and_label():
    assert dist.InnovationDist.parse("normal") == dist.STD_NORMAL
    t5 = dist.InnovationDist.parse("t5")
    assert t5.df == 5 and t5.label == "t5"
    assert dist.InnovationDist.parse("t").df == 5
    with pytest.raises(DomainError):
        dist.InnovationDist.parse("cauchy")
    with pytest.raises(DomainError):
        dist.InnovationDist.student_t(2)


def test_innovation_quantile_dispatch():
    assert dist.STD_NORMAL.quantile(0.975) == pytest.approx(NINV_0975)
    t5 = dist.InnovationDist.student_t(5)
    assert t5.cdf(t5.quantile(0.8)) == pytest.approx(0.8)


def test_sample_shapes_and_moments():
    rng = dist.make_rng(11)
    x = dist.sample(dist.STD_NORMAL, rng, 200_000)
    assert x.shape == (200_000,)
    assert abs(x.mean()) < 0.01 and abs(x.var() - 1) < 0.015
    t = dist.sample(dist.InnovationDist.student_t(5), rng, 200_000)
    # t(5) is not standardised: variance 5/3
    assert abs(t.var() - 5 / 3) < 0.06


def test_covariate_covariance_structure():
    rng = dist.make_rng(3)
    z = dist.sample_node_covariates(5, rng, size=100_000)
    emp = np.cov(z, rowvar=False)
    target = 0.5 ** np.abs(np.subtract.outer(np.arange(5), np.arange(5)))
    np.testing.assert_allclose(emp, target, atol=0.02)
    assert dist.sample_node_covariates(3, rng).shape == (3,)
    with pytest.raises(DomainError):
        dist.sample_node_covariates(3, rng, correlation_base=1.0)


def test_make_rng_streams():
    a = dist.make_rng(5, 1).standard_normal(4)
    b = dist.make_rng(5, 1).standard_normal(4)
    c = dist.make_rng(5, 2).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
