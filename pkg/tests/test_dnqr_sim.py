import numpy as np
import pytest
from scipy import linalg

from netquant import dnqr_sim as ds
from netquant import network as nw
from netquant.distributions import InnovationDist, make_rng
from netquant.errors import DomainError, SimulationError

# 40-digit reference values of the coefficient functions at the 0.1 and 0.9
# standard-normal quantiles
REF_TAU_01 = {"gamma1": 0.01, "gamma2": 0.08691449141625783160, "gamma3": 0.04}
REF_TAU_09 = {
    "gamma2": 0.31308550858374219060,
    "alpha2": 0.14193494451118904688,
    "alpha3": 0.02710045656759943184,
    "alpha4": 0.00683369539032645927,
    "alpha5": 0.07332540885951880484,
    "beta11": 0.04065068485139914400,
    "beta20": 0.09462329634079270668,
    "beta21": 0.10998811328927819709,
}


def test_true_coefficients_reference_values():
    lo = ds.true_quantile_coefs(0.1).as_dict()
    for k, v in REF_TAU_01.items():
        assert lo[k] == pytest.approx(v, abs=1e-15)
    # Gamma CDFs vanish for negative arguments
    assert lo["alpha2"] == lo["beta11"] == 0.0
    hi = ds.true_quantile_coefs(0.9).as_dict()
    for k, v in REF_TAU_09.items():
        assert hi[k] == pytest.approx(v, abs=1e-15)


def test_median_coefficients():
    d = ds.true_quantile_coefs(0.5).as_dict()
    assert d["gamma0"] == 0.0
    assert d["gamma1"] == pytest.approx(0.05, abs=1e-15)
    assert d["gamma2"] == pytest.approx(0.2, abs=1e-15)
    assert d["gamma3"] == pytest.approx(0.2, abs=1e-15)
    assert d["alpha1"] == pytest.approx(0.25, abs=1e-15)


def test_param_names_cover_dict():
    assert set(ds.true_quantile_coefs(0.3).as_dict()) == set(ds.PARAM_NAMES)


def test_coef_draw_vectorised_and_monotone():
    u = np.linspace(-4, 4, 101)
    d = ds.coef_draw(u)
    assert d.alpha.shape == (5, 101)
    assert d.beta.shape == (2, 2, 101)
    assert d.beta_flat.shape == (4, 101)
    for arr in (d.gamma1, d.gamma2, d.gamma3, *d.alpha, *d.beta_flat):
        assert np.all(np.diff(arr) >= 0)
    assert np.all(np.isfinite(ds.coef_draw(np.array([-800.0, 800.0])).gamma2))


def test_t_innovation_truth_uses_t_quantile():
    t5 = InnovationDist.student_t(5)
    d = ds.true_quantile_coefs(0.9, t5)
    assert d.gamma0 == pytest.approx(t5.quantile(0.9))


def test_stationarity_of_design():
    c1, c23 = ds.coefficient_bounds()
    assert c1 == pytest.approx(0.1, abs=1e-9)
    assert c23 == pytest.approx(0.8, abs=1e-9)
    rep = ds.check_stationarity((c1, c23))
    assert rep.passed and rep.total == pytest.approx(0.9, abs=1e-9)
    assert not ds.check_stationarity((0.3, 0.75)).passed


@pytest.mark.parametrize("n", [5, 20, 50])
def test_neumann_solve_matches_dense_lu(n):
    rng = make_rng(n)
    w = nw.row_normalize(nw.gen_dyad(n, rng) if n > 5 else nw.AdjacencyMatrix.from_dense(np.ones((5, 5)) - np.eye(5)))
    a1 = 0.1 * rng.random(n)
    rhs = rng.standard_normal(n)
    y = ds.solve_contemporaneous(a1, w, rhs)
    ref = linalg.lu_solve(linalg.lu_factor(np.eye(n) - np.diag(a1) @ w.to_dense()), rhs)
    np.testing.assert_allclose(y, ref, atol=1e-9)


def test_neumann_requires_contraction():
    w = nw.row_normalize(nw.AdjacencyMatrix(2, [0, 1], [1, 0]))
    with pytest.raises(DomainError):
        ds.solve_contemporaneous(np.array([1.0, 0.5]), w, np.ones(2))


def _small_config(n=40, t=15, seed=0, **kw):
    w = nw.row_normalize(nw.gen_dyad(n, make_rng(seed, 0)))
    return ds.SimConfig(n=n, t=t, network=w, seed=seed, **kw)


def test_simulated_panel_shapes_and_determinism():
    cfg = _small_config()
    a = ds.simulate_panel(cfg, make_rng(1))
    b = ds.simulate_panel(cfg, make_rng(1))
    assert a.y.shape == (40, 15) and a.z.shape == (40, 5) and a.f.shape == (15, 2)
    np.testing.assert_array_equal(a.y, b.y)


@pytest.mark.parametrize("dist", [InnovationDist.normal(), InnovationDist.student_t(5)])
def test_structural_identity_holds(dist):
    cfg = _small_config(dist=dist, burn_in=20)
    panel, inn = ds.simulate_panel(cfg, make_rng(2), return_innovations=True)
    assert ds.structural_residual(panel, inn["u"], f_pre=inn["f_pre"]) < 1e-9
    # wrong innovations break the identity
    assert ds.structural_residual(panel, inn["u"] + 0.1, f_pre=inn["f_pre"]) > 1e-3


def test_config_validation():
    w = nw.row_normalize(nw.gen_dyad(10, make_rng(0)))
    with pytest.raises(DomainError):
        ds.SimConfig(n=11, t=5, network=w)
    with pytest.raises(DomainError):
        ds.SimConfig(n=10, t=1, network=w)


def test_panel_rejects_nonfinite():
    w = nw.row_normalize(nw.gen_dyad(4, make_rng(0)))
    y = np.zeros((4, 3))
    y[1, 1] = np.inf
    with pytest.raises(DomainError):
        ds.PanelData(y, np.zeros((4, 1)), np.zeros((3, 1)), w)


def test_explosive_contemporaneous_effect_raises():
    def bad(u):
        d = ds.coef_draw(u)
        d.gamma1 = np.full_like(np.asarray(u, dtype=float), 1.2)
        return d

    with pytest.raises(SimulationError):
        ds.simulate_panel(_small_config(coef_fn=bad), make_rng(3))


def test_endogeneity_demo_solves_system():
    y1, y2 = ds.endogeneity_demo(ds.default_gamma_pair, 1.0, 1.0, 0.3, -0.7)
    g01, g11 = ds.default_gamma_pair(0.3)
    g02, g12 = ds.default_gamma_pair(-0.7)
    assert y1 == pytest.approx(g01 + g11 * y2, abs=1e-14)
    assert y2 == pytest.approx(g02 + g12 * y1, abs=1e-14)
    # Y2 depends on U1: the regressor in equation 1 is endogenous
    y1b, y2b = ds.endogeneity_demo(ds.default_gamma_pair, 1.0, 1.0, 0.8, -0.7)
    assert y2b != y2
    with pytest.raises(SimulationError):
        ds.endogeneity_demo(lambda u: (u, 1.0), 1.0, 1.0, 0.0, 0.0)
