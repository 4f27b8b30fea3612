import math

import numpy as np
import pytest

from netquant import ivqr
from netquant import mc_harness as mc
from netquant.distributions import InnovationDist
from netquant.errors import DomainError, EstimationError

FAST_GRID = ivqr.GridSpec(coarse_step=0.05, refine_rounds=0)


def tiny(**kw):
    base = dict(n=30, t=12, taus=(0.5,), replications=3, seed=7, grid=FAST_GRID, burn_in=20)
    base.update(kw)
    return mc.Scenario(**base)


@pytest.fixture(scope="module")
def tiny_report():
    return mc.run_scenario(tiny())


def test_runs_are_deterministic(tiny_report):
    again = mc.run_scenario(tiny())
    assert again.to_json() == tiny_report.to_json()
    assert again.to_csv() == tiny_report.to_csv()


def test_thread_count_does_not_change_report(tiny_report):
    assert mc.run_scenario(tiny(), threads=2).to_csv() == tiny_report.to_csv()


def test_seed_changes_report(tiny_report):
    assert mc.run_scenario(tiny(seed=8)).to_csv() != tiny_report.to_csv()


def test_report_layout(tiny_report):
    names = tiny_report.names
    assert names[0] == "gamma1" and len(names) == 1 + 3 + 5 + 4
    assert len(tiny_report.cells) == 2 * len(names)
    c = tiny_report.cell("IVQR", 0.5, "gamma1")
    assert c.replication_count + c.failures == 3
    assert tiny_report.estimates[("IVQR", 0.5)].shape == (3, len(names))
    header = tiny_report.to_csv().splitlines()[0].split(",")
    assert header[:4] == ["estimator", "tau", "param", "truth"]


def _result(rep, est, truth_map, names=("gamma1", "gamma0")):
    cells = {("IVQR", 0.5): mc.CellResult(np.asarray(est, float), np.array([True, False]))}
    return mc.ReplicationResult(rep, names, {0.5: truth_map}, cells)


def _truth(scn):
    from netquant import dnqr_sim

    return dnqr_sim.true_quantile_coefs(0.5, scn.dist, scn.coef_fn).as_dict()


def test_aggregate_identical_estimates():
    scn = tiny(estimators=("IVQR",))
    t = _truth(scn)
    est = [t["gamma1"], t["gamma0"]]
    rep = mc.aggregate([_result(i, est, t) for i in range(5)], scn)
    c = rep.cell("IVQR", 0.5, "gamma1")
    assert c.rmse_x100 == 0.0 and c.bias_x100 == 0.0
    assert c.coverage_x100 == 100.0
    assert rep.cell("IVQR", 0.5, "gamma0").coverage_x100 == 0.0


def test_aggregate_moments():
    scn = tiny(estimators=("IVQR",))
    t = _truth(scn)
    errs = np.array([0.1, -0.3, 0.25, 0.05])
    results = [_result(i, [t["gamma1"] + e, t["gamma0"]], t) for i, e in enumerate(errs)]
    c = mc.aggregate(results, scn).cell("IVQR", 0.5, "gamma1")
    assert c.bias_x100 == pytest.approx(100 * errs.mean())
    # rmse^2 = bias^2 + population variance
    assert (c.rmse_x100 / 100) ** 2 == pytest.approx(errs.mean() ** 2 + errs.var(), rel=1e-12)


def test_aggregate_counts_failures():
    scn = tiny(estimators=("IVQR",))
    t = _truth(scn)
    good = [_result(i, [t["gamma1"] + 0.1, t["gamma0"]], t) for i in range(3)]
    bad = mc.ReplicationResult(3, (), {}, {("IVQR", 0.5): mc.CellResult(error="boom")})
    no_ci = _result(4, [t["gamma1"] + 0.1, t["gamma0"]], t)
    no_ci.cells[("IVQR", 0.5)].covered = None
    c = mc.aggregate(good + [bad, no_ci], scn).cell("IVQR", 0.5, "gamma1")
    assert (c.replication_count, c.failures, c.ci_failures) == (4, 1, 1)
    assert c.bias_x100 == pytest.approx(10.0)


def test_all_failed_cell_is_unavailable():
    scn = tiny(estimators=("IVQR",))
    bad = mc.ReplicationResult(0, (), {}, error="simulation failed")
    c = mc.aggregate([bad], scn).cells[0]
    assert not c.available and math.isnan(c.rmse_x100)
    assert '"rmse_x100": null' in mc.McReport(scn.to_dict(), [c]).to_json()


def test_failure_injection(monkeypatch):
    real = ivqr.ivqr_estimate
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 2:
            raise EstimationError("injected")
        return real(*a, **k)

    monkeypatch.setattr(ivqr, "ivqr_estimate", flaky)
    rep = mc.run_scenario(tiny(estimators=("IVQR",)))
    c = rep.cell("IVQR", 0.5, "gamma1")
    assert (c.replication_count, c.failures) == (2, 1)
    res = mc.run_replication(tiny(estimators=("IVQR",)), 0)
    assert res.error is None


def test_compare_identical_estimators(tiny_report):
    doubled = mc.McReport(tiny_report.scenario, list(tiny_report.cells), names=tiny_report.names)
    for c in list(doubled.cells):
        if c.estimator == "IVQR":
            doubled.cells.remove(doubled.cell("OrdinaryQR", c.tau, c.param))
            doubled.cells.append(mc.CellStats(**{**c.__dict__, "estimator": "OrdinaryQR"}))
    rows = mc.compare_estimators(doubled)
    assert len(rows) == len(tiny_report.names)
    assert all(r.rmse_ratio == 1.0 and r.bias_ratio == 1.0 for r in rows)
    with pytest.raises(DomainError):
        mc.compare_estimators(mc.McReport({}, [c for c in tiny_report.cells if c.estimator == "IVQR"]))


def test_scenario_validation():
    with pytest.raises(DomainError):
        tiny(replications=0)
    with pytest.raises(DomainError):
        tiny(taus=(0.0,))
    with pytest.raises(DomainError):
        tiny(estimators=())
    with pytest.raises(DomainError):
        tiny(gamma1_constant=1.0)
    with pytest.raises(ValueError):
        tiny(estimators=("OLS",))


def test_scenario_from_mapping_round_trip():
    scn = mc.scenario_from_mapping({"n": 50, "network": "sbm:4", "dist": "t5", "taus": [0.25],
                                    "grid": {"refine_rounds": 1}})
    assert scn.network == mc.NetworkSpec(mc.NetworkKind.SBM, blocks=4)
    assert scn.dist == InnovationDist.student_t(5)
    assert scn.grid.refine_rounds == 1
    d = scn.to_dict()
    assert d["network"] == "sbm:4" and d["taus"] == [0.25]
    with pytest.raises(DomainError):
        mc.scenario_from_mapping({"bogus": 1})


@pytest.mark.parametrize("text,kind", [("dyad", "dyad"), ("sbm", "sbm"), ("powerlaw:3", "powerlaw")])
def test_network_spec_parse(text, kind):
    assert mc.NetworkSpec.parse(text).kind.value == kind


def test_fixed_network_flag(monkeypatch):
    seen = []
    real = mc.draw_network

    def spy(spec, n, rng):
        adj = real(spec, n, rng)
        seen.append(adj.to_dense().tobytes())
        return adj

    monkeypatch.setattr(mc, "draw_network", spy)
    monkeypatch.setattr(mc, "_estimate_cell", lambda *a: mc.CellResult(error="skipped"))
    for rep in range(3):
        mc.run_replication(tiny(fixed_network=True), rep)
    assert len(set(seen)) == 1
    seen.clear()
    for rep in range(3):
        mc.run_replication(tiny(), rep)
    assert len(set(seen)) == 3


def test_ordinary_qr_bias_sign_under_constant_effect():
    # a positive contemporaneous effect feeds the own shock into ybar, so QR
    # that treats ybar as exogenous overstates gamma1
    scn = tiny(n=60, t=30, replications=4, estimators=("OrdinaryQR",), gamma1_constant=0.5,
               network=mc.NetworkSpec(mc.NetworkKind.SBM, blocks=2))
    c = mc.run_scenario(scn).cell("OrdinaryQR", 0.5, "gamma1")
    assert c.truth == 0.5
    assert c.bias_x100 > 0


def test_check_bands_shape(tiny_report):
    scn = tiny(taus=(0.1, 0.5, 0.9), replications=1)
    rep = mc.run_scenario(scn)
    checks = mc.check_bands(rep)
    names = [c.name for c in checks]
    assert "rmse gamma1 tau=0.1" in names and "|bias| ratio gamma1 tau=0.1" in names
    assert all(isinstance(c.passed, bool) for c in checks)
