import csv
import io
import json

import numpy as np
import pytest
from scipy import stats

from netquant import dnqr_sim as ds
from netquant import ivqr
from netquant import network as nw
from netquant import panel_io as pio
from netquant.distributions import make_rng
from netquant.errors import DataError, DomainError, EstimationError

FAST_GRID = ivqr.GridSpec(coarse_step=0.05, refine_rounds=0)


@pytest.fixture(scope="module")
def panel():
    adj = nw.gen_sbm(25, 3, make_rng(1, 0))
    cfg = ds.SimConfig(n=25, t=15, network=nw.row_normalize(adj), burn_in=20)
    return ds.simulate_panel(cfg, make_rng(1, 1))


def test_save_load_round_trip_is_bitwise(panel, tmp_path):
    path = pio.save_panel(panel, tmp_path)
    back = pio.load_dataset(path)
    assert np.array_equal(back.y, panel.y)
    assert np.array_equal(back.z, panel.z)
    assert np.array_equal(back.f, panel.f)
    assert (back.network.matrix != panel.network.matrix).nnz == 0
    assert back.meta["z_names"] == ["z1", "z2", "z3", "z4", "z5"]
    # loading through the directory works as well
    assert np.array_equal(pio.load_dataset(tmp_path).y, panel.y)


def test_write_matrix_keeps_full_precision(tmp_path):
    vals = np.array([[0.1, 1 / 3], [np.pi, -2.5e-300]])
    pio.write_matrix(tmp_path / "m.csv", vals, ["a", "b"])
    back, header = pio.read_matrix(tmp_path / "m.csv", 2, 2)
    assert header == ["a", "b"] and np.array_equal(back, vals)
    with pytest.raises(DomainError):
        pio.write_matrix(tmp_path / "m.csv", vals, ["a"])


def test_row_count_mismatch_names_file(panel, tmp_path):
    pio.save_panel(panel, tmp_path)
    mf = json.loads((tmp_path / "manifest.json").read_text())
    mf["n"] = 3
    (tmp_path / "manifest.json").write_text(json.dumps(mf))
    pio.write_matrix(tmp_path / "y.csv", np.ones((4, panel.t)), [f"t{i}" for i in range(panel.t)])
    with pytest.raises(DataError) as err:
        pio.load_dataset(tmp_path)
    assert err.value.path.name == "y.csv"
    assert "y.csv" in str(err.value)


def test_bad_cell_reports_position(tmp_path):
    (tmp_path / "m.csv").write_text("a,b\n1,2\n3,x\n")
    with pytest.raises(DataError) as err:
        pio.read_matrix(tmp_path / "m.csv")
    assert (err.value.row, err.value.column) == (3, 2)
    (tmp_path / "m.csv").write_text("a,b\n1,nan\n")
    with pytest.raises(DataError):
        pio.read_matrix(tmp_path / "m.csv")
    (tmp_path / "m.csv").write_text("a,b\n1\n")
    with pytest.raises(DataError) as err:
        pio.read_matrix(tmp_path / "m.csv")
    assert err.value.row == 2


def test_missing_file_and_bad_manifest(tmp_path):
    with pytest.raises(DataError):
        pio.DatasetManifest.read(tmp_path / "nope.json")
    (tmp_path / "manifest.json").write_text("{bad json")
    with pytest.raises(DataError):
        pio.DatasetManifest.read(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"y": "y.csv"}))
    with pytest.raises(DataError, match="missing"):
        pio.DatasetManifest.read(tmp_path)
    with pytest.raises(DomainError):
        pio.DatasetManifest("y", "z", "f", "w", 3, 3, 1, 1, network_format="dense")


def test_constant_covariate_cannot_be_standardised(panel, tmp_path):
    pio.save_panel(panel, tmp_path)
    z = panel.z.copy()
    z[:, 2] = 4.0
    pio.write_matrix(tmp_path / "z.csv", z, [f"z{j + 1}" for j in range(panel.q)])
    mf = pio.DatasetManifest.read(tmp_path)
    mf.standardize_z = True
    with pytest.raises(DataError) as err:
        pio.load_dataset(mf)
    assert err.value.column == 3


def test_standardize_columns():
    z = np.random.default_rng(0).normal(3.0, 2.0, size=(50, 3))
    out = pio.standardize_columns(z)
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0), 1, atol=1e-12)


def test_edge_list_network(panel, tmp_path):
    pio.save_panel(panel, tmp_path)
    (tmp_path / "edges.csv").write_text("src,dst\n0,1\n1,0\n2,0\n2,1\n")
    mf = pio.DatasetManifest.read(tmp_path)
    mf.network, mf.network_format = "edges.csv", "edges"
    w = pio.load_dataset(mf).network.to_dense()
    assert w[2, 0] == w[2, 1] == 0.5 and w[0, 1] == 1.0
    assert w[3].sum() == 0


def test_atomic_write_leaves_no_temp_files(tmp_path):
    pio.atomic_write_text(tmp_path / "a" / "out.txt", "hello")
    assert (tmp_path / "a" / "out.txt").read_text() == "hello"
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["out.txt"]


def test_sweep_csv_layout(panel):
    rows = pio.quantile_sweep(panel, [0.25, 0.75], FAST_GRID)
    text = pio.sweep_to_csv(rows)
    parsed = list(csv.reader(io.StringIO(text)))
    assert tuple(parsed[0]) == pio.SWEEP_COLUMNS == ("tau", "param", "estimate", "lo", "hi", "reason")
    names = ivqr.build_stacked(panel).theta_names
    assert len(parsed) == 1 + 2 * len(names)
    assert [r[1] for r in parsed[1:1 + len(names)]] == list(names)
    for r in parsed[1:]:
        if r[3]:
            assert float(r[3]) <= float(r[2]) <= float(r[4])
    with pytest.raises(DomainError):
        pio.quantile_sweep(panel, [0.5], FAST_GRID)


def test_sweep_records_failed_tau(panel, monkeypatch):
    real = ivqr.ivqr_estimate

    def fail_low(s, tau, *a, **k):
        if tau < 0.5:
            raise EstimationError("no luck")
        return real(s, tau, *a, **k)

    monkeypatch.setattr(ivqr, "ivqr_estimate", fail_low)
    rows = pio.quantile_sweep(panel, [0.25, 0.75], FAST_GRID)
    assert rows[0].param == "*" and "no luck" in rows[0].reason
    assert rows[0].estimate is None and rows[1].tau == 0.75
    assert pio.sweep_to_csv(rows).splitlines()[1].startswith("0.25,*,,,,")


def test_fixture_network_densities():
    for name, dens in pio.FIXTURE_DENSITIES.items():
        adj = pio.bernoulli_network(400, dens, make_rng(3, 0))
        assert adj.n_edges / (400 * 399) == pytest.approx(dens, rel=0.08)
    with pytest.raises(DomainError):
        pio.application_fixture(network="board")


@pytest.mark.slow
def test_fixture_contemporaneous_effect_decreases():
    panel, adj = pio.application_fixture()
    assert panel.meta["network"] == "headquarter"
    np.testing.assert_allclose(panel.z.std(axis=0), 1, atol=1e-12)
    taus = np.round(np.arange(0.1, 0.91, 0.1), 2)
    rows = pio.quantile_sweep(panel, taus, ivqr.GridSpec(refine_rounds=1))
    est = {(r.tau, r.param): r.estimate for r in rows}
    g1 = [est[(t, "gamma1")] for t in taus]
    assert stats.spearmanr(taus, g1).statistic < 0
    mid = 0.5
    assert abs(est[(mid, "gamma1")]) > max(abs(est[(mid, "gamma2")]), abs(est[(mid, "gamma3")]))
