"""Monte Carlo experiments: RMSE, bias and coverage of IVQR and ordinary QR.

Every replication draws its own network and panel from generators keyed by
``(seed, rep_index)``, so a report does not depend on how replications are
scheduled across worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import partial
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import dnqr_sim, inference, ivqr
from . import network as nw
from .distributions import InnovationDist, make_rng
from .errors import DomainError, NetquantError

__all__ = [
    "NetworkKind",
    "NetworkSpec",
    "Estimator",
    "Scenario",
    "CellResult",
    "ReplicationResult",
    "CellStats",
    "McReport",
    "ComparisonRow",
    "BandCheck",
    "ACCEPTANCE_BANDS",
    "draw_network",
    "run_replication",
    "run_scenario",
    "aggregate",
    "compare_estimators",
    "check_bands",
    "scenario_from_mapping",
]

log = logging.getLogger(__name__)

# stream keys under (seed, rep)
_NETWORK_STREAM = 0
_PANEL_STREAM = 1
_FIXED_NETWORK_REP = 2**32 - 1


class NetworkKind(str, Enum):
    DYAD = "dyad"
    SBM = "sbm"
    POWERLAW = "powerlaw"


@dataclass(frozen=True)
class NetworkSpec:
    kind: NetworkKind = NetworkKind.DYAD
    blocks: int = 5
    exponent: float = 2.5

    def __post_init__(self):
        object.__setattr__(self, "kind", NetworkKind(self.kind))
        if self.blocks < 1:
            raise DomainError("blocks must be >= 1")
        if not self.exponent > 1:
            raise DomainError("power-law exponent must exceed 1")

    @classmethod
    def parse(cls, text: str) -> "NetworkSpec":
        """``dyad``, ``sbm`` / ``sbm:10`` or ``powerlaw`` / ``powerlaw:2.5``."""
        name, _, arg = text.strip().lower().partition(":")
        try:
            kind = NetworkKind(name)
        except ValueError:
            raise DomainError(f"unknown network type {text!r}") from None
        if kind is NetworkKind.SBM and arg:
            return cls(kind, blocks=int(arg))
        if kind is NetworkKind.POWERLAW and arg:
            return cls(kind, exponent=float(arg))
        return cls(kind)

    @property
    def label(self) -> str:
        if self.kind is NetworkKind.SBM:
            return f"sbm:{self.blocks}"
        if self.kind is NetworkKind.POWERLAW:
            return f"powerlaw:{self.exponent:g}"
        return "dyad"


class Estimator(str, Enum):
    IVQR = "IVQR"
    ORDINARY_QR = "OrdinaryQR"


def _constant_gamma1(u, c: float):
    d = dnqr_sim.coef_draw(u)
    d.gamma1 = np.full_like(np.asarray(d.gamma1, dtype=float), c)
    return d


@dataclass(frozen=True)
class Scenario:
    n: int = 100
    t: int = 100
    network: NetworkSpec = NetworkSpec()
    dist: InnovationDist = InnovationDist.normal()
    taus: tuple = (0.1, 0.5, 0.9)
    replications: int = 200
    estimators: tuple = (Estimator.IVQR, Estimator.ORDINARY_QR)
    seed: int = 0
    alpha: float = 0.05
    grid: ivqr.GridSpec = ivqr.GridSpec()
    fixed_network: bool = False
    burn_in: int = 100
    gamma1_constant: float | None = None

    def __post_init__(self):
        if self.replications < 1:
            raise DomainError("replications must be >= 1")
        taus = tuple(float(x) for x in self.taus)
        if not taus or any(not 0 < x < 1 for x in taus):
            raise DomainError("taus must lie strictly inside (0, 1)")
        object.__setattr__(self, "taus", taus)
        ests = tuple(Estimator(e) for e in self.estimators)
        if not ests:
            raise DomainError("at least one estimator is required")
        object.__setattr__(self, "estimators", ests)
        if self.n < 2 or self.t < 3:
            raise DomainError("need n >= 2 and t >= 3")
        if self.gamma1_constant is not None and not abs(self.gamma1_constant) < 1:
            raise DomainError("gamma1_constant must lie in (-1, 1)")

    @property
    def coef_fn(self):
        if self.gamma1_constant is None:
            return dnqr_sim.coef_draw
        return partial(_constant_gamma1, c=float(self.gamma1_constant))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "t": self.t,
            "network": self.network.label,
            "dist": self.dist.label,
            "taus": list(self.taus),
            "replications": self.replications,
            "estimators": [e.value for e in self.estimators],
            "seed": self.seed,
            "alpha": self.alpha,
            "grid": asdict(self.grid),
            "fixed_network": self.fixed_network,
            "burn_in": self.burn_in,
            "gamma1_constant": self.gamma1_constant,
        }


def scenario_from_mapping(data: dict) -> Scenario:
    """Build a Scenario from a JSON/TOML-style mapping of its fields."""
    data = dict(data)
    known = set(Scenario.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise DomainError(f"unknown scenario fields: {sorted(unknown)}")
    if isinstance(data.get("network"), str):
        data["network"] = NetworkSpec.parse(data["network"])
    elif isinstance(data.get("network"), dict):
        data["network"] = NetworkSpec(**data["network"])
    if isinstance(data.get("dist"), str):
        data["dist"] = InnovationDist.parse(data["dist"])
    if isinstance(data.get("grid"), dict):
        data["grid"] = ivqr.GridSpec(**data["grid"])
    for key in ("taus", "estimators"):
        if key in data:
            data[key] = tuple(data[key])
    return Scenario(**data)


def draw_network(spec: NetworkSpec, n: int, rng: np.random.Generator) -> nw.AdjacencyMatrix:
    if spec.kind is NetworkKind.DYAD:
        return nw.gen_dyad(n, rng)
    if spec.kind is NetworkKind.SBM:
        return nw.gen_sbm(n, spec.blocks, rng)
    return nw.gen_powerlaw(n, rng, spec.exponent)


@dataclass
class CellResult:
    """One estimator at one tau in one replication."""

    estimates: np.ndarray | None = None
    covered: np.ndarray | None = None
    error: str | None = None
    ci_error: str | None = None


@dataclass
class ReplicationResult:
    rep: int
    names: tuple
    truth: dict
    cells: dict = field(default_factory=dict)  # (estimator value, tau) -> CellResult
    error: str | None = None


def _estimate_cell(s, scenario: Scenario, est: Estimator, tau: float, truth: np.ndarray) -> CellResult:
    try:
        if est is Estimator.IVQR:
            fit = ivqr.ivqr_estimate(s, tau, scenario.grid)
            theta = fit.theta
            resid = fit.residuals
            cov_fn = partial(inference.ivqr_covariance, s, resid, tau, scenario.alpha)
        else:
            fit = ivqr.fit_restricted(s, tau, ivqr.RestrictedModel.DNQR_OLSQR)
            theta = fit.coefficients
            cov_fn = partial(inference.ordinary_qr_inference, s, fit, scenario.alpha)
    except NetquantError as exc:
        return CellResult(error=f"{type(exc).__name__}: {exc}")
    try:
        cov = cov_fn()
        lo, hi = inference.confidence_interval(theta, cov.std_errors, scenario.alpha)
        covered = (lo <= truth) & (truth <= hi)
        return CellResult(theta, covered)
    except NetquantError as exc:
        return CellResult(theta, None, ci_error=f"{type(exc).__name__}: {exc}")


def run_replication(scenario: Scenario, rep_index: int) -> ReplicationResult:
    """Simulate one panel and estimate every (estimator, tau) cell.

    Estimation errors are recorded in the result and never raised.
    """
    net_rep = _FIXED_NETWORK_REP if scenario.fixed_network else rep_index
    adj = draw_network(scenario.network, scenario.n, make_rng(scenario.seed, net_rep, _NETWORK_STREAM))
    w = nw.row_normalize(adj)
    coef_fn = scenario.coef_fn
    truths = {tau: dnqr_sim.true_quantile_coefs(tau, scenario.dist, coef_fn).as_dict() for tau in scenario.taus}
    out = ReplicationResult(rep_index, (), truths)
    try:
        cfg = dnqr_sim.SimConfig(n=scenario.n, t=scenario.t, network=w, dist=scenario.dist,
                                 burn_in=scenario.burn_in, seed=scenario.seed, coef_fn=coef_fn)
        panel = dnqr_sim.simulate_panel(cfg, make_rng(scenario.seed, rep_index, _PANEL_STREAM))
        s = ivqr.build_stacked(panel)
    except NetquantError as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        return out
    names = s.theta_names
    out.names = names
    for tau in scenario.taus:
        truth = np.array([truths[tau][nm] for nm in names])
        for est in scenario.estimators:
            out.cells[(est.value, tau)] = _estimate_cell(s, scenario, est, tau, truth)
    return out


def _run_chunk(scenario: Scenario, reps: Sequence[int]) -> list[ReplicationResult]:
    with threadpool_limits(1):
        return [run_replication(scenario, r) for r in reps]


def run_scenario(scenario: Scenario, threads: int = 1, progress=None) -> "McReport":
    """Run every replication (in ``threads`` worker processes) and aggregate."""
    reps = list(range(scenario.replications))
    results: dict[int, ReplicationResult] = {}
    if threads <= 1:
        with threadpool_limits(1):
            for r in reps:
                results[r] = run_replication(scenario, r)
                if progress:
                    progress(r + 1, len(reps))
    else:
        chunks = [reps[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for chunk_res in pool.map(partial(_run_chunk, scenario), chunks):
                for res in chunk_res:
                    results[res.rep] = res
        if progress:
            progress(len(reps), len(reps))
    return aggregate([results[r] for r in reps], scenario)


@dataclass
class CellStats:
    estimator: str
    tau: float
    param: str
    truth: float
    rmse_x100: float
    bias_x100: float
    coverage_x100: float
    replication_count: int
    failures: int
    ci_failures: int = 0
    available: bool = True


@dataclass
class McReport:
    scenario: dict
    cells: list
    estimates: dict = field(default_factory=dict, repr=False)  # (estimator, tau) -> (reps x params)
    names: tuple = ()

    def cell(self, estimator, tau: float, param: str) -> CellStats:
        est = Estimator(estimator).value
        for c in self.cells:
            if c.estimator == est and math.isclose(c.tau, tau) and c.param == param:
                return c
        raise KeyError((est, tau, param))

    def to_json(self) -> str:
        body = {"scenario": self.scenario, "cells": [_clean(asdict(c)) for c in self.cells]}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = list(CellStats.__dataclass_fields__)
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for c in self.cells:
            row = asdict(c)
            wr.writerow([_fmt(row[k]) for k in cols])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def _clean(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def aggregate(results: Iterable[ReplicationResult], scenario: Scenario) -> McReport:
    """Moments over successful replications; failures counted per cell."""
    results = sorted(results, key=lambda r: r.rep)
    names = next((r.names for r in results if r.names), ())
    if not names:
        names = ("gamma1",)
    cells, estimates = [], {}
    for est in scenario.estimators:
        for tau in scenario.taus:
            key = (est.value, tau)
            truth_map = dnqr_sim.true_quantile_coefs(tau, scenario.dist, scenario.coef_fn).as_dict()
            truth = np.array([truth_map[nm] for nm in names])
            rows, cov_rows, fails, ci_fails = [], [], 0, 0
            for r in results:
                cell = r.cells.get(key)
                if cell is None or cell.estimates is None:
                    fails += 1
                    rows.append(np.full(len(names), np.nan))
                    continue
                rows.append(np.asarray(cell.estimates, dtype=float))
                if cell.covered is None:
                    ci_fails += 1
                else:
                    cov_rows.append(np.asarray(cell.covered, dtype=float))
            mat = np.vstack(rows) if rows else np.empty((0, len(names)))
            estimates[key] = mat
            ok = mat[~np.isnan(mat).any(axis=1)]
            for j, nm in enumerate(names):
                if ok.shape[0] == 0:
                    cells.append(CellStats(est.value, tau, nm, float(truth[j]), math.nan, math.nan,
                                           math.nan, 0, fails, ci_fails, False))
                    continue
                err = ok[:, j] - truth[j]
                cover = 100.0 * float(np.mean([c[j] for c in cov_rows])) if cov_rows else math.nan
                cells.append(CellStats(
                    est.value, tau, nm, float(truth[j]),
                    100.0 * float(np.sqrt(np.mean(err ** 2))),
                    100.0 * float(np.mean(err)),
                    cover, int(ok.shape[0]), fails, ci_fails,
                ))
    return McReport(scenario.to_dict(), cells, estimates, tuple(names))


@dataclass
class ComparisonRow:
    tau: float
    param: str
    rmse_ratio: float
    bias_ratio: float
    ordinary_coverage_x100: float
    low_coverage: bool


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def compare_estimators(report: McReport, baseline=Estimator.IVQR, other=Estimator.ORDINARY_QR) -> list[ComparisonRow]:
    """Ordinary QR relative to IVQR: RMSE and |bias| ratios per cell."""
    base, oth = Estimator(baseline).value, Estimator(other).value
    have = {c.estimator for c in report.cells}
    if base not in have or oth not in have:
        raise DomainError("report needs both estimators to compare")
    rows = []
    for c in report.cells:
        if c.estimator != base:
            continue
        o = report.cell(oth, c.tau, c.param)
        rows.append(ComparisonRow(
            c.tau, c.param,
            _ratio(o.rmse_x100, c.rmse_x100),
            _ratio(abs(o.bias_x100), abs(c.bias_x100)),
            o.coverage_x100,
            bool(o.coverage_x100 < 90),
        ))
    return rows


@dataclass
class BandCheck:
    name: str
    value: float
    lower: float
    upper: float

    @property
    def passed(self) -> bool:
        return bool(self.lower <= self.value <= self.upper)


# (name, estimator, tau, param, statistic, lower, upper) for the dyad,
# N(0,1), N = T = 100 desk-scale scenario.
ACCEPTANCE_BANDS = (
    ("rmse gamma1 tau=0.1", "IVQR", 0.1, "gamma1", "rmse_x100", 4.0, 6.7),
    ("rmse gamma1 tau=0.5", "IVQR", 0.5, "gamma1", "rmse_x100", 3.6, 5.9),
    ("rmse gamma3 tau=0.1", "IVQR", 0.1, "gamma3", "rmse_x100", 2.3, 3.8),
)


def check_bands(report: McReport) -> list[BandCheck]:
    """Evaluate the embedded desk-scale bands (RMSE, coverage, bias contrast)."""
    checks = []
    for name, est, tau, param, stat, lo, hi in ACCEPTANCE_BANDS:
        checks.append(BandCheck(name, getattr(report.cell(est, tau, param), stat), lo, hi))
    for tau in (0.1, 0.5, 0.9):
        for c in report.cells:
            if c.estimator == "IVQR" and math.isclose(c.tau, tau):
                checks.append(BandCheck(f"coverage {c.param} tau={tau:g}", c.coverage_x100, 91.0, 99.0))
    qr = report.cell(Estimator.ORDINARY_QR, 0.1, "gamma1")
    iv = report.cell(Estimator.IVQR, 0.1, "gamma1")
    checks.append(BandCheck("ordinary |bias| gamma1 tau=0.1", abs(qr.bias_x100), 4.0, math.inf))
    checks.append(BandCheck("IVQR |bias| gamma1 tau=0.1", abs(iv.bias_x100), 0.0, 0.5))
    checks.append(BandCheck("|bias| ratio gamma1 tau=0.1", _ratio(abs(qr.bias_x100), abs(iv.bias_x100)), 8.0, math.inf))
    checks.append(BandCheck("ordinary coverage gamma1 tau=0.1", qr.coverage_x100, 0.0, 60.0))
    return checks


def desk_scale_scenario(replications: int = 200, seed: int = 20240101) -> Scenario:
    return Scenario(n=100, t=100, network=NetworkSpec(NetworkKind.DYAD), dist=InnovationDist.normal(),
                    taus=(0.1, 0.5, 0.9), replications=replications, seed=seed)


def with_replications(scenario: Scenario, replications: int) -> Scenario:
    return replace(scenario, replications=replications)
