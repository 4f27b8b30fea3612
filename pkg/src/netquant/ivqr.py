"""Instrumental-variable quantile regression for the network model.

The contemporaneous network term is endogenous.  For each trial value g of
its coefficient we regress ``y - g * ybar`` on the exogenous regressors plus
instruments and record the squared weighted norm of the instrument
coefficients; the estimate is the g that drives that norm to its minimum.
The remaining coefficients come from a final quantile regression of
``y - g_hat * ybar`` on the exogenous regressors alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .dnqr_sim import PanelData
from .errors import (
    DataError,
    DegenerateFitError,
    DomainError,
    EstimationError,
    InstrumentError,
    NetquantError,
)
from .network import apply_weights
from .qr_core import DEFAULT_OPTIONS, Design, QuantileFit, SolverOptions, qr_fit

__all__ = [
    "DEFAULT_INSTRUMENTS",
    "GridSpec",
    "StackedRegression",
    "IvqrEstimate",
    "RestrictedModel",
    "build_stacked",
    "step1_fit",
    "profile_objective",
    "ivqr_estimate",
    "fit_restricted",
    "goodness_of_fit",
]

log = logging.getLogger(__name__)

DEFAULT_INSTRUMENTS: tuple[tuple[int, int], ...] = ((2, 1), (3, 1))


@dataclass(frozen=True)
class GridSpec:
    """Coarse-to-fine grid over the endogenous coefficient.

    Each refinement round recentres on the running argmin, keeps a bracket of
    two previous steps on either side and divides the step by ``refine_factor``.
    """

    lower: float = -0.98
    upper: float = 0.98
    coarse_step: float = 0.02
    refine_rounds: int = 3
    refine_factor: float = 10.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DomainError("grid lower bound must be below the upper bound")
        if not self.coarse_step > 0:
            raise DomainError("coarse_step must be positive")
        if self.refine_rounds < 0 or self.refine_factor <= 1:
            raise DomainError("refinement needs rounds >= 0 and factor > 1")

    def coarse_points(self) -> np.ndarray:
        count = int(np.floor((self.upper - self.lower) / self.coarse_step + 1e-9)) + 1
        return self.lower + self.coarse_step * np.arange(count)

    @property
    def resolution(self) -> float:
        return self.coarse_step / self.refine_factor ** self.refine_rounds


@dataclass
class StackedRegression:
    """Pooled regression arrays; rows ordered by period, then node.

    ``x`` columns are named by the coefficient they estimate:
    gamma0 (intercept), alpha1..q (node covariates), gamma2 (lagged network
    mean), gamma3 (own lag), then beta{j}{k} for factor j at lag k.
    """

    y_resp: np.ndarray
    ybar: np.ndarray
    x: np.ndarray
    r: np.ndarray
    x_names: tuple[str, ...]
    r_names: tuple[str, ...]
    node: np.ndarray
    period: np.ndarray
    t0: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_rows(self) -> int:
        return self.y_resp.size

    @property
    def k_x(self) -> int:
        return self.x.shape[1]

    @property
    def n_instruments(self) -> int:
        return self.r.shape[1]

    @property
    def theta_names(self) -> tuple[str, ...]:
        return ("gamma1",) + self.x_names

    def xr_design(self, opts: SolverOptions = DEFAULT_OPTIONS) -> Design:
        key = ("xr", opts.scaling)
        if key not in self._cache:
            self._cache[key] = Design(np.hstack([self.x, self.r]), scaling=opts.scaling)
        return self._cache[key]

    def x_design(self, opts: SolverOptions = DEFAULT_OPTIONS) -> Design:
        key = ("x", opts.scaling)
        if key not in self._cache:
            self._cache[key] = Design(self.x, scaling=opts.scaling)
        return self._cache[key]

    def scale_instruments(self, c: float) -> "StackedRegression":
        return StackedRegression(self.y_resp, self.ybar, self.x, self.r * c, self.x_names,
                                 self.r_names, self.node, self.period, self.t0)

    def scale_response(self, c: float) -> "StackedRegression":
        """Panel with y multiplied by c: every level column scales with it."""
        scaled = {"gamma2", "gamma3"}
        x = self.x.copy()
        for j, name in enumerate(self.x_names):
            if name in scaled:
                x[:, j] *= c
        return StackedRegression(self.y_resp * c, self.ybar * c, x, self.r * c, self.x_names,
                                 self.r_names, self.node, self.period, self.t0)


def first_usable_period(p: int, instruments: Sequence[tuple[int, int]]) -> int:
    """0-based index of the first period with every lag available."""
    max_lag = max([1, p] + [s for _, s in instruments])
    return max_lag


def build_stacked(panel: PanelData, p: int = 1, instruments: Sequence[tuple[int, int]] = DEFAULT_INSTRUMENTS) -> StackedRegression:
    """Stack a panel into the pooled IVQR regression.

    ``instruments`` lists ``(power, lag)`` pairs, each giving the column
    W^power Y_{t-lag}.
    """
    y = panel.y
    n, t_all = y.shape
    instruments = tuple((int(k), int(s)) for k, s in instruments)
    if any(k < 1 or s < 1 for k, s in instruments):
        raise DomainError("instrument powers and lags must be >= 1")
    if p < 0:
        raise DomainError("factor lag order must be >= 0")
    t0 = first_usable_period(p, instruments)
    if t_all < t0 + 1:
        raise DomainError(f"panel has {t_all} periods; need at least {t0 + 1}")
    for name, arr in (("y", y), ("z", panel.z), ("f", panel.f)):
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            i, t = bad[0]
            raise DataError(f"non-finite value in {name}", row=int(i), column=int(t))

    w = panel.network
    keep = np.arange(t0, t_all)
    t_used = keep.size

    def stack(mat, lag=0):
        return mat[:, keep - lag].T.ravel()

    wy = apply_weights(w, y)
    cols = [np.ones(n * t_used)]
    names = ["gamma0"]
    for l in range(panel.q):
        cols.append(np.tile(panel.z[:, l], t_used))
        names.append(f"alpha{l + 1}")
    cols += [stack(wy, 1), stack(y, 1)]
    names += ["gamma2", "gamma3"]
    for k in range(p + 1):
        for j in range(panel.m):
            cols.append(np.repeat(panel.f[keep - k, j], n))
            names.append(f"beta{j + 1}{k}")

    powers: dict[int, np.ndarray] = {1: wy}
    rcols, rnames = [], []
    for k, s in instruments:
        if k not in powers:
            prev = max(powers)
            mat = powers[prev]
            for kk in range(prev + 1, k + 1):
                mat = apply_weights(w, mat)
                powers[kk] = mat
        rcols.append(stack(powers[k], s))
        rnames.append(f"W{k}Y_lag{s}")

    return StackedRegression(
        y_resp=stack(y),
        ybar=stack(wy),
        x=np.column_stack(cols),
        r=np.column_stack(rcols) if rcols else np.empty((n * t_used, 0)),
        x_names=tuple(names),
        r_names=tuple(rnames),
        node=np.tile(np.arange(n), t_used),
        period=np.repeat(keep, n),
        t0=t0,
    )


def _check_instruments(s: StackedRegression) -> None:
    if s.n_instruments == 0:
        raise InstrumentError("no instruments supplied")
    sd = s.r.std(axis=0)
    dead = np.flatnonzero(sd <= 1e-12 * np.maximum(1.0, np.abs(s.r).max(axis=0)))
    if dead.size:
        raise InstrumentError(f"instrument {s.r_names[dead[0]]} has zero variance")


def step1_fit(s: StackedRegression, gamma1_tilde: float, tau: float, opts: SolverOptions = DEFAULT_OPTIONS, basis=None):
    """QR of ``y - gamma1_tilde * ybar`` on ``[x | r]``.

    Returns ``(eta_hat, fit)``; ``eta_hat[:k_x]`` are the exogenous
    coefficients and ``eta_hat[k_x:]`` the instrument coefficients.
    ``basis`` is an optional warm-start vertex from a nearby trial value.
    """
    if not abs(gamma1_tilde) < 1:
        raise DomainError("trial coefficient must lie in (-1, 1)")
    fit = qr_fit(s.xr_design(opts), s.y_resp - gamma1_tilde * s.ybar, tau, opts, basis=basis)
    return fit.coefficients, fit


@dataclass
class ProfilePoint:
    gamma1: float
    value: float
    lam: np.ndarray
    basis: np.ndarray | None = None


def _weighted_norm(lam: np.ndarray, weight) -> float:
    if weight is None:
        return float(lam @ lam)
    return float(lam @ np.asarray(weight) @ lam)


def profile_objective(
    s: StackedRegression,
    tau: float,
    grid: GridSpec = GridSpec(),
    weight=None,
    opts: SolverOptions = DEFAULT_OPTIONS,
) -> list[ProfilePoint]:
    """Evaluate lambda' A lambda over the coarse grid and its refinements.

    Points are visited in increasing order and each fit is warm-started from
    the optimal vertex of the nearest point already evaluated, so the trace
    does not depend on how the caller schedules work.  Failed evaluations are
    logged and dropped.  Returns every successful point sorted by the trial
    coefficient.
    """
    if weight is not None:
        a = np.asarray(weight, dtype=float)
        if a.shape != (s.n_instruments,) * 2 or not np.allclose(a, a.T):
            raise DomainError("weight must be a symmetric l x l matrix")
        if np.min(np.linalg.eigvalsh(a)) <= 0:
            raise DomainError("weight must be positive definite")
    k_x = s.k_x
    s.xr_design(opts)
    evaluated: dict[float, ProfilePoint | None] = {}

    def hint(g):
        ok = [pt for pt in evaluated.values() if pt is not None and pt.basis is not None]
        if not ok:
            return None
        return min(ok, key=lambda pt: (abs(pt.gamma1 - g), pt.gamma1)).basis

    def run(points):
        todo = sorted({round(float(v), 12) for v in points})
        for g in todo:
            if g in evaluated or not grid.lower - 1e-12 <= g <= grid.upper + 1e-12 or not abs(g) < 1:
                continue
            try:
                eta, fit = step1_fit(s, g, tau, opts, basis=hint(g))
            except NetquantError as exc:
                log.debug("grid point %.6f failed: %s", g, exc)
                evaluated[g] = None
                continue
            lam = eta[k_x:]
            evaluated[g] = ProfilePoint(g, _weighted_norm(lam, weight), lam, fit.basis)

    def argmin():
        ok = [pt for pt in evaluated.values() if pt is not None]
        if not ok:
            raise EstimationError("every grid evaluation failed")
        best = min(pt.value for pt in ok)
        return min(pt.gamma1 for pt in ok if pt.value <= best + 1e-12)

    run(grid.coarse_points())
    step = grid.coarse_step
    for _ in range(grid.refine_rounds):
        centre = argmin()
        new_step = step / grid.refine_factor
        half = int(round(2 * grid.refine_factor))
        run(centre + new_step * np.arange(-half, half + 1))
        step = new_step
    argmin()
    return sorted((pt for pt in evaluated.values() if pt is not None), key=lambda pt: pt.gamma1)


@dataclass
class IvqrEstimate:
    tau: float
    gamma1_hat: float
    phi_hat: np.ndarray
    lambda_hat: np.ndarray
    profile_trace: list
    objective: float
    residuals: np.ndarray = field(repr=False)
    x_names: tuple[str, ...] = ()
    r_names: tuple[str, ...] = ()
    tie: bool = False
    std_errors: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None
    covariance: object = None
    inference_error: str | None = None

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([[self.gamma1_hat], self.phi_hat])

    @property
    def theta_names(self) -> tuple[str, ...]:
        return ("gamma1",) + tuple(self.x_names)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.theta_names, self.theta.tolist()))


def ivqr_estimate(
    s: StackedRegression,
    tau: float,
    grid: GridSpec = GridSpec(),
    weight=None,
    opts: SolverOptions = DEFAULT_OPTIONS,
) -> IvqrEstimate:
    """Three-step IVQR estimate of (gamma1, phi) at quantile ``tau``."""
    _check_instruments(s)
    trace = profile_objective(s, tau, grid, weight, opts)
    best = min(pt.value for pt in trace)
    minimisers = [pt for pt in trace if pt.value <= best + 1e-12]
    chosen = minimisers[0]
    if len(minimisers) > 1:
        log.info("profile minimum tied at %d grid points; taking the smallest", len(minimisers))
    g = chosen.gamma1
    fit3 = qr_fit(s.x_design(opts), s.y_resp - g * s.ybar, tau, opts)
    return IvqrEstimate(
        tau=float(tau),
        gamma1_hat=g,
        phi_hat=fit3.coefficients,
        lambda_hat=chosen.lam,
        profile_trace=[(pt.gamma1, pt.value) for pt in trace],
        objective=fit3.objective,
        residuals=fit3.residuals,
        x_names=s.x_names,
        r_names=s.r_names,
        tie=len(minimisers) > 1,
    )


class RestrictedModel(str, Enum):
    NQAR = "NQAR"
    NQARF = "NQARF"
    DNQR_OLSQR = "DNQR_OLSQR"


def restricted_columns(s: StackedRegression, model: RestrictedModel) -> tuple[np.ndarray, tuple[str, ...]]:
    model = RestrictedModel(model)
    if model is RestrictedModel.DNQR_OLSQR:
        return np.column_stack([s.ybar, s.x]), ("gamma1",) + s.x_names
    keep = [j for j, nm in enumerate(s.x_names) if model is RestrictedModel.NQARF or not nm.startswith("beta")]
    return s.x[:, keep], tuple(s.x_names[j] for j in keep)


def fit_restricted(s: StackedRegression, tau: float, model: RestrictedModel, opts: SolverOptions = DEFAULT_OPTIONS) -> QuantileFit:
    """Comparison models fitted by plain QR.

    NQAR drops the contemporaneous term and the factors, NQARF keeps the
    factors, and DNQR_OLSQR treats ybar as an ordinary regressor.
    Identically zero columns (e.g. absent factors) are left out of the fit
    and reported with a zero coefficient.
    """
    x, _ = restricted_columns(s, model)
    live = np.any(x != 0, axis=0)
    if live.all():
        return qr_fit(x, s.y_resp, tau, opts)
    fit = qr_fit(x[:, live], s.y_resp, tau, opts)
    coef = np.zeros(x.shape[1])
    coef[live] = fit.coefficients
    return replace(fit, coefficients=coef)


def goodness_of_fit(unrestricted_objective: float, restricted_objective: float) -> float:
    """1 - V_hat / V_tilde; negative values mean the larger model fits worse."""
    if restricted_objective <= 0:
        raise DegenerateFitError("restricted check loss is zero; goodness of fit undefined")
    r2 = 1.0 - unrestricted_objective / restricted_objective
    if r2 < 0:
        log.warning("goodness of fit is negative (%.4g)", r2)
    return r2
