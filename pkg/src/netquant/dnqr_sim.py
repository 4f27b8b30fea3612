"""Data-generating process of the dynamic network quantile model.

Each period solves

    (I - diag(g1) W) Y_t = A0_t + (diag(g2) W + diag(g3)) Y_{t-1} + B_t Fstack_t

where every coefficient is a function of a node-period innovation u_it and
``Fstack_t = (F_t, F_{t-1}, ..., F_{t-p})``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import distributions as dist
from .distributions import InnovationDist
from .errors import DomainError, SimulationError
from .network import NetworkWeights, apply_weights

__all__ = [
    "CoefficientDraw",
    "ParamVector",
    "SimConfig",
    "PanelData",
    "StationarityReport",
    "coef_draw",
    "simulate_panel",
    "solve_contemporaneous",
    "true_quantile_coefs",
    "check_stationarity",
    "endogeneity_demo",
    "PARAM_NAMES",
]

log = logging.getLogger(__name__)

# Reporting order of the 13 parameters (gamma0..3, alpha1..5, beta_jk with
# factor j and lag k).
PARAM_NAMES = (
    "gamma0", "gamma1", "gamma2", "gamma3",
    "alpha1", "alpha2", "alpha3", "alpha4", "alpha5",
    "beta10", "beta11", "beta20", "beta21",
)


@dataclass
class CoefficientDraw:
    """Coefficient functions evaluated at innovations (scalars or arrays).

    ``alpha`` has shape (q, ...) and ``beta`` shape (m, p+1, ...): entry
    ``beta[j, k]`` multiplies factor j at lag k.
    """

    gamma0: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    gamma3: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def beta_flat(self) -> np.ndarray:
        """(beta_10, beta_11, beta_20, beta_21, ...) ordering."""
        b = np.asarray(self.beta)
        return b.reshape(b.shape[0] * b.shape[1], *b.shape[2:])


def _gcdf(u, shape, scale):
    # G(u) is 0 for u < 0 (the natural left extension of a Gamma CDF)
    return dist.gamma_cdf(np.maximum(u, 0.0), shape, scale)


def coef_draw(u) -> CoefficientDraw:
    """Coefficient functions of the simulation design (q=5, m=2, p=1)."""
    u = np.asarray(u, dtype=float)
    phi = dist.norm_cdf(u)
    alpha = np.stack([
        0.5 * phi,
        0.3 * _gcdf(u, 1, 2),
        0.2 * _gcdf(u, 2, 2),
        0.25 * _gcdf(u, 3, 2),
        0.2 * _gcdf(u, 2, 1),
    ])
    beta = np.stack([
        np.stack([0.1 * phi, 0.3 * _gcdf(u, 2, 2)]),
        np.stack([0.2 * _gcdf(u, 1, 2), 0.3 * _gcdf(u, 2, 1)]),
    ])
    return CoefficientDraw(
        gamma0=u.copy(),
        gamma1=0.1 * phi,
        gamma2=0.4 * special.expit(u),
        gamma3=0.4 * phi,
        alpha=alpha,
        beta=beta,
    )


@dataclass
class ParamVector:
    """True (or estimated) quantile coefficients in named form."""

    gamma0: float
    gamma1: float
    gamma2: float
    gamma3: float
    alpha: np.ndarray
    beta: np.ndarray  # shape (m, p+1)

    @classmethod
    def from_draw(cls, d: CoefficientDraw) -> "ParamVector":
        return cls(
            float(d.gamma0), float(d.gamma1), float(d.gamma2), float(d.gamma3),
            np.asarray(d.alpha, dtype=float).ravel(),
            np.asarray(d.beta, dtype=float).reshape(np.shape(d.beta)[:2]),
        )

    def as_dict(self) -> dict[str, float]:
        out = {"gamma0": self.gamma0, "gamma1": self.gamma1, "gamma2": self.gamma2, "gamma3": self.gamma3}
        for l, v in enumerate(self.alpha, start=1):
            out[f"alpha{l}"] = float(v)
        m, lags = self.beta.shape
        for j in range(m):
            for k in range(lags):
                out[f"beta{j + 1}{k}"] = float(self.beta[j, k])
        return out


@dataclass(frozen=True)
class StationarityReport:
    c1: float
    c23: float
    c1_ok: bool
    c23_ok: bool
    sum_ok: bool

    @property
    def total(self) -> float:
        return self.c1 + self.c23

    @property
    def passed(self) -> bool:
        return self.c1_ok and self.c23_ok and self.sum_ok


def check_stationarity(gamma_bounds: tuple[float, float]) -> StationarityReport:
    """Check c1 < 1, c23 < 1 and c1 + c23 < 1 for coefficient sup-bounds."""
    c1, c23 = (float(abs(v)) for v in gamma_bounds)
    return StationarityReport(c1, c23, c1 < 1, c23 < 1, c1 + c23 < 1)


def coefficient_bounds(fn: Callable = coef_draw, grid=None) -> tuple[float, float]:
    """Numerical sup|g1| and sup|g2| + sup|g3| of a coefficient function."""
    if grid is None:
        grid = np.concatenate([np.linspace(-40, 40, 8001), [-1e3, 1e3]])
    d = fn(np.asarray(grid))
    return float(np.max(np.abs(d.gamma1))), float(np.max(np.abs(d.gamma2)) + np.max(np.abs(d.gamma3)))


def solve_contemporaneous(a1_diag, w: NetworkWeights, rhs, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Solve (I - diag(a1) W) y = rhs by the Neumann series.

    Requires max|a1| * ||W||_inf < 1 so the series contracts.
    """
    a1 = np.asarray(a1_diag, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if a1.shape != (w.n,) or rhs.shape[0] != w.n:
        raise DomainError("dimension mismatch between coefficients, network and right-hand side")
    rate = float(np.max(np.abs(a1))) * w.inf_norm() if w.n else 0.0
    if rate >= 1.0:
        raise DomainError(f"Neumann series does not contract: max|a1| * ||W||_inf = {rate:.6g} >= 1")
    y = rhs.copy()
    term = rhs
    scale = a1 if rhs.ndim == 1 else a1[:, None]
    for _ in range(max_iter):
        term = scale * (w.matrix @ term)
        y += term
        if np.max(np.abs(term), initial=0.0) < tol:
            return y
    raise SimulationError(f"Neumann series did not converge in {max_iter} terms")


@dataclass
class SimConfig:
    """Settings for one simulated panel.

    ``coef_fn`` maps an innovation array to a :class:`CoefficientDraw`; its
    alpha must have ``q`` rows and beta shape ``(m, p+1)``.
    """

    n: int
    t: int
    network: NetworkWeights
    dist: InnovationDist = field(default_factory=InnovationDist.normal)
    q: int = 5
    m: int = 2
    p: int = 1
    burn_in: int = 100
    seed: int = 0
    coef_fn: Callable = coef_draw
    correlation_base: float = 0.5

    def __post_init__(self):
        if self.burn_in < 0:
            raise DomainError("burn_in must be >= 0")
        if self.t < 2:
            raise DomainError("need at least two periods")
        if self.network.n != self.n:
            raise DomainError(f"network has {self.network.n} nodes, config says {self.n}")
        if self.q < 1 or self.m < 0 or self.p < 0:
            raise DomainError("invalid covariate/factor dimensions")


@dataclass
class PanelData:
    """Responses ``y`` (N x T), node covariates ``z`` (N x q), factors ``f`` (T x m)."""

    y: np.ndarray
    z: np.ndarray
    f: np.ndarray
    network: NetworkWeights
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.z.ndim == 1:
            self.z = self.z[:, None]
        if self.f.ndim == 1:
            self.f = self.f[:, None]
        n, t = self.y.shape
        if self.z.shape[0] != n or self.network.n != n:
            raise DomainError("node dimension mismatch between y, z and network")
        if self.f.shape[0] != t:
            raise DomainError(f"f has {self.f.shape[0]} periods but y has {t}")
        for name in ("y", "z", "f"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"{name} contains non-finite values")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def t(self) -> int:
        return self.y.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @property
    def m(self) -> int:
        return self.f.shape[1]


def simulate_panel(config: SimConfig, rng: np.random.Generator, return_innovations: bool = False):
    """Simulate a panel from the DNQR recursion.

    Z is drawn once, factors i.i.d. standard normal per period, and the
    recursion starts from Y = 0 and discards ``burn_in`` periods.  The
    returned panel has exactly ``config.t`` periods.
    """
    n, t_keep, p = config.n, config.t, config.p
    total = config.burn_in + t_keep
    w = config.network
    z = dist.sample_node_covariates(config.q, rng, config.correlation_base, size=n)
    # p extra leading factor draws so lags exist from the first period
    f_all = rng.standard_normal((total + p, config.m))
    u_all = dist.sample(config.dist, rng, size=(total, n))

    w_inf = w.inf_norm()
    y_prev = np.zeros(n)
    y_out = np.empty((n, t_keep))
    for t in range(total):
        c = config.coef_fn(u_all[t])
        alpha = np.asarray(c.alpha).reshape(config.q, n)
        beta = np.asarray(c.beta).reshape(config.m, p + 1, n)
        a0 = c.gamma0 + np.einsum("ln,nl->n", alpha, z)
        # Fstack: column k holds F_{t-k}
        fstack = f_all[t + p - np.arange(p + 1)].T  # (m, p+1)
        bf = np.einsum("jkn,jk->n", beta, fstack)
        rhs = a0 + c.gamma2 * apply_weights(w, y_prev) + c.gamma3 * y_prev + bf
        if float(np.max(np.abs(c.gamma1))) * w_inf >= 1.0:
            raise SimulationError(f"contemporaneous system not contractive at period {t}", period=t)
        try:
            y_t = solve_contemporaneous(c.gamma1, w, rhs)
        except (DomainError, SimulationError) as exc:
            raise SimulationError(f"period {t}: {exc}", period=t) from exc
        if t >= config.burn_in:
            y_out[:, t - config.burn_in] = y_t
        y_prev = y_t

    f_keep = f_all[config.burn_in + p:]
    meta = {
        "seed": config.seed,
        "dist": config.dist.label,
        "burn_in": config.burn_in,
        "p": p,
    }
    panel = PanelData(y_out, z, f_keep, w, meta)
    if return_innovations:
        # f_lagged gives the p factor values preceding the first kept period
        return panel, {"u": u_all[config.burn_in:].T, "f_pre": f_all[config.burn_in: config.burn_in + p]}
    return panel


def structural_residual(panel: PanelData, u: np.ndarray, coef_fn: Callable = coef_draw, f_pre=None, p: int = 1) -> float:
    """Max-norm residual of the structural equation over periods 2..T."""
    w = panel.network
    n, t_all = panel.y.shape
    f_ext = panel.f if f_pre is None else np.vstack([f_pre, panel.f])
    off = 0 if f_pre is None else len(f_pre)
    worst = 0.0
    for t in range(1, t_all):
        if t + off - p < 0:
            continue
        c = coef_fn(u[:, t])
        alpha = np.asarray(c.alpha).reshape(panel.q, n)
        beta = np.asarray(c.beta).reshape(panel.m, p + 1, n)
        fstack = f_ext[t + off - np.arange(p + 1)].T
        y_t, y_prev = panel.y[:, t], panel.y[:, t - 1]
        lhs = y_t - c.gamma1 * apply_weights(w, y_t)
        rhs = (c.gamma0 + np.einsum("ln,nl->n", alpha, panel.z)
               + c.gamma2 * apply_weights(w, y_prev) + c.gamma3 * y_prev
               + np.einsum("jkn,jk->n", beta, fstack))
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def true_quantile_coefs(tau: float, innovation: InnovationDist = dist.STD_NORMAL, coef_fn: Callable = coef_draw) -> ParamVector:
    """Coefficient functions evaluated at the innovation's tau-quantile."""
    u = float(innovation.quantile(tau))
    return ParamVector.from_draw(coef_fn(np.asarray(u)))


def endogeneity_demo(gamma_fn, a12: float, a21: float, u1: float, u2: float, tol: float = 1e-10):
    """Closed-form solution of the two-node simultaneous system.

    ``gamma_fn(u)`` returns ``(g0(u), g1(u))`` and the system is
    Y1 = g0(u1) + g1(u1) a12 Y2,  Y2 = g0(u2) + g1(u2) a21 Y1.
    """
    g01, g11 = (float(v) for v in gamma_fn(u1))
    g02, g12 = (float(v) for v in gamma_fn(u2))
    den = 1.0 - a21 * a12 * g11 * g12
    if abs(den) < tol:
        raise SimulationError("two-equation system is singular")
    y1 = (g01 + g02 * g11 * a12) / den
    y2 = (g02 + g01 * g12 * a21) / den
    return y1, y2


def default_gamma_pair(u):
    """(gamma0, gamma1) of the simulation design."""
    d = coef_draw(u)
    return d.gamma0, d.gamma1
