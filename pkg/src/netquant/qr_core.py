"""Linear quantile regression by a primal-dual interior-point method.

The solver works on the bounded dual of the check-loss problem

    max_a  y'a   s.t.  X'a = (1 - tau) X'1,   0 <= a <= 1,

using Mehrotra predictor-corrector steps with a dense k x k normal-equation
solve per iteration (the Frisch-Newton scheme).  The Lagrange multipliers of
the equality constraint are minus the regression coefficients.  After
convergence the iterate is snapped to the nearest basic solution whenever
that does not increase the objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy import linalg

from .errors import DomainError, NonConvergenceError, SingularDesignError

__all__ = [
    "SolverOptions",
    "QuantileFit",
    "check_loss",
    "qr_objective",
    "qr_fit",
    "rank_check",
    "Design",
]

log = logging.getLogger(__name__)

_STEP_DAMP = 0.99995


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-8
    max_iter: int = 200
    scaling: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class QuantileFit:
    tau: float
    coefficients: np.ndarray
    residuals: np.ndarray
    objective: float
    iterations: int
    converged: bool
    basis: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.residuals.size

    @property
    def k(self) -> int:
        return self.coefficients.size


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    return tau


def check_loss(u, tau: float):
    """rho_tau(u) = u * (tau - 1{u < 0})."""
    tau = _check_tau(tau)
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def _objective(resid: np.ndarray, tau: float) -> float:
    return float(np.sum(resid * (tau - (resid < 0))))


def qr_objective(x, y, tau: float, beta) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.size or x.shape[1] != beta.size:
        raise DomainError(f"dimension mismatch: X {x.shape}, y {y.shape}, beta {beta.shape}")
    return _objective(y - x @ beta, _check_tau(tau))


def rank_check(x: np.ndarray, rtol: float = 1e-10) -> None:
    """Raise :class:`SingularDesignError` if ``x`` lacks full column rank.

    Uses a column-pivoted QR; the error names the first column (in pivot
    order) that is numerically dependent on the preceding ones.
    """
    n, k = x.shape
    if n < k:
        raise SingularDesignError(f"design has {n} rows but {k} columns")
    _, r, piv = linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = rtol * max(linalg.norm(x), 1e-300)
    rank = int(np.sum(diag > tol))
    if rank < k:
        bad = int(piv[rank])
        raise SingularDesignError(f"design is rank deficient (rank {rank} < {k}); column {bad} is collinear", column=bad)


def _scaling_transform(x: np.ndarray):
    """Return (xs, T) with xs = x @ T: centred/scaled columns, T invertible."""
    k = x.shape[1]
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    nonzero = np.abs(mean) > 0
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
    t = np.eye(k)
    if np.any(const & nonzero):
        c = int(np.flatnonzero(const & nonzero)[0])
        # subtract (mean_j / mean_c) * x_c from every non-constant column
        for j in np.flatnonzero(~const):
            t[c, j] -= mean[j] / mean[c]
    scale = np.where(const, np.where(nonzero, np.abs(mean), 1.0), sd)
    t = t / scale[None, :]
    return x @ t, t


class Design:
    """A design matrix prepared once for repeated fits with different responses.

    Holds the scaled copy used by the solver, the back-transform to original
    coefficients and the Cholesky factor of the scaled Gram matrix.
    """

    def __init__(self, x, scaling: bool = True, check_rank: bool = True):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n, k = x.shape
        if k < 1:
            raise DomainError("design needs at least one column")
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite values in the design matrix")
        if n <= k:
            raise SingularDesignError(f"need more observations ({n}) than regressors ({k})")
        if check_rank:
            rank_check(x)
        self.x = x
        self.scaling = scaling
        if scaling:
            self.xs, self.transform = _scaling_transform(x)
        else:
            self.xs, self.transform = x, None
        self.xt = np.ascontiguousarray(self.xs.T)
        self.col_sums = self.xt.sum(axis=1)
        try:
            self._gram = linalg.cho_factor(self.xt @ self.xt.T, check_finite=False)
        except linalg.LinAlgError:
            self._gram = None

    @property
    def shape(self):
        return self.x.shape

    def ls_start(self, v: np.ndarray) -> np.ndarray:
        if self._gram is not None:
            return linalg.cho_solve(self._gram, self.xt @ v, check_finite=False)
        return linalg.lstsq(self.xs, v, check_finite=False)[0]

    def unscale(self, coef_s: np.ndarray) -> np.ndarray:
        return coef_s if self.transform is None else self.transform @ coef_s


@njit(cache=True, nogil=True)
def _weights(a, s, z, w, za, ws, q, sq):
    gap = 0.0
    for i in range(a.size):
        za[i] = z[i] / a[i]
        ws[i] = w[i] / s[i]
        q[i] = 1.0 / (za[i] + ws[i])
        sq[i] = np.sqrt(q[i])
        gap += a[i] * z[i] + s[i] * w[i]
    return gap


@njit(cache=True, nogil=True)
def _neg_ratio(v, dv, alpha):
    # shrink alpha so that v + alpha * dv stays >= 0
    if dv < 0.0:
        r = -v / dv
        if r < alpha:
            return r
    return alpha


@njit(cache=True, nogil=True)
def _predictor(a, s, z, w, za, ws, q, xdb, da, dz, dw):
    n = a.size
    ap = 1.0
    ad = 1.0
    for i in range(n):
        da[i] = q[i] * (xdb[i] + w[i] - z[i])
        dz[i] = -z[i] - za[i] * da[i]
        dw[i] = -w[i] + ws[i] * da[i]
        ap = _neg_ratio(a[i], da[i], ap)
        ap = _neg_ratio(s[i], -da[i], ap)
        ad = _neg_ratio(z[i], dz[i], ad)
        ad = _neg_ratio(w[i], dw[i], ad)
    mu_aff = 0.0
    for i in range(n):
        mu_aff += (a[i] + ap * da[i]) * (z[i] + ad * dz[i]) + (s[i] - ap * da[i]) * (w[i] + ad * dw[i])
    return mu_aff / (2 * n)


@njit(cache=True, nogil=True)
def _corrector_rhs(a, s, z, w, q, da, dz, dw, smu, rxz, rsw, qrho):
    for i in range(a.size):
        rxz[i] = smu - da[i] * dz[i]
        rsw[i] = smu + da[i] * dw[i]
        qrho[i] = q[i] * (rxz[i] / a[i] - rsw[i] / s[i] + w[i] - z[i])


@njit(cache=True, nogil=True)
def _corrector_step(a, s, z, w, za, ws, q, xdb, qrho, rxz, rsw, da, dz, dw, damp):
    n = a.size
    ap = 1.0 / damp
    ad = 1.0 / damp
    for i in range(n):
        da[i] = q[i] * xdb[i] + qrho[i]
        dz[i] = rxz[i] / a[i] - z[i] - za[i] * da[i]
        dw[i] = rsw[i] / s[i] - w[i] + ws[i] * da[i]
        ap = _neg_ratio(a[i], da[i], ap)
        ap = _neg_ratio(s[i], -da[i], ap)
        ad = _neg_ratio(z[i], dz[i], ad)
        ad = _neg_ratio(w[i], dw[i], ad)
    ap *= damp
    ad *= damp
    for i in range(n):
        a[i] += ap * da[i]
        s[i] -= ap * da[i]
        z[i] += ad * dz[i]
        w[i] += ad * dw[i]
    return ad


def _interior_point(design: Design, y: np.ndarray, tau: float, tol: float, max_iter: int):
    xt = design.xt
    k, n = xt.shape
    b = (1.0 - tau) * design.col_sums
    a = np.full(n, 1.0 - tau)  # dual of the QR problem, feasible start
    s = np.full(n, tau)  # upper-bound slack, s = 1 - a

    # least-squares start for the multipliers, then strictly positive z, w;
    # dual feasibility then holds by construction throughout
    beta = design.ls_start(-y)
    r = -y - xt.T @ beta
    shift = max(1e-3, 0.1 * float(np.mean(np.abs(r))))
    z = np.maximum(r, 0.0) + shift
    w = np.maximum(-r, 0.0) + shift

    za, ws, q, sq = (np.empty(n) for _ in range(4))
    da, dz, dw = (np.empty(n) for _ in range(3))
    rxz, rsw, qrho = (np.empty(n) for _ in range(3))
    xsq = np.empty_like(xt)

    scale_obj = n * (1.0 + float(np.mean(np.abs(y))))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gap = _weights(a, s, z, w, za, ws, q, sq)
        if gap < tol * scale_obj:
            converged = True
            it -= 1
            break
        mu = gap / (2 * n)
        rp = b - xt @ a
        np.multiply(xt, sq, out=xsq)
        cf = linalg.cho_factor(xsq @ xsq.T, check_finite=False)

        # predictor (affine scaling direction)
        dbeta = linalg.cho_solve(cf, rp - xt @ (q * (w - z)), check_finite=False)
        mu_aff = _predictor(a, s, z, w, za, ws, q, xt.T @ dbeta, da, dz, dw)
        smu = (mu_aff / mu) ** 3 * mu

        # Mehrotra corrector
        _corrector_rhs(a, s, z, w, q, da, dz, dw, smu, rxz, rsw, qrho)
        dbeta = linalg.cho_solve(cf, rp - xt @ qrho, check_finite=False)
        ad = _corrector_step(a, s, z, w, za, ws, q, xt.T @ dbeta, qrho, rxz, rsw, da, dz, dw, _STEP_DAMP)
        beta += ad * dbeta
    return -beta, it, converged


def _polish(x: np.ndarray, y: np.ndarray, tau: float, coef: np.ndarray):
    """Try the basic solution through the k smallest |residuals|."""
    resid = y - x @ coef
    obj = _objective(resid, tau)
    k = x.shape[1]
    basis = np.argpartition(np.abs(resid), k - 1)[:k] if k < resid.size else np.arange(k)
    sub = x[basis]
    try:
        if np.linalg.cond(sub) > 1e12:
            return coef, resid, obj, None
        cand = np.linalg.solve(sub, y[basis])
    except np.linalg.LinAlgError:
        return coef, resid, obj, None
    cand_resid = y - x @ cand
    cand_resid[basis] = 0.0
    cand_obj = _objective(cand_resid, tau)
    if cand_obj <= obj:
        return cand, cand_resid, cand_obj, np.sort(basis)
    return coef, resid, obj, None


def _vertex_if_optimal(x: np.ndarray, y: np.ndarray, tau: float, basis: np.ndarray):
    """Basic solution through ``basis`` if it is optimal for ``y``, else None.

    Optimality holds when the basis weights -X_h^{-T} sum_{i not in h} psi_i x_i
    all lie in [tau - 1, tau].
    """
    sub = x[basis]
    try:
        lu = linalg.lu_factor(sub, check_finite=False)
    except (linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) <= 1e-12 * np.max(np.abs(sub)):
        return None
    coef = linalg.lu_solve(lu, y[basis], check_finite=False)
    resid = y - x @ coef
    resid[basis] = 0.0
    off = np.ones(resid.size, dtype=bool)
    off[basis] = False
    if np.any(resid[off] == 0.0):
        return None
    psi = np.where(resid < 0, tau - 1.0, tau)
    psi[basis] = 0.0
    v = -linalg.lu_solve(lu, x.T @ psi, trans=1, check_finite=False)
    slack = 1e-10
    if np.all(v >= tau - 1.0 - slack) and np.all(v <= tau + slack):
        return coef, resid
    return None


def qr_fit(x, y, tau: float, opts: SolverOptions = DEFAULT_OPTIONS, check_rank: bool = True, basis=None) -> QuantileFit:
    """Fit the tau-th linear quantile regression of ``y`` on ``x``.

    Parameters
    ----------
    x : (n, k) array or Design
        Full-column-rank design.  Pass a :class:`Design` to reuse the scaling
        across many responses; its own ``scaling`` setting then applies.
    y : (n,) array
    tau : float in (0, 1)
    opts : SolverOptions
        ``tolerance`` bounds the duality gap relative to n * (1 + mean|y|).
    check_rank : bool
        Run the pivoted-QR rank check (ignored for a prepared Design).
    basis : (k,) int array, optional
        Observations of a previous optimal vertex.  If that vertex is still
        optimal for ``y`` it is returned directly, with ``iterations == 0``.

    Raises
    ------
    SingularDesignError
        The design is rank deficient.
    NonConvergenceError
        ``opts.max_iter`` reached; ``err.best`` holds the last iterate.
    """
    tau = _check_tau(tau)
    design = x if isinstance(x, Design) else Design(x, scaling=opts.scaling, check_rank=check_rank)
    n, k = design.shape
    y = np.asarray(y, dtype=float).ravel()
    if y.size != n:
        raise DomainError(f"y has {y.size} entries but X has {n} rows")
    if not np.all(np.isfinite(y)):
        raise DomainError("non-finite values in the response")

    if basis is not None:
        basis = np.asarray(basis, dtype=np.int64)
        if basis.size == k and basis.min() >= 0 and basis.max() < n:
            hit = _vertex_if_optimal(design.x, y, tau, basis)
            if hit is not None:
                return QuantileFit(tau, hit[0], hit[1], _objective(hit[1], tau), 0, True, basis)

    y_scale = float(np.std(y)) or 1.0
    coef_s, iters, converged = _interior_point(design, y / y_scale, tau, opts.tolerance, opts.max_iter)
    coef = design.unscale(coef_s) * y_scale
    coef, resid, obj, vertex = _polish(design.x, y, tau, coef)
    fit = QuantileFit(tau, coef, resid, obj, iters, converged, vertex)
    if not converged:
        raise NonConvergenceError(f"interior point did not converge in {opts.max_iter} iterations", best=fit)
    return fit


def with_options(opts: SolverOptions | None, **kw) -> SolverOptions:
    return replace(opts or DEFAULT_OPTIONS, **kw)
