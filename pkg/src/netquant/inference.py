"""Asymptotic covariance, bandwidth, standard errors and confidence intervals.

The covariance of theta = (gamma1, phi) is the sandwich
``J^+ Omega J^+'`` with ``J^+ = (J'J)^{-1} J'`` built from

    Omega_hat = tau (1 - tau) / NT * sum psi psi'
    J_hat     = 1 / (2 NT h) * sum 1{|u| <= h} psi (ybar, x')

where psi stacks the instruments and the exogenous regressors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .distributions import norm_pdf, norm_quantile
from .errors import DomainError, InferenceError

__all__ = [
    "CovarianceEstimate",
    "bandwidth_hs",
    "estimate_omega",
    "estimate_jacobian",
    "sandwich",
    "confidence_interval",
    "ivqr_covariance",
    "attach_inference",
    "ordinary_qr_inference",
]

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12


def _check_prob(x: float, name: str) -> float:
    x = float(x)
    if not 0.0 < x < 1.0:
        raise DomainError(f"{name} must lie strictly inside (0, 1), got {x}")
    return x


def bandwidth_hs(n_total: int, tau: float, alpha: float = 0.05) -> float:
    """Hall-Sheather bandwidth for a 1 - alpha interval at quantile ``tau``.

    Examples
    --------
    >>> round(bandwidth_hs(10_000, 0.5, 0.05), 5)
    0.0451
    """
    tau = _check_prob(tau, "tau")
    alpha = _check_prob(alpha, "alpha")
    if n_total < 2:
        raise DomainError("bandwidth needs at least two observations")
    z = float(norm_quantile(tau))
    rho = float(norm_quantile(1.0 - alpha / 2.0))
    core = 1.5 * float(norm_pdf(z)) ** 2 / (2.0 * z * z + 1.0)
    return float(n_total) ** (-1.0 / 3.0) * rho ** (2.0 / 3.0) * core ** (1.0 / 3.0)


def estimate_omega(psi, tau: float) -> np.ndarray:
    """tau (1 - tau) / NT times the Gram matrix of the rows of ``psi``."""
    tau = _check_prob(tau, "tau")
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 1:
        psi = psi[:, None]
    if not np.all(np.isfinite(psi)):
        raise DomainError("non-finite values in psi")
    omega = tau * (1.0 - tau) / psi.shape[0] * (psi.T @ psi)
    return 0.5 * (omega + omega.T)


@dataclass
class JacobianEstimate:
    matrix: np.ndarray
    selected: int
    warning: str | None = None


def estimate_jacobian(psi, ybar_and_x, residuals, h: float, one_sided: bool = False) -> JacobianEstimate:
    """Kernel-weighted cross product of ``psi`` with ``(ybar, x)``.

    Rows enter when ``|u| <= h``.  ``one_sided=True`` uses ``u <= h``
    instead, which keeps every large negative residual and is kept only for
    comparison.
    """
    if not h > 0:
        raise DomainError("bandwidth must be positive")
    psi = np.asarray(psi, dtype=float)
    bx = np.asarray(ybar_and_x, dtype=float)
    u = np.asarray(residuals, dtype=float).ravel()
    if psi.ndim == 1:
        psi = psi[:, None]
    if bx.ndim == 1:
        bx = bx[:, None]
    nt = psi.shape[0]
    if bx.shape[0] != nt or u.size != nt:
        raise DomainError("psi, (ybar, x) and residuals need the same number of rows")
    mask = (u <= h) if one_sided else (np.abs(u) <= h)
    sel = int(mask.sum())
    jac = psi[mask].T @ bx[mask] / (2.0 * nt * h)
    warning = None
    if sel == 0:
        warning = "no residual inside the bandwidth; Jacobian is zero"
    elif sel < psi.shape[1]:
        warning = f"only {sel} residuals inside the bandwidth; Jacobian is near singular"
    if warning:
        log.warning(warning)
    return JacobianEstimate(jac, sel, warning)


def sandwich(jacobian, omega, n_total: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(sigma_theta, std_errors)``.

    ``sigma_theta = (J'J)^{-1} J' Omega J (J'J)^{-1}``, which is
    ``J^{-1} Omega J^{-T}`` for square J; SEs are ``sqrt(diag / NT)``.
    """
    j = np.asarray(jacobian, dtype=float)
    om = np.asarray(omega, dtype=float)
    if j.ndim != 2 or om.shape != (j.shape[0], j.shape[0]):
        raise DomainError("omega must be square with as many rows as the Jacobian")
    if n_total < 1:
        raise DomainError("n_total must be positive")
    jtj = j.T @ j
    if not np.all(np.isfinite(jtj)):
        raise InferenceError("non-finite Jacobian")
    cond = np.linalg.cond(jtj) if jtj.size else np.inf
    if not cond < MAX_CONDITION:
        raise InferenceError(f"Jacobian is singular (condition number {cond:.3g})")
    pinv = np.linalg.solve(jtj, j.T)
    sigma = pinv @ om @ pinv.T
    sigma = 0.5 * (sigma + sigma.T)
    diag = np.diag(sigma)
    if np.any(diag < 0):
        raise InferenceError("negative variance estimate")
    return sigma, np.sqrt(diag / n_total)


def confidence_interval(theta_hat, std_errors, alpha: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise normal intervals ``theta +/- z_{1 - alpha/2} se``."""
    alpha = _check_prob(alpha, "alpha")
    theta = np.asarray(theta_hat, dtype=float)
    se = np.asarray(std_errors, dtype=float)
    if not np.all(np.isfinite(se)) or np.any(se < 0):
        raise DomainError("standard errors must be finite and non-negative")
    half = float(norm_quantile(1.0 - alpha / 2.0)) * se
    return theta - half, theta + half


@dataclass
class CovarianceEstimate:
    omega_hat: np.ndarray
    jacobian_hat: np.ndarray
    sigma_theta: np.ndarray
    bandwidth: float
    std_errors: np.ndarray
    selected: int = 0
    warnings: list = field(default_factory=list)


def ivqr_covariance(s, residuals, tau: float, alpha: float = 0.05, one_sided: bool = False,
                    regressors=None, endog=None) -> CovarianceEstimate:
    """Sandwich covariance for an IVQR fit on the stacked regression ``s``.

    ``regressors`` replaces ``(ybar, x)`` and ``endog`` replaces ``psi``; both
    default to the IVQR layout.
    """
    psi = np.hstack([s.r, s.x]) if endog is None else np.asarray(endog, dtype=float)
    bx = np.column_stack([s.ybar, s.x]) if regressors is None else np.asarray(regressors, dtype=float)
    nt = psi.shape[0]
    h = bandwidth_hs(nt, tau, alpha)
    omega = estimate_omega(psi, tau)
    jac = estimate_jacobian(psi, bx, residuals, h, one_sided=one_sided)
    sigma, se = sandwich(jac.matrix, omega, nt)
    warnings = [jac.warning] if jac.warning else []
    return CovarianceEstimate(omega, jac.matrix, sigma, h, se, jac.selected, warnings)


def attach_inference(est, s, alpha: float = 0.05, one_sided: bool = False):
    """Fill ``std_errors`` and intervals on an :class:`IvqrEstimate`.

    A singular Jacobian leaves the point estimates in place, sets the
    interval fields to None and records the reason in ``inference_error``.
    """
    try:
        cov = ivqr_covariance(s, est.residuals, est.tau, alpha, one_sided)
    except InferenceError as exc:
        log.warning("inference failed at tau=%.3f: %s", est.tau, exc)
        est.std_errors = est.ci_low = est.ci_high = None
        est.inference_error = str(exc)
        return est
    est.covariance = cov
    est.std_errors = cov.std_errors
    est.ci_low, est.ci_high = confidence_interval(est.theta, cov.std_errors, alpha)
    est.inference_error = None
    return est


def ordinary_qr_inference(s, fit, alpha: float = 0.05, one_sided: bool = False) -> CovarianceEstimate:
    """Same kernel sandwich for QR that treats ybar as exogenous.

    Here psi = (ybar, x) as well, so J is square.
    """
    bx = np.column_stack([s.ybar, s.x])
    return ivqr_covariance(s, fit.residuals, fit.tau, alpha, one_sided, regressors=bx, endog=bx)
