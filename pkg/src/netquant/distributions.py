"""Special functions and random sampling used by the simulator and inference.

Everything here is vectorised over numpy arrays and pure given an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .errors import DomainError

__all__ = [
    "DistKind",
    "InnovationDist",
    "STD_NORMAL",
    "norm_pdf",
    "norm_cdf",
    "norm_quantile",
    "gamma_cdf",
    "t_cdf",
    "t_quantile",
    "sample",
    "sample_node_covariates",
    "make_rng",
]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DistKind(str, Enum):
    STD_NORMAL = "normal"
    STUDENT_T = "t"


@dataclass(frozen=True)
class InnovationDist:
    """Law of the latent innovation driving the random coefficients.

    Student-t draws keep their natural scale (variance df/(df-2)).
    """

    kind: DistKind = DistKind.STD_NORMAL
    df: int | None = None

    def __post_init__(self):
        kind = DistKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is DistKind.STUDENT_T:
            if self.df is None or int(self.df) != self.df or self.df < 3:
                raise DomainError(f"Student-t innovations need integer df >= 3, got {self.df!r}")
            object.__setattr__(self, "df", int(self.df))
        elif self.df is not None:
            raise DomainError("df is only meaningful for Student-t innovations")

    @classmethod
    def normal(cls) -> "InnovationDist":
        return cls(DistKind.STD_NORMAL)

    @classmethod
    def student_t(cls, df: int = 5) -> "InnovationDist":
        return cls(DistKind.STUDENT_T, df)

    @classmethod
    def parse(cls, text: str) -> "InnovationDist":
        """Parse ``"normal"``, ``"t"`` (df=5) or ``"t5"``-style labels."""
        label = text.strip().lower()
        if label in ("normal", "n", "n(0,1)", "std_normal", "gaussian"):
            return cls.normal()
        if label.startswith("t"):
            digits = label[1:].strip("()_ ")
            return cls.student_t(int(digits) if digits else 5)
        raise DomainError(f"unknown innovation distribution {text!r}")

    @property
    def label(self) -> str:
        return "normal" if self.kind is DistKind.STD_NORMAL else f"t{self.df}"

    def cdf(self, x):
        if self.kind is DistKind.STD_NORMAL:
            return norm_cdf(x)
        return t_cdf(x, self.df)

    def quantile(self, p):
        if self.kind is DistKind.STD_NORMAL:
            return norm_quantile(p)
        return t_quantile(p, self.df)


STD_NORMAL = InnovationDist.normal()


def _check_open_unit(p, name="p"):
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise DomainError(f"{name} must lie strictly inside (0, 1)")
    return arr


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def norm_cdf(x):
    return special.ndtr(np.asarray(x, dtype=float))


def norm_quantile(p):
    """Inverse standard normal CDF; raises :class:`DomainError` outside (0, 1)."""
    return special.ndtri(_check_open_unit(p))


def gamma_cdf(x, shape: float, scale: float):
    """Gamma distribution function, i.e. the regularised P(shape, x/scale)."""
    x = np.asarray(x, dtype=float)
    if shape <= 0 or scale <= 0:
        raise DomainError("gamma shape and scale must be positive")
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("gamma_cdf is defined for x >= 0 only")
    return special.gammainc(shape, x / scale)


def t_cdf(x, df: int):
    if df <= 0:
        raise DomainError("degrees of freedom must be positive")
    return special.stdtr(df, np.asarray(x, dtype=float))


def t_quantile(p, df: int):
    if df <= 0:
        raise DomainError("degrees of freedom must be positive")
    return special.stdtrit(df, _check_open_unit(p))


def sample(dist: InnovationDist, rng: np.random.Generator, size=None):
    """Draw i.i.d. innovations from ``dist``."""
    if dist.kind is DistKind.STD_NORMAL:
        return rng.standard_normal(size)
    return rng.standard_t(dist.df, size)


def covariate_covariance(q: int, correlation_base: float = 0.5) -> np.ndarray:
    idx = np.arange(q)
    return correlation_base ** np.abs(idx[:, None] - idx[None, :])


def sample_node_covariates(q: int, rng: np.random.Generator, correlation_base: float = 0.5, size=None):
    """Draw zero-mean Gaussian covariates with covariance ``base**|j1-j2|``.

    Returns an array of shape ``(q,)`` when ``size`` is None, else ``(size, q)``.
    """
    if q < 1:
        raise DomainError("need at least one covariate")
    if abs(correlation_base) >= 1:
        raise DomainError("|correlation_base| must be < 1 for a positive-definite covariance")
    chol = np.linalg.cholesky(covariate_covariance(q, correlation_base))
    n = 1 if size is None else int(size)
    draws = rng.standard_normal((n, q)) @ chol.T
    return draws[0] if size is None else draws


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *keys)``.

    Streams for different keys do not depend on the order in which they are
    created, which keeps replications reproducible under any scheduling.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
