"""Gaussian auxiliary densities with structured covariances.

Everything here works in the standard normal input space: the nominal
density ``f`` is always N(0, I_n) and an auxiliary density ``g`` is a
:class:`GaussianParams`.  Likelihood ratios are kept in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

__all__ = [
    "DegenerateWeights",
    "ZeroMeanDirection",
    "ZeroMeanCoV",
    "Identity",
    "Full",
    "Diagonal",
    "RankOne",
    "NorthWestBlock",
    "GaussianParams",
    "WeightedSample",
    "make_rng",
    "standard_normal_cdf",
    "log_standard_normal_cdf",
    "gamma_inverse_cdf",
    "sample",
    "log_likelihood_ratio",
    "empirical_quantile",
    "weighted_mean",
    "weighted_full_covariance",
    "weighted_diagonal_variance",
    "projected_variance",
    "build_rank_one_covariance",
    "coefficient_of_variation",
]

DEFAULT_EPS = 1e-6


class DegenerateWeights(ArithmeticError):
    """All importance weights vanished; no moment can be estimated."""


class ZeroMeanDirection(ArithmeticError):
    """Projection direction m/||m|| is undefined because m = 0."""


class ZeroMeanCoV(ArithmeticError):
    """Coefficient of variation requested for values with zero mean."""


# ---------------------------------------------------------------------------
# Structured covariances
# ---------------------------------------------------------------------------
#
# Each form exposes the same small surface:
#   dim, dense(), logdet(), quad_inv(D) (row-wise D Sigma^-1 D^T),
#   transform(Z) (rows of Z mapped by an exact square root of Sigma).


@dataclass(frozen=True)
class Identity:
    n: int

    @property
    def dim(self) -> int:
        return self.n

    def dense(self) -> np.ndarray:
        return np.eye(self.n)

    def logdet(self) -> float:
        return 0.0

    def quad_inv(self, d: np.ndarray) -> np.ndarray:
        return np.einsum("ij,ij->i", d, d)

    def transform(self, z: np.ndarray) -> np.ndarray:
        return z


@dataclass(frozen=True, eq=False)
class Full:
    """Dense symmetric positive definite covariance."""

    matrix: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"covariance must be square, got shape {a.shape}")
        a = 0.5 * (a + a.T)
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("covariance is not positive definite") from exc
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.copy()

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def quad_inv(self, d: np.ndarray) -> np.ndarray:
        y = solve_triangular(self._chol, d.T, lower=True, check_finite=False)
        return np.einsum("ij,ij->j", y, y)

    def transform(self, z: np.ndarray) -> np.ndarray:
        return z @ self._chol.T


@dataclass(frozen=True, eq=False)
class Diagonal:
    variances: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variances, dtype=float)
        if v.ndim != 1 or np.any(~(v > 0)):
            raise ValueError("diagonal variances must be a positive vector")
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.variances.size

    def dense(self) -> np.ndarray:
        return np.diag(self.variances)

    def logdet(self) -> float:
        return float(np.sum(np.log(self.variances)))

    def quad_inv(self, d: np.ndarray) -> np.ndarray:
        return np.sum(d * d / self.variances, axis=1)

    def transform(self, z: np.ndarray) -> np.ndarray:
        return z * np.sqrt(self.variances)


@dataclass(frozen=True, eq=False)
class RankOne:
    """Covariance ``(variance - 1) R R^T + (1 + eps) I``.

    Eigenvalues are ``variance + eps`` along the unit vector ``direction``
    and ``1 + eps`` on its orthogonal complement.
    """

    direction: np.ndarray
    variance: float
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        r = np.asarray(self.direction, dtype=float)
        if r.ndim != 1:
            raise ValueError("direction must be a vector")
        if abs(np.linalg.norm(r) - 1.0) > 1e-12:
            raise ValueError("direction must have unit norm")
        if self.eps < 0 or not self.variance + self.eps > 0:
            raise ValueError("rank-one covariance is not positive definite")
        object.__setattr__(self, "direction", r)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "eps", float(self.eps))

    @property
    def dim(self) -> int:
        return self.direction.size

    def dense(self) -> np.ndarray:
        r = self.direction
        return (self.variance - 1.0) * np.outer(r, r) + (1.0 + self.eps) * np.eye(r.size)

    def logdet(self) -> float:
        return (self.dim - 1) * np.log1p(self.eps) + np.log(self.variance + self.eps)

    def quad_inv(self, d: np.ndarray) -> np.ndarray:
        # Sherman-Morrison:
        # Sigma^-1 = I/(1+eps) - (v-1)/((1+eps)(v+eps)) R R^T
        a = 1.0 + self.eps
        proj = d @ self.direction
        coef = (self.variance - 1.0) / (a * (self.variance + self.eps))
        return np.einsum("ij,ij->i", d, d) / a - coef * proj**2

    def transform(self, z: np.ndarray) -> np.ndarray:
        # S = sqrt(1+eps) I + (sqrt(v+eps) - sqrt(1+eps)) R R^T, S @ S = Sigma
        s_perp = np.sqrt(1.0 + self.eps)
        s_par = np.sqrt(self.variance + self.eps)
        proj = z @ self.direction
        return s_perp * z + np.outer((s_par - s_perp) * proj, self.direction)


@dataclass(frozen=True, eq=False)
class NorthWestBlock:
    """Identity covariance except for a dense leading ``k x k`` block."""

    block: np.ndarray
    n: int
    _inner: Full = field(init=False, repr=False)

    def __post_init__(self):
        inner = Full(self.block)
        if inner.dim > self.n:
            raise ValueError("block larger than the ambient dimension")
        object.__setattr__(self, "block", inner.matrix)
        object.__setattr__(self, "_inner", inner)

    @property
    def dim(self) -> int:
        return self.n

    @property
    def k(self) -> int:
        return self.block.shape[0]

    def dense(self) -> np.ndarray:
        a = np.eye(self.n)
        a[: self.k, : self.k] = self.block
        return a

    def logdet(self) -> float:
        return self._inner.logdet()

    def quad_inv(self, d: np.ndarray) -> np.ndarray:
        k = self.k
        tail = d[:, k:]
        return self._inner.quad_inv(d[:, :k]) + np.einsum("ij,ij->i", tail, tail)

    def transform(self, z: np.ndarray) -> np.ndarray:
        out = z.copy()
        out[:, : self.k] = self._inner.transform(z[:, : self.k])
        return out


StructuredCovariance = Union[Identity, Full, Diagonal, RankOne, NorthWestBlock]


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Mean vector and structured covariance of an auxiliary Gaussian."""

    mean: np.ndarray
    covariance: StructuredCovariance

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=float)
        if m.ndim != 1 or m.size != self.covariance.dim:
            raise ValueError(
                f"mean of length {m.size} does not match covariance dimension "
                f"{self.covariance.dim}"
            )
        object.__setattr__(self, "mean", m)

    @classmethod
    def standard(cls, n: int) -> "GaussianParams":
        return cls(np.zeros(n), Identity(n))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """Points with log-space unnormalized weights.

    Zero weights are encoded as ``-inf``.  ``normalized_weights`` is computed
    with max-subtraction so it is invariant to a common shift of the logs.
    """

    points: np.ndarray
    log_unnormalized_weights: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.points, dtype=float))
        lw = np.asarray(self.log_unnormalized_weights, dtype=float).ravel()
        if lw.size != x.shape[0]:
            raise ValueError("one log-weight per point is required")
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "log_unnormalized_weights", lw)

    @property
    def normalized_weights(self) -> np.ndarray:
        lw = self.log_unnormalized_weights
        finite = np.isfinite(lw)
        if not np.any(finite):
            raise DegenerateWeights("all importance weights are zero")
        w = np.zeros_like(lw)
        w[finite] = np.exp(lw[finite] - lw[finite].max())
        return w / w.sum()

    @property
    def effective_sample_size(self) -> float:
        w = self.normalized_weights
        return float(1.0 / np.sum(w * w))


def make_rng(seed: int) -> np.random.Generator:
    """Independent, reproducible stream for one trial."""
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------


def standard_normal_cdf(x):
    return special.ndtr(x)


def log_standard_normal_cdf(x):
    return special.log_ndtr(x)


def gamma_inverse_cdf(p, shape: float, rate: float):
    """Quantile function of Gamma(shape, rate) (rate parametrization).

    Raises:
        ValueError: if any ``p`` lies outside the open interval (0, 1).
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise ValueError("gamma_inverse_cdf requires 0 < p < 1")
    if shape <= 0 or rate <= 0:
        raise ValueError("shape and rate must be positive")
    out = special.gammaincinv(shape, p) / rate
    return out.item() if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Sampling and densities
# ---------------------------------------------------------------------------


def sample(params: GaussianParams, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` i.i.d. rows from N(mean, covariance)."""
    if count < 1:
        raise ValueError("count must be positive")
    z = rng.standard_normal((count, params.dim))
    return params.mean + params.covariance.transform(z)


def log_likelihood_ratio(params: GaussianParams, x: np.ndarray) -> np.ndarray:
    """``log f(x) - log g(x)`` with ``f`` the standard normal density.

    ``x`` may be a single point (returns a float) or an ``(N, n)`` array.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != params.dim:
        raise ValueError(
            f"point dimension {x2.shape[1]} does not match params dimension {params.dim}"
        )
    d = x2 - params.mean
    log_f = -0.5 * np.einsum("ij,ij->i", x2, x2)
    log_g = -0.5 * params.covariance.quad_inv(d) - 0.5 * params.covariance.logdet()
    out = log_f - log_g
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Sample statistics
# ---------------------------------------------------------------------------


def empirical_quantile(values, rho: float) -> float:
    """Order statistic of rank ``floor((1 - rho) N)`` (1-based, ascending)."""
    v = np.asarray(values, dtype=float).ravel()
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    k = int(np.floor((1.0 - rho) * v.size + 1e-9))
    if k < 1:
        raise ValueError(f"sample of size {v.size} is too small for rho={rho}")
    return float(np.partition(v, k - 1)[k - 1])


def weighted_mean(ws: WeightedSample) -> np.ndarray:
    return ws.normalized_weights @ ws.points


def weighted_full_covariance(ws: WeightedSample, m) -> np.ndarray:
    w = ws.normalized_weights
    d = ws.points - np.asarray(m, dtype=float)
    c = (d * w[:, None]).T @ d
    return 0.5 * (c + c.T)


def weighted_diagonal_variance(ws: WeightedSample, m, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Diagonal of the weighted covariance about ``m``, plus ``eps``."""
    w = ws.normalized_weights
    d = ws.points - np.asarray(m, dtype=float)
    return w @ (d * d) + eps


def _unit_direction(m) -> tuple[np.ndarray, float]:
    m = np.asarray(m, dtype=float)
    norm = float(np.linalg.norm(m))
    if norm == 0.0 or not np.isfinite(norm):
        raise ZeroMeanDirection("projection on span(m) is undefined for m = 0")
    return m / norm, norm


def projected_variance(ws: WeightedSample, m) -> float:
    """Weighted variance of ``R^T X_i`` about ``||m||`` with ``R = m/||m||``."""
    r, norm = _unit_direction(m)
    y = ws.points @ r
    return float(ws.normalized_weights @ (y - norm) ** 2)


def build_rank_one_covariance(m, v: float, eps: float = DEFAULT_EPS) -> RankOne:
    if eps <= 0:
        raise ValueError("eps must be positive")
    if v < 0:
        raise ValueError("projected variance must be nonnegative")
    r, _ = _unit_direction(m)
    return RankOne(r, v, eps)


def coefficient_of_variation(values) -> float:
    """Sample standard deviation (ddof=1) over sample mean."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise ValueError("at least two values are needed")
    mean = v.mean()
    if mean == 0.0:
        raise ZeroMeanCoV("coefficient of variation of zero-mean values")
    return float(v.std(ddof=1) / mean)
