"""Crude Monte Carlo, fixed-density IS and adaptive cross-entropy estimators.

The adaptive estimators share one loop: draw a batch from the current
auxiliary density, decide whether to stop, otherwise compute importance
weights and refit the density.  Which covariance parameters are refit is
decided by a :class:`CovarianceFamily`:

==============  =====================  ============================
algorithm       weighting              family
==============  =====================  ============================
CE / iCE        quantile / smooth F    :class:`FullCovariance`
CEd / iCEd      quantile / smooth F    :class:`DiagonalCovariance`
CE-m* / iCE-m*  quantile / smooth F    :class:`RankOneAlongMean`
==============  =====================  ============================

The last drawn batch doubles as the estimation batch, so a run that stops
after ``k`` batches costs exactly ``k * N`` evaluations of ``phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy import optimize, special

from .gaussian import (
    DEFAULT_EPS,
    DegenerateWeights,
    Diagonal,
    Full,
    GaussianParams,
    Identity,
    NorthWestBlock,
    RankOne,
    WeightedSample,
    ZeroMeanCoV,
    ZeroMeanDirection,
    build_rank_one_covariance,
    coefficient_of_variation,
    empirical_quantile,
    log_likelihood_ratio,
    make_rng,
    projected_variance,
    sample,
    weighted_diagonal_variance,
    weighted_full_covariance,
    weighted_mean,
)
from .limit_states import LimitState

__all__ = [
    "FullCovariance",
    "DiagonalCovariance",
    "RankOneAlongMean",
    "FixedCovariance",
    "FixedMean",
    "CovarianceFamily",
    "EstimatorConfig",
    "IterationTrace",
    "TrialResult",
    "crude_monte_carlo",
    "importance_sampling",
    "run_ce",
    "run_ice",
    "sigma_search",
    "smooth_update",
    "indicator_cv",
]


# ---------------------------------------------------------------------------
# Covariance families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FullCovariance:
    """Mean and full covariance matrix are both refit."""

    def initial(self, n: int) -> GaussianParams:
        return GaussianParams.standard(n)

    def update(self, ws: WeightedSample, eps: float) -> GaussianParams:
        m = weighted_mean(ws)
        c = weighted_full_covariance(ws, m)
        c[np.diag_indices_from(c)] += eps
        return GaussianParams(m, Full(c))


@dataclass(frozen=True)
class DiagonalCovariance:
    """Mean and the diagonal of the covariance are refit."""

    def initial(self, n: int) -> GaussianParams:
        return GaussianParams.standard(n)

    def update(self, ws: WeightedSample, eps: float) -> GaussianParams:
        m = weighted_mean(ws)
        return GaussianParams(m, Diagonal(weighted_diagonal_variance(ws, m, eps)))


@dataclass(frozen=True)
class RankOneAlongMean:
    """Mean plus a single variance along the direction of the mean."""

    def initial(self, n: int) -> GaussianParams:
        return GaussianParams.standard(n)

    def update(self, ws: WeightedSample, eps: float) -> GaussianParams:
        m = weighted_mean(ws)
        v = projected_variance(ws, m)
        return GaussianParams(m, build_rank_one_covariance(m, v, eps))


@dataclass(frozen=True, eq=False)
class FixedCovariance:
    """Only the mean is refit; every update uses ``covariance``.

    The first batch comes from the standard density like every other family.
    """

    covariance: object

    def initial(self, n: int) -> GaussianParams:
        return GaussianParams.standard(n)

    def update(self, ws: WeightedSample, eps: float) -> GaussianParams:
        return GaussianParams(weighted_mean(ws), self.covariance)


@dataclass(frozen=True, eq=False)
class FixedMean:
    """Mean pinned to ``mean``; the covariance about it is refit.

    The first batch is drawn from the standard density like every other
    family, so the covariance is estimated at least once before the run
    can stop.  With ``block_fraction < 1`` only the leading ``floor(fraction * n)``
    square block is estimated and the rest of the matrix is the identity.
    """

    mean: np.ndarray
    block_fraction: float = 1.0

    def __post_init__(self):
        if not 0 < self.block_fraction <= 1:
            raise ValueError("block_fraction must lie in (0, 1]")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))

    def block_size(self, n: int) -> int:
        k = int(math.floor(self.block_fraction * n))
        if k < 1:
            raise ValueError("block is empty for this dimension")
        return k

    def initial(self, n: int) -> GaussianParams:
        return GaussianParams.standard(n)

    def update(self, ws: WeightedSample, eps: float) -> GaussianParams:
        n = self.mean.size
        k = self.block_size(n)
        w = ws.normalized_weights
        d = ws.points[:, :k] - self.mean[:k]
        c = (d * w[:, None]).T @ d
        c = 0.5 * (c + c.T) + eps * np.eye(k)
        cov = Full(c) if k == n else NorthWestBlock(c, n)
        return GaussianParams(self.mean, cov)


CovarianceFamily = Union[
    FullCovariance, DiagonalCovariance, RankOneAlongMean, FixedCovariance, FixedMean
]


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorConfig:
    family: CovarianceFamily = field(default_factory=FullCovariance)
    rho: float = 0.1
    delta_target: float = 1.5
    sample_size: int = 1000
    max_iterations: int = 10
    epsilon: float = DEFAULT_EPS
    smoothing_alpha: float = 1.0
    sigma_method: str = "bounded"
    seed: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.delta_target <= 0:
            raise ValueError("delta_target must be positive")
        if self.sample_size < 2:
            raise ValueError("sample_size must be at least 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.smoothing_alpha <= 1:
            raise ValueError("smoothing_alpha must lie in (0, 1]")
        if self.sigma_method not in ("global", "bounded"):
            raise ValueError("sigma_method must be 'global' or 'bounded'")


@dataclass
class IterationTrace:
    t: int
    level: float
    params: GaussianParams
    effective_sample_size: float
    evaluations_so_far: int


@dataclass
class TrialResult:
    """Outcome of one estimation run.

    ``p_hat`` is ``None`` when the run did not converge; ``last_estimate``
    then still holds the IS estimate computed on the final batch.
    """

    p_hat: Optional[float]
    iterations: int
    budget: int
    trace: list = field(default_factory=list)
    reason: str = ""
    last_estimate: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.p_hat is not None

    @property
    def final_params(self) -> Optional[GaussianParams]:
        return self.trace[-1].params if self.trace else None


def _rng(cfg_seed, rng):
    if rng is not None:
        return rng
    return make_rng(0 if cfg_seed is None else cfg_seed)


def _ess(log_w: np.ndarray) -> float:
    finite = np.isfinite(log_w)
    if not finite.any():
        return 0.0
    w = np.exp(log_w[finite] - log_w[finite].max())
    return float(w.sum() ** 2 / np.sum(w * w))


def _is_estimate(phi: np.ndarray, log_l: np.ndarray) -> float:
    fail = phi >= 0
    return float(np.sum(np.exp(log_l[fail])) / phi.size)


# ---------------------------------------------------------------------------
# Non-adaptive baselines
# ---------------------------------------------------------------------------


def crude_monte_carlo(ls: LimitState, count: int, rng=None, chunk: int = 100_000) -> TrialResult:
    """Fraction of standard normal draws with ``phi >= 0``."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = _rng(None, rng)
    hits = 0
    for start in range(0, count, chunk):
        size = min(chunk, count - start)
        hits += int(np.count_nonzero(ls(rng.standard_normal((size, ls.dimension))) >= 0))
    p = hits / count
    trace = [IterationTrace(0, 0.0, GaussianParams.standard(ls.dimension), float(count), count)]
    return TrialResult(p, 1, count, trace, last_estimate=p)


def importance_sampling(ls: LimitState, g: GaussianParams, count: int, rng=None) -> TrialResult:
    """Plain IS estimate of P with auxiliary density ``g``."""
    rng = _rng(None, rng)
    x = sample(g, count, rng)
    phi = ls(x)
    log_l = log_likelihood_ratio(g, x)
    p = _is_estimate(phi, log_l)
    ess = _ess(np.where(phi >= 0, log_l, -np.inf))
    return TrialResult(p, 1, count, [IterationTrace(0, 0.0, g, ess, count)], last_estimate=p)


# ---------------------------------------------------------------------------
# Adaptive estimators
# ---------------------------------------------------------------------------


def smooth_update(new: GaussianParams, old: GaussianParams, alpha: float) -> GaussianParams:
    """Convex blend ``alpha * new + (1 - alpha) * old`` of two parameter sets.

    Means are blended directly.  Rank-one covariances blend the scalar
    variance and take their direction from the blended mean, because the
    direction itself moves between iterations.  Other forms are blended as
    dense matrices (diagonals stay diagonal).
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if new.dim != old.dim:
        raise ValueError("cannot blend parameters of different dimensions")
    if alpha == 1:
        return new
    m = alpha * new.mean + (1 - alpha) * old.mean
    cn, co = new.covariance, old.covariance
    if isinstance(cn, RankOne):
        if isinstance(co, RankOne):
            v_old = co.variance + co.eps - cn.eps
        elif isinstance(co, Identity):
            v_old = 1.0 - cn.eps
        else:
            raise ValueError(f"cannot blend a rank-one covariance with {type(co).__name__}")
        v = alpha * cn.variance + (1 - alpha) * v_old
        r = m / np.linalg.norm(m) if np.linalg.norm(m) > 0 else cn.direction
        return GaussianParams(m, RankOne(r, v, cn.eps))
    if isinstance(cn, Identity) and isinstance(co, Identity):
        return GaussianParams(m, cn)
    if isinstance(cn, Diagonal) and isinstance(co, (Diagonal, Identity)):
        v_old = co.variances if isinstance(co, Diagonal) else np.ones(cn.dim)
        return GaussianParams(m, Diagonal(alpha * cn.variances + (1 - alpha) * v_old))
    if isinstance(cn, NorthWestBlock) and isinstance(co, (NorthWestBlock, Identity)):
        k = cn.k
        b_old = co.dense()[:k, :k]
        return GaussianParams(m, NorthWestBlock(alpha * cn.block + (1 - alpha) * b_old, cn.n))
    if cn is co:
        return GaussianParams(m, cn)
    return GaussianParams(m, Full(alpha * cn.dense() + (1 - alpha) * co.dense()))


def _refit(ws, params, cfg):
    new = cfg.family.update(ws, cfg.epsilon)
    if cfg.smoothing_alpha < 1:
        new = smooth_update(new, params, cfg.smoothing_alpha)
    return new


def _adaptive_loop(ls, cfg, rng, stop_rule, weights_rule):
    """Shared driver for CE- and iCE-type estimators.

    ``stop_rule(phi, log_l) -> (level, stop)`` inspects the current batch;
    ``weights_rule(phi, log_l, level) -> log weights`` produces the
    unnormalized log importance weights used to refit the density.
    """
    rng = _rng(cfg.seed, rng)
    n = ls.dimension
    N = cfg.sample_size
    params = cfg.family.initial(n)
    trace = []
    budget = 0
    for t in range(cfg.max_iterations):
        x = sample(params, N, rng)
        phi = ls(x)
        log_l = log_likelihood_ratio(params, x)
        budget += N
        level, stop = stop_rule(phi, log_l)
        estimate = _is_estimate(phi, log_l)
        if stop:
            ess = _ess(np.where(phi >= 0, log_l, -np.inf))
            trace.append(IterationTrace(t, level, params, ess, budget))
            return TrialResult(estimate, t + 1, budget, trace, last_estimate=estimate)
        if t == cfg.max_iterations - 1:
            trace.append(IterationTrace(t, level, params, float("nan"), budget))
            return TrialResult(
                None, t + 1, budget, trace, "maximum number of iterations reached", estimate
            )
        log_w, level = weights_rule(phi, log_l, level)
        trace.append(IterationTrace(t, level, params, _ess(log_w), budget))
        try:
            params = _refit(WeightedSample(x, log_w), params, cfg)
        except DegenerateWeights:
            return TrialResult(None, t + 1, budget, trace, "importance weights collapsed to 0", estimate)
        except ZeroMeanDirection:
            return TrialResult(None, t + 1, budget, trace, "mean estimate is zero", estimate)
        except np.linalg.LinAlgError:
            return TrialResult(
                None, t + 1, budget, trace, "covariance estimate is not positive definite", estimate
            )
    raise AssertionError("unreachable")


def run_ce(ls: LimitState, cfg: EstimatorConfig, rng=None) -> TrialResult:
    """Multilevel cross-entropy estimator.

    Each batch sets ``gamma_t`` to the ``floor((1 - rho) N)``-th order
    statistic of ``phi``; the run stops once ``gamma_t >= 0``.  Otherwise the
    samples with ``phi >= gamma_t`` are reweighted by the likelihood ratio and
    the family refits the density.
    """
    if math.floor((1 - cfg.rho) * cfg.sample_size + 1e-9) < 1:
        raise ValueError("sample_size too small for rho")

    def stop_rule(phi, log_l):
        gamma = empirical_quantile(phi, cfg.rho)
        return gamma, gamma >= 0

    def weights_rule(phi, log_l, gamma):
        return np.where(phi >= gamma, log_l, -np.inf), gamma

    return _adaptive_loop(ls, cfg, rng, stop_rule, weights_rule)


def _log_smooth_indicator(phi: np.ndarray, sigma: float) -> np.ndarray:
    if math.isinf(sigma):
        return np.full(np.shape(phi), math.log(0.5))
    return special.log_ndtr(np.asarray(phi) / sigma)


def indicator_cv(phi, sigma: float) -> float:
    """CoV of ``I{phi >= 0} / F(phi / sigma)``; ``inf`` when no sample fails."""
    phi = np.asarray(phi, dtype=float)
    fail = phi >= 0
    values = np.zeros_like(phi)
    values[fail] = np.exp(-_log_smooth_indicator(phi[fail], sigma))
    try:
        return coefficient_of_variation(values)
    except ZeroMeanCoV:
        return math.inf


def _smooth_cv(phi, log_l, sigmas) -> np.ndarray:
    """CoV of ``F(phi_i / sigma) L_i`` for each sigma, computed in log space."""
    sigmas = np.atleast_1d(sigmas)
    lv = special.log_ndtr(phi[None, :] / sigmas[:, None]) + log_l[None, :]
    v = np.exp(lv - lv.max(axis=1, keepdims=True))
    return v.std(axis=1, ddof=1) / v.mean(axis=1)


def sigma_search(
    phi,
    log_l,
    sigma_upper: float,
    delta_target: float,
    grid_size: int = 200,
    method: str = "global",
) -> float:
    """Smoothing width whose weight CoV is closest to ``delta_target``.

    Minimizes ``(cv(sigma) - delta_target)^2`` where ``cv(sigma)`` is the
    coefficient of variation of ``Phi(phi_i / sigma) L_i``, over
    ``(0, sigma_hi]`` with ``sigma_hi = min(sigma_upper, 10 max|phi|)``.

    ``method="global"`` scans a log-spaced grid on ``[1e-8 sigma_hi,
    sigma_hi]`` and refines around the best grid point, so it returns the
    global minimizer.  ``method="bounded"`` runs a single bounded Brent
    search on the linear interval ``(0, sigma_hi)``; when ``cv = delta`` has
    no root this settles on a local minimum, usually a larger sigma.
    """
    phi = np.asarray(phi, dtype=float).ravel()
    log_l = np.asarray(log_l, dtype=float).ravel()
    if phi.size < 2 or phi.size != log_l.size:
        raise ValueError("need at least two paired phi / log-likelihood values")
    if method not in ("global", "bounded"):
        raise ValueError(f"unknown sigma search method {method!r}")
    scale = float(np.max(np.abs(phi)))
    if scale == 0.0:
        return sigma_upper if math.isfinite(sigma_upper) else 1.0
    hi = min(sigma_upper, 10.0 * scale)
    if np.all(phi == phi[0]):
        return hi

    if method == "bounded":
        def objective_lin(s):
            if s <= 0:
                return math.inf
            cv = _smooth_cv(phi, log_l, s)[0]
            return math.inf if np.isnan(cv) else float((cv - delta_target) ** 2)

        res = optimize.minimize_scalar(objective_lin, bounds=(0.0, hi), method="bounded")
        return float(min(res.x, hi))

    def objective(log_sigma):
        return (_smooth_cv(phi, log_l, np.exp(log_sigma)) - delta_target) ** 2

    grid = np.linspace(np.log(1e-8 * hi), np.log(hi), grid_size)
    values = objective(grid)
    values = np.where(np.isnan(values), np.inf, values)
    k = int(np.argmin(values))
    best_x, best_f = grid[k], values[k]
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid_size - 1)]
    res = optimize.minimize_scalar(
        lambda s: float(objective(s)[0]), bounds=(a, b), method="bounded",
        options={"xatol": 1e-10},
    )
    if np.isfinite(res.fun) and res.fun < best_f:
        best_x = res.x
    return float(min(np.exp(best_x), hi))


def run_ice(ls: LimitState, cfg: EstimatorConfig, rng=None) -> TrialResult:
    """Improved cross-entropy estimator with a smoothed failure indicator.

    The indicator is replaced by ``Phi(phi / sigma_t)`` with ``sigma_0 =
    inf``.  The run stops once the coefficient of variation of
    ``I{phi >= 0} / Phi(phi / sigma_t)`` drops below ``delta_target``;
    otherwise ``sigma_{t+1}`` is chosen by :func:`sigma_search`.
    """
    state = {"sigma": math.inf}

    def stop_rule(phi, log_l):
        cv = indicator_cv(phi, state["sigma"])
        return state["sigma"], cv < cfg.delta_target

    def weights_rule(phi, log_l, _level):
        sigma = sigma_search(
            phi, log_l, state["sigma"], cfg.delta_target, method=cfg.sigma_method
        )
        state["sigma"] = sigma
        return _log_smooth_indicator(phi, sigma) + log_l, sigma

    return _adaptive_loop(ls, cfg, rng, stop_rule, weights_rule)
