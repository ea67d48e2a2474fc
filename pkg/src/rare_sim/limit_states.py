"""Benchmark performance functions in standard normal space.

Failure is ``phi(x) >= 0``.  Every benchmark counts its evaluations so that
estimators can be audited for hidden calls.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .gaussian import GaussianParams, RankOne, make_rng

__all__ = [
    "CalibrationError",
    "LimitState",
    "LinearSum",
    "ModifiedAckley",
    "Portfolio",
    "Parabola",
    "BENCHMARKS",
    "ACKLEY_THRESHOLDS",
    "make_limit_state",
    "ackley_response",
    "calibrate_threshold",
    "mills_ratio",
    "linear_optimal_params",
]


class CalibrationError(RuntimeError):
    pass


class LimitState:
    """Black-box ``phi: R^d -> R`` with a per-instance evaluation counter.

    Subclasses implement the vectorized ``_phi``; callers go through
    :meth:`evaluate` (one point) or :meth:`evaluate_batch` (rows of a
    matrix), both of which count one evaluation per point.
    """

    name = "limit-state"

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = int(dimension)
        self.evaluations = 0

    def _phi(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, x: np.ndarray) -> None:
        if x.shape[-1] != self.dimension:
            raise ValueError(
                f"{self.name} expects inputs of dimension {self.dimension}, got {x.shape[-1]}"
            )

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("evaluate takes a single point; use evaluate_batch")
        self._check(x)
        self.evaluations += 1
        return float(self._phi(x[None, :])[0])

    def evaluate_batch(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self._check(x)
        self.evaluations += x.shape[0]
        return self._phi(x)

    __call__ = evaluate_batch

    @property
    def constants(self) -> dict:
        return {}

    def fresh(self) -> "LimitState":
        """Same benchmark with a zeroed counter."""
        return type(self)(**self._init_kwargs())

    def _init_kwargs(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self._init_kwargs().items())
        return f"{type(self).__name__}({args})"


class LinearSum(LimitState):
    """``phi(x) = sum(x) - 3 sqrt(n)``; P = Phi(-3) for every n."""

    name = "linear"

    def __init__(self, n: int, beta: float = 3.0):
        super().__init__(n)
        self.n = n
        self.beta = beta

    def _phi(self, x):
        return x.sum(axis=1) - self.beta * np.sqrt(self.n)

    def _init_kwargs(self):
        return {"n": self.n, "beta": self.beta}


def ackley_response(x: np.ndarray) -> np.ndarray:
    """Modified Ackley value without the threshold, rows of ``x`` as inputs."""
    x = np.atleast_2d(x)
    n = x.shape[1]
    a = 2.0 * np.arange(n) / n
    z = a * x - 3.0
    return 20.0 * np.exp(-0.2 * np.sqrt(np.mean(z * z, axis=1))) + np.exp(
        np.mean(np.cos(2.0 * np.pi * z), axis=1)
    )


class ModifiedAckley(LimitState):
    """Ackley function with direction weights ``a_j = 2(j-1)/n`` minus ``c_n``.

    When ``c`` is omitted the frozen calibrated threshold for ``n`` is used
    (see :data:`ACKLEY_THRESHOLDS`).
    """

    name = "ackley"

    def __init__(self, n: int, c: float | None = None):
        super().__init__(n)
        if c is None:
            if n not in ACKLEY_THRESHOLDS:
                raise CalibrationError(
                    f"no calibrated threshold for n={n}; pass c or use calibrate_threshold"
                )
            c = ACKLEY_THRESHOLDS[n][1]
        self.n = n
        self.c = float(c)

    @property
    def weights(self) -> np.ndarray:
        return 2.0 * np.arange(self.n) / self.n

    def _phi(self, x):
        return ackley_response(x) - self.c

    @property
    def constants(self):
        return {"c": self.c}

    def _init_kwargs(self):
        return {"n": self.n, "c": self.c}


class Portfolio(LimitState):
    """Large portfolio loss count in standard normal coordinates.

    Input has ``n + 2`` coordinates: ``x[0]`` is the common factor U,
    ``x[1]`` is mapped to the Gamma(shape, rate) mixing variable through
    ``F_Gamma^-1(Phi(.))`` and ``x[2:]`` are the ``n`` idiosyncratic noises
    (scaled by ``noise_scale``).  ``phi = L - b n`` where ``L`` counts the
    obligors with ``psi_j >= 0.5 sqrt(n)``.

    With ``strict=True`` the failure event is ``L > b n`` instead of
    ``L >= b n``; the two differ only when ``b n`` is an integer.
    """

    name = "portfolio"

    def __init__(
        self,
        n: int,
        b: float,
        q: float = 0.25,
        noise_scale: float = 3.0,
        shape: float = 6.0,
        rate: float = 6.0,
        strict: bool = False,
    ):
        if not 0 < q < 1:
            raise ValueError("correlation q must lie in (0, 1)")
        super().__init__(n + 2)
        self.n = n
        self.b = float(b)
        self.q = float(q)
        self.noise_scale = float(noise_scale)
        self.shape = float(shape)
        self.rate = float(rate)
        self.strict = bool(strict)

    @property
    def loss_threshold(self) -> float:
        return 0.5 * np.sqrt(self.n)

    def mixing_variable(self, mu_tilde) -> np.ndarray:
        """``F_Gamma^-1(Phi(mu_tilde))`` evaluated on the tail that keeps precision."""
        mu_tilde = np.asarray(mu_tilde, dtype=float)
        tiny = np.finfo(float).tiny
        lower = special.gammaincinv(self.shape, np.maximum(special.ndtr(mu_tilde), tiny))
        upper = special.gammainccinv(self.shape, np.maximum(special.ndtr(-mu_tilde), tiny))
        return np.where(mu_tilde < 0, lower, upper) / self.rate

    def psi(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        u, mu_tilde, eta = x[:, 0], x[:, 1], x[:, 2:]
        mu = self.mixing_variable(mu_tilde)
        latent = self.q * u[:, None] + self.noise_scale * np.sqrt(1.0 - self.q**2) * eta
        return latent / np.sqrt(mu)[:, None]

    def losses(self, x: np.ndarray) -> np.ndarray:
        return np.count_nonzero(self.psi(x) >= self.loss_threshold, axis=1)

    def _phi(self, x):
        level = self.b * self.n
        if self.strict:
            level = np.floor(level) + 1.0
        return self.losses(x) - level

    @property
    def constants(self):
        return {"b": self.b, "q": self.q, "strict": self.strict}

    def _init_kwargs(self):
        return {
            "n": self.n,
            "b": self.b,
            "q": self.q,
            "noise_scale": self.noise_scale,
            "shape": self.shape,
            "rate": self.rate,
            "strict": self.strict,
        }


class Parabola(LimitState):
    """``phi(x) = x_1 - kappa x_2^2 - offset``; needs ``n >= 2``."""

    name = "parabola"

    def __init__(self, n: int, kappa: float = 3.0, offset: float = 3.0):
        if n < 2:
            raise ValueError("parabola needs at least two inputs")
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        super().__init__(n)
        self.n = n
        self.kappa = float(kappa)
        self.offset = float(offset)

    def _phi(self, x):
        return x[:, 0] - self.kappa * x[:, 1] ** 2 - self.offset

    @property
    def constants(self):
        return {"kappa": self.kappa}

    def _init_kwargs(self):
        return {"n": self.n, "kappa": self.kappa, "offset": self.offset}


# Calibrated with calibrate_threshold("ackley", n, p, samples=10**7, seed=20240101):
# n -> (target probability, c_n).
ACKLEY_THRESHOLDS: dict[int, tuple[float, float]] = {
    30: (1.64e-3, 13.00072271059678),
    100: (1.18e-3, 12.401129261190128),
    200: (1.72e-3, 12.150126249940502),
}


def _narrow_parabola(n, **kw):
    kw.setdefault("kappa", 25.0)
    return Parabola(n, **kw)


BENCHMARKS = {
    "linear": LinearSum,
    "ackley": ModifiedAckley,
    "portfolio": Portfolio,
    "parabola": Parabola,
    "parabola-narrow": _narrow_parabola,
}


def make_limit_state(name: str, n: int, **constants) -> LimitState:
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    if name == "portfolio" and "b" not in constants:
        constants["b"] = 0.45 if n <= 30 else 0.25
    return factory(n, **constants)


def calibrate_threshold(
    benchmark: str,
    n: int,
    target_p: float,
    samples: int = 10**7,
    seed: int = 20240101,
    chunk: int = 200_000,
) -> float:
    """Threshold ``c_n`` giving failure probability ``target_p`` under crude MC.

    P(response >= c) is nonincreasing in ``c``, so the root of
    ``P(c) = target_p`` on a fixed crude Monte Carlo sample is the empirical
    ``(1 - target_p)`` quantile of the response.
    """
    if benchmark != "ackley":
        raise CalibrationError(f"threshold calibration is only defined for ackley, not {benchmark!r}")
    if not 1e-6 < target_p < 0.5:
        raise ValueError("target_p must lie in (1e-6, 0.5)")
    if target_p * samples < 100:
        raise CalibrationError("too few samples to resolve the target probability")
    rng = make_rng(seed)
    response = np.empty(samples)
    for start in range(0, samples, chunk):
        stop = min(start + chunk, samples)
        response[start:stop] = ackley_response(rng.standard_normal((stop - start, n)))
    # c is the smallest value with #{response >= c} = round(target_p * samples)
    k = int(round(target_p * samples))
    return float(np.partition(response, samples - k)[samples - k])


def mills_ratio(a: float) -> float:
    """``phi_N(a) / Phi_N(-a)``: mean of a standard normal beyond ``a``."""
    return float(np.exp(-0.5 * a * a - 0.5 * np.log(2 * np.pi) - special.log_ndtr(-a)))


def linear_optimal_params(n: int, beta: float = 3.0) -> GaussianParams:
    """Exact conditional mean and covariance given failure for :class:`LinearSum`.

    Along ``u = (1, ..., 1)/sqrt(n)`` the input given failure is a standard
    normal truncated to ``[beta, inf)``; orthogonal directions are untouched.
    """
    lam = mills_ratio(beta)
    v = 1.0 + beta * lam - lam**2
    u = np.full(n, 1.0 / np.sqrt(n))
    return GaussianParams(lam * u, RankOne(u, v, eps=0.0))
