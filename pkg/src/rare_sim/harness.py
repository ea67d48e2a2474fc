"""Repeated-trial experiments, dimension sweeps and table output.

An experiment runs ``repetitions`` independent trials of one algorithm on
one benchmark (trial ``k`` is seeded with ``base_seed + k``) and summarizes
them with the usual rare-event metrics: mean estimate, coefficient of
variation about the reference probability (RMSE / P), relative bias, the
number of non-converged runs and the average simulation budget.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from .estimators import (
    DiagonalCovariance,
    EstimatorConfig,
    FixedCovariance,
    FixedMean,
    FullCovariance,
    RankOneAlongMean,
    TrialResult,
    crude_monte_carlo,
    importance_sampling,
    run_ce,
    run_ice,
)
from .gaussian import make_rng
from .limit_states import (
    ACKLEY_THRESHOLDS,
    LimitState,
    linear_optimal_params,
    make_limit_state,
)

__all__ = [
    "ALGORITHMS",
    "TABLE_ALGORITHMS",
    "TABLES",
    "COLUMNS",
    "ExperimentSpec",
    "ExperimentSummary",
    "aggregate",
    "default_sample_size",
    "reference_probability",
    "run_trial",
    "run_experiment",
    "auto_tune_sample_size",
    "dimension_sweep",
    "run_table",
    "summary_row",
    "emit",
    "write_rows",
    "read_table",
    "render_table",
]

ADAPTIVE = {
    # name: (runner, family factory, default rho, default delta)
    "ce": (run_ce, FullCovariance),
    "ced": (run_ce, DiagonalCovariance),
    "ce-mstar": (run_ce, RankOneAlongMean),
    "ice": (run_ice, FullCovariance),
    "iced": (run_ice, DiagonalCovariance),
    "ice-mstar": (run_ice, RankOneAlongMean),
}

DEFAULT_DELTA = {"ice": 1.5, "iced": 3.0, "ice-mstar": 3.0}

FIGURE1_FAMILIES = (
    "full",
    "diagonal",
    "rank-one",
    "fixed-covariance",
    "fixed-mean",
    "fixed-mean-block",
)

ALGORITHMS = ("crude", "is-fixed", *ADAPTIVE) + tuple(
    f"figure1-family:{tag}" for tag in FIGURE1_FAMILIES
)

# Column order of the published result tables.
TABLE_ALGORITHMS = ("ice", "ice-mstar", "iced", "ce", "ce-mstar", "ced")

# Per-cell sample sizes N from the published tables; None marks cells that
# were reported as NC without a sample size.
_TABLE_N = {
    "linear": {
        30: (1000, 2700, 3700, 1000, 2700, 3400),
        100: (None, 2900, 3700, None, 2700, 3600),
        300: (None, 4000, 3700, None, 2700, 3700),
    },
    "ackley": {
        30: (1000, 2700, 2700, 2700, 2200, 2700),
        100: (None, 2700, 2700, None, 2200, 2700),
        200: (None, 2700, 2700, None, 2700, 3700),
    },
    "portfolio": {
        30: (1000, 2700, 3200, 2600, 2700, 2700),
        100: (None, 3000, 2700, None, 2700, 2700),
        250: (None, 1600, 1500, None, 2100, None),
    },
    "parabola": {
        30: (1000, 2700, 2700, 1000, 1600, 2000),
        100: (None, 2700, 2600, None, 1900, 2000),
        300: (None, 2300, None, None, 2400, None),
    },
}

# Budget-matched N for the fixed-parameter ablations on the linear benchmark:
# the fixed-covariance family needs four batches, the fixed-mean ones two.
_FIGURE1_N = {"fixed-covariance": 2000, "fixed-mean": 4000, "fixed-mean-block": 4000}

TABLES = {
    1: ("linear", (30, 100, 300)),
    2: ("ackley", (30, 100, 200)),
    3: ("portfolio", (30, 100, 250)),
    4: ("parabola", (30, 100, 300)),
}

# Published reference probabilities, keyed by (benchmark, n) with
# benchmark-specific constants checked in reference_probability.
_TABLE_P = {
    ("portfolio", 30): 4.29e-3,
    ("portfolio", 100): 1.8e-3,
    ("portfolio", 250): 1.0e-5,
}
_PARABOLA_P = 2.9e-4


def default_sample_size(benchmark: str, n: int, algorithm: str) -> int:
    """Published N for the cell, else a budget-matched fallback."""
    if algorithm in ("crude", "is-fixed"):
        return 8000
    if algorithm.startswith("figure1-family:"):
        tag = algorithm.split(":", 1)[1]
        if tag in _FIGURE1_N:
            return _FIGURE1_N[tag]
        algorithm = {"full": "ce", "diagonal": "ced", "rank-one": "ce-mstar"}.get(tag, "ce-mstar")
    table = _TABLE_N.get("parabola" if benchmark == "parabola-narrow" else benchmark, {})
    if algorithm in TABLE_ALGORITHMS and table:
        nearest = min(table, key=lambda d: (abs(d - n), d))
        value = table[nearest][TABLE_ALGORITHMS.index(algorithm)]
        if value is not None:
            return value
    return 1000 if algorithm in ("ce", "ice") else 2700


@dataclass(frozen=True)
class ExperimentSpec:
    benchmark: str
    algorithm: str
    n: int
    repetitions: int = 100
    sample_size: Optional[int] = None
    rho: float = 0.1
    delta: Optional[float] = None
    smoothing_alpha: float = 1.0
    max_iterations: int = 10
    epsilon: float = 1e-6
    sigma_method: str = "bounded"
    reference_p: Optional[float] = None
    base_seed: int = 0
    constants: tuple = ()
    recompute_reference: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be positive")
        if self.reference_p is not None and not self.reference_p > 0:
            raise ValueError("reference_p must be positive")
        if self.algorithm not in ALGORITHMS:
            raise KeyError(f"unknown algorithm {self.algorithm!r}; choose from {list(ALGORITHMS)}")
        if isinstance(self.constants, dict):
            object.__setattr__(self, "constants", tuple(sorted(self.constants.items())))

    @property
    def resolved_sample_size(self) -> int:
        if self.sample_size is not None:
            return self.sample_size
        return default_sample_size(self.benchmark, self.n, self.algorithm)

    def limit_state(self) -> LimitState:
        return make_limit_state(self.benchmark, self.n, **dict(self.constants))

    def config(self) -> EstimatorConfig:
        name = self.algorithm
        if name.startswith("figure1-family:"):
            family = _figure1_family(name.split(":", 1)[1], self.benchmark, self.n)
            delta = self.delta or 1.5
        elif name in ADAPTIVE:
            family = ADAPTIVE[name][1]()
            delta = self.delta or DEFAULT_DELTA.get(name, 1.5)
        else:
            family = FullCovariance()
            delta = self.delta or 1.5
        return EstimatorConfig(
            family=family,
            rho=self.rho,
            delta_target=delta,
            sample_size=self.resolved_sample_size,
            max_iterations=self.max_iterations,
            epsilon=self.epsilon,
            smoothing_alpha=self.smoothing_alpha,
            sigma_method=self.sigma_method,
        )


def _figure1_family(tag: str, benchmark: str, n: int):
    if tag == "full":
        return FullCovariance()
    if tag == "diagonal":
        return DiagonalCovariance()
    if tag == "rank-one":
        return RankOneAlongMean()
    if benchmark != "linear":
        raise ValueError(f"figure1-family:{tag} needs the analytic optimum, only available for 'linear'")
    opt = linear_optimal_params(n)
    if tag == "fixed-covariance":
        return FixedCovariance(opt.covariance)
    if tag == "fixed-mean":
        return FixedMean(opt.mean)
    if tag == "fixed-mean-block":
        return FixedMean(opt.mean, block_fraction=0.75)
    raise KeyError(f"unknown figure-1 family {tag!r}")


@dataclass
class ExperimentSummary:
    mean: float
    cov: float
    relative_bias: float
    nc_count: int
    avg_budget: float
    sample_size: int = 0
    repetitions: int = 0
    reference_p: float = float("nan")
    benchmark: str = ""
    algorithm: str = ""
    n: int = 0
    seed: int = 0
    mean_all: float = float("nan")
    results: list = field(default_factory=list, repr=False)

    @property
    def converged_count(self) -> int:
        return self.repetitions - self.nc_count

    @property
    def is_nc(self) -> bool:
        """More than half of the repetitions failed to converge."""
        return 2 * self.nc_count > self.repetitions


def aggregate(results: Sequence[TrialResult], reference_p: float) -> ExperimentSummary:
    """Mean, RMSE-based C.o.V. and relative bias over converged trials.

    ``avg_budget`` is taken over all trials.  With no converged trial the
    accuracy metrics are NaN.  ``mean_all`` also averages the final-batch
    estimates of non-converged runs.
    """
    if not reference_p > 0:
        raise ValueError("reference_p must be positive")
    if not results:
        raise ValueError("no trial results to aggregate")
    p = np.array([r.p_hat for r in results if r.converged], dtype=float)
    nc = len(results) - p.size
    if p.size:
        mean = float(p.mean())
        cov = float(np.sqrt(np.mean((p - reference_p) ** 2)) / reference_p)
        bias = (mean - reference_p) / reference_p
    else:
        mean = cov = bias = float("nan")
    everything = np.array([r.p_hat if r.converged else r.last_estimate for r in results])
    return ExperimentSummary(
        mean=mean,
        cov=cov,
        relative_bias=bias,
        nc_count=nc,
        avg_budget=float(np.mean([r.budget for r in results])),
        repetitions=len(results),
        reference_p=reference_p,
        mean_all=float(np.nanmean(everything)) if np.any(~np.isnan(everything)) else float("nan"),
        results=list(results),
    )


# ---------------------------------------------------------------------------
# Reference probabilities
# ---------------------------------------------------------------------------


def _parabola_probability(kappa: float, offset: float) -> float:
    # P(X1 >= offset + kappa X2^2) = E[Phi(-(offset + kappa X2^2))]
    def integrand(y):
        return np.exp(-0.5 * y * y) / np.sqrt(2 * np.pi) * special.ndtr(-(offset + kappa * y * y))

    return integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-16, epsrel=1e-12)[0]


@lru_cache(maxsize=None)
def _oracle_probability(ls_repr: str, benchmark: str, n: int, constants: tuple, samples: int, seed: int):
    ls = make_limit_state(benchmark, n, **dict(constants))
    return crude_monte_carlo(ls, samples, make_rng(seed)).p_hat


def reference_probability(
    benchmark: str,
    n: int,
    constants: Optional[dict] = None,
    recompute: bool = False,
    samples: int = 10**7,
    seed: int = 987654321,
) -> float:
    """Known failure probability for a benchmark instance.

    The linear case is exact.  The other benchmarks use the published
    values (the Ackley thresholds are calibrated to them); the narrow
    parabola is integrated numerically.  Anything else, or any instance
    when ``recompute`` is set, falls back to a crude Monte Carlo oracle
    with ``samples`` draws.
    """
    constants = dict(constants or {})
    ls = make_limit_state(benchmark, n, **constants)
    if not recompute:
        if benchmark == "linear":
            return float(special.ndtr(-ls.beta))
        if benchmark == "ackley" and n in ACKLEY_THRESHOLDS and ls.c == ACKLEY_THRESHOLDS[n][1]:
            return ACKLEY_THRESHOLDS[n][0]
        if benchmark == "portfolio" and (benchmark, n) in _TABLE_P:
            level = ls.b * ls.n
            published_b = 0.45 if n <= 30 else 0.25
            # the published values count losses strictly above b n
            same_event = ls.strict or level != math.floor(level)
            if ls.b == published_b and same_event and ls.q == 0.25:
                return _TABLE_P[(benchmark, n)]
        if benchmark in ("parabola", "parabola-narrow"):
            if ls.kappa == 3.0 and ls.offset == 3.0:
                return _PARABOLA_P
            return _parabola_probability(ls.kappa, ls.offset)
    p = _oracle_probability(repr(ls), benchmark, n, tuple(sorted(constants.items())), samples, seed)
    if p == 0:
        raise ValueError("crude Monte Carlo oracle saw no failure; increase samples")
    return p


# ---------------------------------------------------------------------------
# Running experiments
# ---------------------------------------------------------------------------


def run_trial(spec: ExperimentSpec, k: int) -> TrialResult:
    """Trial ``k`` of ``spec`` on a fresh limit state seeded with ``base_seed + k``."""
    ls = spec.limit_state()
    rng = make_rng(spec.base_seed + k)
    if spec.algorithm == "crude":
        result = crude_monte_carlo(ls, spec.resolved_sample_size, rng)
    elif spec.algorithm == "is-fixed":
        if spec.benchmark != "linear":
            raise ValueError("is-fixed uses the analytic optimal density of the linear benchmark")
        g = linear_optimal_params(spec.n)
        result = importance_sampling(ls, g, spec.resolved_sample_size, rng)
    else:
        cfg = spec.config()
        runner = run_ice if spec.algorithm.startswith("ice") else run_ce
        result = runner(ls, cfg, rng)
    if result.budget != ls.evaluations:
        raise RuntimeError(
            f"budget mismatch: estimator reported {result.budget}, limit state counted {ls.evaluations}"
        )
    return result


def _trial_star(args):
    return run_trial(*args)


def _run_trials(spec: ExperimentSpec, repetitions: int, workers: int) -> list:
    jobs = [(spec, k) for k in range(repetitions)]
    if workers <= 1:
        return [run_trial(s, k) for s, k in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so aggregation is order independent
        return list(pool.map(_trial_star, jobs, chunksize=max(1, repetitions // (4 * workers))))


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentSummary:
    if spec.reference_p is not None:
        ref = spec.reference_p
    else:
        ref = reference_probability(
            spec.benchmark, spec.n, dict(spec.constants), recompute=spec.recompute_reference
        )
    results = _run_trials(spec, spec.repetitions, workers)
    summary = aggregate(results, ref)
    summary.benchmark = spec.benchmark
    summary.algorithm = spec.algorithm
    summary.n = spec.n
    summary.sample_size = spec.resolved_sample_size
    summary.seed = spec.base_seed
    return summary


def auto_tune_sample_size(
    spec: ExperimentSpec,
    budget_target: float = 8000,
    pilot_repetitions: int = 10,
    tolerance: float = 500,
    max_rounds: int = 4,
    workers: int = 1,
) -> int:
    """Choose N (a multiple of 100) so the average budget lands near ``budget_target``.

    Each round runs a pilot, estimates the mean number of batches per run
    and rescales N.  Pilot seeds are offset from the experiment's seeds.
    """
    n_samples = spec.resolved_sample_size
    pilot = replace(spec, repetitions=pilot_repetitions, base_seed=spec.base_seed + 10**6)
    for _ in range(max_rounds):
        trial = replace(pilot, sample_size=n_samples)
        budgets = [r.budget for r in _run_trials(trial, pilot_repetitions, workers)]
        avg = float(np.mean(budgets))
        if abs(avg - budget_target) <= tolerance:
            break
        batches = avg / n_samples
        n_samples = max(100, int(round(budget_target / batches / 100.0)) * 100)
    return n_samples


def check_dims(dims: Sequence[int]) -> list:
    """Validate a sweep grid: nonempty, positive and strictly ascending."""
    dims = [int(n) for n in dims]
    if not dims:
        raise ValueError("dims must be nonempty")
    if any(b <= a for a, b in zip(dims, dims[1:])):
        raise ValueError("dims must be strictly ascending")
    if dims[0] < 1:
        raise ValueError("dimensions must be positive")
    return dims


def dimension_sweep(
    benchmark: str,
    algorithms: Sequence[str],
    dims: Sequence[int],
    template: Optional[ExperimentSpec] = None,
    workers: int = 1,
) -> list:
    """One summary per (algorithm, n), algorithms outermost."""
    dims = check_dims(dims)
    template = template or ExperimentSpec(benchmark, algorithms[0], dims[0])
    out = []
    for name in algorithms:
        for n in dims:
            spec = replace(template, benchmark=benchmark, algorithm=name, n=n)
            out.append(run_experiment(spec, workers=workers))
    return out


def run_table(
    which: int,
    seed: int = 0,
    repetitions: int = 100,
    workers: int = 1,
    algorithms: Sequence[str] = TABLE_ALGORITHMS,
) -> list:
    """Reproduce one of the four benchmark tables (dimensions x algorithms)."""
    if which not in TABLES:
        raise KeyError(f"table must be one of {sorted(TABLES)}")
    benchmark, dims = TABLES[which]
    constants = {"strict": True} if benchmark == "portfolio" else {}
    out = []
    for n in dims:
        for name in algorithms:
            spec = ExperimentSpec(
                benchmark, name, n, repetitions=repetitions, base_seed=seed, constants=constants
            )
            out.append(run_experiment(spec, workers=workers))
    return out


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

COLUMNS = (
    "benchmark",
    "algorithm",
    "n",
    "N",
    "reps",
    "mean",
    "cov_pct",
    "rel_bias_pct",
    "nc_count",
    "avg_budget",
    "seed",
)
_INT_COLUMNS = {"n", "N", "reps", "nc_count", "seed"}
_STR_COLUMNS = {"benchmark", "algorithm"}


def _g6(x: float) -> float:
    return float("%.6g" % x)


def summary_row(s: ExperimentSummary) -> dict:
    """Flat record in :data:`COLUMNS` order, floats rounded to 6 significant digits."""
    return {
        "benchmark": s.benchmark,
        "algorithm": s.algorithm,
        "n": int(s.n),
        "N": int(s.sample_size),
        "reps": int(s.repetitions),
        "mean": _g6(s.mean),
        "cov_pct": _g6(100.0 * s.cov),
        "rel_bias_pct": _g6(100.0 * s.relative_bias),
        "nc_count": int(s.nc_count),
        "avg_budget": _g6(s.avg_budget),
        "seed": int(s.seed),
    }


def _format(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else "%.6g" % value
    return str(value)


def write_rows(summaries, stream, fmt: str = "csv") -> None:
    """Serialize summaries (or pre-built rows) to an open text stream."""
    rows = [s if isinstance(s, dict) else summary_row(s) for s in summaries]
    fmt = fmt.lower()
    if fmt == "csv":
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_format(row[c]) for c in COLUMNS])
    elif fmt == "json":
        clean = [
            {c: (None if isinstance(row[c], float) and math.isnan(row[c]) else row[c]) for c in COLUMNS}
            for row in rows
        ]
        json.dump(clean, stream, indent=2)
        stream.write("\n")
    else:
        raise ValueError(f"unsupported format {fmt!r}")


def emit(summaries, path, fmt: str = "csv") -> None:
    """Write summaries as CSV or JSON with stable columns to ``path``."""
    if fmt.lower() not in ("csv", "json"):
        raise ValueError(f"unsupported format {fmt!r}")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            write_rows(summaries, fh, fmt)
    except OSError as exc:
        raise OSError(f"could not write results to {os.fspath(path)!r}: {exc}") from exc


def _parse_value(column: str, raw):
    if column in _STR_COLUMNS:
        return str(raw)
    if column in _INT_COLUMNS:
        return int(raw)
    if raw is None or raw == "nan":
        return float("nan")
    return float(raw)


def read_table(path, fmt: Optional[str] = None) -> list:
    """Parse a file written by :func:`emit` back into row dicts."""
    fmt = (fmt or os.path.splitext(os.fspath(path))[1].lstrip(".") or "csv").lower()
    try:
        with open(path, encoding="utf-8") as fh:
            if fmt == "json":
                raw_rows = json.load(fh)
            else:
                raw_rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(f"could not read results from {os.fspath(path)!r}: {exc}") from exc
    return [{c: _parse_value(c, r[c]) for c in COLUMNS} for r in raw_rows]


def render_table(summaries: Sequence[ExperimentSummary]) -> str:
    """Plain-text table in the usual results layout (algorithms across, metrics down); NC-dominated cells print ``NC``."""
    by_n: dict = {}
    for s in summaries:
        by_n.setdefault(s.n, {})[s.algorithm] = s
    algorithms = []
    for s in summaries:
        if s.algorithm not in algorithms:
            algorithms.append(s.algorithm)
    width = 11
    lines = []
    header = f"{'':>8} {'':>14}" + "".join(f"{a:>{width}}" for a in algorithms)
    for n, cells in by_n.items():
        ref = next(iter(cells.values())).reference_p
        lines.append(header)
        lines.append(f"n={n:<6} P={ref:.3g}")

        def cell(a, fn):
            s = cells.get(a)
            if s is None:
                return f"{'-':>{width}}"
            return f"{'NC':>{width}}" if s.is_nc else f"{fn(s):>{width}}"

        lines.append(f"{'':>8} {'Mean':>14}" + "".join(cell(a, lambda s: f"{s.mean:.3g}") for a in algorithms))
        lines.append(f"{'':>8} {'C.o.V.':>14}" + "".join(cell(a, lambda s: f"{100 * s.cov:.1f}%") for a in algorithms))
        lines.append(
            f"{'':>8} {'Relative bias':>14}"
            + "".join(cell(a, lambda s: f"{100 * s.relative_bias:.2f}%") for a in algorithms)
        )
        lines.append(f"{'':>8} {'Sample size':>14}" + "".join(cell(a, lambda s: f"{s.sample_size}") for a in algorithms))
        lines.append(f"{'':>8} {'Budget':>14}" + "".join(cell(a, lambda s: f"{s.avg_budget:.0f}") for a in algorithms))
        lines.append("")
    return "\n".join(lines)
