"""Command-line entry point ``rare-sim``.

Exit codes: 0 on success, 2 when every reported row is NC-dominated (more
than half of its repetitions did not converge), 1 on errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import harness

log = logging.getLogger("rare_sim")

EXIT_OK, EXIT_ERROR, EXIT_NC = 0, 1, 2


def _dims(text: str) -> list:
    """``10:60:5`` (inclusive stop) or ``10,20,30``."""
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError("use start:stop[:step]")
        start, stop = parts[:2]
        step = parts[2] if len(parts) == 3 else 1
        if step <= 0:
            raise argparse.ArgumentTypeError("step must be positive")
        return list(range(start, stop + 1, step))
    return [int(p) for p in text.split(",") if p]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--reps", type=int, help="repetitions per cell (default 100)")
    p.add_argument("--seed", type=int, help="base seed; trial k uses seed+k (default 0)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), help="output format (default csv)")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def _adaptive(p: argparse.ArgumentParser) -> None:
    p.add_argument("--benchmark", help="linear | ackley | portfolio | parabola | parabola-narrow")
    p.add_argument("--samples", type=int, help="sample size N per batch")
    p.add_argument("--budget-target", type=float, help="auto-tune N so the average budget is near this")
    p.add_argument("--smoothing-alpha", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--sigma-method", choices=("bounded", "global"),
                   help="iCE smoothing-width search (default bounded)")
    p.add_argument("--recompute-reference", action="store_true", default=None)
    p.add_argument("--constants", help='benchmark constants as JSON, e.g. \'{"b": 0.45}\'')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rare-sim",
        description="Cross-entropy importance sampling experiments for rare-event probabilities.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="repeat one algorithm on one benchmark")
    _common(run)
    _adaptive(run)
    run.add_argument("--algorithm", help=", ".join(harness.ALGORITHMS))
    run.add_argument("--dim", type=int)

    sweep = sub.add_parser("sweep", help="mean estimate versus dimension")
    _common(sweep)
    _adaptive(sweep)
    sweep.add_argument("--algorithms", help="comma separated algorithm names")
    sweep.add_argument("--dims", help="start:stop:step (inclusive) or a comma list")

    tables = sub.add_parser("tables", help="reproduce one of the four benchmark tables")
    _common(tables)
    tables.add_argument("--which", type=int, choices=sorted(harness.TABLES))
    tables.add_argument("--print", dest="print_table", action="store_true", default=None,
                        help="also print the formatted table to stderr")
    return parser


def _merge_config(args: argparse.Namespace) -> dict:
    """Flags override values from ``--config``; unset flags are None."""
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object")
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key, value in vars(args).items():
        if value is not None:
            values[key] = value
    return values


def _template(opts: dict, benchmark: str, algorithm: str, n: int) -> harness.ExperimentSpec:
    constants = opts.get("constants") or {}
    if isinstance(constants, str):
        constants = json.loads(constants)
    kwargs = {
        "repetitions": opts.get("reps", 100),
        "sample_size": opts.get("samples"),
        "smoothing_alpha": opts.get("smoothing_alpha", 1.0),
        "rho": opts.get("rho", 0.1),
        "delta": opts.get("delta"),
        "max_iterations": opts.get("max_iterations", 10),
        "sigma_method": opts.get("sigma_method", "bounded"),
        "base_seed": opts.get("seed", 0),
        "recompute_reference": bool(opts.get("recompute_reference", False)),
        "constants": constants,
    }
    return harness.ExperimentSpec(benchmark, algorithm, n, **kwargs)


def _require(opts: dict, *names):
    missing = [n for n in names if opts.get(n) in (None, "")]
    if missing:
        raise ValueError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _tuned(spec: harness.ExperimentSpec, opts: dict) -> harness.ExperimentSpec:
    target = opts.get("budget_target")
    if target is None or opts.get("samples") is not None:
        return spec
    n_samples = harness.auto_tune_sample_size(spec, budget_target=target, workers=opts.get("workers", 1))
    log.info("auto-tuned N=%d for %s n=%d", n_samples, spec.algorithm, spec.n)
    return replace(spec, sample_size=n_samples)


def _execute(opts: dict) -> list:
    command = opts["command"]
    workers = opts.get("workers", 1)
    if command == "run":
        _require(opts, "benchmark", "algorithm", "dim")
        spec = _tuned(_template(opts, opts["benchmark"], opts["algorithm"], opts["dim"]), opts)
        return [harness.run_experiment(spec, workers=workers)]
    if command == "sweep":
        _require(opts, "benchmark", "algorithms", "dims")
        dims = harness.check_dims(opts["dims"] if isinstance(opts["dims"], list) else _dims(str(opts["dims"])))
        algorithms = opts["algorithms"]
        if isinstance(algorithms, str):
            algorithms = [a.strip() for a in algorithms.split(",") if a.strip()]
        out = []
        for name in algorithms:
            for n in dims:
                spec = _tuned(_template(opts, opts["benchmark"], name, n), opts)
                out.append(harness.run_experiment(spec, workers=workers))
        return out
    _require(opts, "which")
    return harness.run_table(
        int(opts["which"]), seed=opts.get("seed", 0), repetitions=opts.get("reps", 100), workers=workers
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        opts = _merge_config(args)
        summaries = _execute(opts)
        fmt = opts.get("format", "csv")
        if opts.get("out"):
            harness.emit(summaries, opts["out"], fmt)
        else:
            harness.write_rows(summaries, sys.stdout, fmt)
        if opts.get("print_table"):
            print(harness.render_table(summaries), file=sys.stderr)
    except (ValueError, KeyError, OSError, ArithmeticError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"rare-sim: error: {msg}", file=sys.stderr)
        return EXIT_ERROR
    if summaries and all(s.is_nc for s in summaries):
        return EXIT_NC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
