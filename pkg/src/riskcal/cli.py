"""Command-line front end.

Subcommands::

    riskcal assess      one split (or an explicit calib/test pair), one report per method
    riskcal experiment  repeated random splits, delta table + summary JSON + per-split CSV
    riskcal sweep       experiment repeated along one axis (calibration size n or bin count M)
    riskcal synth       generate a synthetic pool with a known-risk sidecar
    riskcal ece         expected calibration error of a file's top-k confidences

Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure.
All randomness flows from --seed (fallback: the RISKCAL_SEED environment
variable, then 0), so reruns with the same flags are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .assessment import (
    DEFAULT_METHODS,
    ExperimentConfig,
    Method,
    assess,
    ece,
    reports_to_csv,
    run_experiment,
    summary_to_dict,
    sweep,
)
from .calibration import correctness_pairs
from .core import Dataset, ScoreFunction
from .datagen import (
    IngestSchema,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_synthetic,
)

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit 1 (validation), not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("RISKCAL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"RISKCAL_SEED must be an integer, got {env!r}") from None
    return 0


def _parse_methods(spec: str) -> tuple[Method, ...]:
    methods = []
    for name in spec.split(","):
        m = Method.parse(name)
        if m not in methods:
            methods.append(m)
    return tuple(methods)


def _infer_classes(path: str, delimiter: str) -> int:
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (line_number == 1 and line.startswith("#")):
                continue
            return len(line.split(delimiter)) - 1
    raise ValueError(f"no records found in {path}")


def _load(path: str, logits: bool, delimiter: str) -> Dataset:
    schema = IngestSchema(
        format="logits" if logits else "probabilities",
        K=_infer_classes(path, delimiter),
        delimiter=delimiter,
    )
    return load_dataset(path, schema)


def _write_or_print(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(output).write_text(text, encoding="utf-8")


def _report_payload(reports, seed: int) -> list[dict]:
    return [
        {
            "method": r.method.value,
            "k": r.k,
            "repeat": r.split_seed,
            "seed": seed,
            "alpha_hat": r.alpha_hat,
            "alpha_emp": r.alpha_emp,
            "delta": r.delta,
            "conservative": r.conservative,
            "n_calib": r.n_calib,
            "n_test": r.n_test,
        }
        for r in reports
    ]


def _reports_csv_text(payload: list[dict]) -> str:
    cols = ("method", "k", "repeat", "seed", "alpha_hat", "alpha_emp", "delta", "conservative")
    lines = [",".join(cols)]
    for row in payload:
        lines.append(
            ",".join(
                [
                    row["method"],
                    str(row["k"]),
                    str(row["repeat"]),
                    str(row["seed"]),
                    repr(row["alpha_hat"]),
                    repr(row["alpha_emp"]),
                    repr(row["delta"]),
                    str(row["conservative"]).lower(),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _experiment_config(args, seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        k=args.k,
        methods=_parse_methods(args.methods),
        repeats=args.repeats,
        calib_fraction=args.calib_fraction,
        n_bins=args.bins,
        strategy=args.strategy,
        score_fn=ScoreFunction(args.score),
        seed=seed,
        jobs=args.jobs,
    )


def cmd_assess(args) -> int:
    seed = _resolve_seed(args.seed)
    methods = _parse_methods(args.methods)
    if args.calib and args.test:
        calib = _load(args.calib, args.logits, args.delimiter)
        test = _load(args.test, args.logits, args.delimiter)
        reports = assess(
            calib,
            test,
            k=args.k,
            methods=methods,
            n_bins=args.bins,
            strategy=args.strategy,
            score_fn=ScoreFunction(args.score),
            split_seed=seed,
        )
    elif args.input:
        pool = _load(args.input, args.logits, args.delimiter)
        config = dataclasses.replace(_experiment_config(args, seed), repeats=1)
        reports = run_experiment(pool, config).reports
    else:
        raise ValueError("provide --input, or --calib together with --test")

    payload = _report_payload(reports, seed)
    if args.format == "csv":
        _write_or_print(_reports_csv_text(payload), args.output)
    else:
        _write_or_print(json.dumps(payload, indent=2), args.output)
    return 0


def cmd_experiment(args) -> int:
    seed = _resolve_seed(args.seed)
    pool = _load(args.input, args.logits, args.delimiter)
    summary = run_experiment(pool, _experiment_config(args, seed))

    print(f"k={args.k}  repeats={summary.repeats}  "
          f"n_calib={summary.n_calib}  n_test={summary.n_test}")
    print(f"{'method':<10}{'mean_delta':>14}{'std_delta':>14}")
    for method, stats in summary.method_stats.items():
        print(f"{method.value:<10}{stats.mean_delta:>+14.6f}{stats.std_delta:>14.6f}")

    if args.output:
        out = Path(args.output)
        out.write_text(json.dumps(summary_to_dict(summary), indent=2) + "\n",
                       encoding="utf-8")
        csv_path = out.with_suffix(".csv")
        csv_path.write_text(reports_to_csv(summary), encoding="utf-8")
        print(f"wrote {out} and {csv_path}")
    else:
        sys.stdout.write(json.dumps(summary_to_dict(summary), indent=2) + "\n")
    return 0


def cmd_sweep(args) -> int:
    seed = _resolve_seed(args.seed)
    pool = _load(args.input, args.logits, args.delimiter)
    values = [int(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValueError("--values must list at least one integer")
    summaries = sweep(pool, _experiment_config(args, seed), args.axis, values)

    rows = []
    for value, summary in zip(values, summaries):
        for method, stats in summary.method_stats.items():
            rows.append((value, method.value, stats.mean_delta, stats.std_delta))
    if args.format == "json":
        payload = [
            {"axis": args.axis, "axis_value": v, "method": m,
             "mean_delta": mean, "std_delta": std}
            for v, m, mean, std in rows
        ]
        _write_or_print(json.dumps(payload, indent=2), args.output)
    else:
        lines = ["axis_value,method,mean_delta,std_delta"]
        lines += [f"{v},{m},{mean!r},{std!r}" for v, m, mean, std in rows]
        _write_or_print("\n".join(lines) + "\n", args.output)
    return 0


def cmd_synth(args) -> int:
    config = SyntheticConfig(
        K=args.classes,
        pool_size=args.pool_size,
        concentration=args.concentration,
        distortion_T=args.distortion,
        seed=_resolve_seed(args.seed),
    )
    dataset, oracle_risk = generate_synthetic(config)
    sidecar = save_synthetic(dataset, oracle_risk, config, args.output)
    print(f"wrote {args.output} ({len(dataset)} records, K={config.K}) and {sidecar}")
    return 0


def cmd_ece(args) -> int:
    pool = _load(args.input, args.logits, args.delimiter)
    scores, targets = correctness_pairs(pool, args.k)
    value = ece(scores, targets, n_bins=args.bins)
    payload = {"ece": value, "k": args.k, "n_bins": args.bins, "n": len(pool)}
    _write_or_print(json.dumps(payload, indent=2), args.output)
    return 0


def _add_io_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--logits", action="store_true",
                   help="input files hold logits instead of probabilities")
    p.add_argument("--delimiter", default=",", help="field delimiter (default ,)")
    p.add_argument("--output", help="output path (default: stdout)")


def _add_method_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=1, help="prediction-set size (default 1)")
    p.add_argument("--methods", default=",".join(m.value for m in DEFAULT_METHODS),
                   help="comma-separated method list (default: all)")
    p.add_argument("--calib-fraction", type=float, default=0.2,
                   help="fraction of the pool used for calibration (default 0.2)")
    p.add_argument("--bins", type=int, default=10, metavar="M",
                   help="bin count for hist-bin / iso-reg sweeps and ece (default 10)")
    p.add_argument("--strategy", default="equal-frequency",
                   help="binning strategy: equal-frequency (default) or equal-width")
    p.add_argument("--score", default="aps", help="conformity score: aps (default) or lac")
    p.add_argument("--seed", type=int, default=None,
                   help="master seed (default: $RISKCAL_SEED, else 0)")
    p.add_argument("--jobs", type=int, default=1, help="worker cap for repeats (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="riskcal",
                     description="Misclassification-risk estimation for top-k outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assess", help="one split, one report per method")
    p.add_argument("--input", help="pool file, split by --calib-fraction and --seed")
    p.add_argument("--calib", help="explicit calibration file (with --test)")
    p.add_argument("--test", help="explicit test file (with --calib)")
    _add_method_flags(p)
    p.add_argument("--repeats", type=int, default=1, help=argparse.SUPPRESS)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    _add_io_flags(p)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("experiment", help="repeated-split benchmark of all methods")
    p.add_argument("--input", required=True, help="pool file")
    _add_method_flags(p)
    p.add_argument("--repeats", type=int, default=100,
                   help="number of independent splits (default 100)")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help=argparse.SUPPRESS)
    _add_io_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="experiments along one axis (n or M)")
    p.add_argument("--input", required=True, help="pool file")
    p.add_argument("--axis", required=True, choices=("n", "M"),
                   help="n = calibration size, M = bin count")
    p.add_argument("--values", required=True, help="comma-separated axis values")
    _add_method_flags(p)
    p.add_argument("--repeats", type=int, default=100,
                   help="number of independent splits per value (default 100)")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    _add_io_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic pool with a risk sidecar")
    p.add_argument("--classes", type=int, required=True, help="class count K")
    p.add_argument("--pool-size", type=int, required=True)
    p.add_argument("--concentration", type=float, default=1.0,
                   help="Dirichlet concentration of the true conditionals (default 1)")
    p.add_argument("--distortion", type=float, default=1.0,
                   help="reporting temperature; <1 over-confident, 1 faithful (default 1)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", required=True, help="CSV path; sidecar lands beside it")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ece", help="expected calibration error of top-k confidences")
    p.add_argument("--input", required=True, help="pool file")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--bins", type=int, default=10, metavar="M")
    _add_io_flags(p)
    p.set_defaults(func=cmd_ece)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"riskcal: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"riskcal: i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
