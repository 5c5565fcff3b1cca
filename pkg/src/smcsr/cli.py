"""Command-line entry point: ``smcsr {smc,gp,bench,synth}``.

Exit codes: 0 success, 2 degenerate population, 64 usage or configuration
error, 65 dataset error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .benchmark import (CampaignConfig, SpecError, _json_safe, dump_json, nml_distribution_snapshots,
                        resolve_problem, select_model, split_nrmse, synthesize)
from .config import ConfigError, gp_config, read_json, smc_config
from .evidence import DatasetError, load_csv, write_csv
from .expression import ExpressionError
from .gp import run_gp
from .smc import DegeneratePopulationError, SmcSampler, _complexity_of_nodes, aggregate
from .text import format_expression

EXIT_OK, EXIT_DEGENERATE, EXIT_USAGE, EXIT_DATA = 0, 2, 64, 65

log = logging.getLogger("smcsr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _phi_list(text: str):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError("snapshot values must lie in [0, 1]")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smcsr", description="Bayesian symbolic regression by sequential Monte Carlo.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", required=True, help="JSON config file")
        if data:
            sp.add_argument("--data", required=True, help="CSV dataset (x0..,y) with optional split manifest")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--workers", type=int, help="worker processes for offspring evaluation")

    s = sub.add_parser("smc", help="run the SMC sampler on a dataset")
    common(s)
    s.add_argument("--snapshots", type=_phi_list, help="record evidence distributions at these phi values")

    g = sub.add_parser("gp", help="run a genetic-programming baseline")
    common(g)
    g.add_argument("--matched-steps", type=int, help="number of generations (overrides n_generations)")

    b = sub.add_parser("bench", help="run a benchmark campaign")
    common(b, data=False)

    y = sub.add_parser("synth", help="write a synthetic dataset from a problem spec")
    y.add_argument("--config", required=True, help="problem spec JSON or built-in problem name")
    y.add_argument("--out", required=True, help="output CSV path")
    y.add_argument("--seed", type=int, help="overrides the spec seed")
    return p


def _write_trace(trace, path: Path):
    with path.open("w") as fh:
        for rec in trace:
            fh.write(json.dumps(_json_safe(rec)) + "\n")


def _describe(expr, data, log_nml=None):
    return {"expression": format_expression(expr), "params": [float(p) for p in expr.params],
            "log_nml": log_nml, "nrmse_train": split_nrmse(expr, data, "train"),
            "complexity": _complexity_of_nodes(expr.nodes), "n_params": expr.n_params}


def _selection_report(population, data, methods, variant):
    report = {}
    for method in methods:
        if method == "validation" and "validation" not in data.splits:
            report[method] = {"unavailable": "dataset has no validation split"}
            continue
        chosen = select_model(population, method, data, variant)
        i = next(k for k, m in enumerate(population.members) if m is chosen)
        report[method] = _describe(chosen, data, float(population.log_nml[i]))
    return report


def cmd_smc(args) -> int:
    cfg = smc_config(read_json(args.config), seed=args.seed, workers=args.workers, snapshots=args.snapshots)
    data = load_csv(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sampler = SmcSampler(cfg, data, on_step=lambda rec, pop: log.info(
        "step %d phi=%.4g ess=%.1f accept=%.3f", rec["step"], rec["phi"], rec["ess_pre"], rec["accept_rate"]))
    try:
        result = sampler.run()
    except DegeneratePopulationError as exc:
        _write_trace(exc.trace, out / "trace.jsonl")
        print(f"degenerate population: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    _write_trace(result.trace, out / "trace.jsonl")
    dump_json(aggregate(result.population), out / "population.json")
    dump_json(_selection_report(result.population, data, ("max-nml", "validation", "mode"), "smc"),
              out / "selection.json")
    if cfg.snapshots:
        dump_json(nml_distribution_snapshots(result), out / "snapshots.json")
    return EXIT_OK


def cmd_gp(args) -> int:
    cfg = gp_config(read_json(args.config), seed=args.seed, workers=args.workers,
                    n_generations=args.matched_steps)
    data = load_csv(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run_gp(cfg, data)
    except DegeneratePopulationError as exc:
        _write_trace(exc.trace, out / "trace.jsonl")
        print(f"degenerate population: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    _write_trace(result.trace, out / "trace.jsonl")
    dump_json(aggregate(result.population), out / "population.json")
    dump_json(_selection_report(result.population, data, ("best-loss", "max-nml", "mode"), cfg.variant),
              out / "selection.json")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .benchmark import run_campaign

    raw = read_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    try:
        cfg = CampaignConfig.from_dict(raw)
    except SpecError as exc:
        raise ConfigError(str(exc)) from None
    rows = run_campaign(cfg, args.out)
    if rows and not any(r["status"] == "ok" for r in rows):
        print("every campaign cell failed; see the status column", file=sys.stderr)
        return 1
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = resolve_problem(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    write_csv(synthesize(spec), args.out)
    return EXIT_OK


COMMANDS = {"smc": cmd_smc, "gp": cmd_gp, "bench": cmd_bench, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("smcsr: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except DatasetError as exc:
        print(f"smcsr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, SpecError, ExpressionError, UsageError) as exc:
        print(f"smcsr: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
