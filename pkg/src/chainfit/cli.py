"""Command line entry point.

Subcommands: ``fit`` (maximum or conditional likelihood on model+data
files), ``eval`` (print an objective value), ``generate`` (random pattern
datasets), ``experiment-sbn`` and ``experiment-chd`` (the bundled
studies).  Progress goes to standard error; data goes to files (or, for
``eval``, a single number on standard output).

Exit codes: 0 success/converged, 1 error, 2 stopped at the cycle limit.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cml import Regime, fit_cml
from .errors import ChainFitError
from .experiments import (
    aggregate_difference,
    run_chd_experiment,
    run_sbn_experiment,
)
from .fileio import (
    HEART_CONTEXT_VARS,
    HEART_RESPONSE_VARS,
    parse_dataset,
    parse_model,
    table1_dataset,
    write_dataset,
    write_model,
    write_trace_csv,
)
from .inference import conditional_log_likelihood, divergence_to_target, log_likelihood
from .ipf import FitConfig, fit_ml
from .sbn import SigmoidNet, generate_patterns, weights_to_graph

_REGIMES = {
    "auto": None,
    "clamped": Regime.CLAMPED_PARENTS,
    "joint": Regime.JOINT_PARENTS,
}


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_fit(args: argparse.Namespace) -> int:
    graph = parse_model(Path(args.model).read_text())
    dataset = parse_dataset(Path(args.data).read_text(), graph.space)
    config = FitConfig(
        max_cycles=args.max_cycles,
        tol=args.tol,
        potential_floor=args.potential_floor,
    )
    if args.objective == "ml":
        trace = fit_ml(graph, dataset, config)
    else:
        trace = fit_cml(graph, dataset, config, force_regime=_REGIMES[args.regime])
    out = _out_dir(args.out)
    (out / "trace.csv").write_text(write_trace_csv(trace, optimizer=args.objective))
    (out / "model.json").write_text(write_model(trace.model))
    _progress(
        f"{args.objective} fit: {trace.termination} after {trace.cycles_run} cycles, "
        f"objective {trace.final_objective:.12g}"
    )
    return 0 if trace.termination == "converged" else 2


def _cmd_eval(args: argparse.Namespace) -> int:
    graph = parse_model(Path(args.model).read_text())
    if args.metric == "divergence":
        if args.target != "table1":
            raise ChainFitError("only --target table1 is bundled")
        _, q = table1_dataset()
        value = divergence_to_target(
            graph,
            q,
            graph.space.indices(HEART_CONTEXT_VARS),
            graph.space.indices(HEART_RESPONSE_VARS),
        )
    else:
        dataset = parse_dataset(Path(args.data).read_text(), graph.space)
        fn = log_likelihood if args.metric == "ll" else conditional_log_likelihood
        value = fn(graph, dataset)
    print(f"{value:.17g}")
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    dataset = generate_patterns(args.top, args.bottom, args.count, args.seed)
    net = SigmoidNet.zeros(args.top, args.bottom)
    Path(args.out).write_text(write_dataset(dataset, net.space))
    if args.model_out:
        Path(args.model_out).write_text(write_model(weights_to_graph(net)))
    _progress(f"wrote {args.count} patterns to {args.out}")
    return 0


def _cmd_experiment_sbn(args: argparse.Namespace) -> int:
    report = run_sbn_experiment(
        replicas=args.replicas,
        n=args.n,
        cycles=args.max_cycles,
        seed=args.seed,
        jobs=args.jobs,
    )
    out = _out_dir(args.out)
    for name, traces in report.traces.items():
        merged = []
        for seed, trace in zip(report.seeds, traces):
            text = write_trace_csv(trace, optimizer=name, seed=seed)
            merged.append(text if not merged else text.split("\n", 1)[1])
        (out / f"traces_{name}.csv").write_text("".join(merged))
    rows = report.aggregates["ipf_minus_cg"]
    lines = ["cycle,mean,std,stderr,n"]
    lines += [
        f"{r['cycle']},{r['mean']!r},{r['std']!r},{r['stderr']!r},{r['n']}"
        for r in rows
    ]
    (out / "aggregates.csv").write_text("\n".join(lines) + "\n")
    summary = {
        "config": report.config,
        "cycle3": report.aggregates["cycle3"],
        "final": report.aggregates["final"],
        "sd_at_50": report.aggregates["sd_at_50"],
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    _progress(
        f"{args.replicas} replicas done; cycle-3 mean difference "
        f"{report.aggregates['cycle3']['mean']:.6f}"
    )
    return 0


def _cmd_experiment_chd(args: argparse.Namespace) -> int:
    result = run_chd_experiment(
        cycles=args.max_cycles, tol=args.tol, epsilon=args.epsilon
    )
    out = _out_dir(args.out)
    lines = [",".join(("cycle", "objective", "wall_ms", "optimizer", "seed"))]
    for rec, d in zip(result.trace.records, result.divergences):
        lines.append(f"{rec.cycle},{d!r},{rec.wall_ms!r},cml-ipf,")
    (out / "divergence.csv").write_text("\n".join(lines) + "\n")
    (out / "trace.csv").write_text(write_trace_csv(result.trace, optimizer="cml-ipf"))
    (out / "model.json").write_text(write_model(result.final_graph))
    report = {
        "config": result.config,
        "initial_divergence": result.divergences[0],
        "final_divergence": result.divergences[-1],
        "log10_final_divergence": float(np.log10(result.divergences[-1])),
        "final_conditionals_true": result.final_conditionals[..., 0].tolist(),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    _progress(
        f"conditional fit: {result.config['termination']}, divergence "
        f"{result.divergences[0]:.6f} -> {result.divergences[-1]:.8f}"
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chainfit",
        description="Fit discrete chain factor graphs by generalized proportional fitting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model file to a dataset file")
    fit.add_argument("--model", required=True)
    fit.add_argument("--data", required=True)
    fit.add_argument("--objective", choices=("ml", "cml"), default="ml")
    fit.add_argument("--max-cycles", type=int, default=500)
    fit.add_argument("--tol", type=float, default=1e-7)
    fit.add_argument("--potential-floor", type=float, default=1e-12)
    fit.add_argument("--regime", choices=tuple(_REGIMES), default="auto")
    fit.add_argument("--out", required=True, help="output directory")
    fit.set_defaults(handler=_cmd_fit)

    ev = sub.add_parser("eval", help="print one objective value")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data")
    ev.add_argument("--metric", choices=("ll", "cll", "divergence"), required=True)
    ev.add_argument("--target", default="table1")
    ev.set_defaults(handler=_cmd_eval)

    gen = sub.add_parser("generate", help="write a random two-layer pattern dataset")
    gen.add_argument("--top", type=int, default=5)
    gen.add_argument("--bottom", type=int, default=5)
    gen.add_argument("--count", type=int, default=10)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--model-out")
    gen.set_defaults(handler=_cmd_generate)

    sbn = sub.add_parser("experiment-sbn", help="replicated optimizer comparison")
    sbn.add_argument("--replicas", type=int, default=100)
    sbn.add_argument("--n", type=int, default=5)
    sbn.add_argument("--max-cycles", type=int, default=200)
    sbn.add_argument("--seed", type=int, default=0)
    sbn.add_argument("--jobs", type=int, default=1)
    sbn.add_argument("--out", required=True)
    sbn.set_defaults(handler=_cmd_experiment_sbn)

    chd = sub.add_parser("experiment-chd", help="heart-disease conditional fit")
    chd.add_argument("--max-cycles", type=int, default=200)
    chd.add_argument("--tol", type=float, default=1e-7)
    chd.add_argument("--epsilon", type=float, default=1e-10)
    chd.add_argument("--out", required=True)
    chd.set_defaults(handler=_cmd_experiment_chd)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ChainFitError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
