"""Command-line entry point.

Exit codes: 0 clean, 1 usage or input error, 2 bottleneck certified against
an unbounded surjective target.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import figures
from .analysis import INFINITE, DomainDescriptor, Box, analyze, render_report
from .graph import VARIANTS, GraphError, build_reference_model, dumps, load, save
from .mitigation import STRATEGIES, MitigationError, mitigate
from .training import (TrainConfig, TrainingDiverged, generate_line, generate_unbounded,
                       run_experiment)

SEED_ENV = "ACTIVATION_BOTTLENECK_SEED"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BOTTLENECK = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise SystemExit(f"error: {SEED_ENV}={env!r} is not an integer") from None


def _target(graph, name: str):
    if name == "bounded":
        return DomainDescriptor(graph.output_dim, True, Box.uniform(-1.0, 1.0, graph.output_dim)), False
    return DomainDescriptor.unbounded(graph.output_dim), True


def cmd_analyze(args) -> int:
    try:
        graph = load(args.model)
    except (OSError, GraphError) as exc:
        print(f"error: {args.model}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    codomain, surjective = _target(graph, args.target)
    report = analyze(graph, codomain, surjective)
    sys.stdout.write(render_report(report, graph, args.format))
    if args.out:
        Path(args.out).write_text(render_report(report, graph, "machine"))
    return EXIT_BOTTLENECK if report.epsilon_star == INFINITE else EXIT_OK


def _variants(listing: str | None):
    if not listing:
        return list(VARIANTS)
    names = [v.strip() for v in listing.split(",") if v.strip()]
    unknown = [v for v in names if v not in VARIANTS]
    if unknown:
        raise SystemExit(f"error: unknown variant(s) {', '.join(unknown)}")
    return names


def cmd_reproduce(args) -> int:
    out = Path(args.out)
    try:
        config = TrainConfig(epochs=args.epochs, learning_rate=args.lr, seed=_seed(args))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    names = _variants(args.variants)
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_line()
    trained = {}
    for name in names:
        try:
            model = run_experiment(name, dataset, config)
        except TrainingDiverged as exc:
            print(f"error: {name}: {exc}", file=sys.stderr)
            return EXIT_ERROR
        trained[name] = model
        (out / f"predictions_{name}.csv").write_text(
            figures.csv_text(("model", "t", "x_true", "x_pred"), model.prediction_rows()))
        (out / f"loss_{name}.csv").write_text(
            figures.csv_text(("model", "epoch", "mse"),
                             [(name, e, float(l)) for e, l in enumerate(model.losses, start=1)]))
        report = analyze(model.graph)
        (out / f"report_{name}.txt").write_text(render_report(report, model.graph, args.format))
        save(model.graph, out / f"model_{name}.json")
        print(f"{name}: final mse {model.losses[-1]:.6g}, bottleneck layers "
              f"{list(report.bottleneck_layers) or 'none'}, epsilon_star {report.epsilon_star}")
    for panel, members in figures.PANELS.items():
        models = [trained[m] for m in members if m in trained]
        if not models:
            continue
        rows = figures.panel_rows(models)
        (out / f"figure_{panel}.csv").write_text(figures.csv_text(("model", "t", "x_true", "x_pred"), rows))
        (out / f"figure_{panel}.svg").write_text(
            figures.render_svg(figures.TITLES[panel], rows, train_range=dataset.train_range))
    return EXIT_OK


def cmd_mitigate(args) -> int:
    try:
        graph = load(args.model)
        result = mitigate(graph, args.strategy)
    except (OSError, GraphError, MitigationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.out:
        save(result.graph, args.out)
    print(result.transition)
    print(result.epsilon_transition)
    if args.format == "machine":
        sys.stdout.write(render_report(result.after, result.graph, "machine"))
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.variant:
        text = dumps(build_reference_model(args.variant, _seed(args)))
    else:
        try:
            ds = generate_line() if args.kind == "line" else generate_unbounded(args.kind, args.n, _seed(args))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        # split labels refer to the point as a forecasting target
        train_t = set(ds.train_pairs()[2].tolist())
        rows = [(ti, float(xi), "train" if ti in train_t else ("test" if ti >= ds.lookback else "context"))
                for ti, xi in ds.points]
        text = figures.csv_text(("t", "x", "split"), rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="activation-bottleneck", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="certify bottlenecks and output bounds of a model file")
    a.add_argument("--model", required=True)
    a.add_argument("--target", choices=("bounded", "unbounded-surjective"), default="unbounded-surjective")
    a.add_argument("--format", choices=("text", "machine"), default="text")
    a.add_argument("--out", help="also write the machine-readable report here")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("reproduce", help="train the six straight-line models")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--epochs", type=int, default=100)
    r.add_argument("--lr", type=float, default=0.01)
    r.add_argument("--variants", help="comma-separated subset of " + ", ".join(VARIANTS))
    r.add_argument("--format", choices=("text", "machine"), default="text")
    r.set_defaults(func=cmd_reproduce)

    m = sub.add_parser("mitigate", help="rewrite a model to remove its bottleneck")
    m.add_argument("--model", required=True)
    m.add_argument("--strategy", choices=STRATEGIES, required=True)
    m.add_argument("--out")
    m.add_argument("--format", choices=("text", "machine"), default="text")
    m.set_defaults(func=cmd_mitigate)

    g = sub.add_parser("generate", help="write a dataset (csv) or a reference model file")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--kind", choices=("line", "trend", "random_walk"))
    src.add_argument("--variant", choices=VARIANTS)
    g.add_argument("--n", type=int, default=41)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
