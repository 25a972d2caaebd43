"""Command-line entry point: ``stgfn {train,eval,gates,synth,plot-data,gradcheck}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numeric
divergence during training, 3 checkpoint/data incompatibility.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from . import gradcheck
from .data import (
    ContractError,
    SchemaError,
    SyntheticSpec,
    deals_without_utilities,
    dump_corpus,
    generate_synthetic,
    load_corpus,
    stratified_split,
)
from .evaluation import LINGUISTIC_ABOVE, STRATEGIC_BELOW, MetricError, dumps, emit_report, gate_analysis
from .losses import fairness_curve
from .model import GateTrace
from .training import (
    ARMS,
    CheckpointError,
    DivergenceError,
    TrainConfig,
    evaluate,
    load_config,
    load_model_checkpoint,
    run_experiment,
)

OUTPUT_ROOT_ENV = "STGFN_OUTPUT_ROOT"
EXIT_INVALID, EXIT_DIVERGED, EXIT_INCOMPATIBLE = 1, 2, 3

log = logging.getLogger("stgfn")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _prepare_dir(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise CliError(f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_new(path: Path, text: str, force: bool) -> None:
    if path.exists() and not force:
        raise CliError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return repr(float(x))


# --------------------------------------------------------------------------
# configuration


_TUPLE_FIELDS = {"seeds": int, "loss_weights": float, "split": float}


def _config_flag(name: str) -> str:
    return "--lambda" if name == "lam" else "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (beat values from --config)")
    for f in dataclasses.fields(TrainConfig):
        kind = _TUPLE_FIELDS.get(f.name)
        if kind is not None:
            parse = lambda s, kind=kind: tuple(kind(v) for v in s.split(",") if v.strip())
            help_text = "comma-separated list"
        else:
            default = f.default
            parse = type(default) if not isinstance(default, bool) else (lambda s: s.lower() in ("1", "true", "yes"))
            help_text = None
        group.add_argument(_config_flag(f.name), dest=f"cfg_{f.name}", type=parse, default=None, help=help_text)


def resolve_config(args) -> TrainConfig:
    """Defaults < config file < command-line flags."""
    config = load_config(args.config) if args.config else TrainConfig()
    overrides = {
        f.name: getattr(args, f"cfg_{f.name}")
        for f in dataclasses.fields(TrainConfig)
        if getattr(args, f"cfg_{f.name}", None) is not None
    }
    return config.replace(**overrides) if overrides else config


# --------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    config = resolve_config(args)
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    unknown = [a for a in arms if a not in ARMS]
    if unknown or not arms:
        raise CliError(f"unknown arm(s) {unknown}; choose from {list(ARMS)}")
    instances = load_corpus(args.data, args.format, strict=args.strict)
    if not instances:
        raise CliError(f"{args.data}: no usable records")
    out = _prepare_dir(Path(args.out) if args.out else output_root() / "train", args.force)
    (out / "config.yaml").write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
    split = stratified_split(instances, config.split, config.split_seed)
    (out / "split.json").write_text(
        json.dumps(
            {"train": [x.session_id for x in split.train],
             "validation": [x.session_id for x in split.validation],
             "test": [x.session_id for x in split.test]},
            indent=1,
        )
    )
    result = run_experiment(split, config, arms=arms, seeds=config.seeds, out_dir=out)
    aggregate = result.aggregate()
    gates = {}
    for arm, runs in result.runs.items():
        traces = [t for r in runs for t in r.gate_traces]
        if traces:
            gates[arm] = gate_analysis(traces)
    if "nofair" in aggregate and "fair" in aggregate:
        doc, text = emit_report(aggregate, gates)
    else:
        doc = dict(aggregate)
        if gates:
            doc["gate"] = {k: g.to_dict() for k, g in gates.items()}
        text = dumps(aggregate)
    (out / "report.json").write_text(dumps(doc) + "\n")
    (out / "report.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_eval(args) -> int:
    missing = deals_without_utilities(args.data, args.format)
    if missing:
        raise CliError(f"{len(missing)} deal record(s) without utilities: {', '.join(missing)}")
    try:
        model, meta = load_model_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_INCOMPATIBLE) from exc
    if args.config:
        expected = resolve_config(args).hash()
        if expected != meta.get("config_hash"):
            raise CliError(
                f"config hash mismatch: checkpoint {meta.get('config_hash')} vs {args.config} {expected}",
                EXIT_INCOMPATIBLE,
            )
    instances = load_corpus(args.data, args.format, strict=True)
    if not instances:
        raise CliError(f"{args.data}: no records")
    try:
        report, _ = evaluate(model, instances)
    except (ValueError, ContractError) as exc:
        raise CliError(f"data incompatible with checkpoint: {exc}", EXIT_INCOMPATIBLE) from exc
    text = dumps(report.to_dict()) + "\n"
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".eval.json")
    _write_new(out, text, args.force)
    sys.stdout.write(text)
    return 0


def _read_traces(path) -> list[GateTrace]:
    try:
        raw = json.loads(Path(path).read_text())
        return [GateTrace.from_dict(d) for d in raw]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: not a gate-trace file ({exc})") from exc


def cmd_gates(args) -> int:
    traces = [t for p in args.traces for t in _read_traces(p)]
    analysis = gate_analysis(traces)
    text = dumps(analysis.to_dict()) + "\n"
    if args.out:
        _write_new(Path(args.out), text, args.force)
    sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(
        n=args.n,
        disparity=args.disparity,
        text_strength=args.text_strength,
        graph_strength=args.graph_strength,
        seed=args.seed,
        deal_rate=args.deal_rate,
    )
    corpus = generate_synthetic(spec)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_corpus(corpus.instances, out)
    truth = out.with_suffix(".truth.json")
    truth.write_text(json.dumps({"spec": dataclasses.asdict(spec), "truth": corpus.truth}, indent=1))
    print(f"wrote {len(corpus.instances)} dialogues to {out} (ground truth: {truth})")
    return 0


def plot_rows(kind: str, args) -> tuple[list[str], list]:
    if kind == "fairness-curve":
        if args.step <= 0 or args.hi < args.lo:
            raise CliError("fairness-curve needs --step > 0 and --hi >= --lo")
        n = int(np.floor((args.hi - args.lo) / args.step + 1e-9)) + 1
        grid = args.lo + args.step * np.arange(n)
        curve = fairness_curve(args.true_gap, grid, args.mean_gap)
        if curve.mse_to_mean is None:
            return ["predicted_gap", "fairness_loss"], [[_fmt(x), _fmt(f)] for x, f in zip(grid, curve.fairness)]
        return (
            ["predicted_gap", "fairness_loss", "mse_to_mean_gap"],
            [[_fmt(x), _fmt(f), _fmt(m)] for x, f, m in zip(grid, curve.fairness, curve.mse_to_mean)],
        )
    if not args.traces:
        raise CliError(f"{kind} needs --traces")
    traces = [t for p in args.traces for t in _read_traces(p)]
    analysis = gate_analysis(traces)
    heat = analysis.heatmap
    if kind == "gate-evolution":
        rows = []
        for k in range(heat.shape[1]):
            col = heat[:, k][~np.isnan(heat[:, k])]
            if len(col):
                rows.append([k + 1, _fmt(col.mean()), _fmt(col.std()), len(col)])
        return ["turn", "mean_z", "std_z", "n"], rows
    if kind == "gate-heatmap":
        header = ["session_id"] + [f"turn_{k + 1}" for k in range(heat.shape[1])]
        return header, [[t.session_id] + [_fmt(v) for v in row] for t, row in zip(traces, heat)]
    if kind == "dominance-hist":
        z = np.concatenate([np.asarray(t.values) for t in traces])
        counts = {
            "strategic": int(np.sum(z < STRATEGIC_BELOW)),
            "mixed": int(np.sum((z >= STRATEGIC_BELOW) & (z <= LINGUISTIC_ABOVE))),
            "linguistic": int(np.sum(z > LINGUISTIC_ABOVE)),
        }
        return ["bucket", "count", "fraction"], [[k, c, _fmt(c / len(z))] for k, c in counts.items()]
    raise CliError(f"unknown plot kind {kind!r}")


def cmd_plot_data(args) -> int:
    header, rows = plot_rows(args.kind, args)
    text = _csv_text(header, rows)
    if args.out:
        _write_new(Path(args.out), text, args.force)
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    seeds = range(args.seeds)
    results = gradcheck.check_ops(seeds)
    if not args.ops_only:
        results += [gradcheck.check_model(seeds, gate_mode=m) for m in ("literal", "convex")]
    for r in results:
        print(r.row())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return 1 if failed else 0


# --------------------------------------------------------------------------
# parser


PLOT_KINDS = ("fairness-curve", "gate-evolution", "gate-heatmap", "dominance-hist")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which is reserved for divergence here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stgfn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(p):
        p.add_argument("--data", required=True, help="corpus JSON (array of dialogue records)")
        p.add_argument("--format", choices=("casino", "dnd"), default="casino")

    p = sub.add_parser("train", help="train arms x seeds and write a comparison report")
    data_args(p)
    p.add_argument("--config", help="flat YAML/JSON file with TrainConfig keys")
    p.add_argument("--arms", default="baseline,nofair,fair")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/train)")
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    p.add_argument("--strict", action="store_true", help="fail on the first malformed record")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("checkpoint")
    data_args(p)
    p.add_argument("--config", help="assert the checkpoint was trained with this config")
    p.add_argument("--out", help="report path (default: <checkpoint>.eval.json)")
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gates", help="analyse gate traces")
    p.add_argument("traces", nargs="+", help="gates.json files written by train")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gates)

    p = sub.add_parser("synth", help="generate a synthetic corpus with known ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--disparity", type=float, default=6.0)
    p.add_argument("--text-strength", type=float, default=1.0)
    p.add_argument("--graph-strength", type=float, default=0.0)
    p.add_argument("--deal-rate", type=float, default=0.65)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plot-data", help="emit CSV tables for plotting")
    p.add_argument("kind", choices=PLOT_KINDS)
    p.add_argument("--traces", nargs="*", default=[])
    p.add_argument("--true-gap", type=float, default=6.0)
    p.add_argument("--mean-gap", type=float, default=None)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=12.0)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the model")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--ops-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SchemaError, ContractError, MetricError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
