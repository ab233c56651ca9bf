"""Command-line entry point: ``pairscore <command> [options]``.

Every option can also come from a key-value config file given with
``--config``; command-line flags win over the file. Keys use the long flag
name with dashes or underscores (``batch_size = 64``). An INI section named
after the command overrides the top-level keys for that command.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .dataset import (
    load_context_set,
    load_drug_set,
    load_triples,
    sample_negatives,
    train_test_split,
)
from .errors import PairScoreError
from .metrics import metrics_report
from .models import MODEL_NAMES, build_model, load_model
from .neuro import OptimizerConfig
from .pipeline import (
    batch_size_sweep,
    calibrate_inference,
    evaluate_protocol,
    generator_for,
    predict,
    project_inference,
    train,
    write_benchmark_csv,
    write_metrics_csv,
    write_projection_csv,
)
from .synthetic import make_workload

log = logging.getLogger("pairscore")

_BOOL_STATES = configparser.ConfigParser.BOOLEAN_STATES


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from None


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value


# --------------------------------------------------------------------------
# parser


def _data_args(p: argparse.ArgumentParser, contexts: bool = True, triples: bool = True) -> None:
    p.add_argument("--drugs", type=Path, help="drug CSV (drug_id,smiles)")
    if contexts:
        p.add_argument("--contexts", type=Path, help="context CSV (context_id,f_1,...,f_k)")
    if triples:
        p.add_argument("--triples", type=Path, help="labeled triple CSV (drug_1,drug_2,context,label)")


def _optimizer_args(p: argparse.ArgumentParser) -> None:
    d = OptimizerConfig()
    g = p.add_argument_group("optimizer")
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--learning-rate", type=float, default=d.learning_rate)
    g.add_argument("--weight-decay", type=float, default=d.weight_decay)
    g.add_argument("--beta1", type=float, default=d.beta1)
    g.add_argument("--beta2", type=float, default=d.beta2)
    g.add_argument("--eps", type=float, default=d.eps)
    g.add_argument("--dropout", type=float, default=d.dropout_rate)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairscore", description="Drug pair scoring: featurize, train, evaluate, benchmark.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="key-value config file; flags override it")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("featurize", help="parse SMILES and report fingerprint popcounts")
    _data_args(p, contexts=False, triples=False)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--n-bits", type=int, default=256)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("split", help="seeded train/test split of a triple file")
    _data_args(p, contexts=False)
    p.add_argument("--train-size", type=_fraction, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-train", type=Path)
    p.add_argument("--out-test", type=Path)

    p = sub.add_parser("negatives", help="append uniformly sampled negatives to a positive-only triple file")
    _data_args(p, contexts=False)
    p.set_defaults(drugs=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _data_args(p)
    p.add_argument("--model", choices=MODEL_NAMES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-size", type=_fraction, help="train on the train side of a seeded split only")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--loss-trace", type=Path, help="CSV of per-epoch losses")
    _optimizer_args(p)

    p = sub.add_parser("evaluate", help="repeated-split protocol, or score a checkpoint")
    _data_args(p)
    p.add_argument("--model", choices=MODEL_NAMES)
    p.add_argument("--checkpoint", type=Path, help="score this trained model instead of running the protocol")
    p.add_argument("--seed", type=int, default=0, help="split seed (protocol: seed of the first repeat)")
    p.add_argument("--train-size", type=_fraction, default=0.8)
    p.add_argument("--n-repeats", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--metrics", type=Path, help="metrics CSV (metric,mean,stderr)")
    p.add_argument("--predictions", type=Path, help="per-triple predictions CSV")
    p.add_argument("--all-triples", action="store_true", help="with --checkpoint, score every triple instead of the test side")
    _optimizer_args(p)

    p = sub.add_parser("predict", help="score triples with a trained checkpoint")
    _data_args(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--batch-size", type=int, default=OptimizerConfig().batch_size)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("benchmark", help="epoch runtime sweep and all-pairs inference projection")
    p.add_argument("--models", type=lambda s: [m.strip() for m in s.split(",") if m.strip()],
                   default=["deepsynergy", "epgcnds"])
    p.add_argument("--batch-sizes", type=_int_list, default=[2**k for k in range(8, 13)])
    p.add_argument("--n-pairs", type=int, default=2**17)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-drugs", type=_int_list, default=[2**k for k in range(9, 13)],
                   help="drug counts for the inference projection")
    p.add_argument("--out", type=Path, help="epoch timing CSV (model,batch_size,n_pairs,seconds)")
    p.add_argument("--projection", type=Path, help="inference projection CSV (model,n_drugs,seconds)")
    return parser


_REQUIRED = {
    "featurize": ("drugs", "out"),
    "split": ("triples", "out_train", "out_test"),
    "negatives": ("triples", "out"),
    "train": ("drugs", "triples", "model", "checkpoint"),
    "evaluate": ("drugs", "triples", "metrics"),
    "predict": ("drugs", "triples", "checkpoint", "out"),
    "benchmark": ("out",),
}


# --------------------------------------------------------------------------
# config layering


def _normalize(values: dict[str, str]) -> dict[str, str]:
    return {k.replace("-", "_"): v for k, v in values.items()}


def read_config(path: Path, command: str) -> tuple[dict[str, str], dict[str, str]]:
    """``(top-level keys, [command] section keys)`` of a config file."""
    text = Path(path).read_text(encoding="utf-8")
    cp = configparser.ConfigParser(interpolation=None, default_section="__top__")
    cp.read_string("[__top__]\n" + text)
    top = dict(cp.defaults())
    section = {}
    if cp.has_section(command):
        # options() also lists inherited top-level keys; keep only overrides
        section = {k: cp.get(command, k) for k in cp.options(command) if top.get(k) != cp.get(command, k)}
    return _normalize(top), _normalize(section)


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    if not args.config.is_file():
        parser.error(f"argument --config: no such file {str(args.config)!r}")
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help",)}
    top, section = read_config(args.config, args.command)
    for key in section:
        if key not in actions:
            parser.error(f"config {args.config}: unknown option {key!r} in [{args.command}]")
    # top-level keys are shared by every command; each takes what it knows
    values = {k: v for k, v in top.items() if k in actions}
    values.update(section)
    defaults = {}
    for key, raw in values.items():
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            if raw.lower() not in _BOOL_STATES:
                parser.error(f"config {args.config}: {key} expects a boolean, got {raw!r}")
            defaults[key] = _BOOL_STATES[raw.lower()]
        else:
            # argparse runs ``type`` over string defaults, so file values are
            # validated exactly like flags
            defaults[key] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# --------------------------------------------------------------------------
# commands


def _optimizer(args) -> OptimizerConfig:
    return OptimizerConfig(
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        beta1=args.beta1,
        beta2=args.beta2,
        eps=args.eps,
        dropout_rate=args.dropout,
        batch_size=args.batch_size,
        epochs=args.epochs,
    )


def _contexts(args):
    return load_context_set(args.contexts) if getattr(args, "contexts", None) else None


def _label_text(y: float) -> str:
    return str(int(y)) if float(y).is_integer() else repr(float(y))


def cmd_featurize(args) -> int:
    drugs = load_drug_set(args.drugs, radius=args.radius, n_bits=args.n_bits)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["drug_id", "status", "n_atoms", "n_bonds", "popcount", "error"])
        for drug_id, rec in drugs.items():
            writer.writerow([drug_id, "ok", rec.graph.n_atoms, rec.graph.n_bonds, rec.fingerprint.popcount, ""])
        for drug_id, message in drugs.dropped.items():
            writer.writerow([drug_id, "dropped", "", "", "", message])
    print(f"featurized {len(drugs)} drugs, dropped {drugs.drop_count}", file=sys.stderr)
    return 0


def cmd_split(args) -> int:
    triples = load_triples(args.triples)
    train_set, test_set = train_test_split(triples, train_size=args.train_size, seed=args.seed)
    train_set.to_csv(args.out_train)
    test_set.to_csv(args.out_test)
    print(f"train {len(train_set)}, test {len(test_set)}", file=sys.stderr)
    return 0


def cmd_negatives(args) -> int:
    pool = load_drug_set(args.drugs) if args.drugs else None
    full = sample_negatives(load_triples(args.triples), seed=args.seed, drug_ids=pool)
    full.to_csv(args.out)
    print(f"wrote {len(full)} triples ({len(full) // 2} negatives)", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    drugs, contexts, triples = load_drug_set(args.drugs), _contexts(args), load_triples(args.triples)
    if args.train_size is not None:
        triples, _ = train_test_split(triples, train_size=args.train_size, seed=args.seed)
    cfg = _optimizer(args)
    width = contexts.width if contexts is not None else 1
    model = build_model(args.model, width, dropout=cfg.dropout_rate, seed=args.seed, drug_width=drugs.n_bits)
    gen = generator_for(model, triples, drugs, contexts, cfg.batch_size, shuffle_seed=args.seed)
    _, trace = train(model, gen, cfg, seed=args.seed)
    model.save(args.checkpoint)
    if args.loss_trace:
        with open(args.loss_trace, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "n_batches", "cost", "mean_loss"])
            for rec in trace:
                writer.writerow([rec.epoch, len(rec.batch_means), repr(rec.cost), repr(rec.mean)])
    final = f", final mean loss {trace[-1].mean:.5f}" if trace else ""
    print(f"trained {model.name} on {len(triples)} triples for {cfg.epochs} epochs{final}", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    drugs, contexts, triples = load_drug_set(args.drugs), _contexts(args), load_triples(args.triples)
    if args.checkpoint is None:
        result = evaluate_protocol(
            drugs, contexts, triples, args.model,
            n_repeats=args.n_repeats, train_size=args.train_size, base_seed=args.seed,
            cfg=_optimizer(args), jobs=args.jobs, drug_width=drugs.n_bits,
        )
        write_metrics_csv(result, args.metrics)
        if args.predictions:
            with open(args.predictions, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["drug_1", "drug_2", "context", "label", "prediction", "seed"])
                for seed, pred in zip(result.seeds, result.predictions):
                    for (d1, d2, c, y), p in zip(pred.identifiers, pred.values):
                        writer.writerow([d1, d2, c, _label_text(y), repr(float(p)), seed])
        for metric, (mean, se) in result.summary().items():
            print(f"{metric} {mean:.4f} +/- {se:.4f}", file=sys.stderr)
        return 0

    model = load_model(args.checkpoint)
    scored = triples if args.all_triples else train_test_split(triples, train_size=args.train_size, seed=args.seed)[1]
    gen = generator_for(model, scored, drugs, contexts, args.batch_size, shuffle_seed=None)
    pred = predict(model, gen)
    report = metrics_report(pred.values, scored.label[pred.index])
    write_metrics_csv({m: (v, float("nan")) for m, v in report.as_dict().items() if m in ("auroc", "aupr", "f1")},
                      args.metrics)
    if args.predictions:
        pred.identifiers.to_csv(args.predictions, predictions=pred.values)
    print(f"auroc {report.auroc:.4f}  aupr {report.aupr:.4f}  f1 {report.f1:.4f}  on {len(scored)} triples",
          file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.checkpoint)
    drugs, contexts, triples = load_drug_set(args.drugs), _contexts(args), load_triples(args.triples)
    gen = generator_for(model, triples, drugs, contexts, args.batch_size, shuffle_seed=None)
    pred = predict(model, gen)
    pred.identifiers.to_csv(args.out, predictions=pred.values)
    print(f"scored {len(pred)} triples", file=sys.stderr)
    return 0


def cmd_benchmark(args) -> int:
    workload = make_workload(args.n_pairs, seed=args.seed)
    records, projections = [], []
    for name in args.models:
        records.extend(batch_size_sweep(name, args.batch_sizes, args.n_pairs, args.repeats, workload=workload, seed=args.seed))
        if args.projection:
            bs = max(args.batch_sizes)
            cal = calibrate_inference(name, batch_size=bs, workload=workload, seed=args.seed)
            projections.extend((cal.model, n, project_inference(name, n, batch_size=bs, calibration=cal)) for n in args.n_drugs)
    write_benchmark_csv(records, args.out)
    if args.projection:
        write_projection_csv(projections, args.projection)
    for r in records:
        print(f"{r.model:12s} batch {r.batch_size:5d}  {r.seconds:.4f} s/epoch", file=sys.stderr)
    return 0


COMMANDS = {
    "featurize": cmd_featurize,
    "split": cmd_split,
    "negatives": cmd_negatives,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
    missing = [k for k in _REQUIRED[args.command] if getattr(args, k, None) is None]
    if missing:
        _subparser(parser, args.command).error(
            "the following arguments are required: " + ", ".join("--" + k.replace("_", "-") for k in missing)
        )
    if args.command == "evaluate" and args.model is None and args.checkpoint is None:
        _subparser(parser, "evaluate").error("one of --model or --checkpoint is required")
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except PairScoreError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
