"""``calm`` command line: train, distill, eval, explain, cost, synth.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .backbone import COST_MODES, BackboneError, attention_cost
from .checkpoint import Checkpoint, CheckpointError
from .core import write_breakdowns, write_pair_breakdowns
from .data import DataError, component_lengths, load_corpus, read_schema, write_corpus
from .distill import TeacherCache, cache_teacher
from .interactions import textpair_cost_estimate
from .interpret import (ExplainError, export, feature_value_curve, influence_scores, pair_heatmap,
                        patient_attribution)
from .training import DEFAULT_GRID, NumericalError, TrainConfig, evaluate, fit, grid_run

log = logging.getLogger("calm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _schema(args):
    return read_schema(args.schema) if args.schema else None


def _resolve_config(args) -> TrainConfig:
    raw = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = TrainConfig.from_dict(raw)
    overrides = {"variant": args.variant}
    for flag, key in (("seed", "seed"), ("min_count", "min_count"),
                      ("max_component_length", "max_component_length")):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    if getattr(args, "alpha", None) is not None:
        overrides["kd_alpha"] = args.alpha
    if getattr(args, "temperature", None) is not None:
        overrides["temperature"] = args.temperature
    return replace(cfg, **overrides)


def _run_training(args, cfg: TrainConfig, teacher: TeacherCache | None = None) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schema = _schema(args)
    train_c = load_corpus(args.train, schema, "train")
    val_c = load_corpus(args.val, train_c.schema, "validation")
    test_c = load_corpus(args.test, train_c.schema, "test") if args.test else None

    inputs = {"train": args.train, "val": args.val, "test": args.test,
              "teacher": getattr(args, "teacher", None)}
    manifest = {
        "code_version": __version__,
        "command": args.command,
        "config": cfg.to_dict(),
        "schema": list(train_c.schema),
        "seed": cfg.seed,
        "inputs": {k: {"path": str(v), "sha256": _sha256(Path(v))} for k, v in inputs.items() if v},
        "outputs": {n: str(out / n) for n in ("checkpoint.npz", "vocab.tsv", "history.json",
                                              "metrics.json", "validation_metrics.json", "config.json")},
        "grid": bool(getattr(args, "grid", False)),
    }
    _dump(manifest, out / "manifest.json")
    _dump(cfg.to_dict(), out / "config.json")

    if getattr(args, "grid", False):
        result = grid_run(DEFAULT_GRID, cfg, train_c, val_c, teacher)
        ckpt, hist = result.best, result.best_history
        _dump(result.leaderboard, out / "leaderboard.json")
        log.info("grid winner: %s", result.best_name)
    else:
        ckpt, hist = fit(cfg, train_c, val_c, teacher)
    ckpt.save(out / "checkpoint.npz")
    ckpt.vocab.save(out / "vocab.tsv")
    _dump(hist.to_dict(), out / "history.json")
    val_metrics = hist.val_metrics[hist.best_epoch]
    _dump(val_metrics, out / "validation_metrics.json")
    final = evaluate(ckpt, test_c) if test_c is not None else val_metrics
    _dump(final, out / "metrics.json")
    print(json.dumps(final, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    teacher = None
    if cfg.variant == "distill":
        if not args.teacher:
            raise UsageError("--variant distill needs --teacher")
        teacher = _teacher_cache(args, cfg)
    return _run_training(args, cfg, teacher)


def _teacher_cache(args, cfg: TrainConfig) -> TeacherCache:
    teacher = Checkpoint.load(args.teacher)
    if teacher.variant != "baseline":
        log.warning("teacher checkpoint is a %s model, not the concatenated baseline", teacher.variant)
    schema = _schema(args)
    docs = list(load_corpus(args.train, schema or teacher.schema, "train"))
    docs += list(load_corpus(args.val, schema or teacher.schema, "validation"))
    cache = cache_teacher(teacher.model, teacher.encode(docs))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache.save(out / "teacher_cache.csv")
    return cache


def cmd_distill(args) -> int:
    args.variant = "distill"
    cfg = _resolve_config(args)
    return _run_training(args, cfg, _teacher_cache(args, cfg))


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    corpus = load_corpus(args.corpus, _schema(args) or ckpt.schema, "test")
    report = evaluate(ckpt, corpus, args.threshold)
    print(json.dumps(report, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump(report, out / "metrics.json")
        if ckpt.variant != "baseline":
            bds = [ckpt.model.component_forward(d) for d in ckpt.encode(corpus)]
            write_breakdowns(bds, out / "breakdown.csv")
            if ckpt.variant == "calm2":
                write_pair_breakdowns(bds, out / "pair_breakdown.csv")
    return EXIT_OK


def cmd_explain(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    corpus = load_corpus(args.corpus, _schema(args) or ckpt.schema, "test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    what = args.what
    if what == "influence":
        art, stem = influence_scores(ckpt, corpus), "influence"
    elif what.startswith("curve:"):
        name = what.split(":", 1)[1]
        art, stem = feature_value_curve(ckpt, corpus, name, args.k or 20), f"curve_{name}"
    elif what.startswith("patient:"):
        doc_id = what.split(":", 1)[1]
        try:
            doc = corpus.by_id(doc_id)
        except KeyError:
            raise DataError(f"document {doc_id!r} not in corpus") from None
        art, stem = patient_attribution(ckpt, doc, args.k or 5), f"patient_{doc_id}"
    elif what.startswith("pair:"):
        try:
            i, j = what.split(":", 1)[1].split(",")
        except ValueError:
            raise UsageError("--what pair:<i>,<j>") from None
        keys = [int(x) if x.isdigit() else x for x in (i, j)]
        art, stem = pair_heatmap(ckpt, corpus, keys[0], keys[1], args.k or 10), f"pair_{i}_{j}"
    else:
        raise UsageError(f"unknown --what {what!r}")
    formats = ("csv", "svg") if args.format == "both" else (args.format,)
    for fmt in formats:
        print(export(art, fmt, out / f"{stem}.{fmt}"))
    return EXIT_OK


def _read_lengths(path: Path) -> list[tuple[str, list[int]]]:
    rows = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append((f"row{n}", [int(x) for x in line.replace(",", " ").split()]))
        except ValueError:
            raise DataError(f"{path}:{n}: expected integer lengths") from None
    return rows


COST_HEADER = ["doc_id", "M", "L_tot", "L_max", *COST_MODES, "textpair_total", "cheaper_batching"]


def cost_table(rows: list[tuple[str, list[int]]]) -> list[list]:
    table, totals = [], dict.fromkeys([*COST_MODES, "textpair_total"], 0)
    for doc_id, lengths in rows:
        costs = {m: attention_cost(lengths, m) for m in COST_MODES}
        costs["textpair_total"] = textpair_cost_estimate(lengths)["total"]
        for k in totals:
            totals[k] += costs[k]
        pad, dense = costs["padded"], costs["packed_dense"]
        cheaper = "tie" if pad == dense else ("padded" if pad < dense else "packed_dense")
        table.append([doc_id, len(lengths), sum(lengths), max(lengths),
                      *(costs[m] for m in COST_MODES), costs["textpair_total"], cheaper])
    pad, dense = totals["padded"], totals["packed_dense"]
    cheaper = "tie" if pad == dense else ("padded" if pad < dense else "packed_dense")
    table.append(["__total__", "", "", "", *(totals[m] for m in COST_MODES), totals["textpair_total"],
                  cheaper])
    return table


def cmd_cost(args) -> int:
    if bool(args.corpus) == bool(args.lengths):
        raise UsageError("give exactly one of --corpus or --lengths")
    if args.corpus:
        corpus = load_corpus(args.corpus, _schema(args), "test")
        rows = [(d.id, component_lengths(d, args.max_component_length)) for d in corpus]
    else:
        rows = _read_lengths(Path(args.lengths))
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t" if args.delimiter == "tab" else ",", lineterminator="\n")
    w.writerow(COST_HEADER)
    w.writerows(cost_table(rows))
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import additive_corpus, xor_corpus

    if args.kind == "additive":
        sp = additive_corpus(args.n_docs, args.components or 6, seed=args.seed or 0)
    else:
        sp = xor_corpus(args.n_docs, args.components or 4, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "validation", "test"):
        write_corpus(getattr(sp, split), out / f"{split}.jsonl")
    (out / "schema.txt").write_text("\n".join(sp.train.schema) + "\n", encoding="utf-8")
    print(out)
    return EXIT_OK


def _corpus_flags(p, with_test=True):
    p.add_argument("--train", required=True, help="training corpus (JSONL)")
    p.add_argument("--val", required=True, help="validation corpus (JSONL)")
    if with_test:
        p.add_argument("--test", help="test corpus (JSONL); metrics.json reports it when given")
    p.add_argument("--schema", help="comma-separated component names, or a file with one per line")
    p.add_argument("--min-count", type=int, dest="min_count")
    p.add_argument("--max-component-length", type=int, dest="max_component_length")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--grid", action="store_true", help="run the eight-entry lr/rank grid and keep the best")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="calm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train a baseline, calm, calm2 or distill model")
    p.add_argument("--variant", required=True, choices=["baseline", "calm", "calm2", "distill"])
    _corpus_flags(p)
    p.add_argument("--teacher", help="teacher checkpoint (distill only)")
    p.add_argument("--alpha", type=float, help="distillation blend (distill only)")
    p.add_argument("--temperature", type=float, help="distillation temperature (distill only)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", parents=[common], help="train an additive student against a frozen teacher")
    _corpus_flags(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--alpha", type=float, help="weight of the distillation term")
    p.add_argument("--temperature", type=float)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", parents=[common], help="score a corpus with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema")
    p.add_argument("--threshold", type=float, help="F1 threshold (default: the checkpoint's)")
    p.add_argument("--out", help="directory for metrics.json and breakdown CSVs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", parents=[common], help="influence, risk curves, patient attributions, pair heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema")
    p.add_argument("--what", required=True,
                   help="influence | curve:<component> | patient:<doc_id> | pair:<i>,<j>")
    p.add_argument("--format", choices=["csv", "svg", "both"], default="both")
    p.add_argument("--k", type=int, help="values per curve, attributions per side, or values per pair axis")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("cost", parents=[common], help="attention cost of independent, padded and packed encodes")
    p.add_argument("--corpus")
    p.add_argument("--lengths", help="file with one comma- or space-separated length vector per line")
    p.add_argument("--schema")
    p.add_argument("--max-component-length", type=int, default=16, dest="max_component_length")
    p.add_argument("--delimiter", choices=["tab", "comma"], default="tab")
    p.add_argument("--out", help="also write the table to this file")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus with a known generating rule")
    p.add_argument("kind", choices=["additive", "xor"])
    p.add_argument("--n-docs", type=int, default=2000, dest="n_docs")
    p.add_argument("--components", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"calm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"calm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, ExplainError, BackboneError, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"calm: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
