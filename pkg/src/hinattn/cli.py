"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .evaluation import attention_report, evaluate_model, export_embeddings
from .graph import GraphFormatError, load_graph, select_target
from .metapath import BudgetExceeded, commuting_matrix, parse_metapath
from .synth import PathPlant, SynthConfig, generate_planted_hin, write_dataset
from .train import TrainConfig, read_config_file, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _text(lines) -> str:
    return "".join(line + "\n" for line in lines)


def _write_text(path, text: str) -> None:
    checkpoint.atomic_write(path, text.encode("utf-8"))


def _plant(spec: str) -> PathPlant:
    try:
        content, intra, inter = spec.split(":")
        return PathPlant(int(content), float(intra), float(inter))
    except ValueError:
        raise UsageError(f"--path expects CONTENT:INTRA:INTER, got {spec!r}") from None


def cmd_synth(args) -> int:
    plants = [_plant(p) for p in args.path] if args.path else None
    cfg = SynthConfig(n_target=args.n_target, n_classes=args.n_classes, seed=args.seed,
                      **({"paths": plants} if plants else {}))
    graph, _, specs = generate_planted_hin(cfg)
    files = write_dataset(graph, specs, args.out)
    for name, f in files.items():
        print(f"{name}: {f}")
    return EXIT_OK


def _graph(args):
    return load_graph(args.nodes, args.edges, args.labels, args.target_type)


def cmd_train(args) -> int:
    values = read_config_file(args.config) if args.config else {}
    cfg = TrainConfig.from_mapping(values)
    overrides = {k: v for k, v in (("seed", args.seed), ("fusion", args.fusion),
                                   ("max_epochs", args.max_epochs), ("dim", args.dim),
                                   ("pref_dim", args.pref_dim)) if v is not None}
    cfg = TrainConfig.from_mapping(overrides, base=cfg)
    graph = _graph(args)
    target = args.target_type or graph.label_type
    model = train(graph, args.metapath, cfg, target_type=target, cache_dir=args.cache_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    checkpoint.save_model(model, ckpt)
    rows = ["epoch\ttrain_loss\tval_micro_f1\tval_loss"]
    for e in model.log:
        rows.append("\t".join("nan" if e[k] is None else f"{e[k]:.17g}" if isinstance(e[k], float)
                              else str(e[k])
                              for k in ("epoch", "train_loss", "val_micro_f1", "val_loss")))
    _write_text(out / "train_log.tsv", _text(rows))
    print(f"checkpoint: {ckpt}")
    print(f"best_epoch: {model.best_epoch}")
    return EXIT_OK


def _load(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    return checkpoint.load_model(args.checkpoint)


def cmd_eval(args) -> int:
    model = _load(args)
    report = evaluate_model(model, model.split[args.split], threshold=args.threshold)
    lines = [f"split: {args.split}"] + report.as_lines(model.label_names)
    text = _text(lines)
    if args.out:
        _write_text(args.out, text)
        table = ["class\tprecision\trecall\tf1"] + [
            f"{n}\t{p:.17g}\t{r:.17g}\t{f:.17g}" for n, p, r, f in
            zip(model.label_names, report.precision, report.recall, report.f1)]
        table += [f"micro\t\t\t{report.micro_f1:.17g}", f"macro\t\t\t{report.macro_f1:.17g}"]
        _write_text(str(args.out) + ".tsv", _text(table))
    sys.stdout.write(text)
    return EXIT_OK


def cmd_embed(args) -> int:
    model = _load(args)
    if not args.out:
        raise UsageError("--out is required")
    tmp = Path(args.out)
    export_embeddings(model, tmp)
    print(f"embeddings: {tmp}")
    return EXIT_OK


def cmd_attention(args) -> int:
    model = _load(args)
    if not args.out:
        raise UsageError("--out is required")
    report = attention_report(model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "attention.txt", _text(report.as_lines()))
    _write_text(out / "attention.tsv", _text(report.as_table()))
    rows = ["node\t" + "\t".join(model.path_names)]
    rows += [nid + "\t" + "\t".join(f"{g:.17g}" for g in row)
             for nid, row in zip(model.target_ids, model.gamma)]
    _write_text(out / "gamma.tsv", _text(rows))
    sys.stdout.write(_text(report.as_lines()))
    return EXIT_OK


def cmd_pathcount(args) -> int:
    if len(args.metapath) != 1:
        raise UsageError("pathcount takes exactly one --metapath")
    graph = _graph(args)
    spec = args.metapath[0]
    target = args.target_type or (spec.split(",")[0] if "," in spec else spec[:1])
    targets = select_target(graph, target)
    path = parse_metapath(spec, graph.schema, target)
    counts = commuting_matrix(graph, path)
    ids = [graph.node_ids[i] for i in targets.node_indices]
    if args.format == "dense":
        dense = counts.toarray()
        lines = [f"#{path.name}\t" + "\t".join(ids)]
        lines += [ids[i] + "\t" + "\t".join(str(int(c)) for c in dense[i]) for i in range(len(ids))]
    else:
        coo = counts.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"#{path.name}\tsrc\tdst\tcount"]
        lines += [f"{ids[coo.row[k]]}\t{ids[coo.col[k]]}\t{int(coo.data[k])}" for k in order]
    text = _text(lines)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hinattn", description="Hierarchical meta-path attention embeddings for HINs")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def graph_flags(sp, labels_required=False):
        sp.add_argument("--nodes", required=True)
        sp.add_argument("--edges", required=True)
        sp.add_argument("--labels", required=labels_required)
        sp.add_argument("--target-type")
        sp.add_argument("--metapath", action="append", required=True,
                        help="comma-separated type sequence, e.g. A,P,A (repeatable)")

    s = sub.add_parser("synth", help="write a planted synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-target", type=int, default=300)
    s.add_argument("--n-classes", type=int, default=2)
    s.add_argument("--path", action="append", help="CONTENT:INTRA:INTER (repeatable)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    graph_flags(s, labels_required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--fusion", choices=("attention", "avg", "max"))
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--dim", type=int)
    s.add_argument("--pref-dim", type=int)
    s.add_argument("--cache-dir")
    s.add_argument("--checkpoint", help="checkpoint path (default OUT/model.ckpt)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="Micro/Macro-F1 of a trained model")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("embed", help="export node embeddings as TSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("attention", help="meta-path attention analysis")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_attention)

    s = sub.add_parser("pathcount", help="dump a meta-path count matrix")
    graph_flags(s)
    s.add_argument("--format", choices=("dense", "triples"), default="dense")
    s.add_argument("--out")
    s.set_defaults(func=cmd_pathcount)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head); not our error
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except ArithmeticError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphFormatError, checkpoint.CheckpointError, BudgetExceeded, ValueError,
            OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
