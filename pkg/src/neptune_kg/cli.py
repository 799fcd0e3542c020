"""Command-line interface: ``neptune-kg {train,eval,score,export-vocab,make-synthetic}``.

Exit codes: 0 success, 1 usage or config error, 2 data or checkpoint error,
3 numerical abort. Set ``NEPTUNE_KG_LOG_LEVEL`` (e.g. ``DEBUG``) for more
logging.
"""

import argparse
import dataclasses
import difflib
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, kernels
from .data import (SPLITS, DataFormatError, filter_csr, load_dataset, write_synthetic_dataset,
                   write_vocab)
from .evaluation import evaluate, ranks_from_scores
from .model import ACTIVATIONS, score_all_tails
from .training import (CheckpointDimensionError, CheckpointError, NumericalError, TrainConfig,
                       format_log_line, load_checkpoint, save_checkpoint, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT_NAME = "checkpoint.nptn"
LOG_NAME = "train.log"
MANIFEST_NAME = "manifest.json"

log = logging.getLogger("neptune_kg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config merging -------------------------------------------------------------

def _coerce(name, raw):
    fld = {f.name: f for f in dataclasses.fields(TrainConfig)}[name]
    default = fld.default
    try:
        if isinstance(default, bool):
            low = str(raw).strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if isinstance(raw, str):
                raw = raw.replace(",", " ").split()
            return tuple(float(x) for x in raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {name}: {raw!r}") from exc
    return str(raw).strip()


def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in names:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, value)
    return values


def merged_config(args):
    """Defaults < manifest < config file < explicit flags."""
    values = {}
    if getattr(args, "from_manifest", None):
        with open(args.from_manifest, encoding="utf-8") as fh:
            values.update(json.load(fh)["config"])
    if args.config:
        values.update(read_config_file(args.config))
    for f in dataclasses.fields(TrainConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = _coerce(f.name, flag)
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _add_config_flags(p):
    g = p.add_argument_group("training configuration (overrides --config)")
    g.add_argument("--d", type=int, help="entity embedding size")
    g.add_argument("--k", type=int, help="relation embedding size")
    g.add_argument("--lr", type=float)
    g.add_argument("--lr-decay", dest="lr_decay", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--dropout-rates", dest="dropout_rates", type=float, nargs=3,
                   metavar=("INPUT", "HIDDEN1", "HIDDEN2"))
    g.add_argument("--label-smoothing", dest="label_smoothing", type=float)
    g.add_argument("--activation", choices=ACTIVATIONS)
    g.add_argument("--batch-norm", dest="batch_norm", action="store_const", const="true")
    g.add_argument("--no-batch-norm", dest="batch_norm", action="store_const", const="false")
    g.add_argument("--seed", type=int)
    g.add_argument("--adam-beta1", dest="adam_beta1", type=float)
    g.add_argument("--adam-beta2", dest="adam_beta2", type=float)
    g.add_argument("--adam-eps", dest="adam_eps", type=float)
    g.add_argument("--eval-every", dest="eval_every", type=int,
                   help="validation MRR every N epochs (0 = never)")
    g.add_argument("--keep-best", dest="keep_best", action="store_const", const="true",
                   help="keep the parameters with the best validation MRR")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- commands -------------------------------------------------------------------

def cmd_train(args):
    cfg = merged_config(args)
    data_dir = args.data
    if data_dir is None and args.from_manifest:
        with open(args.from_manifest, encoding="utf-8") as fh:
            data_dir = json.load(fh)["data"]["dir"]
    if data_dir is None:
        raise UsageError("--data is required")
    timings = {}
    t0 = time.perf_counter()
    g = load_dataset(data_dir)
    timings["load"] = time.perf_counter() - t0
    os.makedirs(args.out, exist_ok=True)
    log.info("loaded %s: |E|=%d |R|=%d train=%d", data_dir, g.n_entities, g.n_relations,
             len(g.train))

    log_path = os.path.join(args.out, LOG_NAME)
    t0 = time.perf_counter()
    with open(log_path, "w", encoding="utf-8") as log_fh:
        def on_epoch(epoch, loss, mrr):
            log_fh.write(format_log_line(epoch, loss, mrr) + "\n")
            log_fh.flush()
            log.info("epoch %d loss %.6f%s", epoch, loss,
                     "" if mrr is None else f" valid_mrr {mrr:.4f}")
        result = train(g, cfg, on_epoch=on_epoch)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    save_checkpoint(os.path.join(args.out, CHECKPOINT_NAME), result.params, result.adam, cfg, g)
    timings["save"] = time.perf_counter() - t0

    manifest = {
        "version": __version__,
        "kernels": kernels.BACKEND,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "data": {
            "dir": os.path.abspath(data_dir),
            "sha256": {f"{s}.txt": _sha256(os.path.join(data_dir, f"{s}.txt")) for s in SPLITS},
        },
        "timings_seconds": timings,
    }
    with open(os.path.join(args.out, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {os.path.join(args.out, CHECKPOINT_NAME)}")
    return EXIT_OK


def _load_pair(args):
    g = load_dataset(args.data)
    ckpt = load_checkpoint(args.checkpoint, g)
    return g, ckpt


def cmd_eval(args):
    g, ckpt = _load_pair(args)
    report = evaluate(ckpt.params, g, args.split, ckpt.config.activation,
                      use_bn=ckpt.config.batch_norm)
    print(report.format_line(args.split))
    if args.dump:
        report.write_ranks(args.dump, g)
    return EXIT_OK


def _lookup(vocab, label, kind):
    if label in vocab:
        return vocab[label]
    near = difflib.get_close_matches(label, vocab.labels, n=5, cutoff=0.0)
    raise UsageError(f"unknown {kind} label {label!r}; nearest: {', '.join(near)}")


def cmd_score(args):
    g, ckpt = _load_pair(args)
    h = _lookup(g.entities, args.head, "entity")
    r = _lookup(g.relations, args.relation, "relation")
    scores = score_all_tails(ckpt.params, h, r, ckpt.config.activation, mode="eval",
                             use_bn=ckpt.config.batch_norm)
    top_k = g.n_entities if args.top_k is None else min(args.top_k, g.n_entities)
    order = np.argsort(-scores, kind="stable")[:top_k]
    known = g.filter_index.get((h, r), frozenset())
    for pos, t in enumerate(order.tolist(), start=1):
        mark = "\tknown" if args.annotate_filtered and t in known else ""
        print(f"{pos}\t{g.entities.label(t)}\t{scores[t]:.6f}{mark}")
    if args.tail is not None:
        t = _lookup(g.entities, args.tail, "entity")
        indptr, indices = filter_csr(g, [(h, r, t)])
        rank = ranks_from_scores(scores[None, :], [t], indptr, indices)[0]
        print(f"# filtered rank of {args.tail}: {rank}")
    return EXIT_OK


def cmd_export_vocab(args):
    g = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    write_vocab(os.path.join(args.out, "entities.tsv"), g.entities)
    write_vocab(os.path.join(args.out, "relations.tsv"), g.relations)
    print(f"{g.n_entities} entities, {g.n_relations} relations "
          f"({g.n_raw_relations} raw) -> {args.out}")
    return EXIT_OK


def cmd_make_synthetic(args):
    triples = write_synthetic_dataset(args.out, args.entities, args.relations, args.triples,
                                      holdout=args.holdout, seed=args.seed)
    print(f"wrote {len(triples)} training triples to {args.out}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="neptune-kg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write checkpoint, log and manifest")
    p.add_argument("--data", help="directory with train.txt / valid.txt / test.txt")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--from-manifest", dest="from_manifest",
                   help="re-run with the config and data of an earlier manifest.json")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="filtered MRR / Hits@n of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--dump", help="write per-triple ranks (tab-separated) here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="rank every tail for a (head, relation) query")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--head", required=True, help="head entity label")
    p.add_argument("--relation", required=True, help="relation label (may end in _reciprocal)")
    p.add_argument("--tail", help="also report the filtered rank of this tail")
    p.add_argument("--top-k", dest="top_k", type=int, default=10)
    p.add_argument("--annotate-filtered", dest="annotate_filtered", action="store_true",
                   help="mark tails already known for this query")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export-vocab", help="dump id<TAB>label vocabularies")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_vocab)

    p = sub.add_parser("make-synthetic", help="write a random memorization dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=64)
    p.add_argument("--relations", type=int, default=8)
    p.add_argument("--triples", type=int, default=512)
    p.add_argument("--holdout", type=int, default=64,
                   help="triples copied from train into each of valid and test")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("NEPTUNE_KG_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointDimensionError as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, DataFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
