"""Command-line entry points.

Every flag can also be set through an environment variable named
``MTAM_`` plus the flag's destination in upper case (``--min-user-len``
becomes ``MTAM_MIN_USER_LEN``). Explicit flags win over the environment.

Exit codes: 0 success, 2 data error, 3 numeric error, 4 compatibility error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import checkpoint, gradcheck, kernels, metrics
from .data import BehaviorSequence, filter_and_index, ingest, load_split, sample_users, save_split, split_sequences
from .errors import CompatibilityError, DataError, MTAMError, OrderingError
from .model import INIT_SCHEMES, VARIANTS, ModelParams, recommend_topk
from .seeding import Streams
from .synthetic import temporal_rule_log
from .train import TrainConfig, train

log = logging.getLogger("mtam")
ENV_PREFIX = "MTAM_"


def _k_list(text: str) -> list:
    try:
        ks = sorted({int(k) for k in str(text).split(",") if k.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None
    if not ks or ks[0] < 1:
        raise argparse.ArgumentTypeError("K values must be positive")
    return ks


def _echo(cfg: dict, path=None) -> None:
    text = json.dumps(cfg, indent=1, sort_keys=True, default=str)
    print(f"effective config:\n{text}", file=sys.stderr)
    if path is not None:
        Path(path).write_text(text + "\n")


def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _stats_block(stats: dict) -> str:
    return "\n".join([
        f"#user        {stats['users']}",
        f"#item        {stats['items']}",
        f"#cat         {stats['categories']}",
        f"#events      {stats['events']}",
        f"avg behav.   {stats['avg_behaviors']:.4f}",
        f"density      {stats['density']:.6f}",
    ])


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args) -> int:
    if not Path(args.input).exists():
        raise DataError(f"input not found: {args.input}")
    log_ = ingest(args.input, args.format, args.max_malformed)
    if args.sample_users < 1.0:
        log_ = sample_users(log_, args.sample_users, Streams(args.seed)["sample"])
    split = split_sequences(filter_and_index(log_, args.min_user_len, args.min_item_count))
    out = save_split(split, args.output, extra={"config": _args_dict(args)})
    _echo(_args_dict(args), out / "config.json")
    print(_stats_block(split.stats))
    print(f"train pairs  {len(split.train)}")
    print(f"test pairs   {len(split.test)}")
    return 0


def cmd_synthetic(args) -> int:
    rng = Streams(args.seed)["synthetic"]
    ev = temporal_rule_log(args.users, rng, threshold=args.threshold)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    with open(args.output, "w") as fh:
        fh.write("user,item,category,timestamp\n")
        for u, i, c, t in zip(ev.users, ev.items, ev.categories, ev.timestamps):
            fh.write(f"{u},{i},{c},{int(t)}\n")
    print(f"wrote {len(ev)} events for {args.users} users to {args.output}")
    return 0


def train_config_from_args(args) -> TrainConfig:
    return TrainConfig(lr0=args.lr, decay=args.decay, decay_every=args.decay_every, l2=args.l2,
                       dropout=args.dropout, batch_size=args.batch_size, epochs=args.epochs,
                       max_epochs=args.max_epochs, seed=args.seed, d=args.d, max_len=args.max_len,
                       hops=args.hops, variant=args.variant, time_divisor=args.time_divisor,
                       optimizer=args.optimizer, init=args.init)


def cmd_train(args) -> int:
    split = load_split(args.data)
    if not split.train:
        raise DataError("dataset has no training pairs")
    cfg = train_config_from_args(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    echo = {"command": "train", "data": str(args.data), "out": str(out), "train": cfg.to_dict(),
            "backend": kernels.BACKEND}
    _echo(echo, out.with_name(out.name + ".config.json"))
    params = ModelParams.init(cfg.model_config(split.n_items, split.n_categories), Streams(cfg.seed)["init"])
    start = time.perf_counter()
    result = train(params, split.train, cfg)
    result.write_trace(out.with_name(out.name + ".trace.tsv"))
    vocab = {"items": split.vocab.items, "categories": split.vocab.categories}
    digest = checkpoint.save(params, out, extra={"train": cfg.to_dict(), "vocab": vocab})
    print(f"trained {cfg.variant} for {result.epochs_run} epoch(s), {len(result.trace)} iterations, "
          f"final loss {result.trace[-1][2]:.5f} ({time.perf_counter() - start:.1f}s)")
    print(f"checkpoint {out} sha256 {digest}")
    return 0


def _check_compatible(params: ModelParams, split, vocab: dict | None) -> None:
    c = params.config
    if (c.n_items, c.n_categories) != (split.n_items, split.n_categories):
        raise CompatibilityError(f"checkpoint built for {c.n_items} items / {c.n_categories} categories, "
                                 f"data has {split.n_items} / {split.n_categories}")
    if vocab is not None and vocab.get("items") != split.vocab.items:
        raise CompatibilityError("checkpoint item vocabulary differs from the dataset's")


def cmd_eval(args) -> int:
    split = load_split(args.data)
    if not split.test:
        raise DataError("dataset has no test pairs")
    if args.baseline:
        report = metrics.evaluate_popularity(split, args.baseline, args.k)
    else:
        if not args.ckpt:
            raise DataError("either --ckpt or --baseline is required")
        blob = Path(args.ckpt).read_bytes()
        params = checkpoint.from_bytes(blob)
        _check_compatible(params, split, checkpoint.read_manifest_bytes(blob)[0]["extra"].get("vocab"))
        report = metrics.evaluate(params, split.test, args.k, label=params.config.variant)
    text = report.to_text()
    print(text, end="")
    if args.report:
        Path(args.report).write_text(text)
        _echo(_args_dict(args), Path(args.report).with_suffix(".config.json"))
    else:
        _echo(_args_dict(args))
    return 0


def read_history(path, vocab: dict) -> BehaviorSequence:
    """Parse ``item,category,timestamp`` lines (external ids; optional header)."""
    item_ix = {e: i for i, e in enumerate(vocab["items"])}
    cat_ix = {e: i for i, e in enumerate(vocab["categories"])}
    items, cats, times = [], [], []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.replace("\t", ",").split(",")]
            if n == 1 and parts[0].lower() == "item":
                continue
            if len(parts) != 3:
                raise DataError(f"{path}:{n}: expected item,category,timestamp")
            item, cat, ts = parts
            if item not in item_ix or item_ix[item] == 0:
                raise DataError(f"{path}:{n}: unknown item id {item!r}")
            if cat not in cat_ix or cat_ix[cat] == 0:
                raise DataError(f"{path}:{n}: unknown category {cat!r}")
            try:
                t = float(ts)
            except ValueError:
                raise DataError(f"{path}:{n}: bad timestamp {ts!r}") from None
            items.append(item_ix[item])
            cats.append(cat_ix[cat])
            times.append(t)
    if not items:
        raise DataError(f"{path}: empty history")
    seq = BehaviorSequence.from_lists(items, cats, times)
    try:
        seq.check_order()
    except OrderingError as exc:
        raise OrderingError(f"{path}: {exc}") from None
    return seq


def cmd_recommend(args) -> int:
    blob = Path(args.ckpt).read_bytes()
    params = checkpoint.from_bytes(blob)
    vocab = checkpoint.read_manifest_bytes(blob)[0]["extra"].get("vocab")
    if vocab is None:
        raise CompatibilityError("checkpoint carries no vocabulary")
    seq = read_history(args.history, vocab)
    t = float(seq.times[-1]) if args.time is None else args.time
    if t < seq.times[-1]:
        raise OrderingError("--time precedes the last history behavior")
    _echo(_args_dict(args))
    ranking = recommend_topk(params, seq, t, args.k)
    for i, s in zip(ranking.items, ranking.scores):
        print(f"{vocab['items'][i]}\t{s!r}")
    return 0


def cmd_gradcheck(args) -> int:
    _echo(_args_dict(args))
    rows, elapsed = gradcheck.timed_run(args.scope, args.seed)
    print(gradcheck.format_table(rows, elapsed))
    return 0 if all(r.ok for r in rows) else 3


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mtam", description="Time-aware memory network for next-item recommendation.")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="ingest, filter, index and split an event log")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=["csv", "tsv"], default=None)
    p.add_argument("--min-user-len", type=int, default=10)
    p.add_argument("--min-item-count", type=int, default=30)
    p.add_argument("--sample-users", type=float, default=1.0)
    p.add_argument("--max-malformed", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synthetic", help="write the planted temporal-rule event log")
    p.add_argument("--output", required=True)
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--threshold", type=float, default=3600.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synthetic)

    d = TrainConfig()
    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=VARIANTS, default=d.variant)
    p.add_argument("--hops", type=int, default=d.hops)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--lr", type=float, default=d.lr0)
    p.add_argument("--decay", type=float, default=d.decay)
    p.add_argument("--decay-every", type=int, default=d.decay_every)
    p.add_argument("--l2", type=float, default=d.l2)
    p.add_argument("--dropout", type=float, default=d.dropout)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=d.max_epochs)
    p.add_argument("--d", type=int, default=d.d)
    p.add_argument("--max-len", type=int, default=d.max_len)
    p.add_argument("--time-divisor", type=float, default=d.time_divisor,
                   help="seconds per time unit inside the log-interval features")
    p.add_argument("--optimizer", choices=["sgd", "adam"], default=d.optimizer)
    p.add_argument("--init", choices=list(INIT_SCHEMES), default=d.init)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="HR@K / NDCG@K on the test pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--baseline", choices=["top-pop", "p-pop"], default=None)
    p.add_argument("--k", type=_k_list, default=[5, 10, 20])
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", help="Top-K items for one history")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--history", required=True)
    p.add_argument("--time", type=float, default=None)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--scope", choices=["all", *gradcheck.SCOPES], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def apply_env(parser: argparse.ArgumentParser, environ=None) -> None:
    """Turn ``MTAM_*`` variables into defaults for the matching flags."""
    environ = os.environ if environ is None else environ
    parsers = [parser]
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            parsers += list(action.choices.values())
    for p in parsers:
        for action in p._actions:
            if not action.option_strings or action.dest in ("help",):
                continue
            key = ENV_PREFIX + action.dest.upper()
            if key not in environ:
                continue
            raw = environ[key]
            value = action.type(raw) if action.type else raw
            if action.choices is not None and value not in action.choices:
                p.error(f"{key}={raw!r} is not one of {list(action.choices)}")
            action.default = value
            action.required = False


def main(argv=None) -> int:
    parser = build_parser()
    apply_env(parser)
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MTAMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
