"""Command line: ``workmem {train,eval,inspect,bench,synth}``.

Exit codes: 0 success, 1 internal error, 2 user or config error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import babi
from .attention import dump_trace
from .checkpoint import Checkpoint, CheckpointVersionError
from .config import ConfigError, load_config
from .tensor import no_grad

log = logging.getLogger("workmem")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad input from the user; reported with exit code 2."""


def _data_dir(arg: str | None, fallback: str = "") -> Path:
    path = arg or fallback or os.environ.get("WORKMEM_DATA", "")
    if not path:
        raise UsageError("no data directory: pass --data or set WORKMEM_DATA")
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"data directory not found: {p}")
    return p


def _threads(n: int):
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    try:
        return Checkpoint.load(p)
    except CheckpointVersionError as exc:
        raise UsageError(f"cannot read {p}: found version {exc.found}, expected version {exc.expected}") from None


# ------------------------------------------------------------------ train

def cmd_train(args) -> int:
    from .training import Trainer, evaluate, model_from_checkpoint

    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        raise UsageError(f"config not found: {args.config}") from None
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if args.threads:
        cfg.threads = args.threads
    data_dir = _data_dir(args.data, cfg.data_dir)
    tasks = cfg.task_list()
    for t in tasks:
        if babi.find_task_file(data_dir, t, "train") is None:
            raise UsageError(f"missing training file for task {t}: {data_dir / f'qa{t}_*_train.txt'}")

    raw = babi.load_tasks(data_dir, tasks, "train", cfg.max_samples_per_task or None)
    all_raw = [s for t in tasks for s in raw[t]]
    vocab = babi.build_vocabulary(all_raw)
    samples = babi.vectorize(all_raw, vocab, cfg.train.max_facts)
    train, valid = babi.split_validation(samples, cfg.train.valid_fraction,
                                         np.random.default_rng([cfg.train.seed, 2]))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocab.txt").write_text("\n".join(vocab.itos[1:]) + "\n", encoding="utf-8")
    log.info("train %d / valid %d samples, |V|=%d, |A|=%d", len(train), len(valid), len(vocab), len(vocab.answers))

    with _threads(cfg.threads):
        result = Trainer(cfg.train, vocab, out).fit(train, valid)
        best = model_from_checkpoint(Checkpoint.load(out / "best.ckpt"))
        report = evaluate(best, valid)
    print(f"best validation accuracy {result.best_accuracy:.4f} at epoch {result.best_epoch}")
    print(report.table())
    return EXIT_OK


# ------------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    from .training import evaluate, model_from_checkpoint

    ckpt = _load_checkpoint(args.checkpoint)
    data_dir = _data_dir(args.data)
    model = model_from_checkpoint(ckpt)
    samples, absent = [], []
    for t in range(1, 21):
        path = babi.find_task_file(data_dir, t, "test")
        if path is None:
            absent.append(t)
            continue
        samples.extend(babi.vectorize(babi.parse_babi_file(path, t), ckpt.vocab, ckpt.config.max_facts))
    if absent:
        log.warning("no test file for tasks %s in %s", absent, data_dir)
    if not samples:
        raise UsageError(f"no test files found in {data_dir}")
    with _threads(args.threads or 1):
        report = evaluate(model, samples, absent)
    print(report.table())
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "eval.csv")
    return EXIT_OK


# ---------------------------------------------------------------- inspect

def render_trace(fact_text, support, head_sums, question, gold, pred) -> str:
    H = head_sums.shape[0]
    width = max([len(s) for s in fact_text] + [5]) + 1
    head = f"{'Story':<{width}} {'Support':>7} " + " ".join(f"{'Hop ' + str(k + 1):>6}" for k in range(H))
    lines = [head, "-" * len(head)]
    for i, text in enumerate(fact_text):
        cells = " ".join(f"{head_sums[k, i]:>6.2f}" for k in range(H))
        lines.append(f"{text:<{width}} {'True' if support[i] else '':>7} {cells}")
    lines.append("-" * len(head))
    lines.append(f"Question: {question}  Answer: {gold}  Pred: {pred}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    from .training import model_from_checkpoint

    ckpt = _load_checkpoint(args.checkpoint)
    try:
        raws = babi.parse_babi_file(args.story, task_id=0)
    except (OSError, babi.BabiParseError) as exc:
        raise UsageError(f"cannot parse story: {exc}") from None
    if len(raws) != 1:
        raise UsageError(f"{args.story}: expected exactly one question, found {len(raws)}")
    sample = babi.window_facts(raws[0], ckpt.vocab, ckpt.config.max_facts)
    if sample is None:
        raise UsageError(f"{args.story}: story has no facts")
    model = model_from_checkpoint(ckpt)
    batch = babi.collate([sample])
    with no_grad():
        out = model(batch)
    trace = out.trace.sample(0)
    pred = ckpt.vocab.answers[int(out.probs.data[0].argmax())]
    print(render_trace(sample.fact_text, sample.support_flags, trace.head_sums[0],
                       " ".join(raws[0].question) + "?", raws[0].answer, pred))
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_trace(trace.records(sample.fact_text), out_dir / "trace.json")
    return EXIT_OK


# ------------------------------------------------------------------ bench

def cmd_bench(args) -> int:
    from .bench import format_summary, run_bench, summarize, write_rows

    try:
        ns = [int(x) for x in args.n.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--n expects a comma-separated list of integers, got {args.n!r}") from None
    if not ns or min(ns) < 1:
        raise UsageError("--n values must be >= 1")

    def progress(row):
        print(f"{row.model:>8} n={row.n_memories:<5} {row.wallclock_forward_backward_s:9.4f} s"
              f"  pairs/sample={row.pair_evals}", flush=True)

    rows = run_bench(ns, batch=args.batch, reps=args.reps, threads=args.threads or 1,
                     seed=args.seed or 0, progress=progress)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / "bench.csv")
    print(format_summary(summarize(rows)))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import write_task1

    for p in write_task1(args.out, args.train, args.test, args.seed or 0):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="workmem", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on bAbI task files")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-task error report on test files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="attention trace for one story")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--story", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="wall-clock scaling against a full RN")
    p.add_argument("--n", default="8,16,30,32,64,128")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write task-1 style train/test files")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=1000)
    p.add_argument("--test", type=int, default=1000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
