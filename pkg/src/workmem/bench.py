"""Wall-clock scaling of attention+RN reasoning against a full pairwise RN.

Both pipelines start from the same synthetic memory bank (no tokenizer or
GRU), run forward, summed cross-entropy and backward on one batch, and
report the median over repetitions after one discarded warm-up pass.
"""
from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .attention import AttentionController
from .config import TrainConfig
from .encoder import MemoryBank
from .reasoning import Readout, RelationNetwork, baseline_rn_full, count_pair_evals, relation_pool
from .tensor import Tensor

MODELS = ("wmemnn", "full_rn")
# reference point from the original K80 measurement at 30 memories
PAPER_SECONDS_AT_30 = {"wmemnn": 50.0, "full_rn": 930.0}


@dataclass
class BenchRow:
    model: str
    n_memories: int
    batch: int
    wallclock_forward_backward_s: float
    pair_evals: int
    repetitions: int
    threads: int = 1


class _Pipeline:
    def __init__(self, model: str, cfg: TrainConfig, n_answers: int, rng):
        dtype = np.dtype(cfg.dtype)
        self.model = model
        self.controller = AttentionController(cfg.d, cfg.heads, cfg.hops, rng, dtype, cfg.transition_hidden) \
            if model == "wmemnn" else None
        self.rn = RelationNetwork(cfg.d, rng, dtype, cfg.g_hidden, cfg.g_layers, cfg.use_f_phi, cfg.pair_mode)
        self.readout = Readout(n_answers, self.rn.out_dim, rng, dtype)
        self.params = self.rn.parameters() + self.readout.parameters()
        if self.controller is not None:
            self.params += self.controller.parameters()

    def step(self, memories: np.ndarray, u: np.ndarray, answers: np.ndarray) -> float:
        for p in self.params:
            p.grad = None
        mem, q = Tensor(memories), Tensor(u)
        if self.model == "wmemnn":
            bank = MemoryBank(mem, np.ones(memories.shape[:2], dtype=bool), q)
            buffer, _ = self.controller(bank)
            r = relation_pool(buffer, q, self.rn)
        else:
            r = baseline_rn_full(mem, q, self.rn)
        loss = T.nll_loss(self.readout(r), answers)
        loss.backward()
        return loss.item()


def bench_one(model: str, n: int, batch: int = 32, reps: int = 5, cfg: TrainConfig | None = None,
              n_answers: int = 20, seed: int = 0, threads: int = 1) -> BenchRow:
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    pipe = _Pipeline(model, cfg, n_answers, rng)
    memories = rng.uniform(-1, 1, size=(batch, n, cfg.d)).astype(dtype)
    u = rng.uniform(-1, 1, size=(batch, cfg.d)).astype(dtype)
    answers = rng.integers(n_answers, size=batch)

    pipe.step(memories, u, answers)  # warm-up
    before = pipe.rn.pair_evals
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        pipe.step(memories, u, answers)
        times.append(time.perf_counter() - t0)
    per_sample = (pipe.rn.pair_evals - before) // (reps * batch)
    expected = count_pair_evals(model, n, cfg.hops, cfg.pair_mode)
    if per_sample != expected:
        raise AssertionError(f"{model} n={n}: observed {per_sample} pair evaluations, expected {expected}")
    return BenchRow(model, n, batch, statistics.median(times), per_sample, reps, threads)


def run_bench(ns: Iterable[int], batch: int = 32, reps: int = 5, threads: int = 1,
              cfg: TrainConfig | None = None, seed: int = 0, progress=None) -> list[BenchRow]:
    from threadpoolctl import threadpool_limits

    ns = list(ns)
    if not ns or min(ns) < 1:
        raise ValueError("memory counts must be >= 1")
    rows = []
    with threadpool_limits(limits=threads):
        for n in ns:
            for model in MODELS:
                row = bench_one(model, n, batch, reps, cfg, seed=seed, threads=threads)
                rows.append(row)
                if progress:
                    progress(row)
    return rows


def loglog_slope(ns: Sequence[float], times: Sequence[float]) -> float:
    """Least-squares slope of log(time) against log(n)."""
    slope, _ = np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)


def summarize(rows: Sequence[BenchRow]) -> dict:
    by = {m: {r.n_memories: r.wallclock_forward_backward_s for r in rows if r.model == m} for m in MODELS}
    ns = sorted(set(by["wmemnn"]) & set(by["full_rn"]))
    out = {
        "speedup": {n: by["full_rn"][n] / by["wmemnn"][n] for n in ns},
        "reference_speedup_at_30": PAPER_SECONDS_AT_30["full_rn"] / PAPER_SECONDS_AT_30["wmemnn"],
    }
    if len(ns) >= 2:
        out["slope"] = {m: loglog_slope(ns, [by[m][n] for n in ns]) for m in MODELS}
    return out


def format_summary(summary: dict) -> str:
    lines = [f"{'n':>6} {'speedup':>10}"]
    for n, s in summary["speedup"].items():
        lines.append(f"{n:>6} {s:>9.1f}x")
    if "slope" in summary:
        for m, s in summary["slope"].items():
            lines.append(f"log-log slope {m}: {s:.2f}")
    lines.append(f"reference speedup at n=30 (K80, 930 s vs 50 s): {summary['reference_speedup_at_30']:.1f}x")
    return "\n".join(lines)


_COLUMNS = [f.name for f in fields(BenchRow)]


def write_rows(rows: Sequence[BenchRow], path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in _COLUMNS])


def read_rows(path) -> list[BenchRow]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out.append(BenchRow(
                model=rec["model"],
                n_memories=int(rec["n_memories"]),
                batch=int(rec["batch"]),
                wallclock_forward_backward_s=float(rec["wallclock_forward_backward_s"]),
                pair_evals=int(rec["pair_evals"]),
                repetitions=int(rec["repetitions"]),
                threads=int(rec["threads"]),
            ))
    return out
