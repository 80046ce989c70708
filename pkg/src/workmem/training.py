"""Loss, optimizer, training loop and per-task evaluation."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .babi import TASK_NAMES, Sample, Vocabulary, make_batches
from .checkpoint import Checkpoint
from .config import TrainConfig
from .model import WorkingMemoryNetwork
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)

SOLVED_ERROR = 5.0
METRIC_COLUMNS = ["epoch", "split", "loss", "accuracy", "lr"]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, grad_norms: dict[str, float]):
        worst = sorted(grad_norms.items(), key=lambda kv: -np.nan_to_num(kv[1], nan=np.inf))[:5]
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}; largest grad norms: {worst}")
        self.epoch, self.batch, self.grad_norms = epoch, batch, grad_norms


def data_loss(probs: Tensor, answers) -> Tensor:
    """Summed (not averaged) cross-entropy over the batch."""
    return T.nll_loss(probs, answers)


def l2_penalty(weights: Sequence[Tensor], coeff: float) -> Tensor:
    total = None
    for W in weights:
        term = (W * W).sum()
        total = term if total is None else total + term
    return total * coeff


def total_loss(model: WorkingMemoryNetwork, probs: Tensor, answers) -> tuple[Tensor, Tensor]:
    data = data_loss(probs, answers)
    if model.cfg.l2 > 0:
        return data + l2_penalty(model.regularized(), model.cfg.l2), data
    return data, data


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_global_norm(grads: list[np.ndarray], max_norm: float = 40.0) -> tuple[list[np.ndarray], float]:
    """Scale every gradient by max_norm/norm when the joint norm exceeds max_norm."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * np.asarray(scale, dtype=g.dtype) for g in grads]
    return grads, norm


class Adam:
    def __init__(self, params: Sequence[Parameter], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, grads: Sequence[np.ndarray], lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g in zip(self.params, grads):
            m, v = self.m[p.name], self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype)


def adam_step(params, grads, state: Adam, lr: float):
    state.step(grads, lr)


# ------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    errors: dict[int, float]               # task -> error %, present tasks only
    absent: list[int] = field(default_factory=list)
    counts: dict[int, int] = field(default_factory=dict)

    @property
    def mean_error(self) -> float:
        return float(np.mean(list(self.errors.values()))) if self.errors else float("nan")

    @property
    def failed(self) -> int:
        return sum(1 for e in self.errors.values() if e > SOLVED_ERROR)

    def table(self) -> str:
        lines = [f"{'Task':<30} {'Error (%)':>10}", "-" * 41]
        for t in sorted(set(self.errors) | set(self.absent)):
            label = f"{t}: {TASK_NAMES.get(t, '')}"
            val = f"{self.errors[t]:.1f}" if t in self.errors else "—"
            lines.append(f"{label:<30} {val:>10}")
        lines.append("-" * 41)
        lines.append(f"{'Mean Error (%)':<30} {self.mean_error:>10.1f}")
        lines.append(f"{'Failed tasks (err. > 5%)':<30} {self.failed:>10d}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", "name", "error_pct", "n_samples"])
            for t in sorted(set(self.errors) | set(self.absent)):
                if t in self.errors:
                    w.writerow([t, TASK_NAMES.get(t, ""), repr(self.errors[t]), self.counts.get(t, 0)])
                else:
                    w.writerow([t, TASK_NAMES.get(t, ""), "", 0])
            w.writerow(["mean", "", repr(self.mean_error), ""])
            w.writerow(["failed", "", self.failed, ""])

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        errors, absent, counts = {}, [], {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                if row["task"] in ("mean", "failed"):
                    continue
                t = int(row["task"])
                if row["error_pct"] == "":
                    absent.append(t)
                else:
                    errors[t] = float(row["error_pct"])
                    counts[t] = int(row["n_samples"])
        return cls(errors, absent, counts)


def predict(model: WorkingMemoryNetwork, samples: Sequence[Sample], batch_size: int = 256) -> np.ndarray:
    preds = []
    with T.no_grad():
        for batch in make_batches(samples, batch_size):
            preds.append(model(batch).probs.data.argmax(axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(model, samples) -> float:
    if not samples:
        return float("nan")
    preds = predict(model, samples)
    return float(np.mean(preds == np.array([s.answer for s in samples])))


def report_from_predictions(preds, samples: Sequence[Sample], absent=()) -> EvalReport:
    errors, counts = {}, {}
    gold = np.array([s.answer for s in samples])
    tasks = np.array([s.task_id for s in samples])
    for t in sorted(set(tasks.tolist())):
        sel = tasks == t
        errors[t] = 100.0 * float(np.mean(preds[sel] != gold[sel]))
        counts[t] = int(sel.sum())
    return EvalReport(errors, sorted(absent), counts)


def evaluate(model: WorkingMemoryNetwork, samples: Sequence[Sample], absent=()) -> EvalReport:
    return report_from_predictions(predict(model, samples), samples, absent)


# --------------------------------------------------------------- training

def lr_schedule(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``; the restart phase follows the main run."""
    if epoch <= cfg.epochs:
        return cfg.lr
    k = epoch - cfg.epochs - 1
    return cfg.restart_lr * cfg.anneal_factor ** (k // cfg.anneal_every)


def total_epochs(cfg: TrainConfig) -> int:
    return cfg.epochs + (cfg.restart_epochs if cfg.restart else 0)


@dataclass
class TrainResult:
    model: WorkingMemoryNetwork
    best_accuracy: float
    best_epoch: int
    history: list[dict]


class Trainer:
    def __init__(self, cfg: TrainConfig, vocab: Vocabulary, out_dir=None):
        self.cfg = cfg
        self.vocab = vocab
        self.model = WorkingMemoryNetwork(len(vocab), len(vocab.answers), cfg,
                                          np.random.default_rng(cfg.seed))
        self.params = self.model.parameters()
        self.opt = Adam(self.params)
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.out_dir = Path(out_dir) if out_dir else None
        self.history: list[dict] = []

    def checkpoint(self, epoch: int, best: float) -> Checkpoint:
        return Checkpoint(
            config=self.cfg,
            vocab=self.vocab,
            params=self.model.state_dict(),
            adam_step=self.opt.t,
            adam_m=dict(self.opt.m),
            adam_v=dict(self.opt.v),
            epoch=epoch,
            rng_state=self.rng.bit_generator.state,
            best_metric=best,
        )

    def train_step(self, batch, lr: float, epoch: int = 0, index: int = 0) -> tuple[float, int]:
        self.model.zero_grad()
        out = self.model(batch)
        loss, data = total_loss(self.model, out.probs, batch.answers)
        loss.backward()
        if not np.isfinite(loss.item()):
            norms = {p.name: global_norm([p.grad]) for p in self.params}
            raise TrainingDiverged(epoch, index, norms)
        grads, _ = clip_global_norm([p.grad for p in self.params], self.cfg.clip_norm)
        self.opt.step(grads, lr)
        correct = int((out.probs.data.argmax(axis=1) == batch.answers).sum())
        return data.item(), correct

    def _log(self, epoch, split, loss, acc, lr, started, metrics_fh, timing_fh):
        row = {"epoch": epoch, "split": split, "loss": loss, "accuracy": acc, "lr": lr}
        self.history.append(row)
        if metrics_fh is not None:
            metrics_fh.writerow([epoch, split, repr(float(loss)), repr(float(acc)), repr(float(lr))])
        if timing_fh is not None and split == "valid":
            timing_fh.writerow([epoch, f"{time.perf_counter() - started:.3f}"])

    def fit(self, train: Sequence[Sample], valid: Sequence[Sample]) -> TrainResult:
        cfg = self.cfg
        started = time.perf_counter()
        files = []
        metrics = timing = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            mf = open(self.out_dir / "metrics.csv", "w", newline="", encoding="utf-8")
            tf = open(self.out_dir / "timing.csv", "w", newline="", encoding="utf-8")
            files = [mf, tf]
            metrics = csv.writer(mf, lineterminator="\n")
            timing = csv.writer(tf, lineterminator="\n")
            metrics.writerow(METRIC_COLUMNS)
            timing.writerow(["epoch", "wallclock_s"])
        try:
            best_acc = self._validate(0, valid, cfg.lr, started, metrics, timing)
            best_epoch = 0
            self._save_best(0, best_acc)
            for epoch in range(1, total_epochs(cfg) + 1):
                lr = lr_schedule(cfg, epoch)
                loss_sum, correct, seen = 0.0, 0, 0
                for i, batch in enumerate(make_batches(train, cfg.batch_size, self.rng)):
                    l, c = self.train_step(batch, lr, epoch, i)
                    loss_sum += l
                    correct += c
                    seen += len(batch)
                self._log(epoch, "train", loss_sum / max(seen, 1), correct / max(seen, 1), lr,
                          started, metrics, timing)
                acc = self._validate(epoch, valid, lr, started, metrics, timing)
                log.info("epoch %d lr %.2e train loss %.4f valid acc %.4f",
                         epoch, lr, loss_sum / max(seen, 1), acc)
                if acc > best_acc:
                    best_acc, best_epoch = acc, epoch
                    self._save_best(epoch, best_acc)
            if self.out_dir is not None:
                self.checkpoint(total_epochs(cfg), best_acc).save(self.out_dir / "last.ckpt")
        finally:
            for fh in files:
                fh.close()
        return TrainResult(self.model, best_acc, best_epoch, self.history)

    def _validate(self, epoch, valid, lr, started, metrics, timing) -> float:
        if not valid:
            self._log(epoch, "valid", float("nan"), float("nan"), lr, started, metrics, timing)
            return float("nan")
        loss_sum, correct = 0.0, 0
        with T.no_grad():
            for batch in make_batches(valid, 256):
                out = self.model(batch)
                loss_sum += data_loss(out.probs, batch.answers).item()
                correct += int((out.probs.data.argmax(axis=1) == batch.answers).sum())
        acc = correct / len(valid)
        self._log(epoch, "valid", loss_sum / len(valid), acc, lr, started, metrics, timing)
        return acc

    def _save_best(self, epoch: int, acc: float):
        if self.out_dir is not None:
            self.checkpoint(epoch, acc).save(self.out_dir / "best.ckpt")


def train_loop(cfg: TrainConfig, vocab: Vocabulary, train, valid, out_dir=None) -> TrainResult:
    return Trainer(cfg, vocab, out_dir).fit(train, valid)


def model_from_checkpoint(ckpt: Checkpoint) -> WorkingMemoryNetwork:
    model = WorkingMemoryNetwork(len(ckpt.vocab), len(ckpt.vocab.answers), ckpt.config,
                                 np.random.default_rng(ckpt.config.seed))
    model.load_state_dict(ckpt.params)
    return model
