"""Multi-head attentional controller filling the working-memory buffer."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoder import MemoryBank, glorot, zeros
from .tensor import ContractError, Parameter, Tensor

MASKED_LOGIT = -1e9


def scaled_dot_attention(query: Tensor, memories: Tensor, W_m: Tensor) -> tuple[Tensor, Tensor]:
    """Single-head read of one story.

    query [d], memories [L, d], W_m [d, d].  Projected memories only enter
    the logits; the output averages the raw memories.
    """
    if memories.ndim != 2 or memories.shape[0] < 1:
        raise ContractError("attention needs a non-empty [L, d] memory bank")
    d = memories.shape[1]
    projected = T.einsum("ed,ld->le", W_m, memories)
    logits = T.einsum("e,le->l", query, projected) / np.sqrt(d)
    alpha = T.softmax(logits, axis=0)
    return T.einsum("l,ld->d", alpha, memories), alpha


class HeadBank:
    def __init__(self, d: int, heads: int, rng, dtype=np.float32):
        self.d, self.heads = d, heads
        self.W_m = glorot("attention.heads.W_m", (heads, d, d), rng, dtype)
        self.W_o = glorot("attention.heads.W_o", (heads * d, d), rng, dtype)

    def parameters(self) -> list[Parameter]:
        return [self.W_m, self.W_o]

    def read(self, cond: Tensor, memories: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        """Batched multi-head read.

        cond [B, d], memories [B, L, d], mask [B, L] -> o [B, d] and the
        attention weights [B, S, L].
        """
        B, L, d = memories.shape
        if not mask.any(axis=1).all():
            raise ContractError("attention over an empty memory bank")
        projected = T.einsum("sed,bld->bsle", self.W_m, memories)
        logits = T.einsum("be,bsle->bsl", cond, projected) / np.sqrt(d)
        if not mask.all():
            offset = np.where(mask, 0.0, MASKED_LOGIT).astype(logits.dtype)
            logits = logits + Tensor(np.repeat(offset[:, None, :], self.heads, axis=1))
        alpha = T.softmax(logits, axis=-1)
        h = T.einsum("bsl,bld->bsd", alpha, memories).reshape(B, self.heads * d)
        return h @ self.W_o, alpha.data


class TransitionNet:
    """Two-layer MLP from one hop's output to the next hop's conditioner."""

    def __init__(self, d: int, hidden: int, rng, dtype=np.float32):
        self.W1 = glorot("attention.transition.W1", (d, hidden), rng, dtype)
        self.b1 = zeros("attention.transition.b1", (hidden,), dtype)
        self.W2 = glorot("attention.transition.W2", (hidden, d), rng, dtype)
        self.b2 = zeros("attention.transition.b2", (d,), dtype)

    def parameters(self) -> list[Parameter]:
        return [self.W1, self.b1, self.W2, self.b2]

    def __call__(self, o: Tensor) -> Tensor:
        return T.linear(T.tanh(T.linear(o, self.W1, self.b1)), self.W2, self.b2)


@dataclass
class AttentionTrace:
    """weights[b, k, s, i]: hop k, head s, memory i."""

    weights: np.ndarray
    mask: np.ndarray

    @property
    def head_sums(self) -> np.ndarray:
        return self.weights.sum(axis=2)

    def sample(self, b: int) -> "AttentionTrace":
        n = int(self.mask[b].sum())
        return AttentionTrace(self.weights[b:b + 1, :, :, :n], self.mask[b:b + 1, :n])

    def records(self, sentences: Sequence[str] | None = None, b: int = 0) -> list[dict]:
        n = int(self.mask[b].sum())
        out = []
        H, S = self.weights.shape[1:3]
        for k in range(H):
            for s in range(S):
                for i in range(n):
                    out.append({
                        "hop": k + 1,
                        "head": s + 1,
                        "memory_index": i + 1,
                        "weight": float(self.weights[b, k, s, i]),
                        "sentence_text": sentences[i] if sentences else "",
                    })
        return out


def dump_trace(records: list[dict], path) -> None:
    Path(path).write_text(json.dumps(records, indent=1) + "\n", encoding="utf-8")


def load_trace(path) -> tuple[AttentionTrace, list[str]]:
    records = json.loads(Path(path).read_text(encoding="utf-8"))
    H = max(r["hop"] for r in records)
    S = max(r["head"] for r in records)
    L = max(r["memory_index"] for r in records)
    w = np.zeros((1, H, S, L))
    text = [""] * L
    for r in records:
        w[0, r["hop"] - 1, r["head"] - 1, r["memory_index"] - 1] = r["weight"]
        text[r["memory_index"] - 1] = r["sentence_text"]
    return AttentionTrace(w, np.ones((1, L), dtype=bool)), text


@dataclass
class WorkingMemoryBuffer:
    slots: list[Tensor] = field(default_factory=list)
    capacity: int = 4

    def append(self, o: Tensor):
        if len(self.slots) >= self.capacity:
            raise ContractError("working memory buffer is full")
        self.slots.append(o)

    def __len__(self):
        return len(self.slots)

    def stacked(self) -> Tensor:
        """[B, H, d] view of the buffer."""
        B, d = self.slots[0].shape
        return T.concat([o.reshape(B, 1, d) for o in self.slots], axis=1)


class AttentionController:
    def __init__(self, d: int, heads: int, hops: int, rng, dtype=np.float32, transition_hidden: int = 15):
        if hops < 1:
            raise ContractError("need at least one hop")
        self.hops = hops
        self.heads = HeadBank(d, heads, rng, dtype)
        self.transition = TransitionNet(d, transition_hidden, rng, dtype)

    def parameters(self) -> list[Parameter]:
        return self.heads.parameters() + self.transition.parameters()

    def __call__(self, bank: MemoryBank) -> tuple[WorkingMemoryBuffer, AttentionTrace]:
        return run_hops(bank, self.heads, self.transition, self.hops)


def run_hops(bank: MemoryBank, heads: HeadBank, transition: TransitionNet, hops: int):
    if hops < 1:
        raise ContractError("need at least one hop")
    buffer = WorkingMemoryBuffer(capacity=hops)
    weights = []
    cond = bank.question
    for k in range(hops):
        o, alpha = heads.read(cond, bank.memories, bank.mask)
        buffer.append(o)
        weights.append(alpha)
        if k + 1 < hops:
            cond = transition(o)
    trace = AttentionTrace(np.stack(weights, axis=1), bank.mask)
    return buffer, trace
