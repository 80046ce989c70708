"""Input module: word embeddings and GRU sentence encoders."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .babi import Batch
from .tensor import Parameter, Tensor


def glorot(name, shape, rng, dtype, fan_in=None, fan_out=None) -> Parameter:
    fan_in = fan_in or shape[-2]
    fan_out = fan_out or shape[-1]
    return Parameter(name, T.glorot_normal_init(shape, fan_in, fan_out, rng, dtype))


def zeros(name, shape, dtype) -> Parameter:
    return Parameter(name, np.zeros(shape, dtype=dtype))


class GRUCell:
    """Gated recurrent unit, row-vector convention (``x @ W``).

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    c = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * c
    """

    def __init__(self, prefix: str, d_in: int, d_hidden: int, rng, dtype=np.float32):
        self.d_hidden = d_hidden
        for gate in "zrh":
            setattr(self, f"W_{gate}", glorot(f"{prefix}.W_{gate}", (d_in, d_hidden), rng, dtype))
            setattr(self, f"U_{gate}", glorot(f"{prefix}.U_{gate}", (d_hidden, d_hidden), rng, dtype))
            setattr(self, f"b_{gate}", zeros(f"{prefix}.b_{gate}", (d_hidden,), dtype))

    def parameters(self) -> list[Parameter]:
        return [getattr(self, f"{k}_{g}") for g in "zrh" for k in "WUb"]

    def step(self, xz: Tensor, xr: Tensor, xh: Tensor, h: Tensor) -> Tensor:
        z = T.sigmoid(T.add_bias(xz + h @ self.U_z, self.b_z))
        r = T.sigmoid(T.add_bias(xr + h @ self.U_r, self.b_r))
        c = T.tanh(T.add_bias(xh + (r * h) @ self.U_h, self.b_h))
        return (1.0 - z) * h + z * c

    def encode(self, x: Tensor, lengths) -> Tensor:
        """Final hidden state of each row of ``x`` [N, M, d_in], reading only
        the first ``lengths[n]`` steps of row ``n``."""
        lengths = np.asarray(lengths)
        if lengths.ndim == 0:
            lengths = lengths.reshape(1)
            x = T.reshape(x, (1,) + x.shape)
        if (lengths < 1).any():
            raise T.ContractError("gru_encode needs every length >= 1")
        if (lengths > x.shape[1]).any():
            raise T.ContractError("gru_encode: length exceeds padded sequence")
        N, steps = x.shape[0], int(lengths.max())
        xz = T.linear(x, self.W_z)
        xr = T.linear(x, self.W_r)
        xh = T.linear(x, self.W_h)
        h = Tensor(np.zeros((N, self.d_hidden), dtype=x.dtype))
        for t in range(steps):
            new = self.step(xz[:, t, :], xr[:, t, :], xh[:, t, :], h)
            live = t < lengths
            if live.all():
                h = new
            else:
                h = T.where(np.repeat(live[:, None], self.d_hidden, axis=1), new, h)
        return h


@dataclass
class MemoryBank:
    memories: Tensor      # [B, L, d]; rows past story_lengths are zero
    mask: np.ndarray      # [B, L] bool
    question: Tensor      # [B, d]

    def story(self, b: int) -> np.ndarray:
        return self.memories.data[b, self.mask[b]]


class Encoder:
    def __init__(self, vocab_size: int, d: int, rng, dtype=np.float32,
                 max_facts: int = 30, temporal: bool = True):
        self.d = d
        self.embedding = glorot("encoder.embedding.W", (vocab_size, d), rng, dtype)
        self.embedding.data[0] = 0
        self.fact_gru = GRUCell("encoder.fact_gru", d, d, rng, dtype)
        self.question_gru = GRUCell("encoder.question_gru", d, d, rng, dtype)
        self.temporal = glorot("encoder.temporal.T", (max_facts, d), rng, dtype) if temporal else None

    def parameters(self) -> list[Parameter]:
        ps = [self.embedding] + self.fact_gru.parameters() + self.question_gru.parameters()
        if self.temporal is not None:
            ps.append(self.temporal)
        return ps

    def embed(self, tokens) -> Tensor:
        return T.embedding(self.embedding, tokens)

    def encode_sentences(self, tokens: np.ndarray, lengths: np.ndarray, gru: GRUCell) -> Tensor:
        width = int(lengths.max())
        return gru.encode(self.embed(tokens[:, :width]), lengths)

    def __call__(self, batch: Batch) -> MemoryBank:
        B, L = batch.fact_lengths.shape
        mask = np.arange(L)[None, :] < batch.story_lengths[:, None]
        rows, cols = np.nonzero(mask)
        sent = self.encode_sentences(batch.facts[rows, cols], batch.fact_lengths[rows, cols], self.fact_gru)
        if self.temporal is not None:
            if L > self.temporal.shape[0]:
                raise T.ContractError(f"story of {L} facts exceeds max_facts={self.temporal.shape[0]}")
            recency = batch.story_lengths[rows] - 1 - cols
            sent = sent + T.take_rows(self.temporal, recency)
        # scatter the real sentences into a zero-padded [B, L, d] block
        place = np.zeros(B * L, dtype=np.int64)
        place[rows * L + cols] = np.arange(1, len(rows) + 1)
        pad = Tensor(np.zeros((1, self.d), dtype=sent.dtype))
        memories = T.take_rows(T.concat([pad, sent], axis=0), place).reshape(B, L, self.d)
        u = self.encode_sentences(batch.question, batch.question_lengths, self.question_gru)
        return MemoryBank(memories, mask, u)
