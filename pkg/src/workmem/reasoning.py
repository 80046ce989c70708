"""Relation Network reasoning over the working-memory buffer, the answer
readout, and the full pairwise RN used as the complexity baseline."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import glorot, zeros
from .tensor import ContractError, Parameter, Tensor

PAIR_MODES = ("ordered", "unordered")


def count_pair_evals(mode: str, L: int, H: int, pair_mode: str = "ordered") -> int:
    """Logical g_theta evaluations per sample."""
    if mode == "wmemnn":
        n = H
    elif mode == "full_rn":
        n = L
    else:
        raise ContractError(f"unknown mode {mode!r}; expected 'wmemnn' or 'full_rn'")
    return n * n if pair_mode == "ordered" else n * (n + 1) // 2


class MLP:
    def __init__(self, prefix: str, sizes, rng, dtype=np.float32):
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]), 1):
            self.layers.append((glorot(f"{prefix}.W{i}", (a, b), rng, dtype),
                                zeros(f"{prefix}.b{i}", (b,), dtype)))

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer]

    def __call__(self, x: Tensor) -> Tensor:
        for W, b in self.layers:
            x = T.relu(T.linear(x, W, b))
        return x


class RelationNetwork:
    """g_theta over object pairs conditioned on the question, summed, then
    an optional f_phi."""

    def __init__(self, d: int, rng, dtype=np.float32, hidden: int = 128, layers: int = 3,
                 use_f_phi: bool = False, pair_mode: str = "ordered"):
        if pair_mode not in PAIR_MODES:
            raise ContractError(f"pair_mode must be one of {PAIR_MODES}")
        self.d = d
        self.pair_mode = pair_mode
        self.g = MLP("reasoning.g_theta", [3 * d] + [hidden] * layers, rng, dtype)
        self.f_phi = MLP("reasoning.f_phi", [hidden, hidden, hidden], rng, dtype) if use_f_phi else None
        self.out_dim = hidden
        self.pair_evals = 0  # logical g_theta evaluations since construction

    def parameters(self) -> list[Parameter]:
        ps = self.g.parameters()
        if self.f_phi is not None:
            ps += self.f_phi.parameters()
        return ps

    def pairs(self, objects: Tensor, u: Tensor) -> Tensor:
        """[B, P, 3d] rows ``[o_i; o_j; u]``."""
        B, n, d = objects.shape
        left = T.broadcast_to(objects.reshape(B, n, 1, d), (B, n, n, d))
        right = T.broadcast_to(objects.reshape(B, 1, n, d), (B, n, n, d))
        cond = T.broadcast_to(u.reshape(B, 1, 1, d), (B, n, n, d))
        rows = T.concat([left, right, cond], axis=-1).reshape(B, n * n, 3 * d)
        if self.pair_mode == "unordered":
            i, j = np.triu_indices(n)
            rows = rows[:, i * n + j, :]
        return rows

    def __call__(self, objects: Tensor, u: Tensor) -> Tensor:
        """objects [B, n, d], u [B, d] -> r [B, d_phi]."""
        B, n, _ = objects.shape
        if n < 1:
            raise ContractError("relation network needs at least one object")
        rows = self.pairs(objects, u)
        P = rows.shape[1]
        self.pair_evals += B * P
        g = self.g(rows.reshape(B * P, 3 * self.d)).reshape(B, P, self.out_dim)
        r = g.sum(axis=1)
        return self.f_phi(r) if self.f_phi is not None else r


class Readout:
    def __init__(self, n_answers: int, d_in: int, rng, dtype=np.float32):
        self.V = glorot("reasoning.readout.V", (n_answers, d_in), rng, dtype,
                        fan_in=d_in, fan_out=n_answers)

    def parameters(self) -> list[Parameter]:
        return [self.V]

    def __call__(self, r: Tensor) -> Tensor:
        """Answer distribution softmax(V r) for each row of r."""
        return T.softmax(T.einsum("bk,ak->ba", r, self.V), axis=-1)


def relation_pool(buffer, u: Tensor, rn: RelationNetwork) -> Tensor:
    """RN over the H working-memory slots."""
    return rn(buffer.stacked(), u)


def baseline_rn_full(memories: Tensor, u: Tensor, rn: RelationNetwork) -> Tensor:
    """RN over every pair of raw memories (no attention)."""
    return rn(memories, u)
