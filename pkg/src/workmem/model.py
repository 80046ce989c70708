"""The assembled Working Memory Network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionController, AttentionTrace
from .babi import Batch
from .config import TrainConfig
from .encoder import Encoder
from .reasoning import Readout, RelationNetwork, relation_pool
from .tensor import Parameter, Tensor


@dataclass
class Forward:
    probs: Tensor          # [B, |A|]
    trace: AttentionTrace


class WorkingMemoryNetwork:
    def __init__(self, vocab_size: int, n_answers: int, cfg: TrainConfig,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        dtype = np.dtype(cfg.dtype)
        self.cfg = cfg
        self.encoder = Encoder(vocab_size, cfg.d, rng, dtype, cfg.max_facts, cfg.temporal_encoding)
        self.controller = AttentionController(cfg.d, cfg.heads, cfg.hops, rng, dtype, cfg.transition_hidden)
        self.rn = RelationNetwork(cfg.d, rng, dtype, cfg.g_hidden, cfg.g_layers, cfg.use_f_phi, cfg.pair_mode)
        self.readout = Readout(n_answers, self.rn.out_dim, rng, dtype)
        names = [p.name for p in self.parameters()]
        assert len(names) == len(set(names)), "duplicate parameter names"

    def parameters(self) -> list[Parameter]:
        return (self.encoder.parameters() + self.controller.parameters()
                + self.rn.parameters() + self.readout.parameters())

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def regularized(self) -> list[Parameter]:
        """Dense-layer weight matrices (biases, embeddings and GRUs excluded)."""
        return ([self.controller.heads.W_m, self.controller.heads.W_o,
                 self.controller.transition.W1, self.controller.transition.W2]
                + [W for W, _ in self.rn.g.layers]
                + ([W for W, _ in self.rn.f_phi.layers] if self.rn.f_phi is not None else [])
                + [self.readout.V])

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, batch: Batch) -> Forward:
        bank = self.encoder(batch)
        buffer, trace = self.controller(bank)
        r = relation_pool(buffer, bank.question, self.rn)
        return Forward(self.readout(r), trace)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters().items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=p.dtype)
