"""Versioned binary checkpoint container.

Layout: magic ``WMCK``, u32 format version, then tagged sections
(4-byte tag, u32 length, payload) in a fixed order:

    CONF  training config as key=value text
    VOCB  vocabulary (tokens, then answers)
    PARM  named parameter table
    ADAM  u64 step, then first/second moments as a parameter table
    EPCH  u32 epoch
    RNGS  shuffle-rng state as JSON
    BEST  f64 best validation accuracy
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .babi import Vocabulary
from .config import TrainConfig, train_config_from_text, train_config_to_text
from .tensor import dump_arrays, load_arrays

MAGIC = b"WMCK"
VERSION = 1
_ORDER = (b"CONF", b"VOCB", b"PARM", b"ADAM", b"EPCH", b"RNGS", b"BEST")


class CheckpointVersionError(ValueError):
    def __init__(self, found: int, expected: int = VERSION):
        super().__init__(f"checkpoint format version {found}, this build reads version {expected}")
        self.found, self.expected = found, expected


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    adam_step: int = 0
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    best_metric: float = 0.0
    version: int = VERSION

    def to_bytes(self) -> bytes:
        moments = {f"m.{k}": v for k, v in self.adam_m.items()}
        moments.update({f"v.{k}": v for k, v in self.adam_v.items()})
        payload = {
            b"CONF": train_config_to_text(self.config).encode("utf-8"),
            b"VOCB": self.vocab.dumps().encode("utf-8"),
            b"PARM": dump_arrays(self.params),
            b"ADAM": struct.pack("<Q", self.adam_step) + dump_arrays(moments),
            b"EPCH": struct.pack("<I", self.epoch),
            b"RNGS": json.dumps(self.rng_state, sort_keys=True).encode("utf-8"),
            b"BEST": struct.pack("<d", self.best_metric),
        }
        out = [MAGIC, struct.pack("<I", self.version)]
        for tag in _ORDER:
            out.append(tag + struct.pack("<I", len(payload[tag])) + payload[tag])
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise ValueError("not a workmem checkpoint")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise CheckpointVersionError(version)
        pos, sections = 8, {}
        while pos < len(blob):
            tag = blob[pos:pos + 4]
            (n,) = struct.unpack_from("<I", blob, pos + 4)
            sections[tag] = blob[pos + 8:pos + 8 + n]
            pos += 8 + n
        missing = [t.decode() for t in _ORDER if t not in sections]
        if missing:
            raise ValueError(f"checkpoint lacks sections {missing}")
        (step,) = struct.unpack_from("<Q", sections[b"ADAM"])
        moments = load_arrays(sections[b"ADAM"][8:])
        return cls(
            config=train_config_from_text(sections[b"CONF"].decode("utf-8")),
            vocab=Vocabulary.loads(sections[b"VOCB"].decode("utf-8")),
            params=load_arrays(sections[b"PARM"]),
            adam_step=step,
            adam_m={k[2:]: v for k, v in moments.items() if k.startswith("m.")},
            adam_v={k[2:]: v for k, v in moments.items() if k.startswith("v.")},
            epoch=struct.unpack("<I", sections[b"EPCH"])[0],
            rng_state=json.loads(sections[b"RNGS"].decode("utf-8")),
            best_metric=struct.unpack("<d", sections[b"BEST"])[0],
            version=version,
        )

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
