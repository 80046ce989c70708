"""Run configuration and its ``key=value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    d: int = 30
    heads: int = 8
    hops: int = 4
    max_facts: int = 30
    transition_hidden: int = 15
    g_hidden: int = 128
    g_layers: int = 3
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 400
    clip_norm: float = 40.0
    l2: float = 1e-3
    seed: int = 0
    restart: bool = False
    restart_lr: float = 1e-5
    anneal_every: int = 5
    anneal_factor: float = 0.5
    restart_epochs: int = 20
    use_f_phi: bool = False
    pair_mode: str = "ordered"
    temporal_encoding: bool = True
    valid_fraction: float = 0.10
    dtype: str = "float32"


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: str = ""
    out_dir: str = "runs/default"
    tasks: str = "1-20"
    max_samples_per_task: int = 0
    threads: int = 1

    def task_list(self) -> list[int]:
        return parse_task_list(self.tasks)


def parse_task_list(text: str) -> list[int]:
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out or any(not 1 <= t <= 20 for t in out):
        raise ConfigError(f"tasks must name bAbI tasks 1..20, got {text!r}")
    return out


def _coerce(kind, raw: str):
    if kind in (bool, "bool"):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw.strip()


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
_RUN_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "train"}


def train_config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in fields(cfg))


def train_config_from_text(text: str) -> TrainConfig:
    return parse_config(text).train


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment; unknown keys fail."""
    train_kw, run_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
            raw = raw[1:-1]
        if key in _TRAIN_FIELDS:
            target, kind = train_kw, _TRAIN_FIELDS[key].type
        elif key in _RUN_FIELDS:
            target, kind = run_kw, _RUN_FIELDS[key].type
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            target[key] = _coerce(kind, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    cfg = RunConfig(train=TrainConfig(**train_kw), **run_kw)
    validate(cfg.train)
    cfg.task_list()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def dump_config(cfg: RunConfig) -> str:
    lines = [train_config_to_text(cfg.train)]
    for name in _RUN_FIELDS:
        lines.append(f"{name}={getattr(cfg, name)}\n")
    return "".join(lines)


def validate(cfg: TrainConfig):
    if cfg.pair_mode not in ("ordered", "unordered"):
        raise ConfigError(f"pair_mode must be 'ordered' or 'unordered', got {cfg.pair_mode!r}")
    if cfg.dtype not in ("float32", "float64"):
        raise ConfigError(f"dtype must be float32 or float64, got {cfg.dtype!r}")
    if cfg.hops < 1 or cfg.heads < 1 or cfg.d < 1:
        raise ConfigError("d, heads and hops must be positive")
    if cfg.epochs < 0 or cfg.batch_size < 1:
        raise ConfigError("epochs must be >= 0 and batch_size >= 1")
    if not 0 < cfg.valid_fraction < 1:
        raise ConfigError("valid_fraction must lie in (0, 1)")


def replace(cfg: TrainConfig, **kw) -> TrainConfig:
    return dataclasses.replace(cfg, **kw)
