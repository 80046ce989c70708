"""bAbI task files: parsing, vocabulary, support windowing and batching."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

MAX_FACTS = 30
PAD = 0

TASK_NAMES = {
    1: "1 supporting fact",
    2: "2 supporting facts",
    3: "3 supporting facts",
    4: "2 argument relations",
    5: "3 argument relations",
    6: "yes/no questions",
    7: "counting",
    8: "lists/sets",
    9: "simple negation",
    10: "indefinite knowledge",
    11: "basic coreference",
    12: "conjunction",
    13: "compound coreference",
    14: "time reasoning",
    15: "basic deduction",
    16: "basic induction",
    17: "positional reasoning",
    18: "size reasoning",
    19: "path finding",
    20: "agent's motivations",
}


class BabiParseError(ValueError):
    pass


@dataclass
class RawSample:
    facts: list[tuple[int, list[str]]]  # (line number, tokens), oldest first
    question: list[str]
    answer: str
    support: list[int]  # line numbers
    qline: int
    task_id: int = 0


@dataclass
class Sample:
    facts: list[list[int]]
    question: list[int]
    answer: int
    task_id: int = 0
    support_flags: list[bool] = field(default_factory=list)
    fact_text: list[str] = field(default_factory=list)


def tokenize(text: str) -> list[str]:
    return [t for t in (w.strip(".?!").lower() for w in text.split()) if t]


_LINE = re.compile(r"^(\d+)\s+(.*)$")


def parse_babi_lines(lines: Iterable[str], task_id: int = 0, source: str = "<string>") -> list[RawSample]:
    samples: list[RawSample] = []
    story: list[tuple[int, list[str]]] = []
    last_no = 0
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        m = _LINE.match(line)
        if m is None:
            raise BabiParseError(f"{source}:{lineno}: line does not start with an integer")
        n, body = int(m.group(1)), m.group(2)
        if n == 1 or n <= last_no:
            story = []
        last_no = n
        if "\t" in body or "?" in body:
            parts = body.split("\t")
            if len(parts) < 2 or not parts[1].strip():
                raise BabiParseError(f"{source}:{lineno}: question without tab-separated answer")
            sup = parts[2].split() if len(parts) > 2 else []
            try:
                support = [int(s) for s in sup]
            except ValueError:
                raise BabiParseError(f"{source}:{lineno}: bad supporting ids {parts[2]!r}") from None
            samples.append(RawSample(
                facts=[(no, list(toks)) for no, toks in story],
                question=tokenize(parts[0]),
                answer=parts[1].strip().lower(),
                support=support,
                qline=n,
                task_id=task_id,
            ))
        else:
            story.append((n, tokenize(body)))
    return samples


def parse_babi_file(path, task_id: int | None = None) -> list[RawSample]:
    path = Path(path)
    if task_id is None:
        task_id = task_id_from_name(path.name) or 0
    with open(path, encoding="utf-8") as fh:
        return parse_babi_lines(fh, task_id=task_id, source=str(path))


def task_id_from_name(name: str) -> int | None:
    m = re.match(r"qa(\d+)_", name)
    return int(m.group(1)) if m else None


def serialize_samples(samples: Sequence[RawSample]) -> str:
    """bAbI text with one story per sample (original line numbers kept)."""
    out = []
    for s in samples:
        for no, toks in s.facts:
            out.append(f"{no} {' '.join(toks)}.")
        sup = " ".join(str(i) for i in s.support)
        out.append(f"{s.qline} {' '.join(s.question)}?\t{s.answer}\t{sup}")
    return "\n".join(out) + "\n"


def find_task_file(data_dir, task_id: int, split: str) -> Path | None:
    hits = sorted(Path(data_dir).glob(f"qa{task_id}_*_{split}.txt"))
    return hits[0] if hits else None


def load_tasks(data_dir, tasks: Iterable[int], split: str = "train",
               max_per_task: int | None = None) -> dict[int, list[RawSample]]:
    out = {}
    for t in tasks:
        path = find_task_file(data_dir, t, split)
        if path is None:
            raise FileNotFoundError(f"no {split} file for task {t} in {data_dir}")
        samples = parse_babi_file(path, task_id=t)
        out[t] = samples[:max_per_task] if max_per_task else samples
    return out


# ------------------------------------------------------------- vocabulary

@dataclass
class Vocabulary:
    itos: list[str]  # index 0 is padding
    answers: list[str]

    def __post_init__(self):
        self.stoi = {t: i for i, t in enumerate(self.itos) if i != PAD}
        self.answer_index = {a: i for i, a in enumerate(self.answers)}

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, PAD) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids if i != PAD]

    def dumps(self) -> str:
        return "\n".join(self.itos[1:]) + "\n#answers\n" + "\n".join(self.answers) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        head, _, tail = text.partition("#answers\n")
        tokens = [t for t in head.split("\n") if t]
        answers = [t for t in tail.split("\n") if t]
        return cls(["<pad>"] + tokens, answers)


def build_vocabulary(samples: Iterable[RawSample]) -> Vocabulary:
    tokens: set[str] = set()
    answers: set[str] = set()
    n = 0
    for s in samples:
        n += 1
        for _, toks in s.facts:
            tokens.update(toks)
        tokens.update(s.question)
        tokens.add(s.answer)
        answers.add(s.answer)
    if n == 0:
        raise ValueError("cannot build a vocabulary from zero samples")
    return Vocabulary(["<pad>"] + sorted(tokens), sorted(answers))


def window_facts(raw: RawSample, vocab: Vocabulary, max_facts: int = MAX_FACTS) -> Sample | None:
    """Keep the ``max_facts`` most recent facts; None if the story is empty."""
    if not raw.facts:
        log.warning("skipping question %r on line %d: no facts", " ".join(raw.question), raw.qline)
        return None
    kept = raw.facts[-max_facts:]
    sup = set(raw.support)
    return Sample(
        facts=[vocab.encode(toks) for _, toks in kept],
        question=vocab.encode(raw.question),
        answer=vocab.answer_index.get(raw.answer, -1),
        task_id=raw.task_id,
        support_flags=[no in sup for no, _ in kept],
        fact_text=[" ".join(toks) for _, toks in kept],
    )


def vectorize(raws: Iterable[RawSample], vocab: Vocabulary, max_facts: int = MAX_FACTS) -> list[Sample]:
    return [s for s in (window_facts(r, vocab, max_facts) for r in raws) if s is not None]


# ---------------------------------------------------------------- batches

@dataclass
class Batch:
    facts: np.ndarray        # [B, L, M] int, 0-padded
    fact_lengths: np.ndarray  # [B, L]
    story_lengths: np.ndarray  # [B]
    question: np.ndarray     # [B, Q]
    question_lengths: np.ndarray  # [B]
    answers: np.ndarray      # [B]
    task_ids: np.ndarray     # [B]

    def __len__(self):
        return len(self.answers)


def collate(samples: Sequence[Sample]) -> Batch:
    B = len(samples)
    L = max(len(s.facts) for s in samples)
    M = max(max(len(f) for f in s.facts) for s in samples)
    M = max(M, 1)
    Q = max(max(len(s.question) for s in samples), 1)
    facts = np.zeros((B, L, M), dtype=np.int64)
    flen = np.zeros((B, L), dtype=np.int64)
    ques = np.zeros((B, Q), dtype=np.int64)
    for b, s in enumerate(samples):
        for i, f in enumerate(s.facts):
            facts[b, i, :len(f)] = f
            flen[b, i] = len(f)
        ques[b, :len(s.question)] = s.question
    return Batch(
        facts=facts,
        fact_lengths=flen,
        story_lengths=np.array([len(s.facts) for s in samples], dtype=np.int64),
        question=ques,
        question_lengths=np.array([len(s.question) for s in samples], dtype=np.int64),
        answers=np.array([s.answer for s in samples], dtype=np.int64),
        task_ids=np.array([s.task_id for s in samples], dtype=np.int64),
    )


def make_batches(samples: Sequence[Sample], batch_size: int = 32,
                 rng: np.random.Generator | None = None) -> Iterator[Batch]:
    """Yield padded batches; shuffled when ``rng`` is given."""
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        yield collate([samples[i] for i in order[start:start + batch_size]])


def split_validation(samples: Sequence, fraction: float = 0.10,
                     rng: np.random.Generator | None = None) -> tuple[list, list]:
    """Per-task stratified hold-out."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = rng or np.random.default_rng(0)
    by_task: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        by_task.setdefault(s.task_id, []).append(i)
    valid_idx: set[int] = set()
    for t in sorted(by_task):
        idx = by_task[t]
        n_valid = int(round(len(idx) * fraction))
        valid_idx.update(int(i) for i in rng.permutation(idx)[:n_valid])
    train = [s for i, s in enumerate(samples) if i not in valid_idx]
    valid = [s for i, s in enumerate(samples) if i in valid_idx]
    return train, valid
