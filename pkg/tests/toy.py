"""Small shared fixtures for the test suite."""
import numpy as np

from workmem import babi
from workmem.config import TrainConfig
from workmem.synth import task1_text

ACCEPTANCE_LINES: list[str] = []

TOY_STORY = """1 mary went to office.
2 john went to garden.
3 mary went to kitchen.
4 where is mary?\tkitchen\t3
1 john went to office.
2 where is john?\toffice\t1
1 sandra went to hall.
2 mary went to garden.
3 where is sandra?\thall\t1
"""


def toy_vocab_and_samples():
    raws = babi.parse_babi_lines(TOY_STORY.splitlines(), task_id=1)
    vocab = babi.build_vocabulary(raws)
    return vocab, babi.vectorize(raws, vocab, 3)


def toy_config(**kw) -> TrainConfig:
    base = dict(d=4, heads=2, hops=2, max_facts=3, transition_hidden=3, g_hidden=6,
                dtype="float64", epochs=0)
    base.update(kw)
    return TrainConfig(**base)


def task1_samples(n, seed=0):
    raws = babi.parse_babi_lines(task1_text(n, seed).splitlines(), task_id=1)
    vocab = babi.build_vocabulary(raws)
    return vocab, babi.vectorize(raws, vocab)


def write_task_files(directory, tasks=(1,), n_train=40, n_test=20, seed=0):
    """bAbI-named task files; every task reuses task-1 style stories."""
    directory.mkdir(parents=True, exist_ok=True)
    for t in tasks:
        name = babi.TASK_NAMES[t].lower().replace(" ", "-")
        (directory / f"qa{t}_{name}_train.txt").write_text(task1_text(n_train, seed + t))
        (directory / f"qa{t}_{name}_test.txt").write_text(task1_text(n_test, seed + 100 + t))
    return directory
