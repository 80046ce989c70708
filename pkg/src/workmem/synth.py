"""Generator for single-supporting-fact stories in bAbI task-1 line format.

Used when the real bAbI files are not available: stories are 15 lines,
two movement facts before each of five "Where is X?" questions, exactly
like the original task-1 layout.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

PEOPLE = ["Mary", "John", "Sandra", "Daniel"]
PLACES = ["bathroom", "bedroom", "garden", "hallway", "kitchen", "office"]
VERBS = ["moved to", "went to", "went back to", "journeyed to", "travelled to"]


def task1_story(rng: np.random.Generator, n_questions: int = 5) -> list[str]:
    lines: list[str] = []
    where: dict[str, tuple[str, int]] = {}
    no = 0
    for _ in range(n_questions):
        for _ in range(2):
            no += 1
            who = PEOPLE[rng.integers(len(PEOPLE))]
            place = PLACES[rng.integers(len(PLACES))]
            verb = VERBS[rng.integers(len(VERBS))]
            lines.append(f"{no} {who} {verb} the {place}.")
            where[who] = (place, no)
        no += 1
        who = sorted(where)[rng.integers(len(where))]
        place, sup = where[who]
        lines.append(f"{no} Where is {who}? \t{place}\t{sup}")
    return lines


def task1_text(n_samples: int, seed: int) -> str:
    rng = np.random.default_rng(seed)
    lines: list[str] = []
    for _ in range(-(-n_samples // 5)):
        lines.extend(task1_story(rng))
    # trim to an exact sample count by dropping trailing questions
    out, seen = [], 0
    for line in lines:
        if "\t" in line:
            if seen == n_samples:
                break
            seen += 1
        out.append(line)
    return "\n".join(out) + "\n"


def write_task1(out_dir, n_train: int = 1000, n_test: int = 1000, seed: int = 0) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train = out_dir / "qa1_single-supporting-fact_train.txt"
    test = out_dir / "qa1_single-supporting-fact_test.txt"
    train.write_text(task1_text(n_train, seed), encoding="utf-8")
    test.write_text(task1_text(n_test, seed + 1), encoding="utf-8")
    return train, test


def main(argv=None):
    ap = argparse.ArgumentParser(description="write bAbI task-1 style train/test files")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=1000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    for p in write_task1(args.out_dir, args.train, args.test, args.seed):
        print(p)


if __name__ == "__main__":
    main()
