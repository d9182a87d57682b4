"""Train / CalBased / CalFree partitions and subject-wise folds.

Randomness comes from SplitMix64 (Steele, Lea & Flood 2014) driving a
Fisher-Yates shuffle, so the same seed yields the same partition on any
platform or implementation that follows the same two steps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import CuratedDataset
from .errors import DegenerateFraction, TooFewSubjects

_MASK64 = (1 << 64) - 1

PARTITIONS = ("train", "cal_based", "cal_free")


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def shuffle(self, items: list) -> list:
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: CuratedDataset
    cal_based: CuratedDataset
    cal_free: CuratedDataset
    seed: int

    def partitions(self):
        return {"train": self.train, "cal_based": self.cal_based, "cal_free": self.cal_free}

    def check(self) -> list[str]:
        """Names of violated split invariants (empty when consistent)."""
        problems = []
        train_subj = set(self.train.segment_subjects.tolist())
        cb_subj = set(self.cal_based.segment_subjects.tolist())
        cf_subj = set(self.cal_free.segment_subjects.tolist())
        if cf_subj & (train_subj | cb_subj):
            problems.append("cal_free_overlap")
        if not cb_subj <= train_subj:
            problems.append("cal_based_not_subset")
        seen = np.concatenate([p.source_index for p in (self.train, self.cal_based, self.cal_free)])
        if len(np.unique(seen)) != len(seen):
            problems.append("segment_reuse")
        return problems


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def build_split(
    ds: CuratedDataset,
    cal_free_subject_fraction: float = 0.056,
    cal_based_segment_fraction: float = 0.1,
    seed: int = 0,
) -> DatasetSplit:
    """Partition ``ds`` by subject (CalFree) and by segment tail (CalBased).

    A shuffled ``round(fraction * n_subjects)`` subjects (at least one) go to
    CalFree with all their segments. Every other subject with at least two
    segments hands its last ``max(1, round(fraction * n))`` segments (file
    order, capped at ``n - 1``) to CalBased; the rest is Train.

    Partition ``source_index`` values are positions in ``ds`` itself, which
    is what a split manifest records and ``apply_split_manifest`` reads.
    """
    for name, f in (("cal_free_subject_fraction", cal_free_subject_fraction),
                    ("cal_based_segment_fraction", cal_based_segment_fraction)):
        if not 0.0 < f < 1.0:
            raise DegenerateFraction(f"{name} must lie in (0, 1), got {f}")
    ds = replace(ds, source_index=None)
    counts = ds.segment_counts()
    present = [s.subject_id for s in ds.subjects if s.subject_id in counts]
    if len(present) < 3:
        raise TooFewSubjects(f"need at least 3 subjects with segments, got {len(present)}")

    n_free = max(1, _round_half_up(cal_free_subject_fraction * len(present)))
    if n_free >= len(present):
        raise DegenerateFraction("CalFree would take every subject")
    order = SplitMix64(seed).shuffle(present)
    free = set(order[:n_free])

    by_subject: dict[str, list[int]] = {}
    for i, sid in enumerate(ds.segment_subjects.tolist()):
        by_subject.setdefault(sid, []).append(i)

    train_idx, cb_idx, cf_idx = [], [], []
    for sid in present:
        idx = by_subject[sid]
        if sid in free:
            cf_idx.extend(idx)
            continue
        n = len(idx)
        hold = 0 if n < 2 else min(n - 1, max(1, _round_half_up(cal_based_segment_fraction * n)))
        train_idx.extend(idx[: n - hold])
        cb_idx.extend(idx[n - hold:])
    if not cb_idx:
        raise DegenerateFraction("CalBased would be empty (no subject has two segments)")
    return DatasetSplit(
        train=ds.subset(sorted(train_idx)),
        cal_based=ds.subset(sorted(cb_idx)),
        cal_free=ds.subset(sorted(cf_idx)),
        seed=seed,
    )


def split_manifest_rows(split: DatasetSplit):
    for name, part in split.partitions().items():
        for sid, src in zip(part.segment_subjects.tolist(), part.source_index.tolist()):
            yield name, sid, src


def write_split_manifest(split: DatasetSplit, path) -> None:
    with open(path, "w") as fh:
        fh.write("partition,subject_id,segment_index\n")
        for name, sid, src in split_manifest_rows(split):
            fh.write(f"{name},{sid},{src}\n")


def read_split_manifest(path) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {p: [] for p in PARTITIONS}
    with open(path) as fh:
        next(fh)
        for line in fh:
            name, _sid, idx = line.strip().split(",")
            out[name].append(int(idx))
    return out


def apply_split_manifest(ds: CuratedDataset, path, seed: int = 0) -> DatasetSplit:
    rows = read_split_manifest(Path(path))
    return DatasetSplit(*(ds.subset(rows[p]) for p in PARTITIONS), seed=seed)


# ---------------------------------------------------------------------------
# Folds


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict
    seed: int

    def fold_subjects(self, fold: int) -> list[str]:
        return [s for s, f in self.assignment.items() if f == fold]

    def sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.assignment.values():
            sizes[f] += 1
        return sizes


def build_folds(train: CuratedDataset, k: int = 10, seed: int = 0) -> FoldPlan:
    """Deal shuffled subjects round-robin into ``k`` folds."""
    if k < 2:
        raise ValueError("k must be at least 2")
    subjects = sorted(set(train.segment_subjects.tolist()))
    if len(subjects) < k:
        raise TooFewSubjects(f"{len(subjects)} subjects cannot fill {k} folds")
    order = SplitMix64(seed).shuffle(subjects)
    assignment = {sid: i % k for i, sid in enumerate(order)}
    return FoldPlan(k=k, assignment=dict(sorted(assignment.items())), seed=seed)


def fold_datasets(train: CuratedDataset, plan: FoldPlan, fold: int):
    """(fit, held_out) views of ``train`` for one fold."""
    held = np.array([plan.assignment[s] == fold for s in train.segment_subjects.tolist()], dtype=bool)
    return train.subset(np.flatnonzero(~held)), train.subset(np.flatnonzero(held))
