"""Subjects, segments and the on-disk dataset format.

A dataset lives in two text files:

* a manifest, ``subject_id,age,sex,bmi`` with ``sex`` in ``{F, M}`` and an
  empty ``bmi`` when unknown;
* a segments file whose first line is ``#rate=<hz> length=<L>`` followed by
  one ``subject_id,sbp,dbp,s1 s2 ... sL`` record per line.

Segments are kept column-wise (one ``(N, L)`` float32 array for the PPG and
flat arrays for labels) because every consumer downstream works on batches.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import LengthMismatch, MalformedLine, UnknownSubject

DEFAULT_SAMPLE_RATE_HZ = 125.0
DEFAULT_SEGMENT_LENGTH = 1250
MANIFEST_HEADER = ("subject_id", "age", "sex", "bmi")


class Sex(enum.Enum):
    FEMALE = "F"
    MALE = "M"

    @property
    def code(self) -> int:
        return 1 if self is Sex.MALE else 0


@dataclass(frozen=True)
class SubjectDemographics:
    subject_id: str
    age: int
    sex: Sex
    bmi: float = math.nan
    bmi_present: bool = True

    @classmethod
    def without_bmi(cls, subject_id: str, age: int, sex: Sex) -> "SubjectDemographics":
        return cls(subject_id, age, sex, math.nan, False)


@dataclass(frozen=True, eq=False)
class SegmentRecord:
    subject_id: str
    ppg: np.ndarray
    sbp_label: float
    dbp_label: float


def fmt_real(x: float) -> str:
    """Shortest lossless decimal for ``x`` with at least 6 significant digits."""
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    for p in range(6, 18):
        s = f"{x:#.{p}g}"
        if float(s) == x:
            return s
    return f"{x:#.17g}"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CuratedDataset:
    """Immutable collection of subjects and their fixed-length segments.

    ``source_index`` remembers each segment's position in the dataset it was
    carved from, so partitions can be written back as index manifests.
    """

    subjects: tuple[SubjectDemographics, ...]
    segment_subjects: np.ndarray
    ppg: np.ndarray
    sbp: np.ndarray
    dbp: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    segment_length: int = DEFAULT_SEGMENT_LENGTH
    source_index: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.segment_subjects)
        ppg = np.asarray(self.ppg, dtype=np.float32)
        if ppg.ndim != 2:
            ppg = ppg.reshape(n, -1) if n else np.zeros((0, self.segment_length), np.float32)
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "segment_subjects", _readonly(np.asarray(self.segment_subjects, dtype=str).copy()))
        object.__setattr__(self, "ppg", _readonly(np.array(ppg, dtype=np.float32)))
        object.__setattr__(self, "sbp", _readonly(np.array(self.sbp, dtype=np.float64).reshape(n)))
        object.__setattr__(self, "dbp", _readonly(np.array(self.dbp, dtype=np.float64).reshape(n)))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "segment_length", int(self.segment_length))
        src = np.arange(n) if self.source_index is None else np.asarray(self.source_index, dtype=np.int64)
        object.__setattr__(self, "source_index", _readonly(src.reshape(n).copy()))

    @classmethod
    def from_records(
        cls,
        subjects: Iterable[SubjectDemographics],
        segments: Sequence[SegmentRecord],
        sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
        segment_length: int | None = None,
    ) -> "CuratedDataset":
        if segment_length is None:
            segment_length = len(segments[0].ppg) if segments else DEFAULT_SEGMENT_LENGTH
        ppg = np.zeros((len(segments), segment_length), dtype=np.float32)
        for i, s in enumerate(segments):
            if len(s.ppg) != segment_length:
                raise LengthMismatch(f"segment {i} has {len(s.ppg)} samples, expected {segment_length}")
            ppg[i] = s.ppg
        return cls(
            subjects=tuple(subjects),
            segment_subjects=np.array([s.subject_id for s in segments], dtype=str),
            ppg=ppg,
            sbp=np.array([s.sbp_label for s in segments], dtype=np.float64),
            dbp=np.array([s.dbp_label for s in segments], dtype=np.float64),
            sample_rate_hz=sample_rate_hz,
            segment_length=segment_length,
        )

    def __len__(self) -> int:
        return len(self.segment_subjects)

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    def subject(self, subject_id: str) -> SubjectDemographics:
        try:
            return self._subject_map()[subject_id]
        except KeyError:
            raise UnknownSubject(f"unknown subject {subject_id!r}") from None

    def _subject_map(self) -> dict[str, SubjectDemographics]:
        cache = self.__dict__.get("_subject_cache")
        if cache is None:
            cache = {s.subject_id: s for s in self.subjects}
            object.__setattr__(self, "_subject_cache", cache)
        return cache

    def segment(self, i: int) -> SegmentRecord:
        return SegmentRecord(str(self.segment_subjects[i]), self.ppg[i], float(self.sbp[i]), float(self.dbp[i]))

    def segments(self) -> Iterator[SegmentRecord]:
        for i in range(len(self)):
            yield self.segment(i)

    def labels(self, target: str) -> np.ndarray:
        t = target.lower()
        if t == "sbp":
            return self.sbp
        if t == "dbp":
            return self.dbp
        raise ValueError(f"unknown target {target!r}")

    def segment_demographics(self) -> list[SubjectDemographics]:
        lookup = self._subject_map()
        return [lookup[s] for s in self.segment_subjects]

    def segment_counts(self) -> Counter:
        return Counter(self.segment_subjects.tolist())

    def subset(self, indices, drop_empty_subjects: bool = True) -> "CuratedDataset":
        """Segments at ``indices`` (in that order); subjects keep dataset order."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        seg_subj = self.segment_subjects[idx]
        if drop_empty_subjects:
            present = set(seg_subj.tolist())
            subjects = tuple(s for s in self.subjects if s.subject_id in present)
        else:
            subjects = self.subjects
        return CuratedDataset(
            subjects=subjects,
            segment_subjects=seg_subj,
            ppg=self.ppg[idx],
            sbp=self.sbp[idx],
            dbp=self.dbp[idx],
            sample_rate_hz=self.sample_rate_hz,
            segment_length=self.segment_length,
            source_index=self.source_index[idx],
        )

    def with_labels(self, sbp, dbp) -> "CuratedDataset":
        return CuratedDataset(
            self.subjects, self.segment_subjects, self.ppg, sbp, dbp,
            self.sample_rate_hz, self.segment_length, self.source_index,
        )

    def same_contents(self, other: "CuratedDataset") -> bool:
        return (
            self.subjects_equal(other)
            and self.sample_rate_hz == other.sample_rate_hz
            and self.segment_length == other.segment_length
            and np.array_equal(self.segment_subjects, other.segment_subjects)
            and np.array_equal(self.ppg, other.ppg, equal_nan=True)
            and np.array_equal(self.sbp, other.sbp, equal_nan=True)
            and np.array_equal(self.dbp, other.dbp, equal_nan=True)
        )

    def subjects_equal(self, other: "CuratedDataset") -> bool:
        if len(self.subjects) != len(other.subjects):
            return False
        for a, b in zip(self.subjects, other.subjects):
            if (a.subject_id, a.age, a.sex, a.bmi_present) != (b.subject_id, b.age, b.sex, b.bmi_present):
                return False
            if a.bmi_present and a.bmi != b.bmi:
                return False
        return True


def concat_datasets(parts: Sequence[CuratedDataset]) -> CuratedDataset:
    """Stack datasets sharing rate and length; subjects are merged by id."""
    if not parts:
        raise ValueError("nothing to concatenate")
    first = parts[0]
    subjects: dict[str, SubjectDemographics] = {}
    for p in parts:
        if (p.sample_rate_hz, p.segment_length) != (first.sample_rate_hz, first.segment_length):
            raise LengthMismatch("datasets differ in sample rate or segment length")
        for s in p.subjects:
            subjects.setdefault(s.subject_id, s)
    return CuratedDataset(
        subjects=tuple(subjects.values()),
        segment_subjects=np.concatenate([p.segment_subjects for p in parts]),
        ppg=np.concatenate([p.ppg for p in parts]),
        sbp=np.concatenate([p.sbp for p in parts]),
        dbp=np.concatenate([p.dbp for p in parts]),
        sample_rate_hz=first.sample_rate_hz,
        segment_length=first.segment_length,
    )


# ---------------------------------------------------------------------------
# Validation


VIOLATION_KINDS = (
    "duplicate_subject",
    "negative_age",
    "invalid_bmi",
    "unknown_subject",
    "length",
    "non_finite",
    "label_order",
)


@dataclass(frozen=True)
class ValidationReport:
    counts: dict

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def ok(self) -> bool:
        return self.total == 0

    def __getitem__(self, kind: str) -> int:
        return self.counts[kind]


def validate_dataset(ds: CuratedDataset) -> ValidationReport:
    counts = dict.fromkeys(VIOLATION_KINDS, 0)
    seen: set[str] = set()
    for s in ds.subjects:
        if s.subject_id in seen:
            counts["duplicate_subject"] += 1
        seen.add(s.subject_id)
        if s.age < 0:
            counts["negative_age"] += 1
        if s.bmi_present and not (math.isfinite(s.bmi) and s.bmi > 0):
            counts["invalid_bmi"] += 1
    counts["unknown_subject"] = int(sum(1 for sid in ds.segment_subjects.tolist() if sid not in seen))
    if len(ds):
        if ds.ppg.shape[1] != ds.segment_length:
            counts["length"] = len(ds)
        counts["non_finite"] = int(np.count_nonzero(~np.isfinite(ds.ppg).all(axis=1)))
        with np.errstate(invalid="ignore"):
            counts["label_order"] = int(np.count_nonzero(~(ds.sbp > ds.dbp)))
    return ValidationReport(counts)


# ---------------------------------------------------------------------------
# File format


def _parse_header(path, line: str) -> tuple[float, int]:
    if not line.startswith("#"):
        raise MalformedLine(path, 1, "missing '#rate=<hz> length=<L>' header")
    fields = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise MalformedLine(path, 1, f"bad header token {tok!r}")
        fields[key] = val
    try:
        return float(fields["rate"]), int(fields["length"])
    except (KeyError, ValueError):
        raise MalformedLine(path, 1, "header must define rate and length") from None


def read_manifest(path) -> list[SubjectDemographics]:
    path = Path(path)
    subjects = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise MalformedLine(path, 1, f"expected header {','.join(MANIFEST_HEADER)}")
        ids = set()
        for row in reader:
            line_no = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise MalformedLine(path, line_no, f"expected 4 fields, got {len(row)}")
            sid, age_s, sex_s, bmi_s = (c.strip() for c in row)
            if not sid:
                raise MalformedLine(path, line_no, "empty subject_id")
            if sid in ids:
                raise MalformedLine(path, line_no, f"duplicate subject {sid!r}")
            try:
                age = int(age_s)
                sex = Sex(sex_s)
            except ValueError:
                raise MalformedLine(path, line_no, "bad age or sex") from None
            if age < 0:
                raise MalformedLine(path, line_no, "negative age")
            if bmi_s == "":
                subjects.append(SubjectDemographics.without_bmi(sid, age, sex))
            else:
                try:
                    bmi = float(bmi_s)
                except ValueError:
                    raise MalformedLine(path, line_no, f"bad bmi {bmi_s!r}") from None
                if not (math.isfinite(bmi) and bmi > 0):
                    raise MalformedLine(path, line_no, "bmi must be positive")
                subjects.append(SubjectDemographics(sid, age, sex, bmi, True))
            ids.add(sid)
    return subjects


def load_dataset(manifest_path, segments_path, strict: bool = True) -> CuratedDataset:
    """Read a manifest/segments pair.

    With ``strict=False`` segments carrying non-finite samples or inverted
    labels are kept so that quality control can report on them; structural
    problems (field counts, lengths, unknown subjects) always raise.
    """
    subjects = read_manifest(manifest_path)
    known = {s.subject_id for s in subjects}
    path = Path(segments_path)
    ids, sbp, dbp, rows = [], [], [], []
    with open(path) as fh:
        rate, length = _parse_header(path, fh.readline().strip())
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",", 3)
            if len(parts) != 4:
                raise MalformedLine(path, line_no, "expected subject_id,sbp,dbp,samples")
            sid = parts[0].strip()
            try:
                s_val, d_val = float(parts[1]), float(parts[2])
                samples = np.array(parts[3].split(), dtype=np.float64)
            except ValueError:
                raise MalformedLine(path, line_no, "unparseable number") from None
            if sid not in known:
                raise UnknownSubject(f"{path}:{line_no}: segment references absent subject {sid!r}")
            if samples.size != length:
                raise LengthMismatch(f"{path}:{line_no}: {samples.size} samples, header says {length}")
            if strict:
                if not np.isfinite(samples).all():
                    raise MalformedLine(path, line_no, "non-finite sample")
                if not (s_val > d_val):
                    raise MalformedLine(path, line_no, "sbp must exceed dbp")
            ids.append(sid)
            sbp.append(s_val)
            dbp.append(d_val)
            rows.append(samples)
    ppg = np.array(rows, dtype=np.float32).reshape(len(rows), length)
    return CuratedDataset(tuple(subjects), np.array(ids, dtype=str), ppg, sbp, dbp, rate, length)


def write_manifest(subjects: Iterable[SubjectDemographics], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(MANIFEST_HEADER) + "\n")
        for s in subjects:
            bmi = fmt_real(s.bmi) if s.bmi_present else ""
            fh.write(f"{s.subject_id},{s.age},{s.sex.value},{bmi}\n")


def write_segments(ds: CuratedDataset, path, values: np.ndarray | None = None) -> None:
    """Write segments; ``values`` substitutes another ``(N, L)`` waveform (e.g. ABP)."""
    wave = ds.ppg if values is None else np.asarray(values)
    with open(path, "w") as fh:
        fh.write(f"#rate={fmt_real(ds.sample_rate_hz)} length={ds.segment_length}\n")
        for i in range(len(ds)):
            samples = " ".join(map("{:#.9g}".format, wave[i].tolist()))
            fh.write(f"{ds.segment_subjects[i]},{fmt_real(ds.sbp[i])},{fmt_real(ds.dbp[i])},{samples}\n")


def save_dataset(ds: CuratedDataset, manifest_path, segments_path) -> None:
    write_manifest(ds.subjects, manifest_path)
    write_segments(ds, segments_path)


MANIFEST_NAME = "manifest.csv"
SEGMENTS_NAME = "segments.txt"


def save_dataset_dir(ds: CuratedDataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, d / MANIFEST_NAME, d / SEGMENTS_NAME)
    return d


def load_dataset_dir(directory, strict: bool = True) -> CuratedDataset:
    d = Path(directory)
    return load_dataset(d / MANIFEST_NAME, d / SEGMENTS_NAME, strict=strict)
