"""Label derivation from ABP, signal quality control and cohort filters."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import find_peaks

from .dataset import CuratedDataset, SegmentRecord, Sex
from .errors import EmptyDataset, NoBeats, NonPhysiologicalRate

MIN_BEATS = 3


@dataclass(frozen=True, eq=False)
class AbpSegment:
    subject_id: str
    abp: np.ndarray
    sample_rate_hz: float = 125.0


@dataclass(frozen=True)
class CohortCriteria:
    sbp_range: tuple[float, float] = (90.0, 130.0)
    dbp_range: tuple[float, float] = (60.0, 85.0)
    age_range: tuple[float, float] = (18.0, 65.0)
    bmi_range: tuple[float, float] = (18.5, 25.0)
    require_bmi: bool = True

    def __post_init__(self):
        for name in ("sbp_range", "dbp_range", "age_range", "bmi_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name}: lower bound must be below upper bound")

    def tightened(self, **ranges) -> "CohortCriteria":
        return replace(self, **ranges)


# ---------------------------------------------------------------------------
# Beats and labels


def detect_beats(abp: AbpSegment, min_rate_bpm: float = 30.0, max_rate_bpm: float = 200.0):
    """Locate (systolic peak, following diastolic trough) sample index pairs.

    Peaks and troughs are local extrema at least ``60/max_rate`` seconds apart
    with prominence of at least 10% of the segment range. Each peak is paired
    with the lowest trough before the next peak; a peak with no trough after it
    (segment end) is dropped.
    """
    if not 20 <= min_rate_bpm < max_rate_bpm <= 220:
        raise ValueError("need 20 <= min_rate_bpm < max_rate_bpm <= 220")
    x = np.asarray(abp.abp, dtype=np.float64)
    fs = abp.sample_rate_hz
    span = float(np.ptp(x)) if x.size else 0.0
    if span == 0.0 or not np.isfinite(span):
        raise NoBeats(f"subject {abp.subject_id}: flat or non-finite ABP")
    distance = max(1, int(math.floor(60.0 / max_rate_bpm * fs)))
    prominence = 0.1 * span
    peaks, _ = find_peaks(x, distance=distance, prominence=prominence)
    troughs, _ = find_peaks(-x, distance=distance, prominence=prominence)

    beats = []
    for j, p in enumerate(peaks):
        stop = peaks[j + 1] if j + 1 < len(peaks) else x.size
        cand = troughs[(troughs > p) & (troughs < stop)]
        if cand.size:
            beats.append((int(p), int(cand[np.argmin(x[cand])])))
    if len(beats) < MIN_BEATS:
        raise NoBeats(f"subject {abp.subject_id}: {len(beats)} beats found")

    intervals = np.diff([b[0] for b in beats]) / fs
    lo, hi = 60.0 / max_rate_bpm, 60.0 / min_rate_bpm
    if intervals.size and (intervals.min() < lo - 1.0 / fs or intervals.max() > hi + 1.0 / fs):
        raise NonPhysiologicalRate(
            f"subject {abp.subject_id}: beat intervals {intervals.min():.3f}-{intervals.max():.3f}s "
            f"outside [{lo:.3f}, {hi:.3f}]s"
        )
    return beats


def derive_bp_labels(abp: AbpSegment, min_rate_bpm: float = 30.0, max_rate_bpm: float = 200.0):
    """Segment (SBP, DBP): means of per-beat peak and trough pressures."""
    beats = detect_beats(abp, min_rate_bpm, max_rate_bpm)
    x = np.asarray(abp.abp, dtype=np.float64)
    peaks = np.array([b[0] for b in beats])
    troughs = np.array([b[1] for b in beats])
    return float(x[peaks].mean()), float(x[troughs].mean())


# ---------------------------------------------------------------------------
# Quality control


@dataclass(frozen=True)
class QualityVerdict:
    passed: bool
    reason: str | None = None

    def __bool__(self):
        return self.passed


def quality_filter(
    seg: SegmentRecord | np.ndarray,
    flatline_rel_var: float = 1e-6,
    clip_fraction: float = 0.05,
) -> QualityVerdict:
    x = np.asarray(seg.ppg if isinstance(seg, SegmentRecord) else seg, dtype=np.float64)
    if x.size == 0 or not np.isfinite(x).all():
        return QualityVerdict(False, "non_finite")
    span = float(x.max() - x.min())
    if span == 0.0 or x.var() < flatline_rel_var * span * span:
        return QualityVerdict(False, "flatline")
    limit = clip_fraction * x.size
    if np.count_nonzero(x == x.max()) >= limit or np.count_nonzero(x == x.min()) >= limit:
        return QualityVerdict(False, "clipping")
    return QualityVerdict(True)


def apply_quality_filter(ds: CuratedDataset, **kw):
    """Keep segments passing ``quality_filter``; returns (kept, audit)."""
    audit = {"non_finite": 0, "flatline": 0, "clipping": 0}
    keep = []
    for i in range(len(ds)):
        v = quality_filter(ds.ppg[i], **kw)
        if v.passed:
            keep.append(i)
        else:
            audit[v.reason] += 1
    return ds.subset(keep), audit


# ---------------------------------------------------------------------------
# Cohort filter

COHORT_REASONS = ("missing_bmi", "age", "bmi", "sbp", "dbp")


def _within(value, bounds) -> bool:
    lo, hi = bounds
    return lo <= value <= hi


def subject_exclusion(subject, c: CohortCriteria) -> str | None:
    """First failing subject-level criterion, or None."""
    if not subject.bmi_present:
        if c.require_bmi:
            return "missing_bmi"
    elif not _within(subject.bmi, c.bmi_range):
        return "bmi"
    if not _within(subject.age, c.age_range):
        return "age"
    return None


def apply_cohort_filter(ds: CuratedDataset, c: CohortCriteria = CohortCriteria()):
    """Apply inclusive physiological criteria.

    Subject criteria (BMI availability and range, age) are checked before
    per-segment label criteria; each excluded segment is counted once under
    the first reason it fails. Returns ``(kept, audit)``.
    """
    subject_reason = {s.subject_id: subject_exclusion(s, c) for s in ds.subjects}
    audit = dict.fromkeys(COHORT_REASONS, 0)
    keep = []
    for i, sid in enumerate(ds.segment_subjects.tolist()):
        reason = subject_reason[sid]
        if reason is None:
            if not _within(ds.sbp[i], c.sbp_range):
                reason = "sbp"
            elif not _within(ds.dbp[i], c.dbp_range):
                reason = "dbp"
        if reason is None:
            keep.append(i)
        else:
            audit[reason] += 1
    return ds.subset(keep), audit


def format_audit(audit: dict) -> str:
    lines = ["reason,count"]
    lines += [f"{k},{v}" for k, v in audit.items()]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Summary


@dataclass(frozen=True)
class CohortSummary:
    n_subjects: int
    n_segments: int
    n_male: int
    n_female: int
    age: tuple[float, float]
    bmi: tuple[float, float]
    sbp: tuple[float, float]
    dbp: tuple[float, float]

    def rows(self) -> list[tuple[str, str]]:
        def ms(pair):
            return f"{pair[0]:.1f}±{pair[1]:.1f}"

        return [
            ("Total Sub", str(self.n_subjects)),
            ("Total Seg", str(self.n_segments)),
            ("Male", str(self.n_male)),
            ("Female", str(self.n_female)),
            ("Age", ms(self.age)),
            ("BMI", ms(self.bmi)),
            ("SBP", ms(self.sbp)),
            ("DBP", ms(self.dbp)),
        ]

    def to_text(self) -> str:
        return "".join(f"{k}: {v}\n" for k, v in self.rows())


def _mean_sd(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return (math.nan, math.nan)
    return (float(x.mean()), float(x.std()))


def summarize_cohort(ds: CuratedDataset) -> CohortSummary:
    """Table-style statistics with demographics broadcast to segments.

    Sex rows count segments; SDs use the population (divide-by-n) form.
    """
    if len(ds) == 0:
        raise EmptyDataset("cannot summarize an empty dataset")
    demo = ds.segment_demographics()
    n_male = sum(1 for d in demo if d.sex is Sex.MALE)
    ages = [d.age for d in demo]
    bmis = [d.bmi if d.bmi_present else math.nan for d in demo]
    n_subjects = len(set(ds.segment_subjects.tolist()))
    return CohortSummary(
        n_subjects=n_subjects,
        n_segments=len(ds),
        n_male=n_male,
        n_female=len(ds) - n_male,
        age=_mean_sd(ages),
        bmi=_mean_sd(bmis),
        sbp=_mean_sd(ds.sbp),
        dbp=_mean_sd(ds.dbp),
    )


def relabel_from_abp(ds: CuratedDataset, abp: np.ndarray, **kw):
    """Replace labels with ones derived from paired ABP waveforms.

    Segments whose ABP yields no usable beats are dropped and counted under
    ``no_beats`` / ``rate`` in the returned audit.
    """
    audit = {"no_beats": 0, "rate": 0}
    keep, sbp, dbp = [], [], []
    for i in range(len(ds)):
        seg = AbpSegment(str(ds.segment_subjects[i]), abp[i], ds.sample_rate_hz)
        try:
            s, d = derive_bp_labels(seg, **kw)
        except NoBeats:
            audit["no_beats"] += 1
            continue
        except NonPhysiologicalRate:
            audit["rate"] += 1
            continue
        keep.append(i)
        sbp.append(s)
        dbp.append(d)
    kept = ds.subset(keep)
    return kept.with_labels(np.array(sbp), np.array(dbp)), audit


__all__ = [
    "AbpSegment", "CohortCriteria", "CohortSummary", "QualityVerdict",
    "apply_cohort_filter", "apply_quality_filter", "derive_bp_labels", "detect_beats",
    "format_audit", "quality_filter", "relabel_from_abp", "summarize_cohort",
]
