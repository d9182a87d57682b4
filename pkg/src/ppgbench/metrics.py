"""Prediction sets, error metrics, the AAMI gate and plot-ready summaries."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .dataset import fmt_real
from .errors import EmptyDataset, MalformedLine, TooFewSubjects, UsageError, ZeroVariance

PROTOCOLS = ("cal_based", "cal_free")

AAMI_ME_LIMIT = 5.0
AAMI_SD_LIMIT = 8.0


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Per-segment ``(subject_id, y_true, y_pred)`` records for one target and protocol."""

    subject_ids: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    target: str
    protocol: str
    model: str = ""

    def __post_init__(self):
        sid = np.asarray(self.subject_ids, dtype=str)
        yt = np.asarray(self.y_true, dtype=np.float64).reshape(-1)
        yp = np.asarray(self.y_pred, dtype=np.float64).reshape(-1)
        if not (len(sid) == len(yt) == len(yp)):
            raise ValueError("subject_ids, y_true and y_pred differ in length")
        if len(yt) == 0:
            raise EmptyDataset("a prediction set needs at least one record")
        if not (np.isfinite(yt).all() and np.isfinite(yp).all()):
            raise ValueError("prediction set contains non-finite values")
        object.__setattr__(self, "subject_ids", sid)
        object.__setattr__(self, "y_true", yt)
        object.__setattr__(self, "y_pred", yp)

    @classmethod
    def from_records(cls, records, target, protocol, model=""):
        records = list(records)
        if not records:
            raise EmptyDataset("a prediction set needs at least one record")
        sid, yt, yp = zip(*records)
        return cls(np.array(sid, dtype=str), np.array(yt), np.array(yp), target, protocol, model)

    def __len__(self) -> int:
        return len(self.y_true)

    @property
    def records(self):
        return list(zip(self.subject_ids.tolist(), self.y_true.tolist(), self.y_pred.tolist()))

    @property
    def residuals(self) -> np.ndarray:
        return self.y_true - self.y_pred

    def concat(self, other: "PredictionSet") -> "PredictionSet":
        return PredictionSet(np.concatenate([self.subject_ids, other.subject_ids]),
                             np.concatenate([self.y_true, other.y_true]),
                             np.concatenate([self.y_pred, other.y_pred]),
                             self.target, self.protocol, self.model)

    def to_text(self) -> str:
        lines = [f"#target={self.target} protocol={self.protocol} model={self.model}",
                 "subject_id,y_true,y_pred"]
        lines += [f"{s},{fmt_real(t)},{fmt_real(p)}"
                  for s, t, p in zip(self.subject_ids, self.y_true, self.y_pred)]
        return "\n".join(lines) + "\n"


def write_predictions(p: PredictionSet, path) -> None:
    with open(path, "w") as fh:
        fh.write(p.to_text())


def read_predictions(path) -> PredictionSet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise MalformedLine(path, 1, "missing '#target=... protocol=...' header")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split() if "=" in tok)
    if "target" not in meta or "protocol" not in meta:
        raise MalformedLine(path, 1, "header needs target= and protocol=")
    records = []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("subject_id,"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise MalformedLine(path, no, f"expected 3 fields, got {len(parts)}")
        try:
            records.append((parts[0], float(parts[1]), float(parts[2])))
        except ValueError:
            raise MalformedLine(path, no, "non-numeric value") from None
    return PredictionSet.from_records(records, meta["target"], meta["protocol"], meta.get("model", ""))


@dataclass(frozen=True)
class MetricBundle:
    """Errors are ``y_true - y_pred``; ``sd`` and ``abs_sd`` are population SDs."""

    n: int
    mae: float
    me: float
    sd: float
    r2: float | None
    abs_sd: float


def compute_metrics(p: PredictionSet, strict: bool = False) -> MetricBundle:
    """MAE, mean error, error SD and R².

    When every ``y_true`` is equal R² is undefined; it is reported as
    ``None`` unless ``strict`` asks for a ``ZeroVariance`` error.
    """
    e = p.y_true - p.y_pred
    ae = np.abs(e)
    me = float(e.mean())
    ss_tot = float(((p.y_true - p.y_true.mean()) ** 2).sum())
    if ss_tot > 0:
        r2 = 1.0 - float((e * e).sum()) / ss_tot
    elif strict:
        raise ZeroVariance("R² is undefined when all reference values are equal")
    else:
        r2 = None
    return MetricBundle(len(e), float(ae.mean()), me, float(e.std()), r2, float(ae.std()))


@dataclass(frozen=True)
class AamiVerdict:
    me_ok: bool
    sd_ok: bool

    @property
    def passed(self) -> bool:
        return self.me_ok and self.sd_ok


def aami_gate(m: MetricBundle) -> AamiVerdict:
    """Strict limits: ``|ME| < 5`` and ``SD < 8`` mmHg."""
    return AamiVerdict(abs(m.me) < AAMI_ME_LIMIT, m.sd < AAMI_SD_LIMIT)


def residual_histogram(p: PredictionSet, bins: int = 41):
    """Histogram of ``y_true - y_pred`` on a range symmetric about 0.

    Returns ``(edges, counts)``; the range is ``[-r, r]`` with ``r`` the
    largest absolute residual (1 mmHg when every residual is 0).
    """
    if bins < 1:
        raise UsageError("bins must be >= 1")
    e = p.residuals
    r = float(np.abs(e).max())
    if r == 0:
        r = 1.0
    counts, edges = np.histogram(e, bins=bins, range=(-r, r))
    return edges, counts


def histogram_text(edges, counts) -> str:
    rows = ["bin_lo,bin_hi,count"]
    rows += [f"{fmt_real(lo)},{fmt_real(hi)},{int(c)}" for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    return "\n".join(rows) + "\n"


@dataclass(frozen=True, eq=False)
class ConfidenceSet:
    """Per-segment ensemble statistics over ``k`` models: ``predictions`` is ``(k, n)``."""

    predictions: np.ndarray
    z: float = 1.96

    @property
    def k(self) -> int:
        return self.predictions.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.predictions.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        return self.predictions.std(axis=0, ddof=1) if self.k > 1 else np.zeros(self.predictions.shape[1])

    @property
    def lower(self) -> np.ndarray:
        return self.mean - self.z * self.sd

    @property
    def upper(self) -> np.ndarray:
        return self.mean + self.z * self.sd

    def coverage(self, truth) -> float:
        truth = np.asarray(truth, dtype=np.float64)
        return float(((truth >= self.lower) & (truth <= self.upper)).mean())


@dataclass(frozen=True, eq=False)
class PatientSeries:
    subject_id: str
    indices: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None


def top_patients(p: PredictionSet, k: int = 10) -> list[str]:
    """The ``k`` subjects with most records; ties go to the smaller subject_id."""
    counts = Counter(p.subject_ids.tolist())
    if len(counts) < k:
        raise TooFewSubjects(f"need {k} distinct subjects, prediction set has {len(counts)}")
    return [s for s, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def top_patients_report(p: PredictionSet, ci: ConfidenceSet | None = None, k: int = 10) -> list[PatientSeries]:
    if ci is not None and ci.predictions.shape[1] != len(p):
        raise ValueError("confidence set does not match the prediction set")
    out = []
    for sid in top_patients(p, k):
        idx = np.flatnonzero(p.subject_ids == sid)
        lo = ci.lower[idx] if ci is not None else None
        hi = ci.upper[idx] if ci is not None else None
        out.append(PatientSeries(sid, idx, p.y_true[idx], p.y_pred[idx], lo, hi))
    return out


def patient_series_text(series: list[PatientSeries]) -> str:
    rows = ["subject_id,segment_index,y_true,y_pred,lower,upper"]
    for s in series:
        for j, i in enumerate(s.indices):
            lo = fmt_real(s.lower[j]) if s.lower is not None else ""
            hi = fmt_real(s.upper[j]) if s.upper is not None else ""
            rows.append(f"{s.subject_id},{int(i)},{fmt_real(s.y_true[j])},{fmt_real(s.y_pred[j])},{lo},{hi}")
    return "\n".join(rows) + "\n"


def confidence_text(p: PredictionSet, ci: ConfidenceSet) -> str:
    rows = ["subject_id,y_true,mean,lower,upper"]
    for s, t, m, lo, hi in zip(p.subject_ids, p.y_true, ci.mean, ci.lower, ci.upper):
        rows.append(f"{s},{fmt_real(t)},{fmt_real(m)},{fmt_real(lo)},{fmt_real(hi)}")
    return "\n".join(rows) + "\n"
