"""Seeded synthetic cohorts with known ground truth.

Each segment is a regular train of two-Gaussian PPG pulses (systolic wave
plus a smaller diastolic wave whose relative height is the *amplitude
ratio*). Labels follow a documented affine model::

    bp = c0 + c1*(hr - 75) + c2*(ratio - 0.5) + c3*(age - 41.5)
            + c4*(sex - 0.5) + c5*(bmi - 21.75) + c6*latent + noise

with ``sex`` coded 0 (female) / 1 (male), ``latent`` a standard-normal
per-subject offset, and ``noise ~ N(0, noise_sd * label_noise_scale_mmhg)``.
One seven-vector for SBP, then one for DBP. Labels are clamped into the
cohort criteria so a generated cohort always survives the cohort filter.
This is test scaffolding, not a hemodynamic model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .curation import CohortCriteria
from .dataset import CuratedDataset, Sex, SubjectDemographics, fmt_real, save_dataset_dir, write_segments

FEATURE_NAMES = ("intercept", "heart_rate", "amplitude_ratio", "age", "sex", "bmi", "subject_latent")
FEATURE_CENTERS = np.array([0.0, 75.0, 0.5, 41.5, 0.5, 21.75, 0.0])
N_COEFFICIENTS = 2 * len(FEATURE_NAMES)

DEFAULT_COEFFICIENTS = (
    115.3, 0.25, -20.0, 0.30, 4.0, 1.5, 3.0,   # SBP
    67.9, 0.15, -8.0, 0.15, 2.0, 0.8, 2.0,     # DBP
)

SIDECAR_NAME = "sidecar.txt"
ABP_NAME = "abp.txt"


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 20
    segments_per_subject: tuple[int, int] = (50, 150)
    seed: int = 0
    noise_sd: float = 0.05
    bp_model_coefficients: tuple[float, ...] = DEFAULT_COEFFICIENTS
    sample_rate_hz: float = 125.0
    segment_length: int = 1250
    label_noise_scale_mmhg: float = 40.0
    heart_rate_range: tuple[float, float] = (55.0, 95.0)
    ratio_range: tuple[float, float] = (0.3, 0.7)
    abp_beat_jitter_mmhg: float = 2.0
    emit_abp: bool = False
    criteria: CohortCriteria = field(default_factory=CohortCriteria)

    def __post_init__(self):
        lo, hi = self.segments_per_subject
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if not 1 <= lo <= hi:
            raise ValueError("segments_per_subject must satisfy 1 <= lo <= hi")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if len(self.bp_model_coefficients) != N_COEFFICIENTS:
            raise ValueError(f"bp_model_coefficients needs {N_COEFFICIENTS} values")

    @property
    def sbp_coefficients(self) -> np.ndarray:
        return np.asarray(self.bp_model_coefficients[:7], dtype=np.float64)

    @property
    def dbp_coefficients(self) -> np.ndarray:
        return np.asarray(self.bp_model_coefficients[7:], dtype=np.float64)

    @property
    def label_noise_mmhg(self) -> float:
        return self.noise_sd * self.label_noise_scale_mmhg


SIDECAR_COLUMNS = (
    "subject_id", "segment", "heart_rate", "amplitude_ratio", "amplitude", "subject_latent",
    "age", "sex", "bmi", "period_samples", "first_onset", "sbp_noiseless", "dbp_noiseless",
    "sbp_label", "dbp_label",
)


@dataclass(frozen=True, eq=False)
class GroundTruthSidecar:
    """Per-segment latent state and labels, aligned with the dataset order."""

    subject_id: np.ndarray
    segment: np.ndarray
    heart_rate: np.ndarray
    amplitude_ratio: np.ndarray
    amplitude: np.ndarray
    subject_latent: np.ndarray
    age: np.ndarray
    sex: np.ndarray
    bmi: np.ndarray
    period_samples: np.ndarray
    first_onset: np.ndarray
    sbp_noiseless: np.ndarray
    dbp_noiseless: np.ndarray
    sbp_label: np.ndarray
    dbp_label: np.ndarray
    abp: np.ndarray | None = None

    def __len__(self):
        return len(self.subject_id)

    def design_matrix(self, demographics: bool = True) -> np.ndarray:
        """Centered BP-model features (intercept first), optionally without age/sex/bmi."""
        cols = [self.heart_rate, self.amplitude_ratio, self.age, self.sex, self.bmi, self.subject_latent]
        x = np.column_stack([np.ones(len(self))] + [np.asarray(c, np.float64) for c in cols]) - FEATURE_CENTERS
        x[:, 0] = 1.0
        if not demographics:
            x = x[:, [0, 1, 2, 6]]
        return x

    def to_text(self) -> str:
        lines = [",".join(SIDECAR_COLUMNS)]
        for i in range(len(self)):
            row = []
            for name in SIDECAR_COLUMNS:
                v = getattr(self, name)[i]
                if name in ("subject_id",):
                    row.append(str(v))
                elif name in ("segment", "age", "sex", "period_samples", "first_onset"):
                    row.append(str(int(v)))
                else:
                    row.append(fmt_real(v))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def read_sidecar(path) -> GroundTruthSidecar:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {name: [r[j] for r in rows] for j, name in enumerate(header)}
    out = {}
    for name in SIDECAR_COLUMNS:
        if name == "subject_id":
            out[name] = np.array(cols[name], dtype=str)
        elif name in ("segment", "age", "sex", "period_samples", "first_onset"):
            out[name] = np.array(cols[name], dtype=np.int64)
        else:
            out[name] = np.array(cols[name], dtype=np.float64)
    return GroundTruthSidecar(**out)


# ---------------------------------------------------------------------------
# Waveforms


def ppg_beat_train(length, period, first_onset, ratio, amplitude=1.0, width_scale=1.0):
    """Sum of two-Gaussian pulses starting at ``first_onset + k * period`` samples."""
    t = np.arange(length, dtype=np.float64)
    onsets = np.arange(first_onset - period, length + period, period, dtype=np.float64)
    rel = t[None, :] - onsets[:, None]
    mu1, sd1 = 0.22 * period, 0.07 * period * width_scale
    mu2, sd2 = 0.50 * period, 0.09 * period * width_scale
    pulses = np.exp(-0.5 * ((rel - mu1) / sd1) ** 2) + ratio * np.exp(-0.5 * ((rel - mu2) / sd2) ** 2)
    return amplitude * pulses.sum(axis=0)


def abp_beat_train(length, period, first_onset, peaks, troughs, rise_fraction=0.3):
    """Piecewise-smooth pressure wave that hits each ``peaks[k]``/``troughs[k]`` exactly on a sample.

    Beat ``k`` starts at onset ``first_onset + (k - 1) * period`` (the
    ``k = 0`` beat begins before the segment) with pressure ``troughs[k]``,
    rises to ``peaks[k]`` ``round(rise_fraction * period)`` samples later,
    then decays to ``troughs[k + 1]`` at the next onset.
    """
    rise = max(1, int(round(rise_fraction * period)))
    x = np.empty(length, dtype=np.float64)
    for k in range(len(peaks)):
        onset = first_onset + (k - 1) * period
        peak_at = onset + rise
        nxt = onset + period
        a = np.arange(max(onset, 0), min(peak_at, length))
        if a.size:
            x[a] = troughs[k] + (peaks[k] - troughs[k]) * np.sin(0.5 * np.pi * (a - onset) / rise) ** 2
        b = np.arange(max(peak_at, 0), min(nxt, length))
        if b.size:
            x[b] = troughs[k + 1] + (peaks[k] - troughs[k + 1]) * np.cos(0.5 * np.pi * (b - peak_at) / (nxt - peak_at)) ** 2
    return x


def abp_complete_beats(length, period, first_onset, rise_fraction=0.3):
    """Indices ``k`` of beats fully resolvable inside the segment.

    The beat's own onset and the next beat's peak must both fall within the
    segment, so the peak and its following trough carry full prominence.
    """
    rise = max(1, int(round(rise_fraction * period)))
    n_beats = (length - first_onset) // period + 2
    ks = []
    for k in range(n_beats):
        onset = first_onset + (k - 1) * period
        if onset >= 0 and onset + period + rise <= length - 1:
            ks.append(k)
    return ks, n_beats


# ---------------------------------------------------------------------------
# Cohort


def _segment_abp(cfg, rng, period, onset, sbp, dbp):
    """ABP whose beat-averaged peak/trough equal (sbp, dbp).

    Jitter is applied only to fully interior beats and re-centred there;
    partial beats at the edges carry the exact label values, so the beat
    average does not depend on whether a detector keeps them.
    """
    L = cfg.segment_length
    ks, n_beats = abp_complete_beats(L, period, onset)
    peaks = np.full(n_beats, sbp)
    troughs = np.full(n_beats + 1, dbp)
    if ks:
        ks = np.asarray(ks)
        jp = cfg.abp_beat_jitter_mmhg * rng.standard_normal(ks.size)
        jt = cfg.abp_beat_jitter_mmhg * rng.standard_normal(ks.size)
        peaks[ks] += jp - jp.mean()
        troughs[ks + 1] += jt - jt.mean()
    return abp_beat_train(L, period, onset, peaks, troughs)


def generate_cohort(cfg: SynthConfig = SynthConfig()):
    """Return ``(dataset, sidecar)``; identical configs give identical arrays."""
    crit = cfg.criteria
    fs, L = cfg.sample_rate_hz, cfg.segment_length
    subjects = []
    cols = {name: [] for name in SIDECAR_COLUMNS}
    waves, abps = [], []
    for si in range(cfg.n_subjects):
        srng = np.random.default_rng([cfg.seed, si])
        sid = f"S{si:05d}"
        age = int(srng.integers(int(np.ceil(crit.age_range[0])), int(np.floor(crit.age_range[1])) + 1))
        sex = Sex.MALE if srng.random() < 0.5 else Sex.FEMALE
        bmi = float(np.round(srng.uniform(*crit.bmi_range), 2))
        bmi = min(max(bmi, crit.bmi_range[0]), crit.bmi_range[1])
        base_hr = srng.uniform(*cfg.heart_rate_range)
        base_ratio = srng.uniform(*cfg.ratio_range)
        amplitude = srng.uniform(0.8, 1.2)
        width = srng.uniform(0.85, 1.15)
        latent = srng.standard_normal()
        n_seg = int(srng.integers(cfg.segments_per_subject[0], cfg.segments_per_subject[1] + 1))
        subjects.append(SubjectDemographics(sid, age, sex, bmi, True))

        for gi in range(n_seg):
            rng = np.random.default_rng([cfg.seed, si, gi])
            hr_target = base_hr + rng.uniform(-5.0, 5.0)
            period = max(2, int(round(60.0 / hr_target * fs)))
            hr = 60.0 * fs / period
            ratio = float(np.clip(base_ratio + rng.uniform(-0.05, 0.05), 0.05, 0.95))
            onset = int(rng.integers(0, period))
            wave = ppg_beat_train(L, period, onset, ratio, amplitude, width)
            if cfg.noise_sd > 0:
                wave = wave + cfg.noise_sd * amplitude * rng.standard_normal(L)

            x = np.array([1.0, hr, ratio, age, sex.code, bmi, latent]) - FEATURE_CENTERS
            x[0] = 1.0
            sbp_clean = float(np.clip(cfg.sbp_coefficients @ x, *crit.sbp_range))
            dbp_clean = float(np.clip(cfg.dbp_coefficients @ x, *crit.dbp_range))
            sigma = cfg.label_noise_mmhg
            sbp = float(np.clip(cfg.sbp_coefficients @ x + sigma * rng.standard_normal(), *crit.sbp_range))
            dbp = float(np.clip(cfg.dbp_coefficients @ x + sigma * rng.standard_normal(), *crit.dbp_range))

            waves.append(wave)
            if cfg.emit_abp:
                abps.append(_segment_abp(cfg, rng, period, onset, sbp, dbp))
            for name, v in (
                ("subject_id", sid), ("segment", gi), ("heart_rate", hr), ("amplitude_ratio", ratio),
                ("amplitude", amplitude), ("subject_latent", latent), ("age", age), ("sex", sex.code),
                ("bmi", bmi), ("period_samples", period), ("first_onset", onset),
                ("sbp_noiseless", sbp_clean), ("dbp_noiseless", dbp_clean),
                ("sbp_label", sbp), ("dbp_label", dbp),
            ):
                cols[name].append(v)

    ds = CuratedDataset(
        subjects=tuple(subjects),
        segment_subjects=np.array(cols["subject_id"], dtype=str),
        ppg=np.array(waves, dtype=np.float32).reshape(len(waves), L),
        sbp=np.array(cols["sbp_label"]),
        dbp=np.array(cols["dbp_label"]),
        sample_rate_hz=fs,
        segment_length=L,
    )
    arrays = {}
    for f in fields(GroundTruthSidecar):
        if f.name == "abp":
            continue
        dtype = str if f.name == "subject_id" else (np.int64 if f.name in ("segment", "age", "sex", "period_samples", "first_onset") else np.float64)
        arrays[f.name] = np.array(cols[f.name], dtype=dtype)
    abp = np.array(abps, dtype=np.float64).reshape(len(abps), L) if cfg.emit_abp else None
    return ds, GroundTruthSidecar(**arrays, abp=abp)


def write_cohort(ds: CuratedDataset, sidecar: GroundTruthSidecar, directory) -> Path:
    """Write manifest, segments, sidecar (and ABP segments when present)."""
    d = save_dataset_dir(ds, directory)
    (d / SIDECAR_NAME).write_text(sidecar.to_text())
    if sidecar.abp is not None:
        write_segments(ds, d / ABP_NAME, values=sidecar.abp)
    return d
