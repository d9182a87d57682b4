import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import tiny_dataset
from ppgbench.curation import (
    AbpSegment,
    CohortCriteria,
    apply_cohort_filter,
    apply_quality_filter,
    derive_bp_labels,
    detect_beats,
    format_audit,
    quality_filter,
    relabel_from_abp,
    summarize_cohort,
)
from ppgbench.dataset import CuratedDataset, Sex, SubjectDemographics
from ppgbench.errors import EmptyDataset, NoBeats, NonPhysiologicalRate

AGES = (17, 18, 40, 65, 66)
BMIS = (None, 18.4, 18.5, 22.0, 25.0, 25.1)
SBPS = (89.0, 90.0, 110.0, 130.0, 131.0)
DBPS = (59.0, 60.0, 70.0, 85.0, 86.0)


def oracle_reason(age, bmi, sbp, dbp):
    """Independent statement of the inclusive cohort rule and its reason priority."""
    if bmi is None:
        return "missing_bmi"
    if bmi < 18.5 or bmi > 25.0:
        return "bmi"
    if age < 18 or age > 65:
        return "age"
    if sbp < 90.0 or sbp > 130.0:
        return "sbp"
    if dbp < 60.0 or dbp > 85.0:
        return "dbp"
    return None


def boundary_dataset(rng, n_subjects=60, per_subject=4):
    subjects, ids, sbp, dbp = [], [], [], []
    for i in range(n_subjects):
        sid = f"b{i:03d}"
        age, bmi = int(rng.choice(AGES)), BMIS[rng.integers(len(BMIS))]
        sex = Sex.MALE if rng.random() < 0.5 else Sex.FEMALE
        subjects.append(SubjectDemographics.without_bmi(sid, age, sex) if bmi is None
                        else SubjectDemographics(sid, age, sex, bmi))
        for _ in range(per_subject):
            ids.append(sid)
            sbp.append(float(rng.choice(SBPS)))
            dbp.append(float(rng.choice(DBPS)))
    n = len(ids)
    return CuratedDataset(tuple(subjects), np.array(ids), np.zeros((n, 4)), sbp, dbp, segment_length=4)


class TestCohortFilter:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_oracle_on_boundaries(self, seed):
        ds = boundary_dataset(np.random.default_rng(seed))
        kept, audit = apply_cohort_filter(ds)
        want_keep, want_audit = [], dict.fromkeys(audit, 0)
        for i, d in enumerate(ds.segment_demographics()):
            r = oracle_reason(d.age, d.bmi if d.bmi_present else None, ds.sbp[i], ds.dbp[i])
            if r is None:
                want_keep.append(i)
            else:
                want_audit[r] += 1
        assert kept.source_index.tolist() == want_keep
        assert audit == want_audit

    def test_every_boundary_combination(self):
        """Each (age, bmi, sbp, dbp) grid point in isolation."""
        for age, bmi, sbp, dbp in itertools.product(AGES, BMIS, SBPS, DBPS):
            s = (SubjectDemographics.without_bmi("x", age, Sex.MALE) if bmi is None
                 else SubjectDemographics("x", age, Sex.MALE, bmi))
            ds = CuratedDataset((s,), np.array(["x"]), np.zeros((1, 2)), [sbp], [dbp], segment_length=2)
            kept, audit = apply_cohort_filter(ds)
            reason = oracle_reason(age, bmi, sbp, dbp)
            assert len(kept) == (reason is None)
            if reason:
                assert audit[reason] == 1

    def test_drops_emptied_subjects(self, tiny):
        kept, _ = apply_cohort_filter(tiny, CohortCriteria(age_range=(31.0, 65.0), dbp_range=(40.0, 90.0)))
        assert "s0" not in kept.subject_ids
        assert len(kept) == 6

    def test_optional_bmi(self):
        s = SubjectDemographics.without_bmi("x", 40, Sex.FEMALE)
        ds = CuratedDataset((s,), np.array(["x"]), np.zeros((1, 2)), [110.0], [70.0], segment_length=2)
        assert len(apply_cohort_filter(ds, CohortCriteria(require_bmi=False))[0]) == 1

    def test_criteria_validation(self):
        with pytest.raises(ValueError):
            CohortCriteria(sbp_range=(130.0, 90.0))

    def test_audit_text(self):
        assert format_audit({"age": 2, "kept": 5}) == "reason,count\nage,2\nkept,5\n"


class TestLabels:
    def test_smooth_beats_recover_extrema(self):
        fs = 125.0
        t = np.arange(1250) / fs
        x = 95 + 25 * np.sin(2 * np.pi * 1.2 * t)  # 72 bpm between 70 and 120 mmHg
        sbp, dbp = derive_bp_labels(AbpSegment("a", x, fs))
        assert sbp == pytest.approx(120.0, abs=0.05)
        assert dbp == pytest.approx(70.0, abs=0.05)

    def test_flat_signal(self):
        with pytest.raises(NoBeats):
            derive_bp_labels(AbpSegment("a", np.full(500, 90.0)))

    def test_too_few_beats(self):
        t = np.arange(250) / 125.0
        with pytest.raises(NoBeats):
            derive_bp_labels(AbpSegment("a", 90 + 20 * np.sin(2 * np.pi * 0.5 * t)))

    def test_rate_out_of_range(self):
        fs = 125.0
        t = np.arange(5000) / fs
        x = 90 + 20 * np.sin(2 * np.pi * 0.4 * t)  # 24 bpm
        with pytest.raises(NonPhysiologicalRate):
            detect_beats(AbpSegment("a", x, fs))

    def test_each_peak_paired_with_following_trough(self):
        fs = 100.0
        x = 95 + 25 * np.sin(2 * np.pi * np.arange(1000) / 80)
        for p, tr in detect_beats(AbpSegment("a", x, fs)):
            assert tr > p
            assert x[p] > 119 and x[tr] < 71

    def test_synthetic_abp_matches_sidecar(self, small_cohort):
        ds, side = small_cohort
        for i in range(len(ds)):
            sbp, dbp = derive_bp_labels(AbpSegment(ds.segment_subjects[i], side.abp[i], ds.sample_rate_hz))
            assert abs(sbp - side.sbp_label[i]) < 0.5
            assert abs(dbp - side.dbp_label[i]) < 0.5

    def test_relabel_replaces_labels(self, small_cohort):
        ds, side = small_cohort
        shifted = ds.with_labels(ds.sbp + 7, ds.dbp + 7)
        out, audit = relabel_from_abp(shifted, side.abp)
        assert audit == {"no_beats": 0, "rate": 0}
        np.testing.assert_allclose(out.sbp, side.sbp_label, atol=0.5)

    def test_relabel_counts_failures(self, small_cohort):
        ds, side = small_cohort
        abp = side.abp.copy()
        abp[0] = 80.0
        out, audit = relabel_from_abp(ds, abp)
        assert audit["no_beats"] == 1
        assert len(out) == len(ds) - 1


class TestQuality:
    def test_clean_wave_passes(self):
        x = np.sin(np.linspace(0, 20, 500)) + 0.01 * np.random.default_rng(0).standard_normal(500)
        assert quality_filter(x)

    @pytest.mark.parametrize("wave, reason", [
        (np.r_[np.zeros(10), np.nan], "non_finite"),
        (np.full(100, 3.0), "flatline"),
        (np.clip(np.sin(np.linspace(0, 30, 400)), -0.5, 0.5), "clipping"),
    ])
    def test_rejections(self, wave, reason):
        v = quality_filter(wave)
        assert not v.passed and v.reason == reason

    def test_apply_counts(self):
        # long enough that a single repeated extreme is not read as clipping
        tiny = tiny_dataset(length=200)
        ppg = np.array(tiny.ppg, dtype=np.float64)
        ppg[1] = 0.0
        ppg[2, 3] = np.inf
        ds = CuratedDataset(tiny.subjects, tiny.segment_subjects, ppg, tiny.sbp, tiny.dbp,
                            tiny.sample_rate_hz, tiny.segment_length)
        kept, audit = apply_quality_filter(ds)
        assert audit == {"non_finite": 1, "flatline": 1, "clipping": 0}
        assert len(kept) == len(ds) - 2


class TestSummary:
    def test_hand_counts(self, tiny):
        s = summarize_cohort(tiny)
        assert (s.n_subjects, s.n_segments, s.n_male, s.n_female) == (3, 9, 2, 7)
        ages = np.repeat([30, 31, 32], (3, 2, 4))
        assert s.age == pytest.approx((ages.mean(), ages.std()))

    def test_sex_counts_segments(self, nbpdb):
        s = summarize_cohort(nbpdb["cal_free"])
        assert (s.n_male, s.n_female) == (7504, 3771)

    def test_text(self, tiny):
        text = summarize_cohort(tiny).to_text()
        assert text.splitlines()[0] == "Total Sub: 3"
        assert "Age: 31.1±0.9" in text

    def test_missing_bmi_excluded_from_stats(self):
        subj = (SubjectDemographics.without_bmi("a", 30, Sex.MALE), SubjectDemographics("b", 30, Sex.MALE, 20.0))
        ds = CuratedDataset(subj, np.array(["a", "b"]), np.zeros((2, 1)), [110, 110], [70, 70], segment_length=1)
        assert summarize_cohort(ds).bmi == (20.0, 0.0)

    def test_empty(self, tiny):
        with pytest.raises(EmptyDataset):
            summarize_cohort(tiny.subset([]))

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=6))
    def test_male_plus_female_is_total(self, counts):
        s = summarize_cohort(tiny_dataset(tuple(counts)))
        assert s.n_male + s.n_female == s.n_segments == sum(counts)
        assert not math.isnan(s.sbp[0])
