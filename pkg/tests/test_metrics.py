import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppgbench.errors import EmptyDataset, MalformedLine, TooFewSubjects, UsageError, ZeroVariance
from ppgbench.metrics import (
    ConfidenceSet,
    MetricBundle,
    PredictionSet,
    aami_gate,
    compute_metrics,
    confidence_text,
    histogram_text,
    patient_series_text,
    read_predictions,
    residual_histogram,
    top_patients,
    top_patients_report,
    write_predictions,
)


def oracle_metrics(y_true, y_pred):
    """Plain-Python recomputation with exactly rounded sums."""
    e = [t - p for t, p in zip(y_true, y_pred)]
    n = len(e)
    me = math.fsum(e) / n
    mae = math.fsum(abs(v) for v in e) / n
    sd = math.sqrt(math.fsum((v - me) ** 2 for v in e) / n)
    abs_sd = math.sqrt(math.fsum((abs(v) - mae) ** 2 for v in e) / n)
    mt = math.fsum(y_true) / n
    ss_tot = math.fsum((t - mt) ** 2 for t in y_true)
    r2 = 1.0 - math.fsum(v * v for v in e) / ss_tot if ss_tot > 0 else None
    return dict(n=n, mae=mae, me=me, sd=sd, r2=r2, abs_sd=abs_sd)


def random_set(rng, n=None):
    n = n or int(rng.integers(2, 400))
    y = rng.uniform(90, 130, n)
    pred = y + rng.normal(rng.uniform(-6, 6), rng.uniform(0.5, 12), n)
    sid = np.array([f"p{i}" for i in rng.integers(0, 20, n)])
    return PredictionSet(sid, y, pred, "SBP", "cal_free")


def bundle(me, sd):
    return MetricBundle(10, abs(me), me, sd, 0.5, 1.0)


class TestComputeMetrics:
    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            p = random_set(rng)
            got, want = compute_metrics(p), oracle_metrics(p.y_true.tolist(), p.y_pred.tolist())
            assert got.n == want["n"]
            for key in ("mae", "me", "sd", "r2", "abs_sd"):
                assert getattr(got, key) == pytest.approx(want[key], rel=1e-12, abs=0)

    def test_sign_convention(self):
        p = PredictionSet(["a", "b"], [120.0, 100.0], [118.0, 96.0], "SBP", "cal_based")
        m = compute_metrics(p)
        assert (m.me, m.mae, m.sd) == (3.0, 3.0, 1.0)

    def test_zero_variance(self):
        p = PredictionSet(["a", "b"], [110.0, 110.0], [111.0, 108.0], "SBP", "cal_based")
        assert compute_metrics(p).r2 is None
        with pytest.raises(ZeroVariance):
            compute_metrics(p, strict=True)

    def test_perfect_predictions(self):
        p = PredictionSet(["a", "b", "c"], [100.0, 110.0, 120.0], [100.0, 110.0, 120.0], "DBP", "cal_free")
        m = compute_metrics(p)
        assert (m.mae, m.me, m.sd, m.r2) == (0.0, 0.0, 0.0, 1.0)

    @pytest.mark.parametrize("kw", [dict(y_pred=[1.0]), dict(y_pred=[1.0, np.nan])])
    def test_rejects_bad_sets(self, kw):
        with pytest.raises(ValueError):
            PredictionSet(["a", "b"], [1.0, 2.0], kw["y_pred"], "SBP", "cal_free")

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            PredictionSet([], [], [], "SBP", "cal_free")


class TestAami:
    def test_reference_points(self):
        assert not aami_gate(bundle(5.0, 8.0)).passed
        assert aami_gate(bundle(4.999, 7.999)).passed
        assert aami_gate(bundle(-4.999, 7.999)).passed

    def test_exhaustive_grid(self):
        """Every (ME, SD) pair on a 1e-3 grid straddling both limits."""
        mes = np.round(np.arange(4.990, 5.0105, 0.001), 3)
        sds = np.round(np.arange(7.990, 8.0105, 0.001), 3)
        for me in np.concatenate([mes, -mes]):
            for sd in sds:
                v = aami_gate(bundle(float(me), float(sd)))
                assert v.me_ok == (abs(me) < 5.0)
                assert v.sd_ok == (sd < 8.0)
                assert v.passed == (abs(me) < 5.0 and sd < 8.0)

    def test_adjacent_floats(self):
        below5, below8 = np.nextafter(5.0, 0.0), np.nextafter(8.0, 0.0)
        assert aami_gate(bundle(below5, below8)).passed
        assert not aami_gate(bundle(below5, 8.0)).passed
        assert not aami_gate(bundle(-5.0, below8)).passed


class TestHistogram:
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=60), st.integers(1, 50))
    def test_counts_every_residual(self, residuals, bins):
        e = np.array(residuals)
        p = PredictionSet(["a"] * len(e), 100.0 + e, np.full(len(e), 100.0), "SBP", "cal_free")
        edges, counts = residual_histogram(p, bins)
        assert counts.sum() == len(e)
        assert len(edges) == bins + 1
        assert edges[0] == -edges[-1]
        assert edges[-1] >= np.abs(p.residuals).max()

    def test_bin_assignment(self):
        p = PredictionSet(["a"] * 4, [101.0, 99.0, 100.5, 100.0], [100.0] * 4, "SBP", "cal_free")
        edges, counts = residual_histogram(p, 4)
        np.testing.assert_array_equal(edges, [-1.0, -0.5, 0.0, 0.5, 1.0])
        np.testing.assert_array_equal(counts, [1, 0, 1, 2])

    def test_all_zero_residuals(self):
        p = PredictionSet(["a"] * 3, [100.0] * 3, [100.0] * 3, "SBP", "cal_free")
        edges, counts = residual_histogram(p, 3)
        assert edges[0] == -1.0 and counts.tolist() == [0, 3, 0]

    def test_bins_validated(self):
        p = PredictionSet(["a"], [100.0], [99.0], "SBP", "cal_free")
        with pytest.raises(UsageError):
            residual_histogram(p, 0)

    def test_text(self):
        text = histogram_text(np.array([-1.0, 0.0, 1.0]), np.array([2, 3]))
        assert text == "bin_lo,bin_hi,count\n-1.00000,0.00000,2\n0.00000,1.00000,3\n"


class TestConfidence:
    def test_sample_sd_band(self):
        preds = np.array([[100.0, 80.0], [102.0, 80.0], [104.0, 83.0]])
        ci = ConfidenceSet(preds)
        np.testing.assert_allclose(ci.mean, [102.0, 81.0])
        np.testing.assert_allclose(ci.sd, [2.0, math.sqrt(3.0)])
        np.testing.assert_allclose(ci.lower, [102.0 - 3.92, 81.0 - 1.96 * math.sqrt(3.0)])
        assert ci.coverage([102.0, 90.0]) == 0.5

    def test_single_model_has_zero_width(self):
        ci = ConfidenceSet(np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(ci.lower, ci.upper)


def counted_set(counts):
    sid = np.array([s for s, c in counts.items() for _ in range(c)])
    y = np.linspace(90, 130, len(sid))
    return PredictionSet(sid, y, y + 1.0, "SBP", "cal_free")


class TestTopPatients:
    def test_order_and_ties(self):
        p = counted_set({"d": 3, "b": 5, "a": 3, "c": 5, "e": 1})
        assert top_patients(p, 4) == ["b", "c", "a", "d"]

    def test_too_few(self):
        with pytest.raises(TooFewSubjects):
            top_patients(counted_set({"a": 2, "b": 1}), 3)

    @given(st.dictionaries(st.text("abcdef", min_size=1, max_size=3), st.integers(1, 6), min_size=1, max_size=15))
    def test_is_a_sorted_prefix(self, counts):
        k = min(3, len(counts))
        want = sorted(counts, key=lambda s: (-counts[s], s))[:k]
        assert top_patients(counted_set(counts), k) == want

    def test_report_carries_intervals(self):
        p = counted_set({"a": 2, "b": 3})
        preds = np.vstack([p.y_pred, p.y_pred + 2.0])
        series = top_patients_report(p, ConfidenceSet(preds), k=2)
        assert [s.subject_id for s in series] == ["b", "a"]
        np.testing.assert_array_equal(series[1].indices, [0, 1])
        np.testing.assert_allclose(series[0].upper - series[0].lower, 2 * 1.96 * math.sqrt(2.0))
        text = patient_series_text(series)
        assert text.splitlines()[0] == "subject_id,segment_index,y_true,y_pred,lower,upper"
        assert len(text.splitlines()) == 6
        with pytest.raises(ValueError):
            top_patients_report(p, ConfidenceSet(preds[:, :2]), k=2)

    def test_text_without_intervals(self):
        line = patient_series_text(top_patients_report(counted_set({"a": 1}), k=1)).splitlines()[1]
        assert line.endswith(",,")


class TestFiles:
    def test_round_trip(self, tmp_path):
        p = random_set(np.random.default_rng(3), 50)
        p = PredictionSet(p.subject_ids, p.y_true, p.y_pred, "DBP", "cal_based", "MLeNet")
        write_predictions(p, tmp_path / "p.csv")
        back = read_predictions(tmp_path / "p.csv")
        assert (back.target, back.protocol, back.model) == ("DBP", "cal_based", "MLeNet")
        np.testing.assert_array_equal(back.y_true, p.y_true)
        np.testing.assert_array_equal(back.y_pred, p.y_pred)
        assert back.records == p.records

    @pytest.mark.parametrize("text, line", [
        ("subject_id,y_true,y_pred\n", 1),
        ("#target=SBP\n", 1),
        ("#target=SBP protocol=cal_free\na,1,2,3\n", 2),
        ("#target=SBP protocol=cal_free\nsubject_id,y_true,y_pred\na,1,x\n", 3),
    ])
    def test_malformed(self, tmp_path, text, line):
        (tmp_path / "p.csv").write_text(text)
        with pytest.raises(MalformedLine) as exc:
            read_predictions(tmp_path / "p.csv")
        assert exc.value.line_no == line

    def test_confidence_text(self):
        p = PredictionSet(["a"], [100.0], [99.0], "SBP", "cal_free")
        text = confidence_text(p, ConfidenceSet(np.array([[99.0], [101.0]])))
        assert text.splitlines()[1].startswith("a,100.000,100.000,")
