import json

import numpy as np
import pytest

from ppgbench.metrics import PredictionSet, compute_metrics
from ppgbench.report import (
    MODEL_ORDER,
    REFERENCE_TABLE,
    BenchmarkReport,
    benchmark_report,
    counterpart,
    reference_cell,
    report_from_reference,
)

# published rows: cal-based MAE, SD, R2 then cal-free MAE, SD, R2, each SBP/DBP
PUBLISHED = """
ResNet50   5.39/3.31 6.98/4.38 0.39/0.38 6.62/4.32 8.03/5.27 0.17/0.06
MResNet50  5.35/3.24 6.90/4.25 0.40/0.42 6.70/4.32 8.10/5.27 0.15/0.07
ResNet18   5.57/3.43 7.05/4.46 0.37/0.36 6.60/4.28 7.98/5.22 0.18/0.09
MResNet18  5.38/3.25 6.97/4.26 0.39/0.41 6.45/4.32 7.80/5.29 0.21/0.07
Inception  6.01/3.77 7.41/4.73 0.31/0.28 6.39/4.31 7.84/5.16 0.21/0.05
MInception 4.75/2.90 6.12/3.84 0.53/0.52 6.34/4.34 7.85/5.34 0.21/0.00
S4         6.83/4.57 8.18/5.09 0.10/0.03 6.82/4.53 8.14/5.29 0.11/0.02
MS4        7.10/4.64 7.88/4.89 0.07/0.00 6.97/4.67 8.06/5.33 0.05/-0.04
LeNet      6.64/4.10 8.14/5.10 0.17/0.16 6.67/4.34 8.02/5.28 0.17/0.06
MLeNet     6.76/4.12 8.24/5.12 0.15/0.15 6.61/4.32 7.98/5.25 0.18/0.09
"""

# emphasised cells of the multimodal rows, in the same column order
EMPHASIS = {
    "MResNet50": "111111 010101",
    "MResNet18": "111111 101010",
    "MInception": "111111 100010",
    "MS4": "001100 001000",
    "MLeNet": "000000 111111",
}

CELLS = [(p, m, t) for p in ("cal_based", "cal_free") for m in ("mae", "sd", "r2") for t in ("SBP", "DBP")]


def published():
    out = {}
    for line in PUBLISHED.strip().splitlines():
        name, *pairs = line.split()
        vals = [float(v) for pair in pairs for v in pair.split("/")]
        out[name] = dict(zip(CELLS, vals))
    return out


def full_reference_report():
    rows = [report_from_reference(m, p) for m in MODEL_ORDER for p in ("cal_based", "cal_free")]
    return BenchmarkReport(rows, REFERENCE_TABLE)


class TestReferenceTable:
    def test_matches_published_rows(self):
        pub = published()
        assert set(pub) == set(REFERENCE_TABLE) == set(MODEL_ORDER)
        for model, cells in pub.items():
            for (p, m, t), v in cells.items():
                assert reference_cell(model, p, m, t) == v, (model, p, m, t)

    def test_flags_reproduce_emphasis(self):
        rep = full_reference_report()
        for model, pattern in EMPHASIS.items():
            bits = pattern.replace(" ", "")
            for (p, m, t), bit in zip(CELLS, bits):
                assert rep.multimodal_better(rep.row(model, p), t, m) == (bit == "1"), (model, p, m, t)

    def test_reference_rows_have_zero_delta(self):
        rep = full_reference_report()
        for row in rep.rows:
            for _, m, t in CELLS[:6]:
                assert rep.delta(row, t, m) == 0.0

    def test_counterpart(self):
        assert counterpart("MInception") == "Inception"
        assert counterpart("Inception") is None
        assert counterpart("Mystery") is None
        assert reference_cell("Mystery", "cal_free", "mae", "SBP") is None


def pset(model, protocol, target, bias, seed=0, n=50):
    rng = np.random.default_rng(seed)
    y = rng.uniform(90, 130, n)
    return PredictionSet([f"s{i % 7}" for i in range(n)], y, y + bias + rng.normal(0, 3, n), target, protocol, model)


class TestBenchmarkReport:
    def test_rows_ordered_and_grouped(self):
        sets = [pset("MInception", "cal_free", "SBP", 1.0), pset("Inception", "cal_based", "DBP", 0.5),
                pset("Inception", "cal_based", "SBP", 2.0), pset("MInception", "cal_based", "SBP", 0.1)]
        rep = benchmark_report(sets)
        assert [(r.model, r.protocol) for r in rep.rows] == [
            ("Inception", "cal_based"), ("MInception", "cal_based"), ("MInception", "cal_free")]
        assert set(rep.rows[0].metrics) == {"SBP", "DBP"}

    def test_delta_and_flags(self):
        a, b = pset("Inception", "cal_based", "SBP", 4.0, 1), pset("MInception", "cal_based", "SBP", 0.0, 2)
        rep = benchmark_report([a, b])
        row = rep.row("MInception", "cal_based")
        assert rep.delta(row, "SBP", "mae") == pytest.approx(compute_metrics(b).mae - 4.75)
        assert rep.delta(row, "DBP", "mae") is None
        assert rep.multimodal_better(row, "SBP", "mae") is True
        assert rep.multimodal_better(rep.row("Inception", "cal_based"), "SBP", "mae") is None

    def test_json_lines(self):
        rep = benchmark_report([pset("LeNet", "cal_free", "SBP", 6.0), pset("Custom", "cal_free", "DBP", 0.0)])
        objs = [json.loads(line) for line in rep.to_json().splitlines()]
        assert [o["model"] for o in objs] == ["LeNet", "Custom"]
        sbp = objs[0]["targets"]["SBP"]
        assert sbp["aami"] == {"me_ok": False, "sd_ok": True, "pass": False}
        assert sbp["reference"] == {"mae": 6.67, "sd": 8.02, "r2": 0.17}
        assert objs[1]["targets"]["DBP"]["reference"] == {"mae": None, "sd": None, "r2": None}

    def test_undefined_r2_in_json(self):
        p = PredictionSet(["a", "b"], [100.0, 100.0], [99.0, 101.0], "SBP", "cal_free", "LeNet")
        obj = json.loads(benchmark_report([p]).to_json())
        assert obj["targets"]["SBP"]["r2"] == "undefined"
        assert obj["targets"]["SBP"]["delta"]["r2"] is None

    def test_table_text(self):
        text = full_reference_report().to_table()
        lines = text.splitlines()
        assert lines[0].split()[:3] == ["model", "protocol", "MAE"]
        inc = next(line for line in lines if line.startswith("MInception") and "cal_based" in line)
        assert "4.75*/2.90*" in inc and "pass/pass" in inc
        assert len([line for line in lines if "cal_" in line]) == 20

    def test_empty(self):
        with pytest.raises(ValueError):
            benchmark_report([])
