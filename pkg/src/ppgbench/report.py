"""Benchmark comparison against the stored reference results.

The reference table holds published MAE / error SD / R² per model and
protocol, each as an ``(SBP, DBP)`` pair. A report row pairs a run's
metrics with its reference row, the AAMI verdicts, and a per-cell flag
telling whether the multimodal variant does at least as well as its
PPG-only counterpart (MAE and SD no higher, R² no lower; ties count).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .metrics import PROTOCOLS, MetricBundle, aami_gate, compute_metrics

METRICS = ("mae", "sd", "r2")
TARGET_ORDER = ("SBP", "DBP")
MODEL_ORDER = ("ResNet50", "MResNet50", "ResNet18", "MResNet18", "Inception", "MInception",
               "S4", "MS4", "LeNet", "MLeNet")


def _row(cb_mae, cb_sd, cb_r2, cf_mae, cf_sd, cf_r2):
    return {
        "cal_based": {"mae": cb_mae, "sd": cb_sd, "r2": cb_r2},
        "cal_free": {"mae": cf_mae, "sd": cf_sd, "r2": cf_r2},
    }


# (SBP, DBP) pairs
REFERENCE_TABLE = {
    "ResNet50": _row((5.39, 3.31), (6.98, 4.38), (0.39, 0.38), (6.62, 4.32), (8.03, 5.27), (0.17, 0.06)),
    "MResNet50": _row((5.35, 3.24), (6.90, 4.25), (0.40, 0.42), (6.70, 4.32), (8.10, 5.27), (0.15, 0.07)),
    "ResNet18": _row((5.57, 3.43), (7.05, 4.46), (0.37, 0.36), (6.60, 4.28), (7.98, 5.22), (0.18, 0.09)),
    "MResNet18": _row((5.38, 3.25), (6.97, 4.26), (0.39, 0.41), (6.45, 4.32), (7.80, 5.29), (0.21, 0.07)),
    "Inception": _row((6.01, 3.77), (7.41, 4.73), (0.31, 0.28), (6.39, 4.31), (7.84, 5.16), (0.21, 0.05)),
    "MInception": _row((4.75, 2.90), (6.12, 3.84), (0.53, 0.52), (6.34, 4.34), (7.85, 5.34), (0.21, 0.00)),
    "S4": _row((6.83, 4.57), (8.18, 5.09), (0.10, 0.03), (6.82, 4.53), (8.14, 5.29), (0.11, 0.02)),
    "MS4": _row((7.10, 4.64), (7.88, 4.89), (0.07, 0.00), (6.97, 4.67), (8.06, 5.33), (0.05, -0.04)),
    "LeNet": _row((6.64, 4.10), (8.14, 5.10), (0.17, 0.16), (6.67, 4.34), (8.02, 5.28), (0.17, 0.06)),
    "MLeNet": _row((6.76, 4.12), (8.24, 5.12), (0.15, 0.15), (6.61, 4.32), (7.98, 5.25), (0.18, 0.09)),
}


def reference_cell(model: str, protocol: str, metric: str, target: str, table=REFERENCE_TABLE):
    row = table.get(model)
    if row is None:
        return None
    return row[protocol][metric][TARGET_ORDER.index(target)]


def counterpart(model: str) -> str | None:
    """PPG-only name for a multimodal model name (``MInception`` -> ``Inception``)."""
    if model.startswith("M") and model[1:] in {m for m in MODEL_ORDER if not m.startswith("M")}:
        return model[1:]
    return None


def _better(metric: str, a, b) -> bool | None:
    if a is None or b is None:
        return None
    return a >= b if metric == "r2" else a <= b


@dataclass
class ReportRow:
    model: str
    protocol: str
    metrics: dict = field(default_factory=dict)  # target -> MetricBundle

    def value(self, target: str, metric: str):
        m = self.metrics.get(target)
        return None if m is None else getattr(m, metric)


@dataclass
class BenchmarkReport:
    rows: list
    reference: dict

    def row(self, model: str, protocol: str) -> ReportRow | None:
        for r in self.rows:
            if r.model == model and r.protocol == protocol:
                return r
        return None

    def delta(self, row: ReportRow, target: str, metric: str):
        ref = reference_cell(row.model, row.protocol, metric, target, self.reference)
        val = row.value(target, metric)
        return None if ref is None or val is None else val - ref

    def multimodal_better(self, row: ReportRow, target: str, metric: str):
        base = counterpart(row.model)
        other = self.row(base, row.protocol) if base else None
        if other is None:
            return None
        return _better(metric, row.value(target, metric), other.value(target, metric))

    def objects(self) -> list[dict]:
        out = []
        for r in self.rows:
            obj = {"model": r.model, "protocol": r.protocol, "targets": {}}
            for t in TARGET_ORDER:
                m: MetricBundle | None = r.metrics.get(t)
                if m is None:
                    continue
                verdict = aami_gate(m)
                obj["targets"][t] = {
                    "n": m.n, "mae": m.mae, "me": m.me, "sd": m.sd, "abs_sd": m.abs_sd,
                    "r2": m.r2 if m.r2 is not None else "undefined",
                    "aami": {"me_ok": verdict.me_ok, "sd_ok": verdict.sd_ok, "pass": verdict.passed},
                    "reference": {k: reference_cell(r.model, r.protocol, k, t, self.reference) for k in METRICS},
                    "delta": {k: self.delta(r, t, k) for k in METRICS},
                    "multimodal_better": {k: self.multimodal_better(r, t, k) for k in METRICS},
                }
            out.append(obj)
        return out

    def to_json(self) -> str:
        """One JSON object per model/protocol, one per line."""
        return "".join(json.dumps(o, sort_keys=True) + "\n" for o in self.objects())

    def to_table(self) -> str:
        head = ["model", "protocol", "MAE", "ref MAE", "SD", "ref SD", "R2", "ref R2", "ME", "AAMI"]
        lines = []
        for r in self.rows:
            cells = [r.model, r.protocol]
            for k in METRICS:
                cells.append(self._pair(r, k, self._mark(r, k)))
                cells.append(self._ref_pair(r, k))
            cells.append(self._pair(r, "me"))
            cells.append("/".join(
                ("pass" if aami_gate(r.metrics[t]).passed else "fail") if t in r.metrics else "-"
                for t in TARGET_ORDER))
            lines.append(cells)
        widths = [max(len(str(x)) for x in col) for col in zip(head, *lines)]
        fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
        out = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(c) for c in lines]
        out.append("")
        out.append("values are SBP/DBP in mmHg (R2 dimensionless); * marks a multimodal cell "
                   "at least as good as its PPG-only counterpart")
        return "\n".join(out) + "\n"

    def _mark(self, r, metric):
        return {t: bool(self.multimodal_better(r, t, metric)) for t in TARGET_ORDER}

    @staticmethod
    def _pair(r, metric, marks=None):
        parts = []
        for t in TARGET_ORDER:
            v = r.value(t, metric)
            s = "-" if v is None else f"{v:.2f}"
            if marks and marks.get(t):
                s += "*"
            parts.append(s)
        return "/".join(parts)

    def _ref_pair(self, r, metric):
        vals = [reference_cell(r.model, r.protocol, metric, t, self.reference) for t in TARGET_ORDER]
        return "-" if vals[0] is None else "/".join(f"{v:.2f}" for v in vals)


def _order_key(model: str, protocol: str):
    mi = MODEL_ORDER.index(model) if model in MODEL_ORDER else len(MODEL_ORDER)
    pi = PROTOCOLS.index(protocol) if protocol in PROTOCOLS else len(PROTOCOLS)
    return (mi, model, pi, protocol)


def benchmark_report(prediction_sets, reference=REFERENCE_TABLE) -> BenchmarkReport:
    """Group prediction sets by (model, protocol) and attach metrics per target."""
    sets = list(prediction_sets)
    if not sets:
        raise ValueError("benchmark_report needs at least one prediction set")
    rows: dict = {}
    for p in sets:
        row = rows.setdefault((p.model, p.protocol), ReportRow(p.model, p.protocol))
        row.metrics[p.target] = compute_metrics(p)
    ordered = [rows[k] for k in sorted(rows, key=lambda k: _order_key(*k))]
    return BenchmarkReport(ordered, reference if reference is not None else {})


def report_from_reference(model: str, protocol: str, reference=REFERENCE_TABLE) -> ReportRow:
    """A row whose metrics equal the reference values (ME 0); useful for checking deltas."""
    row = ReportRow(model, protocol)
    for t in TARGET_ORDER:
        cell = {k: reference_cell(model, protocol, k, t, reference) for k in METRICS}
        row.metrics[t] = MetricBundle(n=0, mae=cell["mae"], me=0.0, sd=cell["sd"], r2=cell["r2"], abs_sd=0.0)
    return row


__all__ = [
    "BenchmarkReport", "MODEL_ORDER", "REFERENCE_TABLE", "ReportRow", "benchmark_report",
    "counterpart", "reference_cell", "report_from_reference",
]
