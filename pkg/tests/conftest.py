import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ppgbench.dataset import CuratedDataset, Sex, SubjectDemographics
from ppgbench.synthgen import SynthConfig, generate_cohort

settings.register_profile("ppgbench", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ppgbench")

DATA = Path(__file__).parent / "data"


def tiny_dataset(counts=(3, 2, 4), length=8, seed=0) -> CuratedDataset:
    """Hand-sized dataset: ``counts[i]`` segments for subject ``s{i}``."""
    rng = np.random.default_rng(seed)
    subjects = [SubjectDemographics(f"s{i}", 30 + i, Sex.MALE if i % 2 else Sex.FEMALE, 20.0 + i)
                for i in range(len(counts))]
    sid = np.repeat([s.subject_id for s in subjects], counts)
    n = len(sid)
    sbp = rng.uniform(95, 125, n)
    return CuratedDataset(tuple(subjects), sid, rng.standard_normal((n, length)), sbp, sbp - 40,
                          sample_rate_hz=32.0, segment_length=length)


@pytest.fixture
def tiny():
    return tiny_dataset()


@pytest.fixture(scope="session")
def small_cohort():
    """12 subjects at 32 Hz with 128-sample segments, plus its sidecar."""
    return generate_cohort(SynthConfig(n_subjects=12, segments_per_subject=(4, 8), seed=5,
                                       sample_rate_hz=32.0, segment_length=128, emit_abp=True))


def nbpdb_partitions() -> dict:
    """Expand the stored NBPDB fixture into one dataset per partition (4-sample segments)."""
    rows = list(csv.DictReader(open(DATA / "nbpdb_table1.csv")))
    out = {}
    for part in ("train", "cal_based", "cal_free"):
        subj, ids, sbp, dbp = {}, [], [], []
        for r in rows:
            if r["partition"] != part:
                continue
            sid = r["subject_id"]
            subj[sid] = SubjectDemographics(sid, int(r["age"]), Sex(r["sex"]), float(r["bmi"]))
            n = int(r["n_segments"])
            ids += [sid] * n
            sbp += [float(r["sbp"])] * n
            dbp += [float(r["dbp"])] * n
        out[part] = CuratedDataset(tuple(subj.values()), np.array(ids), np.zeros((len(ids), 4)),
                                   sbp, dbp, segment_length=4)
    return out


@pytest.fixture(scope="session")
def nbpdb():
    return nbpdb_partitions()


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, when that suite ran."""
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        ok, detail = mod.RESULTS.get(n, (False, "not run or errored before a result"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
