import json
import subprocess
import sys

import numpy as np
import pytest

from ppgbench.cli import main
from ppgbench.dataset import load_dataset_dir
from ppgbench.metrics import read_predictions
from ppgbench.splits import read_split_manifest
from ppgbench.train import load_trained

SYNTH = ["synth", "--subjects", "12", "--segments-per-subject", "6,10", "--sample-rate", "32",
         "--segment-length", "256", "--emit-abp", "--seed", "1"]
TRAIN = ["--backbone", "lenet1d", "--demo", "--epochs", "2", "--lr", "1e-3", "--batch-size", "16",
         "--init-output-bias"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    steps = [
        SYNTH + ["--out", d / "syn"],
        ["curate", "--input", d / "syn", "--relabel-abp", "--out", d / "cur"],
        ["split", "--input", d / "cur", "--cal-free-fraction", "0.2", "--out", d / "spl"],
        ["train", "--data", d / "cur", "--split", d / "spl/split.csv", *TRAIN, "--folds", "3", "--out", d / "tr"],
        ["eval", "--checkpoint", d / "tr/model.ckpt", "--data", d / "cur", "--split", d / "spl/split.csv",
         "--reference", "--out", d / "ev"],
        ["report", "--inputs", d / "ev", "--top-k", "2", "--out", d / "rep"],
    ]
    codes = [run(*s) for s in steps]
    return d, codes


class TestPipeline:
    def test_every_step_succeeds(self, pipeline):
        assert pipeline[1] == [0] * 6

    def test_curated_and_split(self, pipeline):
        d, _ = pipeline
        cur = load_dataset_dir(d / "cur")
        rows = read_split_manifest(d / "spl/split.csv")
        assert sum(len(v) for v in rows.values()) == len(cur)
        assert (d / "cur/audit.csv").read_text().splitlines()[-1] == f"kept,{len(cur)}"

    def test_checkpoint_and_folds(self, pipeline):
        d, _ = pipeline
        tm = load_trained(d / "tr/model.ckpt")
        assert tm.spec.name == "MLeNet" and tm.norm is not None
        assert sorted(p.name for p in (d / "tr/folds").iterdir()) == [f"fold_{f}.ckpt" for f in range(3)]
        assert len((d / "tr/history.csv").read_text().splitlines()) == 3

    def test_eval_outputs(self, pipeline):
        d, _ = pipeline
        rows = read_split_manifest(d / "spl/split.csv")
        for proto in ("cal_based", "cal_free"):
            p = read_predictions(d / f"ev/predictions_{proto}.csv")
            assert len(p) == len(rows[proto]) and p.model == "MLeNet"
            ci = (d / f"ev/ci_{proto}.csv").read_text().splitlines()
            assert len(ci) == len(p) + 1
        objs = [json.loads(line) for line in (d / "ev/report.json").read_text().splitlines()]
        assert {o["protocol"] for o in objs} == {"cal_based", "cal_free"}
        assert objs[0]["targets"]["SBP"]["reference"]["mae"] is not None

    def test_report_outputs(self, pipeline):
        d, _ = pipeline
        names = {p.relative_to(d / "rep").as_posix() for p in (d / "rep").rglob("*") if p.is_file()}
        assert {"report.json", "report.txt", "config.txt", "residuals/MLeNet_SBP_cal_based.csv",
                "top_patients/MLeNet_SBP_cal_free.csv"} <= names
        top = (d / "rep/top_patients/MLeNet_SBP_cal_based.csv").read_text().splitlines()
        assert top[0] == "subject_id,segment_index,y_true,y_pred,lower,upper"
        assert not top[1].endswith(",,")  # intervals came from the fold ensemble

    def test_config_echo(self, pipeline):
        d, _ = pipeline
        lines = (d / "tr/config.txt").read_text().splitlines()
        assert lines[0] == "command=train"
        assert "epochs=2" in lines and "demo=true" in lines and "lr=0.001" in lines
        assert lines[1:] == sorted(lines[1:])


class TestOptions:
    def test_config_file_and_flag_precedence(self, tmp_path):
        (tmp_path / "c.txt").write_text("# desk run\nsubjects=4\nsegment-length=64\nsample_rate=32\nseed=9\n")
        assert run("synth", "--config", tmp_path / "c.txt", "--seed", "3", "--out", tmp_path / "s") == 0
        echo = (tmp_path / "s/config.txt").read_text().splitlines()
        assert "subjects=4" in echo and "segment_length=64" in echo and "seed=3" in echo
        assert load_dataset_dir(tmp_path / "s").n_subjects == 4

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "c.txt").write_text("colour=blue\n")
        assert run("synth", "--config", tmp_path / "c.txt", "--out", tmp_path / "s") == 1
        assert "colour" in capsys.readouterr().err

    def test_force(self, tmp_path):
        args = ["synth", "--subjects", "3", "--segment-length", "32", "--sample-rate", "32", "--out", tmp_path / "s"]
        assert run(*args) == 0
        assert run(*args) == 1
        assert run(*args, "--force") == 0


class TestExitCodes:
    @pytest.mark.parametrize("argv", [
        [], ["bogus"], ["synth"], ["synth", "--out", "x", "--subjects", "0"],
        ["synth", "--out", "x", "--segments-per-subject", "5"], ["train", "--data", "d", "--out", "x", "--folds", "1"],
        ["report", "--inputs", "a", "--out", "x", "--bins", "0"],
    ])
    def test_usage(self, tmp_path, monkeypatch, argv):
        monkeypatch.chdir(tmp_path)
        assert run(*argv) == 1
        assert not (tmp_path / "x").exists()

    def test_missing_input_is_data_error(self, tmp_path, capsys):
        assert run("curate", "--input", tmp_path / "nope", "--out", tmp_path / "c") == 2
        assert capsys.readouterr().err.startswith("ppgbench curate: error:")
        assert not (tmp_path / "c").exists()

    def test_backbone_mismatch(self, pipeline, tmp_path):
        d, _ = pipeline
        assert run("eval", "--checkpoint", d / "tr/model.ckpt", "--data", d / "cur", "--split", d / "spl/split.csv",
                   "--backbone", "s4_1d", "--out", tmp_path / "e") == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_numeric_error(self, pipeline, tmp_path, capsys):
        d, _ = pipeline
        assert run("train", "--data", d / "cur", "--backbone", "lenet1d", "--epochs", "3", "--lr", "1e30",
                   "--out", tmp_path / "t") == 3
        assert "non-finite loss" in capsys.readouterr().err

    def test_module_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "ppgbench", "synth"], capture_output=True, text=True)
        assert r.returncode == 1
        assert "--out" in r.stderr


class TestDeterminism:
    def test_train_twice_is_identical(self, pipeline, tmp_path):
        d, _ = pipeline
        for name in ("a", "b"):
            assert run("train", "--data", d / "cur", *TRAIN, "--out", tmp_path / name) == 0
        a, b = (np.frombuffer((tmp_path / n / "model.ckpt").read_bytes(), np.uint8) for n in "ab")
        np.testing.assert_array_equal(a, b)
