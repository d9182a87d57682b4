import numpy as np
import pytest

from conftest import tiny_dataset
from ppgbench.autodiff import Tensor, mse_loss
from ppgbench.autodiff.checkpoint import dumps
from ppgbench.dataset import CuratedDataset
from ppgbench.errors import FoldTrainingError, InvalidSpec, LengthMismatch, NonFiniteLoss
from ppgbench.modelzoo import DemographicNorm, ModelSpec, build_model
from ppgbench.splits import build_folds, fold_datasets
from ppgbench.train import (
    TrainConfig,
    history_text,
    kfold_confidence,
    load_trained,
    model_inputs,
    predict,
    train,
)

FAST = TrainConfig(batch_size=8, epochs=3, lr=1e-3)


def spec(bb="lenet1d", demo=True, L=32, seed=0):
    return ModelSpec(bb, demo, "SBP", L, seed, 0.125)


@pytest.fixture
def data():
    return tiny_dataset((6, 5, 7, 4, 6), length=32, seed=1)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(batch_size=0), dict(epochs=0), dict(lr=-1.0), dict(weight_decay=-1e-3)])
    def test_rejects(self, kw):
        with pytest.raises(InvalidSpec):
            TrainConfig(**kw)

    def test_steps(self):
        assert TrainConfig(batch_size=32, epochs=3).steps(65) == 9


class TestTrain:
    def test_deterministic(self, data):
        a = train(build_model(spec()), data, FAST)
        b = train(build_model(spec()), data, FAST)
        assert a.checkpoint_bytes() == b.checkpoint_bytes()
        assert a.history == b.history
        c = train(build_model(spec()), data, TrainConfig(batch_size=8, epochs=3, lr=1e-3, shuffle_seed=1))
        assert c.checkpoint_bytes() != a.checkpoint_bytes()

    def test_zero_lr_history_is_train_mode_mse(self, data):
        """With nothing updated, the epoch loss is the segment-weighted mean of batch MSEs."""
        cfg = TrainConfig(batch_size=8, epochs=1, lr=0.0, weight_decay=0.0)
        m = build_model(spec("lenet1d", False))
        before = m.state_dict()
        tm = train(m, data, cfg)
        for k, v in m.state_dict().items():
            np.testing.assert_array_equal(v, before[k])
        order = np.random.default_rng(0).permutation(len(data))
        ppg, y = data.ppg, data.sbp.astype(np.float32)
        total = 0.0
        for s in range(0, len(data), 8):
            idx = order[s:s + 8]
            total += mse_loss(m(Tensor(ppg[idx])).reshape(-1), y[idx]).item() * len(idx)
        assert tm.history[0] == pytest.approx(total / len(data), rel=1e-6)

    def test_output_bias_starts_at_label_mean(self, data):
        cfg = TrainConfig(epochs=1, lr=0.0, weight_decay=0.0, init_output_bias=True)
        tm = train(build_model(spec()), data, cfg)
        assert tm.model.head.out.bias.data[0] == pytest.approx(data.sbp.mean(), rel=1e-6)

    def test_loss_goes_down(self, data):
        tm = train(build_model(spec()), data, TrainConfig(batch_size=8, epochs=40, lr=3e-3, init_output_bias=True))
        assert tm.history[-1] < 0.5 * tm.history[0]

    def test_norm_defaults_to_training_set(self, data):
        tm = train(build_model(spec()), data, FAST)
        assert tm.norm == DemographicNorm.from_dataset(data)
        assert train(build_model(spec(demo=False)), data, FAST).norm is None

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss(self, data):
        ppg = np.array(data.ppg)
        ppg[3, 5] = np.nan
        bad = CuratedDataset(data.subjects, data.segment_subjects, ppg, data.sbp, data.dbp,
                             data.sample_rate_hz, data.segment_length)
        with pytest.raises(NonFiniteLoss) as exc:
            train(build_model(spec(demo=False)), bad, TrainConfig(batch_size=len(bad), epochs=2))
        assert (exc.value.epoch, exc.value.batch_index) == (0, 0)
        assert 3 in exc.value.segment_indices

    def test_progress_callback(self, data):
        seen = []
        tm = train(build_model(spec()), data, FAST, progress=lambda e, loss: seen.append((e, loss)))
        assert seen == list(enumerate(tm.history))
        assert history_text(tm.history).splitlines()[0] == "epoch,loss"


class TestPredict:
    def test_records_follow_dataset(self, data):
        tm = train(build_model(spec()), data, FAST)
        p = predict(tm, data, "cal_free", batch_size=5)
        assert (p.target, p.protocol, p.model) == ("SBP", "cal_free", "MLeNet")
        np.testing.assert_array_equal(p.subject_ids, data.segment_subjects)
        np.testing.assert_array_equal(p.y_true, data.sbp)
        np.testing.assert_allclose(p.y_pred, predict(tm, data, batch_size=256).y_pred, rtol=1e-6)

    def test_inputs_checked(self, data):
        m = build_model(spec(L=16))
        with pytest.raises(LengthMismatch):
            model_inputs(m, data, None)
        with pytest.raises(InvalidSpec):
            model_inputs(build_model(spec()), data, None)


class TestCheckpoint:
    @pytest.mark.parametrize("bb", ["lenet1d", "inception1d", "s4_1d"])
    def test_round_trip(self, tmp_path, data, bb):
        tm = train(build_model(spec(bb)), data, TrainConfig(batch_size=8, epochs=1, lr=1e-3))
        tm.save(tmp_path / "m.ckpt")
        back = load_trained(tmp_path / "m.ckpt")
        assert back.spec == tm.spec and back.norm == tm.norm
        np.testing.assert_array_equal(predict(back, data).y_pred, predict(tm, data).y_pred)
        want = tm.model.state_dict()
        for k, v in back.model.state_dict().items():
            np.testing.assert_array_equal(v, want[k])

    def test_spec_mismatch(self, tmp_path, data):
        blob = build_model(spec("lenet1d", False)).state_dict()
        (tmp_path / "m.ckpt").write_bytes(dumps(blob, spec("s4_1d", False).to_text()))
        with pytest.raises(InvalidSpec):
            load_trained(tmp_path / "m.ckpt")


class TestFolds:
    def test_matches_independent_fold_runs(self, data):
        plan = build_folds(data, k=3, seed=2)
        ci, sets = kfold_confidence(data, spec(), FAST, plan, data)
        assert ci.predictions.shape == (3, len(data))
        for f in range(3):
            fit, _ = fold_datasets(data, plan, f)
            tm = train(build_model(spec()), fit, FAST, DemographicNorm.from_dataset(fit))
            np.testing.assert_array_equal(sets[f].y_pred, predict(tm, data).y_pred)
        np.testing.assert_allclose(ci.mean, np.mean([s.y_pred for s in sets], axis=0))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_failure_names_fold(self, data):
        ppg = np.array(data.ppg)
        ppg[:] = np.inf
        bad = CuratedDataset(data.subjects, data.segment_subjects, ppg, data.sbp, data.dbp,
                             data.sample_rate_hz, data.segment_length)
        with pytest.raises(FoldTrainingError) as exc:
            kfold_confidence(data, spec(), FAST, [data, bad], data)
        assert exc.value.fold == 1
        assert isinstance(exc.value.cause, NonFiniteLoss)
