"""Training, prediction and fold ensembles for per-target BP regressors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, Tensor, mse_loss, no_grad
from .autodiff.checkpoint import dumps, format_meta, loads, parse_meta
from .autodiff.optim import PAPER_BETAS, PAPER_LR, PAPER_WEIGHT_DECAY
from .dataset import CuratedDataset, fmt_real
from .errors import (
    EmptyDataset,
    FoldTrainingError,
    InvalidSpec,
    LengthMismatch,
    NonFiniteLoss,
    PPGBenchError,
)
from .metrics import ConfidenceSet, PredictionSet
from .modelzoo import BPModel, DemographicNorm, ModelSpec, build_model, encode_demographics
from .splits import FoldPlan, fold_datasets


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop constants; defaults are the reference protocol.

    ``epochs`` and ``lr`` may be overridden for desk-scale runs.
    ``init_output_bias`` starts the output unit at the mean training label
    so short runs spend their steps on the signal instead of the offset.
    """

    batch_size: int = 32
    epochs: int = 100
    lr: float = PAPER_LR
    betas: tuple[float, float] = PAPER_BETAS
    weight_decay: float = PAPER_WEIGHT_DECAY
    eps: float = 1e-8
    shuffle_seed: int = 0
    init_output_bias: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidSpec("batch_size must be >= 1")
        if self.epochs < 1:
            raise InvalidSpec("epochs must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise InvalidSpec("lr and weight_decay must be non-negative")

    def steps(self, n: int) -> int:
        return self.epochs * math.ceil(n / self.batch_size)


@dataclass(eq=False)
class TrainedModel:
    model: BPModel
    norm: DemographicNorm | None = None
    history: list = field(default_factory=list)

    @property
    def spec(self) -> ModelSpec:
        return self.model.spec

    def checkpoint_bytes(self) -> bytes:
        return model_checkpoint_bytes(self.model, self.norm, len(self.history))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.checkpoint_bytes())


def model_checkpoint_bytes(model: BPModel, norm: DemographicNorm | None = None, epochs: int = 0) -> bytes:
    meta = model.spec.to_text()
    if norm is not None:
        meta += format_meta((k, repr(v)) for k, v in norm.items())
    meta += format_meta([("trained_epochs", epochs)])
    return dumps(model.state_dict(), meta)


def load_trained(path) -> TrainedModel:
    with open(path, "rb") as fh:
        tensors, meta_text = loads(fh.read())
    meta = parse_meta(meta_text)
    spec = ModelSpec.from_mapping(meta)
    model = build_model(spec)
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise InvalidSpec(f"checkpoint does not match its embedded spec: {exc}") from None
    norm = DemographicNorm.from_mapping(meta) if "norm_age_mean" in meta else None
    return TrainedModel(model.eval(), norm, [])


def model_inputs(model: BPModel, ds: CuratedDataset, norm: DemographicNorm | None):
    """``(ppg, demo)`` arrays for a dataset; ``demo`` is ``None`` for PPG-only models."""
    if ds.segment_length != model.spec.input_length:
        raise LengthMismatch(f"segments have length {ds.segment_length}, model expects {model.spec.input_length}")
    ppg = np.asarray(ds.ppg, dtype=model.dtype)
    if not model.spec.use_demographics:
        return ppg, None
    if norm is None:
        raise InvalidSpec("multimodal model needs demographic normalization statistics")
    return ppg, encode_demographics(ds.segment_demographics(), norm).astype(model.dtype)


def train(model: BPModel, train_set: CuratedDataset, cfg: TrainConfig = TrainConfig(),
          norm: DemographicNorm | None = None, progress=None) -> TrainedModel:
    """Minibatch Adam on the MSE loss, reshuffling with a seeded generator each epoch.

    ``history`` holds the mean training loss of each epoch. For multimodal
    models ``norm`` defaults to statistics of ``train_set``.
    """
    n = len(train_set)
    if n == 0:
        raise EmptyDataset("training set is empty")
    if model.spec.use_demographics and norm is None:
        norm = DemographicNorm.from_dataset(train_set)
    ppg, demo = model_inputs(model, train_set, norm)
    y = train_set.labels(model.spec.target).astype(model.dtype)
    if cfg.init_output_bias:
        model.head.out.bias.data = np.full_like(model.head.out.bias.data, y.mean())

    model.train()
    opt = Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay, eps=cfg.eps)
    rng = np.random.default_rng(cfg.shuffle_seed)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            pred = model(Tensor(ppg[idx]), None if demo is None else Tensor(demo[idx]))
            loss = mse_loss(pred.reshape(-1), y[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(epoch, bi, idx.tolist(), value)
            loss.backward()
            opt.step()
            total += value * len(idx)
        history.append(total / n)
        if progress is not None:
            progress(epoch, history[-1])
    model.eval()
    return TrainedModel(model, norm, history)


def predict(tm: TrainedModel, eval_set: CuratedDataset, protocol: str = "cal_based",
            batch_size: int = 256) -> PredictionSet:
    """One record per segment in dataset order, using eval-mode statistics."""
    model = tm.model
    ppg, demo = model_inputs(model, eval_set, tm.norm)
    was_training = model.training
    model.eval()
    out = []
    with no_grad():
        for start in range(0, len(eval_set), batch_size):
            sl = slice(start, start + batch_size)
            out.append(model(Tensor(ppg[sl]), None if demo is None else Tensor(demo[sl])).data.reshape(-1))
    model.train(was_training)
    y_pred = np.concatenate(out).astype(np.float64) if out else np.zeros(0)
    return PredictionSet(eval_set.segment_subjects, eval_set.labels(model.spec.target), y_pred,
                         model.spec.target, protocol, model.spec.name)


def kfold_confidence(train_set: CuratedDataset, spec: ModelSpec, cfg: TrainConfig, folds,
                     eval_set: CuratedDataset, z: float = 1.96, protocol: str = "cal_based"):
    """Train one model per fold from scratch and collect per-segment predictions on ``eval_set``.

    ``folds`` is a ``FoldPlan`` over training subjects (each model withholds
    one fold) or an explicit sequence of fit datasets. Demographic
    statistics come from each model's own fit data. Returns
    ``(ConfidenceSet, [PredictionSet per fold])``.
    """
    if isinstance(folds, FoldPlan):
        fits = (fold_datasets(train_set, folds, f)[0] for f in range(folds.k))
    else:
        fits = iter(folds)
    preds, sets = [], []
    for f, fit in enumerate(fits):
        try:
            norm = DemographicNorm.from_dataset(fit) if spec.use_demographics else None
            tm = train(build_model(spec), fit, cfg, norm)
            p = predict(tm, eval_set, protocol)
        except PPGBenchError as exc:
            raise FoldTrainingError(f, exc) from exc
        sets.append(p)
        preds.append(p.y_pred)
    if not preds:
        raise ValueError("no folds to train")
    return ConfidenceSet(np.stack(preds), z), sets


def history_text(history) -> str:
    return "epoch,loss\n" + "".join(f"{i + 1},{fmt_real(v)}\n" for i, v in enumerate(history))
