"""Demographic encoder, late-fusion head and the assembled per-target model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Linear, Module, Tensor, concat, no_grad, param_count, relu
from ..dataset import CuratedDataset, SubjectDemographics
from ..errors import EmptyDataset, InvalidSpec, MissingBMI
from .backbones import as_batch, build_backbone
from .specs import DemographicEncoderSpec, FusionHeadSpec, ModelSpec


@dataclass(frozen=True)
class DemographicNorm:
    """Standardization constants for age and BMI, taken from the training partition.

    Statistics are per segment (each subject weighted by its segment count)
    with population standard deviations.
    """

    age_mean: float
    age_sd: float
    bmi_mean: float
    bmi_sd: float

    @classmethod
    def from_dataset(cls, train: CuratedDataset) -> "DemographicNorm":
        if len(train) == 0:
            raise EmptyDataset("cannot compute demographic statistics of an empty dataset")
        demo = train.segment_demographics()
        if not all(d.bmi_present for d in demo):
            raise MissingBMI("training set contains subjects without BMI")
        age = np.array([d.age for d in demo], dtype=np.float64)
        bmi = np.array([d.bmi for d in demo], dtype=np.float64)
        return cls(float(age.mean()), float(age.std()), float(bmi.mean()), float(bmi.std()))

    def items(self):
        return [("norm_age_mean", self.age_mean), ("norm_age_sd", self.age_sd),
                ("norm_bmi_mean", self.bmi_mean), ("norm_bmi_sd", self.bmi_sd)]

    @classmethod
    def from_mapping(cls, kv) -> "DemographicNorm":
        return cls(float(kv["norm_age_mean"]), float(kv["norm_age_sd"]),
                   float(kv["norm_bmi_mean"]), float(kv["norm_bmi_sd"]))


def _safe(sd: float) -> float:
    return sd if sd > 0 else 1.0


def demographic_features(d: SubjectDemographics, norm: DemographicNorm) -> np.ndarray:
    """Raw encoder input ``(age_std, sex_code, bmi_std)`` with sex coded 0=F, 1=M."""
    if not d.bmi_present:
        raise MissingBMI(f"subject {d.subject_id} has no BMI")
    return np.array([
        (d.age - norm.age_mean) / _safe(norm.age_sd),
        float(d.sex.code),
        (d.bmi - norm.bmi_mean) / _safe(norm.bmi_sd),
    ])


def encode_demographics(subjects, norm: DemographicNorm, encoder: "DemographicEncoder | None" = None):
    """Stack raw features for a subject or a sequence of subjects.

    With ``encoder`` the 16-wide embedding is returned as a ``Tensor``.
    """
    if isinstance(subjects, SubjectDemographics):
        subjects = [subjects]
    raw = np.stack([demographic_features(d, norm) for d in subjects]) if len(subjects) else np.zeros((0, 3))
    if encoder is None:
        return raw
    return encoder(Tensor(raw.astype(encoder.dtype)))


class DemographicEncoder(Module):
    def __init__(self, rng, spec: DemographicEncoderSpec = DemographicEncoderSpec()):
        self.fc1 = Linear(spec.n_inputs, spec.hidden, rng)
        self.fc2 = Linear(spec.hidden, spec.hidden, rng)

    def forward(self, x):
        return relu(self.fc2(relu(self.fc1(x))))


class FusionHead(Module):
    def __init__(self, in_width: int, rng, spec: FusionHeadSpec = FusionHeadSpec()):
        self.fc1 = Linear(in_width, spec.hidden, rng)
        self.out = Linear(spec.hidden, spec.n_outputs, rng)

    def forward(self, x):
        return self.out(relu(self.fc1(x)))


class BPModel(Module):
    """Backbone features, optionally concatenated with the demographic embedding, into the fusion head."""

    def __init__(self, spec: ModelSpec):
        rng = np.random.default_rng(spec.seed)
        self.spec = spec
        self.backbone = build_backbone(spec, rng)
        enc_spec = DemographicEncoderSpec()
        self.encoder = DemographicEncoder(rng, enc_spec) if spec.use_demographics else None
        in_width = FusionHeadSpec().in_width(self.backbone.out_width, spec.use_demographics, enc_spec)
        self.head = FusionHead(in_width, rng)

    @property
    def feature_width(self) -> int:
        return self.backbone.out_width

    @property
    def fusion_in_width(self) -> int:
        return self.head.fc1.weight.shape[1]

    def forward(self, ppg, demo=None) -> Tensor:
        """``ppg`` is ``(B, L)`` or ``(B, 1, L)``; ``demo`` is the ``(B, 3)`` raw feature block."""
        x = as_batch(ppg)
        if x.shape[2] != self.spec.input_length:
            raise InvalidSpec(f"model expects length {self.spec.input_length}, got {x.shape[2]}")
        feats = self.backbone(x)
        if self.encoder is not None:
            if demo is None:
                raise MissingBMI("multimodal model needs demographic features")
            demo = demo if isinstance(demo, Tensor) else Tensor(np.asarray(demo, dtype=x.dtype))
            feats = concat([feats, self.encoder(demo)], axis=1)
        return self.head(feats)


def build_model(spec: ModelSpec) -> BPModel:
    """Deterministic initialization from ``spec.seed``; float32 parameters."""
    if not isinstance(spec, ModelSpec):
        raise InvalidSpec(f"expected a ModelSpec, got {type(spec).__name__}")
    return BPModel(spec)


def forward(model: BPModel, ppg, demo=None) -> np.ndarray:
    """Predictions in mmHg as a flat vector, computed without recording a graph."""
    with no_grad():
        return model(ppg, demo).data.reshape(-1)


__all__ = [
    "BPModel", "DemographicEncoder", "DemographicNorm", "FusionHead", "build_model",
    "demographic_features", "encode_demographics", "forward", "param_count",
]
