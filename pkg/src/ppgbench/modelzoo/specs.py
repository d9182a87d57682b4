"""Declarative model specifications.

A ``ModelSpec`` fully determines parameter shapes; together with its seed it
determines the initial parameter values. Specs round-trip through a flat
``key=value`` text block so checkpoints describe themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from ..errors import InvalidSpec

BACKBONES = ("lenet1d", "xresnet18_1d", "xresnet50_1d", "inception1d", "s4_1d")
TARGETS = ("SBP", "DBP")

# display names used in reports; the "M" prefix marks the multimodal variant
DISPLAY_NAMES = {
    "lenet1d": "LeNet",
    "xresnet18_1d": "ResNet18",
    "xresnet50_1d": "ResNet50",
    "inception1d": "Inception",
    "s4_1d": "S4",
}


def display_name(backbone: str, use_demographics: bool) -> str:
    return ("M" if use_demographics else "") + DISPLAY_NAMES[backbone]


@dataclass(frozen=True)
class DemographicEncoderSpec:
    n_inputs: int = 3  # (age_std, sex_code, bmi_std)
    n_layers: int = 2
    hidden: int = 16

    @property
    def out_width(self) -> int:
        return self.hidden


@dataclass(frozen=True)
class FusionHeadSpec:
    hidden: int = 32
    n_outputs: int = 1

    def in_width(self, backbone_width: int, use_demographics: bool,
                 encoder: DemographicEncoderSpec = DemographicEncoderSpec()) -> int:
        return backbone_width + (encoder.out_width if use_demographics else 0)


@dataclass(frozen=True)
class InceptionSpec:
    n_blocks: int = 6
    kernel_sizes: tuple[int, ...] = (39, 19, 9)
    bottleneck: int = 32
    branch_filters: int = 32
    residual_every: int = 3

    def __post_init__(self):
        if any(k % 2 == 0 for k in self.kernel_sizes):
            raise InvalidSpec(f"inception kernel sizes must be odd, got {self.kernel_sizes}")
        if self.n_blocks % self.residual_every:
            raise InvalidSpec("n_blocks must be a multiple of residual_every")

    @property
    def out_channels(self) -> int:
        return self.branch_filters * (len(self.kernel_sizes) + 1)


@dataclass(frozen=True)
class S4Spec:
    d_model: int = 512
    state_dim: int = 16
    n_blocks: int = 4
    l_max: int = 2048
    dt_min: float = 1e-2
    dt_max: float = 1.0


@dataclass(frozen=True)
class XResNetSpec:
    depth: int = 18
    stem_channels: int = 64
    kernel_size: int = 5
    widths: tuple[int, ...] = (64, 128, 256, 512)

    def __post_init__(self):
        if self.depth not in (18, 50):
            raise InvalidSpec(f"xresnet depth must be 18 or 50, got {self.depth}")

    @property
    def layers(self) -> tuple[int, ...]:
        return (2, 2, 2, 2) if self.depth == 18 else (3, 4, 6, 3)

    @property
    def expansion(self) -> int:
        return 1 if self.depth == 18 else 4

    @property
    def out_channels(self) -> int:
        return self.widths[-1] * self.expansion


@dataclass(frozen=True)
class ModelSpec:
    """One model predicts one target.

    ``width_scale`` shrinks every channel count of the convolutional and
    state-space backbones (LeNet is already small and ignores it); 1.0 is
    the reference architecture, smaller values exist for desk-scale runs.
    """

    backbone: str
    use_demographics: bool
    target: str
    input_length: int
    seed: int = 0
    width_scale: float = 1.0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise InvalidSpec(f"unknown backbone {self.backbone!r}; choose from {', '.join(BACKBONES)}")
        if self.target not in TARGETS:
            raise InvalidSpec(f"target must be SBP or DBP, got {self.target!r}")
        if self.input_length < 1:
            raise InvalidSpec(f"input_length must be positive, got {self.input_length}")
        if not self.width_scale > 0:
            raise InvalidSpec(f"width_scale must be positive, got {self.width_scale}")

    @property
    def name(self) -> str:
        return display_name(self.backbone, self.use_demographics)

    def scaled(self, channels: int) -> int:
        return max(1, int(round(channels * self.width_scale)))

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelSpec":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                k, sep, v = line.partition("=")
                if not sep:
                    raise InvalidSpec(f"bad spec line {line!r}")
                kv[k.strip()] = v.strip()
        return cls.from_mapping(kv)

    @classmethod
    def from_mapping(cls, kv) -> "ModelSpec":
        try:
            return cls(
                backbone=kv["backbone"],
                use_demographics=_parse_bool(kv["use_demographics"]),
                target=str(kv["target"]).upper(),
                input_length=int(kv["input_length"]),
                seed=int(kv.get("seed", 0)),
                width_scale=float(kv.get("width_scale", 1.0)),
            )
        except KeyError as exc:
            raise InvalidSpec(f"model spec is missing {exc.args[0]!r}") from None
        except ValueError as exc:
            raise InvalidSpec(f"bad model spec value: {exc}") from None


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")
