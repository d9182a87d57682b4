from .backbones import Inception1d, LeNet1d, S4Backbone, XResNet1d, as_batch, build_backbone
from .model import (
    BPModel,
    DemographicEncoder,
    DemographicNorm,
    FusionHead,
    build_model,
    demographic_features,
    encode_demographics,
    forward,
    param_count,
)
from .s4 import (
    S4DLayer,
    causal_conv,
    continuous_kernel,
    discretize,
    recurrent_scan,
    s4_kernel,
    s4d_kernel,
    ssm_kernel,
)
from .specs import (
    BACKBONES,
    TARGETS,
    DemographicEncoderSpec,
    FusionHeadSpec,
    InceptionSpec,
    ModelSpec,
    S4Spec,
    XResNetSpec,
    display_name,
)

__all__ = [
    "BACKBONES", "BPModel", "DemographicEncoder", "DemographicEncoderSpec", "DemographicNorm",
    "FusionHead", "FusionHeadSpec", "Inception1d", "InceptionSpec", "LeNet1d", "ModelSpec",
    "S4Backbone", "S4DLayer", "S4Spec", "TARGETS", "XResNet1d", "XResNetSpec", "as_batch",
    "build_backbone", "build_model", "causal_conv", "continuous_kernel", "demographic_features",
    "discretize", "display_name", "encode_demographics", "forward", "param_count",
    "recurrent_scan", "s4_kernel", "s4d_kernel", "ssm_kernel",
]
