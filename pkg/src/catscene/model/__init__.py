from .encoder import AdapterConfig, Backbone, BranchFeatures, EncoderConfig
from .fusion import AcfModule, ContextAttention, FusedFeatures
from .heads import HeadOutputs, MultiLevelHeads, infer, total_loss
from .classifier import (
    FUSION_KINDS,
    ModelConfig,
    ModelOutputs,
    SceneClassifier,
    build_model,
    normalize_fusion,
    parameter_count,
    parameter_groups,
    single_backbone_parameter_count,
    trainable_parameters,
)

__all__ = [
    "AdapterConfig",
    "Backbone",
    "BranchFeatures",
    "EncoderConfig",
    "AcfModule",
    "ContextAttention",
    "FusedFeatures",
    "HeadOutputs",
    "MultiLevelHeads",
    "infer",
    "total_loss",
    "FUSION_KINDS",
    "ModelConfig",
    "ModelOutputs",
    "SceneClassifier",
    "build_model",
    "normalize_fusion",
    "parameter_count",
    "parameter_groups",
    "single_backbone_parameter_count",
    "trainable_parameters",
]
