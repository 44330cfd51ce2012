from .architectures import ARCHITECTURES, BlockNet, identity_embedder, linear_probe, tiny_cnn, tiny_mlp
from .labels import OTHER, SIXTEEN_CLASSES, ClassMapping, coarse_accuracy, predict_coarse
from .registry import (
    EARLY,
    LATE,
    MIDDLE,
    STAGE_FRACTIONS,
    ActivationMap,
    LayerRef,
    ModelDescriptor,
    ModelHandle,
    ModelZoo,
    StageSpec,
    ZooError,
    extract_activations,
    layer_output,
    resolve_stage,
    stage_collisions,
)
