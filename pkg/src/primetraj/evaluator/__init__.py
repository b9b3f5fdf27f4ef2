"""Learned trajectory evaluator: features, attention model and training."""

from .features import SceneFeatures, build_scene_features, dual_representation
from .model import (
    EncodedScene, ModelParams, attention, cross_entropy, embed_sequence, encode, head,
    interact, logits, loss_and_grad, make_labels, score, score_logits, softmax,
)
from .training import TrainingExample, load_params, save_params, train

__all__ = [
    "EncodedScene", "ModelParams", "SceneFeatures", "TrainingExample", "attention",
    "build_scene_features", "cross_entropy", "dual_representation", "embed_sequence",
    "encode", "head", "interact", "load_params", "logits", "loss_and_grad", "make_labels",
    "save_params", "score", "score_logits", "softmax", "train",
]
