"""Pretrained frozen backbone plus a fresh classification head.

The backbone is a small dense net trained on the disjoint public shard; its
output layer is stripped and the remaining layers are frozen. Grafting a
freshly seeded head on top yields the initial global model that federation
starts from.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .network import (
    N_CLASSES,
    HyperParams,
    Mlp,
    accuracy,
    init_mlp,
    iter_train_epochs,
    train_local,
)
from .rng import derive
from .validation import check_features

DEFAULT_BACKBONE_HIDDEN: tuple[int, ...] = (64, 32)
DEFAULT_HEAD_HIDDEN: tuple[int, ...] = (100,)

# Fresh head weights start at a tenth of the He bound. Pretrained features
# carry a large class-mean gap, and a full-scale random head on top of them
# starts out confidently wrong on roughly half of the seeds, which costs
# epochs to unwind.
DEFAULT_HEAD_INIT_SCALE = 0.1

_TAG_BACKBONE_INIT = 21


@dataclass(frozen=True)
class PretrainedWeights:
    """A fully frozen feature extractor and its output width."""

    backbone: Mlp
    backbone_out_dim: int

    def __post_init__(self):
        if self.backbone.frozen_prefix != self.backbone.n_layers:
            raise ValidationError("backbone layers must all be frozen")
        if self.backbone.layer_dims[-1] != self.backbone_out_dim:
            raise ValidationError("backbone_out_dim does not match the final layer width")


@dataclass
class GlobalModel:
    """The server's shared model plus its position in the run."""

    model: Mlp
    round: int = 0
    increment: int = 0

    def __post_init__(self):
        if self.model.frozen_prefix >= self.model.n_layers:
            raise ValidationError("global model needs at least one trainable head layer")
        if self.model.layer_dims[-1] != N_CLASSES:
            raise ValidationError(f"global model must output {N_CLASSES} classes")

    @property
    def backbone_depth(self) -> int:
        return self.model.frozen_prefix

    @property
    def head_dims(self) -> tuple[int, ...]:
        return self.model.layer_dims[self.model.frozen_prefix :]

    def copy(self) -> "GlobalModel":
        return GlobalModel(self.model.copy(), self.round, self.increment)


def pretrain_backbone(
    features,
    labels,
    hyper: HyperParams,
    hidden: Sequence[int] = DEFAULT_BACKBONE_HIDDEN,
) -> PretrainedWeights:
    """Train a classifier on the public shard, strip its output layer, freeze the rest."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("public shard must be a non-empty 2-D feature matrix")
    hidden = tuple(int(h) for h in hidden)
    if not hidden:
        raise ValidationError("backbone needs at least one hidden layer")
    dims = (X.shape[1],) + hidden + (N_CLASSES,)
    model = init_mlp(dims, derive(hyper.seed, _TAG_BACKBONE_INIT))
    trained = train_local(model, X, labels, hyper)
    backbone = Mlp(
        trained.layer_dims[:-1],
        [w.copy() for w in trained.weights[:-1]],
        [b.copy() for b in trained.biases[:-1]],
        frozen_prefix=trained.n_layers - 1,
    )
    return PretrainedWeights(backbone, backbone.layer_dims[-1])


def build_head_and_init_global(
    pretrained: PretrainedWeights,
    head_dims: Sequence[int],
    seed: int,
    head_init_scale: float = DEFAULT_HEAD_INIT_SCALE,
) -> GlobalModel:
    """Graft a freshly seeded trainable head onto the frozen backbone."""
    head_dims = tuple(int(d) for d in head_dims)
    if len(head_dims) < 2:
        raise ValidationError("head needs at least input and output dims")
    if head_dims[0] != pretrained.backbone_out_dim:
        raise ValidationError(
            f"head input dim {head_dims[0]} does not match backbone output "
            f"{pretrained.backbone_out_dim}"
        )
    if head_dims[-1] != N_CLASSES:
        raise ValidationError(f"head must end in {N_CLASSES} classes, got {head_dims[-1]}")
    if head_init_scale <= 0:
        raise ValidationError("head_init_scale must be positive")
    head = init_mlp(head_dims, seed)
    backbone = pretrained.backbone
    model = Mlp(
        backbone.layer_dims + head_dims[1:],
        [w.copy() for w in backbone.weights] + [w * head_init_scale for w in head.weights],
        [b.copy() for b in backbone.biases] + head.biases,
        frozen_prefix=backbone.n_layers,
    )
    return GlobalModel(model, round=0, increment=0)


def backbone_features(backbone: Mlp, batch) -> np.ndarray:
    """ReLU activations of the backbone, as the composed model sees them.

    The backbone's last layer is a hidden layer of the composed network,
    so no softmax is applied here.
    """
    X = check_features(batch, dim=backbone.input_dim)
    a = X
    for w, b in zip(backbone.weights, backbone.biases):
        a = np.maximum(a @ w + b, 0.0)
    return a


def epochs_to_target(
    model: Mlp,
    train_features,
    train_labels,
    holdout_features,
    holdout_labels,
    target: float,
    hyper: HyperParams,
) -> int | None:
    """Epochs of training until hold-out accuracy reaches the target.

    Returns the 1-based epoch index of the first epoch whose post-epoch
    hold-out accuracy is >= target, or None if hyper.epochs epochs never
    get there.
    """
    for epoch, trained in enumerate(
        iter_train_epochs(model, train_features, train_labels, hyper), start=1
    ):
        if accuracy(trained, holdout_features, holdout_labels) >= target:
            return epoch
    return None
