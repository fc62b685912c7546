"""Federated round machinery: local training, weighted aggregation, reports.

Only LocalUpdate values cross the client/server boundary, so raw samples
never leave a client by construction. Aggregation sorts updates by
hospital id before combining, making the result independent of arrival
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .drift import DriftDetector
from .errors import ValidationError
from .network import HyperParams, Mlp, accuracy, train_local
from .rng import derive
from .transfer import GlobalModel

_TAG_ROUND_SEED = 31


def round_seed(base_seed: int, hospital_id: int, increment: int, round_index: int) -> int:
    """Training-shuffle seed for one client in one round; order-independent."""
    return derive(base_seed, _TAG_ROUND_SEED, hospital_id, increment, round_index)


@dataclass
class ClientState:
    """One hospital's view: accumulated pool, local model, drift detector."""

    hospital_id: int
    detector: DriftDetector
    model: Mlp | None = None
    pool_features: np.ndarray | None = None
    pool_labels: np.ndarray | None = None

    @property
    def sample_count(self) -> int:
        return 0 if self.pool_features is None else int(self.pool_features.shape[0])

    def merge_pool(self, features: np.ndarray, labels: np.ndarray) -> None:
        if self.pool_features is None:
            self.pool_features = features.copy()
            self.pool_labels = labels.copy()
        else:
            self.pool_features = np.vstack([self.pool_features, features])
            self.pool_labels = np.concatenate([self.pool_labels, labels])


@dataclass
class ServerState:
    """The aggregator's global model and momentum blend factor."""

    global_model: GlobalModel
    momentum: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.momentum <= 1.0:
            raise ValidationError(f"server momentum must be in (0, 1], got {self.momentum}")

    @property
    def round(self) -> int:
        return self.global_model.round


@dataclass(frozen=True)
class LocalUpdate:
    """Trained head parameters leaving a client; never contains samples."""

    hospital_id: int
    head_weights: tuple[np.ndarray, ...]
    head_biases: tuple[np.ndarray, ...]
    sample_count: int
    local_accuracy: float | None = None

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValidationError("update sample_count must be positive")
        for arr in list(self.head_weights) + list(self.head_biases):
            if not np.isfinite(arr).all():
                raise ValidationError("update parameters contain non-finite values")


@dataclass(frozen=True)
class RoundReport:
    increment: int
    round: int
    participants: tuple[int, ...]
    global_accuracy: float
    local_accuracies: dict[int, float] = field(default_factory=dict)


def head_of(model: Mlp) -> Mlp:
    """The trainable suffix of a model as a standalone network."""
    k = model.frozen_prefix
    if k >= model.n_layers:
        raise ValidationError("model has no trainable head")
    return Mlp(
        model.layer_dims[k:],
        [w.copy() for w in model.weights[k:]],
        [b.copy() for b in model.biases[k:]],
        0,
    )


def local_train(client: ClientState, global_model: Mlp, hyper: HyperParams) -> LocalUpdate:
    """Copy the global weights, train on the client pool, emit the new head."""
    if client.sample_count == 0:
        raise ValidationError(f"hospital {client.hospital_id} has an empty training pool")
    if client.pool_features.shape[1] != global_model.input_dim:
        raise ValidationError(
            f"hospital {client.hospital_id} pool dim {client.pool_features.shape[1]} "
            f"does not match model input {global_model.input_dim}"
        )
    trained = train_local(global_model, client.pool_features, client.pool_labels, hyper)
    client.model = trained
    k = trained.frozen_prefix
    local_acc = accuracy(trained, client.pool_features, client.pool_labels)
    return LocalUpdate(
        hospital_id=client.hospital_id,
        head_weights=tuple(w.copy() for w in trained.weights[k:]),
        head_biases=tuple(b.copy() for b in trained.biases[k:]),
        sample_count=client.sample_count,
        local_accuracy=local_acc,
    )


def aggregate(updates: list[LocalUpdate], server: ServerState) -> ServerState:
    """Sample-count-weighted average of updates, blended with the previous head.

    new_head = (1 - momentum) * previous + momentum * fedavg, with fedavg
    the count-weighted mean over updates sorted by hospital id.
    """
    if not updates:
        raise ValidationError("aggregate needs at least one update")
    ordered = sorted(updates, key=lambda u: u.hospital_id)
    ids = [u.hospital_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate hospital ids in updates: {ids}")

    model = server.global_model.model
    k = model.frozen_prefix
    head_w_shapes = [w.shape for w in model.weights[k:]]
    head_b_shapes = [b.shape for b in model.biases[k:]]
    for u in ordered:
        if [w.shape for w in u.head_weights] != head_w_shapes:
            raise ValidationError(f"hospital {u.hospital_id} update has mismatched head shapes")
        if [b.shape for b in u.head_biases] != head_b_shapes:
            raise ValidationError(f"hospital {u.hospital_id} update has mismatched bias shapes")

    total = sum(u.sample_count for u in ordered)
    avg_w = [np.zeros(s, dtype=np.float64) for s in head_w_shapes]
    avg_b = [np.zeros(s, dtype=np.float64) for s in head_b_shapes]
    for u in ordered:
        for j in range(len(avg_w)):
            avg_w[j] += u.sample_count * u.head_weights[j]
            avg_b[j] += u.sample_count * u.head_biases[j]
    for j in range(len(avg_w)):
        avg_w[j] /= total
        avg_b[j] /= total

    mu = server.momentum
    new_weights = [w.copy() for w in model.weights[:k]]
    new_biases = [b.copy() for b in model.biases[:k]]
    for j in range(len(avg_w)):
        new_weights.append((1.0 - mu) * model.weights[k + j] + mu * avg_w[j])
        new_biases.append((1.0 - mu) * model.biases[k + j] + mu * avg_b[j])

    new_model = Mlp(model.layer_dims, new_weights, new_biases, k)
    new_global = GlobalModel(
        new_model,
        round=server.global_model.round + 1,
        increment=server.global_model.increment,
    )
    return ServerState(new_global, mu)


def run_round(
    server: ServerState,
    clients: dict[int, ClientState],
    participant_ids,
    hyper: HyperParams,
    test_features,
    test_labels,
    increment: int,
    round_index: int,
) -> tuple[ServerState, RoundReport]:
    """One broadcast-train-aggregate cycle over the given participants.

    An empty participant set is a no-op round: the global model is
    unchanged and the report simply re-scores it on the test set.
    """
    ids = sorted(int(h) for h in participant_ids)
    unknown = [h for h in ids if h not in clients]
    if unknown:
        raise ValidationError(f"unknown participant ids: {unknown}")
    updates = []
    for h in ids:
        h_hyper = replace(hyper, seed=round_seed(hyper.seed, h, increment, round_index))
        updates.append(local_train(clients[h], server.global_model.model, h_hyper))
    if updates:
        server = aggregate(updates, server)
    global_acc = accuracy(server.global_model.model, test_features, test_labels)
    report = RoundReport(
        increment=increment,
        round=round_index,
        participants=tuple(ids),
        global_accuracy=global_acc,
        local_accuracies={
            u.hospital_id: u.local_accuracy for u in updates if u.local_accuracy is not None
        },
    )
    return server, report
