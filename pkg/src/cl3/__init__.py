"""Deterministic collaborative learning for simulated hospital cohorts.

The workflow: pretrain a small dense backbone on a public shard, freeze it,
graft a fresh classification head to form the initial global model, then
federate drift-gated local training across hospitals as data increments
arrive. Runs either in-process (run_cl3) or as separate central/client
processes over the binary wire protocol (serve_central / run_client).
"""

from .datasets import (
    Cohort,
    CohortSpec,
    DatasetShard,
    DriftInjection,
    IncrementSchedule,
    load_cohort_dir,
    load_csv,
    save_cohort_dir,
    save_csv,
    schedule_increments,
    split_holdout,
    synthesize_cohort,
)
from .drift import DriftDetector, DriftVerdict, assess, update_baseline
from .errors import Cl3Error, FrameError, ProtocolError, ValidationError
from .estimator import MlpClassifier
from .federation import (
    ClientState,
    LocalUpdate,
    RoundReport,
    ServerState,
    aggregate,
    local_train,
    run_round,
)
from .metrics import ConfusionMatrix, MetricsReport, confusion, render_report, scores
from .network import (
    Grads,
    HyperParams,
    Mlp,
    OptimizerState,
    accuracy,
    adam_step,
    forward,
    init_mlp,
    loss_and_grads,
    predict,
    train_local,
)
from .simulation import Cl3Config, Cl3RunLog, evaluate_global, run_cl3
from .transfer import (
    GlobalModel,
    PretrainedWeights,
    backbone_features,
    build_head_and_init_global,
    epochs_to_target,
    pretrain_backbone,
)
from .weightfmt import decode_weights, encode_weights, load_weights, save_weights
from .wire import decode_frame, encode_frame, run_client, serve_central

__version__ = "0.1.0"

__all__ = [
    "Cl3Config",
    "Cl3Error",
    "Cl3RunLog",
    "ClientState",
    "Cohort",
    "CohortSpec",
    "ConfusionMatrix",
    "DatasetShard",
    "DriftDetector",
    "DriftInjection",
    "DriftVerdict",
    "FrameError",
    "GlobalModel",
    "Grads",
    "HyperParams",
    "IncrementSchedule",
    "LocalUpdate",
    "MetricsReport",
    "Mlp",
    "MlpClassifier",
    "OptimizerState",
    "PretrainedWeights",
    "ProtocolError",
    "RoundReport",
    "ServerState",
    "ValidationError",
    "accuracy",
    "adam_step",
    "aggregate",
    "assess",
    "backbone_features",
    "build_head_and_init_global",
    "confusion",
    "decode_frame",
    "decode_weights",
    "encode_frame",
    "encode_weights",
    "epochs_to_target",
    "evaluate_global",
    "forward",
    "init_mlp",
    "load_cohort_dir",
    "load_csv",
    "load_weights",
    "local_train",
    "loss_and_grads",
    "predict",
    "pretrain_backbone",
    "render_report",
    "run_cl3",
    "run_client",
    "run_round",
    "save_cohort_dir",
    "save_csv",
    "save_weights",
    "schedule_increments",
    "scores",
    "serve_central",
    "split_holdout",
    "synthesize_cohort",
    "train_local",
    "update_baseline",
]
