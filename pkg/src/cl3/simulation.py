"""The incremental outer loop: deliver data batches, gate on drift, re-federate.

run_cl3 drives the whole in-process workflow: pretrain the backbone on the
public shard, graft the head, then for each arriving increment assess drift
per hospital, run the configured number of federated rounds with the
drifted hospitals participating, and log everything as structured records.
Two runs with the same config produce byte-identical logs except for the
wall-clock fields listed in TIMING_KEYS.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datasets import (
    Cohort,
    CohortSpec,
    DatasetShard,
    IncrementSchedule,
    delivered_increment,
    load_cohort_dir,
    schedule_increments,
    synthesize_cohort,
)
from .drift import DriftDetector, DriftVerdict, assess, update_baseline
from .errors import ValidationError
from .federation import ClientState, RoundReport, ServerState, run_round
from .metrics import ConfusionMatrix, confusion, scores
from .network import HyperParams, Mlp, accuracy, predict
from .rng import derive
from .transfer import (
    DEFAULT_BACKBONE_HIDDEN,
    DEFAULT_HEAD_HIDDEN,
    GlobalModel,
    PretrainedWeights,
    build_head_and_init_global,
    pretrain_backbone,
)
from .weightfmt import encode_weights

logger = logging.getLogger(__name__)

LOG_FORMAT_VERSION = 1
TIMING_KEYS = ("elapsed_ms", "created_unix")

MERGE_ALWAYS = "always"
MERGE_ON_DRIFT = "on_drift"
ASSESS_LOCAL = "local"
ASSESS_GLOBAL = "global"

_TAG_PRETRAIN = 41
_TAG_HEAD = 42
_TAG_SCHEDULE = 43


@dataclass(frozen=True)
class Cl3Config:
    """Everything a run needs; maps one-to-one onto the flat JSON config keys."""

    increments: int = 6
    rounds_per_increment: int = 6
    hyper: HyperParams = field(default_factory=HyperParams)
    cohort: CohortSpec = field(default_factory=CohortSpec)
    data_dir: str | None = None
    head_hidden: tuple[int, ...] = DEFAULT_HEAD_HIDDEN
    backbone_hidden: tuple[int, ...] = DEFAULT_BACKBONE_HIDDEN
    server_momentum: float = 1.0
    accuracy_drop_threshold: float = 0.05
    mean_shift_z_threshold: float = 3.0
    detector_mode: str = "accuracy"
    assess_against: str = ASSESS_LOCAL
    merge_policy: str = MERGE_ALWAYS
    schedule_seed: int = 2

    def __post_init__(self):
        if self.increments < 1:
            raise ValidationError(f"increments must be >= 1, got {self.increments}")
        if self.rounds_per_increment < 1:
            raise ValidationError(
                f"rounds_per_increment must be >= 1, got {self.rounds_per_increment}"
            )
        if self.assess_against not in (ASSESS_LOCAL, ASSESS_GLOBAL):
            raise ValidationError(f"assess_against must be local or global")
        if self.merge_policy not in (MERGE_ALWAYS, MERGE_ON_DRIFT):
            raise ValidationError(f"merge_policy must be always or on_drift")
        if not 0.0 < self.server_momentum <= 1.0:
            raise ValidationError("server_momentum must be in (0, 1]")
        object.__setattr__(self, "head_hidden", tuple(int(h) for h in self.head_hidden))
        object.__setattr__(self, "backbone_hidden", tuple(int(h) for h in self.backbone_hidden))
        # Instantiating a detector validates the threshold/mode combination.
        self.make_detector()

    def make_detector(self) -> DriftDetector:
        return DriftDetector(
            accuracy_drop_threshold=self.accuracy_drop_threshold,
            mean_shift_z_threshold=self.mean_shift_z_threshold,
            mode=self.detector_mode,
        )

    def to_dict(self) -> dict:
        out = {
            "increments": self.increments,
            "rounds_per_increment": self.rounds_per_increment,
            "learning_rate": self.hyper.learning_rate,
            "l2": self.hyper.l2,
            "batch_size": self.hyper.batch_size,
            "epochs": self.hyper.epochs,
            "adam_beta1": self.hyper.adam_beta1,
            "adam_beta2": self.hyper.adam_beta2,
            "adam_eps": self.hyper.adam_eps,
            "model_seed": self.hyper.seed,
            "schedule_seed": self.schedule_seed,
            "head_hidden": list(self.head_hidden),
            "backbone_hidden": list(self.backbone_hidden),
            "server_momentum": self.server_momentum,
            "accuracy_drop_threshold": self.accuracy_drop_threshold,
            "mean_shift_z_threshold": self.mean_shift_z_threshold,
            "detector_mode": self.detector_mode,
            "assess_against": self.assess_against,
            "merge_policy": self.merge_policy,
        }
        if self.data_dir is not None:
            out["data_dir"] = self.data_dir
        out.update(self.cohort.to_dict())
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Cl3Config":
        data = dict(data)
        hyper_keys = {
            "learning_rate",
            "l2",
            "batch_size",
            "epochs",
            "adam_beta1",
            "adam_beta2",
            "adam_eps",
        }
        cohort_keys = {
            "hospital_counts",
            "feature_dim",
            "class_separation",
            "hospital_offset_scale",
            "noise_scale",
            "public_count",
            "test_count",
            "data_seed",
            "drift_hospital",
            "drift_increment",
            "drift_kind",
            "drift_magnitude",
        }
        own_keys = {
            "increments",
            "rounds_per_increment",
            "data_dir",
            "head_hidden",
            "backbone_hidden",
            "server_momentum",
            "accuracy_drop_threshold",
            "mean_shift_z_threshold",
            "detector_mode",
            "assess_against",
            "merge_policy",
            "schedule_seed",
        }
        hyper_kwargs = {}
        cohort_kwargs = {}
        own_kwargs = {}
        for key, value in data.items():
            if key in hyper_keys:
                hyper_kwargs[key] = value
            elif key == "model_seed":
                hyper_kwargs["seed"] = int(value)
            elif key in cohort_keys:
                cohort_kwargs[key] = value
            elif key in own_keys:
                own_kwargs[key] = value
            else:
                raise ValidationError(f"unknown config key {key!r}")
        return cls(
            hyper=HyperParams(**hyper_kwargs),
            cohort=CohortSpec.from_dict(cohort_kwargs),
            **own_kwargs,
        )


@dataclass
class Cl3RunLog:
    """Ordered event records: run_header, drift_verdict, round_report, increment_summary."""

    records: list[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        self.records.append(record)

    def jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.jsonl())

    @classmethod
    def load(cls, path) -> "Cl3RunLog":
        records = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
        return cls(records)

    def events(self, kind: str) -> list[dict]:
        return [r for r in self.records if r.get("event") == kind]

    def round_reports(self) -> list[dict]:
        return self.events("round_report")

    def drift_verdicts(self) -> list[dict]:
        return self.events("drift_verdict")

    def increment_summaries(self) -> list[dict]:
        return self.events("increment_summary")

    def final_global_accuracy(self) -> float:
        reports = self.round_reports()
        if not reports:
            raise ValidationError("run log has no round reports")
        return float(reports[-1]["global_accuracy"])

    def summary_table(self) -> str:
        """Aligned two-column table: increment number vs global accuracy (%)."""
        rows = [("Increment No.", "Accuracy (%)")]
        for rec in self.increment_summaries():
            rows.append((str(rec["increment"]), f"{rec['global']['ca'] * 100:.2f}"))
        w0 = max(len(r[0]) for r in rows)
        w1 = max(len(r[1]) for r in rows)
        return "\n".join(f"{r[0].ljust(w0)}  {r[1].rjust(w1)}" for r in rows)


def strip_timing(record: dict) -> dict:
    """Copy of a record without wall-clock fields; used for byte comparisons."""
    return {k: v for k, v in record.items() if k not in TIMING_KEYS}


def evaluate_global(global_model: GlobalModel | Mlp, test_features, test_labels) -> ConfusionMatrix:
    """Score argmax predictions of the global model into a confusion matrix."""
    model = global_model.model if isinstance(global_model, GlobalModel) else global_model
    return confusion(predict(model, test_features), test_labels)


def load_cohort(config: Cl3Config) -> Cohort:
    """Synthesize the cohort, or load it from config.data_dir when set."""
    if config.data_dir is not None:
        if config.cohort.drift is not None:
            raise ValidationError("drift injection requires a synthetic cohort, not data_dir")
        return load_cohort_dir(config.data_dir)
    return synthesize_cohort(config.cohort)


def initial_server(config: Cl3Config, cohort: Cohort) -> tuple[PretrainedWeights, ServerState]:
    """Pretrain the backbone on the public shard and graft the head."""
    if len(cohort.public) == 0:
        raise ValidationError("public shard is empty; cannot pretrain the backbone")
    pre_hyper = replace(config.hyper, seed=derive(config.hyper.seed, _TAG_PRETRAIN))
    pretrained = pretrain_backbone(
        cohort.public.features, cohort.public.labels, pre_hyper, config.backbone_hidden
    )
    head_dims = (pretrained.backbone_out_dim,) + config.head_hidden + (2,)
    global_model = build_head_and_init_global(
        pretrained, head_dims, derive(config.hyper.seed, _TAG_HEAD)
    )
    return pretrained, ServerState(global_model, config.server_momentum)


def client_schedule(config: Cl3Config, shard: DatasetShard) -> IncrementSchedule:
    return schedule_increments(
        shard, config.increments, derive(config.schedule_seed, _TAG_SCHEDULE, shard.hospital_id)
    )


def new_client(config: Cl3Config, hospital_id: int, model: Mlp | None) -> ClientState:
    return ClientState(hospital_id=hospital_id, detector=config.make_detector(), model=model)


def begin_increment(
    client: ClientState,
    cohort: Cohort,
    shard: DatasetShard,
    schedule: IncrementSchedule,
    config: Cl3Config,
    increment: int,
    assess_model: Mlp,
) -> tuple[DriftVerdict, np.ndarray, np.ndarray]:
    """Deliver one increment: assess drift, then merge per the configured policy."""
    X, y = delivered_increment(cohort, shard, schedule, increment)
    verdict = assess(client.detector, assess_model, X, y)
    if config.merge_policy == MERGE_ALWAYS or verdict.drifted:
        client.merge_pool(X, y)
    return verdict, X, y


def finalize_increment(
    client: ClientState, verdict: DriftVerdict, X: np.ndarray, y: np.ndarray
) -> None:
    """After an increment's rounds: refresh the baseline for retrained clients.

    Non-drifted clients keep their baseline (the model did not change) but
    still fold the increment's features into the running statistics.
    """
    if verdict.drifted:
        post_acc = accuracy(client.model, X, y)
        client.detector = update_baseline(client.detector, post_acc, X)
    else:
        client.detector = update_baseline(client.detector, client.detector.baseline_accuracy, X)


def _verdict_record(increment: int, hospital_id: int, verdict: DriftVerdict) -> dict:
    return {
        "event": "drift_verdict",
        "increment": increment,
        "hospital": hospital_id,
        "drifted": verdict.drifted,
        "observed_accuracy": verdict.observed_accuracy,
        "baseline": verdict.baseline,
        "z_stat": verdict.z_stat,
        "reason": verdict.reason,
    }


def round_record(report: RoundReport, server: ServerState, elapsed_ms: float) -> dict:
    return {
        "event": "round_report",
        "increment": report.increment,
        "round": report.round,
        "participants": list(report.participants),
        "global_accuracy": report.global_accuracy,
        "local_accuracies": {str(h): a for h, a in sorted(report.local_accuracies.items())},
        "global_digest": hashlib.sha256(encode_weights(server.global_model.model)).hexdigest(),
        "elapsed_ms": elapsed_ms,
    }


def run_header(config: Cl3Config) -> dict:
    return {
        "event": "run_header",
        "format_version": LOG_FORMAT_VERSION,
        "config": config.to_dict(),
        "created_unix": time.time(),
    }


def run_cl3(config: Cl3Config, weight_capture: list | None = None) -> Cl3RunLog:
    """Run the full workflow in-process and return the structured log.

    When weight_capture is a list, the serialized global model is appended
    after every round as (increment, round, bytes); used to compare the
    simulation against a networked run.
    """
    log = Cl3RunLog()
    log.append(run_header(config))
    cohort = load_cohort(config)
    t0 = time.perf_counter()
    _, server = initial_server(config, cohort)
    logger.info(
        "initial global model ready: dims=%s frozen=%d",
        server.global_model.model.layer_dims,
        server.global_model.model.frozen_prefix,
    )

    clients: dict[int, ClientState] = {}
    schedules: dict[int, IncrementSchedule] = {}
    for shard in cohort.hospitals:
        clients[shard.hospital_id] = new_client(
            config, shard.hospital_id, server.global_model.model.copy()
        )
        schedules[shard.hospital_id] = client_schedule(config, shard)

    test_X, test_y = cohort.test.features, cohort.test.labels
    hospital_ids = sorted(clients)

    for increment in range(1, config.increments + 1):
        inc_start = time.perf_counter()
        pending: dict[int, tuple[DriftVerdict, np.ndarray, np.ndarray]] = {}
        for h in hospital_ids:
            client = clients[h]
            assess_model = (
                client.model if config.assess_against == ASSESS_LOCAL else server.global_model.model
            )
            verdict, X, y = begin_increment(
                client, cohort, cohort.hospital(h), schedules[h], config, increment, assess_model
            )
            pending[h] = (verdict, X, y)
            log.append(_verdict_record(increment, h, verdict))
        participants = [h for h in hospital_ids if pending[h][0].drifted]
        logger.info("increment %d: participants=%s", increment, participants)

        for r in range(config.rounds_per_increment):
            round_start = time.perf_counter()
            server, report = run_round(
                server, clients, participants, config.hyper, test_X, test_y, increment, r
            )
            elapsed = (time.perf_counter() - round_start) * 1000.0
            log.append(round_record(report, server, elapsed))
            if weight_capture is not None:
                weight_capture.append(
                    (increment, r, encode_weights(server.global_model.model))
                )

        for h in hospital_ids:
            verdict, X, y = pending[h]
            finalize_increment(clients[h], verdict, X, y)

        cm = evaluate_global(server.global_model, test_X, test_y)
        global_scores = scores(cm)
        per_hospital = {}
        for h in hospital_ids:
            client = clients[h]
            if client.sample_count == 0 or client.model is None:
                continue
            local_cm = confusion(
                predict(client.model, client.pool_features), client.pool_labels
            )
            rep = scores(local_cm)
            per_hospital[str(h)] = {
                "ca": rep.ca,
                "pre": rep.pre,
                "rec": rep.rec,
                "f1": rep.f1,
            }
        log.append(
            {
                "event": "increment_summary",
                "increment": increment,
                "participants": participants,
                "global": {
                    "ca": global_scores.ca,
                    "pre": global_scores.pre,
                    "rec": global_scores.rec,
                    "f1": global_scores.f1,
                    "tp": cm.tp,
                    "fp": cm.fp,
                    "tn": cm.tn,
                    "fn": cm.fn,
                },
                "per_hospital": per_hospital,
                "pool_sizes": {str(h): clients[h].sample_count for h in hospital_ids},
                "elapsed_ms": (time.perf_counter() - inc_start) * 1000.0,
            }
        )
        server.global_model.increment = increment

    logger.info("run complete in %.1f s", time.perf_counter() - t0)
    return log
