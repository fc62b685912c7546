"""Command-line entry point for the full workflow.

Subcommands: synth-data, pretrain, simulate, central, client, evaluate,
report. Every run-shaped subcommand accepts --config pointing at a flat
JSON file whose keys mirror the command-line flags one-to-one; explicit
flags override config-file values. Exit codes: 0 success, 1 validation
error, 2 runtime or protocol error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .datasets import CohortSpec, load_csv, save_cohort_dir, synthesize_cohort
from .errors import Cl3Error, ProtocolError, ValidationError
from .metrics import MetricsReport, render_report, scores
from .rng import derive
from .simulation import _TAG_PRETRAIN, Cl3Config, Cl3RunLog, evaluate_global, run_cl3
from .transfer import pretrain_backbone
from .weightfmt import load_weights, save_weights
from .wire import DEFAULT_PORT, run_client, serve_central

logger = logging.getLogger(__name__)

_TAG_SEED_DATA = 61
_TAG_SEED_MODEL = 62
_TAG_SEED_SCHEDULE = 63


class _Parser(argparse.ArgumentParser):
    """argparse with validation-style exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# Flat config keys exposed as flags on run-shaped subcommands. Keys map
# one-to-one onto the JSON config schema consumed by Cl3Config.from_dict.
_CONFIG_FLAG_TYPES = {
    "increments": int,
    "rounds_per_increment": int,
    "learning_rate": float,
    "l2": float,
    "batch_size": int,
    "epochs": int,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "model_seed": int,
    "schedule_seed": int,
    "data_seed": int,
    "server_momentum": float,
    "accuracy_drop_threshold": float,
    "mean_shift_z_threshold": float,
    "detector_mode": str,
    "assess_against": str,
    "merge_policy": str,
    "head_hidden": _int_list,
    "backbone_hidden": _int_list,
    "feature_dim": int,
    "class_separation": float,
    "hospital_offset_scale": float,
    "noise_scale": float,
    "public_count": int,
    "test_count": int,
    "drift_hospital": int,
    "drift_increment": int,
    "drift_kind": str,
    "drift_magnitude": float,
    "data_dir": str,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="flat JSON config file")
    parser.add_argument(
        "--seed",
        type=int,
        default=argparse.SUPPRESS,
        help="convenience seed expanded into data/model/schedule seeds",
    )
    for key, typ in _CONFIG_FLAG_TYPES.items():
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, dest=key, type=typ, default=argparse.SUPPRESS)


def _gather_config(args: argparse.Namespace) -> Cl3Config:
    merged: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        merged.update(loaded)
    for key in _CONFIG_FLAG_TYPES:
        if hasattr(args, key):
            merged[key] = getattr(args, key)
    seed = merged.pop("seed", None)
    if hasattr(args, "seed"):
        seed = args.seed
    if seed is not None:
        # Explicit per-stream seeds win over the convenience seed.
        merged.setdefault("data_seed", derive(int(seed), _TAG_SEED_DATA))
        merged.setdefault("model_seed", derive(int(seed), _TAG_SEED_MODEL))
        merged.setdefault("schedule_seed", derive(int(seed), _TAG_SEED_SCHEDULE))
    return Cl3Config.from_dict(merged)


def _cmd_synth_data(args) -> int:
    config = _gather_config(args)
    spec = config.cohort
    if args.spec != "default":
        spec_path = Path(args.spec)
        if not spec_path.exists():
            raise ValidationError(f"cohort spec file not found: {spec_path}")
        spec = CohortSpec.from_dict(json.loads(spec_path.read_text()))
    cohort = synthesize_cohort(spec)
    written = save_cohort_dir(cohort, args.out_dir)
    for p in written:
        print(p)
    return 0


def _cmd_pretrain(args) -> int:
    config = _gather_config(args)
    shard = load_csv(args.data)
    hyper = replace(config.hyper, seed=derive(config.hyper.seed, _TAG_PRETRAIN))
    pretrained = pretrain_backbone(shard.features, shard.labels, hyper, config.backbone_hidden)
    save_weights(pretrained.backbone, args.out)
    print(f"wrote backbone {pretrained.backbone.layer_dims} -> {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    config = _gather_config(args)
    log = run_cl3(config)
    if args.out:
        log.save(args.out)
    print(log.summary_table())
    print(f"final global accuracy: {log.final_global_accuracy():.4f}")
    return 0


def _cmd_central(args) -> int:
    config = _gather_config(args)
    log = serve_central(
        config,
        host=args.host,
        port=args.port,
        expected_clients=args.clients,
        round_timeout=args.round_timeout,
        record_path=args.record,
    )
    if args.out:
        log.save(args.out)
    print(log.summary_table())
    print(f"final global accuracy: {log.final_global_accuracy():.4f}")
    return 0


def _cmd_client(args) -> int:
    config = _gather_config(args)
    run_client(args.host, args.port, args.hospital_id, config, round_timeout=args.round_timeout)
    print(f"hospital {args.hospital_id}: session complete")
    return 0


def _cmd_evaluate(args) -> int:
    model = load_weights(args.weights)
    shard = load_csv(args.data)
    cm = evaluate_global(model, shard.features, shard.labels)
    rep = scores(cm)
    print(render_report([(Path(args.data).stem, rep)]))
    print(f"confusion: tp={cm.tp} fp={cm.fp} tn={cm.tn} fn={cm.fn}")
    return 0


def _cmd_report(args) -> int:
    log = Cl3RunLog.load(args.runlog)
    summaries = log.increment_summaries()
    if not summaries:
        raise ValidationError(f"{args.runlog}: no increment summaries in run log")
    last = summaries[-1]
    rows = []
    for hospital, rep in sorted(last["per_hospital"].items(), key=lambda kv: int(kv[0])):
        rows.append(
            (hospital, MetricsReport(ca=rep["ca"], pre=rep["pre"], rec=rep["rec"], f1=rep["f1"]))
        )
    if rows:
        print(render_report(rows))
    else:
        print("no per-hospital metrics recorded")
    print()
    print(log.summary_table())
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="cl3", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write per-hospital CSVs plus public/test shards")
    _add_config_flags(p)
    p.add_argument("--spec", default="default", help="'default' or a cohort-spec JSON file")
    p.add_argument("--out-dir", required=True, help="output directory for CSV files")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("pretrain", help="pretrain the frozen backbone on a public CSV")
    _add_config_flags(p)
    p.add_argument("--data", required=True, help="public shard CSV")
    p.add_argument("--out", required=True, help="output CL3W backbone file")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("simulate", help="run the full incremental workflow in-process")
    _add_config_flags(p)
    p.add_argument("--out", help="write the run log (JSON lines) here")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("central", help="run the central aggregation server")
    _add_config_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--clients", type=int, default=None, help="expected client count")
    p.add_argument("--round-timeout", type=float, default=60.0)
    p.add_argument("--record", help="record all frames to this transcript file")
    p.add_argument("--out", help="write the run log (JSON lines) here")
    p.set_defaults(func=_cmd_central)

    p = sub.add_parser("client", help="run one hospital client against a central server")
    _add_config_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=DEFAULT_PORT)
    p.add_argument("--hospital-id", type=int, required=True)
    p.add_argument("--round-timeout", type=float, default=60.0)
    p.set_defaults(func=_cmd_client)

    p = sub.add_parser("evaluate", help="score a CL3W weight file on a CSV")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="render per-hospital metrics from a run log")
    p.add_argument("--runlog", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ProtocolError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Cl3Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
