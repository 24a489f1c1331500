"""
Command line entry point: `search`, `pareto` and `eval`.
Exit codes: 0 success, 1 evaluator or history failure, 2 bad input.
"""
import argparse
import json
import logging
import os
import sys
import time

from meeso.core_types import (
    Candidate, CheckpointError, ContractViolation, DatasetError,
    HistoryParseError, ObjectiveId, TrainingDiverged, validate_candidate
)
from meeso.dataset import load_csv
from meeso.engine import (
    EvaluatorKind, HistoryDB, RunConfig, best_k_by_accuracy, continue_run, run
)
from meeso.evaluator import EvalOptions, oracle_record, run_pipeline
from meeso.pareto import DEFAULT_OBJECTIVES, pareto_front, write_pareto_csv

logger = logging.getLogger("meeso")

LOG_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG
}
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

HISTORY_FILE = "history.jsonl"
PARETO_FILE = "pareto.csv"
SUMMARY_FILE = "summary.json"
CHECKPOINT_FILE = "checkpoint.jsonl"


class UsageError(Exception):
    pass


def setup_logging():
    level_name = os.environ.get("MEESO_LOG", "info").lower()
    logging.basicConfig(
        level=LOG_LEVELS.get(level_name, logging.INFO), format=LOG_FORMAT
    )
    if level_name not in LOG_LEVELS:
        logger.warning(f"Unknown MEESO_LOG level {level_name}, using info")


def _add_shared_flags(parser):
    parser.add_argument("--seed", type=int, default=0, dest="run_seed")
    parser.add_argument("--out", type=str, default=".")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument(
        "--evaluator",
        type=str,
        default="trainer",
        choices=[kind.value for kind in EvaluatorKind],
        dest="evaluator_kind"
    )
    parser.add_argument("--dataset", type=str, default=None)
    parser.add_argument("--has-header", action="store_true")
    parser.add_argument(
        "--with-time",
        action="store_true",
        dest="include_time",
        help="add wall_seconds as a third objective"
    )


def build_parser(search_defaults=None):
    parser = argparse.ArgumentParser(
        prog="meeso",
        description="Multi-objective surrogate-assisted pipeline search"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    search = commands.add_parser("search", help="run the self-optimization loop")
    _add_shared_flags(search)
    search.add_argument(
        "--config", type=str, default=None, help="JSON run config, flags win"
    )
    search.add_argument(
        "--heuristics",
        type=str,
        default="residual",
        help="comma separated preset names"
    )
    search.add_argument("--init", type=int, default=20, dest="initial_space_size")
    search.add_argument("--k", type=int, default=4, dest="arches_per_iter")
    search.add_argument("--iters", type=int, default=5, dest="inner_iterations")
    search.add_argument("--groups", type=int, default=5, dest="n_groups")
    search.add_argument("--pool", type=int, default=200, dest="pool_size")
    search.add_argument(
        "--selection",
        type=str,
        default="surrogate",
        choices=["surrogate", "random"]
    )
    search.add_argument(
        "--thresholds",
        type=float,
        nargs=2,
        default=None,
        dest="satisfied_thresholds",
        metavar=("ERROR", "UNCERTAINTY")
    )
    search.add_argument("--tensorboard", type=str, default=None)
    search.add_argument(
        "--resume",
        action="store_true",
        help="continue from the checkpoint in --out"
    )
    search.add_argument("--progress", action="store_true")
    search.add_argument(
        "--top-k",
        type=int,
        default=None,
        dest="top_k",
        help="also report the K lowest-error records in the summary"
    )
    if search_defaults:
        search.set_defaults(**search_defaults)

    pareto = commands.add_parser("pareto", help="recompute the front of a history")
    pareto.add_argument("history", type=str)
    _add_shared_flags(pareto)

    evaluate = commands.add_parser("eval", help="evaluate one candidate")
    evaluate.add_argument("candidate", type=str)
    _add_shared_flags(evaluate)
    evaluate.add_argument("--probes", type=int, default=32)
    evaluate.add_argument("--passes", type=int, default=20)
    return parser


def _config_defaults(path):
    """
    Run config file values as argparse defaults
    """
    with open(path, "r") as infile:
        config = json.load(infile)
    if isinstance(config.get("heuristics"), list):
        names = config["heuristics"]
        if all(isinstance(name, str) for name in names):
            config["heuristics"] = ",".join(names)
        else:
            config["inline_heuristics"] = names
            del config["heuristics"]
    return config


def parse_args(argv):
    config_parser = argparse.ArgumentParser(add_help=False)
    config_parser.add_argument("--config", type=str, default=None)
    known, _ = config_parser.parse_known_args(argv)
    defaults = _config_defaults(known.config) if known.config else {}
    return build_parser(defaults).parse_args(argv)


def _load_dataset(args):
    if args.dataset is None:
        raise UsageError("--evaluator trainer needs --dataset")
    if not os.path.exists(args.dataset):
        raise UsageError(f"Dataset {args.dataset} not found")
    return load_csv(args.dataset, args.has_header, seed=args.run_seed)


def _run_config(args):
    data = {
        key: value
        for key, value in vars(args).items()
        if key in RunConfig.__dataclass_fields__
    }
    inline = getattr(args, "inline_heuristics", None)
    if inline is not None:
        data["heuristics"] = inline
    else:
        data["heuristics"] = [
            name.strip() for name in args.heuristics.split(",") if name.strip()
        ]
    try:
        return RunConfig.from_dict(data).validate()
    except (ValueError, KeyError) as err:
        raise UsageError(str(err))


def cmd_search(args):
    rc = _run_config(args)
    if args.top_k is not None and args.top_k < 1:
        raise UsageError("--top-k must be >= 1")
    dataset = None
    if rc.evaluator_kind is EvaluatorKind.Trainer:
        dataset = _load_dataset(args)
    os.makedirs(args.out, exist_ok=True)
    history_path = os.path.join(args.out, HISTORY_FILE)
    checkpoint_path = os.path.join(args.out, CHECKPOINT_FILE)
    engine_args = {
        "history_path": history_path,
        "jobs": args.jobs,
        "log_dir": args.tensorboard,
        "progress": args.progress
    }

    tic = time.time()
    if args.resume:
        result = continue_run(
            checkpoint_path, dataset, requested=rc, **engine_args
        )
    else:
        result = run(
            rc, dataset, checkpoint_path=checkpoint_path, **engine_args
        )
    wall_time = time.time() - tic

    result.archive.to_csv(os.path.join(args.out, PARETO_FILE))
    best_error = min(
        (r.objectives.error for r in result.history), default=None
    )
    summary = {
        "records": len(result.history),
        "pareto_size": len(result.archive),
        "best_error": best_error,
        "hypervolume": result.archive.hypervolume(),
        "wall_time": wall_time,
        "satisfied": result.satisfied,
        "exhausted": result.exhausted,
        "interrupted": result.interrupted
    }
    if args.top_k is not None:
        summary["top_k"] = [
            r.to_dict() for r in best_k_by_accuracy(result.history, args.top_k)
        ]
    with open(os.path.join(args.out, SUMMARY_FILE), "w") as outfile:
        json.dump(summary, outfile, indent=4, sort_keys=True)
    logger.info(
        f"Search finished: {summary['records']} records,\
 {summary['pareto_size']} on the front"
    )
    return 0


def cmd_pareto(args):
    history = HistoryDB.read(args.history)
    objective_ids = DEFAULT_OBJECTIVES
    if args.include_time:
        objective_ids = objective_ids + (ObjectiveId.WallSeconds, )
    front = pareto_front(history.records, objective_ids)
    os.makedirs(args.out, exist_ok=True)
    write_pareto_csv(front, os.path.join(args.out, PARETO_FILE))
    logger.info(f"{len(front)} of {len(history)} records on the front")
    return 0


def cmd_eval(args):
    try:
        with open(args.candidate, "r") as infile:
            candidate = Candidate.from_dict(json.load(infile))
    except (ValueError, KeyError, TypeError) as err:
        raise UsageError(f"Unreadable candidate: {err}")
    violations = validate_candidate(candidate)
    if violations:
        raise UsageError("Invalid candidate: " + "; ".join(violations))

    if args.evaluator_kind == EvaluatorKind.Oracle.value:
        record, warnings = oracle_record(candidate, args.run_seed), []
    else:
        dataset = _load_dataset(args)
        result = run_pipeline(
            candidate, dataset,
            EvalOptions(n_probes=args.probes, mc_passes=args.passes),
            args.run_seed
        )
        record, warnings = result.record, result.warnings
    output = record.to_dict()
    output["warnings"] = warnings
    print(json.dumps(output, sort_keys=True))
    return 0


COMMANDS = {"search": cmd_search, "pareto": cmd_pareto, "eval": cmd_eval}


def main(argv=None):
    setup_logging()
    try:
        args = parse_args(argv)
    except SystemExit as err:
        return err.code
    except (OSError, ValueError) as err:
        print(f"meeso: unreadable config ({err})", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ContractViolation, DatasetError) as err:
        print(f"meeso {args.command}: {err}", file=sys.stderr)
        return 2
    except (
        HistoryParseError, CheckpointError, TrainingDiverged,
        FileNotFoundError, OSError
    ) as err:
        print(f"meeso {args.command}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
