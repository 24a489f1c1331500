"""
Self-optimization loop: for every heuristic, grow an initial space, evaluate
it, then alternate surrogate training, acquisition and true evaluation.
Owns the history H, the archive P, checkpointing and termination.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from meeso import surrogate
from meeso.acquisition import select, select_random
from meeso.core_types import (
    CheckpointError, ContractViolation, EmptySpace, EvaluationRecord,
    Heuristic, HistoryParseError, InsufficientHistory,
    ObjectiveId, validate_record
)
from meeso.evaluator import (
    ORACLE_NOISE_STD, EvalOptions, oracle_record, run_pipeline
)
from meeso.pareto import DEFAULT_OBJECTIVES, ParetoArchive, pareto_front
from meeso.search_space import (
    generate, get_heuristic, mutate_neighbors, space_capacity
)
try:
    from torch.utils.tensorboard import SummaryWriter
except ImportError:

    class SummaryWriter:

        def __init__(self, log_dir=None):
            logger.warning("Tensorboard not installed, not logging")

        def add_scalar(self, name, scalar, step=None):
            pass

        def flush(self):
            pass

        def close(self):
            pass


logger = logging.getLogger(__name__)


class EvaluatorKind(Enum):
    Trainer = "trainer"
    Oracle = "oracle"


class Selection(Enum):
    Surrogate = "surrogate"
    Random = "random"


@dataclass(frozen=True)
class RunConfig:
    heuristics: Tuple[Heuristic, ...]
    arches_per_iter: int = 4
    inner_iterations: int = 5
    initial_space_size: int = 20
    n_groups: int = surrogate.DEFAULT_GROUPS
    satisfied_thresholds: Optional[Tuple[float, float]] = None
    run_seed: int = 0
    evaluator_kind: EvaluatorKind = EvaluatorKind.Oracle
    # generated candidates per heuristic; the ones beyond the initial
    # evaluations form the acquisition pool
    pool_size: int = 200
    neighbors_per_member: int = 5
    selection: Selection = Selection.Surrogate
    include_time: bool = False
    dedupe: bool = False
    n_probes: int = 32
    mc_passes: int = 20
    oracle_noise_std: float = ORACLE_NOISE_STD
    n_estimators: int = 100
    surrogate_holdout: float = 0.0

    @property
    def objective_ids(self):
        if self.include_time:
            return DEFAULT_OBJECTIVES + (ObjectiveId.WallSeconds, )
        return DEFAULT_OBJECTIVES

    @property
    def eval_options(self):
        return EvalOptions(n_probes=self.n_probes, mc_passes=self.mc_passes)

    def violations(self):
        problems = []
        if not self.heuristics:
            problems.append("at least one heuristic required")
        for h in self.heuristics:
            problems.extend(f"{h.id}: {p}" for p in h.violations())
        for name in (
            "arches_per_iter", "inner_iterations", "initial_space_size",
            "n_groups", "pool_size", "neighbors_per_member", "n_probes",
            "n_estimators"
        ):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        required = max(2 * self.n_groups, surrogate.MIN_TRAINING_SIZE)
        if self.initial_space_size < required:
            problems.append(
                f"initial_space_size must be >= {required} to train the\
 surrogate"
            )
        if self.run_seed < 0:
            problems.append("run_seed must be >= 0")
        if self.mc_passes < 2:
            problems.append("mc_passes must be >= 2")
        if self.satisfied_thresholds is not None:
            if len(self.satisfied_thresholds) != 2 or not all(
                0.0 <= t <= 1.0 for t in self.satisfied_thresholds
            ):
                problems.append("satisfied_thresholds must be two values in\
 [0, 1]")
        if not 0.0 <= self.surrogate_holdout < 1.0:
            problems.append("surrogate_holdout must be in [0, 1)")
        return problems

    def validate(self):
        problems = self.violations()
        if problems:
            raise ContractViolation("Invalid run config: " + "; ".join(problems))
        return self

    def to_dict(self):
        return {
            "heuristics": [h.to_dict() for h in self.heuristics],
            "arches_per_iter": self.arches_per_iter,
            "inner_iterations": self.inner_iterations,
            "initial_space_size": self.initial_space_size,
            "n_groups": self.n_groups,
            "satisfied_thresholds": list(self.satisfied_thresholds)
            if self.satisfied_thresholds is not None else None,
            "run_seed": self.run_seed,
            "evaluator_kind": self.evaluator_kind.value,
            "pool_size": self.pool_size,
            "neighbors_per_member": self.neighbors_per_member,
            "selection": self.selection.value,
            "include_time": self.include_time,
            "dedupe": self.dedupe,
            "n_probes": self.n_probes,
            "mc_passes": self.mc_passes,
            "oracle_noise_std": self.oracle_noise_std,
            "n_estimators": self.n_estimators,
            "surrogate_holdout": self.surrogate_holdout
        }

    def differences(self, other):
        """
        Names of the fields whose serialized values differ from `other`
        """
        mine, theirs = self.to_dict(), other.to_dict()
        return sorted(key for key in mine if mine[key] != theirs[key])

    @classmethod
    def from_dict(cls, data):
        """
        Build a config from a JSON dict; heuristics are preset names or
        full heuristic objects, unknown keys are ignored
        """
        data = dict(data)
        heuristics = tuple(
            get_heuristic(h) if isinstance(h, str) else Heuristic.from_dict(h)
            for h in data.pop("heuristics")
        )
        thresholds = data.pop("satisfied_thresholds", None)
        kwargs = {
            key: value
            for key, value in data.items() if key in cls.__dataclass_fields__
        }
        if "evaluator_kind" in kwargs:
            kwargs["evaluator_kind"] = EvaluatorKind(kwargs["evaluator_kind"])
        if "selection" in kwargs:
            kwargs["selection"] = Selection(kwargs["selection"])
        return cls(
            heuristics=heuristics,
            satisfied_thresholds=tuple(thresholds)
            if thresholds is not None else None,
            **kwargs
        )


def parse_record_line(line, line_number):
    try:
        record = EvaluationRecord.from_json(line)
    except (ValueError, KeyError, TypeError) as err:
        raise HistoryParseError(line_number, f"unparseable record ({err})")
    problems = validate_record(record)
    if problems:
        raise HistoryParseError(line_number, "; ".join(problems))
    return record


def read_records(lines, first_line_number=1, tolerate_partial_tail=False):
    """
    Parse JSON-lines records. With tolerate_partial_tail, a broken final
    line is dropped with a warning instead of raising.
    """
    lines = [(n, line) for n, line in enumerate(lines, first_line_number)]
    lines = [(n, line) for n, line in lines if line.strip()]
    records = []
    for position, (line_number, line) in enumerate(lines):
        try:
            records.append(parse_record_line(line, line_number))
        except HistoryParseError:
            if tolerate_partial_tail and position == len(lines) - 1:
                logger.warning(
                    f"Dropping incomplete record on line {line_number}, the\
 last complete record wins"
                )
                break
            raise
    return records


class HistoryDB:
    """
    Append-only evaluation history, mirrored to a JSON-lines file
    """

    def __init__(self, path=None, records=()):
        self.path = path
        self.records = list(records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record, persist=True):
        index = len(self.records)
        self.records.append(record)
        if persist and self.path is not None:
            with open(self.path, "a", encoding="utf-8") as outfile:
                outfile.write(record.to_json() + "\n")
        return index

    def write_all(self):
        if self.path is None:
            return
        with open(self.path, "w", encoding="utf-8") as outfile:
            for record in self.records:
                outfile.write(record.to_json() + "\n")

    def evaluated(self):
        return {r.candidate for r in self.records}

    @classmethod
    def read(cls, path, tolerate_partial_tail=False):
        with open(path, "r", encoding="utf-8") as infile:
            records = read_records(
                infile.read().split("\n"),
                tolerate_partial_tail=tolerate_partial_tail
            )
        return cls(path, records)


class Checkpoint:
    """
    JSON header line (run config + cursor) followed by the history lines
    """

    def __init__(self, path):
        self.path = path

    def write(self, rc, records, cursor):
        header = {"run_config": rc.to_dict(), "cursor": cursor}
        tmp_path = self.path + ".tmp"
        with open(tmp_path, "w", encoding="utf-8") as outfile:
            outfile.write(json.dumps(header, sort_keys=True) + "\n")
            for record in records:
                outfile.write(record.to_json() + "\n")
        os.replace(tmp_path, self.path)

    def append(self, record):
        with open(self.path, "a", encoding="utf-8") as outfile:
            outfile.write(record.to_json() + "\n")

    def read(self):
        if not os.path.exists(self.path):
            raise FileNotFoundError(f"No checkpoint at {self.path}")
        with open(self.path, "r", encoding="utf-8") as infile:
            lines = infile.read().split("\n")
        try:
            header = json.loads(lines[0])
            rc = RunConfig.from_dict(header["run_config"])
            cursor = header["cursor"]
        except (ValueError, KeyError, TypeError) as err:
            raise CheckpointError(f"Unreadable checkpoint header: {err}")
        records = read_records(
            lines[1:], first_line_number=2, tolerate_partial_tail=True
        )
        return rc, cursor, records


def candidate_seed(run_seed, index):
    """
    Evaluation seed of the index-th history record of a run
    """
    return int(np.random.SeedSequence([run_seed, index]).generate_state(1)[0])


def stage_seed(run_seed, *keys):
    return int(
        np.random.SeedSequence([run_seed, *keys]).generate_state(1)[0] % 2**31
    )


def _evaluate_one(rc, candidate, dataset, seed, iteration, heuristic_id):
    if rc.evaluator_kind is EvaluatorKind.Oracle:
        return oracle_record(
            candidate, seed, iteration, heuristic_id, rc.oracle_noise_std
        )
    return run_pipeline(
        candidate, dataset, rc.eval_options, seed, iteration, heuristic_id
    ).record


class _StopRequested(Exception):
    pass


@dataclass
class SearchResult:
    archive: ParetoArchive
    history: HistoryDB
    exhausted: bool = False
    satisfied: bool = False
    interrupted: bool = False
    short_counts: list = field(default_factory=list)

    def __iter__(self):
        yield self.archive
        yield self.history


class SearchEngine:

    def __init__(
        self,
        rc,
        dataset=None,
        history_path=None,
        checkpoint_path=None,
        replay=(),
        jobs=1,
        log_dir=None,
        progress=False,
        stop_after=None,
        verify_archive=False
    ):
        self.rc = rc.validate()
        if rc.evaluator_kind is EvaluatorKind.Trainer and dataset is None:
            raise ContractViolation("The trainer evaluator needs a dataset")
        self.dataset = dataset
        self.jobs = jobs
        self.stop_after = stop_after
        self.verify_archive = verify_archive
        self.replay = list(replay)

        self.history = HistoryDB(history_path)
        self.archive = ParetoArchive(rc.objective_ids, dedupe=rc.dedupe)
        self.checkpoint = Checkpoint(checkpoint_path
                                     ) if checkpoint_path else None
        self.writer = SummaryWriter(log_dir) if log_dir else None
        self.progress = progress
        self._pbar = None
        self.short_counts = []

        # history file and checkpoint restart from the replayed records
        if history_path is not None:
            HistoryDB(history_path, self.replay).write_all()
        if self.checkpoint is not None:
            self.checkpoint.write(
                rc, self.replay, {
                    "records": len(self.replay),
                    "finished": False
                }
            )

    def _cursor(self, finished, **flags):
        return {"records": len(self.history), "finished": finished, **flags}

    # --- evaluation and commit ---

    def _commit(self, record, replayed):
        self.history.append(record, persist=not replayed)
        if not replayed and self.checkpoint is not None:
            self.checkpoint.append(record)
        self.archive.insert(record)
        if self._pbar is not None:
            self._pbar.update(1)
        logger.debug(
            f"H[{len(self.history) - 1}] {record.heuristic_id}/it\
{record.iteration}: error {round(record.objectives.error, 4)}, uncertainty\
 {round(record.objectives.uncertainty, 4)}"
        )
        if self.stop_after is not None and len(self.history) >= self.stop_after:
            raise _StopRequested()

    def evaluate_batch(self, candidates, iteration, heuristic_id):
        """
        Evaluate candidates (replaying recorded ones) and commit the records
        in selection order
        """
        start = len(self.history)
        pending = []
        for offset, candidate in enumerate(candidates):
            index = start + offset
            if index < len(self.replay):
                if self.replay[index].candidate != candidate:
                    raise CheckpointError(
                        f"Checkpoint record {index} does not match the replayed\
 run; was the configuration changed?"
                    )
            else:
                pending.append((candidate, candidate_seed(self.rc.run_seed, index)))

        tasks = [
            delayed(_evaluate_one)(
                self.rc, candidate, self.dataset, seed, iteration, heuristic_id
            ) for candidate, seed in pending
        ]
        if self.jobs > 1 and len(tasks) > 1:
            new_records = Parallel(n_jobs=self.jobs)(tasks)
        else:
            new_records = [
                function(*args, **kwargs) for function, args, kwargs in tasks
            ]

        n_replayed = len(candidates) - len(pending)
        for offset in range(n_replayed):
            self._commit(self.replay[start + offset], replayed=True)
        for record in new_records:
            self._commit(record, replayed=False)

    # --- surrogate-guided selection ---

    def _candidate_pool(self, space, heuristic, h_idx, iteration):
        pool = list(space.candidates)
        for member_idx, member in self.archive.indexed_members:
            if not heuristic.admits(member.candidate.arch):
                continue
            neighborhood = mutate_neighbors(
                member.candidate,
                heuristic,
                self.rc.neighbors_per_member,
                seed=stage_seed(self.rc.run_seed, h_idx, iteration, member_idx)
            )
            pool.extend(neighborhood.candidates)
        return pool

    def _train_models(self):
        models = []
        for objective_id in self.rc.objective_ids:
            models.append(
                surrogate.train(
                    self.history.records,
                    self.rc.n_groups,
                    objective_id,
                    seed=self.rc.run_seed % 2**31,
                    n_estimators=self.rc.n_estimators
                )
            )
            if self.rc.surrogate_holdout > 0:
                agreement = surrogate.holdout_agreement(
                    self.history.records,
                    self.rc.n_groups,
                    objective_id,
                    fraction=self.rc.surrogate_holdout,
                    seed=self.rc.run_seed % 2**31,
                    n_estimators=self.rc.n_estimators
                )
                logger.info(
                    f"Surrogate {objective_id.value}: held-out pairwise\
 agreement {round(agreement, 3)}"
                )
        return models

    def _select(self, pool, h_idx, iteration):
        k = self.rc.arches_per_iter
        evaluated = self.history.evaluated()
        selection_seed = stage_seed(self.rc.run_seed, h_idx, iteration, 1 << 20)
        if self.rc.selection is Selection.Random:
            return select_random(pool, evaluated, k, selection_seed)
        try:
            models = self._train_models()
        except InsufficientHistory as err:
            logger.warning(f"{err}; selecting at random this iteration")
            return select_random(pool, evaluated, k, selection_seed)
        return select(models, pool, evaluated, k)

    # --- loops ---

    def _generate_space(self, heuristic, seed):
        size = max(self.rc.initial_space_size, self.rc.pool_size)
        capacity = space_capacity(heuristic)
        if size > capacity:
            logger.info(
                f"Heuristic {heuristic.id} admits only {capacity} candidates"
            )
        return generate(heuristic, min(size, capacity), seed)

    def _satisfied(self):
        if self.rc.satisfied_thresholds is None:
            return False
        max_error, max_uncertainty = self.rc.satisfied_thresholds
        return any(
            m.objectives.error <= max_error
            and m.objectives.uncertainty <= max_uncertainty
            for m in self.archive
        )

    def _check_archive(self):
        expected = pareto_front(self.history.records, self.rc.objective_ids)
        members = self.archive.members
        if not self.rc.dedupe and sorted(map(id, members)) != sorted(
            map(id, expected)
        ):
            raise AssertionError("Archive diverged from the brute-force front")

    def _log_iteration(self, heuristic, iteration):
        hypervolume = self.archive.hypervolume()
        logger.info(
            f"{heuristic.id} iteration {iteration}: |H|={len(self.history)},\
 |P|={len(self.archive)}, hypervolume {round(hypervolume, 4)}"
        )
        if self.verify_archive:
            self._check_archive()
        if self.writer is not None:
            step = len(self.history)
            self.writer.add_scalar("archive/size", len(self.archive), step)
            self.writer.add_scalar("archive/hypervolume", hypervolume, step)
            self.writer.add_scalar(
                "history/best_error",
                min(r.objectives.error for r in self.history), step
            )
            self.writer.flush()

    def _run_heuristic(self, h_idx, heuristic):
        rc = self.rc
        space_seed = stage_seed(rc.run_seed, h_idx)
        space = self._generate_space(heuristic, space_seed)
        evaluated = self.history.evaluated()
        initial = [
            c for c in space.candidates[:rc.initial_space_size]
            if c not in evaluated
        ]
        logger.info(
            f"Heuristic {heuristic.id}: evaluating {len(initial)} initial\
 candidates"
        )
        self.evaluate_batch(initial, 0, heuristic.id)
        self._log_iteration(heuristic, 0)

        regenerated = False
        for iteration in range(1, rc.inner_iterations + 1):
            pool = self._candidate_pool(space, heuristic, h_idx, iteration)
            try:
                chosen = self._select(pool, h_idx, iteration)
            except EmptySpace:
                if regenerated:
                    logger.info(f"Space of {heuristic.id} exhausted")
                    break
                logger.info(f"Regenerating the space of {heuristic.id}")
                regenerated = True
                space = self._generate_space(heuristic, space_seed + 1)
                pool = self._candidate_pool(space, heuristic, h_idx, iteration)
                try:
                    chosen = self._select(pool, h_idx, iteration)
                except EmptySpace:
                    logger.info(f"Space of {heuristic.id} exhausted")
                    break
            if len(chosen) < rc.arches_per_iter:
                self.short_counts.append((heuristic.id, iteration, len(chosen)))
                logger.warning(
                    f"Acquisition returned {len(chosen)} of\
 {rc.arches_per_iter} candidates"
                )
            self.evaluate_batch(chosen, iteration, heuristic.id)
            self._log_iteration(heuristic, iteration)

    def run(self):
        total = len(self.rc.heuristics) * (
            self.rc.initial_space_size +
            self.rc.inner_iterations * self.rc.arches_per_iter
        )
        self._pbar = tqdm(total=total, disable=not self.progress)
        satisfied = interrupted = False
        try:
            for h_idx, heuristic in enumerate(self.rc.heuristics):
                self._run_heuristic(h_idx, heuristic)
                if self._satisfied():
                    logger.info(
                        f"Satisfying solution found after heuristic\
 {heuristic.id}"
                    )
                    satisfied = True
                    break
                logger.info(f"Heuristic {heuristic.id} done, selecting next")
        except (KeyboardInterrupt, _StopRequested):
            interrupted = True
            logger.info(
                f"Search interrupted after {len(self.history)} records"
            )
        finally:
            self._pbar.close()
            if self.writer is not None:
                self.writer.close()

        exhausted = not satisfied and not interrupted
        if self.checkpoint is not None and not interrupted:
            self.checkpoint.write(
                self.rc, self.history.records,
                self._cursor(True, satisfied=satisfied, exhausted=exhausted)
            )
        return SearchResult(
            self.archive, self.history, exhausted, satisfied, interrupted,
            self.short_counts
        )


def run(rc, d=None, **engine_args):
    """
    Run the self-optimization loop; returns a SearchResult that unpacks to
    (archive, history)
    """
    return SearchEngine(rc, dataset=d, **engine_args).run()


def resume(path):
    """
    Rebuild the engine state stored in a checkpoint.
    Returns:
        (run config, history, archive, cursor)
    """
    rc, cursor, records = Checkpoint(path).read()
    history = HistoryDB(None, records)
    archive = ParetoArchive(rc.objective_ids, dedupe=rc.dedupe)
    for record in records:
        archive.insert(record)
    cursor = dict(cursor, records=len(records))
    logger.info(
        f"Resumed {len(records)} records from {path} (finished:\
 {cursor.get('finished', False)})"
    )
    return rc, history, archive, cursor


def continue_run(
    path, d=None, history_path=None, requested=None, **engine_args
):
    """
    Resume a checkpoint and finish the run; a completed run returns its
    final state immediately. The stored run config always wins over
    `requested`.
    """
    rc, history, archive, cursor = resume(path)
    if requested is not None and requested.differences(rc):
        logger.warning(
            f"Ignoring requested settings {requested.differences(rc)},\
 resuming with the checkpointed run config"
        )
    if cursor.get("finished", False):
        if history_path is not None:
            HistoryDB(history_path, history.records).write_all()
        return SearchResult(
            archive,
            HistoryDB(history_path, history.records),
            exhausted=cursor.get("exhausted", False),
            satisfied=cursor.get("satisfied", False)
        )
    engine = SearchEngine(
        rc,
        dataset=d,
        history_path=history_path,
        checkpoint_path=path,
        replay=history.records,
        **engine_args
    )
    return engine.run()


def best_k_by_accuracy(h, K):
    """
    K records with the lowest error, ties broken by insertion order
    """
    if K < 1:
        raise ContractViolation("K must be >= 1")
    ranked = sorted(
        enumerate(h.records), key=lambda item: (item[1].objectives.error, item[0])
    )
    return [record for _, record in ranked[:K]]
