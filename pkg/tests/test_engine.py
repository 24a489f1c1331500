import json

import numpy as np
import pytest

from meeso.core_types import (
    ContractViolation, EvaluationRecord, HistoryParseError, ObjectiveId
)
from meeso.dataset import two_blobs
from meeso.engine import (
    EvaluatorKind, HistoryDB, RunConfig, Selection, best_k_by_accuracy,
    continue_run, resume, run
)
from meeso.evaluator import oracle_record
from meeso.pareto import pareto_front
from meeso.search_space import generate, get_heuristic


def oracle_config(**changes):
    settings = dict(
        heuristics=(get_heuristic("residual"), ),
        arches_per_iter=4,
        inner_iterations=5,
        initial_space_size=20,
        n_groups=5,
        run_seed=7,
        evaluator_kind=EvaluatorKind.Oracle
    )
    settings.update(changes)
    return RunConfig(**settings)


def test_run_counts_and_front():
    archive, history = run(oracle_config(), verify_archive=True)
    assert len(history) == 40
    assert archive.members == pareto_front(history.records)
    assert [r.iteration for r in history][:20] == [0] * 20
    assert sorted(set(r.iteration for r in history)) == [0, 1, 2, 3, 4, 5]
    assert len(set(r.candidate for r in history)) == 40


def test_run_with_time_objective():
    result = run(oracle_config(include_time=True, inner_iterations=2))
    ids = (ObjectiveId.Error, ObjectiveId.Uncertainty, ObjectiveId.WallSeconds)
    assert result.archive.members == pareto_front(result.history.records, ids)
    assert len(result.history) == 28


def test_run_random_selection():
    result = run(oracle_config(selection=Selection.Random))
    assert len(result.history) == 40
    assert result.exhausted and not result.satisfied


def test_satisfied_stops_after_heuristic():
    rc = oracle_config(
        heuristics=(get_heuristic("residual"), get_heuristic("plain")),
        satisfied_thresholds=(1.0, 1.0),
        inner_iterations=2
    )
    result = run(rc)
    assert result.satisfied and not result.exhausted
    assert len(result.history) == 28
    assert {r.heuristic_id for r in result.history} == {"residual"}


def test_heuristics_run_in_order():
    rc = oracle_config(
        heuristics=(get_heuristic("residual"), get_heuristic("plain")),
        inner_iterations=1
    )
    result = run(rc)
    assert len(result.history) == 48
    ids = [r.heuristic_id for r in result.history]
    assert ids == ["residual"] * 24 + ["plain"] * 24
    assert result.exhausted


def test_invalid_config():
    with pytest.raises(ContractViolation):
        run(oracle_config(inner_iterations=0))
    with pytest.raises(ContractViolation):
        run(oracle_config(satisfied_thresholds=(0.1, 1.5)))
    with pytest.raises(ContractViolation):
        run(oracle_config(initial_space_size=5))
    with pytest.raises(ContractViolation):
        run(oracle_config(evaluator_kind=EvaluatorKind.Trainer))


def test_config_round_trip():
    rc = oracle_config(satisfied_thresholds=(0.1, 0.2), include_time=True)
    assert RunConfig.from_dict(json.loads(json.dumps(rc.to_dict()))) == rc
    by_name = RunConfig.from_dict({"heuristics": ["plain", "bottleneck"]})
    assert [h.id for h in by_name.heuristics] == ["plain", "bottleneck"]


def test_config_differences():
    rc = oracle_config()
    assert rc.differences(oracle_config()) == []
    changed = oracle_config(arches_per_iter=2, run_seed=3)
    assert rc.differences(changed) == ["arches_per_iter", "run_seed"]


def test_deterministic_across_jobs(tmp_path):
    serial, parallel = tmp_path / "serial.jsonl", tmp_path / "parallel.jsonl"
    rc = oracle_config(inner_iterations=3)
    run(rc, history_path=str(serial), jobs=1)
    run(rc, history_path=str(parallel), jobs=4)
    assert serial.read_bytes() == parallel.read_bytes()
    assert len(serial.read_text().splitlines()) == 32


def test_interrupt_and_resume(tmp_path):
    rc = oracle_config()
    full_path = tmp_path / "full.jsonl"
    run(rc, history_path=str(full_path))

    history_path = tmp_path / "history.jsonl"
    checkpoint = str(tmp_path / "checkpoint.jsonl")
    stopped = run(
        rc,
        history_path=str(history_path),
        checkpoint_path=checkpoint,
        stop_after=17
    )
    assert stopped.interrupted
    assert len(stopped.history) == 17

    resumed_rc, history, archive, cursor = resume(checkpoint)
    assert resumed_rc == rc
    assert len(history) == 17 and not cursor["finished"]
    assert archive.members == pareto_front(history.records)

    finished = continue_run(checkpoint, history_path=str(history_path))
    assert len(finished.history) == 40
    assert history_path.read_bytes() == full_path.read_bytes()

    # a finished run resumes to its final state without evaluating
    again = continue_run(checkpoint)
    assert again.history.records == finished.history.records
    assert resume(checkpoint)[3]["finished"]


def test_resume_drops_partial_tail(tmp_path):
    checkpoint = tmp_path / "checkpoint.jsonl"
    run(oracle_config(inner_iterations=1), checkpoint_path=str(checkpoint))
    text = checkpoint.read_text()
    checkpoint.write_text(text + '{"candidate": {"arch"')
    _, history, _, _ = resume(str(checkpoint))
    assert len(history) == 24


def test_resume_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        resume(str(tmp_path / "nothing.jsonl"))


def test_history_read(tmp_path):
    records = [
        oracle_record(c, seed=i)
        for i, c in enumerate(generate(get_heuristic("plain"), 3, seed=0))
    ]
    path = tmp_path / "history.jsonl"
    history = HistoryDB(str(path))
    for record in records:
        history.append(record)
    assert HistoryDB.read(str(path)).records == records

    path.write_text(
        records[0].to_json() + "\nnot json\n" + records[1].to_json() + "\n"
    )
    with pytest.raises(HistoryParseError) as err:
        HistoryDB.read(str(path))
    assert err.value.line_number == 2


def test_best_k_by_accuracy():
    space = generate(get_heuristic("plain"), 5, seed=0)
    errors = [0.53, 0.63, 0.63, 0.64, 0.71]
    records = []
    for i, (c, error) in enumerate(zip(space, errors)):
        record = oracle_record(c, seed=i)
        data = record.to_dict()
        data["objectives"]["error"] = error / 100
        records.append(EvaluationRecord.from_dict(data))
    history = HistoryDB(None, records)
    assert best_k_by_accuracy(history, 5) == records
    assert best_k_by_accuracy(history, 1) == records[:1]
    assert best_k_by_accuracy(history, 3) == records[:3]

    flat = HistoryDB(None, [records[0]] * 4)
    assert best_k_by_accuracy(flat, 2) == [records[0]] * 2
    with pytest.raises(ContractViolation):
        best_k_by_accuracy(history, 0)


def hypervolume_after(rc):
    return run(rc).archive.hypervolume()


def test_surrogate_beats_random():
    wins = 0
    for seed in range(20):
        rc = oracle_config(run_seed=seed, inner_iterations=10)
        surrogate = hypervolume_after(rc)
        random = hypervolume_after(
            RunConfig.from_dict(dict(rc.to_dict(), selection="random"))
        )
        wins += surrogate > random
    assert wins >= 16


def test_trainer_run():
    rc = oracle_config(
        evaluator_kind=EvaluatorKind.Trainer,
        heuristics=(get_heuristic("plain"), ),
        initial_space_size=10,
        n_groups=2,
        inner_iterations=1,
        arches_per_iter=2,
        n_probes=4,
        mc_passes=2
    )
    result = run(rc, two_blobs(n_samples=80, seed=0))
    assert len(result.history) == 12
    assert all(0 <= r.objectives.error <= 1 for r in result.history)
    assert np.all([r.wall_seconds > 0 for r in result.history])
