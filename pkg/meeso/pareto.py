"""
Pareto dominance, fronts and the incrementally maintained archive of
non-dominated evaluation records.
"""
import logging
import math

import numpy as np
import pandas as pd

from meeso.core_types import ContractViolation, ObjectiveId, ObjectiveVector

logger = logging.getLogger(__name__)

DEFAULT_OBJECTIVES = (ObjectiveId.Error, ObjectiveId.Uncertainty)
PARETO_CSV_COLUMNS = [
    "error", "uncertainty", "wall_seconds", "heuristic_id", "iteration",
    "candidate_json"
]
# rows of the dominance relation computed per broadcast
DOMINANCE_CHUNK = 512


def as_vector(objectives):
    if isinstance(objectives, ObjectiveVector):
        return objectives.as_tuple()
    return tuple(float(v) for v in objectives)


def dominates(h, k):
    """
    True iff h is no worse than k in every objective and strictly better in
    at least one (all objectives minimized). Exact float comparison.
    """
    h, k = as_vector(h), as_vector(k)
    if len(h) != len(k):
        raise ContractViolation(
            f"Dimensionality mismatch: {len(h)} vs {len(k)} objectives"
        )
    if not all(math.isfinite(v) for v in h + k):
        raise ContractViolation("Objective vectors must be finite")
    strictly_better = False
    for h_i, k_i in zip(h, k):
        if h_i > k_i:
            return False
        if h_i < k_i:
            strictly_better = True
    return strictly_better


def _objective_matrix(vectors):
    matrix = np.asarray([as_vector(v) for v in vectors], dtype=float)
    if matrix.ndim != 2:
        raise ContractViolation("All objective vectors need the same length")
    if not np.all(np.isfinite(matrix)):
        raise ContractViolation("Objective vectors must be finite")
    return matrix


def _dominance_rows(matrix, start, stop):
    rows = matrix[start:stop, None, :]
    no_worse = np.all(rows <= matrix[None, :, :], axis=2)
    better = np.any(rows < matrix[None, :, :], axis=2)
    return no_worse & better


def dominance_matrix(vectors):
    """
    Boolean matrix D with D[i, j] = vectors[i] dominates vectors[j], filled
    DOMINANCE_CHUNK rows at a time
    """
    matrix = _objective_matrix(vectors)
    n = len(matrix)
    dominated_by = np.zeros((n, n), dtype=bool)
    for start in range(0, n, DOMINANCE_CHUNK):
        stop = min(start + DOMINANCE_CHUNK, n)
        dominated_by[start:stop] = _dominance_rows(matrix, start, stop)
    return dominated_by


def non_dominated_mask(vectors):
    if len(vectors) == 0:
        return np.zeros(0, dtype=bool)
    matrix = _objective_matrix(vectors)
    dominated = np.zeros(len(matrix), dtype=bool)
    for start in range(0, len(matrix), DOMINANCE_CHUNK):
        stop = min(start + DOMINANCE_CHUNK, len(matrix))
        dominated |= np.any(_dominance_rows(matrix, start, stop), axis=0)
    return ~dominated


def pareto_front(records, objective_ids=DEFAULT_OBJECTIVES):
    """
    Records whose objectives are non-dominated within the input, in input
    order. Objective-equal duplicates are all kept.
    """
    records = list(records)
    if not records:
        return []
    vectors = [r.objective_values(objective_ids) for r in records]
    mask = non_dominated_mask(vectors)
    return [r for r, keep in zip(records, mask) if keep]


def non_dominated_sort(vectors):
    """
    Partition vectors into successive fronts F0, F1, ...
    Returns:
        list of fronts, each a list of input indices in ascending order
    """
    if len(vectors) == 0:
        return []
    dominated_by = dominance_matrix(vectors)
    remaining = np.ones(len(vectors), dtype=bool)
    fronts = []
    while remaining.any():
        # members not dominated by any other remaining member
        sub = dominated_by[np.ix_(remaining, remaining)]
        in_front = ~np.any(sub, axis=0)
        indices = np.flatnonzero(remaining)[in_front]
        fronts.append(indices.tolist())
        remaining[indices] = False
    return fronts


class ParetoArchive:
    """
    Mutually non-dominated set of evaluation records. Members are kept with
    the insertion index under which they were offered.
    """

    def __init__(self, objective_ids=DEFAULT_OBJECTIVES, dedupe=False):
        self.objective_ids = tuple(objective_ids)
        self.dedupe = dedupe
        self._members = []
        self._offered = 0

    @property
    def members(self):
        return [record for _, record in self._members]

    @property
    def indexed_members(self):
        return list(self._members)

    def __len__(self):
        return len(self._members)

    def __iter__(self):
        return iter(self.members)

    def copy(self):
        snapshot = ParetoArchive(self.objective_ids, dedupe=self.dedupe)
        snapshot._members = list(self._members)
        snapshot._offered = self._offered
        return snapshot

    def insert(self, record):
        """
        Offer a record; returns whether it was accepted
        """
        index = self._offered
        self._offered += 1
        vector = record.objective_values(self.objective_ids)
        for _, member in self._members:
            member_vector = member.objective_values(self.objective_ids)
            if dominates(member_vector, vector):
                return False
            if self.dedupe and member_vector == vector:
                return False
        self._members = [
            (i, member) for i, member in self._members if
            not dominates(vector, member.objective_values(self.objective_ids))
        ]
        self._members.append((index, record))
        return True

    def vectors(self, objective_ids=None):
        objective_ids = objective_ids or self.objective_ids
        return [m.objective_values(objective_ids) for m in self.members]

    def hypervolume(self, reference=(1.0, 1.0)):
        vectors = self.vectors(DEFAULT_OBJECTIVES)
        return hypervolume_2d(vectors, reference) if vectors else 0.0

    def to_csv(self, path):
        write_pareto_csv(self.members, path)


def archive_insert(a, r):
    """
    Functional insertion: returns (new archive, accepted) leaving `a` intact
    """
    updated = a.copy()
    accepted = updated.insert(r)
    return updated, accepted


def hypervolume_2d(front, reference):
    """
    Area dominated by a two-objective front and bounded by the reference
    point; sweep over the first objective summing rectangles.
    """
    reference = as_vector(reference)
    points = [as_vector(p) for p in front]
    if len(reference) != 2 or any(len(p) != 2 for p in points):
        raise ContractViolation("hypervolume_2d needs 2-dimensional vectors")
    for point in points:
        if point[0] > reference[0] or point[1] > reference[1]:
            raise ContractViolation(
                f"Point {point} exceeds the reference point {reference}"
            )
    volume = 0.0
    lowest_second = reference[1]
    for first, second in sorted(points):
        if second < lowest_second:
            volume += (reference[0] - first) * (lowest_second - second)
            lowest_second = second
    return volume


def write_pareto_csv(records, path):
    rows = [
        {
            "error": r.objectives.error,
            "uncertainty": r.objectives.uncertainty,
            "wall_seconds": r.wall_seconds,
            "heuristic_id": r.heuristic_id,
            "iteration": r.iteration,
            "candidate_json": r.candidate.to_json()
        } for r in records
    ]
    pd.DataFrame(rows, columns=PARETO_CSV_COLUMNS).to_csv(path, index=False)
    logger.debug(f"Wrote {len(rows)} Pareto rows to {path}")
