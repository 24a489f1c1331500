import logging

import numpy as np

from meeso.core_types import ContractViolation, EmptySpace, ObjectiveId
from meeso.pareto import non_dominated_sort
from meeso.search_space import encode_all
from meeso.surrogate import predict_groups

logger = logging.getLogger(__name__)


def unevaluated(space, evaluated):
    """
    Distinct candidates of the space (in space order) not evaluated yet
    """
    evaluated = set(evaluated)
    return [c for c in dict.fromkeys(space) if c not in evaluated]


def _primary_model(models):
    for position, model in enumerate(models):
        if model.objective_id is ObjectiveId.Error:
            return position
    return 0


def select(models, space, evaluated, k):
    """
    Pick the k most promising unevaluated candidates: non-dominated sorting
    of the predicted group scores, fronts filled in order, each front sorted
    by the error model's score and then by the encoding.
    """
    if not models:
        raise ContractViolation("Acquisition needs at least one rank model")
    if k < 1:
        raise ContractViolation("k must be >= 1")
    pool = unevaluated(space, evaluated)
    if not pool:
        raise EmptySpace("No unevaluated candidate left in the space")

    features = encode_all(pool)
    scores = np.column_stack([predict_groups(m, features) for m in models])
    primary = _primary_model(models)

    chosen = []
    for front in non_dominated_sort(scores):
        front = sorted(
            front, key=lambda i: (scores[i, primary], tuple(features[i]))
        )
        chosen.extend(front[:k - len(chosen)])
        if len(chosen) == k:
            break
    if len(chosen) < k:
        logger.info(f"Only {len(chosen)} of {k} requested candidates left")
    return [pool[i] for i in chosen]


def select_random(space, evaluated, k, seed):
    """
    Random search baseline over the same pool
    """
    pool = unevaluated(space, evaluated)
    if not pool:
        raise EmptySpace("No unevaluated candidate left in the space")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
    return [pool[i] for i in picked]
