"""
Learn-to-rank surrogate: historical records are sorted into ordered groups
per objective and a boosted regression tree ensemble learns to predict the
group of an encoded candidate.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from meeso.core_types import ContractViolation, InsufficientHistory, ObjectiveId
from meeso.search_space import encode, encode_all

logger = logging.getLogger(__name__)

DEFAULT_GROUPS = 5
MIN_TRAINING_SIZE = 10


def group_sizes(n_records, n_groups):
    """
    Contiguous bucket sizes differing by at most one, larger buckets first
    """
    base, extra = divmod(n_records, n_groups)
    return [base + 1] * extra + [base] * (n_groups - extra)


def objective_column(records, objective_id):
    return np.asarray(
        [r.objective_values((objective_id, ))[0] for r in records], dtype=float
    )


def group_labels(values, n_groups):
    """
    Label 0 for the lowest values; ties keep their history order
    """
    if n_groups < 1:
        raise ContractViolation("n_groups must be >= 1")
    if len(values) < n_groups:
        raise InsufficientHistory(
            f"Need at least {n_groups} records to form {n_groups} groups, got\
 {len(values)}"
        )
    order = np.argsort(values, kind="stable")
    labels = np.zeros(len(values), dtype=int)
    start = 0
    for group, size in enumerate(group_sizes(len(values), n_groups)):
        labels[order[start:start + size]] = group
        start += size
    return labels


def assign_groups(records, n_groups, objective_id):
    """
    Pair every record's feature vector with its rank group, in history order
    """
    labels = group_labels(objective_column(records, objective_id), n_groups)
    return [(encode(r.candidate), int(label)) for r, label in zip(records, labels)]


class RegressionTree:
    """
    Array form of a fitted sklearn regression tree; prediction walks the
    node arrays so a model read back from JSON predicts identically
    """

    def __init__(self, left, right, feature, threshold, value):
        self.left = np.asarray(left, dtype=int)
        self.right = np.asarray(right, dtype=int)
        self.feature = np.asarray(feature, dtype=int)
        self.threshold = np.asarray(threshold, dtype=float)
        self.value = np.asarray(value, dtype=float)

    @classmethod
    def from_sklearn(cls, estimator):
        tree = estimator.tree_
        return cls(
            tree.children_left, tree.children_right, tree.feature,
            tree.threshold, tree.value.reshape(-1)
        )

    def predict(self, x):
        # sklearn compares float32 features against the thresholds
        x = np.asarray(x, dtype=np.float32)
        node = np.zeros(len(x), dtype=int)
        rows = np.arange(len(x))
        while True:
            inner = self.left[node] != -1
            if not inner.any():
                return self.value[node]
            go_left = x[rows, np.maximum(self.feature[node], 0)
                        ] <= self.threshold[node]
            node = np.where(
                inner, np.where(go_left, self.left[node], self.right[node]),
                node
            )

    def to_dict(self):
        return {
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "value": self.value.tolist()
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


class BoostedRanker:
    """
    Gradient boosted regression trees with squared-error loss on the ordinal
    group label
    """

    def __init__(
        self, n_estimators=100, max_depth=3, learning_rate=0.1, seed=0
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.seed = seed
        self.init_score = 0.0
        self.trees = []

    def fit(self, x, y):
        y = np.asarray(y, dtype=float)
        self.init_score = float(np.mean(y))
        self.trees = []
        predictions = np.full(len(y), self.init_score)
        for tree_idx in range(self.n_estimators):
            residual = y - predictions
            if np.max(np.abs(residual)) < 1e-12:
                break
            estimator = DecisionTreeRegressor(
                max_depth=self.max_depth, random_state=self.seed + tree_idx
            )
            estimator.fit(x, residual)
            tree = RegressionTree.from_sklearn(estimator)
            self.trees.append(tree)
            predictions += self.learning_rate * tree.predict(x)
        return self

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        scores = np.full(len(x), self.init_score)
        for tree in self.trees:
            scores += self.learning_rate * tree.predict(x)
        return scores

    def to_dict(self):
        return {
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "init_score": self.init_score,
            "trees": [tree.to_dict() for tree in self.trees]
        }

    @classmethod
    def from_dict(cls, data):
        ranker = cls(
            data["n_estimators"], data["max_depth"], data["learning_rate"],
            data["seed"]
        )
        ranker.init_score = data["init_score"]
        ranker.trees = [RegressionTree.from_dict(t) for t in data["trees"]]
        return ranker


@dataclass
class RankModel:
    objective_id: ObjectiveId
    n_groups: int
    model_state: Optional[BoostedRanker]
    training_size: int
    # set when all objective values were identical
    constant: bool = False

    def to_dict(self):
        return {
            "objective_id": self.objective_id.value,
            "n_groups": self.n_groups,
            "model_state": self.model_state.to_dict()
            if self.model_state is not None else None,
            "training_size": self.training_size,
            "constant": self.constant
        }

    @classmethod
    def from_dict(cls, data):
        state = data["model_state"]
        return cls(
            objective_id=ObjectiveId(data["objective_id"]),
            n_groups=data["n_groups"],
            model_state=BoostedRanker.from_dict(state)
            if state is not None else None,
            training_size=data["training_size"],
            constant=data.get("constant", False)
        )


def train(
    records,
    n_groups=DEFAULT_GROUPS,
    objective_id=ObjectiveId.Error,
    seed=0,
    n_estimators=100,
    max_depth=3,
    learning_rate=0.1
):
    """
    Fit a rank model for one objective on the full history
    """
    records = list(records)
    required = max(2 * n_groups, MIN_TRAINING_SIZE)
    if len(records) < required:
        raise InsufficientHistory(
            f"Surrogate training needs {required} records, got {len(records)}"
        )
    values = objective_column(records, objective_id)
    ranker = BoostedRanker(n_estimators, max_depth, learning_rate, seed)
    if np.all(values == values[0]):
        logger.warning(
            f"All {objective_id.value} values identical, using a constant\
 surrogate"
        )
        return RankModel(objective_id, n_groups, ranker, len(records), True)

    grouped = assign_groups(records, n_groups, objective_id)
    x = np.vstack([features for features, _ in grouped])
    y = np.asarray([label for _, label in grouped])
    ranker.fit(x, y)
    logger.debug(
        f"Trained {objective_id.value} surrogate: {len(ranker.trees)} trees on\
 {len(records)} records"
    )
    return RankModel(objective_id, n_groups, ranker, len(records))


def predict_groups(m, features):
    if m is None or m.model_state is None:
        raise ContractViolation("Surrogate model is not trained")
    return m.model_state.predict(features)


def predict_group(m, f):
    """
    Fractional group score of one feature vector, lower is better
    """
    return float(predict_groups(m, np.atleast_2d(f))[0])


def score_candidates(m, candidates):
    return predict_groups(m, encode_all(candidates))


def pairwise_order_agreement(scores, truths):
    """
    Fraction of pairs with different true values whose predicted order
    matches; predicted ties count half
    """
    scores, truths = np.asarray(scores, float), np.asarray(truths, float)
    upper = np.triu_indices(len(scores), k=1)
    true_sign = np.sign(truths[:, None] - truths[None, :])[upper]
    score_sign = np.sign(scores[:, None] - scores[None, :])[upper]
    informative = true_sign != 0
    if not informative.any():
        return 1.0
    agreement = np.where(
        score_sign[informative] == 0, 0.5,
        (score_sign[informative] == true_sign[informative]).astype(float)
    )
    return float(np.mean(agreement))


def holdout_agreement(
    records, n_groups, objective_id, fraction=0.3, seed=0, **ranker_args
):
    """
    Fit on a random split of the history and report pairwise order agreement
    on the held-out part
    """
    records = list(records)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_held_out = max(int(round(fraction * len(records))), 2)
    held_out = [records[i] for i in sorted(order[:n_held_out])]
    fitting = [records[i] for i in sorted(order[n_held_out:])]
    model = train(fitting, n_groups, objective_id, seed, **ranker_args)
    scores = score_candidates(model, [r.candidate for r in held_out])
    return pairwise_order_agreement(
        scores, objective_column(held_out, objective_id)
    )
