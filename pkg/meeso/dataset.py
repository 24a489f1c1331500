import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
from sklearn.model_selection import train_test_split

from meeso.core_types import DatasetError, Preprocessing

logger = logging.getLogger(__name__)

# jitter of NoiseAugment relative to the per-feature train std
NOISE_SCALE = 0.1


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Feature matrix with integer class labels and disjoint train/test index
    sets into it
    """
    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1

    @property
    def x_train(self):
        return self.features[self.train_idx]

    @property
    def y_train(self):
        return self.labels[self.train_idx]

    @property
    def x_test(self):
        return self.features[self.test_idx]

    @property
    def y_test(self):
        return self.labels[self.test_idx]

    def bounding_box(self):
        """
        Per-feature (min, max) over the training split
        """
        return self.x_train.min(axis=0), self.x_train.max(axis=0)


def validate_dataset(d):
    problems = []
    if d.features.ndim != 2 or len(d.features) != len(d.labels):
        problems.append("features must be n_samples x n_features")
    if not np.all(np.isfinite(d.features)):
        problems.append("features must be finite")
    if len(np.intersect1d(d.train_idx, d.test_idx)) > 0:
        problems.append("train and test splits overlap")
    if len(d.labels) and d.labels.min() < 0:
        problems.append("labels must be class ids >= 0")
    missing = set(range(d.n_classes)) - set(np.unique(d.y_train).tolist())
    if missing:
        problems.append(f"classes {sorted(missing)} missing from train split")
    if problems:
        raise DatasetError("; ".join(problems))
    return d


def split_dataset(features, labels, test_fraction=0.25, seed=0):
    indices = np.arange(len(labels))
    try:
        train_idx, test_idx = train_test_split(
            indices,
            test_size=test_fraction,
            stratify=labels,
            random_state=seed
        )
    except ValueError as err:
        raise DatasetError(f"Cannot split dataset: {err}")
    dataset = Dataset(
        np.asarray(features, dtype=float),
        np.asarray(labels, dtype=int), np.sort(train_idx), np.sort(test_idx)
    )
    return validate_dataset(dataset)


def two_blobs(
    n_samples=400,
    n_features=10,
    sigma=0.5,
    test_fraction=0.25,
    seed=0
):
    """
    Two Gaussian blobs with class means -1 and +1 in every feature
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % 2
    means = np.where(labels[:, None] == 1, 1.0, -1.0)
    features = means + rng.normal(0, sigma, size=(n_samples, n_features))
    return split_dataset(features, labels, test_fraction, seed)


def load_csv(path, has_header=False, test_fraction=0.25, seed=0):
    """
    Comma separated file, features followed by an integer label column
    """
    frame = pd.read_csv(path, header=0 if has_header else None)
    if frame.shape[1] < 2:
        raise DatasetError(f"{path}: need at least one feature and a label")
    values = frame.to_numpy()
    try:
        features = values[:, :-1].astype(float)
        labels = values[:, -1].astype(float)
    except ValueError as err:
        raise DatasetError(f"{path}: non-numeric value ({err})")
    if not np.all(labels == np.round(labels)):
        raise DatasetError(f"{path}: labels must be integers")
    logger.info(
        f"Loaded {features.shape[0]} samples with {features.shape[1]}\
 features from {path}"
    )
    return split_dataset(features, labels.astype(int), test_fraction, seed)


def _train_statistics(d):
    x_train = d.x_train
    return np.mean(x_train, axis=0), np.std(x_train, axis=0)


def preprocess(d: Dataset, mode: Preprocessing, seed: int) -> Dataset:
    """
    Pre-processing stage of the pipeline. Statistics always come from the
    training split; the test split is never augmented.
    """
    if mode is Preprocessing.None_:
        return d
    mean, std = _train_statistics(d)
    if mode is Preprocessing.Standardize:
        # constant features are centered only
        scale = np.where(std > 0, std, 1.0)
        features = (d.features - mean) / scale
        return Dataset(features, d.labels, d.train_idx, d.test_idx)
    if mode is Preprocessing.NoiseAugment:
        rng = np.random.default_rng(seed)
        x_train = d.x_train
        jitter = rng.normal(0, 1, size=x_train.shape) * (NOISE_SCALE * std)
        features = np.vstack([d.features, x_train + jitter])
        labels = np.concatenate([d.labels, d.y_train])
        new_idx = np.arange(len(d.features), len(features))
        train_idx = np.concatenate([d.train_idx, new_idx])
        return Dataset(features, labels, train_idx, d.test_idx)
    raise ValueError(f"Unknown preprocessing mode {mode}")


def to_torch(array, dtype=torch.float64):
    """
    Helper function to convert numpy arrays to tensors; a single sample is
    expanded to a batch of one
    """
    array = np.asarray(array)
    if array.ndim == 1:
        array = np.expand_dims(array, 0)
    return torch.from_numpy(array).to(dtype)


def labels_to_torch(labels):
    """
    Class labels as a 1-D long tensor, one entry per sample
    """
    return torch.from_numpy(np.asarray(labels, dtype=np.int64).reshape(-1))
