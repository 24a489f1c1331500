"""
End-to-end evaluation of a candidate: preprocess the data, build and train
the network, then measure test error and MC-Dropout uncertainty. A closed
form oracle stands in for training where search behaviour is tested.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch
import torch.nn.functional as F
import torch.optim as optim

from meeso.core_types import (
    Candidate, ContractViolation, EvaluationRecord, ObjectiveVector,
    Optimizer, Preprocessing, TrainingDiverged
)
from meeso.dataset import labels_to_torch, preprocess, to_torch
from meeso.models.block_net import build_net, parameter_count

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
# oracle noise and modelled cost
ORACLE_NOISE_STD = 0.005
ORACLE_FEATURES = 10
ORACLE_CLASSES = 2
ORACLE_SECONDS_PER_PARAM_EPOCH = 1e-5


@dataclass(frozen=True)
class EvalOptions:
    n_probes: int = 32
    mc_passes: int = 20
    penalty_error: float = 1.0
    penalty_uncertainty: float = 1.0


@dataclass
class TrainedModel:
    net: torch.nn.Module
    dropout_rate: float
    final_loss: float
    seed: int
    n_updates: int
    n_classes: int


@dataclass
class EvaluationResult:
    record: EvaluationRecord
    warnings: List[str] = field(default_factory=list)


def derive_seeds(seed, n=4):
    """
    Independent integer seeds for the stages of one evaluation
    """
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(child.generate_state(1)[0]) for child in children]


def network_loss(net, x, y, dropout_active=False, generator=None):
    logits = net(x, dropout_active=dropout_active, generator=generator)
    return F.cross_entropy(logits, y)


def init_optimizer(net, cfg):
    if cfg.optimizer is Optimizer.AdaptiveMoments:
        return optim.Adam(
            net.parameters(),
            lr=cfg.learning_rate,
            betas=ADAM_BETAS,
            eps=ADAM_EPS
        )
    return optim.SGD(net.parameters(), lr=cfg.learning_rate)


def build_and_train(arch, cfg, d, seed):
    """
    Build the classifier for `arch` and train it with mini-batch gradient
    descent for cfg.epochs passes over the training split. Deterministic for
    a fixed seed.
    """
    init_seed, shuffle_seed, dropout_seed = derive_seeds(seed, 3)
    net = build_net(arch, d.n_features, d.n_classes, init_seed)
    optimizer = init_optimizer(net, cfg)

    shuffle_generator = torch.Generator().manual_seed(shuffle_seed)
    dropout_generator = torch.Generator().manual_seed(dropout_seed)
    trainloader = torch.utils.data.DataLoader(
        torch.utils.data.TensorDataset(
            to_torch(d.x_train), labels_to_torch(d.y_train)
        ),
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=shuffle_generator,
        num_workers=0
    )

    net.train()
    n_updates = 0
    epoch_loss = float("nan")
    for epoch in range(cfg.epochs):
        running_loss = 0
        for x_batch, y_batch in trainloader:
            optimizer.zero_grad()
            loss = network_loss(
                net,
                x_batch,
                y_batch,
                dropout_active=True,
                generator=dropout_generator
            )
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch, loss.item())
            loss.backward()
            optimizer.step()
            n_updates += 1
            running_loss += loss.item() * len(y_batch)
        epoch_loss = running_loss / len(trainloader.dataset)
        logger.debug(f"Epoch {epoch}: loss {round(epoch_loss, 4)}")

    if not all(torch.all(torch.isfinite(p)) for p in net.parameters()):
        raise TrainingDiverged(cfg.epochs - 1)
    net.eval()
    return TrainedModel(
        net=net,
        dropout_rate=arch.dropout_rate,
        final_loss=epoch_loss,
        seed=seed,
        n_updates=n_updates,
        n_classes=d.n_classes
    )


def accuracy(m, d):
    """
    Fraction of test samples whose argmax prediction (dropout disabled)
    equals the label
    """
    if len(d.test_idx) == 0:
        raise ContractViolation("Accuracy needs a non-empty test split")
    with torch.no_grad():
        logits = m.net(to_torch(d.x_test), dropout_active=False)
    predicted = torch.argmax(logits, dim=1).numpy()
    return float(np.mean(predicted == d.y_test))


def dropout_variance(passes):
    """
    Predictive mean and uncertainty from stochastic forward passes.
    Args:
        passes: array (N passes x probes x classes) of output probabilities
    Returns:
        mean over probes of the per-class variance (1/N normalizer),
        averaged over classes
    """
    passes = np.asarray(passes, dtype=float)
    mean = np.mean(passes, axis=0)
    variance = np.mean((passes - mean)**2, axis=0)
    return float(np.mean(np.mean(variance, axis=-1)))


def mc_dropout_passes(m, probes, n_passes, seed=0):
    generator = torch.Generator().manual_seed(seed)
    x = to_torch(probes)
    with torch.no_grad():
        passes = [
            m.net.predict_proba(x, dropout_active=True, generator=generator)
            .numpy() for _ in range(n_passes)
        ]
    return np.stack(passes)


def mc_dropout_uncertainty(m, probes, n_passes, seed=0):
    """
    Epistemic uncertainty via MC-Dropout: n_passes forward passes with
    dropout active (fresh mask each pass)
    """
    if n_passes < 2:
        raise ContractViolation("MC-Dropout needs at least two passes")
    if len(probes) == 0:
        raise ContractViolation("MC-Dropout needs at least one probe")
    if m.dropout_rate == 0:
        logger.warning(
            "Dropout rate is 0, MC-Dropout uncertainty is uninformative"
        )
        return 0.0
    return dropout_variance(mc_dropout_passes(m, probes, n_passes, seed))


def sample_probes(d, n_probes, seed):
    """
    Uniform random inputs in the bounding box of the training features
    """
    low, high = d.bounding_box()
    rng = np.random.default_rng(seed)
    return rng.uniform(low, high, size=(n_probes, d.n_features))


def run_pipeline(
    c: Candidate,
    d,
    opts=EvalOptions(),
    seed=0,
    iteration=0,
    heuristic_id="manual"
):
    """
    Preprocess -> build and train -> accuracy -> uncertainty, timed.
    Diverged training is mapped to the penalty objectives.
    """
    warnings = []
    tic = time.perf_counter()
    prep_seed, train_seed, probe_seed, mc_seed = derive_seeds(seed)
    prepared = preprocess(d, c.config.preprocessing, prep_seed)
    try:
        model = build_and_train(c.arch, c.config, prepared, train_seed)
        error = 1.0 - accuracy(model, prepared)
        probes = sample_probes(prepared, opts.n_probes, probe_seed)
        uncertainty = mc_dropout_uncertainty(
            model, probes, opts.mc_passes, mc_seed
        )
        if c.arch.dropout_rate == 0:
            warnings.append("dropout rate 0: uncertainty is uninformative")
    except TrainingDiverged as err:
        logger.warning(f"Training diverged ({err}), using penalty objectives")
        warnings.append(f"training diverged in epoch {err.epoch}")
        error, uncertainty = opts.penalty_error, opts.penalty_uncertainty
    wall_seconds = time.perf_counter() - tic

    record = EvaluationRecord(
        candidate=c,
        objectives=ObjectiveVector(error, uncertainty),
        wall_seconds=wall_seconds,
        seed=seed,
        iteration=iteration,
        heuristic_id=heuristic_id
    )
    return EvaluationResult(record, warnings)


def evaluate(c, d, opts=EvalOptions(), seed=0, iteration=0, heuristic_id="manual"):
    return run_pipeline(c, d, opts, seed, iteration, heuristic_id).record


def _clamp(value, low=0.0, high=1.0):
    return min(max(value, low), high)


def oracle_evaluate(c: Candidate, noise_seed: int, noise_std=ORACLE_NOISE_STD):
    """
    Closed-form stand-in for training: error is lowest at 6 blocks in total
    and a mean width of 32, with adaptive moments and some preprocessing;
    uncertainty is lowest at dropout 0.3.
    """
    total_blocks = sum(c.arch.blocks_per_layer)
    mean_log_width = float(np.mean(np.log2(c.arch.widths_per_layer)))
    depth_gap = abs(total_blocks - 6) / 6
    width_gap = abs(mean_log_width - 5) / 5
    rng = np.random.default_rng(noise_seed)
    eta, eta_prime = rng.normal(0, 1, size=2) * noise_std

    error = (
        0.05 + 0.4 * depth_gap**2 + 0.4 * width_gap**2 + 0.05 *
        (c.config.optimizer is Optimizer.PlainGradientDescent) + 0.03 *
        (c.config.preprocessing is Preprocessing.None_) + eta
    )
    uncertainty = (
        0.02 + 0.3 * abs(c.arch.dropout_rate - 0.3) + 0.1 * width_gap +
        eta_prime
    )
    return ObjectiveVector(_clamp(error), _clamp(uncertainty))


def oracle_cost(c: Candidate):
    """
    Deterministic runtime model for oracle records: parameters x epochs
    """
    n_params = parameter_count(c.arch, ORACLE_FEATURES, ORACLE_CLASSES)
    return round(
        n_params * c.config.epochs * ORACLE_SECONDS_PER_PARAM_EPOCH, 6
    )


def oracle_record(
    c, seed=0, iteration=0, heuristic_id="manual", noise_std=ORACLE_NOISE_STD
):
    return EvaluationRecord(
        candidate=c,
        objectives=oracle_evaluate(c, seed, noise_std),
        wall_seconds=oracle_cost(c),
        seed=seed,
        iteration=iteration,
        heuristic_id=heuristic_id
    )
