import itertools
import math
import time

import numpy as np
import pytest
import torch

from meeso.core_types import (
    ArchitectureSpec, BlockFamily, Candidate, ContractViolation,
    Optimizer, PipelineConfig, Preprocessing, with_arch, with_config
)
from meeso.dataset import two_blobs
from meeso.evaluator import (
    EvalOptions, TrainedModel, accuracy, build_and_train, dropout_variance,
    mc_dropout_uncertainty, network_loss, oracle_cost, oracle_evaluate,
    oracle_record, run_pipeline, sample_probes
)
from meeso.models.block_net import BlockNet, build_net, parameter_count
from meeso.search_space import HEURISTIC_PRESETS, generate, get_heuristic

SMALL = Candidate(
    ArchitectureSpec(BlockFamily.Plain, (1, ), (16, ), 0.1),
    PipelineConfig(Preprocessing.Standardize, Optimizer.AdaptiveMoments, 5, 0.01, 32)
)


def test_mc_dropout_hand_cases():
    passes = np.array([[[0.4]], [[0.6]]])
    assert abs(dropout_variance(passes) - 0.01) < 1e-12
    assert dropout_variance(np.array([[[0.0]], [[1.0]]])) == 0.25


def test_mc_dropout_permutation_invariant():
    rng = np.random.default_rng(0)
    passes = rng.random((20, 8, 3))
    assert np.isclose(
        dropout_variance(passes), dropout_variance(passes[rng.permutation(20)])
    )
    assert dropout_variance(passes) >= 0


def test_deterministic_model_has_zero_uncertainty():
    d = two_blobs(seed=0)
    arch = with_arch(SMALL, dropout_rate=0.0).arch
    model = build_and_train(arch, SMALL.config, d, seed=0)
    probes = sample_probes(d, 8, seed=0)
    assert mc_dropout_uncertainty(model, probes, 5, seed=1) == 0.0
    with pytest.raises(ContractViolation):
        mc_dropout_uncertainty(model, probes, 1)


def test_softmax_outputs():
    arch = ArchitectureSpec(BlockFamily.Bottleneck, (3, 2), (16, 8), 0.3)
    net = build_net(arch, 10, 3, seed=0)
    x = torch.randn(6, 10, dtype=torch.float64)
    generator = torch.Generator().manual_seed(0)
    probabilities = net.predict_proba(x, dropout_active=True, generator=generator)
    assert torch.all(probabilities >= 0)
    assert torch.allclose(
        probabilities.sum(dim=1), torch.ones(6, dtype=torch.float64), atol=1e-9
    )


def test_block_structure():
    residual = BlockNet(
        ArchitectureSpec(BlockFamily.Residual, (2, 3), (8, 8), 0.1), 10, 2
    )
    # one pair in the first layer, one pair plus a plain unit in the second
    assert len(residual.units) == 3
    assert not residual.units[0].skip and residual.units[1].skip
    bottleneck = BlockNet(
        ArchitectureSpec(BlockFamily.Bottleneck, (2, ), (16, ), 0.1), 16, 2
    )
    assert bottleneck.units[0].fc1.out_features == 8
    assert bottleneck.units[0].skip


def test_parameter_count():
    arch = ArchitectureSpec(BlockFamily.Plain, (1, 1), (8, 8), 0.1)
    # 10*8+8, 8*8+8, 8*2+2
    assert parameter_count(arch, 10, 2) == 88 + 72 + 18
    net = build_net(arch, 10, 2, seed=0)
    assert parameter_count(arch, 10, 2) == sum(p.numel() for p in net.parameters())


def test_gradient_check():
    torch.manual_seed(0)
    for family in BlockFamily:
        arch = ArchitectureSpec(family, (2, 2), (8, 8), 0.2)
        net = build_net(arch, 5, 3, seed=1)
        x = torch.randn(12, 5, dtype=torch.float64)
        y = torch.randint(0, 3, (12, ))

        net.zero_grad()
        network_loss(net, x, y).backward()
        params = list(net.parameters())
        rng = np.random.default_rng(0)
        analytic, numeric = [], []
        eps = 1e-5
        for _ in range(100):
            p = params[rng.integers(len(params))]
            index = tuple(int(rng.integers(n)) for n in p.shape)
            analytic.append(p.grad[index].item())
            with torch.no_grad():
                original = p[index].item()
                p[index] = original + eps
                loss_plus = network_loss(net, x, y).item()
                p[index] = original - eps
                loss_minus = network_loss(net, x, y).item()
                p[index] = original
            numeric.append((loss_plus - loss_minus) / (2 * eps))
        analytic, numeric = np.array(analytic), np.array(numeric)
        relative = np.linalg.norm(analytic - numeric) / max(
            np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12
        )
        assert relative <= 1e-4


def test_one_epoch_updates():
    d = two_blobs(seed=0)
    cfg = with_config(SMALL, epochs=1, batch_size=32).config
    model = build_and_train(SMALL.arch, cfg, d, seed=0)
    assert model.n_updates == math.ceil(len(d.train_idx) / 32)


def test_training_is_deterministic():
    d = two_blobs(seed=0)
    first = build_and_train(SMALL.arch, SMALL.config, d, seed=4)
    second = build_and_train(SMALL.arch, SMALL.config, d, seed=4)
    for p, q in zip(first.net.parameters(), second.net.parameters()):
        assert torch.equal(p, q)


class ConstantNet(torch.nn.Module):

    def forward(self, x, dropout_active=False, generator=None):
        return torch.tensor([[1.0, 0.0]], dtype=x.dtype).repeat(len(x), 1)


def test_accuracy_bounds():
    d = two_blobs(seed=0)
    constant = TrainedModel(ConstantNet(), 0.0, 0.0, 0, 0, 2)
    assert accuracy(constant, d) == 0.5


def test_trainer_sanity():
    d = two_blobs(seed=0)
    for name in HEURISTIC_PRESETS:
        # six draws cover every preprocessing x optimizer slot
        for c in generate(get_heuristic(name), 6, seed=0):
            c = with_config(c, epochs=200)
            start = time.perf_counter()
            model = build_and_train(c.arch, c.config, d, seed=0)
            score = accuracy(model, d)
            assert time.perf_counter() - start < 30
            assert score >= 0.9, (name, c.to_json())


def test_run_pipeline():
    d = two_blobs(seed=0)
    opts = EvalOptions(n_probes=8, mc_passes=5)
    result = run_pipeline(SMALL, d, opts, seed=3)
    again = run_pipeline(SMALL, d, opts, seed=3)
    assert 0 <= result.record.objectives.error <= 1
    assert result.record.objectives.uncertainty > 0
    assert result.record.objectives == again.record.objectives
    assert result.record.wall_seconds > 0
    assert result.warnings == []

    deterministic = run_pipeline(with_arch(SMALL, dropout_rate=0.0), d, opts, 3)
    assert deterministic.record.objectives.uncertainty == 0.0
    assert len(deterministic.warnings) == 1


def test_pipeline_stages_change_outcomes():
    d = two_blobs(seed=0)
    opts = EvalOptions(n_probes=8, mc_passes=5)
    c = with_config(SMALL, epochs=2, learning_rate=0.05)
    objectives = [
        run_pipeline(
            with_config(c, preprocessing=p, optimizer=o), d, opts, seed=1
        ).record.objectives for p in Preprocessing for o in Optimizer
    ]
    for first, second in itertools.combinations(objectives, 2):
        assert first != second


def test_diverged_training_penalty():
    d = two_blobs(seed=0)
    c = with_config(
        SMALL, optimizer=Optimizer.PlainGradientDescent, learning_rate=1e200
    )
    result = run_pipeline(c, d, EvalOptions(n_probes=4, mc_passes=2), seed=0)
    assert result.record.objectives.error == 1.0
    assert result.record.objectives.uncertainty == 1.0
    assert "diverged" in result.warnings[0]


def oracle_candidate(blocks, width, dropout, optimizer, preprocessing):
    return Candidate(
        ArchitectureSpec(
            BlockFamily.Residual, blocks, (width, ) * len(blocks), dropout
        ), PipelineConfig(preprocessing, optimizer, 20, 0.01, 32)
    )


def test_oracle_examples():
    c = oracle_candidate(
        (2, 2, 2), 32, 0.3, Optimizer.AdaptiveMoments, Preprocessing.Standardize
    )
    objectives = oracle_evaluate(c, noise_seed=0, noise_std=0.0)
    assert np.isclose(objectives.error, 0.05)
    assert np.isclose(objectives.uncertainty, 0.02)

    plain = with_config(c, optimizer=Optimizer.PlainGradientDescent)
    assert np.isclose(
        oracle_evaluate(plain, 0, 0.0).error - objectives.error, 0.05
    )
    assert oracle_evaluate(c, 9) == oracle_evaluate(c, 9)
    assert oracle_record(c, 9).to_json() == oracle_record(c, 9).to_json()
    assert oracle_cost(c) > 0


def test_oracle_minimum():
    best_error, minimizers = math.inf, []
    for n_layers in range(1, 7):
        for blocks in itertools.product((1, 2), repeat=n_layers):
            for width in (8, 16, 32, 64):
                for optimizer in Optimizer:
                    for preprocessing in Preprocessing:
                        c = oracle_candidate(
                            blocks, width, 0.3, optimizer, preprocessing
                        )
                        error = oracle_evaluate(c, 0, 0.0).error
                        if error < best_error - 1e-12:
                            best_error, minimizers = error, [c]
                        elif abs(error - best_error) <= 1e-12:
                            minimizers.append(c)
    assert np.isclose(best_error, 0.05)
    for c in minimizers:
        assert sum(c.arch.blocks_per_layer) == 6
        assert c.arch.widths_per_layer[0] == 32
        assert c.config.optimizer is Optimizer.AdaptiveMoments
        assert c.config.preprocessing is not Preprocessing.None_
