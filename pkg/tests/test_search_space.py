import numpy as np
import pytest

from meeso.core_types import (
    ArchitectureSpec, BlockFamily, Candidate, ContractViolation,
    ExhaustedSpace, GrowthPolicy, Heuristic, Optimizer, PipelineConfig,
    Preprocessing, validate_candidate, with_arch
)
from meeso.search_space import (
    BALANCE_GAP, CONFIG_PRODUCT, FEATURE_LENGTH, HEURISTIC_PRESETS,
    SearchSpace, depth_index,
    encode, generate, get_heuristic, mutate_neighbors, space_capacity,
    width_index
)

RESIDUAL = Heuristic(
    "residual", BlockFamily.Residual, depth_range=(2, 6), width_range=(8, 64)
)


def test_generate_balanced():
    space = generate(RESIDUAL, 10, seed=7)
    assert len(space) == 10
    assert len(set(space.candidates)) == 10
    for c in space:
        assert validate_candidate(c) == []
        assert RESIDUAL.admits(c.arch)
        gap = depth_index(RESIDUAL, c.arch.n_layers) - width_index(
            RESIDUAL, c.arch.widths_per_layer
        )
        assert abs(gap) <= BALANCE_GAP


def test_generate_deterministic():
    assert generate(RESIDUAL, 30, seed=3) == generate(RESIDUAL, 30, seed=3)
    assert generate(RESIDUAL, 30, seed=3) != generate(RESIDUAL, 30, seed=4)


def test_generate_config_round_robin():
    space = generate(RESIDUAL, 13, seed=1)
    configs = [(c.config.preprocessing, c.config.optimizer) for c in space]
    assert configs == [CONFIG_PRODUCT[i % 6] for i in range(13)]
    assert all(c.config.epochs == RESIDUAL.epochs for c in space)


def test_generate_single():
    space = generate(RESIDUAL, 1, seed=0)
    assert len(space) == 1 and validate_candidate(space.candidates[0]) == []


def test_generate_exhausted():
    h = Heuristic(
        "fixed",
        BlockFamily.Plain,
        depth_range=(4, 4),
        width_range=(16, 16),
        block_choices=(1, ),
        dropout_choices=(0.2, )
    )
    assert space_capacity(h) == 6
    assert len(generate(h, 6, seed=0)) == 6
    with pytest.raises(ExhaustedSpace) as err:
        generate(h, 7, seed=0)
    assert err.value.maximum == 6


def test_generate_contract():
    with pytest.raises(ContractViolation):
        generate(RESIDUAL, 0, seed=0)
    with pytest.raises(ContractViolation):
        generate(Heuristic("empty", BlockFamily.Plain, (3, 1), (8, 8)), 1, 0)


def test_growth_policies():
    deep = get_heuristic("residual-deep")
    assert deep.growth_policy is GrowthPolicy.DepthFirst
    for c in generate(deep, 60, seed=2):
        assert depth_index(deep, c.arch.n_layers) >= width_index(
            deep, c.arch.widths_per_layer
        ) - 1e-12
    wide = get_heuristic("residual-wide")
    for c in generate(wide, 60, seed=2):
        assert depth_index(wide, c.arch.n_layers) <= width_index(
            wide, c.arch.widths_per_layer
        ) + 1e-12
    with pytest.raises(ValueError):
        get_heuristic("transformer")


def test_encode():
    c = Candidate(
        ArchitectureSpec(BlockFamily.Plain, (1, 1, 1, 1), (16, 16, 16, 16), 0.1),
        PipelineConfig(
            Preprocessing.Standardize, Optimizer.AdaptiveMoments, 20, 0.01, 32
        )
    )
    expected = [4, 16, 16, 16, 16, 0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0, 0.1, 3]
    features = encode(c)
    assert features.shape == (FEATURE_LENGTH, )
    assert np.allclose(features, expected)
    assert np.array_equal(encode(c), features)

    other = encode(with_arch(c, dropout_rate=0.3))
    assert np.flatnonzero(other != features).tolist() == [17]


def test_space_json():
    space = generate(RESIDUAL, 8, seed=5)
    restored = SearchSpace.from_json(space.to_json(), "residual", 5)
    assert restored == space


def edit_distance(a, b):
    return sum(x != y for x, y in zip(encode(a), encode(b)))


def test_mutate_neighbors():
    c = Candidate(
        ArchitectureSpec(BlockFamily.Residual, (1, 1), (16, 16), 0.2),
        PipelineConfig(Preprocessing.None_, Optimizer.AdaptiveMoments, 20, 0.01, 32)
    )
    neighborhood = mutate_neighbors(c, RESIDUAL, 3, seed=0)
    assert len(neighborhood.candidates) == 3 and not neighborhood.short
    for n in neighborhood.candidates:
        assert edit_distance(c, n) == 1
        assert validate_candidate(n) == []
    assert mutate_neighbors(c, RESIDUAL, 3, seed=0) == neighborhood


def test_mutate_neighbors_short():
    c = Candidate(
        ArchitectureSpec(BlockFamily.Residual, (1, 1), (16, 16), 0.2),
        PipelineConfig(Preprocessing.None_, Optimizer.AdaptiveMoments, 20, 0.01, 32)
    )
    # 2 block steps, 4 width steps, 2 dropout steps, 1 preprocessing step, 1 optimizer toggle
    neighborhood = mutate_neighbors(c, RESIDUAL, 100, seed=1)
    assert neighborhood.short
    assert len(neighborhood.candidates) == 10
    assert len(set(neighborhood.candidates)) == 10
    for n in neighborhood.candidates:
        assert all(w & (w - 1) == 0 for w in n.arch.widths_per_layer)
        assert RESIDUAL.admits(n.arch)


def test_generated_and_neighbors_stay_valid():
    n_drawn = 0
    for name, h in HEURISTIC_PRESETS.items():
        for seed in range(10):
            space = generate(h, 200, seed=seed)
            for i, c in enumerate(space):
                assert validate_candidate(c) == [], (name, seed)
                assert h.admits(c.arch)
                n_drawn += 1
                if i % 10:
                    continue
                for n in mutate_neighbors(c, h, 5, seed=i).candidates:
                    assert validate_candidate(n) == [], (name, seed)
                    assert h.admits(n.arch)
                    assert edit_distance(c, n) == 1
    assert n_drawn == 10000


def test_encode_is_injective():
    h = get_heuristic("residual")
    space = generate(h, 500, seed=2)
    candidates = set(space.candidates)
    for c in space.candidates[:50]:
        candidates.update(mutate_neighbors(c, h, 10, seed=0).candidates)
    encodings = {tuple(encode(c)) for c in candidates}
    assert len(encodings) == len(candidates)
