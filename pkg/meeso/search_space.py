"""
Initial search spaces grown from unit block heuristics, the fixed-length
feature encoding used by the surrogate, and Pareto-neighbourhood mutation.
"""
import itertools
import json
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from meeso.core_types import (
    MAX_DROPOUT, MAX_LAYERS, ArchitectureSpec, BlockFamily, Candidate,
    ContractViolation, ExhaustedSpace, GrowthPolicy, Heuristic, Optimizer,
    PipelineConfig, Preprocessing, validate_candidate, with_arch, with_config
)

logger = logging.getLogger(__name__)

# normalized depth/width index gap allowed under balanced growth
BALANCE_GAP = 0.34
FEATURE_LENGTH = 2 * MAX_LAYERS + 3
# above this many architecture shapes, sample instead of enumerating
ENUMERATION_LIMIT = 20000

CONFIG_PRODUCT = [(p, o) for p in Preprocessing for o in Optimizer]

HEURISTIC_PRESETS = {
    "plain":
        Heuristic(
            "plain", BlockFamily.Plain, depth_range=(1, 4), width_range=(8, 64)
        ),
    "residual":
        Heuristic(
            "residual",
            BlockFamily.Residual,
            depth_range=(2, 6),
            width_range=(8, 64)
        ),
    "bottleneck":
        Heuristic(
            "bottleneck",
            BlockFamily.Bottleneck,
            depth_range=(2, 6),
            width_range=(16, 128)
        ),
    "residual-deep":
        Heuristic(
            "residual-deep",
            BlockFamily.Residual,
            depth_range=(2, 8),
            width_range=(8, 64),
            growth_policy=GrowthPolicy.DepthFirst
        ),
    "residual-wide":
        Heuristic(
            "residual-wide",
            BlockFamily.Residual,
            depth_range=(1, 4),
            width_range=(16, 256),
            growth_policy=GrowthPolicy.WidthFirst
        ),
}


@dataclass(frozen=True)
class SearchSpace:
    heuristic_id: str
    candidates: Tuple[Candidate, ...]
    generated_seed: int

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def to_json(self):
        return json.dumps([c.to_dict() for c in self.candidates])

    @classmethod
    def from_json(cls, text, heuristic_id="imported", generated_seed=0):
        candidates = tuple(Candidate.from_dict(c) for c in json.loads(text))
        return cls(heuristic_id, candidates, generated_seed)


@dataclass(frozen=True)
class Neighborhood:
    candidates: List[Candidate]
    # fewer than the requested number of distinct neighbours existed
    short: bool


def get_heuristic(name):
    try:
        return HEURISTIC_PRESETS[name]
    except KeyError:
        raise ValueError(
            f"Unknown heuristic {name}, choose one of\
 {sorted(HEURISTIC_PRESETS)}"
        )


def depth_levels(h):
    return list(range(h.depth_range[0], h.depth_range[1] + 1))


def width_levels(h):
    low, high = h.width_range
    levels = []
    width = 1
    while width <= high:
        if width >= low:
            levels.append(width)
        width *= 2
    return levels


def _normalized(position, n_levels):
    return 0.0 if n_levels == 1 else position / (n_levels - 1)


def depth_index(h, n_layers):
    levels = depth_levels(h)
    return _normalized(levels.index(n_layers), len(levels))


def width_index(h, widths):
    """
    Position of the mean log2 width within the heuristic's width levels
    """
    levels = np.log2(width_levels(h))
    if len(levels) == 1:
        return 0.0
    mean_log = np.mean(np.log2(widths))
    return float((mean_log - levels[0]) / (levels[-1] - levels[0]))


def _admissible_gap(policy, d_index, w_index):
    gap = d_index - w_index
    if policy is GrowthPolicy.BalancedScale:
        return abs(gap) <= BALANCE_GAP
    if policy is GrowthPolicy.DepthFirst:
        return 0.0 <= gap
    return gap <= 0.0


def admissible_shapes(h):
    """
    (n_layers, width) pairs the heuristic's growth policy allows
    """
    d_levels, w_levels = depth_levels(h), width_levels(h)
    shapes = []
    for d_pos, n_layers in enumerate(d_levels):
        for w_pos, width in enumerate(w_levels):
            d_index = _normalized(d_pos, len(d_levels))
            w_index = _normalized(w_pos, len(w_levels))
            if _admissible_gap(h.growth_policy, d_index, w_index):
                shapes.append((n_layers, width))
    return shapes


def arch_capacity(h):
    n_blocks, n_dropout = len(h.block_choices), len(h.dropout_choices)
    return sum(
        n_blocks**n_layers * n_dropout for n_layers, _ in admissible_shapes(h)
    )


def space_capacity(h):
    return arch_capacity(h) * len(CONFIG_PRODUCT)


def _make_arch(h, n_layers, width, blocks, dropout):
    return ArchitectureSpec(
        block_family=h.block_family,
        blocks_per_layer=tuple(int(b) for b in blocks),
        widths_per_layer=(int(width), ) * n_layers,
        dropout_rate=float(dropout)
    )


def _make_config(h, slot):
    preprocessing, optimizer = CONFIG_PRODUCT[slot]
    return PipelineConfig(
        preprocessing=preprocessing,
        optimizer=optimizer,
        epochs=h.epochs,
        learning_rate=h.learning_rate,
        batch_size=h.batch_size
    )


def _enumerate_archs(h):
    archs, weights = [], []
    shapes = admissible_shapes(h)
    for n_layers, width in shapes:
        group = [
            _make_arch(h, n_layers, width, blocks, dropout)
            for blocks in itertools.product(h.block_choices, repeat=n_layers)
            for dropout in h.dropout_choices
        ]
        archs.extend(group)
        # every (depth, width) shape is equally likely
        weights.extend([1.0 / (len(group) * len(shapes))] * len(group))
    return archs, np.asarray(weights)


def _sample_archs(h, n, rng, archs=None, weights=None):
    if archs is not None:
        chosen = rng.choice(len(archs), size=n, replace=False, p=weights)
        return [archs[i] for i in chosen]
    shapes = admissible_shapes(h)
    drawn, seen = [], set()
    while len(drawn) < n:
        n_layers, width = shapes[rng.integers(len(shapes))]
        blocks = rng.choice(h.block_choices, size=n_layers)
        dropout = h.dropout_choices[rng.integers(len(h.dropout_choices))]
        arch = _make_arch(h, n_layers, width, blocks, dropout)
        if arch not in seen:
            seen.add(arch)
            drawn.append(arch)
    return drawn


def generate(h: Heuristic, count: int, seed: int) -> SearchSpace:
    """
    Grow `count` distinct candidates out of the heuristic. Architectures are
    drawn from the seed; configurations walk the preprocessing x optimizer
    product round-robin.
    """
    problems = h.violations()
    if problems:
        raise ContractViolation(f"Invalid heuristic {h.id}: {problems}")
    if count < 1:
        raise ContractViolation("count must be >= 1")
    capacity = space_capacity(h)
    if count > capacity:
        raise ExhaustedSpace(count, capacity)

    rng = np.random.default_rng(seed)
    n_slots = len(CONFIG_PRODUCT)
    archs, weights = (None, None)
    if arch_capacity(h) <= ENUMERATION_LIMIT:
        archs, weights = _enumerate_archs(h)
    per_slot = []
    for slot in range(n_slots):
        n_in_slot = len(range(slot, count, n_slots))
        per_slot.append(_sample_archs(h, n_in_slot, rng, archs, weights))

    candidates = tuple(
        Candidate(per_slot[i % n_slots][i // n_slots],
                  _make_config(h, i % n_slots)) for i in range(count)
    )
    logger.debug(
        f"Generated {count} candidates from heuristic {h.id} (seed {seed},\
 capacity {capacity})"
    )
    return SearchSpace(h.id, candidates, seed)


def encode(c: Candidate) -> np.ndarray:
    """
    Fixed-length feature vector:
    [0] layers, [1..8] widths, [9..16] blocks (zero padded),
    [17] dropout rate, [18] config ordinal
    """
    features = np.zeros(FEATURE_LENGTH)
    n_layers = c.arch.n_layers
    features[0] = n_layers
    features[1:1 + n_layers] = c.arch.widths_per_layer
    features[1 + MAX_LAYERS:1 + MAX_LAYERS + n_layers] = c.arch.blocks_per_layer
    features[2 * MAX_LAYERS + 1] = c.arch.dropout_rate
    features[2 * MAX_LAYERS + 2] = c.config.ordinal
    return features


def encode_all(candidates):
    if not candidates:
        return np.zeros((0, FEATURE_LENGTH))
    return np.vstack([encode(c) for c in candidates])


def _neighborhood(c, h):
    """
    All single-edit neighbours of c, in a fixed order
    """
    arch = c.arch
    low_blocks, high_blocks = min(h.block_choices), max(h.block_choices)
    neighbors = []
    for layer in range(arch.n_layers):
        for step in (-1, 1):
            blocks = list(arch.blocks_per_layer)
            blocks[layer] += step
            if low_blocks <= blocks[layer] <= high_blocks:
                neighbors.append(with_arch(c, blocks_per_layer=tuple(blocks)))
    for layer in range(arch.n_layers):
        for factor in (0.5, 2):
            widths = list(arch.widths_per_layer)
            widths[layer] = int(widths[layer] * factor)
            if h.width_range[0] <= widths[layer] <= h.width_range[1]:
                neighbors.append(with_arch(c, widths_per_layer=tuple(widths)))
    for step in (-0.1, 0.1):
        dropout = round(min(max(arch.dropout_rate + step, 0.0), MAX_DROPOUT), 10)
        if dropout != arch.dropout_rate:
            neighbors.append(with_arch(c, dropout_rate=dropout))
    preprocessing = c.config.preprocessing.value
    for step in (-1, 1):
        if 0 <= preprocessing + step < len(Preprocessing):
            neighbors.append(
                with_config(c, preprocessing=Preprocessing(preprocessing + step))
            )
    other_optimizer = Optimizer(1 - c.config.optimizer.value)
    neighbors.append(with_config(c, optimizer=other_optimizer))

    unique = list(dict.fromkeys(neighbors))
    return [
        n for n in unique
        if n != c and h.admits(n.arch) and not validate_candidate(n)
    ]


def mutate_neighbors(
    c: Candidate, h: Heuristic, k: int, seed: int
) -> Neighborhood:
    """
    Up to k distinct candidates at edit distance one from c: one block count
    +-1, one width halved or doubled, dropout +-0.1, or one config field
    stepped. Fewer than k are returned (and flagged) if the neighbourhood is
    smaller.
    """
    if k < 1:
        raise ContractViolation("k must be >= 1")
    neighbors = _neighborhood(c, h)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(neighbors))
    chosen = [neighbors[i] for i in order[:k]]
    short = len(chosen) < k
    if short:
        logger.debug(
            f"Neighbourhood holds only {len(chosen)} of {k} requested"
        )
    return Neighborhood(chosen, short)
