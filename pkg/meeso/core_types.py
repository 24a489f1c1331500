"""
Domain types shared by the search engine: candidates (architecture plus
pipeline configuration), objective vectors, evaluation records and the
generation heuristics.
"""
import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Tuple

MAX_LAYERS = 8
MIN_WIDTH = 4
MAX_WIDTH = 512
MAX_DROPOUT = 0.9


class ContractViolation(ValueError):
    """A precondition of an operation does not hold"""


class ExhaustedSpace(ValueError):

    def __init__(self, requested, maximum):
        super().__init__(
            f"Requested {requested} candidates but the constrained space only\
 admits {maximum}"
        )
        self.requested = requested
        self.maximum = maximum


class InsufficientHistory(ValueError):
    pass


class EmptySpace(ValueError):
    pass


class TrainingDiverged(RuntimeError):

    def __init__(self, epoch, loss=float("nan")):
        super().__init__(f"Non-finite loss {loss} in epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class CheckpointError(ValueError):
    pass


class HistoryParseError(ValueError):

    def __init__(self, line_number, reason):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number


class DatasetError(ValueError):
    pass


class BlockFamily(Enum):
    Plain = 0
    Residual = 1
    Bottleneck = 2


class Preprocessing(Enum):
    # the ordinals enter the feature encoding (preprocessing * 2 + optimizer)
    None_ = 0
    Standardize = 1
    NoiseAugment = 2

    @property
    def label(self):
        return "None" if self is Preprocessing.None_ else self.name

    @classmethod
    def from_label(cls, label):
        return cls.None_ if label == "None" else cls[label]


class Optimizer(Enum):
    PlainGradientDescent = 0
    AdaptiveMoments = 1


class GrowthPolicy(Enum):
    BalancedScale = 0
    DepthFirst = 1
    WidthFirst = 2


class ObjectiveId(Enum):
    Error = "error"
    Uncertainty = "uncertainty"
    WallSeconds = "wall_seconds"


@dataclass(frozen=True)
class ArchitectureSpec:
    block_family: BlockFamily
    blocks_per_layer: Tuple[int, ...]
    widths_per_layer: Tuple[int, ...]
    dropout_rate: float

    @property
    def n_layers(self):
        return len(self.blocks_per_layer)

    def to_dict(self):
        return {
            "block_family": self.block_family.name,
            "blocks_per_layer": list(self.blocks_per_layer),
            "widths_per_layer": list(self.widths_per_layer),
            "dropout_rate": self.dropout_rate
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            block_family=BlockFamily[data["block_family"]],
            blocks_per_layer=tuple(int(b) for b in data["blocks_per_layer"]),
            widths_per_layer=tuple(int(w) for w in data["widths_per_layer"]),
            dropout_rate=float(data["dropout_rate"])
        )


@dataclass(frozen=True)
class PipelineConfig:
    preprocessing: Preprocessing
    optimizer: Optimizer
    epochs: int
    learning_rate: float
    batch_size: int

    @property
    def ordinal(self):
        return self.preprocessing.value * len(Optimizer) + self.optimizer.value

    def to_dict(self):
        return {
            "preprocessing": self.preprocessing.label,
            "optimizer": self.optimizer.name,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            preprocessing=Preprocessing.from_label(data["preprocessing"]),
            optimizer=Optimizer[data["optimizer"]],
            epochs=int(data["epochs"]),
            learning_rate=float(data["learning_rate"]),
            batch_size=int(data["batch_size"])
        )


@dataclass(frozen=True)
class Candidate:
    """One element of the pipeline product: architecture x training config"""
    arch: ArchitectureSpec
    config: PipelineConfig

    def to_dict(self):
        return {"arch": self.arch.to_dict(), "config": self.config.to_dict()}

    @classmethod
    def from_dict(cls, data):
        return cls(
            arch=ArchitectureSpec.from_dict(data["arch"]),
            config=PipelineConfig.from_dict(data["config"])
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ObjectiveVector:
    error: float
    uncertainty: float

    def as_tuple(self):
        return (self.error, self.uncertainty)

    def to_dict(self):
        return {"error": self.error, "uncertainty": self.uncertainty}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["error"]), float(data["uncertainty"]))


@dataclass(frozen=True)
class EvaluationRecord:
    candidate: Candidate
    objectives: ObjectiveVector
    wall_seconds: float
    seed: int
    iteration: int
    heuristic_id: str

    def objective_values(self, objective_ids):
        """
        Minimization-form objective vector restricted to `objective_ids`
        """
        values = []
        for objective in objective_ids:
            if objective is ObjectiveId.Error:
                values.append(self.objectives.error)
            elif objective is ObjectiveId.Uncertainty:
                values.append(self.objectives.uncertainty)
            else:
                values.append(self.wall_seconds)
        return tuple(values)

    def to_dict(self):
        return {
            "candidate": self.candidate.to_dict(),
            "objectives": self.objectives.to_dict(),
            "wall_seconds": self.wall_seconds,
            "seed": self.seed,
            "iteration": self.iteration,
            "heuristic_id": self.heuristic_id
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            candidate=Candidate.from_dict(data["candidate"]),
            objectives=ObjectiveVector.from_dict(data["objectives"]),
            wall_seconds=float(data["wall_seconds"]),
            seed=int(data["seed"]),
            iteration=int(data["iteration"]),
            heuristic_id=str(data["heuristic_id"])
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Heuristic:
    """
    Recipe for growing an initial search space out of one unit block family.
    depth_range bounds the number of layers, width_range the (power of two)
    layer widths. Training defaults are copied into every generated config.
    """
    id: str
    block_family: BlockFamily
    depth_range: Tuple[int, int]
    width_range: Tuple[int, int]
    growth_policy: GrowthPolicy = GrowthPolicy.BalancedScale
    block_choices: Tuple[int, ...] = (1, 2)
    dropout_choices: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    epochs: int = 20
    learning_rate: float = 0.01
    batch_size: int = 32

    def violations(self):
        problems = []
        for name, (low, high) in (
            ("depth_range", self.depth_range),
            ("width_range", self.width_range)
        ):
            if low > high:
                problems.append(f"{name} empty ({low} > {high})")
        if self.depth_range[0] < 1 or self.depth_range[1] > MAX_LAYERS:
            problems.append(f"depth_range outside [1, {MAX_LAYERS}]")
        if self.width_range[0] < MIN_WIDTH or self.width_range[1] > MAX_WIDTH:
            problems.append(f"width_range outside [{MIN_WIDTH}, {MAX_WIDTH}]")
        if not self.block_choices or min(self.block_choices) < 1:
            problems.append("block_choices must be positive integers")
        if not self.dropout_choices or not all(
            0.0 <= d <= MAX_DROPOUT for d in self.dropout_choices
        ):
            problems.append("dropout_choices outside [0, 0.9]")
        return problems

    def admits(self, arch):
        """
        Whether an architecture lies within this heuristic's ranges
        """
        return (
            arch.block_family is self.block_family
            and self.depth_range[0] <= arch.n_layers <= self.depth_range[1]
            and all(
                self.width_range[0] <= w <= self.width_range[1]
                for w in arch.widths_per_layer
            ) and all(
                min(self.block_choices) <= b <= max(self.block_choices)
                for b in arch.blocks_per_layer
            )
        )

    def to_dict(self):
        return {
            "id": self.id,
            "block_family": self.block_family.name,
            "depth_range": list(self.depth_range),
            "width_range": list(self.width_range),
            "growth_policy": self.growth_policy.name,
            "block_choices": list(self.block_choices),
            "dropout_choices": list(self.dropout_choices),
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            id=str(data["id"]),
            block_family=BlockFamily[data["block_family"]],
            depth_range=tuple(data["depth_range"]),
            width_range=tuple(data["width_range"]),
            growth_policy=GrowthPolicy[
                data.get("growth_policy", cls.growth_policy.name)],
            block_choices=tuple(
                data.get("block_choices", cls.block_choices)
            ),
            dropout_choices=tuple(
                float(d)
                for d in data.get("dropout_choices", cls.dropout_choices)
            ),
            epochs=int(data.get("epochs", cls.epochs)),
            learning_rate=float(
                data.get("learning_rate", cls.learning_rate)
            ),
            batch_size=int(data.get("batch_size", cls.batch_size))
        )


def is_power_of_two(value):
    return value > 0 and (value & (value - 1)) == 0


def validate_candidate(c: Candidate) -> List[str]:
    """
    Check every type invariant of a candidate.
    Returns:
        list of violated invariants; the candidate is valid iff it is empty
    """
    violations = []
    arch, config = c.arch, c.config
    if not isinstance(arch.block_family, BlockFamily):
        violations.append("unknown block family")
    n_layers = len(arch.blocks_per_layer)
    if n_layers != len(arch.widths_per_layer):
        violations.append(
            f"length mismatch: {n_layers} block counts vs\
 {len(arch.widths_per_layer)} widths"
        )
    if n_layers < 1:
        violations.append("at least one layer required")
    if n_layers > MAX_LAYERS:
        violations.append(f"more than {MAX_LAYERS} layers")
    if any(b < 1 for b in arch.blocks_per_layer):
        violations.append("block counts must be positive")
    for width in arch.widths_per_layer:
        if not MIN_WIDTH <= width <= MAX_WIDTH:
            violations.append(
                f"width {width} outside [{MIN_WIDTH}, {MAX_WIDTH}]"
            )
        elif not is_power_of_two(width):
            violations.append(f"width {width} is not a power of two")
    if not (
        math.isfinite(arch.dropout_rate)
        and 0.0 <= arch.dropout_rate <= MAX_DROPOUT
    ):
        violations.append(f"dropout out of range: {arch.dropout_rate}")
    if not isinstance(config.preprocessing, Preprocessing):
        violations.append("unknown preprocessing")
    if not isinstance(config.optimizer, Optimizer):
        violations.append("unknown optimizer")
    if config.epochs < 1:
        violations.append("epochs must be >= 1")
    if config.batch_size < 1:
        violations.append("batch_size must be >= 1")
    if not (
        math.isfinite(config.learning_rate) and config.learning_rate > 0
    ):
        violations.append("learning_rate must be > 0")
    return violations


def validate_objectives(objectives: ObjectiveVector) -> List[str]:
    violations = []
    if not (
        math.isfinite(objectives.error) and 0.0 <= objectives.error <= 1.0
    ):
        violations.append(f"error {objectives.error} outside [0, 1]")
    if not (
        math.isfinite(objectives.uncertainty) and objectives.uncertainty >= 0
    ):
        violations.append(f"uncertainty {objectives.uncertainty} invalid")
    return violations


def validate_record(r: EvaluationRecord) -> List[str]:
    violations = validate_candidate(r.candidate)
    violations.extend(validate_objectives(r.objectives))
    if r.iteration < 0:
        violations.append("iteration must be >= 0")
    if not r.wall_seconds >= 0:
        violations.append("wall_seconds must be >= 0")
    return violations


def with_config(c: Candidate, **changes) -> Candidate:
    return replace(c, config=replace(c.config, **changes))


def with_arch(c: Candidate, **changes) -> Candidate:
    return replace(c, arch=replace(c.arch, **changes))
