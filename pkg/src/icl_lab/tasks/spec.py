"""Task specifications for the synthetic in-context-learning suite."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Optional


class TaskFamily(str, Enum):
    LINEAR_REGRESSION = "LinearRegression"
    SPARSE_LINEAR_REGRESSION = "SparseLinearRegression"
    TWO_NN_REGRESSION = "TwoNNRegression"
    DECISION_TREE = "DecisionTree"
    ORTHOGONAL_OUTLIER = "OrthogonalOutlier"
    MANY_OUTLIER = "ManyOutlier"
    SPARSE_PARITY = "SparseParity"
    CHAIN_OF_THOUGHT_IO = "ChainOfThoughtIO"
    VECTOR_MQAR = "VectorMQAR"


REGRESSION_FAMILIES = frozenset(
    {
        TaskFamily.LINEAR_REGRESSION,
        TaskFamily.SPARSE_LINEAR_REGRESSION,
        TaskFamily.TWO_NN_REGRESSION,
        TaskFamily.DECISION_TREE,
        TaskFamily.ORTHOGONAL_OUTLIER,
        TaskFamily.MANY_OUTLIER,
    }
)

OUTLIER_FAMILIES = frozenset(
    {TaskFamily.ORTHOGONAL_OUTLIER, TaskFamily.MANY_OUTLIER}
)


@dataclass(frozen=True)
class TaskSpec:
    """One task family plus its dimensions and family-specific parameters.

    ``d`` is the input dimension and ``n_points`` the number of in-context
    examples per prompt.  For VectorMQAR, ``n_points`` counts key-value pairs
    plus queries (``n_pairs + n_queries``).
    """

    family: TaskFamily
    d: int
    n_points: int
    k: Optional[int] = None            # sparsity (SparseLinearRegression, SparseParity)
    depth: Optional[int] = None        # DecisionTree depth
    outlier_p: Optional[float] = None  # replacement probability (outlier tasks)
    hidden_width: Optional[int] = None  # h (TwoNNRegression, ChainOfThoughtIO)
    n_pairs: Optional[int] = None      # VectorMQAR key-value pairs
    n_queries: Optional[int] = None    # VectorMQAR queries

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", TaskFamily(self.family))
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")
        f = self.family
        if f in (TaskFamily.SPARSE_LINEAR_REGRESSION, TaskFamily.SPARSE_PARITY):
            if self.k is None or self.k < 1:
                raise ValueError(f"{f.value} requires k >= 1")
            if self.k > self.d:
                raise ValueError(f"k={self.k} exceeds d={self.d}")
        if f is TaskFamily.DECISION_TREE:
            if self.depth is None or self.depth < 1:
                raise ValueError("DecisionTree requires depth >= 1")
        if f in OUTLIER_FAMILIES:
            if self.outlier_p is None or not (0.0 <= self.outlier_p <= 1.0):
                raise ValueError(f"{f.value} requires outlier_p in [0, 1]")
        if f in (TaskFamily.TWO_NN_REGRESSION, TaskFamily.CHAIN_OF_THOUGHT_IO):
            if self.hidden_width is None or self.hidden_width < 1:
                raise ValueError(f"{f.value} requires hidden_width >= 1")
        if f is TaskFamily.VECTOR_MQAR:
            if self.n_pairs is None or self.n_queries is None:
                raise ValueError("VectorMQAR requires n_pairs and n_queries")
            if self.n_pairs < 1 or self.n_queries < 1:
                raise ValueError("VectorMQAR requires n_pairs, n_queries >= 1")
            if self.n_queries > self.n_pairs:
                raise ValueError("n_queries may not exceed n_pairs")
            if self.n_pairs + self.n_queries != self.n_points:
                raise ValueError(
                    f"n_points={self.n_points} must equal "
                    f"n_pairs + n_queries = {self.n_pairs + self.n_queries}"
                )

    # -- layout widths ----------------------------------------------------

    @property
    def token_width(self) -> int:
        """Width of every token row; scalar labels are zero-padded to this."""
        if self.family is TaskFamily.CHAIN_OF_THOUGHT_IO:
            return max(self.d, self.hidden_width)
        return self.d

    @property
    def label_width(self) -> int:
        """Width of the stored label payload before padding."""
        if self.family in OUTLIER_FAMILIES or self.family is TaskFamily.VECTOR_MQAR:
            return self.d
        return 1

    @property
    def output_width(self) -> int:
        """Model read-out width for this task."""
        if self.family is TaskFamily.SPARSE_PARITY:
            return 2  # two-class logits
        if self.family is TaskFamily.MANY_OUTLIER:
            return self.d
        if self.family is TaskFamily.VECTOR_MQAR:
            return self.d
        if self.family is TaskFamily.CHAIN_OF_THOUGHT_IO:
            return self.token_width
        return 1

    @property
    def sequence_length(self) -> int:
        """Token count of one prompt."""
        if self.family is TaskFamily.CHAIN_OF_THOUGHT_IO:
            return 3 * self.n_points
        if self.family is TaskFamily.VECTOR_MQAR:
            return 2 * self.n_pairs + self.n_queries
        return 2 * self.n_points

    @property
    def n_example_slots(self) -> int:
        """Number of scoreable in-context examples (queries for MQAR)."""
        if self.family is TaskFamily.VECTOR_MQAR:
            return self.n_queries
        return self.n_points

    def resized(self, d: int, n_points: int) -> "TaskSpec":
        """Copy with curriculum-reduced dimension and point count."""
        if self.family is TaskFamily.VECTOR_MQAR:
            raise ValueError("VectorMQAR does not support curriculum resizing")
        return dataclasses.replace(self, d=d, n_points=n_points)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        out = {"family": self.family.value, "d": self.d, "n_points": self.n_points}
        for name in ("k", "depth", "outlier_p", "hidden_width", "n_pairs", "n_queries"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown task fields: {sorted(unknown)}")
        return cls(**data)


# Default task geometry per family: (d, N, extra params).
_TABLE_DEFAULTS = {
    TaskFamily.LINEAR_REGRESSION: dict(d=20, n_points=41),
    TaskFamily.SPARSE_LINEAR_REGRESSION: dict(d=20, n_points=101, k=3),
    TaskFamily.TWO_NN_REGRESSION: dict(d=20, n_points=101, hidden_width=100),
    TaskFamily.DECISION_TREE: dict(d=20, n_points=101, depth=4),
    TaskFamily.ORTHOGONAL_OUTLIER: dict(d=20, n_points=101, outlier_p=0.5),
    TaskFamily.MANY_OUTLIER: dict(d=20, n_points=512, outlier_p=0.9),
    TaskFamily.SPARSE_PARITY: dict(d=10, n_points=140, k=2),
    TaskFamily.CHAIN_OF_THOUGHT_IO: dict(d=10, n_points=101, hidden_width=8),
    TaskFamily.VECTOR_MQAR: dict(d=20, n_points=48, n_pairs=32, n_queries=16),
}


def default_task(family: TaskFamily | str) -> TaskSpec:
    """Reference configuration of a task family."""
    family = TaskFamily(family)
    return TaskSpec(family=family, **_TABLE_DEFAULTS[family])
