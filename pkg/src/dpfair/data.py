"""Example and Dataset containers shared by every trainer and metric."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = ["Example", "Dataset"]

CLASSIFICATION = "classification"
REGRESSION = "regression"


@dataclass(frozen=True)
class Example:
    """One data point: feature vector, group id, label."""

    features: np.ndarray
    group: int
    label: float

    def __post_init__(self):
        object.__setattr__(
            self, "features", np.asarray(self.features, dtype=np.float64)
        )
        if self.features.ndim != 1:
            raise ValueError("features must be a 1-d vector")


class Dataset:
    """A non-empty list of examples with a fixed feature dimension.

    Groups are dense ids in 0..num_groups-1. Feature/label/group arrays are
    materialized once and cached; trainers index into them by position.
    """

    def __init__(
        self,
        examples: Sequence[Example],
        num_groups: int,
        task_kind: str,
        group_names: Optional[tuple[str, ...]] = None,
    ):
        if len(examples) == 0:
            raise ValueError("dataset must be non-empty")
        if task_kind not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task_kind {task_kind!r}")
        dim = examples[0].features.shape[0]
        for i, ex in enumerate(examples):
            if ex.features.shape[0] != dim:
                raise ValueError(
                    f"example {i} has dimension {ex.features.shape[0]}, expected {dim}"
                )
            if not (0 <= ex.group < num_groups):
                raise ValueError(f"example {i} has group {ex.group} outside 0..{num_groups - 1}")
            if task_kind == CLASSIFICATION and ex.label not in (0, 1):
                raise ValueError(f"example {i} has non-binary label {ex.label}")
        self.examples = list(examples)
        self.num_groups = num_groups
        self.task_kind = task_kind
        self.group_names = group_names
        self._X: Optional[np.ndarray] = None
        self._y: Optional[np.ndarray] = None
        self._g: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def dim(self) -> int:
        return self.examples[0].features.shape[0]

    @property
    def features_matrix(self) -> np.ndarray:
        if self._X is None:
            self._X = np.stack([ex.features for ex in self.examples])
        return self._X

    @property
    def labels_array(self) -> np.ndarray:
        if self._y is None:
            self._y = np.array([ex.label for ex in self.examples], dtype=np.float64)
        return self._y

    @property
    def groups_array(self) -> np.ndarray:
        if self._g is None:
            self._g = np.array([ex.group for ex in self.examples], dtype=np.int64)
        return self._g

    def group_indices(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.groups_array == group)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            [self.examples[i] for i in idx],
            self.num_groups,
            self.task_kind,
            self.group_names,
        )
