"""Shared domain types: class labels, measurements, landmarks, histograms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Sequence, Tuple

import numpy as np

from .geometry import Pose

SPD_EIG_TOL = 1e-12


class ContractViolation(ValueError):
    """An input violated a documented precondition."""


@dataclass(frozen=True)
class ClassLabel:
    """Semantic class. Identity is the dense integer id; the name is for logs."""

    id: int
    name: str = ""

    def __post_init__(self):
        if self.id < 0:
            raise ContractViolation("class id must be non-negative")

    def __eq__(self, other):
        return isinstance(other, ClassLabel) and self.id == other.id

    def __hash__(self):
        return hash(self.id)


class LabelRegistry:
    """Assigns dense integer ids to class names at ingest."""

    def __init__(self):
        self._by_name: Dict[str, ClassLabel] = {}
        self._by_id: Dict[int, ClassLabel] = {}

    def register(self, name: str) -> ClassLabel:
        if name in self._by_name:
            return self._by_name[name]
        label = ClassLabel(len(self._by_name), name)
        self._by_name[name] = label
        self._by_id[label.id] = label
        return label

    def by_id(self, class_id: int) -> ClassLabel:
        if class_id not in self._by_id:
            label = ClassLabel(class_id, f"class_{class_id}")
            self._by_id[class_id] = label
            self._by_name[label.name] = label
        return self._by_id[class_id]

    def labels(self) -> Tuple[ClassLabel, ...]:
        return tuple(self._by_id[i] for i in sorted(self._by_id))

    def __len__(self):
        return len(self._by_id)


@dataclass(frozen=True, eq=False)
class SemanticMeasurement:
    """One detected object: 3-D position, class, and time of observation."""

    scene_id: int
    time: float
    position: np.ndarray
    label: ClassLabel

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if not np.all(np.isfinite(self.position)):
            raise ContractViolation("measurement position must be finite")


def check_spd(cov: np.ndarray, tol: float = SPD_EIG_TOL) -> None:
    cov = np.asarray(cov)
    if cov.shape != (3, 3):
        raise ContractViolation(f"expected 3x3 covariance, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-9):
        raise ContractViolation("covariance not symmetric")
    if np.min(np.linalg.eigvalsh(cov)) <= tol:
        raise ContractViolation("covariance not positive definite")


@dataclass(frozen=True, eq=False)
class Landmark:
    """Mapped static object with a filtered position estimate."""

    id: int
    label: ClassLabel
    mean: np.ndarray
    cov: np.ndarray
    assign_count: int = 1
    submap_id: int = 0
    last_seen: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        if self.assign_count < 1:
            raise ContractViolation("assign_count must be >= 1 once created")
        check_spd(self.cov)

    def with_estimate(self, mean, cov, *, assign_count=None, submap_id=None, last_seen=None):
        return Landmark(
            self.id,
            self.label,
            mean,
            cov,
            self.assign_count if assign_count is None else assign_count,
            self.submap_id if submap_id is None else submap_id,
            self.last_seen if last_seen is None else last_seen,
        )


@dataclass(frozen=True)
class ClassHistogram:
    """Counts of items per class."""

    counts: Mapping[ClassLabel, int]
    total: int

    def __post_init__(self):
        if self.total != sum(self.counts.values()):
            raise ContractViolation("histogram total does not match counts")
        if any(c < 0 for c in self.counts.values()):
            raise ContractViolation("negative histogram count")

    def normalized(self) -> Dict[ClassLabel, float]:
        if self.total == 0:
            return {}
        return {label: c / self.total for label, c in self.counts.items() if c > 0}

    def as_vector(self, dim: int) -> np.ndarray:
        """Normalized histogram as a fixed-dimension vector indexed by class id."""
        v = np.zeros(dim)
        for label, c in self.counts.items():
            v[label.id] = c
        s = v.sum()
        return v / s if s > 0 else v


def histogram_of(items: Iterable) -> ClassHistogram:
    """Class histogram of measurements or landmarks (anything with .label)."""
    counts: Dict[ClassLabel, int] = {}
    total = 0
    for item in items:
        label = item.label if hasattr(item, "label") else item
        counts[label] = counts.get(label, 0) + 1
        total += 1
    return ClassHistogram(counts, total)


__all__ = [
    "ClassLabel",
    "LabelRegistry",
    "SemanticMeasurement",
    "Landmark",
    "ClassHistogram",
    "Pose",
    "histogram_of",
    "check_spd",
    "ContractViolation",
]
