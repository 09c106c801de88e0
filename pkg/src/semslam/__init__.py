"""Multiple-hypothesis semantic SLAM toolkit.

Dirichlet-process data association over a hypothesis tree, per-landmark UKF
estimation, semantic loop-closure detection, and robust SE(3) pose-graph
optimization, plus a deterministic synthetic-world simulator and CLI.
"""

from .core import (
    ClassHistogram,
    ClassLabel,
    ContractViolation,
    LabelRegistry,
    Landmark,
    SemanticMeasurement,
    histogram_of,
)
from .geometry import Pose
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "ClassHistogram",
    "ClassLabel",
    "ContractViolation",
    "LabelRegistry",
    "Landmark",
    "Pose",
    "SemanticMeasurement",
    "histogram_of",
    "BACKEND",
    "__version__",
]
