"""Incremental kd-tree over fixed-dimension vectors with exact radius queries.

Points are inserted one at a time (no rebalancing); queries return exactly
the brute-force result set for the Euclidean metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np


@dataclass(eq=False)
class _Node:
    point: np.ndarray
    payload: int
    axis: int
    left: Optional["_Node"] = None
    right: Optional["_Node"] = None


class IncrementalKdTree:
    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = dim
        self.root: Optional[_Node] = None
        self.size = 0

    def insert(self, point: np.ndarray, payload: int) -> None:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.dim,):
            raise ValueError(f"expected shape ({self.dim},), got {point.shape}")
        self.size += 1
        if self.root is None:
            self.root = _Node(point.copy(), payload, 0)
            return
        node = self.root
        while True:
            axis = node.axis
            side = point[axis] < node.point[axis]
            child = node.left if side else node.right
            if child is None:
                new = _Node(point.copy(), payload, (axis + 1) % self.dim)
                if side:
                    node.left = new
                else:
                    node.right = new
                return
            node = child

    def query_radius(self, point: np.ndarray, radius: float) -> List[int]:
        """Payloads of all points within Euclidean distance <= radius."""
        point = np.asarray(point, dtype=float)
        out: List[Tuple[float, int]] = []
        r2 = radius * radius

        def visit(node: Optional[_Node]):
            if node is None:
                return
            d = node.point - point
            if float(d @ d) <= r2:
                out.append(node.payload)
            delta = point[node.axis] - node.point[node.axis]
            near, far = (node.left, node.right) if delta < 0 else (node.right, node.left)
            visit(near)
            if delta * delta <= r2:
                visit(far)

        visit(self.root)
        return out
