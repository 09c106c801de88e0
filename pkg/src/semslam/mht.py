"""Hypothesis tree: branch extension, weight recursion, ESS-gated systematic
resampling, and the KLD bound on the number of kept hypotheses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from . import kernels
from .assoc import (
    Assignment,
    AssociationState,
    AssocParams,
    Existing,
    FalsePositive,
    New,
    Previous,
    assignment_prior_log,
    measurement_set_log_likelihood,
)
from .core import ContractViolation, Landmark, SemanticMeasurement
from .estimation import UkfParams, ukf_update_safe


@dataclass(eq=False)
class HypothesisNode:
    """One branch of the tree; landmark state is copy-on-write from the parent."""

    id: int
    parent_id: Optional[int]
    step: int
    assignment: Optional[Assignment]
    log_weight: float
    existing: Dict[int, Landmark] = field(default_factory=dict)
    previous: Dict[int, Landmark] = field(default_factory=dict)
    n_fp: int = 0

    def assoc_state(self) -> AssociationState:
        return AssociationState(self.existing, self.previous, self.n_fp)


@dataclass(frozen=True)
class ResampleParams:
    ess_fraction: float = 0.5
    kld_epsilon: float = 0.05
    kld_delta: float = 0.01
    max_hypotheses: int = 20
    rng_seed: int = 0
    kld_cube_bracket: bool = False

    def __post_init__(self):
        if not (0.0 < self.ess_fraction <= 1.0):
            raise ContractViolation("ess_fraction must lie in (0, 1]")
        if self.kld_epsilon <= 0:
            raise ContractViolation("kld_epsilon must be positive")
        if not (0.0 < self.kld_delta < 1.0):
            raise ContractViolation("kld_delta must lie in (0, 1)")
        if self.max_hypotheses < 1:
            raise ContractViolation("max_hypotheses must be >= 1")


def effective_sample_size(weights: Sequence[float]) -> float:
    w = np.asarray(weights, dtype=float)
    if abs(w.sum() - 1.0) > 1e-6:
        raise ContractViolation("weights must be normalized")
    return float(1.0 / np.sum(w * w))


def kld_bound(k: int, epsilon: float, delta: float, cube_bracket: bool = False) -> int:
    """Sample bound from the chi-square normal approximation, as printed.

    cube_bracket applies the cubed bracket of the original KLD-sampling
    derivation instead.
    """
    if k < 2:
        raise ValueError("kld_bound requires k >= 2")
    z = float(ndtri(1.0 - delta))
    a = 2.0 / (9.0 * (k - 1))
    bracket = 1.0 - a + math.sqrt(a) * z
    if cube_bracket:
        bracket = bracket**3
    return int(math.floor((k - 1) / (2.0 * epsilon) * bracket))


class HypothesisTree:
    """Single-writer hypothesis tree over per-step assignments."""

    def __init__(
        self,
        params: ResampleParams,
        previous_landmarks: Optional[Dict[int, Landmark]] = None,
        n_fp: int = 0,
        landmark_id_start: int = 0,
    ):
        self.params = params
        self.rng = np.random.default_rng(params.rng_seed)
        self._next_node_id = 0
        self._next_landmark_id = landmark_id_start
        root = HypothesisNode(
            self._alloc_node_id(),
            None,
            -1,
            None,
            0.0,
            {},
            dict(previous_landmarks or {}),
            n_fp,
        )
        self.nodes: Dict[int, HypothesisNode] = {root.id: root}
        self.leaves: List[HypothesisNode] = [root]

    def _alloc_node_id(self) -> int:
        nid = self._next_node_id
        self._next_node_id += 1
        return nid

    def alloc_landmark_id(self) -> int:
        lid = self._next_landmark_id
        self._next_landmark_id += 1
        return lid

    # -- weights ----------------------------------------------------------

    def normalized_weights(self) -> np.ndarray:
        lw = np.array([leaf.log_weight for leaf in self.leaves])
        lw = lw - lw.max()
        w = np.exp(lw)
        return w / w.sum()

    def ess(self) -> float:
        return effective_sample_size(self.normalized_weights())

    def best_leaf(self) -> HypothesisNode:
        return max(self.leaves, key=lambda n: n.log_weight)

    # -- extension --------------------------------------------------------

    def extend(
        self,
        leaf: HypothesisNode,
        branches: Sequence[Assignment],
        measurements: Sequence[SemanticMeasurement],
        assoc_params: AssocParams,
        ukf_params: UkfParams,
        step: int,
    ) -> List[HypothesisNode]:
        """Append one child per branch; child weights follow the recursion
        parent + measurement log-likelihood + assignment log-prior."""
        if not branches:
            raise ContractViolation("branches must be non-empty")
        state = leaf.assoc_state()
        children = []
        for assignment in branches:
            ll = measurement_set_log_likelihood(assignment, measurements, state, assoc_params)
            lp = assignment_prior_log(assignment, assoc_params)
            child = HypothesisNode(
                self._alloc_node_id(),
                leaf.id,
                step,
                assignment,
                leaf.log_weight + ll + lp,
                dict(leaf.existing),
                leaf.previous,  # only mutated via re-anchoring below, which copies
                leaf.n_fp,
            )
            self._apply_assignment(child, assignment, measurements, assoc_params, ukf_params)
            self.nodes[child.id] = child
            children.append(child)
        self.leaves = [n for n in self.leaves if n.id != leaf.id] + children
        return children

    def _apply_assignment(self, node, assignment, measurements, assoc_params, ukf_params):
        previous_copied = False
        for m, target in zip(measurements, assignment.targets):
            if isinstance(target, New):
                lid = self.alloc_landmark_id()
                node.existing[lid] = Landmark(
                    lid, m.label, m.position.copy(), assoc_params.meas_cov.copy(), 1, last_seen=m.time
                )
            elif isinstance(target, FalsePositive):
                node.n_fp += 1
            elif isinstance(target, Existing):
                lm = node.existing[target.landmark_id]
                node.existing[lm.id] = ukf_update_safe(lm, m, assoc_params.meas_cov, ukf_params)
            elif isinstance(target, Previous):
                # re-anchor into the current submap; keeps the creation id
                if not previous_copied:
                    node.previous = dict(node.previous)
                    previous_copied = True
                lm = node.previous.pop(target.landmark_id)
                node.existing[lm.id] = ukf_update_safe(lm, m, assoc_params.meas_cov, ukf_params)

    # -- resampling -------------------------------------------------------

    def resample(self, force: bool = False) -> bool:
        """Selective systematic resampling with the KLD count bound.

        Triggers when ESS falls below ess_fraction * N (or when forced).
        Returns True if resampling happened.
        """
        n_leaves = len(self.leaves)
        if n_leaves <= 1:
            return False
        w = self.normalized_weights()
        ess = float(1.0 / np.sum(w * w))
        if not force and ess >= self.params.ess_fraction * n_leaves:
            return False
        u0 = float(self.rng.random())
        n = min(n_leaves, self.params.max_hypotheses)
        while True:
            idx = kernels.systematic_resample(w, n, u0)
            k = len(set(idx.tolist()))
            if k < 2:
                bound = self.params.max_hypotheses
            else:
                bound = min(
                    kld_bound(k, self.params.kld_epsilon, self.params.kld_delta, self.params.kld_cube_bracket),
                    self.params.max_hypotheses,
                )
            bound = max(bound, 1)
            if bound < n:
                n = bound
            else:
                break
        counts: Dict[int, int] = {}
        for i in idx.tolist():
            counts[i] = counts.get(i, 0) + 1
        survivors = []
        total = float(sum(counts.values()))
        for i in sorted(counts):
            leaf = self.leaves[i]
            leaf.log_weight = math.log(counts[i] / total)
            survivors.append(leaf)
        self.leaves = survivors
        self._prune()
        return True

    def prune_to_best(self, keep: int) -> None:
        """Likelihood-threshold baseline: keep the `keep` best leaves."""
        order = sorted(self.leaves, key=lambda n: -n.log_weight)
        self.leaves = order[:keep]
        self._prune()

    def _prune(self):
        """Drop nodes that no longer lead to a surviving leaf."""
        alive = set()
        for leaf in self.leaves:
            nid = leaf.id
            while nid is not None and nid not in alive:
                alive.add(nid)
                nid = self.nodes[nid].parent_id
        self.nodes = {nid: self.nodes[nid] for nid in alive}
