"""Nonlinear factor graph over SE(3) poses and point landmarks.

Levenberg-Marquardt on a minimal parameterization (global translation plus
right-multiplied rotation-vector increments), with Cauchy IRLS weights on
robust factors. Desk-scale graphs are solved densely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ContractViolation
from .geometry import (
    Pose,
    hat,
    left_jacobian_inv_so3,
    log_so3,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_to_rot,
    right_jacobian_inv_so3,
)


def cauchy_weight(residual_norm: float, c: float) -> float:
    """IRLS weight of the Cauchy m-estimator."""
    if c <= 0:
        raise ContractViolation("cauchy scale must be positive")
    r = residual_norm / c
    return 1.0 / (1.0 + r * r)


def cauchy_cost(residual_norm: float, c: float) -> float:
    r = residual_norm / c
    return 0.5 * c * c * math.log1p(r * r)


class StructuralError(RuntimeError):
    """A factor references a missing variable or the graph is disconnected."""


@dataclass(frozen=True, eq=False)
class PriorFactor:
    pose_id: int
    prior: Pose
    information: np.ndarray  # 6x6
    robust_c: Optional[float] = None

    def residual(self, state: "GraphState") -> np.ndarray:
        pose = state.poses[self.pose_id]
        r_t = pose.translation - self.prior.translation
        r_r = log_so3(self.prior.rot().T @ pose.rot())
        return np.concatenate([r_t, r_r])

    def jacobians(self, state: "GraphState") -> Dict[Tuple[str, int], np.ndarray]:
        pose = state.poses[self.pose_id]
        r_r = log_so3(self.prior.rot().T @ pose.rot())
        J = np.zeros((6, 6))
        J[:3, :3] = np.eye(3)
        J[3:, 3:] = right_jacobian_inv_so3(r_r)
        return {("pose", self.pose_id): J}


@dataclass(frozen=True, eq=False)
class RelativePoseFactor:
    """Odometry or loop-closure constraint: measured T_i^{-1} T_j."""

    pose_i: int
    pose_j: int
    measured: Pose
    information: np.ndarray  # 6x6
    robust_c: Optional[float] = None
    kind: str = "odometry"  # or "loop"

    def residual(self, state: "GraphState") -> np.ndarray:
        Ti = state.poses[self.pose_i]
        Tj = state.poses[self.pose_j]
        Ri = Ti.rot()
        r_t = Ri.T @ (Tj.translation - Ti.translation) - self.measured.translation
        E = self.measured.rot().T
        r_r = log_so3(E @ Ri.T @ Tj.rot())
        return np.concatenate([r_t, r_r])

    def jacobians(self, state: "GraphState") -> Dict[Tuple[str, int], np.ndarray]:
        Ti = state.poses[self.pose_i]
        Tj = state.poses[self.pose_j]
        Ri = Ti.rot()
        v = Ri.T @ (Tj.translation - Ti.translation)
        E = self.measured.rot().T
        r_r = log_so3(E @ Ri.T @ Tj.rot())
        Ji = np.zeros((6, 6))
        Jj = np.zeros((6, 6))
        Ji[:3, :3] = -Ri.T
        Ji[:3, 3:] = hat(v)
        Jj[:3, :3] = Ri.T
        Ji[3:, 3:] = -left_jacobian_inv_so3(r_r) @ E
        Jj[3:, 3:] = right_jacobian_inv_so3(r_r)
        return {("pose", self.pose_i): Ji, ("pose", self.pose_j): Jj}


@dataclass(frozen=True, eq=False)
class LandmarkFactor:
    """Pose-to-point constraint: landmark observed in the body frame."""

    pose_id: int
    landmark_id: int
    measured: np.ndarray  # 3-vector, body frame
    information: np.ndarray  # 3x3
    robust_c: Optional[float] = None

    def residual(self, state: "GraphState") -> np.ndarray:
        pose = state.poses[self.pose_id]
        l = state.landmarks[self.landmark_id]
        return pose.rot().T @ (l - pose.translation) - np.asarray(self.measured)

    def jacobians(self, state: "GraphState") -> Dict[Tuple[str, int], np.ndarray]:
        pose = state.poses[self.pose_id]
        l = state.landmarks[self.landmark_id]
        R = pose.rot()
        v = R.T @ (l - pose.translation)
        Jp = np.zeros((3, 6))
        Jp[:, :3] = -R.T
        Jp[:, 3:] = hat(v)
        return {("pose", self.pose_id): Jp, ("landmark", self.landmark_id): R.T}


Factor = PriorFactor | RelativePoseFactor | LandmarkFactor


@dataclass
class GraphState:
    poses: Dict[int, Pose] = field(default_factory=dict)
    landmarks: Dict[int, np.ndarray] = field(default_factory=dict)
    factors: List[Factor] = field(default_factory=list)

    def copy(self) -> "GraphState":
        return GraphState(
            {k: p.copy() for k, p in self.poses.items()},
            {k: v.copy() for k, v in self.landmarks.items()},
            list(self.factors),
        )

    def check_structure(self):
        priors = [f for f in self.factors if isinstance(f, PriorFactor)]
        if len(priors) != 1:
            raise StructuralError(f"expected exactly one prior factor, found {len(priors)}")
        touched = set()
        for f in self.factors:
            if isinstance(f, PriorFactor):
                if f.pose_id not in self.poses:
                    raise StructuralError("prior references a missing pose")
                touched.add(("pose", f.pose_id))
            elif isinstance(f, RelativePoseFactor):
                for pid in (f.pose_i, f.pose_j):
                    if pid not in self.poses:
                        raise StructuralError(f"factor references missing pose {pid}")
                    touched.add(("pose", pid))
            else:
                if f.pose_id not in self.poses:
                    raise StructuralError(f"factor references missing pose {f.pose_id}")
                if f.landmark_id not in self.landmarks:
                    raise StructuralError(f"factor references missing landmark {f.landmark_id}")
                touched.add(("pose", f.pose_id))
                touched.add(("landmark", f.landmark_id))
        for pid in self.poses:
            if ("pose", pid) not in touched:
                raise StructuralError(f"pose {pid} has no factor")
        for lid in self.landmarks:
            if ("landmark", lid) not in touched:
                raise StructuralError(f"landmark {lid} has no factor")


@dataclass
class OptimizeResult:
    state: GraphState
    cost: float
    iterations: int
    last_pose_cov_trace: float
    converged: bool


_WHITEN_CACHE: Dict[bytes, np.ndarray] = {}


def _whiten(information: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(information)
    key = arr.tobytes()
    W = _WHITEN_CACHE.get(key)
    if W is None:
        if len(_WHITEN_CACHE) > 4096:
            _WHITEN_CACHE.clear()
        W = np.linalg.cholesky(arr).T
        _WHITEN_CACHE[key] = W
    return W


def _factor_terms(f: Factor, state: GraphState):
    r = f.residual(state)
    W = _whiten(f.information)
    rw = W @ r
    norm = float(np.linalg.norm(rw))
    if f.robust_c is not None:
        w = cauchy_weight(norm, f.robust_c)
        cost = cauchy_cost(norm, f.robust_c)
    else:
        w = 1.0
        cost = 0.5 * norm * norm
    jacs = {var: W @ J for var, J in f.jacobians(state).items()}
    return rw, jacs, w, cost


def _total_cost(state: GraphState) -> float:
    total = 0.0
    for f in state.factors:
        r = f.residual(state)
        rw = _whiten(f.information) @ r
        norm = float(np.linalg.norm(rw))
        if f.robust_c is not None:
            total += cauchy_cost(norm, f.robust_c)
        else:
            total += 0.5 * norm * norm
    return total


def _index_variables(state: GraphState):
    offsets = {}
    off = 0
    for pid in sorted(state.poses):
        offsets[("pose", pid)] = off
        off += 6
    for lid in sorted(state.landmarks):
        offsets[("landmark", lid)] = off
        off += 3
    return offsets, off


def _apply_step(state: GraphState, offsets, delta: np.ndarray) -> GraphState:
    new = GraphState({}, {}, list(state.factors))
    for pid, pose in state.poses.items():
        o = offsets[("pose", pid)]
        dt = delta[o : o + 3]
        dphi = delta[o + 3 : o + 6]
        q = quat_normalize(quat_mul(pose.rotation, quat_from_rotvec(dphi)))
        new.poses[pid] = Pose(pose.translation + dt, q)
    for lid, l in state.landmarks.items():
        o = offsets[("landmark", lid)]
        new.landmarks[lid] = l + delta[o : o + 3]
    return new


def _normal_equations(state: GraphState, offsets, dim: int):
    H = np.zeros((dim, dim))
    b = np.zeros(dim)
    cost = 0.0
    for f in state.factors:
        rw, jacs, w, c = _factor_terms(f, state)
        cost += c
        items = list(jacs.items())
        for var_a, Ja in items:
            oa = offsets[var_a]
            da = Ja.shape[1]
            b[oa : oa + da] += w * (Ja.T @ rw)
            for var_b, Jb in items:
                ob = offsets[var_b]
                db = Jb.shape[1]
                H[oa : oa + da, ob : ob + db] += w * (Ja.T @ Jb)
    return H, b, cost


def optimize(
    g: GraphState,
    max_iters: int = 50,
    grad_tol: float = 1e-8,
    lm_lambda0: float = 1e-4,
) -> OptimizeResult:
    """Levenberg-Marquardt with Cauchy IRLS reweighting per iteration."""
    g.check_structure()
    state = g.copy()
    offsets, dim = _index_variables(state)
    lam = lm_lambda0
    cost = _total_cost(state)
    iterations = 0
    converged = False
    for _ in range(max_iters):
        iterations += 1
        H, b, cost = _normal_equations(state, offsets, dim)
        if float(np.max(np.abs(b))) < grad_tol:
            converged = True
            break
        accepted = False
        for _ in range(12):
            try:
                delta = np.linalg.solve(H + lam * np.eye(dim), -b)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = _apply_step(state, offsets, delta)
            trial_cost = _total_cost(trial)
            if trial_cost < cost:
                improvement = cost - trial_cost
                state = trial
                cost = trial_cost
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                if improvement < 1e-9 * max(1.0, cost):
                    converged = True
                break
            lam *= 10.0
        if not accepted or converged:
            converged = True
            break
    H, b, _ = _normal_equations(state, offsets, dim)
    last_pose = max(state.poses)
    o = offsets[("pose", last_pose)]
    try:
        cov = np.linalg.inv(H + 1e-12 * np.eye(dim))
        trace = float(np.trace(cov[o : o + 6, o : o + 6]))
    except np.linalg.LinAlgError:
        trace = float("inf")
    return OptimizeResult(state, cost, iterations, trace, converged)


def rmse(trajectory: Sequence[Pose], ground_truth: Sequence[Pose]) -> float:
    """Root-mean-square translational error between aligned trajectories."""
    if len(trajectory) != len(ground_truth):
        raise ContractViolation("trajectory lengths differ")
    if not trajectory:
        return 0.0
    err = [
        float(np.sum((a.translation - b.translation) ** 2))
        for a, b in zip(trajectory, ground_truth)
    ]
    return math.sqrt(sum(err) / len(err))
