"""Semantic loop-closure detection.

Two-stage retrieval (submap histograms under JSD, scene histograms under
L2), topology verification via Laplacian NCC, Hungarian scene similarity,
a discrete Bayes filter over loop-closure events, and a final RANSAC rigid
consistency check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .core import ClassLabel, ContractViolation
from .geometry import Pose, rot_to_quat
from .kdtree import IncrementalKdTree
from .submap import SubmapSummary

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# histogram distances


def _check_normalized(h: np.ndarray):
    if abs(float(h.sum()) - 1.0) > 1e-9 or np.any(h < -1e-15):
        raise ContractViolation("histogram must be normalized")


def jsd(h1: np.ndarray, h2: np.ndarray) -> float:
    """Jensen-Shannon divergence in nats; bounded by ln 2."""
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    if h1.shape != h2.shape:
        raise ContractViolation("histograms must share the class dimension")
    _check_normalized(h1)
    _check_normalized(h2)
    m = 0.5 * (h1 + h2)

    def kl(p, q):
        mask = p > 0
        return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))

    return 0.5 * kl(h1, m) + 0.5 * kl(h2, m)


# ---------------------------------------------------------------------------
# scene descriptors and retrieval


@dataclass(frozen=True, eq=False)
class SceneDescriptor:
    scene_id: int
    submap_id: int
    histogram: np.ndarray  # normalized, one dimension per registered class
    positions: np.ndarray  # (n, 3) body-frame landmark positions
    labels: Tuple[ClassLabel, ...]
    pose: Pose  # estimated pose at capture

    def __post_init__(self):
        object.__setattr__(self, "histogram", np.asarray(self.histogram, dtype=float))
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float).reshape(-1, 3))
        if len(self.labels) != self.positions.shape[0]:
            raise ContractViolation("labels and positions disagree")


class PlaceIndex:
    """Two-stage retrieval state: submap and scene histogram kd-trees."""

    def __init__(self, dim: int):
        self.dim = dim
        self.submap_tree = IncrementalKdTree(dim)
        self.scene_tree = IncrementalKdTree(dim)
        self.submap_hist: Dict[int, np.ndarray] = {}
        self.scenes: Dict[int, SceneDescriptor] = {}
        self.scenes_by_submap: Dict[int, List[int]] = {}

    def add_submap(self, submap_id: int, histogram: np.ndarray, scenes: Sequence[SceneDescriptor]):
        histogram = np.asarray(histogram, dtype=float)
        self.submap_tree.insert(histogram, submap_id)
        self.submap_hist[submap_id] = histogram
        ids = []
        for s in scenes:
            self.scene_tree.insert(s.histogram, s.scene_id)
            self.scenes[s.scene_id] = s
            ids.append(s.scene_id)
        self.scenes_by_submap[submap_id] = ids


def query_candidates(
    index: PlaceIndex,
    query_submap_hist: np.ndarray,
    query_scene: SceneDescriptor,
    tau_jsd: float,
    r_l2: float,
    exclusion_window: int,
) -> List[SceneDescriptor]:
    """Stage 1: submaps within tau_jsd of the query submap histogram (kd-tree
    L2 prefilter, exact JSD refine). Stage 2: their scenes within r_l2 of the
    query scene histogram. Scenes inside the exclusion window are dropped."""
    query_submap_hist = np.asarray(query_submap_hist, dtype=float)
    # conservative prefilter radius: JSD <= tau is impossible once
    # ||h1-h2||_2 exceeds sqrt(8*tau) (via Pinsker on each half), refined exactly
    prefilter_r = math.sqrt(max(8.0 * tau_jsd, 0.0)) + 1e-12
    submap_ids = index.submap_tree.query_radius(query_submap_hist, prefilter_r)
    good_submaps = [
        sid
        for sid in sorted(submap_ids)
        if jsd(query_submap_hist, index.submap_hist[sid]) <= tau_jsd
    ]
    out = []
    for sid in good_submaps:
        for scene_id in index.scenes_by_submap[sid]:
            s = index.scenes[scene_id]
            if abs(s.scene_id - query_scene.scene_id) <= exclusion_window:
                continue
            if float(np.linalg.norm(query_scene.histogram - s.histogram)) <= r_l2:
                out.append(s)
    return out


# ---------------------------------------------------------------------------
# topology score


def scene_laplacian(scene: SceneDescriptor, edge_radius: float) -> np.ndarray:
    """Graph Laplacian of the landmark proximity graph, nodes ordered by
    (class id, distance to the scene centroid)."""
    n = scene.positions.shape[0]
    if n == 0:
        raise ContractViolation("cannot build the Laplacian of an empty scene")
    centroid = scene.positions.mean(axis=0)
    order = sorted(
        range(n),
        key=lambda i: (scene.labels[i].id, float(np.linalg.norm(scene.positions[i] - centroid)), i),
    )
    pts = scene.positions[order]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    adj = (dist <= edge_radius).astype(float)
    np.fill_diagonal(adj, 0.0)
    return np.diag(adj.sum(axis=1)) - adj


def ncc_score(L1: np.ndarray, L2: np.ndarray) -> float:
    """Normalized cross correlation of flattened, zero-padded matrices."""
    n = max(L1.shape[0], L2.shape[0])

    def pad(L):
        out = np.zeros((n, n))
        out[: L.shape[0], : L.shape[1]] = L
        return out.ravel()

    a = pad(L1)
    b = pad(L2)
    a = a - a.mean()
    b = b - b.mean()
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        if na == 0.0 and nb == 0.0:
            return 1.0
        return 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# scene similarity


@dataclass(frozen=True)
class MatchedPair:
    idx_a: int
    idx_b: int
    normalized_cost: float
    same_class: bool


def scene_match(
    a: SceneDescriptor,
    b: SceneDescriptor,
    penalty_p: float = 0.5,
    dist_norm_scale: float = 5.0,
    term_mode: str = "as_printed",
) -> Tuple[float, List[MatchedPair]]:
    """Hungarian match on Euclidean landmark distances plus the printed
    per-pair score. Distances are normalized to [0, 2] by dist_norm_scale."""
    na, nb = a.positions.shape[0], b.positions.shape[0]
    if na == 0 or nb == 0:
        raise ContractViolation("scene_match requires non-empty scenes")
    diff = a.positions[:, None, :] - b.positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    H = np.minimum(dist / dist_norm_scale, 2.0)
    # assignment prefers same-class pairings (penalty exceeds the distance
    # range); the similarity score itself stays a function of H and class
    mismatch = np.array(
        [[0.0 if la == lb else 4.0 for lb in b.labels] for la in a.labels]
    )
    C = H + mismatch
    if na <= nb:
        r2c, _, _, _ = kernels.lap_solve(np.ascontiguousarray(C))
        pairs_idx = [(i, int(j)) for i, j in enumerate(r2c)]
    else:
        r2c, _, _, _ = kernels.lap_solve(np.ascontiguousarray(C.T))
        pairs_idx = sorted((int(j), i) for i, j in enumerate(r2c))
    score = 0.0
    pairs = []
    for i, j in pairs_idx:
        h = float(H[i, j])
        s_match = 1.0 - h / 2.0
        same = a.labels[i] == b.labels[j]
        s_class = 0.0 if same else penalty_p
        if term_mode == "as_printed":
            score += 1.0 - s_match * s_class
        elif term_mode == "distance_weighted":
            score += 1.0 - (1.0 - s_match) * (1.0 - s_class)
        else:
            raise ContractViolation(f"unknown term_mode {term_mode!r}")
        pairs.append(MatchedPair(i, j, h, same))
    return score, pairs


# ---------------------------------------------------------------------------
# Bayes filter over loop-closure events


@dataclass(frozen=True)
class BayesBelief:
    p_lc: float = 0.5
    p_stay_lc: float = 0.9
    p_stay_no: float = 0.9
    p_pos_given_lc: float = 0.8
    p_pos_given_no: float = 0.1

    def __post_init__(self):
        for name in ("p_lc", "p_stay_lc", "p_stay_no", "p_pos_given_lc", "p_pos_given_no"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ContractViolation(f"{name} must lie in [0, 1]")


def bayes_update(belief: BayesBelief, verified: bool) -> BayesBelief:
    """Predict with the two-state Markov chain, then correct with the
    verification observation."""
    p = belief.p_lc * belief.p_stay_lc + (1.0 - belief.p_lc) * (1.0 - belief.p_stay_no)
    if verified:
        like_lc, like_no = belief.p_pos_given_lc, belief.p_pos_given_no
    else:
        like_lc, like_no = 1.0 - belief.p_pos_given_lc, 1.0 - belief.p_pos_given_no
    num = p * like_lc
    den = num + (1.0 - p) * like_no
    post = belief.p_lc if den == 0.0 else num / den
    return replace(belief, p_lc=post)


# ---------------------------------------------------------------------------
# RANSAC rigid consistency


@dataclass(frozen=True, eq=False)
class LoopClosure:
    query_scene: int
    candidate_scene: int
    relative_pose: Pose
    inlier_pairs: Tuple[Tuple[int, int], ...]
    s_ncc: float
    s_scene: float


def rigid_transform_svd(src: np.ndarray, dst: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid transform (R, t) with dst ~ R @ src + t."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    t = cd - R @ cs
    return R, t


def ransac_verify(
    src: np.ndarray,
    dst: np.ndarray,
    rng: np.random.Generator,
    iters: int = 200,
    inlier_tol: float = 0.5,
    min_inliers: int = 4,
) -> Optional[Tuple[Pose, np.ndarray]]:
    """RANSAC rigid alignment dst ~ T(src). Returns (pose, inlier mask) or
    None on rejection. Deterministic under a seeded rng."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    n = src.shape[0]
    if n < 3:
        return None
    # minimal samples are drawn up front so both kernel backends consume
    # the identical random stream
    picks = np.argsort(rng.random((iters, n)), axis=1)[:, :3].astype(np.int64)
    best_mask, best_count = kernels.ransac_best_mask(src, dst, picks, inlier_tol)
    if best_count < max(min_inliers, 3):
        return None
    R, t = rigid_transform_svd(src[best_mask], dst[best_mask])
    err = np.linalg.norm(dst - (src @ R.T + t), axis=1)
    mask = err <= inlier_tol
    if int(mask.sum()) < min_inliers:
        return None
    R, t = rigid_transform_svd(src[mask], dst[mask])
    return Pose(t, rot_to_quat(R)), mask


# ---------------------------------------------------------------------------
# verification pipeline


@dataclass(frozen=True)
class VerifyThresholds:
    tau_verify: float = 4.0
    tau_bayes: float = 0.75
    edge_radius: float = 5.0
    penalty_p: float = 0.5
    dist_norm_scale: float = 5.0
    term_mode: str = "as_printed"


def verify_pair(a: SceneDescriptor, b: SceneDescriptor, thresholds: VerifyThresholds) -> Tuple[bool, float, float, List[MatchedPair]]:
    """Topology + similarity check: passes iff S_NCC + S_scene > tau_verify."""
    if a.positions.shape[0] == 0 or b.positions.shape[0] == 0:
        return False, 0.0, 0.0, []
    s_ncc = ncc_score(scene_laplacian(a, thresholds.edge_radius), scene_laplacian(b, thresholds.edge_radius))
    s_scene, pairs = scene_match(a, b, thresholds.penalty_p, thresholds.dist_norm_scale, thresholds.term_mode)
    return (s_ncc + s_scene > thresholds.tau_verify), s_ncc, s_scene, pairs


class LoopClosureDetector:
    """Owns the retrieval indices and per-pair Bayes beliefs."""

    def __init__(
        self,
        dim: int,
        tau_jsd: float = 0.2,
        r_l2: float = 0.5,
        exclusion_window: int = 20,
        thresholds: VerifyThresholds = VerifyThresholds(),
        belief_template: BayesBelief = BayesBelief(),
        ransac_iters: int = 200,
        ransac_tol: float = 0.5,
        ransac_min_inliers: int = 4,
        rng_seed: int = 0,
        max_candidates: int = 5,
    ):
        self.index = PlaceIndex(dim)
        self.tau_jsd = tau_jsd
        self.r_l2 = r_l2
        self.exclusion_window = exclusion_window
        self.thresholds = thresholds
        self.belief_template = belief_template
        self.ransac_iters = ransac_iters
        self.ransac_tol = ransac_tol
        self.ransac_min_inliers = ransac_min_inliers
        self.rng = np.random.default_rng(rng_seed)
        self.max_candidates = max_candidates
        self.beliefs: Dict[Tuple[int, int], BayesBelief] = {}
        self._lap_cache: Dict[int, np.ndarray] = {}

    def _laplacian(self, scene: SceneDescriptor) -> np.ndarray:
        # scene ids are unique per run and descriptors are immutable
        L = self._lap_cache.get(scene.scene_id)
        if L is None:
            L = scene_laplacian(scene, self.thresholds.edge_radius)
            self._lap_cache[scene.scene_id] = L
        return L

    def detect(self, query_submap_hist: np.ndarray, query_scene: SceneDescriptor) -> List[LoopClosure]:
        """Returns at most one closure: the candidate with the strongest
        geometric consensus for this query scene."""
        closures = []
        candidates = query_candidates(
            self.index, query_submap_hist, query_scene, self.tau_jsd, self.r_l2, self.exclusion_window
        )
        # geometric verification is the expensive stage: keep only the
        # best-ranked retrievals (closest scene histograms)
        candidates = sorted(
            candidates,
            key=lambda s: (float(np.linalg.norm(query_scene.histogram - s.histogram)), s.scene_id),
        )[: self.max_candidates]
        for cand in candidates:
            if query_scene.positions.shape[0] == 0 or cand.positions.shape[0] == 0:
                continue
            s_ncc = ncc_score(self._laplacian(query_scene), self._laplacian(cand))
            s_scene, pairs = scene_match(
                query_scene,
                cand,
                self.thresholds.penalty_p,
                self.thresholds.dist_norm_scale,
                self.thresholds.term_mode,
            )
            ok = s_ncc + s_scene > self.thresholds.tau_verify
            key = (query_scene.scene_id, cand.scene_id)
            belief = self.beliefs.get(key, self.belief_template)
            belief = bayes_update(belief, ok)
            self.beliefs[key] = belief
            if belief.p_lc <= self.thresholds.tau_bayes:
                continue
            # putative correspondences: every same-class cross pairing; the
            # consensus step sorts out which instances actually align
            putative = [
                (ia, ib)
                for ia, la in enumerate(query_scene.labels)
                for ib, lb in enumerate(cand.labels)
                if la == lb
            ]
            if len(putative) < 3:
                continue
            src = cand.positions[[ib for _, ib in putative]]
            dst = query_scene.positions[[ia for ia, _ in putative]]
            result = ransac_verify(
                src, dst, self.rng, self.ransac_iters, self.ransac_tol, self.ransac_min_inliers
            )
            if result is None:
                continue
            rel, mask = result
            inliers = tuple(p for p, keep in zip(putative, mask) if keep)
            # inliers must cover distinct landmarks on both sides
            if (
                len({ia for ia, _ in inliers}) < self.ransac_min_inliers
                or len({ib for _, ib in inliers}) < self.ransac_min_inliers
            ):
                continue
            closures.append(LoopClosure(query_scene.scene_id, cand.scene_id, rel, inliers, s_ncc, s_scene))
        if len(closures) > 1:
            closures = [max(closures, key=lambda lc: len(lc.inlier_pairs))]
        return closures

    def add_submap(self, submap_id: int, histogram: np.ndarray, scenes: Sequence[SceneDescriptor]):
        self.index.add_submap(submap_id, histogram, scenes)
