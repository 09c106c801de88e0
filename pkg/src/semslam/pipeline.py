"""End-to-end pipeline: association + hypothesis tree per submap, fusion
into the factor graph, semantic loop-closure search, optimization, metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .assoc import (
    Assignment,
    AssociationState,
    AssocParams,
    Existing,
    New,
    Previous,
    build_cost_matrix,
    generate_branches,
    solve_assignment,
)
from .config import RunConfig
from .core import ClassHistogram, LabelRegistry, Landmark, SemanticMeasurement, histogram_of
from .estimation import FusedLandmark, UkfParams, fuse_hypotheses
from .geometry import Pose
from .graph import (
    GraphState,
    LandmarkFactor,
    OptimizeResult,
    PriorFactor,
    RelativePoseFactor,
    optimize,
    rmse,
)
from .mht import HypothesisTree, ResampleParams
from .placerec import (
    BayesBelief,
    LoopClosureDetector,
    SceneDescriptor,
    VerifyThresholds,
)
from .submap import Corpus, GateDefaults, SubmapSummary, gaussian_entropy, gate, tfidf_score


@dataclass
class PipelineResult:
    trajectory: List[Pose]
    fused_map: Dict[int, FusedLandmark]
    hypothesis_counts: List[int]
    landmark_counts: List[int]
    loop_closure_counts: List[int]  # cumulative per frame
    n_loop_closures: int
    raw_odometry: List[Pose]
    per_frame_error: Optional[List[float]] = None
    final_rmse: Optional[float] = None

    def metrics_rows(self):
        rows = []
        for t in range(len(self.trajectory)):
            err = self.per_frame_error[t] if self.per_frame_error is not None else 0.0
            rows.append(
                (t, err, self.hypothesis_counts[t], self.landmark_counts[t], self.loop_closure_counts[t])
            )
        return rows

    @property
    def mean_hypotheses(self) -> float:
        return float(np.mean(self.hypothesis_counts))


def integrate_odometry(increments: Sequence[Pose], start: Optional[Pose] = None) -> List[Pose]:
    poses = [start.copy() if start is not None else Pose()]
    for inc in increments:
        poses.append(poses[-1].compose(inc))
    return poses


def _assoc_params(cfg: RunConfig, registry: LabelRegistry) -> AssocParams:
    labels = registry.labels()
    meas_cov = cfg.meas_cov_scale * np.eye(3)
    trans = {l: cfg.trans_cov_scale * np.eye(3) for l in labels}
    prior = {l: 1.0 / len(labels) for l in labels}
    dirac = frozenset(registry.by_id(i) for i in cfg.dirac_class_ids)
    return AssocParams(
        meas_cov=meas_cov,
        trans_cov_by_class=trans,
        dirichlet_alpha=cfg.dirichlet_alpha,
        fp_rate=cfg.fp_rate,
        map_volume=cfg.map_volume,
        lambda_new=cfg.lambda_new,
        lambda_fp=cfg.lambda_fp,
        prior_volume=cfg.prior_volume,
        class_prior=prior,
        dirac_classes=dirac,
        dp_weight_mode=cfg.dp_weight_mode,
    )


def _nearest_neighbor_assignment(
    measurements: Sequence[SemanticMeasurement],
    state: AssociationState,
    nn_new_dist: float,
) -> Assignment:
    """Single-hypothesis baseline: Hungarian on plain L2 distances with a
    fixed new-landmark cost; no false-positive handling."""
    n = len(measurements)
    ids = sorted(state.existing) + sorted(state.previous)
    kinds = [("e", i) for i in sorted(state.existing)] + [("p", i) for i in sorted(state.previous)]
    mat = np.full((n, len(ids) + n), kernels.BIG)
    for i, m in enumerate(measurements):
        for j, (kind, lid) in enumerate(kinds):
            lm = state.existing[lid] if kind == "e" else state.previous[lid]
            if lm.label == m.label:
                mat[i, j] = float(np.linalg.norm(m.position - lm.mean))
        mat[i, len(ids) + i] = nn_new_dist
    r2c, _, _, _ = kernels.lap_solve(mat)
    targets = []
    for i in range(n):
        j = int(r2c[i])
        if j >= len(ids):
            targets.append(New())
        else:
            kind, lid = kinds[j]
            targets.append(Existing(lid) if kind == "e" else Previous(lid))
    return Assignment.from_targets(targets)


class Pipeline:
    def __init__(self, cfg: RunConfig, registry: LabelRegistry):
        self.cfg = cfg
        self.registry = registry
        for i in range(cfg.n_classes):
            registry.by_id(i)
        self.assoc_params = _assoc_params(cfg, registry)
        self.ukf_params = UkfParams(cfg.ukf_alpha, cfg.ukf_beta, cfg.ukf_kappa)
        self.resample_params = ResampleParams(
            cfg.ess_fraction,
            cfg.kld_epsilon,
            cfg.kld_delta,
            cfg.max_hypotheses,
            cfg.run_seed,
            cfg.kld_cube_bracket,
        )
        self.detector = LoopClosureDetector(
            dim=cfg.n_classes,
            tau_jsd=cfg.tau_jsd,
            r_l2=cfg.r_l2,
            exclusion_window=cfg.exclusion_window,
            thresholds=VerifyThresholds(
                cfg.tau_verify,
                cfg.tau_bayes,
                cfg.edge_radius,
                cfg.penalty_p,
                cfg.dist_norm_scale,
                cfg.scene_term_mode,
            ),
            belief_template=BayesBelief(
                cfg.bayes_prior,
                cfg.bayes_stay_lc,
                cfg.bayes_stay_no,
                cfg.bayes_pos_given_lc,
                cfg.bayes_pos_given_no,
            ),
            ransac_iters=cfg.ransac_iters,
            ransac_tol=cfg.ransac_tol,
            ransac_min_inliers=cfg.ransac_min_inliers,
            rng_seed=cfg.run_seed,
        )
        self.corpus = Corpus(cfg.tfidf_doc_unit)
        self.gate_defaults = GateDefaults(cfg.gate_min_landmarks, cfg.gate_min_tfidf)
        # factor graph
        self.graph = GraphState()
        self.graph.poses[0] = Pose()
        self.graph.factors.append(PriorFactor(0, Pose(), 1e6 * np.eye(6)))
        odo_cov = np.diag(
            [max(cfg.odom_sigma_t, 1e-3) ** 2] * 3 + [max(cfg.odom_sigma_r, 1e-3) ** 2] * 3
        )
        self._odo_info = np.linalg.inv(odo_cov)
        self._loop_info = cfg.loop_info_scale * np.eye(6)
        # running state
        self.pose_est: List[Pose] = [Pose()]
        self.fused_map: Dict[int, FusedLandmark] = {}
        self.previous_landmarks: Dict[int, Landmark] = {}
        self.n_fp_total = 0
        self.next_landmark_id = 0
        self.n_loop_closures = 0
        self.submap_id = 0
        self._submap_scenes: List[SceneDescriptor] = []
        self._new_tree()

    # -- submap bookkeeping ----------------------------------------------

    def _new_tree(self):
        self.tree = HypothesisTree(
            self.resample_params,
            previous_landmarks=self.previous_landmarks,
            n_fp=self.n_fp_total,
            landmark_id_start=self.next_landmark_id,
        )
        self._submap_scenes = []

    # -- per-scene processing --------------------------------------------

    def process_scene(self, step: int, body_measurements: Sequence[SemanticMeasurement], odom_inc: Optional[Pose]):
        cfg = self.cfg
        if step > 0:
            if odom_inc is None:
                raise ValueError("missing odometry increment")
            pose = self.pose_est[-1].compose(odom_inc)
            self.pose_est.append(pose)
            self.graph.poses[step] = pose.copy()
            self.graph.factors.append(
                RelativePoseFactor(step - 1, step, odom_inc.copy(), self._odo_info)
            )
        pose = self.pose_est[step]
        world_meas = [
            SemanticMeasurement(m.scene_id, m.time, pose.transform(m.position), m.label)
            for m in body_measurements
        ]
        if world_meas:
            self._associate(world_meas)
            self._submap_scenes.append(self._scene_descriptor(step, body_measurements, pose))

    def _associate(self, measurements: Sequence[SemanticMeasurement]):
        cfg = self.cfg
        if cfg.mode == "single_ukf":
            leaf = self.tree.leaves[0]
            assignment = _nearest_neighbor_assignment(measurements, leaf.assoc_state(), cfg.nn_new_dist)
            self.tree.extend(leaf, [assignment], measurements, self.assoc_params, self.ukf_params, measurements[0].scene_id)
            return
        for leaf in list(self.tree.leaves):
            cm = build_cost_matrix(measurements, leaf.assoc_state(), self.assoc_params)
            best = solve_assignment(cm)
            branches = generate_branches(cm, best, cfg.max_branches, cfg.plausibility_gap)
            self.tree.extend(leaf, branches, measurements, self.assoc_params, self.ukf_params, measurements[0].scene_id)
        if cfg.mode == "dpmhm":
            self.tree.resample(force=len(self.tree.leaves) > cfg.max_hypotheses)
        else:  # mhm_threshold: naive likelihood thresholding, keep the best third
            if len(self.tree.leaves) > cfg.max_hypotheses:
                self.tree.prune_to_best(max(1, math.ceil(len(self.tree.leaves) / 3)))

    def _scene_descriptor(self, step: int, body_measurements, pose: Pose) -> SceneDescriptor:
        hist = histogram_of(body_measurements).as_vector(self.cfg.n_classes)
        positions = np.stack([m.position for m in body_measurements])
        labels = tuple(m.label for m in body_measurements)
        return SceneDescriptor(step, self.submap_id, hist, positions, labels, pose.copy())

    # -- submap completion ------------------------------------------------

    def finalize_submap(self, last_step: int):
        cfg = self.cfg
        weights = self.tree.normalized_weights()
        fused = fuse_hypotheses(self.tree.leaves, weights)
        self.next_landmark_id = self.tree._next_landmark_id
        # the clutter count is kept local to a submap; carrying it across
        # submaps lets the DP rich-get-richer weight swallow new landmarks
        self.n_fp_total = 0
        # landmark factors from the fused output
        submap_lids = []
        for lid, flm in fused.items():
            self.fused_map[lid] = flm
            scene = min(int(round(flm.last_seen)), last_step)
            if scene not in self.graph.poses:
                scene = last_step
            submap_lids.append(lid)
            pose = self.pose_est[scene]
            R = pose.rot()
            z_body = pose.transform_inverse(flm.mean)
            cov_body = R.T @ flm.cov @ R
            info = np.linalg.inv(cov_body)
            info = 0.5 * (info + info.T)
            if lid not in self.graph.landmarks:
                self.graph.landmarks[lid] = flm.mean.copy()
            self.graph.factors.append(
                LandmarkFactor(scene, lid, z_body, info, robust_c=cfg.cauchy_c)
            )
        summary = self._summarize(fused, submap_lids)
        if self._submap_scenes and gate(summary, None, self.gate_defaults) == "check":
            submap_hist = summary.histogram.as_vector(cfg.n_classes)
            for scene in self._submap_scenes:
                for lc in self.detector.detect(submap_hist, scene):
                    self.n_loop_closures += 1
                    self.graph.factors.append(
                        RelativePoseFactor(
                            lc.query_scene,
                            lc.candidate_scene,
                            lc.relative_pose,
                            self._loop_info,
                            robust_c=cfg.cauchy_c,
                            kind="loop",
                        )
                    )
        if self._submap_scenes and summary.histogram.total > 0:
            self.detector.add_submap(
                self.submap_id, summary.histogram.as_vector(cfg.n_classes), self._submap_scenes
            )
        self._optimize()
        # fused landmarks become previous-submap landmarks for the next tree
        self.previous_landmarks = {}
        for lid, flm in self.fused_map.items():
            mean = self.graph.landmarks.get(lid, flm.mean)
            self.previous_landmarks[lid] = Landmark(
                lid, flm.label, np.asarray(mean, dtype=float), flm.cov, flm.assign_count, self.submap_id, flm.last_seen
            )
        self.submap_id += 1
        self._new_tree()

    def _summarize(self, fused: Dict[int, FusedLandmark], submap_lids: Sequence[int]) -> SubmapSummary:
        cfg = self.cfg
        scene_ids = tuple(s.scene_id for s in self._submap_scenes)
        lids = [lid for lid in submap_lids if lid in fused]
        active = [fused[lid] for lid in lids if int(round(fused[lid].last_seen)) in set(scene_ids)] or [
            fused[lid] for lid in lids
        ]
        hist = histogram_of(active) if active else ClassHistogram({}, 0)
        if active:
            comps = [(c.weight / len(active), c) for flm in active for c in flm.components]
            centroid = np.zeros(3)
            for w, c in comps:
                centroid += w * c.mean
            cov = np.zeros((3, 3))
            for w, c in comps:
                d = c.mean - centroid
                cov += w * (c.cov + np.outer(d, d))
            cov = cov + 1e-9 * np.eye(3)
            entropy = gaussian_entropy(cov)
        else:
            entropy = float("-inf")
        scene_hists = [histogram_of_vector(s.histogram, self.registry) for s in self._submap_scenes]
        self.corpus.add_submap(hist, scene_hists)
        tfidf = tfidf_score(hist, self.corpus) if hist.total > 0 else 0.0
        anchor = self.pose_est[scene_ids[0]] if scene_ids else self.pose_est[-1]
        return SubmapSummary(self.submap_id, hist, entropy, tfidf, len(active), scene_ids, anchor.copy())

    # -- optimization -----------------------------------------------------

    def _optimize(self):
        result = optimize(self.graph, self.cfg.lm_max_iters, self.cfg.lm_grad_tol)
        self.graph = result.state
        for t in sorted(self.graph.poses):
            self.pose_est[t] = self.graph.poses[t].copy()
        self.last_optimize = result


def histogram_of_vector(hist_vec: np.ndarray, registry: LabelRegistry) -> ClassHistogram:
    """Presence histogram from a normalized vector (corpus scene documents)."""
    counts = {registry.by_id(i): 1 for i, v in enumerate(hist_vec) if v > 0}
    return ClassHistogram(counts, len(counts))


def run_pipeline(
    cfg: RunConfig,
    measurements_per_step: Sequence[Sequence[SemanticMeasurement]],
    odometry_increments: Sequence[Pose],
    registry: LabelRegistry,
    ground_truth: Optional[Sequence[Pose]] = None,
) -> PipelineResult:
    """Run the full estimator over body-frame measurement logs."""
    n_steps = len(measurements_per_step)
    if n_steps == 0:
        raise ValueError("empty measurement log")
    if len(odometry_increments) != n_steps - 1:
        raise ValueError(
            f"expected {n_steps - 1} odometry increments, got {len(odometry_increments)}"
        )
    pipe = Pipeline(cfg, registry)
    hyp_counts = []
    lm_counts = []
    lc_counts = []
    for t in range(n_steps):
        inc = odometry_increments[t - 1] if t > 0 else None
        pipe.process_scene(t, measurements_per_step[t], inc)
        hyp_counts.append(len(pipe.tree.leaves))
        best = pipe.tree.best_leaf()
        lm_counts.append(len(best.existing) + len(best.previous))
        lc_counts.append(pipe.n_loop_closures)
        if (t + 1) % cfg.submap_length == 0 or t == n_steps - 1:
            pipe.finalize_submap(t)
            lc_counts[-1] = pipe.n_loop_closures
    trajectory = [pipe.pose_est[t] for t in range(n_steps)]
    raw = integrate_odometry(odometry_increments)
    result = PipelineResult(
        trajectory,
        pipe.fused_map,
        hyp_counts,
        lm_counts,
        lc_counts,
        pipe.n_loop_closures,
        raw,
    )
    if ground_truth is not None:
        result.per_frame_error = [
            float(np.linalg.norm(a.translation - b.translation))
            for a, b in zip(trajectory, ground_truth)
        ]
        result.final_rmse = rmse(trajectory, list(ground_truth))
    return result


@dataclass
class EvalReport:
    rmse: float
    per_frame_error: List[float]
    mean_error: float
    max_error: float


def evaluate(trajectory: Sequence[Pose], ground_truth: Sequence[Pose], times_a=None, times_b=None) -> EvalReport:
    if times_a is not None and times_b is not None:
        if len(times_a) != len(times_b) or any(abs(a - b) > 1e-9 for a, b in zip(times_a, times_b)):
            raise ValueError("trajectory timestamps are not aligned")
    errs = [
        float(np.linalg.norm(a.translation - b.translation))
        for a, b in zip(trajectory, ground_truth)
    ]
    return EvalReport(rmse(list(trajectory), list(ground_truth)), errs, float(np.mean(errs)), float(np.max(errs)))
