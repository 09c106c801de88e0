"""Loop-closure detection: JSD, two-stage retrieval, Laplacian NCC, scene
similarity, the discrete Bayes filter, RANSAC, and the end-to-end detector."""

import math

import numpy as np
import pytest

from semslam.core import ContractViolation
from semslam.geometry import Pose, exp_so3, quat_from_yaw, rot_to_quat
from semslam.placerec import (
    BayesBelief,
    LoopClosureDetector,
    PlaceIndex,
    SceneDescriptor,
    VerifyThresholds,
    bayes_update,
    jsd,
    ncc_score,
    query_candidates,
    ransac_verify,
    rigid_transform_svd,
    scene_laplacian,
    scene_match,
    verify_pair,
)

from conftest import label


def scene(scene_id, positions, class_ids, submap_id=0, dim=4, pose=None):
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    labels = tuple(label(c) for c in class_ids)
    hist = np.zeros(dim)
    for c in class_ids:
        hist[c] += 1
    hist = hist / hist.sum()
    return SceneDescriptor(scene_id, submap_id, hist, positions, labels, pose or Pose())


class TestJsd:
    def test_identical_is_zero(self):
        h = np.array([0.25, 0.25, 0.5])
        assert jsd(h, h) == 0.0

    def test_disjoint_supports_hit_ln2(self):
        assert jsd(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(math.log(2), rel=1e-12)

    def test_spot_value(self):
        assert jsd(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == pytest.approx(0.2158, abs=1e-4)

    def test_symmetry_and_bounds(self, rng):
        for _ in range(20):
            h1 = rng.dirichlet(np.ones(5))
            h2 = rng.dirichlet(np.ones(5))
            d = jsd(h1, h2)
            assert d == pytest.approx(jsd(h2, h1), abs=1e-12)
            assert -1e-12 <= d <= math.log(2) + 1e-12

    def test_unnormalized_rejected(self):
        with pytest.raises(ContractViolation):
            jsd(np.array([0.5, 0.2]), np.array([0.5, 0.5]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            jsd(np.array([1.0]), np.array([0.5, 0.5]))


class TestQueryCandidates:
    def test_empty_index(self):
        index = PlaceIndex(4)
        q = scene(100, [[0, 0, 0]], [0])
        assert query_candidates(index, q.histogram, q, 0.2, 0.6, 10) == []

    def test_exact_copy_found(self):
        index = PlaceIndex(4)
        s = scene(5, [[0, 0, 0], [1, 0, 0]], [0, 1])
        index.add_submap(0, s.histogram, [s])
        q = scene(100, [[0, 0, 0], [1, 0, 0]], [0, 1])
        found = query_candidates(index, q.histogram, q, 0.2, 0.6, 10)
        assert [c.scene_id for c in found] == [5]

    def test_exclusion_window_drops_self(self):
        index = PlaceIndex(4)
        s = scene(95, [[0, 0, 0]], [0])
        index.add_submap(0, s.histogram, [s])
        q = scene(100, [[0, 0, 0]], [0])
        assert query_candidates(index, q.histogram, q, 0.2, 0.6, 10) == []
        assert [c.scene_id for c in query_candidates(index, q.histogram, q, 0.2, 0.6, 4)] == [95]

    def test_matches_brute_force(self, rng):
        dim = 5
        index = PlaceIndex(dim)
        scenes = []
        for sid in range(200):
            hist = rng.dirichlet(np.ones(dim))
            s = SceneDescriptor(sid, sid, hist, np.zeros((1, 3)), (label(0),), Pose())
            index.add_submap(sid, hist, [s])
            scenes.append(s)
        tau_jsd, r_l2 = 0.15, 0.5
        for _ in range(10):
            qh = rng.dirichlet(np.ones(dim))
            q = SceneDescriptor(1000, 1000, qh, np.zeros((1, 3)), (label(0),), Pose())
            got = {c.scene_id for c in query_candidates(index, qh, q, tau_jsd, r_l2, 10)}
            expect = {
                s.scene_id
                for s in scenes
                if jsd(qh, s.histogram) <= tau_jsd
                and np.linalg.norm(qh - s.histogram) <= r_l2
            }
            assert got == expect


class TestSceneLaplacian:
    def test_single_landmark(self):
        L = scene_laplacian(scene(0, [[0, 0, 0]], [0]), 5.0)
        assert L.shape == (1, 1) and L[0, 0] == 0.0

    def test_two_close_landmarks(self):
        L = scene_laplacian(scene(0, [[0, 0, 0], [1, 0, 0]], [0, 0]), 5.0)
        assert np.allclose(L, [[1.0, -1.0], [-1.0, 1.0]])

    def test_row_sums_zero(self, rng):
        s = scene(0, rng.uniform(-5, 5, (8, 3)), rng.integers(0, 3, 8).tolist())
        L = scene_laplacian(s, 4.0)
        assert np.allclose(L.sum(axis=1), 0.0)
        assert np.allclose(L, L.T)

    def test_node_order_is_class_then_centroid_distance(self):
        # reordering input landmarks must not change the matrix
        pos = [[0, 0, 0], [3, 0, 0], [0, 2, 0]]
        cls = [1, 0, 1]
        L1 = scene_laplacian(scene(0, pos, cls), 10.0)
        perm = [2, 0, 1]
        L2 = scene_laplacian(scene(0, [pos[i] for i in perm], [cls[i] for i in perm]), 10.0)
        assert np.allclose(L1, L2)

    def test_empty_scene_rejected(self):
        s = SceneDescriptor(0, 0, np.array([1.0]), np.zeros((0, 3)), (), Pose())
        with pytest.raises(ContractViolation):
            scene_laplacian(s, 1.0)


class TestNccScore:
    def test_identical_nonconstant(self):
        L = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert ncc_score(L, L) == 1.0

    def test_negated(self):
        L = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert ncc_score(L, -L) == -1.0

    def test_affine_invariance(self, rng):
        L = rng.standard_normal((4, 4))
        assert ncc_score(3.0 * L + 7.0, L) == pytest.approx(1.0, abs=1e-12)

    def test_matches_direct_formula(self, rng):
        A = rng.standard_normal((4, 4))
        B = rng.standard_normal((4, 4))
        a = A.ravel() - A.mean()
        b = B.ravel() - B.mean()
        expect = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert ncc_score(A, B) == pytest.approx(expect, abs=1e-12)

    def test_zero_padding_of_smaller_matrix(self):
        A = np.array([[1.0, -1.0], [-1.0, 1.0]])
        B3 = np.zeros((3, 3))
        B3[:2, :2] = A
        assert ncc_score(A, B3) == pytest.approx(ncc_score(B3, B3), abs=1e-9)

    def test_both_constant_equal(self):
        assert ncc_score(np.zeros((2, 2)), np.zeros((3, 3))) == 1.0

    def test_one_constant(self):
        assert ncc_score(np.zeros((2, 2)), np.array([[1.0, -1.0], [-1.0, 1.0]])) == 0.0


class TestSceneMatch:
    def test_perfect_overlap_same_classes(self):
        pos = [[0, 0, 0], [1, 0, 0], [0, 1, 0]]
        a = scene(0, pos, [0, 1, 2])
        b = scene(1, pos, [0, 1, 2])
        score, pairs = scene_match(a, b)
        assert score == pytest.approx(3.0)
        assert all(p.same_class and p.normalized_cost == 0.0 for p in pairs)

    def test_cross_class_pair_at_zero_distance(self):
        a = scene(0, [[0, 0, 0]], [0])
        b = scene(1, [[0, 0, 0]], [1])
        score, pairs = scene_match(a, b, penalty_p=0.5)
        assert score == pytest.approx(0.5)
        assert not pairs[0].same_class

    def test_distant_pair_contributes_one(self):
        # normalized distance capped at 2 makes s_match 0 regardless of class
        a = scene(0, [[0, 0, 0]], [0])
        b = scene(1, [[100, 0, 0]], [1])
        score, _ = scene_match(a, b, penalty_p=0.5, dist_norm_scale=5.0)
        assert score == pytest.approx(1.0)

    def test_symmetry(self, rng):
        pa = rng.uniform(-3, 3, (4, 3))
        pb = rng.uniform(-3, 3, (4, 3))
        cls = [0, 1, 2, 0]
        a = scene(0, pa, cls)
        b = scene(1, pb, cls)
        sa, _ = scene_match(a, b)
        sb, _ = scene_match(b, a)
        assert sa == pytest.approx(sb, abs=1e-9)

    def test_prefers_same_class_matching(self):
        # two classes arranged so the class-blind nearest pairing is crossed
        a = scene(0, [[0, 0, 0], [1, 0, 0]], [0, 1])
        b = scene(1, [[0.9, 0, 0], [0.1, 0, 0]], [0, 1])
        _, pairs = scene_match(a, b)
        assert all(p.same_class for p in pairs)

    def test_distance_weighted_mode(self):
        a = scene(0, [[0, 0, 0]], [0])
        b = scene(1, [[0, 0, 0]], [0])
        # same class at distance 0: term 1 - (1-1)(1-0) = 1
        score, _ = scene_match(a, b, term_mode="distance_weighted")
        assert score == pytest.approx(1.0)
        c = scene(2, [[10.0, 0, 0]], [0])
        # same class at capped distance: s_match 0 -> term 1 - 1*1 = 0
        score2, _ = scene_match(a, c, term_mode="distance_weighted")
        assert score2 == pytest.approx(0.0)

    def test_empty_scene_rejected(self):
        a = scene(0, [[0, 0, 0]], [0])
        empty = SceneDescriptor(1, 0, np.zeros(4), np.zeros((0, 3)), (), Pose())
        with pytest.raises(ContractViolation):
            scene_match(a, empty)


class TestBayesUpdate:
    def test_positive_observation_spot_value(self):
        belief = BayesBelief(p_lc=0.5)
        out = bayes_update(belief, True)
        assert out.p_lc == pytest.approx(8.0 / 9.0, rel=1e-12)

    def test_uninformative_likelihood_keeps_prediction(self):
        belief = BayesBelief(p_lc=0.5, p_pos_given_lc=0.3, p_pos_given_no=0.3)
        assert bayes_update(belief, True).p_lc == pytest.approx(0.5)

    def test_repeated_negatives_monotone_to_fixed_point(self):
        belief = BayesBelief(p_lc=0.9)
        values = []
        for _ in range(20):
            belief = bayes_update(belief, False)
            values.append(belief.p_lc)
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
        assert values[-1] == pytest.approx(values[-2], abs=1e-6)

    def test_probability_stays_in_unit_interval(self, rng):
        belief = BayesBelief(p_lc=float(rng.random()))
        for _ in range(50):
            belief = bayes_update(belief, bool(rng.random() < 0.5))
            assert 0.0 <= belief.p_lc <= 1.0

    def test_invalid_probability_rejected(self):
        with pytest.raises(ContractViolation):
            BayesBelief(p_lc=1.5)


class TestRansacVerify:
    def test_exact_transform_recovered(self, rng):
        src = rng.uniform(-5, 5, (10, 3))
        R = exp_so3(np.array([0.2, -0.1, 0.4]))
        t = np.array([3.0, -1.0, 0.5])
        dst = src @ R.T + t
        pose, mask = ransac_verify(src, dst, np.random.default_rng(0), 200, 0.5, 4)
        assert mask.all()
        assert np.allclose(pose.rot(), R, atol=1e-9)
        assert np.allclose(pose.translation, t, atol=1e-9)

    def test_half_outliers_rejected_from_consensus(self, rng):
        src = rng.uniform(-5, 5, (12, 3))
        R = exp_so3(np.array([0.0, 0.0, 0.5]))
        t = np.array([1.0, 2.0, 0.0])
        dst = src @ R.T + t
        dst[6:] += rng.uniform(10.0, 20.0, (6, 3)) * np.sign(rng.standard_normal((6, 3)))
        pose, mask = ransac_verify(src, dst, np.random.default_rng(1), 200, 0.5, 4)
        assert mask[:6].all() and not mask[6:].any()
        assert np.allclose(pose.rot(), R, atol=1e-6)

    def test_two_pairs_rejected(self):
        assert ransac_verify(np.zeros((2, 3)), np.zeros((2, 3)), np.random.default_rng(0)) is None

    def test_min_inliers_enforced(self, rng):
        src = rng.uniform(-5, 5, (5, 3))
        dst = src.copy()
        assert ransac_verify(src, dst, np.random.default_rng(0), 100, 0.5, min_inliers=6) is None

    def test_deterministic_under_seed(self, rng):
        src = rng.uniform(-5, 5, (10, 3))
        dst = src + np.array([1.0, 0.0, 0.0])
        dst[7:] += 25.0
        a = ransac_verify(src, dst, np.random.default_rng(7), 100, 0.5, 4)
        b = ransac_verify(src, dst, np.random.default_rng(7), 100, 0.5, 4)
        assert a[1].tolist() == b[1].tolist()
        assert a[0].approx_equal(b[0])

    def test_rigid_transform_svd_is_least_squares(self, rng):
        src = rng.uniform(-2, 2, (6, 3))
        R_true = exp_so3(np.array([0.3, 0.2, -0.1]))
        t_true = np.array([0.5, -0.2, 1.0])
        dst = src @ R_true.T + t_true
        R, t = rigid_transform_svd(src, dst)
        assert np.allclose(R, R_true, atol=1e-9)
        assert np.allclose(t, t_true, atol=1e-9)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


class TestVerifyPair:
    def test_identical_scenes_pass(self):
        pos = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 1, 0], [1, 2, 0]]
        a = scene(0, pos, [0, 1, 2, 3, 0])
        b = scene(50, pos, [0, 1, 2, 3, 0])
        ok, s_ncc, s_scene, _ = verify_pair(a, b, VerifyThresholds(tau_verify=4.0))
        assert ok and s_ncc == pytest.approx(1.0) and s_scene == pytest.approx(5.0)

    def test_infinite_threshold_always_fails(self):
        a = scene(0, [[0, 0, 0]], [0])
        ok, _, _, _ = verify_pair(a, a, VerifyThresholds(tau_verify=np.inf))
        assert not ok

    def test_empty_scene_fails_quietly(self):
        a = scene(0, [[0, 0, 0]], [0])
        empty = SceneDescriptor(1, 0, np.zeros(4), np.zeros((0, 3)), (), Pose())
        ok, s_ncc, s_scene, pairs = verify_pair(a, empty, VerifyThresholds())
        assert not ok and pairs == []


class TestLoopClosureDetector:
    @staticmethod
    def grid_scene(scene_id, submap_id, pose, world_points, class_ids, dim=4):
        """Scene descriptor from world landmarks seen at a given pose."""
        body = np.stack([pose.transform_inverse(p) for p in world_points])
        return scene(scene_id, body, class_ids, submap_id=submap_id, dim=dim, pose=pose)

    def make_world(self, rng, n=10):
        pts = rng.uniform(-6, 6, (n, 3))
        pts[:, 2] = 0.0
        cls = (np.arange(n) % 4).tolist()
        return pts, cls

    def test_revisit_detected_with_relative_pose(self, rng):
        pts, cls = self.make_world(rng)
        first = Pose(np.zeros(3), quat_from_yaw(0.0))
        revisit = Pose(np.array([0.3, -0.2, 0.0]), quat_from_yaw(0.15))
        det = LoopClosureDetector(dim=4, exclusion_window=10, ransac_min_inliers=4, tau_jsd=0.3, r_l2=0.8)
        s0 = self.grid_scene(0, 0, first, pts, cls)
        det.add_submap(0, s0.histogram, [s0])
        q = self.grid_scene(40, 1, revisit, pts, cls)
        closures = det.detect(q.histogram, q)
        assert len(closures) == 1
        lc = closures[0]
        assert lc.candidate_scene == 0 and lc.query_scene == 40
        assert len(lc.inlier_pairs) >= 4
        # relative pose maps candidate body frame onto query body frame:
        # T_rel = T_query^{-1} T_cand
        expect = revisit.inverse().compose(first)
        assert np.allclose(lc.relative_pose.translation, expect.translation, atol=1e-6)

    def test_exclusion_window_blocks_nearby_scene(self, rng):
        pts, cls = self.make_world(rng)
        pose = Pose()
        det = LoopClosureDetector(dim=4, exclusion_window=50, ransac_min_inliers=4)
        s0 = self.grid_scene(0, 0, pose, pts, cls)
        det.add_submap(0, s0.histogram, [s0])
        q = self.grid_scene(40, 1, pose, pts, cls)
        assert det.detect(q.histogram, q) == []

    def test_unrelated_scene_rejected(self, rng):
        pts, cls = self.make_world(rng)
        other_pts = rng.uniform(-6, 6, (10, 3))
        other_pts[:, 2] = 0.0
        det = LoopClosureDetector(dim=4, exclusion_window=10, ransac_min_inliers=6)
        s0 = self.grid_scene(0, 0, Pose(), pts, cls)
        det.add_submap(0, s0.histogram, [s0])
        q = self.grid_scene(40, 1, Pose(), other_pts, cls)
        assert det.detect(q.histogram, q) == []

    def test_at_most_one_closure_per_query(self, rng):
        pts, cls = self.make_world(rng)
        det = LoopClosureDetector(dim=4, exclusion_window=5, ransac_min_inliers=4)
        s0 = self.grid_scene(0, 0, Pose(), pts, cls)
        s1 = self.grid_scene(10, 0, Pose(np.array([0.1, 0, 0])), pts, cls)
        det.add_submap(0, s0.histogram, [s0, s1])
        q = self.grid_scene(40, 1, Pose(np.array([0.2, 0.1, 0.0])), pts, cls)
        closures = det.detect(q.histogram, q)
        assert len(closures) == 1
