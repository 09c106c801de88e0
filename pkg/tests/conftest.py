"""Shared fixtures and helpers for the test suite."""

import itertools

import numpy as np
import pytest

from semslam.assoc import (
    Assignment,
    AssociationState,
    AssocParams,
    Existing,
    FalsePositive,
    New,
    Previous,
)
from semslam.core import ClassLabel, Landmark, SemanticMeasurement


def label(i: int) -> ClassLabel:
    return ClassLabel(i, f"class_{i}")


def meas(position, class_id=0, scene_id=0, time=0.0) -> SemanticMeasurement:
    return SemanticMeasurement(scene_id, time, np.asarray(position, dtype=float), label(class_id))


def landmark(lid, position, class_id=0, cov=None, assign_count=1) -> Landmark:
    cov = np.eye(3) if cov is None else np.asarray(cov, dtype=float)
    return Landmark(lid, label(class_id), np.asarray(position, dtype=float), cov, assign_count)


def random_spd(rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    A = rng.standard_normal((3, 3))
    return scale * (A @ A.T + 3.0 * np.eye(3))


def simple_params(**overrides) -> AssocParams:
    defaults = dict(
        meas_cov=np.eye(3),
        trans_cov_by_class={label(i): np.eye(3) for i in range(4)},
        dirichlet_alpha=1.0,
        fp_rate=0.1,
        map_volume=1000.0,
        lambda_new=0.5,
        lambda_fp=0.2,
        prior_volume=1.0,
    )
    defaults.update(overrides)
    return AssocParams(**defaults)


def brute_force_assignment(cost: np.ndarray):
    """Exhaustive minimum-cost row->column assignment (rows <= cols)."""
    n, m = cost.shape
    best_cols, best_total = None, np.inf
    for perm in itertools.permutations(range(m), n):
        total = sum(cost[i, j] for i, j in enumerate(perm))
        if total < best_total - 1e-12:
            best_total = total
            best_cols = perm
    return best_cols, best_total


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ---------------------------------------------------------------------------
# independent posterior oracle: scores every assignment sequence with scipy
# densities and closed-form Kalman updates (no code shared with the package)


def oracle_step_score(ms, combo, existing, previous, n_fp, params):
    """Log measurement-set likelihood + log assignment prior for one step.

    existing/previous: dict id -> (class_id, mean, cov_unused, count).
    """
    from scipy.stats import multivariate_normal, poisson

    total = 0.0
    for m, target in zip(ms, combo):
        kind, lid = target
        if kind == "E" or kind == "P":
            table = existing if kind == "E" else previous
            cls, mean, _, _ = table[lid]
            if cls != m.label.id:
                return -np.inf
            cov = params.meas_cov if kind == "E" else params.meas_cov + np.asarray(
                params.trans_cov_by_class[m.label]
            )
            total += multivariate_normal.logpdf(m.position, mean=mean, cov=cov)
        elif kind == "N":
            total += np.log(params.dirichlet_alpha) - np.log(params.map_volume)
        else:  # false positive
            num = np.log(params.fp_rate) + np.log(n_fp if n_fp > 0 else params.dirichlet_alpha)
            denom = 0.0
            for table, extra in ((existing, None), (previous, "trans")):
                for cls, mean, _, _ in table.values():
                    if cls != m.label.id:
                        continue
                    cov = params.meas_cov
                    if extra == "trans":
                        cov = cov + np.asarray(params.trans_cov_by_class[m.label])
                    d = m.position - mean
                    if float(d @ np.linalg.solve(cov, d)) <= params.candidate_gate:
                        denom += multivariate_normal.logpdf(m.position, mean=mean, cov=cov)
            total += num - denom
    n_new = sum(1 for k, _ in combo if k == "N")
    n_fp_new = sum(1 for k, _ in combo if k == "F")
    n_meas = len(combo)
    from math import lgamma

    total += lgamma(n_new + 1) + lgamma(n_fp_new + 1) - lgamma(n_meas + 1)
    total += poisson.logpmf(n_new, params.lambda_new * params.prior_volume)
    total += poisson.logpmf(n_fp_new, params.lambda_fp * params.prior_volume)
    return float(total)


def oracle_apply(ms, combo, existing, previous, n_fp, params):
    """Closed-form Kalman state update for one step; returns new state."""
    existing = dict(existing)
    previous = dict(previous)
    R = np.asarray(params.meas_cov)
    for m, (kind, lid) in zip(ms, combo):
        if kind == "N":
            nid = max(list(existing) + list(previous), default=-1) + 1
            existing[nid] = (m.label.id, m.position.copy(), R.copy(), 1)
        elif kind == "F":
            n_fp += 1
        else:
            table = existing if kind == "E" else previous
            cls, mean, P, count = table[lid]
            K = P @ np.linalg.inv(P + R)
            mean = mean + K @ (m.position - mean)
            P = (np.eye(3) - K) @ P
            if kind == "P":
                del previous[lid]
            existing[lid] = (cls, mean, P, count + 1)
    return existing, previous, n_fp


def oracle_enumerate_combos(ms, existing, previous):
    """All valid per-step target combos as tuples of (kind, id)."""
    opts = []
    for m in ms:
        o = [("N", None), ("F", None)]
        o += [("E", lid) for lid in existing]
        o += [("P", lid) for lid in previous]
        opts.append(o)
    for combo in itertools.product(*opts):
        used = [lid for kind, lid in combo if kind in ("E", "P")]
        if len(used) == len(set(used)):
            yield combo


def exhaustive_posterior_best(episodes, params):
    """Best total score over every assignment sequence (depth-first)."""
    best = [-np.inf]

    def recurse(t, existing, previous, n_fp, score):
        if t == len(episodes):
            if score > best[0]:
                best[0] = score
            return
        ms = episodes[t]
        for combo in oracle_enumerate_combos(ms, existing, previous):
            s = oracle_step_score(ms, combo, existing, previous, n_fp, params)
            if not np.isfinite(s):
                continue
            e2, p2, f2 = oracle_apply(ms, combo, existing, previous, n_fp, params)
            recurse(t + 1, e2, p2, f2, score + s)

    recurse(0, {}, {}, 0, 0.0)
    return best[0]


def tree_combo_branches(ms, state):
    """The same exhaustive combos as Assignment objects for the tree side."""
    existing = state.existing
    previous = state.previous
    branches = []
    for combo in oracle_enumerate_combos(ms, existing, previous):
        targets = []
        for kind, lid in combo:
            if kind == "N":
                targets.append(New())
            elif kind == "F":
                targets.append(FalsePositive())
            elif kind == "E":
                targets.append(Existing(lid))
            else:
                targets.append(Previous(lid))
        branches.append(Assignment.from_targets(targets))
    return branches
