"""Dirichlet-process data association: case likelihoods, assignment prior,
cost matrices, the Hungarian solve, and alternative-branch generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .core import ClassLabel, ContractViolation, Landmark, SemanticMeasurement, check_spd

LOG_ZERO = -1e18  # log-domain sentinel for impossible events
_LOG2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# parameters and assignment targets


@dataclass(frozen=True, eq=False)
class AssocParams:
    """Tunables of the association model.

    fp_norm_constant is the proportionality constant of the false-positive
    likelihood (the model only fixes it up to proportionality; it cancels in
    the ranking of assignments within a time step).
    """

    meas_cov: np.ndarray
    trans_cov_by_class: Mapping[ClassLabel, np.ndarray]
    dirichlet_alpha: float = 1.0
    fp_rate: float = 0.1
    map_volume: float = 1000.0
    lambda_new: float = 0.5
    lambda_fp: float = 0.2
    prior_volume: float = 1.0
    class_prior: Mapping[ClassLabel, float] = field(default_factory=dict)
    dirac_classes: frozenset = frozenset()
    dp_weight_mode: str = "exp"  # "exp" follows the printed model, "linear" the standard DP weight
    fp_norm_constant: float = 1.0
    # candidates enter the false-positive denominator only inside this
    # squared-Mahalanobis validation gate (chi-square 99%, 3 dof); without it
    # any far-off candidate density drives the false-positive likelihood to
    # infinity and clutter swallows the map
    candidate_gate: float = 11.345

    def __post_init__(self):
        object.__setattr__(self, "meas_cov", np.asarray(self.meas_cov, dtype=float))
        check_spd(self.meas_cov)
        for cov in self.trans_cov_by_class.values():
            check_spd(np.asarray(cov))
        for name in ("dirichlet_alpha", "fp_rate", "map_volume", "lambda_new", "lambda_fp", "prior_volume"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")
        if self.dp_weight_mode not in ("exp", "linear"):
            raise ContractViolation("dp_weight_mode must be 'exp' or 'linear'")

    def log_class_prior(self, label: ClassLabel) -> float:
        p = self.class_prior.get(label)
        if p is None:
            return 0.0 if not self.class_prior else LOG_ZERO
        if not (0.0 < p <= 1.0):
            raise ContractViolation("class_prior values must lie in (0, 1]")
        return math.log(p)


@dataclass(frozen=True)
class Existing:
    landmark_id: int


@dataclass(frozen=True)
class Previous:
    landmark_id: int


@dataclass(frozen=True)
class New:
    pass


@dataclass(frozen=True)
class FalsePositive:
    pass


AssignmentTarget = Union[Existing, Previous, New, FalsePositive]


@dataclass(frozen=True)
class Assignment:
    """Per-measurement targets for one time step plus bookkeeping counts."""

    targets: Tuple[AssignmentTarget, ...]
    n_new: int
    n_fp: int
    n_meas: int
    total_cost: float = 0.0

    def __post_init__(self):
        if self.n_new + self.n_fp > self.n_meas:
            raise ContractViolation("n_new + n_fp exceeds measurement count")
        seen = set()
        for t in self.targets:
            if isinstance(t, (Existing, Previous)):
                if t.landmark_id in seen:
                    raise ContractViolation("landmark assigned to more than one measurement")
                seen.add(t.landmark_id)

    @staticmethod
    def from_targets(targets: Sequence[AssignmentTarget], total_cost: float = 0.0) -> "Assignment":
        targets = tuple(targets)
        return Assignment(
            targets,
            sum(isinstance(t, New) for t in targets),
            sum(isinstance(t, FalsePositive) for t in targets),
            len(targets),
            total_cost,
        )


@dataclass
class AssociationState:
    """Landmark sets visible to the association step of one hypothesis."""

    existing: Dict[int, Landmark] = field(default_factory=dict)
    previous: Dict[int, Landmark] = field(default_factory=dict)
    n_fp_total: int = 0

    def landmark(self, target: AssignmentTarget) -> Landmark:
        if isinstance(target, Existing):
            return self.existing[target.landmark_id]
        if isinstance(target, Previous):
            return self.previous[target.landmark_id]
        raise KeyError(target)


# ---------------------------------------------------------------------------
# densities


_CHOL_CACHE: Dict[bytes, np.ndarray] = {}


def _cached_cholesky(cov: np.ndarray) -> np.ndarray:
    cov = np.ascontiguousarray(cov, dtype=float)
    key = cov.shape[0].to_bytes(2, "little") + cov.tobytes()
    L = _CHOL_CACHE.get(key)
    if L is None:
        if len(_CHOL_CACHE) > 256:
            _CHOL_CACHE.clear()
        L = np.linalg.cholesky(cov)
        _CHOL_CACHE[key] = L
    return L


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(mean, dtype=float)
    L = _cached_cholesky(cov)
    y = np.linalg.solve(L, d)
    return -0.5 * float(y @ y) - float(np.log(np.diag(L)).sum()) - 0.5 * d.size * _LOG2PI


def _previous_logpdf(m: SemanticMeasurement, lm: Landmark, params: AssocParams) -> float:
    """Transitional-density case: Dirac sifting or the Gaussian convolution."""
    if lm.label in params.dirac_classes:
        return gaussian_logpdf(m.position, lm.mean, params.meas_cov)
    trans = params.trans_cov_by_class.get(lm.label)
    if trans is None:
        raise ContractViolation(f"no transitional covariance for class {lm.label.id}")
    return gaussian_logpdf(m.position, lm.mean, params.meas_cov + np.asarray(trans))


def _gated(logpdf: float, cov: np.ndarray, params: AssocParams) -> bool:
    """A candidate is inside the validation gate iff its squared Mahalanobis
    distance (recovered from the log density) is within candidate_gate."""
    L = _cached_cholesky(cov)
    maha = -2.0 * (logpdf + float(np.log(np.diag(L)).sum()) + 1.5 * _LOG2PI)
    return maha <= params.candidate_gate


def _candidate_logpdfs(m: SemanticMeasurement, state: AssociationState, params: AssocParams) -> List[float]:
    """Densities f(z | theta=j) of class-matched landmarks inside the gate."""
    out = []
    for lm in state.existing.values():
        if lm.label == m.label:
            lp = gaussian_logpdf(m.position, lm.mean, params.meas_cov)
            if _gated(lp, params.meas_cov, params):
                out.append(lp)
    for lm in state.previous.values():
        if lm.label == m.label:
            lp = _previous_logpdf(m, lm, params)
            if lm.label in params.dirac_classes:
                cov = params.meas_cov
            else:
                cov = params.meas_cov + np.asarray(params.trans_cov_by_class[lm.label])
            if _gated(lp, cov, params):
                out.append(lp)
    return out


def association_log_likelihood(
    m: SemanticMeasurement,
    target: AssignmentTarget,
    state: AssociationState,
    params: AssocParams,
) -> float:
    """Log of the four-case association likelihood. Class mismatch -> LOG_ZERO."""
    if isinstance(target, Existing):
        lm = state.existing[target.landmark_id]
        if lm.label != m.label:
            return LOG_ZERO
        if params.dp_weight_mode == "exp":
            dp = float(lm.assign_count)
        else:
            dp = math.log(lm.assign_count)
        return dp + gaussian_logpdf(m.position, lm.mean, params.meas_cov)
    if isinstance(target, Previous):
        lm = state.previous[target.landmark_id]
        if lm.label != m.label:
            return LOG_ZERO
        return _previous_logpdf(m, lm, params)
    if isinstance(target, New):
        return math.log(params.dirichlet_alpha) - math.log(params.map_volume)
    if isinstance(target, FalsePositive):
        if state.n_fp_total > 0:
            num = math.log(params.fp_rate) + math.log(state.n_fp_total)
        else:
            num = math.log(params.fp_rate) + math.log(params.dirichlet_alpha)
        return math.log(params.fp_norm_constant) + num - sum(_candidate_logpdfs(m, state, params))
    raise TypeError(f"unknown target {target!r}")


def association_likelihood(m, target, state, params) -> float:
    ll = association_log_likelihood(m, target, state, params)
    return 0.0 if ll <= LOG_ZERO else math.exp(ll)


def measurement_set_log_likelihood(
    assignment: Assignment,
    measurements: Sequence[SemanticMeasurement],
    state: AssociationState,
    params: AssocParams,
) -> float:
    """Joint measurement log-likelihood under conditional independence."""
    if len(assignment.targets) != len(measurements):
        raise ContractViolation("assignment does not cover all measurements")
    total = 0.0
    for m, target in zip(measurements, assignment.targets):
        if isinstance(target, (Existing, Previous)):
            lm = state.landmark(target)
            if lm.label != m.label:
                return LOG_ZERO
            total += params.log_class_prior(m.label)
            if isinstance(target, Existing):
                total += gaussian_logpdf(m.position, lm.mean, params.meas_cov)
            else:
                total += _previous_logpdf(m, lm, params)
        else:
            total += association_log_likelihood(m, target, state, params)
        if total <= LOG_ZERO:
            return LOG_ZERO
    return total


def _poisson_logpmf(n: int, mean: float) -> float:
    return -mean + n * math.log(mean) - math.lgamma(n + 1)


def assignment_prior_log(assignment: Assignment, params: AssocParams) -> float:
    """Log prior of the (n_new, n_fp) pattern with Poisson count priors."""
    n_new, n_fp, n_meas = assignment.n_new, assignment.n_fp, assignment.n_meas
    log_comb = math.lgamma(n_new + 1) + math.lgamma(n_fp + 1) - math.lgamma(n_meas + 1)
    return (
        log_comb
        + _poisson_logpmf(n_new, params.lambda_new * params.prior_volume)
        + _poisson_logpmf(n_fp, params.lambda_fp * params.prior_volume)
    )


# ---------------------------------------------------------------------------
# cost matrix and Hungarian solve


@dataclass(eq=False)
class CostMatrix:
    """Negative log association likelihoods; rows = measurements.

    Columns: existing landmarks, previous landmarks, then one New and one
    FalsePositive column per measurement (forbidden for the other rows).
    """

    matrix: np.ndarray
    column_targets: List[AssignmentTarget]
    n_landmark_cols: int

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]


def build_cost_matrix(
    measurements: Sequence[SemanticMeasurement],
    state: AssociationState,
    params: AssocParams,
) -> CostMatrix:
    n = len(measurements)
    existing_ids = sorted(state.existing)
    previous_ids = sorted(state.previous)
    n_lm = len(existing_ids) + len(previous_ids)
    targets: List[AssignmentTarget] = [Existing(k) for k in existing_ids]
    targets += [Previous(k) for k in previous_ids]
    for _ in range(n):
        targets.append(New())
    for _ in range(n):
        targets.append(FalsePositive())
    mat = np.full((n, n_lm + 2 * n), kernels.BIG)
    if n == 0:
        return CostMatrix(mat, targets, n_lm)
    pos = np.stack([m.position for m in measurements])
    meas_class = np.array([m.label.id for m in measurements])
    # landmark columns, grouped by covariance so each group shares one Cholesky
    col_lms = [state.existing[k] for k in existing_ids] + [state.previous[k] for k in previous_ids]
    col_class = np.array([lm.label.id for lm in col_lms], dtype=int) if n_lm else np.empty(0, dtype=int)
    dp_bonus = np.zeros(n_lm)
    groups: Dict[bytes, List[int]] = {}
    group_cov: Dict[bytes, np.ndarray] = {}
    for j, lm in enumerate(col_lms):
        if j < len(existing_ids):
            dp_bonus[j] = float(lm.assign_count) if params.dp_weight_mode == "exp" else math.log(lm.assign_count)
            cov = params.meas_cov
        elif lm.label in params.dirac_classes:
            cov = params.meas_cov
        else:
            trans = params.trans_cov_by_class.get(lm.label)
            if trans is None:
                raise ContractViolation(f"no transitional covariance for class {lm.label.id}")
            cov = params.meas_cov + np.asarray(trans)
        key = np.ascontiguousarray(cov, dtype=float).tobytes()
        groups.setdefault(key, []).append(j)
        group_cov[key] = cov
    density = np.full((n, n_lm), np.nan)
    gated = np.zeros((n, n_lm), dtype=bool)
    for key, cols in groups.items():
        L = _cached_cholesky(group_cov[key])
        logdet = float(np.log(np.diag(L)).sum())
        means = np.stack([col_lms[j].mean for j in cols])
        diffs = pos[:, None, :] - means[None, :, :]  # (n, k, 3)
        y = np.linalg.solve(L, diffs.reshape(-1, 3).T)
        maha = np.sum(y * y, axis=0).reshape(n, len(cols))
        density[:, cols] = -0.5 * maha - logdet - 1.5 * _LOG2PI
        gated[:, cols] = maha <= params.candidate_gate
    if n_lm:
        match = meas_class[:, None] == col_class[None, :]
        density[~match] = np.nan
        gated &= match
        ll_lm = density + dp_bonus[None, :]
        mat[:, :n_lm] = np.where(np.isnan(ll_lm), kernels.BIG, -ll_lm)
    new_cost = -(math.log(params.dirichlet_alpha) - math.log(params.map_volume))
    if state.n_fp_total > 0:
        fp_num = math.log(params.fp_rate) + math.log(state.n_fp_total)
    else:
        fp_num = math.log(params.fp_rate) + math.log(params.dirichlet_alpha)
    cand_sum = np.sum(np.where(gated, density, 0.0), axis=1) if n_lm else np.zeros(n)
    fp_cost = -(math.log(params.fp_norm_constant) + fp_num - cand_sum)
    for i in range(n):
        mat[i, n_lm + i] = new_cost
        mat[i, n_lm + n + i] = fp_cost[i]
    return CostMatrix(mat, targets, n_lm)


class InfeasibleAssignment(RuntimeError):
    pass


def _assignment_from_cols(cm: CostMatrix, row_to_col: np.ndarray, total: float) -> Assignment:
    return Assignment.from_targets([cm.column_targets[j] for j in row_to_col], total)


def _lex_refine(cm: CostMatrix, row_to_col: np.ndarray, u: np.ndarray, v: np.ndarray, total: float, tol: float):
    """Deterministic tie break: lexicographically smallest optimal assignment
    (lowest column per row, rows in order). Zero reduced cost is necessary
    for a cell to appear in any optimal assignment, so ties are cheap to find."""
    mat = cm.matrix
    n = cm.n_rows
    fixed = mat.copy()
    current = row_to_col.copy()
    for i in range(n):
        assigned = current[i]
        # candidate columns with (near-)zero reduced cost, in ascending order
        red = mat[i] - u[i] - v
        for j in range(mat.shape[1]):
            if j == assigned:
                break  # assigned column is already optimal and lowest remaining
            if red[j] <= tol and mat[i, j] < kernels.BIG / 2:
                trial = fixed.copy()
                trial[i, :] = kernels.BIG
                trial[i, j] = mat[i, j]
                r2c, _, _, t2 = kernels.lap_solve(trial)
                if t2 <= total + tol:
                    current = r2c
                    assigned = j
                    break
        fixed[i, :] = kernels.BIG
        fixed[i, assigned] = mat[i, assigned]
    return current


def solve_assignment(cm: CostMatrix) -> Assignment:
    """Minimum-cost assignment; ties resolved toward low row then column index."""
    if cm.n_rows == 0:
        return Assignment.from_targets([], 0.0)
    row_to_col, u, v, total = kernels.lap_solve(cm.matrix)
    if total >= kernels.BIG / 2:
        raise InfeasibleAssignment("no finite assignment exists")
    tol = 1e-9 * max(1.0, abs(total))
    row_to_col = _lex_refine(cm, row_to_col, u, v, total, tol)
    return _assignment_from_cols(cm, row_to_col, float(cm.matrix[np.arange(cm.n_rows), row_to_col].sum()))


def generate_branches(
    cm: CostMatrix,
    best: Assignment,
    max_branches: int = 5,
    plausibility_gap: float = 6.0,
) -> List[Assignment]:
    """Alternative assignments by repeatedly forbidding the previous optimum.

    Returns [best, ...] sorted by ascending cost; stops at max_branches or
    once a re-solve exceeds best cost + plausibility_gap.
    """
    if max_branches < 1:
        raise ContractViolation("max_branches must be >= 1")
    branches = [best]
    if cm.n_rows == 0 or max_branches == 1:
        return branches
    mat = cm.matrix.copy()
    prev = best
    prev_cols = {i: j for i, j in enumerate(_cols_of(cm, best))}
    while len(branches) < max_branches:
        for i, j in prev_cols.items():
            mat[i, j] = kernels.BIG
        row_to_col, u, v, total = kernels.lap_solve(mat)
        if total >= kernels.BIG / 2:
            break
        if total > best.total_cost + plausibility_gap:
            break
        tol = 1e-9 * max(1.0, abs(total))
        sub = CostMatrix(mat, cm.column_targets, cm.n_landmark_cols)
        row_to_col = _lex_refine(sub, row_to_col, u, v, total, tol)
        total = float(mat[np.arange(cm.n_rows), row_to_col].sum())
        prev = _assignment_from_cols(cm, row_to_col, total)
        branches.append(prev)
        prev_cols = {i: j for i, j in enumerate(row_to_col)}
    return branches


def _cols_of(cm: CostMatrix, assignment: Assignment) -> List[int]:
    """Recover column indices of an assignment's targets in this matrix."""
    cols = []
    used_new = cm.n_landmark_cols
    used_fp = cm.n_landmark_cols + cm.n_rows
    lm_col = {t: j for j, t in enumerate(cm.column_targets[: cm.n_landmark_cols])}
    for i, t in enumerate(assignment.targets):
        if isinstance(t, New):
            cols.append(cm.n_landmark_cols + i)
        elif isinstance(t, FalsePositive):
            cols.append(cm.n_landmark_cols + cm.n_rows + i)
        else:
            cols.append(lm_col[t])
    return cols
