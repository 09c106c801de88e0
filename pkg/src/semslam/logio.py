"""Log and output file I/O.

All files are CSV, UTF-8, LF line endings, floats printed with 9
significant digits. Measurement positions are stored in the body frame of
the capturing pose.
"""

from __future__ import annotations

import os
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import LabelRegistry, SemanticMeasurement
from .geometry import Pose

MEASUREMENT_HEADER = "t,scene_id,class_id,x,y,z"
ODOMETRY_HEADER = "t,dx,dy,dz,dqw,dqx,dqy,dqz"
POSE_HEADER = "t,x,y,z,qw,qx,qy,qz"
MAP_HEADER = (
    "landmark_id,class_id,x,y,z,"
    "cov_xx,cov_xy,cov_xz,cov_yx,cov_yy,cov_yz,cov_zx,cov_zy,cov_zz"
)
METRICS_HEADER = "frame,rmse,n_hypotheses,n_landmarks,n_loop_closures"


class LogFormatError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _write(path: str, header: str, rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _read_rows(path: str, header: str, n_cols: int) -> List[List[str]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise LogFormatError(f"{path}: empty log")
    if lines[0] != header:
        raise LogFormatError(f"{path}: bad header {lines[0]!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != n_cols:
            raise LogFormatError(f"{path}: line {lineno}: expected {n_cols} fields, got {len(parts)}")
        rows.append(parts)
    if not rows:
        raise LogFormatError(f"{path}: no data rows")
    return rows


def write_measurements(path: str, per_step: Sequence[Sequence[SemanticMeasurement]], poses: Sequence[Pose]) -> None:
    """per_step[i] are world-frame measurements at the true pose poses[i];
    positions are written in that pose's body frame."""
    rows = []
    for step, measurements in enumerate(per_step):
        pose = poses[step]
        for m in measurements:
            body = pose.transform_inverse(m.position)
            rows.append(
                [_fmt(m.time), str(m.scene_id), str(m.label.id), _fmt(body[0]), _fmt(body[1]), _fmt(body[2])]
            )
    _write(path, MEASUREMENT_HEADER, rows)


def read_measurements(path: str, registry: LabelRegistry, n_steps: int):
    """Body-frame measurements grouped by scene id."""
    per_step: List[List[SemanticMeasurement]] = [[] for _ in range(n_steps)]
    for lineno, parts in enumerate(_read_rows(path, MEASUREMENT_HEADER, 6), start=2):
        try:
            t = float(parts[0])
            scene = int(parts[1])
            class_id = int(parts[2])
            pos = np.array([float(parts[3]), float(parts[4]), float(parts[5])])
        except ValueError as exc:
            raise LogFormatError(f"{path}: line {lineno}: {exc}") from exc
        if not (0 <= scene < n_steps):
            raise LogFormatError(f"{path}: line {lineno}: scene id {scene} out of range")
        per_step[scene].append(SemanticMeasurement(scene, t, pos, registry.by_id(class_id)))
    return per_step


def write_odometry(path: str, increments: Sequence[Pose]) -> None:
    rows = []
    for t, inc in enumerate(increments, start=1):
        q = inc.rotation
        d = inc.translation
        rows.append([_fmt(float(t)), _fmt(d[0]), _fmt(d[1]), _fmt(d[2]), _fmt(q[0]), _fmt(q[1]), _fmt(q[2]), _fmt(q[3])])
    _write(path, ODOMETRY_HEADER, rows)


def read_odometry(path: str) -> List[Pose]:
    out = []
    for lineno, parts in enumerate(_read_rows(path, ODOMETRY_HEADER, 8), start=2):
        try:
            vals = [float(x) for x in parts]
        except ValueError as exc:
            raise LogFormatError(f"{path}: line {lineno}: {exc}") from exc
        out.append(Pose(np.array(vals[1:4]), np.array(vals[4:8])))
    return out


def write_trajectory(path: str, poses: Sequence[Pose], times: Sequence[float] | None = None) -> None:
    rows = []
    for t, pose in enumerate(poses):
        time = float(times[t]) if times is not None else float(t)
        p = pose.translation
        q = pose.rotation
        rows.append([_fmt(time), _fmt(p[0]), _fmt(p[1]), _fmt(p[2]), _fmt(q[0]), _fmt(q[1]), _fmt(q[2]), _fmt(q[3])])
    _write(path, POSE_HEADER, rows)


def read_trajectory(path: str) -> Tuple[List[float], List[Pose]]:
    times = []
    poses = []
    for lineno, parts in enumerate(_read_rows(path, POSE_HEADER, 8), start=2):
        try:
            vals = [float(x) for x in parts]
        except ValueError as exc:
            raise LogFormatError(f"{path}: line {lineno}: {exc}") from exc
        times.append(vals[0])
        poses.append(Pose(np.array(vals[1:4]), np.array(vals[4:8])))
    return times, poses


def write_map(path: str, landmarks) -> None:
    """landmarks: iterable with id, label, mean, cov."""
    rows = []
    for lm in landmarks:
        row = [str(lm.id), str(lm.label.id)] + [_fmt(v) for v in lm.mean]
        row += [_fmt(v) for v in np.asarray(lm.cov).ravel()]
        rows.append(row)
    _write(path, MAP_HEADER, rows)


def write_metrics(path: str, rows: Sequence[Tuple[int, float, int, int, int]]) -> None:
    out = []
    for frame, err, n_hyp, n_lm, n_lc in rows:
        out.append([str(frame), _fmt(err), str(n_hyp), str(n_lm), str(n_lc)])
    _write(path, METRICS_HEADER, out)


def read_metrics(path: str):
    rows = []
    for lineno, parts in enumerate(_read_rows(path, METRICS_HEADER, 5), start=2):
        try:
            rows.append((int(parts[0]), float(parts[1]), int(parts[2]), int(parts[3]), int(parts[4])))
        except ValueError as exc:
            raise LogFormatError(f"{path}: line {lineno}: {exc}") from exc
    return rows
