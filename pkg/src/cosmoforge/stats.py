"""Dataset summaries and trajectory error metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional

import numpy as np

from .comms import CommEventLog
from .jrl import Dataset
from .lie import Pose3, between, rotation_angle

__all__ = [
    "DatasetSummary",
    "SolutionMetrics",
    "MissingKeyframesError",
    "format_duration",
    "format_count",
    "summarize",
    "evaluate",
    "load_estimate",
]


def format_duration(seconds: float) -> str:
    """``MM:SS`` (minutes are not wrapped into hours)."""
    total = int(round(seconds))
    return f"{total // 60}:{total % 60:02d}"


def format_count(count: int, outliers: int) -> str:
    pct = 100.0 * outliers / count if count else 0.0
    return f"{count}({pct:.1f}%)"


@dataclass
class DatasetSummary:
    name: str
    duration_s: float
    length_km: float
    keyframes: dict[str, int]
    lc_count: int
    lc_outliers: int
    irlc_count: int
    irlc_outliers: int
    comm: dict = field(default_factory=dict)

    @property
    def duration(self) -> str:
        return format_duration(self.duration_s)

    @property
    def lc_outlier_pct(self) -> float:
        return 100.0 * self.lc_outliers / self.lc_count if self.lc_count else 0.0

    @property
    def irlc_outlier_pct(self) -> float:
        return 100.0 * self.irlc_outliers / self.irlc_count if self.irlc_count else 0.0

    @property
    def lc(self) -> str:
        return format_count(self.lc_count, self.lc_outliers)

    @property
    def irlc(self) -> str:
        return format_count(self.irlc_count, self.irlc_outliers)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(duration=self.duration, lc=self.lc, irlc=self.irlc,
                 lc_outlier_pct=self.lc_outlier_pct, irlc_outlier_pct=self.irlc_outlier_pct)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [
            ("Name", self.name),
            ("Robots", ", ".join(self.keyframes)),
            ("Duration", self.duration),
            ("Length", f"{self.length_km:.2f}km"),
            ("Keyframes", ", ".join(f"{r}={n}" for r, n in self.keyframes.items())),
            ("LC", self.lc),
            ("IRLC", self.irlc),
        ]
        for key in ("init", "delivered", "failed", "bytes_delivered"):
            if key in self.comm:
                rows.append((f"comm {key}", str(self.comm[key])))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}} | {v}" for k, v in rows)


def summarize(ds: Dataset, events: Optional[CommEventLog] = None) -> DatasetSummary:
    stamps = []
    length = 0.0
    keyframes = {}
    for r in ds.robot_ids:
        ref_stamps = ds.reference.stamps.get(r, [])
        ref_poses = ds.reference.poses.get(r, [])
        keyframes[r] = len(ref_poses)
        stamps.extend(ref_stamps)
        stamps.extend(m.timestamp for m in ds.measurements.get(r, []))
        for a, b in zip(ref_poses[:-1], ref_poses[1:]):
            length += float(np.linalg.norm(b.translation - a.translation))
    duration = max(stamps) - min(stamps) if stamps else 0.0
    counts = {}
    for kind in ("intra_lc", "inter_lc"):
        lcs = ds.loop_closures(kind)
        counts[kind] = (len(lcs), sum(1 for ident, _ in lcs if ident in ds.outlier_labels))
    return DatasetSummary(
        name=ds.name, duration_s=float(duration), length_km=length / 1000.0, keyframes=keyframes,
        lc_count=counts["intra_lc"][0], lc_outliers=counts["intra_lc"][1],
        irlc_count=counts["inter_lc"][0], irlc_outliers=counts["inter_lc"][1],
        comm=events.counts() if events is not None else {})


class MissingKeyframesError(ValueError):
    def __init__(self, missing: Mapping[str, list[int]]):
        self.missing = dict(missing)
        detail = "; ".join(f"{r}: {len(v)} missing (first {v[0]})" for r, v in self.missing.items())
        super().__init__(f"estimate does not cover all keyframes: {detail}")


@dataclass
class SolutionMetrics:
    per_robot: dict[str, dict[str, float]]
    trans_rmse: float
    rot_rmse: float
    count: int


def _align(est: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid (rotation + translation) least-squares alignment of est onto ref."""
    mu_e, mu_r = est.mean(0), ref.mean(0)
    H = (est - mu_e).T @ (ref - mu_r)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, mu_r - R @ mu_e


def evaluate(estimate: Mapping[str, Mapping[int, Pose3]], ds: Dataset, align: bool = False) -> SolutionMetrics:
    """Translational and rotational RMSE of keyframe estimates against the reference.

    No alignment by default since priors fix the global frame. With
    ``align=True`` a single rigid transform is fitted over all keyframe
    positions first.
    """
    missing = {}
    for r in ds.robot_ids:
        have = estimate.get(r, {})
        lost = [i for i in range(len(ds.reference.poses[r])) if i not in have]
        if lost:
            missing[r] = lost
    if missing:
        raise MissingKeyframesError(missing)

    keys = [(r, i) for r in ds.robot_ids for i in range(len(ds.reference.poses[r]))]
    est_t = np.array([estimate[r][i].translation for r, i in keys]).reshape(-1, 3)
    ref_t = np.array([ds.reference.pose(r, i).translation for r, i in keys]).reshape(-1, 3)
    R_align = np.eye(3)
    if align and len(keys) >= 3:
        R_align, t_align = _align(est_t, ref_t)
        est_t = est_t @ R_align.T + t_align
    align_pose = Pose3.from_matrix(np.block([[R_align, np.zeros((3, 1))], [np.zeros((1, 3)), np.ones((1, 1))]]))

    t_err = np.linalg.norm(est_t - ref_t, axis=1)
    # rotation-only poses so translation offsets cannot leak into the angle
    r_err = np.array([rotation_angle(between(Pose3((align_pose @ estimate[r][i]).rotation),
                                             Pose3(ds.reference.pose(r, i).rotation)))
                      for r, i in keys])
    per_robot = {}
    robot_of = np.array([r for r, _ in keys])
    for r in ds.robot_ids:
        sel = robot_of == r
        per_robot[r] = {"trans_rmse": float(math.sqrt(np.mean(t_err[sel] ** 2))),
                        "rot_rmse": float(math.sqrt(np.mean(r_err[sel] ** 2))),
                        "count": int(sel.sum())}
    return SolutionMetrics(per_robot, float(math.sqrt(np.mean(t_err**2))),
                           float(math.sqrt(np.mean(r_err**2))), len(keys))


def load_estimate(path) -> dict[str, dict[int, Pose3]]:
    """Read ``robot index tx ty tz qw qx qy qz`` lines; ``#`` starts a comment."""
    out: dict[str, dict[int, Pose3]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            f = line.split()
            if len(f) != 9:
                raise ValueError(f"{path}:{lineno}: expected 9 fields, got {len(f)}")
            v = [float(x) for x in f[2:]]
            out.setdefault(f[0], {})[int(f[1])] = Pose3(v[3:7], v[0:3])
    return out


def save_estimate(path, estimate: Mapping[str, Mapping[int, Pose3]]) -> None:
    with open(path, "w") as fh:
        fh.write("# robot index tx ty tz qw qx qy qz\n")
        for r in sorted(estimate):
            for i in sorted(estimate[r]):
                p = estimate[r][i]
                fh.write(" ".join([r, str(i), *(repr(float(x)) for x in (*p.translation, *p.rotation))]) + "\n")
