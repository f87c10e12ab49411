"""Single-robot trials and their synchronization into a multi-robot sequence.

Each trial ``i`` is shifted so that it starts at ``t_i = t* + offset_i`` where
``t*`` is the anchor trial's start and ``offset_i`` is drawn from a zero-mean
normal. Time is rebased so the anchor starts at 0.

A robot is inactive before its first shifted timestamp. After its last
timestamp it stays active at its final pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .lie import Pose3, between, check_covariance, interpolate, logmap

__all__ = [
    "Trial",
    "OdometryDelta",
    "SyncedSequence",
    "ReferenceSolution",
    "synchronize",
    "sample_offsets",
    "pose_at",
    "active_robots",
    "load_stamped_poses",
    "save_stamped_poses",
]


@dataclass(frozen=True)
class OdometryDelta:
    """Relative motion from pose ``k-1`` to pose ``k`` of a trial."""

    stamp: float
    delta: Pose3
    covariance: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Trial:
    robot_id: str
    stamps: np.ndarray
    poses: tuple
    odometry: Optional[tuple] = None

    def __post_init__(self):
        stamps = np.asarray(self.stamps, dtype=float).reshape(-1)
        if len(stamps) < 2:
            raise ValueError(f"trial {self.robot_id!r} needs at least 2 poses")
        if len(stamps) != len(self.poses):
            raise ValueError(f"trial {self.robot_id!r}: {len(stamps)} stamps vs {len(self.poses)} poses")
        if np.any(np.diff(stamps) <= 0):
            raise ValueError(f"trial {self.robot_id!r}: timestamps must be strictly increasing")
        stamps.flags.writeable = False
        object.__setattr__(self, "stamps", stamps)
        object.__setattr__(self, "poses", tuple(self.poses))
        if self.odometry is not None:
            odom = tuple(self.odometry)
            if len(odom) != len(stamps) - 1:
                raise ValueError(
                    f"trial {self.robot_id!r}: expected {len(stamps) - 1} odometry deltas, got {len(odom)}")
            for d in odom:
                if d.covariance is not None:
                    check_covariance(d.covariance)
            object.__setattr__(self, "odometry", odom)

    def __len__(self) -> int:
        return len(self.stamps)

    @property
    def duration(self) -> float:
        return float(self.stamps[-1] - self.stamps[0])

    @classmethod
    def from_file(cls, path, robot_id: str) -> Trial:
        stamps, poses = load_stamped_poses(path)
        return cls(robot_id, stamps, poses)


def load_stamped_poses(path) -> tuple[np.ndarray, list[Pose3]]:
    """Read ``timestamp tx ty tz qw qx qy qz`` records; ``#`` starts a comment."""
    stamps, poses = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(fields)}")
            v = [float(x) for x in fields]
            stamps.append(v[0])
            poses.append(Pose3(v[4:8], v[1:4]))
    return np.array(stamps), poses


def save_stamped_poses(path, stamps: Sequence[float], poses: Sequence[Pose3]) -> None:
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qw qx qy qz\n")
        for t, p in zip(stamps, poses):
            vals = [t, *p.translation, *p.rotation]
            fh.write(" ".join(repr(float(x)) for x in vals) + "\n")


class SyncedSequence:
    """Several trials placed on one shared clock.

    ``offsets[i]`` is the start of trial ``i`` relative to the anchor start,
    which sits at time 0.
    """

    def __init__(self, trials: Sequence[Trial], offsets: Sequence[float], anchor_index: int = 0):
        self.trials = tuple(trials)
        self.offsets = tuple(float(o) for o in offsets)
        self.anchor_index = anchor_index
        if len(self.offsets) != len(self.trials):
            raise ValueError("one offset per trial required")
        if self.offsets[anchor_index] != 0.0:
            raise ValueError("anchor offset must be exactly 0")
        ids = [t.robot_id for t in self.trials]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate robot ids in {ids}")
        self._index = {rid: i for i, rid in enumerate(ids)}
        self._stamps = {}
        for trial, off in zip(self.trials, self.offsets):
            s = (trial.stamps - trial.stamps[0]) + off
            s.flags.writeable = False
            self._stamps[trial.robot_id] = s
        self._segments: dict[str, tuple] = {}

    @property
    def robot_ids(self) -> list[str]:
        return [t.robot_id for t in self.trials]

    def trial(self, robot_id: str) -> Trial:
        try:
            return self.trials[self._index[robot_id]]
        except KeyError:
            raise KeyError(f"unknown robot {robot_id!r}") from None

    def stamps(self, robot_id: str) -> np.ndarray:
        """Shifted timestamps of one robot."""
        self.trial(robot_id)
        return self._stamps[robot_id]

    def window(self, robot_id: str) -> tuple[float, float]:
        s = self.stamps(robot_id)
        return float(s[0]), float(s[-1])

    @property
    def start(self) -> float:
        return min(self.window(r)[0] for r in self.robot_ids)

    @property
    def end(self) -> float:
        return max(self.window(r)[1] for r in self.robot_ids)

    def _segment_data(self, robot_id: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if robot_id not in self._segments:
            poses = self.trial(robot_id).poses
            xi = np.array([logmap(between(a, b)) for a, b in zip(poses[:-1], poses[1:])])
            R0 = np.stack([p.rotation_matrix() for p in poses[:-1]])
            t0 = np.stack([p.translation for p in poses[:-1]])
            self._segments[robot_id] = (xi, R0, t0)
        return self._segments[robot_id]

    def positions(self, robot_id: str, times: Sequence[float]) -> np.ndarray:
        """Translations of :func:`pose_at` for many times; NaN rows while inactive.

        Vectorized equivalent of ``pose_at(...).translation``.
        """
        times = np.asarray(times, dtype=float)
        stamps = self.stamps(robot_id)
        trial = self.trial(robot_id)
        out = np.full((len(times), 3), np.nan)
        before = times < stamps[0]
        after = times >= stamps[-1]
        out[after] = trial.poses[-1].translation
        inside = ~before & ~after
        if not np.any(inside):
            return out
        tin = times[inside]
        k = np.searchsorted(stamps, tin, side="right") - 1
        alpha = (tin - stamps[k]) / (stamps[k + 1] - stamps[k])
        xi_all, R0, t0 = self._segment_data(robot_id)
        xi = xi_all[k] * alpha[:, None]
        omega, rho = xi[:, :3], xi[:, 3:]
        theta2 = np.einsum("ij,ij->i", omega, omega)
        theta = np.sqrt(theta2)
        small = theta2 < 1e-12
        safe = np.where(small, 1.0, theta)
        a = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
        b = np.where(small, 1.0 / 6.0 - theta2 / 120.0, (safe - np.sin(safe)) / safe**3)
        wr = np.cross(omega, rho)
        local = rho + a[:, None] * wr + b[:, None] * np.cross(omega, wr)
        out[inside] = t0[k] + np.einsum("nij,nj->ni", R0[k], local)
        return out


def sample_offsets(n: int, anchor_index: int, sigma_offset: float, rng: np.random.Generator,
                   variance: bool = False) -> np.ndarray:
    """Draw start offsets; the anchor gets exactly 0."""
    if sigma_offset < 0:
        raise ValueError("sigma_offset must be non-negative")
    std = math.sqrt(sigma_offset) if variance else float(sigma_offset)
    offsets = np.zeros(n)
    others = [i for i in range(n) if i != anchor_index]
    if others and std > 0:
        offsets[others] = rng.normal(0.0, std, size=len(others))
    return offsets


def synchronize(trials: Sequence[Trial], anchor_index: int = 0, sigma_offset: float = 40.0,
                rng_seed: int = 0, offset_is_variance: bool = False) -> SyncedSequence:
    """Place trials on a common clock with Gaussian start offsets.

    ``sigma_offset`` is a standard deviation in seconds unless
    ``offset_is_variance`` is set, in which case it is read as a variance.
    """
    if not trials:
        raise ValueError("at least one trial is required")
    if not 0 <= anchor_index < len(trials):
        raise IndexError(f"anchor index {anchor_index} out of range for {len(trials)} trials")
    rng = np.random.default_rng(rng_seed)
    offsets = sample_offsets(len(trials), anchor_index, sigma_offset, rng, offset_is_variance)
    return SyncedSequence(trials, offsets, anchor_index)


def pose_at(seq: SyncedSequence, robot_id: str, t: float) -> Optional[Pose3]:
    """Reference pose at time ``t``; ``None`` while the robot is inactive."""
    stamps = seq.stamps(robot_id)
    poses = seq.trial(robot_id).poses
    if t < stamps[0]:
        return None
    if t >= stamps[-1]:
        return poses[-1]
    k = int(np.searchsorted(stamps, t, side="right")) - 1
    if t == stamps[k]:
        return poses[k]
    alpha = (t - stamps[k]) / (stamps[k + 1] - stamps[k])
    return interpolate(poses[k], poses[k + 1], float(alpha))


def active_robots(seq: SyncedSequence, t: float) -> set[str]:
    return {r for r in seq.robot_ids if seq.window(r)[0] <= t}


@dataclass
class ReferenceSolution:
    """Keyframe reference poses per robot, indexed contiguously from 0."""

    poses: dict[str, list[Pose3]] = field(default_factory=dict)
    stamps: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        for r, p in self.poses.items():
            if len(self.stamps.get(r, ())) != len(p):
                raise ValueError(f"robot {r!r}: stamps and poses differ in length")

    @property
    def robot_ids(self) -> list[str]:
        return list(self.poses)

    def pose(self, robot_id: str, index: int) -> Pose3:
        return self.poses[robot_id][index]

    def stamp(self, robot_id: str, index: int) -> float:
        return self.stamps[robot_id][index]

    def has_key(self, robot_id: str, index: int) -> bool:
        return robot_id in self.poses and 0 <= index < len(self.poses[robot_id])

    def items(self, robot_id: str) -> Iterable[tuple[int, float, Pose3]]:
        return ((i, s, p) for i, (s, p) in enumerate(zip(self.stamps[robot_id], self.poses[robot_id])))
