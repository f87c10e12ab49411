"""Keyframing, priors, odometry and a geometric loop-closure proxy.

Keyframes and odometry follow the usual distance-based rule: a new keyframe is
taken as soon as the path travelled since the previous keyframe exceeds
``d_kf``. Loop-closure *detection* and *registration* are replaced by a
parameterized model: pairs of keyframes within ``r_detect`` of each other are
detected with probability ``p_detect``, and each computed measurement is
either the truth perturbed by Gaussian noise or, with probability
``p_outlier``, a gross error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .lie import Pose3, between, check_covariance, compose, expmap, so3_exp
from .sync import SyncedSequence, Trial

__all__ = [
    "Keyframe",
    "Measurement",
    "FrontendParams",
    "LoopCandidate",
    "PRIOR_SIGMA_ROT",
    "PRIOR_SIGMA_TRANS",
    "prior_covariance",
    "select_keyframes",
    "make_prior",
    "make_odometry",
    "integrate_odometry",
    "detect_intra_lc",
    "detect_inter_lc",
    "compute_lc_measurement",
    "sample_tangent",
]

PRIOR_SIGMA_ROT = 1e-4  # rad
PRIOR_SIGMA_TRANS = 1e-3  # m

KINDS = ("prior", "odometry", "intra_lc", "inter_lc")


@dataclass(frozen=True)
class Keyframe:
    robot_id: str
    index: int
    timestamp: float
    reference_pose: Pose3
    num_points: int = 100_000
    sample_index: int = 0  # position of the source sample in the trial

    @property
    def key(self) -> tuple[str, int]:
        return (self.robot_id, self.index)


@dataclass(eq=False)
class Measurement:
    kind: str
    key_from: tuple[str, int]
    key_to: Optional[tuple[str, int]]
    value: Pose3
    covariance: np.ndarray
    timestamp: float
    injected_outlier: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown measurement kind {self.kind!r}")
        self.key_from = (str(self.key_from[0]), int(self.key_from[1]))
        if self.key_to is not None:
            self.key_to = (str(self.key_to[0]), int(self.key_to[1]))
        elif self.kind != "prior":
            raise ValueError(f"{self.kind} measurement needs key_to")
        self.covariance = np.asarray(self.covariance, dtype=float)
        self.timestamp = float(self.timestamp)

    @property
    def is_loop_closure(self) -> bool:
        return self.kind in ("intra_lc", "inter_lc")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Measurement):
            return NotImplemented
        return (self.kind == other.kind and self.key_from == other.key_from and self.key_to == other.key_to
                and self.value == other.value and np.array_equal(self.covariance, other.covariance)
                and self.timestamp == other.timestamp and self.injected_outlier == other.injected_outlier
                and self.extra == other.extra)

    def __repr__(self) -> str:
        to = f" -> {self.key_to}" if self.key_to else ""
        return f"Measurement({self.kind} {self.key_from}{to} @ {self.timestamp:.3f})"


def _diag(rot: float, trans: float) -> np.ndarray:
    return np.diag([rot] * 3 + [trans] * 3)


@dataclass
class FrontendParams:
    d_kf: float = 2.0
    r_detect: float = 10.0
    min_index_gap: int = 25
    p_detect: float = 0.7
    p_outlier: float = 0.05
    Q_odom: np.ndarray = field(default_factory=lambda: _diag(1e-5, 1e-4))
    Q_lc: np.ndarray = field(default_factory=lambda: _diag(1e-4, 2.5e-3))
    outlier_trans_range: tuple[float, float] = (2.0, 10.0)
    outlier_rot_range: tuple[float, float] = (0.2, math.pi)
    num_points: int = 100_000

    def __post_init__(self):
        for name in ("p_detect", "p_outlier"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("outlier_trans_range", "outlier_rot_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must be an ordered non-negative range")
            setattr(self, name, (float(lo), float(hi)))
        if self.outlier_rot_range[1] > math.pi:
            raise ValueError("outlier rotation range must not exceed pi")
        self.Q_odom = check_covariance(np.asarray(self.Q_odom, dtype=float))
        self.Q_lc = check_covariance(np.asarray(self.Q_lc, dtype=float))

    @classmethod
    def from_dict(cls, data: dict) -> FrontendParams:
        data = dict(data)
        for key in ("Q_odom", "Q_lc"):
            if key in data:
                data[key] = _parse_cov(data[key])
        for key in ("outlier_trans_range", "outlier_rot_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "d_kf": self.d_kf, "r_detect": self.r_detect, "min_index_gap": self.min_index_gap,
            "p_detect": self.p_detect, "p_outlier": self.p_outlier,
            "Q_odom": self.Q_odom.tolist(), "Q_lc": self.Q_lc.tolist(),
            "outlier_trans_range": list(self.outlier_trans_range),
            "outlier_rot_range": list(self.outlier_rot_range), "num_points": self.num_points,
        }


def _parse_cov(value) -> np.ndarray:
    """Covariance from a 6x6 nested list, 36 numbers, or a 6-element diagonal."""
    arr = np.asarray(value, dtype=float)
    if arr.shape == (6,):
        return np.diag(arr)
    return arr.reshape(6, 6)


def prior_covariance() -> np.ndarray:
    return _diag(PRIOR_SIGMA_ROT**2, PRIOR_SIGMA_TRANS**2)


def sample_tangent(Q: np.ndarray, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Zero-mean Gaussian tangent vectors with covariance ``Q`` (may be singular)."""
    w, V = np.linalg.eigh(np.asarray(Q, dtype=float))
    L = V * np.sqrt(np.clip(w, 0.0, None))
    n = 1 if size is None else size
    z = rng.standard_normal((n, 6))
    eps = z @ L.T
    return eps[0] if size is None else eps


def _perturb(truth: Pose3, eps: np.ndarray) -> Pose3:
    if not np.any(eps):
        return truth
    return compose(truth, expmap(eps))


def select_keyframes(source, robot_id: Optional[str] = None, d_kf: float = 2.0,
                     num_points: int = 100_000) -> list[Keyframe]:
    """Distance-based keyframe selection along a reference trajectory.

    ``source`` is a :class:`SyncedSequence` (with ``robot_id``) or a bare
    :class:`Trial`; with a sequence the keyframe timestamps are the shifted ones.
    """
    if isinstance(source, SyncedSequence):
        trial = source.trial(robot_id)
        stamps = source.stamps(robot_id)
    elif isinstance(source, Trial):
        trial, stamps = source, source.stamps
    else:
        raise TypeError(f"cannot select keyframes from {type(source).__name__}")
    rid = trial.robot_id
    poses = trial.poses
    kfs = [Keyframe(rid, 0, float(stamps[0]), poses[0], num_points, 0)]
    travelled = 0.0
    for k in range(1, len(poses)):
        travelled += float(np.linalg.norm(poses[k].translation - poses[k - 1].translation))
        if travelled > d_kf:
            kfs.append(Keyframe(rid, len(kfs), float(stamps[k]), poses[k], num_points, k))
            travelled = 0.0
    return kfs


def make_prior(keyframe: Keyframe, reference_pose: Optional[Pose3] = None) -> Measurement:
    if keyframe.index != 0:
        raise ValueError("priors are only placed on keyframe 0")
    pose = keyframe.reference_pose if reference_pose is None else reference_pose
    return Measurement("prior", keyframe.key, None, pose, prior_covariance(), keyframe.timestamp)


def integrate_odometry(trial: Trial, start_sample: int, end_sample: int) -> Pose3:
    """Compose the trial's per-sample odometry between two sample indices."""
    if trial.odometry is None:
        raise ValueError(f"trial {trial.robot_id!r} carries no odometry")
    acc = Pose3.identity()
    for d in trial.odometry[start_sample:end_sample]:
        acc = compose(acc, d.delta)
    return acc


def make_odometry(keyframes: Sequence[Keyframe], Q_odom: np.ndarray, rng: np.random.Generator,
                  trial: Optional[Trial] = None) -> list[Measurement]:
    """Relative-pose measurements between consecutive keyframes.

    Without a ``trial`` (or when it carries no odometry) the measurement is the
    reference relative pose perturbed by ``N(0, Q_odom)`` on the right. With
    trial odometry, the per-sample deltas are integrated instead and no extra
    noise is added.
    """
    Q_odom = np.asarray(Q_odom, dtype=float)
    use_trial = trial is not None and trial.odometry is not None
    out = []
    for a, b in zip(keyframes[:-1], keyframes[1:]):
        if use_trial:
            value = integrate_odometry(trial, a.sample_index, b.sample_index)
        else:
            value = _perturb(between(a.reference_pose, b.reference_pose), sample_tangent(Q_odom, rng))
        out.append(Measurement("odometry", a.key, b.key, value, Q_odom.copy(), b.timestamp))
    return out


@dataclass(frozen=True)
class LoopCandidate:
    """A detected keyframe pair; ``key_from`` belongs to the detecting robot."""

    key_from: tuple[str, int]
    key_to: tuple[str, int]
    pose_from: Pose3
    pose_to: Pose3
    timestamp: float

    @property
    def kind(self) -> str:
        return "intra_lc" if self.key_from[0] == self.key_to[0] else "inter_lc"


def _close(a: Keyframe, b: Keyframe, r: float) -> bool:
    return float(np.linalg.norm(a.reference_pose.translation - b.reference_pose.translation)) <= r


def detect_intra_lc(keyframes: Sequence[Keyframe], params: FrontendParams,
                    rng: np.random.Generator) -> list[LoopCandidate]:
    """Query each new keyframe ``j`` against keyframes at least ``min_index_gap`` older."""
    out = []
    if not keyframes:
        return out
    xyz = np.array([kf.reference_pose.translation for kf in keyframes])
    for j, kj in enumerate(keyframes):
        stop = j - params.min_index_gap + 1
        if stop <= 0:
            continue
        near = np.flatnonzero(np.linalg.norm(xyz[:stop] - xyz[j], axis=1) <= params.r_detect)
        for i in near:
            if rng.random() < params.p_detect:
                ki = keyframes[i]
                out.append(LoopCandidate(kj.key, ki.key, kj.reference_pose, ki.reference_pose, kj.timestamp))
    return out


def detect_inter_lc(local: Sequence[Keyframe], deliveries: Iterable, remote: dict,
                    params: FrontendParams, rng: np.random.Generator) -> list[LoopCandidate]:
    """Match scans received from teammates against the local keyframe database.

    ``deliveries`` are ``delivered`` events addressed to the owner of ``local``
    (anything with ``t``, ``sender`` and ``kf_index``); ``remote`` maps robot id
    to that robot's keyframe list. A received scan is compared with every local
    keyframe existing at delivery time, and later with each new local keyframe.
    Each (local, remote) pair is tested once.
    """
    out = []
    tested = set()
    for ev in deliveries:
        remote_kf = remote[ev.sender][ev.kf_index]
        for kf in local:
            pair = (kf.index, remote_kf.key)
            if pair in tested:
                continue
            tested.add(pair)
            if _close(kf, remote_kf, params.r_detect) and rng.random() < params.p_detect:
                out.append(LoopCandidate(kf.key, remote_kf.key, kf.reference_pose, remote_kf.reference_pose,
                                         max(float(ev.t), kf.timestamp)))
    out.sort(key=lambda c: (c.timestamp, c.key_from[1], c.key_to))
    return out


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.standard_normal(3)
        n = float(np.linalg.norm(v))
        if n > 1e-12:
            return v / n


def compute_lc_measurement(candidate: LoopCandidate, Q_lc: np.ndarray, p_outlier: float,
                           trans_range: tuple[float, float], rot_range: tuple[float, float],
                           rng: np.random.Generator) -> Measurement:
    """Turn a detection into a relative-pose measurement, possibly a gross outlier.

    Outliers compose the truth with an error pose whose translation norm and
    rotation angle are uniform in the given ranges, in random directions. The
    attached covariance is ``Q_lc`` either way.
    """
    Q_lc = np.asarray(Q_lc, dtype=float)
    truth = between(candidate.pose_from, candidate.pose_to)
    # both branches consume the same draws, so inliers do not depend on p_outlier
    outlier = bool(rng.random() < p_outlier)
    eps = sample_tangent(Q_lc, rng)
    angle, axis = rng.uniform(*rot_range), _random_unit(rng)
    length, direction = rng.uniform(*trans_range), _random_unit(rng)
    if outlier:
        value = compose(truth, Pose3(so3_exp(angle * axis), length * direction))
    else:
        value = _perturb(truth, eps)
    return Measurement(candidate.kind, candidate.key_from, candidate.key_to, value, Q_lc.copy(),
                       candidate.timestamp, injected_outlier=outlier)
