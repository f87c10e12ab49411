"""SE(3) pose algebra on unit quaternions.

Conventions used throughout the package:

* Quaternions are scalar-first ``[w, x, y, z]`` and canonicalized so that
  ``w >= 0``. When ``w == 0`` (a rotation of exactly pi) the sign is fixed so
  that the vector component with the largest magnitude is positive. That
  component is the same axis picked by the largest diagonal entry of the
  rotation matrix, so ``logmap`` at pi returns ``pi * axis`` with that axis.
* Tangent vectors are ordered ``[rotation (rad); translation (m)]``.
* ``expmap``/``logmap`` are the SE(3) exponential and logarithm (translation
  part goes through the left Jacobian ``V``), not the SO(3) x R3 product map.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = [
    "Pose3",
    "compose",
    "inverse",
    "between",
    "expmap",
    "logmap",
    "interpolate",
    "rotation_angle",
    "so3_exp",
    "so3_log",
    "quat_to_matrix",
    "matrix_to_quat",
    "check_covariance",
]

_EPS = np.finfo(float).eps
_SMALL_ANGLE = 1e-6


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(4)
    n = math.sqrt(float(q @ q))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError(f"invalid quaternion {q!r}")
    # leave already-unit quaternions bit-identical so serialization round-trips
    if abs(n - 1.0) > 4 * _EPS:
        q = q / n
    if q[0] < 0.0:
        q = -q
    elif q[0] == 0.0:
        k = int(np.argmax(np.abs(q[1:])))
        if q[1 + k] < 0.0:
            q = -q
    return q + 0.0  # normalizes -0.0


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to canonical scalar-first quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * math.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0))
        q = [0.0] * 4
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return _canonical_quat(np.array(q))


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega: Sequence[float]) -> np.ndarray:
    """Rotation vector to canonical quaternion."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    theta = math.sqrt(float(omega @ omega))
    if theta < _SMALL_ANGLE:
        k = 0.5 - theta * theta / 48.0
        w = 1.0 - theta * theta / 8.0
    else:
        k = math.sin(0.5 * theta) / theta
        w = math.cos(0.5 * theta)
    return _canonical_quat(np.concatenate(([w], k * omega)))


def so3_log(q: Sequence[float]) -> np.ndarray:
    """Canonical quaternion to rotation vector with angle in [0, pi]."""
    w = float(q[0])
    v = np.asarray(q[1:], dtype=float)
    s = math.sqrt(float(v @ v))
    if s < _SMALL_ANGLE:
        # theta / s = 2 / w * (1 - s^2 / (3 w^2)) to second order
        return (2.0 / w) * (1.0 - s * s / (3.0 * w * w)) * v
    theta = 2.0 * math.atan2(s, w)
    return (theta / s) * v


def _left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta2 = float(omega @ omega)
    W = _skew(omega)
    if theta2 < _SMALL_ANGLE**2:
        a = 0.5 - theta2 / 24.0
        b = 1.0 / 6.0 - theta2 / 120.0
    else:
        theta = math.sqrt(theta2)
        a = (1.0 - math.cos(theta)) / theta2
        b = (theta - math.sin(theta)) / (theta2 * theta)
    return np.eye(3) + a * W + b * (W @ W)


def _left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    theta2 = float(omega @ omega)
    W = _skew(omega)
    if theta2 < _SMALL_ANGLE**2:
        c = 1.0 / 12.0 + theta2 / 720.0
    else:
        theta = math.sqrt(theta2)
        c = (1.0 - theta * math.sin(theta) / (2.0 * (1.0 - math.cos(theta)))) / theta2
    return np.eye(3) - 0.5 * W + c * (W @ W)


class Pose3:
    """Immutable rigid-body transform ``(rotation, translation)``.

    ``rotation`` is a unit quaternion ``[w, x, y, z]``; ``translation`` is in
    meters. A pose maps points from its local frame into the parent frame.
    """

    __slots__ = ("_q", "_t")

    def __init__(self, rotation: Sequence[float] = (1.0, 0.0, 0.0, 0.0),
                 translation: Sequence[float] = (0.0, 0.0, 0.0)):
        q = _canonical_quat(np.array(rotation, dtype=float))
        t = np.array(translation, dtype=float).reshape(3) + 0.0
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "_q", q)
        object.__setattr__(self, "_t", t)

    def __setattr__(self, name, value):
        raise AttributeError("Pose3 is immutable")

    @property
    def rotation(self) -> np.ndarray:
        return self._q

    @property
    def translation(self) -> np.ndarray:
        return self._t

    @classmethod
    def identity(cls) -> Pose3:
        return cls()

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> Pose3:
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rotation_vector(cls, omega: Sequence[float],
                             translation: Sequence[float] = (0.0, 0.0, 0.0)) -> Pose3:
        return cls(so3_exp(omega), translation)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self._q)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation_matrix()
        T[:3, 3] = self._t
        return T

    def transform_point(self, p: Sequence[float]) -> np.ndarray:
        return self.rotation_matrix() @ np.asarray(p, dtype=float) + self._t

    def __matmul__(self, other: Pose3) -> Pose3:
        return compose(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose3):
            return NotImplemented
        return bool(np.array_equal(self._q, other._q) and np.array_equal(self._t, other._t))

    def __hash__(self):
        return hash((self._q.tobytes(), self._t.tobytes()))

    def __repr__(self) -> str:
        q = ", ".join(f"{x:.6g}" for x in self._q)
        t = ", ".join(f"{x:.6g}" for x in self._t)
        return f"Pose3(q=[{q}], t=[{t}])"

    def isclose(self, other: Pose3, tol: float = 1e-9) -> bool:
        return float(np.linalg.norm(logmap(between(self, other)))) <= tol


def compose(a: Pose3, b: Pose3) -> Pose3:
    return Pose3(_quat_mul(a.rotation, b.rotation),
                 a.rotation_matrix() @ b.translation + a.translation)


def inverse(p: Pose3) -> Pose3:
    q = p.rotation
    q_inv = np.array([q[0], -q[1], -q[2], -q[3]])
    return Pose3(q_inv, -(quat_to_matrix(q_inv) @ p.translation))


def between(a: Pose3, b: Pose3) -> Pose3:
    """Relative pose ``inverse(a) @ b``."""
    if a == b:
        return Pose3.identity()
    return compose(inverse(a), b)


def expmap(v: Sequence[float]) -> Pose3:
    v = np.asarray(v, dtype=float).reshape(6)
    omega, rho = v[:3], v[3:]
    return Pose3(so3_exp(omega), _left_jacobian(omega) @ rho)


def logmap(p: Pose3) -> np.ndarray:
    """SE(3) logarithm; rotation angle is in [0, pi] (see module notes for pi)."""
    omega = so3_log(p.rotation)
    return np.concatenate((omega, _left_jacobian_inv(omega) @ p.translation))


def rotation_angle(p: Pose3) -> float:
    w = min(abs(float(p.rotation[0])), 1.0)
    s = float(np.linalg.norm(p.rotation[1:]))
    return 2.0 * math.atan2(s, w)


def interpolate(p0: Pose3, p1: Pose3, alpha: float) -> Pose3:
    """Geodesic interpolation ``p0 @ expmap(alpha * logmap(between(p0, p1)))``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return p0
    if alpha == 1.0:
        return p1
    return compose(p0, expmap(alpha * logmap(between(p0, p1))))


def check_covariance(Q: np.ndarray, rtol: float = 1e-12, eig_tol: float = 1e-12) -> np.ndarray:
    """Validate a 6x6 covariance and return it as a float array.

    Raises ``ValueError`` when ``Q`` is not 6x6, not symmetric within ``rtol``
    (relative to its largest entry) or has an eigenvalue below ``-eig_tol``.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (6, 6):
        raise ValueError(f"covariance must be 6x6, got shape {Q.shape}")
    if not np.all(np.isfinite(Q)):
        raise ValueError("covariance has non-finite entries")
    scale = max(float(np.max(np.abs(Q))), 1.0)
    if np.max(np.abs(Q - Q.T)) > rtol * scale:
        raise ValueError("covariance is not symmetric")
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -eig_tol * scale:
        raise ValueError("covariance is not positive semi-definite")
    return Q
