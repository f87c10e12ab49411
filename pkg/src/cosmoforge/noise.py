"""Empirical SE(3) noise models and chi-square outlier labels."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .lie import Pose3, between, check_covariance, logmap, rotation_angle

__all__ = [
    "ResidualSample",
    "NoiseEstimate",
    "SingularCovarianceError",
    "residual",
    "translation_error",
    "rotation_error",
    "good_filter",
    "estimate_covariance",
    "chi2_critical",
    "mahalanobis_sq",
    "classify",
    "classify_many",
    "save_matrix",
    "load_matrix",
]

REGULARIZATION = 1e-12


class SingularCovarianceError(ValueError):
    pass


def residual(m: Pose3, truth: Pose3) -> np.ndarray:
    """Tangent residual ``logmap(inverse(m) @ truth)``."""
    return logmap(between(m, truth))


def translation_error(m: Pose3, truth: Pose3) -> float:
    return float(np.linalg.norm(between(m, truth).translation))


def rotation_error(m: Pose3, truth: Pose3) -> float:
    return rotation_angle(between(m, truth))


@dataclass(frozen=True, eq=False)
class ResidualSample:
    measurement: Pose3
    truth: Pose3
    residual: np.ndarray

    @classmethod
    def from_poses(cls, m: Pose3, truth: Pose3) -> ResidualSample:
        return cls(m, truth, residual(m, truth))


@dataclass(frozen=True, eq=False)
class NoiseEstimate:
    Q: np.ndarray
    sample_count: int
    trans_max: Optional[float] = None
    rot_max: Optional[float] = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, NoiseEstimate):
            return NotImplemented
        return (np.array_equal(self.Q, other.Q) and self.sample_count == other.sample_count
                and self.trans_max == other.trans_max and self.rot_max == other.rot_max)


def good_filter(samples: Iterable[ResidualSample], trans_max: float = 0.5,
                rot_max: float = 0.05) -> list[ResidualSample]:
    """Keep samples whose translation error is below ``trans_max`` (m) and
    rotation error below ``rot_max`` (rad)."""
    return [s for s in samples
            if translation_error(s.measurement, s.truth) < trans_max
            and rotation_error(s.measurement, s.truth) < rot_max]


def estimate_covariance(samples, ddof: int = 0, trans_max: Optional[float] = None,
                        rot_max: Optional[float] = None) -> NoiseEstimate:
    """Second moment of the residuals, ``sum(r r^T) / (n - ddof)``.

    ``samples`` may be :class:`ResidualSample` objects or an ``(n, 6)`` array
    of residuals. Residuals are taken as zero-mean; nothing is subtracted.
    """
    if isinstance(samples, np.ndarray):
        R = samples.reshape(-1, 6).astype(float)
    else:
        samples = list(samples)
        R = np.array([s.residual for s in samples], dtype=float).reshape(-1, 6)
    n = len(R)
    if n == 0:
        raise ValueError("cannot estimate a covariance from zero samples")
    if n - ddof <= 0:
        raise ValueError(f"need more than {ddof} samples for ddof={ddof}")
    # canonical row order (unaffected by a common sign or positive scale) keeps
    # the floating-point sum independent of input order
    R = R[np.lexsort(np.abs(R).T[::-1])]
    Q = (R.T @ R) / (n - ddof)
    Q = 0.5 * (Q + Q.T)
    return NoiseEstimate(Q, n, trans_max, rot_max)


@lru_cache(maxsize=None)
def chi2_critical(confidence: float = 0.95, dof: int = 6) -> float:
    return float(stats.chi2.ppf(confidence, dof))


def _whitener(Q: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    try:
        check_covariance(Q, rtol=1e-9, eig_tol=1e-9)
        return np.linalg.cholesky(Q + REGULARIZATION * np.eye(6))
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularCovarianceError(f"noise model is not usable for classification: {exc}") from exc


def mahalanobis_sq(r: np.ndarray, Q: np.ndarray) -> float:
    """``r^T Q^-1 r`` with ``Q`` regularized by ``1e-12 * I``."""
    L = _whitener(Q)
    z = np.linalg.solve(L, np.asarray(r, dtype=float))
    return float(z @ z)


def classify(measurement: Pose3, truth: Pose3, Q: np.ndarray, confidence: float = 0.95) -> str:
    """``"outlier"`` when the whitened residual exceeds the chi-square critical value."""
    d2 = mahalanobis_sq(residual(measurement, truth), Q)
    return "outlier" if d2 > chi2_critical(confidence, 6) else "inlier"


def classify_many(measurements: Sequence[Pose3], truths: Sequence[Pose3], Q: np.ndarray,
                  confidence: float = 0.95) -> list[bool]:
    """Outlier flags for many measurements sharing one noise model."""
    if not measurements:
        return []
    L = _whitener(Q)
    R = np.array([residual(m, t) for m, t in zip(measurements, truths)])
    Z = np.linalg.solve(L, R.T)
    d2 = np.einsum("ij,ij->j", Z, Z)
    return [bool(x) for x in d2 > chi2_critical(confidence, 6)]


def save_matrix(path, Q: np.ndarray) -> None:
    np.savetxt(path, np.asarray(Q, dtype=float).reshape(6, 6), fmt="%.17g")


def load_matrix(path) -> np.ndarray:
    Q = np.loadtxt(path, dtype=float)
    if Q.shape != (6, 6):
        raise ValueError(f"{path}: expected a 6x6 matrix, got shape {Q.shape}")
    return Q
