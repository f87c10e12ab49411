"""Synthesize multi-robot collaborative-SLAM benchmark datasets from single-robot trials."""

__version__ = "0.1.0"

from .lie import Pose3, between, compose, expmap, interpolate, inverse, logmap  # noqa: E402
from .sync import Trial, SyncedSequence, synchronize, pose_at, active_robots  # noqa: E402
from .comms import CommModel, WIFI, PRO_RADIO, connectivity_prob, simulate  # noqa: E402
from .jrl import Dataset, read, write  # noqa: E402

__all__ = [
    "Pose3", "between", "compose", "expmap", "interpolate", "inverse", "logmap",
    "Trial", "SyncedSequence", "synchronize", "pose_at", "active_robots",
    "CommModel", "WIFI", "PRO_RADIO", "connectivity_prob", "simulate",
    "Dataset", "read", "write",
]
