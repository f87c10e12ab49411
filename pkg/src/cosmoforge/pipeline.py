"""End-to-end dataset synthesis.

synchronize -> keyframes -> communication -> measurements -> noise models ->
classification -> dataset. Every random stage draws from its own generator,
seeded from ``sha256(master_seed, stage label)`` so stages never share or
shift each other's streams.
"""

from __future__ import annotations

import contextlib
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .comms import CommEventLog, CommModel, resolve_comm_model, simulate
from .frontend import (
    FrontendParams,
    Keyframe,
    Measurement,
    compute_lc_measurement,
    detect_inter_lc,
    detect_intra_lc,
    make_odometry,
    make_prior,
    select_keyframes,
)
from .jrl import Dataset, read as read_dataset
from .lie import between
from .noise import (
    NoiseEstimate,
    ResidualSample,
    classify_many,
    estimate_covariance,
    good_filter,
    load_matrix,
    save_matrix,
)
from .stats import DatasetSummary, summarize
from .sync import ReferenceSolution, SyncedSequence, Trial, synchronize

__all__ = [
    "PipelineConfig",
    "PipelineError",
    "SynthesisResult",
    "substream_seed",
    "substream",
    "load_config",
    "load_trials",
    "trial_from_dataset",
    "generate_measurements",
    "estimate_noise_from_trial",
    "estimate_noise_from_dataset",
    "label_outliers",
    "synthesize",
    "save_noise_models",
    "load_noise_models",
]

_KIND_RANK = {"prior": 0, "odometry": 1, "intra_lc": 2, "inter_lc": 3}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except (ValueError, KeyError, IndexError) as exc:
        raise PipelineError(name, str(exc)) from exc


def substream_seed(master: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master: int, label: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(master, label))


@dataclass
class TrialSource:
    robot: str
    path: Optional[str] = None
    dataset: Optional[str] = None
    source_robot: Optional[str] = None


@dataclass
class PipelineConfig:
    trials: list[TrialSource]
    seed: int
    name: str = "cosmoforge"
    anchor_index: int = 0
    sigma_offset: float = 40.0
    offset_is_variance: bool = False
    comm_model: str = "wifi"
    frontend: FrontendParams = field(default_factory=FrontendParams)
    noise: str = "estimate"  # estimate | frontend | <directory with odometry.txt, loop_closure.txt>
    noise_trial: Optional[int] = None
    trans_max: float = 0.5
    rot_max: float = 0.05
    classify_odometry: bool = False
    output: str = "dataset.json"
    base_dir: str = "."

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is required")
        if not self.trials:
            raise ValueError("at least one trial is required")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def model(self) -> CommModel:
        spec = self.comm_model
        if spec.startswith("custom:"):
            spec = "custom:" + str(self.resolve(spec[len("custom:"):]))
        return resolve_comm_model(spec)

    def to_dict(self) -> dict:
        """Everything that shapes the dataset's content (the output path does not)."""
        return {
            "name": self.name,
            "trials": [{k: v for k, v in vars(t).items() if v is not None} for t in self.trials],
            "seed": int(self.seed),
            "anchor_index": self.anchor_index,
            "sigma_offset": self.sigma_offset,
            "offset_is_variance": self.offset_is_variance,
            "comm_model": self.comm_model,
            "frontend": self.frontend.to_dict(),
            "noise": self.noise,
            "noise_trial": self.noise_trial,
            "trans_max": self.trans_max,
            "rot_max": self.rot_max,
            "classify_odometry": self.classify_odometry,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> PipelineConfig:
        data = dict(data)
        trials = [TrialSource(**t) for t in data.pop("trials", [])]
        frontend = FrontendParams.from_dict(data.pop("frontend", {}) or {})
        data.pop("base_dir", None)
        return cls(trials=trials, frontend=frontend, base_dir=str(base_dir), **data)


def load_config(path, **overrides) -> PipelineConfig:
    """Read a YAML config; keyword overrides that are not ``None`` win."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    for k, v in overrides.items():
        if v is not None:
            data[k] = v
    with _stage("config"):
        return PipelineConfig.from_dict(data, base_dir=Path(path).resolve().parent)


def trial_from_dataset(ds: Dataset, robot_id: str, new_id: Optional[str] = None) -> Trial:
    """A trial built from a dataset's keyframe reference poses."""
    return Trial(new_id or robot_id, np.array(ds.reference.stamps[robot_id]), ds.reference.poses[robot_id])


def load_trials(cfg: PipelineConfig) -> list[Trial]:
    trials = []
    for src in cfg.trials:
        if src.path:
            trials.append(Trial.from_file(cfg.resolve(src.path), src.robot))
        elif src.dataset:
            ds = read_dataset(cfg.resolve(src.dataset))
            trials.append(trial_from_dataset(ds, src.source_robot or src.robot, src.robot))
        else:
            raise ValueError(f"trial for robot {src.robot!r} needs 'path' or 'dataset'")
    return trials


def _sorted_stream(ms: list[Measurement]) -> list[Measurement]:
    return sorted(ms, key=lambda m: (m.timestamp, _KIND_RANK[m.kind]))


def generate_measurements(seq: SyncedSequence, keyframes: dict[str, list[Keyframe]],
                          events: Optional[CommEventLog], params: FrontendParams,
                          seed: int) -> dict[str, list[Measurement]]:
    """Per-robot, time-ordered measurement streams."""
    streams = {}
    for r in seq.robot_ids:
        kfs = keyframes[r]
        ms = [make_prior(kfs[0])]
        ms += make_odometry(kfs, params.Q_odom, substream(seed, f"odometry:{r}"), seq.trial(r))
        detect = substream(seed, f"intra-detect:{r}")
        measure = substream(seed, f"intra-measure:{r}")
        for c in detect_intra_lc(kfs, params, detect):
            ms.append(compute_lc_measurement(c, params.Q_lc, params.p_outlier, params.outlier_trans_range,
                                             params.outlier_rot_range, measure))
        if events is not None:
            detect = substream(seed, f"inter-detect:{r}")
            measure = substream(seed, f"inter-measure:{r}")
            for c in detect_inter_lc(kfs, events.deliveries(r), keyframes, params, detect):
                ms.append(compute_lc_measurement(c, params.Q_lc, params.p_outlier, params.outlier_trans_range,
                                                 params.outlier_rot_range, measure))
        streams[r] = _sorted_stream(ms)
    return streams


def _reference(keyframes: dict[str, list[Keyframe]]) -> ReferenceSolution:
    return ReferenceSolution({r: [k.reference_pose for k in kfs] for r, kfs in keyframes.items()},
                             {r: [k.timestamp for k in kfs] for r, kfs in keyframes.items()})


def _noise_pair(measurements: Sequence[Measurement], reference: ReferenceSolution, trans_max: float,
                rot_max: float) -> dict[str, NoiseEstimate]:
    def samples(ms):
        return [ResidualSample.from_poses(m.value, _truth(reference, m)) for m in ms]

    odom = samples([m for m in measurements if m.kind == "odometry"])
    lcs = good_filter(samples([m for m in measurements if m.is_loop_closure]), trans_max, rot_max)
    if not odom:
        raise ValueError("no odometry measurements to estimate a noise model from")
    if not lcs:
        raise ValueError("no good loop closures to estimate a noise model from")
    return {"odometry": estimate_covariance(odom),
            "loop_closure": estimate_covariance(lcs, trans_max=trans_max, rot_max=rot_max)}


def _truth(reference: ReferenceSolution, m: Measurement):
    return between(reference.pose(*m.key_from), reference.pose(*m.key_to))


def estimate_noise_from_trial(trial: Trial, params: FrontendParams, seed: int, trans_max: float = 0.5,
                              rot_max: float = 0.05) -> dict[str, NoiseEstimate]:
    """Run the front-end on one trial with no teammates and fit both noise models."""
    seq = SyncedSequence([trial], [0.0])
    kfs = {trial.robot_id: select_keyframes(seq, trial.robot_id, params.d_kf, params.num_points)}
    streams = generate_measurements(seq, kfs, None, params, substream_seed(seed, "noise-trial"))
    return _noise_pair(streams[trial.robot_id], _reference(kfs), trans_max, rot_max)


def estimate_noise_from_dataset(ds: Dataset, trans_max: float = 0.5,
                                rot_max: float = 0.05) -> dict[str, NoiseEstimate]:
    """Fit noise models from an existing dataset's measurements and reference."""
    ms = [m for r in ds.robot_ids for m in ds.measurements[r]]
    return _noise_pair(ms, ds.reference, trans_max, rot_max)


def label_outliers(ds: Dataset, Q_lc: np.ndarray, Q_odom: Optional[np.ndarray] = None) -> set[tuple[str, int]]:
    """Chi-square labels for loop closures; with ``Q_odom`` odometry is checked too
    and its flagged entries are returned alongside."""
    lcs = ds.loop_closures()
    flags = classify_many([m.value for _, m in lcs], [ds.truth(m) for _, m in lcs], Q_lc)
    labels = {ident for (ident, _), bad in zip(lcs, flags) if bad}
    if Q_odom is not None:
        odo = [((r, i), m) for r in ds.robot_ids for i, m in enumerate(ds.measurements[r]) if m.kind == "odometry"]
        oflags = classify_many([m.value for _, m in odo], [ds.truth(m) for _, m in odo], Q_odom)
        labels |= {ident for (ident, _), bad in zip(odo, oflags) if bad}
    return labels


def save_noise_models(directory, models: dict[str, NoiseEstimate]) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, est in models.items():
        p = d / f"{name}.txt"
        save_matrix(p, est.Q)
        paths.append(p)
    return paths


def load_noise_models(directory) -> dict[str, NoiseEstimate]:
    d = Path(directory)
    return {name: NoiseEstimate(load_matrix(d / f"{name}.txt"), 0) for name in ("odometry", "loop_closure")}


@dataclass
class SynthesisResult:
    dataset: Dataset
    events: CommEventLog
    summary: DatasetSummary
    sequence: SyncedSequence
    keyframes: dict[str, list[Keyframe]]


def synthesize(cfg: PipelineConfig) -> SynthesisResult:
    params = cfg.frontend
    with _stage("trial_sync"):
        trials = load_trials(cfg)
        anchor = cfg.anchor_index
        seq = synchronize(trials, anchor, cfg.sigma_offset, substream_seed(cfg.seed, "sync"),
                          cfg.offset_is_variance)
    with _stage("frontend_model"):
        keyframes = {r: select_keyframes(seq, r, params.d_kf, params.num_points) for r in seq.robot_ids}
    with _stage("comm_sim"):
        model = cfg.model()
        events = simulate(model, seq, keyframes, seq.start, seq.end, substream_seed(cfg.seed, "comms"))
    with _stage("frontend_model"):
        streams = generate_measurements(seq, keyframes, events, params, cfg.seed)
    reference = _reference(keyframes)
    with _stage("noise_model"):
        if cfg.noise == "frontend":
            noise = {"odometry": NoiseEstimate(params.Q_odom, 0), "loop_closure": NoiseEstimate(params.Q_lc, 0)}
        elif cfg.noise == "estimate":
            which = anchor if cfg.noise_trial is None else cfg.noise_trial
            noise = estimate_noise_from_trial(trials[which], params, cfg.seed, cfg.trans_max, cfg.rot_max)
        else:
            noise = load_noise_models(cfg.resolve(cfg.noise))
    ds = Dataset(cfg.name, seq.robot_ids, streams, reference, noise)
    with _stage("noise_model"):
        labels = label_outliers(ds, noise["loop_closure"].Q,
                                noise["odometry"].Q if cfg.classify_odometry else None)
    ds.outlier_labels = {k for k in labels if ds.measurements[k[0]][k[1]].is_loop_closure}
    odometry_outliers = sorted(labels - ds.outlier_labels)
    ds.metadata = {
        "generator": f"cosmoforge {__version__}",
        "seed": int(cfg.seed),
        "trials": [{"robot": t.robot_id, "offset": off} for t, off in zip(seq.trials, seq.offsets)],
        "anchor_index": anchor,
        "comm_model": model.to_dict(),
        "comm_stats": events.counts(),
        "config": cfg.to_dict(),
    }
    if cfg.classify_odometry:
        ds.metadata["odometry_outliers"] = [{"robot": r, "entry": i} for r, i in odometry_outliers]
    return SynthesisResult(ds, events, summarize(ds, events), seq, keyframes)


def events_path_for(dataset_path) -> Path:
    p = Path(dataset_path)
    stem = p.name[:-len(".json")] if p.name.endswith(".json") else p.name
    return p.with_name(stem + ".events.csv")
