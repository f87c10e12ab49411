"""JSON robot log (JRL) datasets: schema ``cosmoforge-jrl/1``.

The on-disk layout is described in ``docs/jrl_format.md`` and formally in
``docs/jrl_schema.json``. Files are written in a canonical form (fixed key
order, one measurement per line, shortest round-trip float repr) so that
``write(read(f))`` reproduces a canonical file byte for byte.

Measurement identifiers used by outlier labels are ``(robot, entry)``: the
position of the measurement in that robot's stream.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional, Union

import numpy as np

from .frontend import Measurement
from .lie import Pose3, between, check_covariance, compose
from .noise import NoiseEstimate
from .sync import ReferenceSolution

__all__ = [
    "SCHEMA_VERSION",
    "Dataset",
    "JRLError",
    "MalformedJSONError",
    "SchemaVersionError",
    "SchemaError",
    "DanglingKeyError",
    "OrderingError",
    "CovarianceError",
    "LabelError",
    "PartitionError",
    "OdometryGapError",
    "UnmappedKeyError",
    "GlobalEntry",
    "dumps",
    "loads",
    "write",
    "read",
    "validate",
    "validate_file",
    "partition_global_graph",
    "read_global_graph",
    "symbol_mapper",
]

SCHEMA_VERSION = "cosmoforge-jrl/1"

_TYPE_OF_KIND = {"prior": "prior", "odometry": "between", "intra_lc": "loop", "inter_lc": "loop"}
_KIND_RANK = {"prior": 0, "odometry": 1, "intra_lc": 2, "inter_lc": 3}
_TOP_KEYS = ("name", "version", "robots", "measurements", "groundtruth", "noise_models",
             "outlier_labels", "metadata")
_ENTRY_KEYS = ("stamp", "type", "key1", "key2", "pose", "cov", "injected_outlier")


class JRLError(Exception):
    """Base class; ``location`` names the offending part of the file."""

    kind = "error"

    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class MalformedJSONError(JRLError):
    kind = "malformed-json"


class SchemaVersionError(JRLError):
    kind = "schema-version"


class SchemaError(JRLError):
    kind = "schema"


class DanglingKeyError(JRLError):
    kind = "dangling-key"


class OrderingError(JRLError):
    kind = "ordering"


class CovarianceError(JRLError):
    kind = "covariance"


class LabelError(JRLError):
    kind = "label"


class PartitionError(JRLError):
    kind = "partition"


class OdometryGapError(PartitionError):
    kind = "odometry-gap"


class UnmappedKeyError(PartitionError):
    kind = "unmapped-key"


@dataclass
class Dataset:
    name: str
    robot_ids: list[str]
    measurements: dict[str, list[Measurement]]
    reference: ReferenceSolution
    noise_models: dict[str, NoiseEstimate] = field(default_factory=dict)
    outlier_labels: set[tuple[str, int]] = field(default_factory=set)
    metadata: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def loop_closures(self, kind: Optional[str] = None) -> list[tuple[tuple[str, int], Measurement]]:
        """``((robot, entry), measurement)`` for every loop closure, optionally of one kind."""
        out = []
        for r in self.robot_ids:
            for i, m in enumerate(self.measurements.get(r, [])):
                if m.is_loop_closure and (kind is None or m.kind == kind):
                    out.append(((r, i), m))
        return out

    def truth(self, m: Measurement) -> Pose3:
        """Reference value of a relative measurement (or the prior's pose)."""
        a = self.reference.pose(*m.key_from)
        if m.key_to is None:
            return a
        b = self.reference.pose(*m.key_to)
        return between(a, b)


# -- encoding -----------------------------------------------------------------

def _pose_obj(p: Pose3) -> dict:
    return {"t": [float(x) for x in p.translation], "q": [float(x) for x in p.rotation]}


def _key_obj(key: tuple[str, int]) -> dict:
    return {"robot": key[0], "index": int(key[1])}


def _entry_obj(m: Measurement) -> dict:
    obj: dict[str, Any] = {"stamp": m.timestamp, "type": _TYPE_OF_KIND[m.kind], "key1": _key_obj(m.key_from)}
    if m.key_to is not None:
        obj["key2"] = _key_obj(m.key_to)
    obj["pose"] = _pose_obj(m.value)
    obj["cov"] = [float(x) for x in np.asarray(m.covariance, dtype=float).reshape(-1)]
    obj["injected_outlier"] = bool(m.injected_outlier)
    obj.update(m.extra)
    return obj


def _noise_obj(n: NoiseEstimate) -> dict:
    return {"cov": [float(x) for x in np.asarray(n.Q).reshape(-1)], "sample_count": int(n.sample_count),
            "trans_max": n.trans_max, "rot_max": n.rot_max}


def to_obj(ds: Dataset) -> dict:
    obj: dict[str, Any] = {
        "name": ds.name,
        "version": SCHEMA_VERSION,
        "robots": list(ds.robot_ids),
        "measurements": {r: [_entry_obj(m) for m in ds.measurements.get(r, [])] for r in ds.robot_ids},
        "groundtruth": {r: [{"stamp": s, "index": i, "pose": _pose_obj(p)} for i, s, p in ds.reference.items(r)]
                        for r in ds.robot_ids},
        "noise_models": {k: _noise_obj(v) for k, v in sorted(ds.noise_models.items())},
        "outlier_labels": [{"robot": r, "entry": i} for r, i in sorted(ds.outlier_labels)],
        "metadata": ds.metadata,
    }
    for k, v in ds.extra.items():
        obj[k] = v
    return obj


def _compact(obj) -> str:
    return json.dumps(obj, separators=(", ", ": "), allow_nan=False, ensure_ascii=False)


def _render(obj, level: int) -> str:
    pad, inner = "  " * level, "  " * (level + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k, ensure_ascii=False)}: {_render(v, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list) and obj and all(isinstance(x, dict) for x in obj):
        return "[\n" + ",\n".join(inner + _compact(x) for x in obj) + "\n" + pad + "]"
    return _compact(obj)


def dumps(ds: Dataset) -> str:
    return _render(to_obj(ds), 0) + "\n"


def write(ds: Dataset, path) -> None:
    """Validate and write ``ds`` in canonical form."""
    problems = validate(ds)
    if problems:
        raise problems[0]
    text = dumps(ds)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# -- decoding -----------------------------------------------------------------

def _need(obj, key, typ, loc):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing field {key!r}", loc)
    v = obj[key]
    if typ is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"field {key!r} must be a number", loc)
        return float(v)
    if not isinstance(v, typ):
        raise SchemaError(f"field {key!r} must be {typ.__name__}", loc)
    return v


def _parse_pose(obj, loc) -> Pose3:
    t = _need(obj, "t", list, loc)
    q = _need(obj, "q", list, loc)
    if len(t) != 3 or len(q) != 4:
        raise SchemaError("pose needs t[3] and q[4]", loc)
    try:
        return Pose3(q, t)
    except ValueError as exc:
        raise SchemaError(str(exc), loc) from None


def _parse_key(obj, loc) -> tuple[str, int]:
    robot = _need(obj, "robot", str, loc)
    idx = _need(obj, "index", int, loc)
    return (robot, idx)


def _parse_cov(values, loc) -> np.ndarray:
    if not isinstance(values, list) or len(values) != 36:
        raise CovarianceError("cov must hold 36 numbers", loc)
    return np.array(values, dtype=float).reshape(6, 6)


def _parse_entry(obj, loc) -> Measurement:
    if not isinstance(obj, dict):
        raise SchemaError("measurement must be an object", loc)
    stamp = _need(obj, "stamp", float, loc)
    typ = _need(obj, "type", str, loc)
    key1 = _parse_key(_need(obj, "key1", dict, loc), loc + ".key1")
    key2 = None
    if typ == "prior":
        kind = "prior"
    elif typ == "between":
        kind = "odometry"
        key2 = _parse_key(_need(obj, "key2", dict, loc), loc + ".key2")
    elif typ == "loop":
        key2 = _parse_key(_need(obj, "key2", dict, loc), loc + ".key2")
        kind = "intra_lc" if key1[0] == key2[0] else "inter_lc"
    else:
        raise SchemaError(f"unknown measurement type {typ!r}", loc)
    pose = _parse_pose(_need(obj, "pose", dict, loc), loc + ".pose")
    cov = _parse_cov(obj.get("cov"), loc + ".cov")
    outlier = obj.get("injected_outlier", False)
    if not isinstance(outlier, bool):
        raise SchemaError("injected_outlier must be boolean", loc)
    extra = {k: v for k, v in obj.items() if k not in _ENTRY_KEYS}
    return Measurement(kind, key1, key2, pose, cov, stamp, outlier, extra)


def from_obj(obj) -> Dataset:
    if not isinstance(obj, dict):
        raise SchemaError("top level must be an object", "$")
    version = obj.get("version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"expected version {SCHEMA_VERSION!r}, found {version!r}", "$.version")
    name = _need(obj, "name", str, "$")
    robots = _need(obj, "robots", list, "$")
    if not all(isinstance(r, str) for r in robots) or len(set(robots)) != len(robots):
        raise SchemaError("robots must be distinct strings", "$.robots")
    meas_obj = _need(obj, "measurements", dict, "$")
    gt_obj = _need(obj, "groundtruth", dict, "$")
    measurements, poses, stamps = {}, {}, {}
    for r in robots:
        loc = f"$.groundtruth.{r}"
        entries = gt_obj.get(r)
        if not isinstance(entries, list):
            raise SchemaError("missing groundtruth for robot", loc)
        poses[r], stamps[r] = [], []
        for i, e in enumerate(entries):
            eloc = f"{loc}[{i}]"
            if _need(e, "index", int, eloc) != i:
                raise SchemaError(f"groundtruth indices must be contiguous from 0 (found {e['index']})", eloc)
            stamps[r].append(_need(e, "stamp", float, eloc))
            poses[r].append(_parse_pose(_need(e, "pose", dict, eloc), eloc + ".pose"))
        stream = meas_obj.get(r)
        if not isinstance(stream, list):
            raise SchemaError("missing measurement stream for robot", f"$.measurements.{r}")
        measurements[r] = [_parse_entry(e, f"$.measurements.{r}[{i}]") for i, e in enumerate(stream)]
    for where, block in (("measurements", meas_obj), ("groundtruth", gt_obj)):
        stray = set(block) - set(robots)
        if stray:
            raise SchemaError(f"entries for unlisted robots {sorted(stray)}", f"$.{where}")
    noise = {}
    for k, v in (_need(obj, "noise_models", dict, "$")).items():
        loc = f"$.noise_models.{k}"
        noise[k] = NoiseEstimate(_parse_cov(_need(v, "cov", list, loc), loc + ".cov"),
                                 _need(v, "sample_count", int, loc), v.get("trans_max"), v.get("rot_max"))
    labels = set()
    for i, lab in enumerate(_need(obj, "outlier_labels", list, "$")):
        loc = f"$.outlier_labels[{i}]"
        labels.add((_need(lab, "robot", str, loc), _need(lab, "entry", int, loc)))
    metadata = obj.get("metadata", {})
    if not isinstance(metadata, dict):
        raise SchemaError("metadata must be an object", "$.metadata")
    extra = {k: v for k, v in obj.items() if k not in _TOP_KEYS}
    return Dataset(name, list(robots), measurements, ReferenceSolution(poses, stamps), noise, labels,
                   metadata, extra)


def loads(text: str) -> Dataset:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedJSONError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    ds = from_obj(obj)
    problems = validate(ds)
    if problems:
        raise problems[0]
    return ds


def read(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return loads(text)
    except JRLError as exc:
        exc.args = (f"{path}: {exc.args[0]}",)
        raise


# -- invariants ---------------------------------------------------------------

def validate(ds: Dataset) -> list[JRLError]:
    """Every violated dataset invariant, in file order."""
    problems: list[JRLError] = []
    ref = ds.reference
    for r in ds.robot_ids:
        if r not in ref.poses:
            problems.append(SchemaError("robot has no groundtruth", f"$.groundtruth.{r}"))
    for r in ds.robot_ids:
        stream = ds.measurements.get(r, [])
        last = -np.inf
        for i, m in enumerate(stream):
            loc = f"$.measurements.{r}[{i}]"
            for name, key in (("key1", m.key_from), ("key2", m.key_to)):
                if key is not None and not ref.has_key(*key):
                    problems.append(DanglingKeyError(
                        f"{m.kind} references nonexistent keyframe {key[0]}:{key[1]}", f"{loc}.{name}"))
            if m.kind == "odometry" and (m.key_from[0] != m.key_to[0] or m.key_to[1] != m.key_from[1] + 1):
                problems.append(SchemaError("odometry must join consecutive keyframes of one robot", loc))
            if m.timestamp < last:
                problems.append(OrderingError(f"stamp {m.timestamp} precedes previous {last}", f"{loc}.stamp"))
            last = max(last, m.timestamp)
            try:
                check_covariance(m.covariance, rtol=1e-12)
            except ValueError as exc:
                problems.append(CovarianceError(str(exc), f"{loc}.cov"))
    for name, n in ds.noise_models.items():
        try:
            check_covariance(n.Q, rtol=1e-12)
        except ValueError as exc:
            problems.append(CovarianceError(str(exc), f"$.noise_models.{name}.cov"))
    for r, i in sorted(ds.outlier_labels):
        stream = ds.measurements.get(r, [])
        if not 0 <= i < len(stream):
            problems.append(LabelError(f"label points at missing entry {r}[{i}]", "$.outlier_labels"))
        elif not stream[i].is_loop_closure:
            problems.append(LabelError(f"label points at non-loop-closure entry {r}[{i}]", "$.outlier_labels"))
    return problems


def validate_file(path) -> list[JRLError]:
    """Like :func:`read` but returns every problem instead of raising the first."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        return [MalformedJSONError(exc.msg, f"line {exc.lineno} column {exc.colno}")]
    try:
        ds = from_obj(obj)
    except JRLError as exc:
        return [exc]
    return validate(ds)


# -- partitioning of centralized graphs ---------------------------------------

@dataclass(frozen=True, eq=False)
class GlobalEntry:
    """One factor of a centralized pose graph; ``key2`` is ``None`` for priors."""

    key1: Any
    key2: Any
    pose: Pose3
    covariance: np.ndarray
    stamp: float


_SYMBOL = re.compile(r"^([A-Za-z]+)(\d+)$")


def symbol_mapper(prefix_to_robot: Mapping[str, str]) -> Callable[[Any], tuple[str, int]]:
    """Map symbol keys such as ``"a12"`` to ``(robot, 12)`` via their letter prefix."""
    def mapper(key):
        m = _SYMBOL.match(str(key))
        if not m or m.group(1) not in prefix_to_robot:
            raise KeyError(key)
        return prefix_to_robot[m.group(1)], int(m.group(2))
    return mapper


def _entry_sort_key(m: Measurement):
    return (m.timestamp, _KIND_RANK[m.kind], m.key_from, m.key_to or ("", -1),
            tuple(m.value.translation), tuple(m.value.rotation), m.covariance.tobytes())


def partition_global_graph(entries: Iterable[GlobalEntry],
                           robot_of: Union[Callable[[Any], tuple[str, int]], Mapping[Any, tuple[str, int]]],
                           name: str = "converted",
                           reference: Optional[Mapping[Any, tuple[float, Pose3]]] = None) -> Dataset:
    """Split a centralized graph into per-robot, time-ordered streams.

    Odometry and intra-robot loop closures go to their robot. An inter-robot
    loop closure goes to the robot whose keyframe was created later (ties go
    to the lexicographically smaller robot id). Keyframe indices are shifted so
    each robot starts at 0. Without ``reference`` poses, the groundtruth block
    is dead-reckoned from each robot's prior (or the origin) through its odometry.
    """
    if isinstance(robot_of, Mapping):
        table = robot_of
        robot_of = table.__getitem__
    entries = list(entries)

    def keymap(k):
        try:
            r, i = robot_of(k)
        except (KeyError, ValueError):
            raise UnmappedKeyError(f"key {k!r} has no robot mapping") from None
        return str(r), int(i)

    mapped = [(e, keymap(e.key1), None if e.key2 is None else keymap(e.key2)) for e in entries]

    indices: dict[str, set[int]] = {}
    for _, k1, k2 in mapped:
        for k in (k1, k2):
            if k is not None:
                indices.setdefault(k[0], set()).add(k[1])
    robots = sorted(indices)
    base = {r: min(indices[r]) for r in robots}
    for r in robots:
        span = max(indices[r]) - base[r] + 1
        if span != len(indices[r]):
            raise OdometryGapError(f"robot {r!r} keyframe indices are not contiguous")

    def kind_of(k1, k2):
        if k2 is None:
            return "prior"
        if k1[0] != k2[0]:
            return "inter_lc"
        return "odometry" if k2[1] == k1[1] + 1 else "intra_lc"

    odom: dict[str, dict[int, GlobalEntry]] = {r: {} for r in robots}
    priors: dict[str, list[GlobalEntry]] = {r: [] for r in robots}
    for e, k1, k2 in mapped:
        kind = kind_of(k1, k2)
        if kind == "odometry":
            if k1[1] in odom[k1[0]]:
                raise OdometryGapError(f"duplicate odometry {k1} -> {k2}")
            odom[k1[0]][k1[1]] = e
        elif kind == "prior":
            priors[k1[0]].append(e)
    for r in robots:
        missing = [i for i in range(base[r], max(indices[r])) if i not in odom[r]]
        if missing:
            raise OdometryGapError(f"robot {r!r} lacks odometry from keyframe {missing[0]} to {missing[0] + 1}")

    # keyframe stamps and reference poses
    stamps: dict[str, list[float]] = {}
    poses: dict[str, list[Pose3]] = {}
    for r in robots:
        n = max(indices[r]) - base[r] + 1
        pri = sorted(priors[r], key=lambda e: e.stamp)
        if pri:
            s0 = pri[0].stamp
        elif n > 1:
            s0 = odom[r][base[r]].stamp
        else:
            s0 = min(e.stamp for e, k1, k2 in mapped if k1[0] == r or (k2 is not None and k2[0] == r))
        stamps[r] = [float(s0)] + [float(odom[r][base[r] + k].stamp) for k in range(n - 1)]
        p = pri[0].pose if pri else Pose3.identity()
        chain = [p]
        for k in range(n - 1):
            p = compose(p, odom[r][base[r] + k].pose)
            chain.append(p)
        poses[r] = chain
    source = "odometry"
    if reference is not None:
        source = "reference"
        ref_map = {keymap(k): v for k, v in reference.items()}
        for r in robots:
            for k in range(len(poses[r])):
                key = (r, base[r] + k)
                if key not in ref_map:
                    raise UnmappedKeyError(f"reference lacks keyframe {key}")
                stamps[r][k], poses[r][k] = float(ref_map[key][0]), ref_map[key][1]

    def local(k):
        return (k[0], k[1] - base[k[0]])

    streams: dict[str, list[Measurement]] = {r: [] for r in robots}
    for e, k1, k2 in mapped:
        kind = kind_of(k1, k2)
        if kind == "inter_lc":
            t1, t2 = stamps[k1[0]][k1[1] - base[k1[0]]], stamps[k2[0]][k2[1] - base[k2[0]]]
            if t1 != t2:
                owner = k1[0] if t1 > t2 else k2[0]
            else:
                owner = min(k1[0], k2[0])
        else:
            owner = k1[0]
        streams[owner].append(Measurement(kind, local(k1), None if k2 is None else local(k2), e.pose,
                                          np.asarray(e.covariance, dtype=float).reshape(6, 6), e.stamp))
    for r in robots:
        streams[r].sort(key=_entry_sort_key)
    meta = {"source": "partitioned global graph", "groundtruth_source": source,
            "index_offsets": {r: base[r] for r in robots}}
    return Dataset(name, robots, streams, ReferenceSolution(poses, stamps), metadata=meta)


def read_global_graph(path):
    """Load a centralized graph file; returns ``(entries, mapper, name, reference)``.

    Layout: ``{"name", "robot_map": {prefix: robot}, "entries": [{"key1", "key2"?,
    "pose": {"t", "q"}, "cov": [36], "stamp"}], "reference"?: {key: {"stamp", "pose"}}}``.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedJSONError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    mapper = symbol_mapper(_need(obj, "robot_map", dict, "$"))
    entries = []
    for i, e in enumerate(_need(obj, "entries", list, "$")):
        loc = f"$.entries[{i}]"
        entries.append(GlobalEntry(_need(e, "key1", str, loc), e.get("key2"),
                                   _parse_pose(_need(e, "pose", dict, loc), loc + ".pose"),
                                   _parse_cov(e.get("cov"), loc + ".cov"), _need(e, "stamp", float, loc)))
    reference = None
    if "reference" in obj:
        reference = {k: (_need(v, "stamp", float, f"$.reference.{k}"),
                         _parse_pose(_need(v, "pose", dict, f"$.reference.{k}"), f"$.reference.{k}.pose"))
                     for k, v in obj["reference"].items()}
    return entries, mapper, obj.get("name", "converted"), reference
