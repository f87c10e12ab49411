"""Discrete-time simulation of inter-robot scan exchange.

Robots share one channel of bandwidth ``B``. Each robot takes part in at most
one peer-to-peer transfer at a time. Every step of length ``step_delta``:

1. idle, started robots closer than ``d_init`` try to pair up, nearest pair
   first; an attempt succeeds with probability ``phi(d)``;
2. every active transfer draws connectivity ``Bern(phi(d))`` and moves
   ``B / I * draw * step_delta`` bytes, ``I`` being the number of transfers
   with an endpoint within ``d_intf`` of either of its robots (itself included);
3. transfers finish when the whole payload has moved, or fail once
   ``timeout_T`` seconds pass without any bytes moving.

Bandwidth is in kilobytes per second with 1 KB = ``kb_bytes`` (1000) bytes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import yaml

from .sync import SyncedSequence

__all__ = [
    "CommModel",
    "WIFI",
    "PRO_RADIO",
    "ActiveComm",
    "CommEvent",
    "CommEventLog",
    "connectivity_prob",
    "interference_count",
    "step_throughput",
    "compressed_scan_bytes",
    "select_payload",
    "simulate",
    "load_comm_model",
    "resolve_comm_model",
]


@dataclass(frozen=True)
class CommModel:
    B: float
    d_init: float
    d_intf: float
    P_max: float
    alpha: float
    beta: float
    r_max: float
    timeout_T: float = 2.0
    step_delta: float = 0.1
    mu_xz: float = 0.653
    sigma_xz: float = 0.04
    bytes_per_point: int = 12
    kb_bytes: int = 1000
    name: str = "custom"

    def __post_init__(self):
        # d_init may be 0: that disables initialization entirely
        for key in ("B", "d_intf", "r_max", "timeout_T", "step_delta"):
            if not getattr(self, key) > 0:
                raise ValueError(f"comm model {key} must be > 0, got {getattr(self, key)}")
        if self.d_init < 0:
            raise ValueError("comm model d_init must be >= 0")
        if not 0 < self.P_max <= 1:
            raise ValueError("P_max must lie in (0, 1]")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0 < self.mu_xz <= 1:
            raise ValueError("mu_xz must lie in (0, 1]")
        if self.sigma_xz < 0:
            raise ValueError("sigma_xz must be >= 0")

    @property
    def bytes_per_second(self) -> float:
        return self.B * self.kb_bytes

    def to_dict(self) -> dict:
        return asdict(self)


WIFI = CommModel(B=2000, d_init=30, d_intf=40, P_max=0.7, alpha=1.1, beta=0.1, r_max=70, name="wifi")
PRO_RADIO = CommModel(B=1000, d_init=150, d_intf=150, P_max=0.8, alpha=1.8, beta=0.3, r_max=200,
                      name="pro_radio")

BUILTIN_MODELS = {"wifi": WIFI, "pro_radio": PRO_RADIO, "pro-radio": PRO_RADIO}


def load_comm_model(path) -> CommModel:
    """Load a model from a YAML mapping keyed by the field names of :class:`CommModel`."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if "comm_model" in data and isinstance(data["comm_model"], Mapping):
        data = data["comm_model"]
    known = {f.name for f in fields(CommModel)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown comm model keys {sorted(unknown)}")
    data.setdefault("name", "custom")
    return CommModel(**data)


def resolve_comm_model(spec: str) -> CommModel:
    """``wifi``, ``pro-radio``/``pro_radio`` or ``custom:<path>``."""
    if spec in BUILTIN_MODELS:
        return BUILTIN_MODELS[spec]
    if spec.startswith("custom:"):
        return load_comm_model(spec[len("custom:"):])
    raise ValueError(f"unknown comm model {spec!r}")


def connectivity_prob(model: CommModel, d):
    """``min(P_max, alpha * (beta ** (d / r_max) - beta))`` clamped to [0, 1]."""
    d = np.asarray(d, dtype=float)
    phi = np.minimum(model.P_max, model.alpha * (model.beta ** (d / model.r_max) - model.beta))
    phi = np.clip(phi, 0.0, 1.0)
    phi = np.where(d >= model.r_max, 0.0, phi)
    return float(phi) if phi.ndim == 0 else phi


def step_throughput(model: CommModel, interference: int, draw: int) -> float:
    if interference < 1:
        raise ValueError("interference count must be >= 1")
    return model.bytes_per_second / interference * draw * model.step_delta


def compressed_scan_bytes(model: CommModel, num_points: int, rng: np.random.Generator) -> int:
    """Compressed size of an xyz float32 scan, ``round(f * S)``.

    ``f`` is normal(``mu_xz``, ``sigma_xz``) resampled until it lands in (0, 1].
    """
    if num_points <= 0:
        raise ValueError("num_points must be positive")
    raw = model.bytes_per_point * num_points
    if model.sigma_xz == 0:
        f = model.mu_xz
    else:
        while True:
            f = rng.normal(model.mu_xz, model.sigma_xz)
            if 0.0 < f <= 1.0:
                break
    return int(round(f * raw))


def select_payload(available: Sequence[int], delivered: Iterable[int],
                   rng: np.random.Generator) -> Optional[int]:
    """Uniform pick among ``available`` keyframe indices not yet delivered."""
    done = set(delivered)
    candidates = sorted(i for i in available if i not in done)
    if not candidates:
        return None
    return candidates[int(rng.integers(len(candidates)))]


@dataclass
class ActiveComm:
    sender: str
    receiver: str
    kf_index: int
    payload_bytes: int
    start_time: float
    last_progress_time: float
    transferred_bytes: float = 0.0

    @property
    def robots(self) -> tuple[str, str]:
        return (self.sender, self.receiver)


def interference_count(active: Sequence[ActiveComm], a: str, b: str,
                       positions: Mapping[str, np.ndarray], d_intf: float) -> int:
    """Transfers with at least one endpoint within ``d_intf`` of ``a`` or ``b``.

    The ``(a, b)`` transfer itself is always counted.
    """
    pa, pb = np.asarray(positions[a]), np.asarray(positions[b])
    count = 0
    for c in active:
        if {c.sender, c.receiver} == {a, b}:
            count += 1
            continue
        for r in c.robots:
            p = np.asarray(positions[r])
            if np.linalg.norm(p - pa) <= d_intf or np.linalg.norm(p - pb) <= d_intf:
                count += 1
                break
    return max(count, 1)


@dataclass(frozen=True)
class CommEvent:
    t: float
    event: str  # init | progress | delivered | failed
    sender: str
    receiver: str
    kf_robot: str
    kf_index: int
    bytes: float = 0.0
    interference: int = 0
    draw: int = 0
    reason: str = ""


CSV_COLUMNS = ("t", "event", "sender", "receiver", "kf_robot", "kf_index", "bytes", "interference", "draw")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class CommEventLog:
    events: list[CommEvent] = field(default_factory=list)

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def of_kind(self, kind: str) -> list[CommEvent]:
        return [e for e in self.events if e.event == kind]

    def deliveries(self, receiver: Optional[str] = None) -> list[CommEvent]:
        return [e for e in self.events if e.event == "delivered" and (receiver is None or e.receiver == receiver)]

    def counts(self) -> dict:
        return {
            "init": len(self.of_kind("init")),
            "delivered": len(self.of_kind("delivered")),
            "failed": len(self.of_kind("failed")),
            "bytes_delivered": int(sum(e.bytes for e in self.of_kind("delivered"))),
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for e in self.events:
                # failure reason travels in the unused interference column
                interference = e.reason if e.event == "failed" else e.interference
                w.writerow([_fmt(e.t), e.event, e.sender, e.receiver, e.kf_robot, e.kf_index,
                            _fmt(e.bytes), interference, e.draw])

    @classmethod
    def from_csv(cls, path) -> CommEventLog:
        events = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
            for row in reader:
                failed = row["event"] == "failed"
                events.append(CommEvent(
                    t=float(row["t"]), event=row["event"], sender=row["sender"], receiver=row["receiver"],
                    kf_robot=row["kf_robot"], kf_index=int(row["kf_index"]), bytes=float(row["bytes"]),
                    interference=0 if failed else int(row["interference"]), draw=int(row["draw"]),
                    reason=row["interference"] if failed else ""))
        return cls(events)


def _schedule(keyframes, default_points: int) -> dict[str, list[tuple[float, int, int]]]:
    out = {}
    for robot, items in keyframes.items():
        rows = []
        for kf in items:
            if hasattr(kf, "timestamp"):
                rows.append((float(kf.timestamp), int(kf.index), int(getattr(kf, "num_points", default_points))))
            else:
                t, idx, *rest = kf
                rows.append((float(t), int(idx), int(rest[0]) if rest else default_points))
        rows.sort()
        out[robot] = rows
    return out


def simulate(model: CommModel, seq: SyncedSequence, keyframes: Mapping[str, Sequence],
             t_start: Optional[float] = None, t_end: Optional[float] = None, rng_seed: int = 0,
             num_points: int = 100_000) -> CommEventLog:
    """Run the scan-exchange simulation and return its event log.

    ``keyframes`` maps robot id to its keyframe schedule: objects with
    ``timestamp``, ``index`` and optionally ``num_points`` attributes, or
    ``(timestamp, index[, num_points])`` tuples. A scan becomes sendable once
    the simulated clock reaches its keyframe timestamp.
    """
    t_start = seq.start if t_start is None else float(t_start)
    t_end = seq.end if t_end is None else float(t_end)
    if not t_start < t_end:
        raise ValueError(f"t_start ({t_start}) must precede t_end ({t_end})")
    schedule = _schedule(keyframes, num_points)
    robots = [r for r in seq.robot_ids if r in schedule] or seq.robot_ids
    for r in robots:
        rows = schedule.get(r, [])
        first = seq.window(r)[0]
        if rows and rows[0][0] < first - 1e-9:
            raise ValueError(f"comm_sim: keyframe {rows[0][1]} of robot {r!r} at t={rows[0][0]} "
                             f"precedes the robot's start {first}")

    rng = np.random.default_rng(rng_seed)
    dt = model.step_delta
    n_steps = int(math.floor((t_end - t_start) / dt + 1e-9)) + 1
    times = t_start + dt * np.arange(n_steps)
    pos = {r: seq.positions(r, times) for r in robots}
    kf_times = {r: np.array([row[0] for row in schedule.get(r, [])]) for r in robots}

    log = CommEventLog()
    active: list[ActiveComm] = []
    busy: set[str] = set()
    delivered: dict[tuple[str, str], set[int]] = {}
    points = {(r, row[1]): row[2] for r in robots for row in schedule.get(r, [])}
    eps = 1e-9

    def sendable(sender: str, t: float) -> list[int]:
        n = int(np.searchsorted(kf_times[sender], t + eps, side="right"))
        return [row[1] for row in schedule.get(sender, [])[:n]]

    for k in range(n_steps):
        t = float(times[k])
        here = {r: pos[r][k] for r in robots if not np.isnan(pos[r][k][0])}

        # 1. initialization, nearest pair first
        idle = sorted(r for r in here if r not in busy)
        pairs = []
        for i, a in enumerate(idle):
            for b in idle[i + 1:]:
                d = float(np.linalg.norm(here[a] - here[b]))
                if d < model.d_init:
                    pairs.append((d, a, b))
        pairs.sort()
        for d, a, b in pairs:
            if a in busy or b in busy:
                continue
            if not rng.random() < connectivity_prob(model, d):
                continue
            first, second = (a, b) if rng.random() < 0.5 else (b, a)
            choice = None
            for s, r in ((first, second), (second, first)):
                idx = select_payload(sendable(s, t), delivered.get((s, r), ()), rng)
                if idx is not None:
                    choice = (s, r, idx)
                    break
            if choice is None:
                continue
            s, r, idx = choice
            size = compressed_scan_bytes(model, points[(s, idx)], rng)
            active.append(ActiveComm(s, r, idx, size, t, t))
            busy.update((s, r))
            log.events.append(CommEvent(t, "init", s, r, s, idx, float(size)))

        # 2. transfer; interference is evaluated against the settled set of transfers
        counts = [interference_count(active, c.sender, c.receiver, here, model.d_intf) for c in active]
        for c, n_intf in zip(active, counts):
            d = float(np.linalg.norm(here[c.sender] - here[c.receiver]))
            draw = int(rng.random() < connectivity_prob(model, d))
            moved = step_throughput(model, n_intf, draw)
            if moved > 0:
                c.transferred_bytes += moved
                c.last_progress_time = t
            log.events.append(CommEvent(t, "progress", c.sender, c.receiver, c.sender, c.kf_index,
                                        moved, n_intf, draw))

        # 3. termination
        still = []
        for c in active:
            if c.transferred_bytes >= c.payload_bytes:
                delivered.setdefault((c.sender, c.receiver), set()).add(c.kf_index)
                log.events.append(CommEvent(t, "delivered", c.sender, c.receiver, c.sender, c.kf_index,
                                            float(c.payload_bytes)))
                busy.difference_update(c.robots)
            elif t - c.last_progress_time >= model.timeout_T - eps:
                log.events.append(CommEvent(t, "failed", c.sender, c.receiver, c.sender, c.kf_index,
                                            c.transferred_bytes, reason="timeout"))
                busy.difference_update(c.robots)
            else:
                still.append(c)
        active = still
    return log
