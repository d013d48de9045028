"""Core domain types and sensor-geometry predicates.

Everything here is immutable after construction so scenarios can be shared
freely across parallel Monte Carlo workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, NamedTuple

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .attacker import AttackConfig


class GlobalLabel(NamedTuple):
    """Network-wide unique track identity: a node-local label tagged with its origin node."""

    local_label: int
    node_id: int

    def __str__(self) -> str:
        return f"{self.local_label}@{self.node_id}"


@dataclass(frozen=True, eq=False)
class KinematicState:
    """Planar position/velocity state [px, py, vx, vy] in SI units."""

    p: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(2)
        v = np.asarray(self.v, dtype=float).reshape(2)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise ValueError("kinematic state components must be finite")
        p.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "KinematicState":
        x = np.asarray(x, dtype=float).reshape(4)
        return cls(p=x[:2], v=x[2:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v])


@dataclass(frozen=True, eq=False)
class Track:
    """Time-ordered sequence of states over the steps at which the object exists.

    ``times`` is strictly increasing; ``states`` is the matching (n, 4) array of
    [px, py, vx, vy] rows.
    """

    label: GlobalLabel
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=int).reshape(-1)
        states = np.asarray(self.states, dtype=float).reshape(-1, 4)
        if times.shape[0] != states.shape[0]:
            raise ValueError("track domain and state array lengths differ")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("track domain must be strictly increasing")
        if not np.all(np.isfinite(states)):
            raise ValueError("track states must be finite")
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @classmethod
    def from_states(cls, label: GlobalLabel, states: Mapping[int, KinematicState]) -> "Track":
        ks = sorted(states)
        arr = np.array([states[k].as_vector() for k in ks]).reshape(-1, 4)
        return cls(label=label, times=np.array(ks, dtype=int), states=arr)

    @property
    def domain(self) -> np.ndarray:
        return self.times

    @property
    def birth_time(self) -> int:
        return int(self.times[0]) if self.times.size else -1

    def state_at(self, k: int) -> KinematicState:
        idx = np.searchsorted(self.times, k)
        if idx >= self.times.size or self.times[idx] != k:
            raise KeyError(f"step {k} not in track domain")
        return KinematicState.from_vector(self.states[idx])

    def has_step(self, k: int) -> bool:
        idx = np.searchsorted(self.times, k)
        return idx < self.times.size and self.times[idx] == k

    def __len__(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True, eq=False)
class SensorNode:
    """A fixed sensor with a conical field of view and its communication neighbors."""

    id: int
    position: np.ndarray
    boresight: np.ndarray
    half_angle_deg: float
    range_m: float
    neighbors: frozenset[int]

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        bs = np.asarray(self.boresight, dtype=float).reshape(2)
        norm = np.linalg.norm(bs)
        if norm == 0 or not np.all(np.isfinite(bs)):
            raise ValueError(f"node {self.id}: boresight must be a nonzero finite vector")
        bs = bs / norm
        if not (0.0 < self.half_angle_deg <= 180.0):
            raise ValueError(f"node {self.id}: half_angle_deg must be in (0, 180]")
        if self.range_m <= 0:
            raise ValueError(f"node {self.id}: range_m must be positive")
        pos.setflags(write=False)
        bs.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "boresight", bs)
        object.__setattr__(self, "neighbors", frozenset(int(n) for n in self.neighbors))


@dataclass(frozen=True, eq=False)
class TargetTruth:
    """Ground-truth trajectory of one physical target (an unlabeled track)."""

    target_id: str
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=int).reshape(-1)
        states = np.asarray(self.states, dtype=float).reshape(-1, 4)
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def alive_at(self, k: int) -> bool:
        return bool(self.times.size) and self.times[0] <= k <= self.times[-1]

    def state_at(self, k: int) -> np.ndarray:
        idx = np.searchsorted(self.times, k)
        if idx >= self.times.size or self.times[idx] != k:
            raise KeyError(f"target {self.target_id} does not exist at step {k}")
        return self.states[idx]


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable world description for one simulation campaign."""

    nodes: tuple[SensorNode, ...]
    true_trajectories: tuple[TargetTruth, ...]
    surveillance_area: tuple[tuple[float, float], tuple[float, float]]
    horizon: int
    dt: float
    sigma_v: float
    sigma_r: float
    p_detect: float
    clutter_rate: float
    compromised_nodes: frozenset[int]
    attack: "AttackConfig | None"
    seed: int
    tracker: "TrackerParams" = field(default_factory=lambda: TrackerParams())
    matching: "MatchingParams" = field(default_factory=lambda: MatchingParams())

    def __post_init__(self):
        if not (0.0 <= self.p_detect <= 1.0):
            raise ValueError("p_detect must lie in [0, 1]")
        if self.clutter_rate < 0:
            raise ValueError("clutter_rate must be nonnegative")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        ids = {n.id for n in self.nodes}
        if len(ids) != len(self.nodes):
            raise ValueError("node ids must be unique")
        for n in self.nodes:
            for b in n.neighbors:
                if b not in ids:
                    raise ValueError(f"node {n.id} lists unknown neighbor {b}")
                other = self.node(b)
                if n.id not in other.neighbors:
                    raise ValueError(f"neighbor relation {n.id}<->{b} is not symmetric")
        unknown = self.compromised_nodes - ids
        if unknown:
            raise ValueError(f"compromised_nodes contains unknown ids {sorted(unknown)}")

    def node(self, node_id: int) -> SensorNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"no node with id {node_id}")

    @property
    def node_ids(self) -> list[int]:
        return sorted(n.id for n in self.nodes)

    @property
    def honest_nodes(self) -> frozenset[int]:
        return frozenset(self.node_ids) - self.compromised_nodes

    def truth_states_at(self, k: int) -> dict[str, np.ndarray]:
        """Map of target id -> state vector for targets alive at step k."""
        return {t.target_id: t.state_at(k) for t in self.true_trajectories if t.alive_at(k)}


@dataclass(frozen=True)
class TrackerParams:
    """Local GNN tracker constants (confirmation, death, gating)."""

    confirm_hits: int = 3
    confirm_window: int = 4
    death_misses: int = 4
    gate_quantile: float = 0.99
    init_velocity_std: float = 30.0


@dataclass(frozen=True)
class MatchingParams:
    """Track-matching configuration shared by consensus and evaluation."""

    cutoff: float = 100.0
    order: float = 1.0
    base: str = "manhattan"
    position_only: bool = True
    retention_min_length: int = 5

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.base not in ("manhattan", "euclidean"):
            raise ValueError(f"unknown base distance {self.base!r}")


def in_fov(node: SensorNode, p: np.ndarray) -> bool:
    """True iff point ``p`` lies inside the node's range-limited cone.

    A zero displacement (point exactly at the sensor) counts as inside,
    which removes the angle singularity at the apex.
    """
    p = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    d = p - node.position
    r = float(np.linalg.norm(d))
    if r > node.range_m:
        return False
    if r == 0.0:
        return True
    cos_a = float(np.dot(d, node.boresight)) / r
    angle = np.degrees(np.arccos(np.clip(cos_a, -1.0, 1.0)))
    return angle <= node.half_angle_deg


def blind_region_test(scenario: Scenario, p: np.ndarray, honest_nodes: Iterable[int]) -> bool:
    """True iff ``p`` is outside the field of view of every listed honest node.

    With an empty honest set every point is trivially blind.
    """
    honest = set(honest_nodes)
    unknown = honest - set(scenario.node_ids)
    if unknown:
        raise ValueError(f"honest_nodes contains unknown ids {sorted(unknown)}")
    return not any(in_fov(scenario.node(n), p) for n in sorted(honest))


def waypoint_trajectory(target_id: str, waypoints: list[tuple[int, np.ndarray]], dt: float) -> TargetTruth:
    """Build a piecewise constant-velocity trajectory through timed waypoints.

    Positions are interpolated linearly between consecutive waypoints; the
    velocity on each segment is the segment slope divided by ``dt``. The final
    state keeps the last segment's velocity.
    """
    if len(waypoints) < 1:
        raise ValueError(f"target {target_id}: needs at least one waypoint")
    wp = sorted(((int(t), np.asarray(p, dtype=float).reshape(2)) for t, p in waypoints), key=lambda w: w[0])
    ts = [t for t, _ in wp]
    if len(set(ts)) != len(ts):
        raise ValueError(f"target {target_id}: waypoint times must be distinct")
    times, states = [], []
    if len(wp) == 1:
        t0, p0 = wp[0]
        return TargetTruth(target_id, np.array([t0]), np.array([[p0[0], p0[1], 0.0, 0.0]]))
    for (t0, p0), (t1, p1) in zip(wp[:-1], wp[1:]):
        vel = (p1 - p0) / ((t1 - t0) * dt)
        for k in range(t0, t1):
            pos = p0 + vel * (k - t0) * dt
            times.append(k)
            states.append([pos[0], pos[1], vel[0], vel[1]])
    t_end, p_end = wp[-1]
    vel = (wp[-1][1] - wp[-2][1]) / ((wp[-1][0] - wp[-2][0]) * dt)
    times.append(t_end)
    states.append([p_end[0], p_end[1], vel[0], vel[1]])
    return TargetTruth(target_id, np.array(times), np.array(states))
