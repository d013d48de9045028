"""Track-to-track fusion across nodes: kinematic consensus plus label agreement.

Each node keeps a memory of the track histories reported by itself and its
neighbors. At every step it recomputes its network consensus from scratch by
sequentially fusing pairs of track sets (matched via the time-averaged track
distance), so consensus output never feeds back into local tracking. Matched
labels are unioned into equivalence classes; the class representative is the
longest-lived (earliest-born) label, which is what an identity transfer
ultimately manipulates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import match_track_sets
from .scenario import GlobalLabel, KinematicState, MatchingParams, Track


@dataclass(frozen=True, eq=False)
class ConsensusOutput:
    time: int
    node: int
    items: tuple[tuple[GlobalLabel, KinematicState], ...]

    @property
    def labels(self) -> list[GlobalLabel]:
        return [label for label, _ in self.items]


class LabelEquivalence:
    """Union-find over global labels with earliest-birth representatives.

    Ties on birth time break by (node id, local label), ascending. Classes
    only ever grow within a run.
    """

    def __init__(self):
        self._parent: dict[GlobalLabel, GlobalLabel] = {}
        self._birth: dict[GlobalLabel, int] = {}

    def observe(self, label: GlobalLabel, birth_time: int):
        """Register a label (first report time at this node)."""
        if label not in self._parent:
            self._parent[label] = label
            self._birth[label] = int(birth_time)
        else:
            self._birth[label] = min(self._birth[label], int(birth_time))

    def birth(self, label: GlobalLabel) -> int:
        return self._birth[label]

    def _find(self, label: GlobalLabel) -> GlobalLabel:
        root = label
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[label] != root:
            self._parent[label], label = root, self._parent[label]
        return root

    def union(self, a: GlobalLabel, b: GlobalLabel):
        if a not in self._parent or b not in self._parent:
            raise KeyError("labels must be observed before union")
        ra, rb = self._find(a), self._find(b)
        if ra != rb:
            self._parent[rb] = ra

    def same_class(self, a: GlobalLabel, b: GlobalLabel) -> bool:
        return self._find(a) == self._find(b)

    def class_members(self, label: GlobalLabel) -> list[GlobalLabel]:
        root = self._find(label)
        return sorted(l for l in self._parent if self._find(l) == root)

    def representative(self, label: GlobalLabel) -> GlobalLabel:
        """Longest-lived member of the label's class."""
        members = self.class_members(label)
        return min(members, key=lambda l: (self._birth[l], l.node_id, l.local_label))

    def known(self, label: GlobalLabel) -> bool:
        return label in self._parent


def update_label_equivalence(
    equiv: LabelEquivalence, matched_pairs: list[tuple[Track, Track]]
) -> LabelEquivalence:
    """Union the labels of each matched pair; transitivity holds by union-find."""
    for ta, tb in matched_pairs:
        equiv.union(ta.label, tb.label)
    return equiv


def _fuse_pair(ta: Track, tb: Track, wa: float, wb: float, label: GlobalLabel) -> Track:
    """Convex state combination over the union of domains (single-sided steps
    keep the existing state), so downstream matching sees a full history."""
    union = np.union1d(ta.times, tb.times)
    in_a = np.isin(union, ta.times)
    in_b = np.isin(union, tb.times)
    states = np.empty((union.size, 4))
    ia = np.searchsorted(ta.times, union[in_a])
    ib = np.searchsorted(tb.times, union[in_b])
    states[in_a] = ta.states[ia]
    states[in_b & ~in_a] = tb.states[np.searchsorted(tb.times, union[in_b & ~in_a])]
    both = in_a & in_b
    if np.any(both):
        sa = ta.states[np.searchsorted(ta.times, union[both])]
        sb = tb.states[np.searchsorted(tb.times, union[both])]
        states[both] = wa * sa + wb * sb
    return Track(label=label, times=union, states=states)


def pairwise_consensus_tracks(
    Ta: list[Track],
    Tb: list[Track],
    weights: tuple[float, float],
    params: MatchingParams,
    equiv: LabelEquivalence | None = None,
) -> list[Track]:
    """Two-set kinematic consensus at the track level.

    Matched pairs are fused under the class representative label (the
    equivalence structure is updated first); unmatched tracks survive only if
    their stored history is at least the retention length.
    """
    wa, wb = weights
    if wa < 0 or wb < 0 or abs(wa + wb - 1.0) > 1e-9:
        raise ValueError("fusion weights must be nonnegative and sum to 1")
    matched, unmatched_a, unmatched_b = match_track_sets(Ta, Tb, params)
    if equiv is not None:
        update_label_equivalence(equiv, matched)
    out: list[Track] = []
    for ta, tb in matched:
        if equiv is not None:
            label = equiv.representative(ta.label)
        else:
            label = min((ta, tb), key=lambda t: (t.birth_time, t.label.node_id, t.label.local_label)).label
        out.append(_fuse_pair(ta, tb, wa, wb, label))
    for t in unmatched_a + unmatched_b:
        if len(t) >= params.retention_min_length:
            label = equiv.representative(t.label) if equiv is not None and equiv.known(t.label) else t.label
            out.append(Track(label=label, times=t.times, states=t.states))
    out = _merge_same_label(out)
    out.sort(key=lambda t: t.label)
    return out


def _merge_same_label(tracks: list[Track]) -> list[Track]:
    """Collapse tracks that ended up under one representative label (their
    identities are declared equal by label consensus): pointwise mean over the
    members that exist at each step."""
    by_label: dict[GlobalLabel, list[Track]] = {}
    for t in tracks:
        by_label.setdefault(t.label, []).append(t)
    out = []
    for label in sorted(by_label):
        group = by_label[label]
        if len(group) == 1:
            out.append(group[0])
            continue
        union = group[0].times
        for t in group[1:]:
            union = np.union1d(union, t.times)
        states = np.zeros((union.size, 4))
        counts = np.zeros(union.size)
        for t in group:
            present = np.isin(union, t.times)
            states[present] += t.states[np.searchsorted(t.times, union[present])]
            counts[present] += 1
        states /= counts[:, None]
        out.append(Track(label=label, times=union, states=states))
    return out


def pairwise_consensus(
    Ta: list[Track],
    Tb: list[Track],
    weights: tuple[float, float],
    params: MatchingParams,
    time: int,
    equiv: LabelEquivalence | None = None,
) -> list[tuple[GlobalLabel, KinematicState]]:
    """Current-step items of the two-set consensus (labels with fused states)."""
    fused = pairwise_consensus_tracks(Ta, Tb, weights, params, equiv)
    items = [(t.label, t.state_at(time)) for t in fused if t.has_step(time)]
    items.sort(key=lambda it: it[0])
    return items


def network_consensus(
    node_id: int,
    own: list[Track],
    neighbor_tracks: dict[int, list[Track]],
    params: MatchingParams,
    time: int,
    equiv: LabelEquivalence | None = None,
) -> ConsensusOutput:
    """Sequential fold of pairwise consensus over neighbors in ascending id
    order, with equal weights at every fold."""
    if not neighbor_tracks:
        items = [(equiv.representative(t.label) if equiv is not None and equiv.known(t.label) else t.label,
                  t.state_at(time)) for t in own if t.has_step(time)]
        items.sort(key=lambda it: it[0])
        return ConsensusOutput(time=time, node=node_id, items=tuple(items))
    current = sorted(own, key=lambda t: t.label)
    for b in sorted(neighbor_tracks):
        current = pairwise_consensus_tracks(current, neighbor_tracks[b], (0.5, 0.5), params, equiv)
    items = []
    for t in current:
        if t.has_step(time):
            label = equiv.representative(t.label) if equiv is not None and equiv.known(t.label) else t.label
            items.append((label, t.state_at(time)))
    items.sort(key=lambda it: it[0])
    return ConsensusOutput(time=time, node=node_id, items=tuple(items))


@dataclass
class _TrackAccum:
    times: list[int] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)

    def append(self, time: int, state: np.ndarray):
        if self.times and time <= self.times[-1]:
            raise ValueError("reports must arrive in increasing time order")
        self.times.append(int(time))
        self.states.append(np.asarray(state, dtype=float).reshape(4))

    def as_track(self, label: GlobalLabel) -> Track:
        return Track(label=label, times=np.array(self.times), states=np.array(self.states).reshape(-1, 4))


class NodeFusion:
    """Per-node consensus state: source track memories plus label equivalence."""

    def __init__(self, node_id: int, params: MatchingParams):
        self.node_id = node_id
        self.params = params
        self.equiv = LabelEquivalence()
        self._memory: dict[int, dict[GlobalLabel, _TrackAccum]] = {}
        self._last_report: dict[int, dict[GlobalLabel, int]] = {}

    def receive(self, source: int, time: int, items: list[tuple[GlobalLabel, np.ndarray]]):
        """Store one source's report set for a step (own reports included)."""
        mem = self._memory.setdefault(source, {})
        last = self._last_report.setdefault(source, {})
        for label, state in items:
            mem.setdefault(label, _TrackAccum()).append(time, state)
            last[label] = int(time)
            self.equiv.observe(label, mem[label].times[0])

    def active_tracks(self, source: int, time: int) -> list[Track]:
        """Tracks from a source whose latest report is the current step."""
        mem = self._memory.get(source, {})
        last = self._last_report.get(source, {})
        out = [acc.as_track(label) for label, acc in mem.items() if last.get(label) == time]
        out.sort(key=lambda t: t.label)
        return out

    def consensus_at(self, time: int, neighbor_ids: list[int]) -> ConsensusOutput:
        own = self.active_tracks(self.node_id, time)
        neighbor_tracks = {b: self.active_tracks(b, time) for b in sorted(neighbor_ids)}
        return network_consensus(self.node_id, own, neighbor_tracks, self.params, time, self.equiv)
