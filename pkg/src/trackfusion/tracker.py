"""Per-node multi-target tracker: Kalman filters under global-nearest-neighbor
association with M-of-N confirmation and consecutive-miss deletion.

Only confirmed tracks are reported; a confirmed track keeps reporting its
predicted state through misses until it dies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import chi2

from .scenario import KinematicState, TrackerParams
from .sensing import Measurement

logger = logging.getLogger(__name__)

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def motion_matrices(dt: float, sigma_v: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant-velocity transition matrix and discrete white-noise-acceleration
    process covariance scaled by sigma_v**2."""
    A = np.eye(4)
    A[0, 2] = dt
    A[1, 3] = dt
    G = np.array([[0.5 * dt**2, 0.0], [0.0, 0.5 * dt**2], [dt, 0.0], [0.0, dt]])
    Q = G @ G.T * sigma_v**2
    return A, Q


@dataclass
class LocalTrack:
    """Mutable per-node track record."""

    label: int
    mean: np.ndarray
    cov: np.ndarray
    birth_time: int
    status: str = "tentative"  # tentative | confirmed | dead
    hits: int = 0
    misses: int = 0
    hit_history: list[bool] = field(default_factory=list)

    def state(self) -> KinematicState:
        return KinematicState.from_vector(self.mean)


class GnnTracker:
    """One instance per node per run; never shared across nodes."""

    def __init__(self, node_id: int, dt: float, sigma_v: float, sigma_r: float, params: TrackerParams):
        self.node_id = node_id
        self.params = params
        self.A, self.Q = motion_matrices(dt, sigma_v)
        self.R = np.eye(2) * sigma_r**2
        self.gate2 = chi2.ppf(params.gate_quantile, df=2)
        self.tracks: list[LocalTrack] = []
        self._next_label = 1

    def step(self, measurements: list[Measurement], time: int) -> list[tuple[int, KinematicState]]:
        """Advance one step and return the confirmed (label, state) reports."""
        live = [t for t in self.tracks if t.status != "dead"]
        for t in live:
            t.mean = self.A @ t.mean
            t.cov = self.A @ t.cov @ self.A.T + self.Q

        zs = [m.z for m in measurements]
        assignments, unassigned = self._associate(live, zs)

        for ti, t in enumerate(live):
            zi = assignments.get(ti)
            if zi is None:
                self._miss(t)
            else:
                self._update(t, zs[zi])

        for zi in unassigned:
            label = self._next_label
            self._next_label += 1
            self.tracks.append(
                LocalTrack(
                    label=label,
                    mean=np.concatenate([zs[zi], [0.0, 0.0]]),
                    cov=np.diag(
                        [
                            max(self.R[0, 0], 1.0),
                            max(self.R[1, 1], 1.0),
                            self.params.init_velocity_std**2,
                            self.params.init_velocity_std**2,
                        ]
                    ),
                    birth_time=time,
                    hits=1,
                    hit_history=[True],
                )
            )

        out = []
        for t in self.tracks:
            if t.status == "confirmed":
                out.append((t.label, t.state()))
        return out

    def _associate(self, live: list[LocalTrack], zs: list[np.ndarray]) -> tuple[dict[int, int], list[int]]:
        """Gated global-nearest-neighbor assignment minimizing summed Mahalanobis^2."""
        if not live or not zs:
            return {}, list(range(len(zs)))
        cost = np.full((len(live), len(zs)), np.inf)
        for i, t in enumerate(live):
            S = H @ t.cov @ H.T + self.R
            Sinv = np.linalg.inv(S)
            for j, z in enumerate(zs):
                nu = z - H @ t.mean
                d2 = float(nu @ Sinv @ nu)
                if d2 <= self.gate2:
                    cost[i, j] = d2
        BIG = 1e9
        rows, cols = linear_sum_assignment(np.where(np.isfinite(cost), cost, BIG))
        assignments = {int(i): int(j) for i, j in zip(rows, cols) if np.isfinite(cost[i, j])}
        assigned_meas = set(assignments.values())
        unassigned = [j for j in range(len(zs)) if j not in assigned_meas]
        return assignments, unassigned

    def _update(self, t: LocalTrack, z: np.ndarray):
        S = H @ t.cov @ H.T + self.R
        K = t.cov @ H.T @ np.linalg.inv(S)
        t.mean = t.mean + K @ (z - H @ t.mean)
        t.cov = (np.eye(4) - K @ H) @ t.cov
        self._repair_cov(t)
        t.hits += 1
        t.misses = 0
        t.hit_history.append(True)
        if t.status == "tentative":
            # M-of-N over the first N steps of the track's life
            if sum(t.hit_history[: self.params.confirm_window]) >= self.params.confirm_hits:
                t.status = "confirmed"

    def _miss(self, t: LocalTrack):
        t.misses += 1
        t.hit_history.append(False)
        if t.status == "tentative":
            # dead once the first-N window can no longer reach M hits
            window = t.hit_history[: self.params.confirm_window]
            remaining = self.params.confirm_window - len(t.hit_history)
            if sum(window) + max(remaining, 0) < self.params.confirm_hits:
                t.status = "dead"
        elif t.misses >= self.params.death_misses:
            t.status = "dead"

    def _repair_cov(self, t: LocalTrack):
        t.cov = 0.5 * (t.cov + t.cov.T)
        eigvals = np.linalg.eigvalsh(t.cov)
        if eigvals[0] < 1e-9:
            logger.debug("node %d track %d: clamping covariance eigenvalues", self.node_id, t.label)
            w, V = np.linalg.eigh(t.cov)
            t.cov = V @ np.diag(np.maximum(w, 1e-9)) @ V.T
