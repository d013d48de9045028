"""Per-node measurement generation: detections, noise, and clutter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario, SensorNode, in_fov


@dataclass(frozen=True, eq=False)
class Measurement:
    """A 2-D position report from one sensor at one step."""

    z: np.ndarray
    origin_node: int
    time: int
    is_clutter: bool = False

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(2)
        if not np.all(np.isfinite(z)):
            raise ValueError("measurement must be finite")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


def measurement_rng(master_seed: int, run_index: int, node_id: int, time: int) -> np.random.Generator:
    """Deterministic per-(run, node, step) stream so runs replay bit-exactly."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, run_index, node_id, time)))


def sense(
    node: SensorNode,
    true_states: list[np.ndarray],
    time: int,
    rng: np.random.Generator,
    *,
    p_detect: float,
    sigma_r: float,
    clutter_rate: float,
) -> list[Measurement]:
    """Generate this node's measurement set for one step.

    Each in-FoV target is detected with probability ``p_detect`` and reported at
    its true position plus isotropic Gaussian noise (std ``sigma_r`` per axis).
    A Poisson(``clutter_rate``) number of false alarms is appended, distributed
    uniformly over the node's FoV sector.
    """
    out: list[Measurement] = []
    for x in true_states:
        pos = np.asarray(x, dtype=float).reshape(-1)[:2]
        if not in_fov(node, pos):
            continue
        detected = rng.random() < p_detect
        noise = rng.normal(0.0, 1.0, size=2) * sigma_r
        if detected:
            out.append(Measurement(z=pos + noise, origin_node=node.id, time=time))
    n_clutter = rng.poisson(clutter_rate)
    for _ in range(n_clutter):
        out.append(Measurement(z=_uniform_fov_point(node, rng), origin_node=node.id, time=time, is_clutter=True))
    return out


def sense_all(scenario: Scenario, run_index: int, time: int) -> dict[int, list[Measurement]]:
    """Measurements for every node at one step, under the scenario's noise model."""
    truth = scenario.truth_states_at(time)
    ordered = [truth[tid] for tid in sorted(truth)]
    out: dict[int, list[Measurement]] = {}
    for node_id in scenario.node_ids:
        rng = measurement_rng(scenario.seed, run_index, node_id, time)
        out[node_id] = sense(
            scenario.node(node_id),
            ordered,
            time,
            rng,
            p_detect=scenario.p_detect,
            sigma_r=scenario.sigma_r,
            clutter_rate=scenario.clutter_rate,
        )
    return out


def _uniform_fov_point(node: SensorNode, rng: np.random.Generator) -> np.ndarray:
    # Area-uniform sampling of a circular sector: sqrt on the radial draw.
    half = np.radians(node.half_angle_deg)
    phi = rng.uniform(-half, half)
    r = node.range_m * np.sqrt(rng.random())
    beta = np.arctan2(node.boresight[1], node.boresight[0])
    return node.position + r * np.array([np.cos(beta + phi), np.sin(beta + phi)])
