"""Scenario configuration: JSON schema, validation, and the shipped default.

Validation errors carry dotted field paths so CLI users can locate mistakes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .attacker import AttackConfig
from .mpc import MpcParams
from .scenario import (
    GlobalLabel,
    MatchingParams,
    Scenario,
    SensorNode,
    TrackerParams,
    waypoint_trajectory,
)


class ConfigError(ValueError):
    """Invalid scenario configuration; message starts with the field path."""


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"{path}.{key}: missing required field")
    return obj[key]


def _number(value, path: str, *, minimum=None, maximum=None) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
    v = float(value)
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    if maximum is not None and v > maximum:
        raise ConfigError(f"{path}: must be <= {maximum}")
    return v


def _vec2(value, path: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path}: expected [x, y]")
    return np.array([_number(value[0], f"{path}[0]"), _number(value[1], f"{path}[1]")])


def load_scenario(source: str | Path | dict) -> Scenario:
    """Build a Scenario from a JSON file path or an already-parsed dict."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"<file>: not valid JSON ({e})") from e
    else:
        raw = source
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected a JSON object")

    nodes = []
    for i, nd in enumerate(_require(raw, "nodes", "<root>")):
        path = f"nodes[{i}]"
        nodes.append(
            SensorNode(
                id=int(_number(_require(nd, "id", path), f"{path}.id")),
                position=_vec2(_require(nd, "position", path), f"{path}.position"),
                boresight=_vec2(nd.get("boresight", [0.0, 1.0]), f"{path}.boresight"),
                half_angle_deg=_number(nd.get("half_angle_deg", 60.0), f"{path}.half_angle_deg", minimum=1e-9),
                range_m=_number(nd.get("range_m", 800.0), f"{path}.range_m", minimum=1e-9),
                neighbors=frozenset(int(x) for x in _require(nd, "neighbors", path)),
            )
        )

    dt = _number(raw.get("dt", 1.0), "dt", minimum=1e-12)
    targets = []
    for i, tg in enumerate(_require(raw, "targets", "<root>")):
        path = f"targets[{i}]"
        tid = _require(tg, "id", path)
        wps = _require(tg, "waypoints", path)
        if not isinstance(wps, list) or not wps:
            raise ConfigError(f"{path}.waypoints: expected a non-empty list")
        parsed = []
        for j, wp in enumerate(wps):
            wpath = f"{path}.waypoints[{j}]"
            parsed.append(
                (int(_number(_require(wp, "time", wpath), f"{wpath}.time", minimum=0)),
                 _vec2(_require(wp, "position", wpath), f"{wpath}.position"))
            )
        targets.append(waypoint_trajectory(str(tid), parsed, dt))

    area = raw.get("area", {"x": [-500.0, 2500.0], "y": [0.0, 1000.0]})
    ax = _vec2(_require(area, "x", "area"), "area.x")
    ay = _vec2(_require(area, "y", "area"), "area.y")

    m = raw.get("matching", {})
    matching = MatchingParams(
        cutoff=_number(m.get("cutoff", 100.0), "matching.cutoff", minimum=1e-12),
        order=_number(m.get("order", 1.0), "matching.order", minimum=1.0),
        base=str(m.get("base", "manhattan")),
        position_only=bool(m.get("position_only", True)),
        retention_min_length=int(_number(m.get("retention_min_length", 5), "matching.retention_min_length", minimum=1)),
    )

    t = raw.get("tracker", {})
    tracker = TrackerParams(
        confirm_hits=int(_number(t.get("confirm_hits", 3), "tracker.confirm_hits", minimum=1)),
        confirm_window=int(_number(t.get("confirm_window", 4), "tracker.confirm_window", minimum=1)),
        death_misses=int(_number(t.get("death_misses", 4), "tracker.death_misses", minimum=1)),
        gate_quantile=_number(t.get("gate_quantile", 0.99), "tracker.gate_quantile", minimum=0.5, maximum=1.0 - 1e-12),
        init_velocity_std=_number(t.get("init_velocity_std", 30.0), "tracker.init_velocity_std", minimum=1e-12),
    )

    attack = None
    if "attack" in raw:
        a = raw["attack"]
        mp = a.get("mpc", {})
        mpc = MpcParams(
            horizon=int(_number(mp.get("horizon", 20), "attack.mpc.horizon", minimum=1)),
            alpha_p=_number(mp.get("alpha_p", 1.0), "attack.mpc.alpha_p", minimum=0.0),
            alpha_v=_number(mp.get("alpha_v", 0.1), "attack.mpc.alpha_v", minimum=0.0),
            alpha_c=_number(mp.get("alpha_c", 0.1), "attack.mpc.alpha_c", minimum=0.0),
            gamma_p=_number(mp.get("gamma_p", 0.99), "attack.mpc.gamma_p", minimum=1e-9, maximum=1.0),
            gamma_v=_number(mp.get("gamma_v", 0.99), "attack.mpc.gamma_v", minimum=1e-9, maximum=1.0),
            cutoff=matching.cutoff,
            v_max=_number(mp.get("v_max", 30.0), "attack.mpc.v_max", minimum=1e-12),
            a_max=_number(mp.get("a_max", 30.0), "attack.mpc.a_max", minimum=1e-12),
            dt=dt,
        )
        victim_label = None
        if "victim_label" in a:
            vl = a["victim_label"]
            victim_label = GlobalLabel(int(vl["local_label"]), int(vl["node_id"]))
        attack = AttackConfig(
            variant=str(a.get("variant", "stealthy")),
            victim_source_node=int(_number(_require(a, "victim_source_node", "attack"), "attack.victim_source_node")),
            rendezvous_point=_vec2(_require(a, "rendezvous_point", "attack"), "attack.rendezvous_point"),
            visibility_timeout=int(_number(a.get("visibility_timeout", 3), "attack.visibility_timeout", minimum=1)),
            mpc=mpc,
            victim_label=victim_label,
            spoof_local_label=int(_number(a.get("spoof_local_label", 9001), "attack.spoof_local_label", minimum=1)),
            done_linger_steps=int(_number(a.get("done_linger_steps", 5), "attack.done_linger_steps", minimum=0)),
            staleness_gate_growth=_number(a.get("staleness_gate_growth", 8.0), "attack.staleness_gate_growth", minimum=0.0),
            impostor_min_age=int(_number(a.get("impostor_min_age", 6), "attack.impostor_min_age", minimum=0)),
            association_gate=_number(a.get("association_gate", matching.cutoff), "attack.association_gate", minimum=1e-12),
        )

    try:
        return Scenario(
            nodes=tuple(nodes),
            true_trajectories=tuple(targets),
            surveillance_area=((ax[0], ax[1]), (ay[0], ay[1])),
            horizon=int(_number(_require(raw, "horizon", "<root>"), "horizon", minimum=1)),
            dt=dt,
            sigma_v=_number(raw.get("sigma_v", 5.0), "sigma_v", minimum=0.0),
            sigma_r=_number(raw.get("sigma_r", 2.0), "sigma_r", minimum=0.0),
            p_detect=_number(raw.get("p_detect", 0.98), "p_detect", minimum=0.0, maximum=1.0),
            clutter_rate=_number(raw.get("clutter_rate", 2.0), "clutter_rate", minimum=0.0),
            compromised_nodes=frozenset(int(x) for x in raw.get("compromised_nodes", [])),
            attack=attack,
            seed=int(_number(raw.get("seed", 0), "seed")),
            tracker=tracker,
            matching=matching,
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"<root>: {e}") from e


def case_study_config(cutoff: float = 100.0, *, seed: int = 20260810, p_detect: float = 0.98,
                      sigma_r: float = 2.0, clutter_rate: float = 2.0) -> dict:
    """The shipped three-node scenario, parameterized by the matching cut-off.

    The victim transits the corridor between the two honest sensors (briefly
    unseen by every node), the impostor enters the rightmost sensor's view
    later; the impostor corridor height scales with the cut-off so a spoofed
    track can keep the required separation from the victim at any supported
    cut-off value.
    """
    gap = float(min(max(2.0 * cutoff, 150.0), 450.0))
    y_imp = 200.0 + gap
    return {
        "area": {"x": [-500.0, 2500.0], "y": [0.0, 1000.0]},
        "horizon": 80,
        "dt": 1.0,
        "sigma_v": 5.0,
        "sigma_r": sigma_r,
        "p_detect": p_detect,
        "clutter_rate": clutter_rate,
        "seed": seed,
        "nodes": [
            {"id": 1, "position": [0.0, 0.0], "boresight": [0.0, 1.0],
             "half_angle_deg": 60.0, "range_m": 800.0, "neighbors": [2, 3]},
            {"id": 2, "position": [1000.0, 0.0], "boresight": [0.0, 1.0],
             "half_angle_deg": 60.0, "range_m": 800.0, "neighbors": [1, 3]},
            {"id": 3, "position": [1800.0, 0.0], "boresight": [0.0, 1.0],
             "half_angle_deg": 60.0, "range_m": 800.0, "neighbors": [1, 2]},
        ],
        "targets": [
            {"id": "victim", "waypoints": [
                {"time": 1, "position": [184.0, 200.0]},
                {"time": 40, "position": [808.0, 200.0]},
                {"time": 80, "position": [1768.0, 200.0]},
            ]},
            {"id": "impostor", "waypoints": [
                {"time": 40, "position": [2200.0, y_imp]},
                {"time": 80, "position": [1720.0, y_imp]},
            ]},
        ],
        "compromised_nodes": [2],
        "matching": {"cutoff": cutoff, "order": 1.0, "base": "manhattan",
                     "position_only": True, "retention_min_length": 5},
        "tracker": {"confirm_hits": 3, "confirm_window": 4, "death_misses": 4,
                    "gate_quantile": 0.99, "init_velocity_std": 30.0},
        "attack": {
            "variant": "stealthy",
            "victim_source_node": 1,
            "rendezvous_point": [1050.0, y_imp],
            "visibility_timeout": 3,
            "done_linger_steps": 5,
            "staleness_gate_growth": 8.0,
            "impostor_min_age": 6,
            "association_gate": cutoff,
            "mpc": {"horizon": 20, "alpha_p": 1.0, "alpha_v": 0.1, "alpha_c": 0.1,
                    "gamma_p": 0.99, "gamma_v": 0.99, "v_max": 30.0, "a_max": 30.0},
        },
    }


def default_scenario_path() -> Path:
    return Path(__file__).parent / "data" / "case_study.json"
