"""Simulation loop, Monte Carlo orchestration, and result emission."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attacker import Attacker
from .consensus import ConsensusOutput, NodeFusion
from .metrics import ospa
from .scenario import GlobalLabel, Scenario
from .sensing import sense_all
from .tracker import GnnTracker

logger = logging.getLogger(__name__)

CONDITIONS = ("nominal", "hard_switch", "stealthy")
EVAL_NODE = 3


@dataclass
class RunResult:
    condition: str
    run_index: int
    seed: int
    horizon: int
    local_reports: dict[int, dict[int, list[tuple[GlobalLabel, np.ndarray]]]]
    consensus: dict[int, dict[int, ConsensusOutput]]
    truth: dict[int, dict[str, np.ndarray]]
    measurements: dict[int, dict[int, list]] | None
    attack_events: list[dict]
    planner_log: list[dict]
    transitions: dict[str, int | None]
    victim_label: GlobalLabel | None
    hijack_success: bool | None

    def cardinality(self, node: int) -> np.ndarray:
        return np.array([len(self.consensus[node][k].items) for k in range(1, self.horizon + 1)])

    def ospa_vs_truth(self, node: int, scenario: Scenario) -> np.ndarray:
        """Per-step OSPA between the node's consensus positions and the true
        target positions, with the scenario's matching parameters."""
        out = np.empty(self.horizon)
        for k in range(1, self.horizon + 1):
            est = np.array([s.as_vector() for _, s in self.consensus[node][k].items]).reshape(-1, 4)
            tru = np.array([self.truth[k][tid] for tid in sorted(self.truth[k])]).reshape(-1, 4)
            out[k - 1] = ospa(est, tru, scenario.matching)
        return out


def run_once(
    scenario: Scenario,
    condition: str,
    run_index: int = 0,
    *,
    compute_consensus: bool = True,
    keep_measurements: bool = False,
    eval_node: int = EVAL_NODE,
) -> RunResult:
    """Execute one full simulation under a condition; deterministic in
    (scenario.seed, run_index). Sensing noise does not depend on the
    condition, so runs pair across conditions."""
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}; expected one of {CONDITIONS}")
    attack_active = condition != "nominal"
    if attack_active and scenario.attack is None:
        raise ValueError("scenario has no attack block but an attack condition was requested")

    trackers = {
        n: GnnTracker(n, scenario.dt, scenario.sigma_v, scenario.sigma_r, scenario.tracker)
        for n in scenario.node_ids
    }
    fusions = {n: NodeFusion(n, scenario.matching) for n in scenario.node_ids}
    attackers: dict[int, Attacker] = {}
    if attack_active:
        cfg = replace(scenario.attack, variant=condition)
        for b in sorted(scenario.compromised_nodes):
            attackers[b] = Attacker(b, cfg, honest_neighbors=scenario.node(b).neighbors & scenario.honest_nodes,
                                    dt=scenario.dt, matching=scenario.matching)

    local_reports: dict[int, dict[int, list]] = {n: {} for n in scenario.node_ids}
    consensus: dict[int, dict[int, ConsensusOutput]] = {n: {} for n in scenario.node_ids}
    truth_log: dict[int, dict[str, np.ndarray]] = {}
    meas_log: dict[int, dict[int, list]] | None = {n: {} for n in scenario.node_ids} if keep_measurements else None

    for k in range(1, scenario.horizon + 1):
        truth_log[k] = scenario.truth_states_at(k)
        measurements = sense_all(scenario, run_index, k)
        if keep_measurements:
            for n in scenario.node_ids:
                meas_log[n][k] = measurements[n]

        reports: dict[int, list[tuple[GlobalLabel, np.ndarray]]] = {}
        for n in scenario.node_ids:
            out = trackers[n].step(measurements[n], k)
            reports[n] = [(GlobalLabel(local, n), st.as_vector()) for local, st in out]
            local_reports[n][k] = reports[n]

        # outgoing messages; the attacker sees only its own node's current
        # output plus neighbor messages from earlier steps
        messages: dict[int, list[tuple[GlobalLabel, np.ndarray]]] = {}
        for n in scenario.node_ids:
            if n in attackers:
                attackers[n].observe_own(k, reports[n])
                messages[n] = attackers[n].forge_outgoing(k, reports[n])
            else:
                messages[n] = reports[n]

        for n in scenario.node_ids:
            fusions[n].receive(n, k, reports[n])
        for sender in scenario.node_ids:
            for receiver in sorted(scenario.node(sender).neighbors):
                fusions[receiver].receive(sender, k, messages[sender])
            for b, atk in attackers.items():
                if sender in atk.honest and sender in scenario.node(b).neighbors:
                    atk.ingest_neighbor(sender, k, messages[sender])

        if compute_consensus:
            for n in scenario.node_ids:
                consensus[n][k] = fusions[n].consensus_at(k, sorted(scenario.node(n).neighbors))

    transitions = {"k0": None, "k1": None, "k2": None, "k3": None}
    events: list[dict] = []
    planner_log: list[dict] = []
    victim_label = None
    if attack_active:
        atk = attackers[min(attackers)]
        transitions = atk.transitions
        victim_label = atk.victim_label
        events = atk.events
        planner_log = atk.planner_log

    hijack = None
    if attack_active and compute_consensus:
        hijack = _hijack_verdict(scenario, consensus, victim_label, eval_node)

    return RunResult(
        condition=condition,
        run_index=run_index,
        seed=scenario.seed,
        horizon=scenario.horizon,
        local_reports=local_reports,
        consensus=consensus,
        truth=truth_log,
        measurements=meas_log,
        attack_events=events,
        planner_log=planner_log,
        transitions=transitions,
        victim_label=victim_label,
        hijack_success=hijack,
    )


def _hijack_verdict(scenario, consensus, victim_label, eval_node) -> bool:
    """True iff at the final step the evaluation node's consensus item nearest
    the true impostor position (within the cut-off) carries the victim label."""
    if victim_label is None:
        return False
    k = scenario.horizon
    truth = scenario.truth_states_at(k)
    if "impostor" not in truth:
        return False
    imp_pos = truth["impostor"][:2]
    best = None
    best_d = np.inf
    for label, st in consensus[eval_node][k].items:
        d = float(np.abs(st.p - imp_pos).sum())
        if d < best_d:
            best, best_d = label, d
    return best is not None and best_d <= scenario.matching.cutoff and best == victim_label


@dataclass
class AggregateResult:
    conditions: tuple[str, ...]
    runs: int
    cardinality: dict[str, np.ndarray]  # condition -> (runs, N)
    ospa_samples: dict[str, np.ndarray]  # condition -> (runs, N)
    success: dict[str, list[bool]]
    transitions: dict[str, list[dict[str, int | None]]]

    @property
    def cardinality_mean(self) -> dict[str, np.ndarray]:
        return {c: arr.mean(axis=0) for c, arr in self.cardinality.items()}

    def ecdf(self, condition: str) -> tuple[np.ndarray, np.ndarray]:
        """Pooled-sample empirical CDF: nondecreasing, right-continuous, in [0, 1]."""
        samples = np.sort(self.ospa_samples[condition].ravel())
        if samples.size == 0:
            return np.array([]), np.array([])
        fractions = np.arange(1, samples.size + 1) / samples.size
        return samples, fractions

    def success_rate(self, condition: str) -> float | None:
        flags = [s for s in self.success[condition] if s is not None]
        return float(np.mean(flags)) if flags else None


def _mc_task(args):
    scenario, condition, i, eval_node = args
    r = run_once(scenario, condition, run_index=i, eval_node=eval_node)
    return (
        condition,
        i,
        r.cardinality(eval_node),
        r.ospa_vs_truth(eval_node, scenario),
        r.hijack_success,
        r.transitions,
    )


def run_monte_carlo(
    scenario: Scenario,
    conditions: tuple[str, ...] = CONDITIONS,
    runs: int = 100,
    *,
    jobs: int = 1,
    eval_node: int = EVAL_NODE,
    keep_runs: bool = False,
) -> tuple[AggregateResult, list[RunResult]]:
    """Independent seeds per run; identical results whether sequential or
    parallel (the reduction respects (condition, run) order)."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    tasks = [(scenario, c, i, eval_node) for c in conditions for i in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_mc_task, tasks, chunksize=4))
    else:
        results = [_mc_task(t) for t in tasks]

    card = {c: np.zeros((runs, scenario.horizon)) for c in conditions}
    ospa_s = {c: np.zeros((runs, scenario.horizon)) for c in conditions}
    success = {c: [None] * runs for c in conditions}
    trans = {c: [None] * runs for c in conditions}
    for condition, i, cards, ospas, hijack, transitions in results:
        card[condition][i] = cards
        ospa_s[condition][i] = ospas
        success[condition][i] = hijack
        trans[condition][i] = transitions

    agg = AggregateResult(
        conditions=tuple(conditions),
        runs=runs,
        cardinality=card,
        ospa_samples=ospa_s,
        success=success,
        transitions=trans,
    )
    kept = []
    if keep_runs:
        kept = [run_once(scenario, c, run_index=0, eval_node=eval_node) for c in conditions]
    return agg, kept


# -- emission -----------------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def emit_run(result: RunResult, out_dir: Path):
    """Per-run CSVs: local tracks, consensus items, truth, attack events."""
    out = Path(out_dir)
    rows = []
    for n in sorted(result.local_reports):
        for k in sorted(result.local_reports[n]):
            for label, st in result.local_reports[n][k]:
                rows.append([k, n, label.local_label, label.node_id] + [_fmt(v) for v in st])
    _write_csv(out / "local_tracks.csv", ["time", "node", "label_local", "label_node", "x", "y", "vx", "vy"], rows)

    rows = []
    for n in sorted(result.consensus):
        for k in sorted(result.consensus[n]):
            for label, st in result.consensus[n][k].items:
                rows.append([k, n, str(label)] + [_fmt(v) for v in st.as_vector()])
    _write_csv(out / "consensus.csv", ["time", "node", "global_label_repr", "x", "y", "vx", "vy"], rows)

    rows = []
    for k in sorted(result.truth):
        for tid in sorted(result.truth[k]):
            rows.append([k, tid] + [_fmt(v) for v in result.truth[k][tid]])
    _write_csv(out / "truth.csv", ["time", "target", "x", "y", "vx", "vy"], rows)

    rows = []
    for e in result.attack_events:
        if e["emitted"] is None:
            rows.append([e["time"], e["stage"], "SILENCE", "", "", ""])
        else:
            rows.append([e["time"], e["stage"]] + [_fmt(v) for v in e["emitted"]])
    _write_csv(out / "attack.csv", ["time", "stage", "x", "y", "vx", "vy"], rows)

    if result.planner_log:
        rows = [
            [e["time"], _fmt(e["objective"]), e["iterations"],
             "" if np.isnan(e["min_victim_distance"]) else _fmt(e["min_victim_distance"]),
             _fmt(e["applied_u"][0]), _fmt(e["applied_u"][1])]
            for e in result.planner_log
        ]
        _write_csv(out / "planner.csv", ["time", "objective", "iterations", "min_victim_distance", "ux", "uy"], rows)

    if result.measurements is not None:
        rows = []
        for n in sorted(result.measurements):
            for k in sorted(result.measurements[n]):
                for m in result.measurements[n][k]:
                    rows.append([k, n, _fmt(m.z[0]), _fmt(m.z[1]), int(m.is_clutter)])
        _write_csv(out / "measurements.csv", ["time", "node", "x", "y", "is_clutter"], rows)

    meta = {
        "condition": result.condition,
        "run_index": result.run_index,
        "seed": result.seed,
        "transitions": result.transitions,
        "victim_label": None if result.victim_label is None else str(result.victim_label),
        "hijack_success": result.hijack_success,
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def emit_aggregate(agg: AggregateResult, scenario_dict: dict, out_dir: Path, sample_runs: list[RunResult] = ()):
    """Aggregate CSVs + summary.json (+ one sample run per condition for plots)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.json").write_text(json.dumps(scenario_dict, indent=2) + "\n")

    n_steps = len(next(iter(agg.cardinality_mean.values()))) if agg.cardinality_mean else 0
    header = ["time"] + list(agg.conditions)
    rows = [[k + 1] + [_fmt(agg.cardinality_mean[c][k]) for c in agg.conditions] for k in range(n_steps)]
    _write_csv(out / "cardinality_mean.csv", header, rows)

    rows = []
    for c in agg.conditions:
        arr = agg.ospa_samples[c]
        for i in range(arr.shape[0]):
            for k in range(arr.shape[1]):
                rows.append([c, i, k + 1, _fmt(arr[i, k])])
    _write_csv(out / "ospa_samples.csv", ["condition", "run", "time", "ospa"], rows)

    rows = []
    for c in agg.conditions:
        xs, fs = agg.ecdf(c)
        for x, fr in zip(xs, fs):
            rows.append([c, _fmt(x), _fmt(fr)])
    _write_csv(out / "ecdf.csv", ["condition", "value", "fraction"], rows)

    def _median_transition(c, key):
        vals = [t[key] for t in agg.transitions[c] if t and t.get(key) is not None]
        return float(np.median(vals)) if vals else None

    summary = {
        "runs": agg.runs,
        "conditions": list(agg.conditions),
        "hijack_success_rate": {c: agg.success_rate(c) for c in agg.conditions},
        "median_ospa": {c: float(np.median(agg.ospa_samples[c])) if agg.ospa_samples[c].size else None
                        for c in agg.conditions},
        "transitions_median": {
            c: {key: _median_transition(c, key) for key in ("k0", "k1", "k2", "k3")} for c in agg.conditions
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    for r in sample_runs:
        emit_run(r, out / "runs" / r.condition / f"run_{r.run_index:03d}")
