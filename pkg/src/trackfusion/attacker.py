"""Label-hijack orchestration at a compromised node.

The attacker intercepts track reports (its own node's current output plus
whatever non-compromised neighbors transmitted on previous steps), picks a
victim identity, and replaces the node's outgoing victim track with a spoofed
one that walks through three stages:

  mimicry    - shadow the victim closely enough to stay matched to it;
  pull-off   - once the victim is inferred to be outside every honest field of
               view, drift away (hard-switch: go silent; stealthy: fly to a
               rendezvous point under kinematic limits while penalizing
               proximity to the predicted victim);
  injection  - converge onto a later-born impostor track until the two match,
               at which point the victim's long-lived label transfers to the
               impostor through ordinary label consensus.

The attacker never touches fusion or label-consensus state; it only rewrites
the compromised node's outgoing message.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .metrics import ospa2
from .mpc import MpcParams, build_dynamics, cv_predict, solve_mpc
from .scenario import GlobalLabel, MatchingParams, Track

logger = logging.getLogger(__name__)

HARD_SWITCH = "hard_switch"
STEALTHY = "stealthy"

MIMICRY = "mimicry"
PULL_OFF = "pull_off"
INJECTION = "injection"
DONE = "done"
IDLE = "idle"

SILENCE = "SILENCE"


@dataclass(frozen=True)
class AttackConfig:
    variant: str
    victim_source_node: int
    rendezvous_point: np.ndarray
    visibility_timeout: int = 3
    mpc: MpcParams = field(default_factory=MpcParams)
    victim_label: GlobalLabel | None = None  # explicit override of the selection rule
    spoof_local_label: int = 9001
    # after injection succeeds, keep reporting for a few steps (locks the
    # match in against noise) and then cease: the impostor becomes the sole
    # carrier of the hijacked label
    done_linger_steps: int = 5
    # candidates closer than this (Manhattan) to the predicted victim cannot
    # be the impostor; also gates which own tracks get suppressed
    association_gate: float = 100.0
    # the gate widens by this much per step of victim-estimate staleness,
    # since dead-reckoned predictions drift with the velocity error
    staleness_gate_growth: float = 8.0
    # an impostor candidate must have been reported this many steps; confirmed
    # clutter tracks rarely survive beyond confirmation plus the coast window
    impostor_min_age: int = 6

    def __post_init__(self):
        if self.variant not in (HARD_SWITCH, STEALTHY):
            raise ValueError(f"unknown attack variant {self.variant!r}")
        if self.visibility_timeout < 1:
            raise ValueError("visibility_timeout must be >= 1")
        rv = np.asarray(self.rendezvous_point, dtype=float).reshape(2)
        rv.setflags(write=False)
        object.__setattr__(self, "rendezvous_point", rv)


@dataclass
class _Report:
    time: int
    state: np.ndarray
    first_seen: int


class InterceptedView:
    """Latest reports per (source, label), as available to the attacker.

    Full per-label report histories are kept as well (a global label is only
    ever transmitted by its owning node, so one state per label per step).
    """

    def __init__(self):
        self._latest: dict[int, dict[GlobalLabel, _Report]] = {}
        self._history: dict[GlobalLabel, dict[int, np.ndarray]] = {}

    def ingest(self, source: int, time: int, items: list[tuple[GlobalLabel, np.ndarray]]):
        per = self._latest.setdefault(source, {})
        for label, state in items:
            state = np.asarray(state, dtype=float).reshape(4).copy()
            prev = per.get(label)
            per[label] = _Report(time=int(time), state=state, first_seen=prev.first_seen if prev else int(time))
            self._history.setdefault(label, {})[int(time)] = state

    def history_track(self, label: GlobalLabel) -> Track | None:
        hist = self._history.get(label)
        if not hist:
            return None
        ks = sorted(hist)
        return Track(label=label, times=np.array(ks), states=np.array([hist[k] for k in ks]))

    def last_report(self, label: GlobalLabel, sources: set[int] | None = None) -> _Report | None:
        best = None
        for src in sorted(self._latest):
            if sources is not None and src not in sources:
                continue
            rep = self._latest[src].get(label)
            if rep is not None and (best is None or rep.time > best.time):
                best = rep
        return best

    def labels_from(self, sources: set[int]) -> list[tuple[GlobalLabel, _Report]]:
        out: dict[GlobalLabel, _Report] = {}
        for src in sorted(sources & set(self._latest)):
            for label, rep in self._latest[src].items():
                cur = out.get(label)
                if cur is None or rep.time > cur.time:
                    out[label] = rep
        return sorted(out.items(), key=lambda it: (it[1].first_seen, it[0]))


def infer_visibility(
    view: InterceptedView,
    labels: set[GlobalLabel],
    now: int,
    honest_sources: set[int],
    timeout: int,
) -> str:
    """"blind" once no honest source has reported any of the labels for at
    least ``timeout`` steps; a never-seen label set is "blind_unknown"."""
    last = -(10**9)
    seen = False
    for label in labels:
        rep = view.last_report(label, honest_sources)
        if rep is not None:
            seen = True
            last = max(last, rep.time)
    if not seen:
        return "blind_unknown"
    return "blind" if now - last >= timeout else "visible"


class Attacker:
    """Single-victim hijack state machine bound to one compromised node."""

    def __init__(
        self,
        node_id: int,
        config: AttackConfig,
        honest_neighbors: set[int],
        dt: float = 1.0,
        matching: MatchingParams | None = None,
    ):
        self.node_id = node_id
        self.config = config
        self.honest = set(honest_neighbors)
        self.matching = matching if matching is not None else MatchingParams(cutoff=config.mpc.cutoff)
        self.view = InterceptedView()
        self.stage = IDLE
        self.k0 = self.k1 = self.k2 = self.k3 = None
        self.victim_label: GlobalLabel | None = config.victim_label
        self.impostor_label: GlobalLabel | None = None
        self.suppressed_own: set[GlobalLabel] = set()
        self.spoof_label = GlobalLabel(config.spoof_local_label, node_id)
        self.dt = dt
        self.A, self.B = build_dynamics(dt)
        self.spoof_state: np.ndarray | None = None
        self._warm: np.ndarray | None = None
        self._victim_est: np.ndarray | None = None  # (state, as-of time) pair below
        self._victim_raw: np.ndarray | None = None
        self._victim_est_time: int | None = None
        self._victim_positions: list[tuple[int, np.ndarray]] = []  # accepted reports
        self.events: list[dict] = []
        self.planner_log: list[dict] = []
        # emission history for the track-level matching check
        self._emit_hist: dict[int, np.ndarray] = {}
        self._now: int | None = None

    # -- interception ---------------------------------------------------------

    def observe_own(self, time: int, reports: list[tuple[GlobalLabel, np.ndarray]]):
        """Current-step output of the compromised node's local tracker."""
        self.view.ingest(self.node_id, time, reports)
        self._refresh_suppressions(time, reports)

    def ingest_neighbor(self, source: int, time: int, items: list[tuple[GlobalLabel, np.ndarray]]):
        """Messages read off the wire; available to decisions from the next step."""
        if source in self.honest:
            self.view.ingest(source, time, items)

    # -- victim bookkeeping ---------------------------------------------------

    def _resolve_victim(self, now: int):
        if self.victim_label is not None:
            return
        candidates = self.view.labels_from({self.config.victim_source_node})
        if candidates:
            self.victim_label, _ = candidates[0]
            logger.debug("attacker: victim label resolved to %s at k=%d", self.victim_label, now)

    def _victim_class(self) -> set[GlobalLabel]:
        labels = set(self.suppressed_own)
        if self.victim_label is not None:
            labels.add(self.victim_label)
        return labels

    def _update_victim_estimate(self, now: int):
        best: _Report | None = None
        for label in self._victim_class():
            rep = self.view.last_report(label)
            if rep is not None and (best is None or rep.time > best.time):
                best = rep
        if best is None or (self._victim_est_time is not None and best.time < self._victim_est_time):
            return
        if self._victim_est is not None:
            # reject reports inconsistent with plausible victim motion (a
            # coasting track can get dragged off by clutter while keeping the
            # victim's label); dead-reckon instead
            x = self._victim_est.copy()
            for _ in range(max(0, best.time - self._victim_est_time)):
                x = self.A @ x
            age = max(0, best.time - self._victim_est_time)
            gate = self.config.association_gate + self.config.staleness_gate_growth * age
            if float(np.abs(best.state[:2] - x[:2]).sum()) > gate:
                return
        self._victim_raw = best.state.copy()  # untouched report, for copy semantics
        self._victim_est = best.state.copy()
        self._victim_est_time = best.time
        if not self._victim_positions or best.time > self._victim_positions[-1][0]:
            self._victim_positions.append((best.time, best.state[:2].copy()))
            self._victim_positions = self._victim_positions[-12:]
        v = self._robust_velocity()
        if v is not None:
            self._victim_est[2:] = v

    def _robust_velocity(self) -> np.ndarray | None:
        """Componentwise median of recent single-step position deltas; a lone
        clutter-dragged report cannot flip the dead-reckoning direction."""
        pts = self._victim_positions
        deltas = []
        for (t0, p0), (t1, p1) in zip(pts[:-1], pts[1:]):
            if 0 < t1 - t0 <= 3:
                deltas.append((p1 - p0) / ((t1 - t0) * self.dt))
        if len(deltas) < 3:
            return None
        return np.median(np.array(deltas[-8:]), axis=0)

    def _on_victim_path(self, q: np.ndarray, now: int) -> bool:
        """True if a point lies near the victim's robust motion line within
        plausible along-track reach; such points cannot be the impostor even
        when the point prediction has drifted."""
        pts = self._victim_positions
        if len(pts) < 5:
            return False
        P = np.array([p for _, p in pts])
        dirs = []
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                d = P[j] - P[i]
                n = np.linalg.norm(d)
                if n > 1e-9:
                    dirs.append(d / n)
        if not dirs:
            return False
        dhat = np.median(np.array(dirs), axis=0)
        n = np.linalg.norm(dhat)
        if n < 1e-9:
            return False
        dhat /= n
        anchor = np.median(P, axis=0)
        rel = np.asarray(q, dtype=float) - anchor
        along = float(rel @ dhat)
        perp = float(np.linalg.norm(rel - along * dhat))
        if perp >= self.config.association_gate:
            return False
        alongs = (P - anchor) @ dhat
        t_last = pts[-1][0]
        lo = float(alongs.min()) - self.config.association_gate
        hi = float(alongs.max()) + self.config.mpc.v_max * max(0, now - t_last) * self.dt + self.config.association_gate
        return lo <= along <= hi

    def victim_prediction(self, now: int) -> np.ndarray | None:
        """Constant-velocity extrapolation of the freshest victim report."""
        if self._victim_est is None:
            return None
        x = self._victim_est.copy()
        for _ in range(max(0, now - self._victim_est_time)):
            x = self.A @ x
        return x

    def _effective_gate(self, now: int) -> float:
        age = 0 if self._victim_est_time is None else max(0, now - self._victim_est_time)
        return self.config.association_gate + self.config.staleness_gate_growth * age

    def _refresh_suppressions(self, time: int, reports: list[tuple[GlobalLabel, np.ndarray]]):
        pred = self.victim_prediction(time)
        if pred is None:
            return
        gate = self._effective_gate(time)
        for label, state in reports:
            if label in self.suppressed_own or label == self.spoof_label:
                continue
            pos = np.asarray(state, float)[:2]
            d = float(np.abs(pos - pred[:2]).sum())
            if d < gate or self._on_victim_path(pos, time):
                self.suppressed_own.add(label)
                logger.debug("attacker: suppressing own track %s (matches victim)", label)

    # -- impostor selection ---------------------------------------------------

    def _select_impostor(self, now: int):
        if self.impostor_label is not None:
            return
        pred = self.victim_prediction(now)
        excluded = self._victim_class() | {self.spoof_label}
        gate = self._effective_gate(now)
        for label, rep in self.view.labels_from(self.honest | {self.node_id}):
            if label in excluded:
                continue
            if now - rep.first_seen < self.config.impostor_min_age or now - rep.time > 2:
                continue  # not persistent enough yet, or already stale
            if pred is not None and float(np.abs(rep.state[:2] - pred[:2]).sum()) < gate:
                continue  # too close to the victim to be a usable impostor
            if self._on_victim_path(rep.state[:2], now):
                continue
            self.impostor_label = label
            logger.debug("attacker: impostor %s selected at k=%d", label, now)
            return

    def impostor_estimate(self, now: int) -> np.ndarray | None:
        if self.impostor_label is None:
            return None
        rep = self.view.last_report(self.impostor_label)
        return None if rep is None else rep.state.copy()

    # -- stage machine --------------------------------------------------------

    def attack_step(self, now: int) -> np.ndarray | None:
        """Advance the stage machine and return the spoofed state to transmit
        for this step, or None for silence."""
        self._now = now
        self._resolve_victim(now)
        self._update_victim_estimate(now)

        if self.stage == IDLE:
            if self.victim_label is not None and self._victim_est is not None:
                self.stage = MIMICRY
                self.k0 = now
                init = self._victim_est.copy()
                speed = float(np.linalg.norm(init[2:]))
                if speed > self.config.mpc.v_max:
                    init[2:] *= self.config.mpc.v_max / speed
                self.spoof_state = init
            else:
                self._log(now, None)
                return None

        if self.stage == MIMICRY:
            vis = infer_visibility(
                self.view, {self.victim_label}, now, self.honest, self.config.visibility_timeout
            )
            if vis == "blind":
                self.stage = PULL_OFF
                self.k1 = now

        if self.stage == INJECTION and self.impostor_label is not None:
            rep = self.view.last_report(self.impostor_label)
            if rep is not None and now - rep.time > 3:
                logger.debug("attacker: impostor %s went silent, re-targeting", self.impostor_label)
                self.impostor_label = None

        if self.stage == PULL_OFF and now > self.k1:
            self._select_impostor(now)
            if self.impostor_label is not None:
                self.stage = INJECTION
                self.k2 = now
        elif self.stage == INJECTION and self.impostor_label is None:
            self._select_impostor(now)

        emitted = self._emit(now)
        if emitted is not None:
            self._emit_hist[now] = emitted.copy()
        if self.stage == INJECTION and emitted is not None and self._injection_matched():
            self.stage = DONE
            self.k3 = now
        self._log(now, emitted)
        return emitted

    def _injection_matched(self) -> bool:
        """Track-level matching condition between the spoofed emissions and the
        intercepted impostor reports.

        The reconstruction lags the receiving nodes by one impostor report, so
        it is pessimistic; a threshold just inside the cut-off suffices."""
        t_imp = self.view.history_track(self.impostor_label)
        if t_imp is None or not self._emit_hist:
            return False
        ks = sorted(self._emit_hist)
        t_star = Track(label=self.spoof_label, times=np.array(ks), states=np.array([self._emit_hist[k] for k in ks]))
        return ospa2(t_imp, t_star, self.matching) < 0.98 * self.matching.cutoff

    def _emit(self, now: int) -> np.ndarray | None:
        cfg = self.config
        if self.stage == MIMICRY:
            if cfg.variant == HARD_SWITCH:
                self.spoof_state = self._victim_raw.copy()
                return self.spoof_state.copy()
            ref_state = self.victim_prediction(now)
            return self._mpc_step(ref_state, victim=None)
        if self.stage == PULL_OFF:
            if cfg.variant == HARD_SWITCH:
                return None
            rv = np.array([cfg.rendezvous_point[0], cfg.rendezvous_point[1], 0.0, 0.0])
            return self._mpc_step(rv, victim=self.victim_prediction(now), static_ref=True)
        if self.stage in (INJECTION, DONE):
            if self.stage == DONE and now - self.k3 > cfg.done_linger_steps:
                return None
            imp = self.impostor_estimate(now)
            if imp is None:
                # selected impostor vanished before matching: behave like
                # pull-off until a replacement shows up
                if cfg.variant == HARD_SWITCH:
                    return None
                rv = np.array([cfg.rendezvous_point[0], cfg.rendezvous_point[1], 0.0, 0.0])
                return self._mpc_step(rv, victim=self.victim_prediction(now), static_ref=True)
            if cfg.variant == HARD_SWITCH:
                self.spoof_state = imp.copy()
                return self.spoof_state.copy()
            return self._mpc_step(imp, victim=self.victim_prediction(now))
        return None

    def _mpc_step(self, ref_state: np.ndarray, victim: np.ndarray | None, static_ref: bool = False) -> np.ndarray:
        K = self.config.mpc.horizon
        if static_ref:
            ref = np.tile(ref_state, (K, 1))
        else:
            ref = cv_predict(ref_state, K, self.dt)
        victim_pred = cv_predict(victim, K, self.dt)[:, :2] if victim is not None else None
        sol = solve_mpc(self.spoof_state, ref, victim_pred, self.config.mpc, warm_start=self._warm)
        u = sol.U[:, 0]
        self.spoof_state = self.A @ self.spoof_state + self.B @ u
        self._warm = np.vstack([sol.U.T[1:], sol.U.T[-1:]])
        min_vic = np.nan
        if victim_pred is not None:
            min_vic = float(np.min(np.linalg.norm(sol.X[:2, 1:].T - victim_pred, axis=1)))
        self.planner_log.append(
            {
                "time": self._now,
                "objective": sol.objective,
                "iterations": sol.iterations,
                "min_victim_distance": min_vic,
                "applied_u": u.copy(),
            }
        )
        return self.spoof_state.copy()

    def _log(self, now: int, emitted: np.ndarray | None):
        self.events.append(
            {
                "time": now,
                "stage": self.stage,
                "emitted": None if emitted is None else emitted.copy(),
            }
        )

    # -- outgoing message -----------------------------------------------------

    def forge_outgoing(
        self, now: int, own_reports: list[tuple[GlobalLabel, np.ndarray]]
    ) -> list[tuple[GlobalLabel, np.ndarray]]:
        """The compromised node's message: honest tracks for other targets pass
        through, the victim-class tracks are withheld, and the spoofed track is
        appended under its own stable label while the attack is transmitting."""
        spoofed = self.attack_step(now)
        out = [(label, state) for label, state in own_reports if label not in self.suppressed_own]
        if spoofed is not None:
            out.append((self.spoof_label, spoofed))
        out.sort(key=lambda it: it[0])
        return out

    @property
    def transitions(self) -> dict[str, int | None]:
        return {"k0": self.k0, "k1": self.k1, "k2": self.k2, "k3": self.k3}
