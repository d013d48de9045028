"""Attack state machine: visibility inference, stage order, copy semantics,
message forging, and the no-fusion-code-path guarantee."""

import inspect

import numpy as np
import pytest

import trackfusion.attacker as attacker_mod
import trackfusion.consensus as consensus_mod
from trackfusion.attacker import (
    DONE,
    HARD_SWITCH,
    INJECTION,
    MIMICRY,
    PULL_OFF,
    STEALTHY,
    AttackConfig,
    Attacker,
    InterceptedView,
    infer_visibility,
)
from trackfusion.config import case_study_config, load_scenario
from trackfusion.harness import run_once
from trackfusion.metrics import ospa2
from trackfusion.mpc import MpcParams
from trackfusion.scenario import GlobalLabel, MatchingParams, Track


def vec(x, y, vx=0.0, vy=0.0):
    return np.array([float(x), float(y), float(vx), float(vy)])


def make_config(variant=HARD_SWITCH, **kw):
    defaults = dict(
        variant=variant,
        victim_source_node=1,
        rendezvous_point=np.array([500.0, 300.0]),
        visibility_timeout=3,
        mpc=MpcParams(horizon=8),
    )
    defaults.update(kw)
    return AttackConfig(**defaults)


class TestInferVisibility:
    def test_continuously_reported_is_visible(self):
        view = InterceptedView()
        lv = GlobalLabel(1, 1)
        for k in range(1, 6):
            view.ingest(1, k, [(lv, vec(10 * k, 0))])
        assert infer_visibility(view, {lv}, now=5, honest_sources={1}, timeout=3) == "visible"

    def test_stale_reports_become_blind(self):
        view = InterceptedView()
        lv = GlobalLabel(1, 1)
        view.ingest(1, 4, [(lv, vec(0, 0))])
        assert infer_visibility(view, {lv}, now=6, honest_sources={1}, timeout=3) == "visible"
        assert infer_visibility(view, {lv}, now=7, honest_sources={1}, timeout=3) == "blind"
        assert infer_visibility(view, {lv}, now=8, honest_sources={1}, timeout=3) == "blind"

    def test_never_seen_is_blind_unknown(self):
        view = InterceptedView()
        assert infer_visibility(view, {GlobalLabel(9, 9)}, 5, {1}, 3) == "blind_unknown"

    def test_only_honest_sources_count(self):
        view = InterceptedView()
        lv = GlobalLabel(1, 1)
        view.ingest(1, 2, [(lv, vec(0, 0))])
        for k in range(3, 9):
            view.ingest(2, k, [(lv, vec(0, 0))])  # compromised node keeps seeing it
        assert infer_visibility(view, {lv}, now=8, honest_sources={1}, timeout=3) == "blind"


def drive_mimicry(atk, steps=6, start=1):
    """Feed victim reports from node 1 and step the attacker."""
    lv = GlobalLabel(1, 1)
    k = start
    for i in range(steps):
        atk.ingest_neighbor(1, k, [(lv, vec(100 + 10 * k, 50, 10, 0))])
        k += 1
        atk.observe_own(k, [])
        atk.forge_outgoing(k, [])
    return k


class TestStageMachine:
    def test_idle_until_victim_seen(self):
        atk = Attacker(2, make_config(), honest_neighbors={1, 3})
        atk.observe_own(1, [])
        assert atk.forge_outgoing(1, []) == []
        assert atk.stage == "idle"

    def test_mimicry_copy_semantics(self):
        atk = Attacker(2, make_config(HARD_SWITCH), honest_neighbors={1, 3})
        lv = GlobalLabel(1, 1)
        atk.ingest_neighbor(1, 1, [(lv, vec(100, 50, 10, 0))])
        atk.observe_own(2, [])
        msg = atk.forge_outgoing(2, [])
        assert atk.stage == MIMICRY
        (label, state), = msg
        assert label == atk.spoof_label
        assert np.array_equal(state, vec(100, 50, 10, 0))  # exact copy

    def test_pull_off_silence_and_stage_order(self):
        atk = Attacker(2, make_config(HARD_SWITCH), honest_neighbors={1, 3})
        k = drive_mimicry(atk, steps=4)
        # victim goes dark: silence after the timeout, no stage regression
        stages = []
        for i in range(8):
            k += 1
            atk.observe_own(k, [])
            msg = atk.forge_outgoing(k, [])
            stages.append(atk.stage)
            if atk.stage == PULL_OFF:
                assert msg == []  # silence
        assert PULL_OFF in stages
        order = {"idle": 0, MIMICRY: 1, PULL_OFF: 2, INJECTION: 3, DONE: 4}
        ranks = [order[s] for s in stages]
        assert ranks == sorted(ranks)

    def test_injection_copies_impostor_and_completes(self):
        atk = Attacker(2, make_config(HARD_SWITCH, impostor_min_age=2), honest_neighbors={1, 3})
        k = drive_mimicry(atk, steps=4)
        li = GlobalLabel(7, 3)
        for i in range(14):
            k += 1
            atk.ingest_neighbor(3, k - 1, [(li, vec(900 - 5 * (k - 1), 600, -5, 0))])
            atk.observe_own(k, [])
            msg = atk.forge_outgoing(k, [])
        assert atk.stage == DONE
        assert atk.impostor_label == li
        assert atk.k0 <= atk.k1 < atk.k2 <= atk.k3

    def test_impostor_never_seen_stays_pull_off(self):
        atk = Attacker(2, make_config(HARD_SWITCH), honest_neighbors={1, 3})
        k = drive_mimicry(atk, steps=4)
        for i in range(10):
            k += 1
            atk.observe_own(k, [])
            atk.forge_outgoing(k, [])
        assert atk.stage == PULL_OFF
        assert atk.k2 is None and atk.k3 is None

    def test_transitions_strictly_ordered_in_full_run(self):
        sc = load_scenario(case_study_config(100.0, p_detect=1.0, sigma_r=0.1, clutter_rate=0.0))
        for cond in (HARD_SWITCH, STEALTHY):
            r = run_once(sc, cond)
            t = r.transitions
            assert t["k0"] <= t["k1"] < t["k2"] <= t["k3"]


class TestForgeOutgoing:
    def test_no_attack_message_passthrough(self):
        sc = load_scenario(case_study_config(100.0, p_detect=1.0, sigma_r=0.1, clutter_rate=0.0))
        r = run_once(sc, "nominal")
        # nominal run has no attacker; local reports are the messages
        assert r.attack_events == []

    def test_other_tracks_forwarded_victim_suppressed(self):
        atk = Attacker(2, make_config(HARD_SWITCH), honest_neighbors={1, 3})
        drive_mimicry(atk, steps=4)
        own_victim = (GlobalLabel(5, 2), vec(148, 50, 10, 0))  # near the victim estimate
        own_other = (GlobalLabel(6, 2), vec(2000, 600))
        atk.observe_own(6, [own_victim, own_other])
        msg = atk.forge_outgoing(6, [own_victim, own_other])
        labels = [l for l, _ in msg]
        assert GlobalLabel(6, 2) in labels
        assert GlobalLabel(5, 2) not in labels
        assert atk.spoof_label in labels

    def test_silence_omits_spoof_label(self):
        atk = Attacker(2, make_config(HARD_SWITCH), honest_neighbors={1, 3})
        k = drive_mimicry(atk, steps=4)
        for i in range(6):
            k += 1
            atk.observe_own(k, [])
            msg = atk.forge_outgoing(k, [])
        assert atk.stage == PULL_OFF
        assert msg == []


class TestHijackEndToEnd:
    @pytest.mark.parametrize("cond", [HARD_SWITCH, STEALTHY])
    def test_case_study_label_transfer(self, cond):
        sc = load_scenario(case_study_config(100.0, p_detect=1.0, sigma_r=0.1, clutter_rate=0.0))
        r = run_once(sc, cond)
        assert r.hijack_success
        assert r.victim_label == GlobalLabel(1, 1)
        final = {str(l) for l, _ in r.consensus[3][sc.horizon].items}
        assert "1@1" in final

    def test_mimicry_interval_zero_distance_hard_switch(self):
        sc = load_scenario(case_study_config(100.0, p_detect=1.0, sigma_r=0.1, clutter_rate=0.0))
        r = run_once(sc, HARD_SWITCH)
        k1 = r.transitions["k1"]
        emitted = {e["time"]: e["emitted"] for e in r.attack_events if e["emitted"] is not None}
        # over the mimicry interval the spoof equals the victim's reported
        # track exactly (copies of node 1's reports, one step behind)
        node1 = {k: dict(v) for k, v in r.local_reports[1].items()}
        checked = 0
        for k in range(r.transitions["k0"], k1):
            if k in emitted and (k - 1) in node1 and GlobalLabel(1, 1) in node1[k - 1]:
                assert np.array_equal(emitted[k], node1[k - 1][GlobalLabel(1, 1)])
                checked += 1
        assert checked >= 5

    def test_separation_maintained_from_injection_on(self):
        sc = load_scenario(case_study_config(100.0, p_detect=1.0, sigma_r=0.1, clutter_rate=0.0))
        for cond in (HARD_SWITCH, STEALTHY):
            r = run_once(sc, cond)
            k2 = r.transitions["k2"]
            emitted = {e["time"]: e["emitted"] for e in r.attack_events if e["emitted"] is not None}
            for k in range(k2, sc.horizon + 1):
                truth = sc.truth_states_at(k)
                if k in emitted and "victim" in truth:
                    d = float(np.abs(emitted[k][:2] - truth["victim"][:2]).sum())
                    assert d > sc.matching.cutoff, (cond, k, d)

    def test_stealthy_respects_kinematic_limits(self):
        sc = load_scenario(case_study_config(100.0, p_detect=1.0, sigma_r=0.1, clutter_rate=0.0))
        r = run_once(sc, STEALTHY)
        v_max = sc.attack.mpc.v_max
        a_max = sc.attack.mpc.a_max
        dt = sc.dt
        prev = None
        for e in r.attack_events:
            if e["emitted"] is None:
                prev = None
                continue
            x = e["emitted"]
            assert np.linalg.norm(x[2:]) <= v_max + 1e-6
            if prev is not None:
                assert np.linalg.norm((x[2:] - prev[2:]) / dt) <= a_max + 1e-6
            prev = x

    def test_attack_never_touches_label_consensus(self, monkeypatch):
        """Label transfer is induced purely through kinematic matching: no
        attacker frame ever appears in the call stack of an equivalence union."""
        real_union = consensus_mod.LabelEquivalence.union
        attacker_file = inspect.getfile(attacker_mod)

        def spying_union(self, a, b):
            for frame in inspect.stack():
                assert attacker_file != frame.filename, "attacker reached label-consensus code"
            return real_union(self, a, b)

        monkeypatch.setattr(consensus_mod.LabelEquivalence, "union", spying_union)
        sc = load_scenario(case_study_config(100.0, p_detect=1.0, sigma_r=0.1, clutter_rate=0.0))
        r = run_once(sc, STEALTHY)
        assert r.hijack_success

    def test_ospa2_between_spoof_and_victim_mimicry(self):
        sc = load_scenario(case_study_config(100.0, p_detect=1.0, sigma_r=0.1, clutter_rate=0.0))
        r = run_once(sc, HARD_SWITCH)
        k1 = r.transitions["k1"]
        emitted = {e["time"]: e["emitted"] for e in r.attack_events if e["emitted"] is not None}
        spoof_states = {k: v for k, v in emitted.items() if k < k1}
        victim_states = {}
        for k, items in r.local_reports[1].items():
            d = dict(items)
            if GlobalLabel(1, 1) in d and k < k1:
                victim_states[k] = d[GlobalLabel(1, 1)]
        t_star = Track.from_states(GlobalLabel(9001, 2), {k: _ks(v) for k, v in spoof_states.items()})
        t_v = Track.from_states(GlobalLabel(1, 1), {k: _ks(v) for k, v in victim_states.items()})
        assert ospa2(t_v, t_star, sc.matching) < sc.matching.cutoff


def _ks(v):
    from trackfusion.scenario import KinematicState

    return KinematicState.from_vector(v)
