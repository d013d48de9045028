"""Simulation-loop properties: determinism, pairing, aggregation, emission."""

import csv
import json
import re
from pathlib import Path

import numpy as np
import pytest

from trackfusion.config import ConfigError, case_study_config, load_scenario
from trackfusion.harness import emit_aggregate, emit_run, run_monte_carlo, run_once


@pytest.fixture(scope="module")
def ideal_scenario():
    return load_scenario(case_study_config(100.0, p_detect=1.0, sigma_r=0.1, clutter_rate=0.0))


@pytest.fixture(scope="module")
def noisy_scenario():
    return load_scenario(case_study_config(100.0))


def serialize_local_reports(result):
    out = []
    for n in sorted(result.local_reports):
        for k in sorted(result.local_reports[n]):
            for label, st in result.local_reports[n][k]:
                out.append((n, k, label, st.tobytes()))
    return out


def serialize_consensus(result):
    out = []
    for n in sorted(result.consensus):
        for k in sorted(result.consensus[n]):
            for label, st in result.consensus[n][k].items:
                out.append((n, k, label, st.as_vector().tobytes()))
    return out


class TestRunOnce:
    def test_determinism_bit_identical(self, noisy_scenario):
        a = run_once(noisy_scenario, "stealthy", run_index=3)
        b = run_once(noisy_scenario, "stealthy", run_index=3)
        assert serialize_local_reports(a) == serialize_local_reports(b)
        assert serialize_consensus(a) == serialize_consensus(b)
        assert a.transitions == b.transitions
        assert a.hijack_success == b.hijack_success

    def test_nominal_two_labels_when_both_confirmed(self, ideal_scenario):
        r = run_once(ideal_scenario, "nominal")
        # both targets visible and confirmed in the second half of the run
        assert len(r.consensus[3][55].items) == 2
        assert len(r.consensus[3][80].items) == 2

    def test_unknown_condition_rejected(self, ideal_scenario):
        with pytest.raises(ValueError):
            run_once(ideal_scenario, "loud")

    def test_attack_condition_needs_attack_block(self):
        cfg = case_study_config(100.0)
        del cfg["attack"]
        sc = load_scenario(cfg)
        with pytest.raises(ValueError):
            run_once(sc, "stealthy")
        run_once(sc, "nominal")  # fine without an attack block

    def test_local_tracks_identical_with_fusion_disabled(self, noisy_scenario):
        with_fusion = run_once(noisy_scenario, "stealthy", run_index=1, compute_consensus=True)
        without = run_once(noisy_scenario, "stealthy", run_index=1, compute_consensus=False)
        assert serialize_local_reports(with_fusion) == serialize_local_reports(without)

    def test_sensing_streams_condition_independent(self, noisy_scenario):
        a = run_once(noisy_scenario, "nominal", run_index=2, keep_measurements=True)
        b = run_once(noisy_scenario, "hard_switch", run_index=2, keep_measurements=True)
        for n in (1, 2, 3):
            for k in (1, 20, 40, 80):
                za = [m.z.tobytes() for m in a.measurements[n][k]]
                zb = [m.z.tobytes() for m in b.measurements[n][k]]
                assert za == zb

    def test_time_series_cover_full_window(self, ideal_scenario):
        r = run_once(ideal_scenario, "nominal")
        for n in (1, 2, 3):
            assert sorted(r.consensus[n]) == list(range(1, 81))
            assert sorted(r.local_reports[n]) == list(range(1, 81))
        assert sorted(r.truth) == list(range(1, 81))


class TestMonteCarlo:
    def test_single_run_aggregate_matches_run_once(self, ideal_scenario):
        agg, _ = run_monte_carlo(ideal_scenario, ("nominal",), runs=1)
        r = run_once(ideal_scenario, "nominal", run_index=0)
        assert np.array_equal(agg.cardinality_mean["nominal"], r.cardinality(3))
        assert np.allclose(agg.ospa_samples["nominal"][0], r.ospa_vs_truth(3, ideal_scenario))

    def test_parallel_equals_sequential(self, ideal_scenario):
        seq, _ = run_monte_carlo(ideal_scenario, ("nominal", "hard_switch"), runs=3, jobs=1)
        par, _ = run_monte_carlo(ideal_scenario, ("nominal", "hard_switch"), runs=3, jobs=3)
        for c in ("nominal", "hard_switch"):
            assert np.array_equal(seq.cardinality_mean[c], par.cardinality_mean[c])
            assert np.array_equal(seq.ospa_samples[c], par.ospa_samples[c])
            assert seq.success[c] == par.success[c]

    def test_ecdf_properties(self, ideal_scenario):
        agg, _ = run_monte_carlo(ideal_scenario, ("nominal",), runs=2)
        xs, fs = agg.ecdf("nominal")
        assert np.all(np.diff(xs) >= 0)
        assert np.all(np.diff(fs) >= 0)
        assert 0 < fs[0] <= 1 and fs[-1] == 1.0

    def test_rejects_zero_runs(self, ideal_scenario):
        with pytest.raises(ValueError):
            run_monte_carlo(ideal_scenario, ("nominal",), runs=0)


class TestEmission:
    def test_run_outputs_match_documented_schema(self, ideal_scenario, tmp_path):
        r = run_once(ideal_scenario, "stealthy", keep_measurements=True)
        emit_run(r, tmp_path)
        documented = Path(__file__).resolve().parents[1] / "docs" / "formats.md"
        doc = documented.read_text()
        for csv_file in tmp_path.glob("*.csv"):
            header = csv_file.read_text().splitlines()[0]
            for col in header.split(","):
                assert re.search(rf"`{re.escape(col)}`", doc), f"{csv_file.name} column {col} undocumented"

    def test_aggregate_emission_and_summary_roundtrip(self, ideal_scenario, tmp_path):
        agg, samples = run_monte_carlo(ideal_scenario, ("nominal", "hard_switch"), runs=2, keep_runs=True)
        emit_aggregate(agg, case_study_config(100.0), tmp_path, sample_runs=samples)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["runs"] == 2
        assert summary["hijack_success_rate"]["hard_switch"] == 1.0
        assert summary["hijack_success_rate"]["nominal"] is None
        with (tmp_path / "cardinality_mean.csv").open() as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["time", "nominal", "hard_switch"]
        assert len(rows) == 81
        assert (tmp_path / "runs" / "hard_switch" / "run_000" / "consensus.csv").exists()

    def test_empty_results_write_headers_only(self, tmp_path):
        from trackfusion.harness import AggregateResult

        agg = AggregateResult(conditions=(), runs=0, cardinality={}, ospa_samples={}, success={}, transitions={})
        emit_aggregate(agg, {}, tmp_path)
        assert (tmp_path / "cardinality_mean.csv").read_text().strip() == "time"
        assert (tmp_path / "ecdf.csv").read_text().splitlines()[0] == "condition,value,fraction"
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["runs"] == 0


class TestConfigValidation:
    def test_missing_field_has_path(self):
        cfg = case_study_config(100.0)
        del cfg["nodes"][0]["position"]
        with pytest.raises(ConfigError, match=r"nodes\[0\]\.position"):
            load_scenario(cfg)

    def test_bad_number_has_path(self):
        cfg = case_study_config(100.0)
        cfg["p_detect"] = 1.7
        with pytest.raises(ConfigError, match="p_detect"):
            load_scenario(cfg)

    def test_bad_waypoint_has_path(self):
        cfg = case_study_config(100.0)
        cfg["targets"][1]["waypoints"][0]["position"] = [1.0]
        with pytest.raises(ConfigError, match=r"targets\[1\]\.waypoints\[0\]\.position"):
            load_scenario(cfg)

    def test_shipped_default_matches_builder(self):
        from trackfusion.config import default_scenario_path

        shipped = json.loads(default_scenario_path().read_text())
        assert shipped == case_study_config()
