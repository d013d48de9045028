"""Measurement generation: determinism, noise statistics, clutter support."""

import numpy as np
import pytest

from trackfusion.scenario import SensorNode, in_fov
from trackfusion.sensing import measurement_rng, sense


def make_node():
    return SensorNode(
        id=1,
        position=np.array([0.0, 0.0]),
        boresight=np.array([0.0, 1.0]),
        half_angle_deg=60.0,
        range_m=800.0,
        neighbors=frozenset(),
    )


TARGET = [np.array([0.0, 400.0, 5.0, 0.0])]


def test_ideal_sensor_reports_exact_position():
    rng = measurement_rng(1, 0, 1, 1)
    ms = sense(make_node(), TARGET, 1, rng, p_detect=1.0, sigma_r=0.0, clutter_rate=0.0)
    assert len(ms) == 1
    assert np.array_equal(ms[0].z, [0.0, 400.0])
    assert not ms[0].is_clutter


def test_out_of_fov_target_yields_nothing():
    rng = measurement_rng(1, 0, 1, 1)
    ms = sense(make_node(), [np.array([0.0, 900.0, 0.0, 0.0])], 1, rng, p_detect=1.0, sigma_r=0.0, clutter_rate=0.0)
    assert ms == []


def test_bit_reproducible_with_same_seed_tuple():
    a = sense(make_node(), TARGET, 7, measurement_rng(42, 3, 1, 7), p_detect=0.9, sigma_r=2.0, clutter_rate=2.0)
    b = sense(make_node(), TARGET, 7, measurement_rng(42, 3, 1, 7), p_detect=0.9, sigma_r=2.0, clutter_rate=2.0)
    assert len(a) == len(b)
    for ma, mb in zip(a, b):
        assert np.array_equal(ma.z, mb.z)
        assert ma.is_clutter == mb.is_clutter


def test_detection_rate_matches_p_detect():
    node = make_node()
    hits = 0
    n = 10_000
    for k in range(n):
        ms = sense(node, TARGET, k, measurement_rng(5, 0, 1, k), p_detect=0.98, sigma_r=0.0, clutter_rate=0.0)
        hits += len(ms)
    assert hits / n == pytest.approx(0.98, abs=0.01)


def test_expected_count_detection_plus_clutter():
    node = make_node()
    p_d, lam, n = 0.9, 2.0, 4000
    total = 0
    for k in range(n):
        ms = sense(node, TARGET, k, measurement_rng(6, 1, 1, k), p_detect=p_d, sigma_r=1.0, clutter_rate=lam)
        total += len(ms)
    mean = total / n
    expect = p_d + lam
    # per-step variance: Bernoulli + Poisson
    sigma = np.sqrt((p_d * (1 - p_d) + lam) / n)
    assert abs(mean - expect) < 3 * sigma


def test_clutter_points_lie_in_fov():
    node = make_node()
    for k in range(200):
        ms = sense(node, [], k, measurement_rng(9, 0, 1, k), p_detect=1.0, sigma_r=0.0, clutter_rate=3.0)
        for m in ms:
            assert m.is_clutter
            assert in_fov(node, m.z)


def test_noise_spread_matches_sigma_r():
    node = make_node()
    zs = []
    for k in range(4000):
        ms = sense(node, TARGET, k, measurement_rng(8, 0, 1, k), p_detect=1.0, sigma_r=2.0, clutter_rate=0.0)
        zs.append(ms[0].z)
    err = np.array(zs) - np.array([0.0, 400.0])
    assert err.std(axis=0) == pytest.approx([2.0, 2.0], rel=0.1)
    assert err.mean(axis=0) == pytest.approx([0.0, 0.0], abs=0.15)
