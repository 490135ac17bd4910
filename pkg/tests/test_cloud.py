"""Relay-backed deployments: shared state agreement and hop accounting."""

import pytest

from hdtwin.cloud import (
    compare_user_hashes,
    latency_trial_configs,
    run_cloud_edge,
)
from hdtwin.harness import ScenarioConfig, run_scenario


def edge_cfg(**overrides):
    defaults = dict(name="edge-test", architecture="cloud-edge", seed=11,
                    duration_s=8.0, users=3,
                    up_delay_ms=25.0, up_jitter_ms=2.0,
                    down_delay_ms=25.0, down_jitter_ms=2.0,
                    hop_edge_relay_ms=75.0, hop_relay_user_ms=125.0)
    defaults.update(overrides)
    return ScenarioConfig(**defaults)


@pytest.fixture(scope="module")
def edge_result():
    return run_cloud_edge(edge_cfg())


@pytest.fixture(scope="module")
def centric_result():
    return run_scenario(edge_cfg(name="centric-test",
                                 architecture="cloud-centric",
                                 hop_relay_user_ms=175.0))


class TestCloudEdge:
    def test_every_user_sees_identical_broadcast_bytes(self, edge_result):
        result = edge_result
        verdict = compare_user_hashes(result.user_hashes)
        assert verdict["users"] == ["user-1", "user-2", "user-3"]
        assert verdict["common_seqs"] > 50
        assert verdict["mismatched_seqs"] == 0

    def test_leader_mirror_stays_in_tolerance(self, edge_result):
        result = edge_result
        summary = result.log.summarize()
        assert summary["count"] > 200
        assert summary["mean"] < 0.05
        assert summary["max"] < 0.10

    def test_hop_stats_reflect_injected_delays(self, edge_result):
        result = edge_result
        hops = result.hop_stats
        assert hops["hop_vehicle_edge_ms"] == pytest.approx(25.0, abs=3.0)
        assert hops["hop_edge_relay_up_ms"] == pytest.approx(75.0, abs=3.0)
        assert hops["hop_relay_user_down_ms"] == pytest.approx(125.0, abs=3.0)
        assert 100.0 <= hops["total_stamp_to_user_ms"] <= 300.0

    def test_relay_counters_show_traffic(self, edge_result):
        result = edge_result
        relay = result.counters["relay"]
        assert relay["broadcasts"] > 100
        assert relay["malformed"] == 0

    def test_disconnect_leaves_leader_rows_bit_identical(self):
        baseline = run_cloud_edge(edge_cfg())
        dropped = run_cloud_edge(edge_cfg(), disconnect_user=2,
                                 disconnect_at_s=4.0)
        assert len(dropped.log.rows) == len(baseline.log.rows)
        for a, b in zip(baseline.log.rows, dropped.log.rows):
            assert a == b
        # the departed user stops sampling, the survivors keep going
        assert len(dropped.user_latency_s["user-3"]) \
            < len(baseline.user_latency_s["user-3"])
        assert len(dropped.user_latency_s["user-1"]) \
            == len(baseline.user_latency_s["user-1"])

    def test_npcs_ride_along_in_broadcasts(self):
        result = run_cloud_edge(edge_cfg(duration_s=4.0, npcs=2))
        verdict = compare_user_hashes(result.user_hashes)
        assert verdict["mismatched_seqs"] == 0


class TestCloudCentric:
    def test_no_edge_world_means_no_sync_rows(self, centric_result):
        result = centric_result
        assert result.log.rows == []

    def test_users_receive_the_cloud_hosted_mirror(self, centric_result):
        result = centric_result
        assert all(samples for samples in result.user_latency_s.values())
        assert 400.0 <= result.hop_stats["total_stamp_to_user_ms"] <= 1000.0

    def test_snapshot_cadence_limits_updates(self, centric_result):
        result = centric_result
        # fresh shadow stamps appear at snapshot rate, not packet rate
        per_user = [len(v) for v in result.user_latency_s.values()]
        expected = edge_cfg().snapshot_hz * 8.0
        for count in per_user:
            assert count <= expected + 2


class TestHashComparison:
    def test_detects_a_forged_payload(self):
        hashes = {"user-1": {1: "aa", 2: "bb"},
                  "user-2": {1: "aa", 2: "XX", 3: "cc"}}
        verdict = compare_user_hashes(hashes)
        assert verdict["common_seqs"] == 2
        assert verdict["mismatched_seqs"] == 1

    def test_empty_input(self):
        assert compare_user_hashes({}) == {
            "users": [], "common_seqs": 0, "mismatched_seqs": 0}


class TestTrialConfigs:
    def test_paired_configs_share_everything_but_the_last_mile(self):
        edge, centric = latency_trial_configs(seed=99)
        assert edge.architecture == "cloud-edge"
        assert centric.architecture == "cloud-centric"
        assert edge.seed == centric.seed == 99
        assert edge.hop_edge_relay_ms == centric.hop_edge_relay_ms == 75.0
        assert edge.hop_relay_user_ms == 125.0
        assert centric.hop_relay_user_ms == 175.0
        assert edge.up_delay_ms == centric.up_delay_ms == 25.0
