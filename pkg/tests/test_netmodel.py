import pytest

from sim.detector import Alert, Detector, DetectorParams, PairKind
from sim.errors import ConfigError
from sim.mobility import ArrivalConfig, World, generate_arrivals
from sim.netmodel import (CamDelivery, EventQueue, LatencyProfile, Reaction, alert_record, latency_profile,
                          reaction_profile, run_coupled, send_alert, send_cam, transmission_delay)
from tests.conftest import make_cam


def make_alert(issued_at=12.0):
    return Alert(pair=("veh1", "veh2"), issued_at=issued_at, predicted_t_star=4.0, predicted_d_star=0.5,
                 kind=PairKind.VEH_VEH, source_id="veh1", cam_time=issued_at - 0.015)


class TestProfiles:
    def test_presets(self, metro, cloud, hd, av):
        assert metro.backhaul_latency == 0.005
        assert cloud.backhaul_latency == 0.020
        assert metro.radio_latency == cloud.radio_latency == 0.010
        assert (hd.processing_time, hd.human_reaction) == (0.4, 1.0)
        assert (av.processing_time, av.human_reaction) == (0.4, 0.0)

    def test_transmission_delay(self, metro, cloud, hd):
        assert transmission_delay(metro, hd) == pytest.approx(0.415)
        assert transmission_delay(cloud, hd) - transmission_delay(metro, hd) == pytest.approx(0.015)

    def test_mapping_overrides_a_preset(self):
        profile = latency_profile({"preset": "metro", "jitter": 0.002})
        assert profile.name == "metro"
        assert profile.backhaul_latency == 0.005
        assert profile.jitter == 0.002
        custom = reaction_profile({"processing_time": 0.2, "human_reaction": 0.7})
        assert custom.name == "custom"

    @pytest.mark.parametrize("spec", ["edge", {"preset": "edge"}, {"preset": "metro", "bandwidth": 1},
                                      {"backhaul_latency": 0.01}])
    def test_bad_latency_specs(self, spec):
        with pytest.raises(ConfigError):
            latency_profile(spec)

    def test_negative_latency_rejected(self):
        with pytest.raises(ConfigError):
            LatencyProfile("x", backhaul_latency=-0.001)


class TestEventQueue:
    def test_orders_by_time_then_insertion(self):
        queue = EventQueue()
        queue.push(2.0, "late")
        queue.push(1.0, "first")
        queue.push(1.0, "second")
        assert queue.peek_time() == 1.0
        assert [e for _, e in queue.pop_due(1.5)] == ["first", "second"]
        assert len(queue) == 1
        assert list(queue.pop_due(1.9)) == []

    def test_rejects_non_finite_time(self):
        with pytest.raises(ValueError):
            EventQueue().push(float("inf"), "never")


class TestDelivery:
    def test_cam_reaches_server_after_uplink(self, metro):
        queue = EventQueue()
        delivered = send_cam(make_cam("veh1", 3.0, 0.0, 0.0), metro, queue)
        assert delivered == pytest.approx(3.015)
        time, event = queue.pop()
        assert time == delivered
        assert isinstance(event, CamDelivery)

    def test_alert_timing_metro_hd(self, metro, hd):
        timing = send_alert(make_alert(12.0), metro, hd)
        assert timing.hmi_time == pytest.approx(12.415)
        assert timing.action_time == pytest.approx(13.415)

    def test_alert_timing_av_acts_at_hmi(self, metro, av):
        timing = send_alert(make_alert(12.0), metro, av)
        assert timing.action_time == timing.hmi_time

    def test_placement_shifts_hmi_by_backhaul_difference(self, metro, cloud, hd):
        alert = make_alert(12.0)
        delta = send_alert(alert, cloud, hd).hmi_time - send_alert(alert, metro, hd).hmi_time
        assert delta == pytest.approx(0.015, abs=1e-12)

    def test_alert_record_has_timing(self, metro, hd):
        alert = make_alert()
        record = alert_record(alert, send_alert(alert, metro, hd))
        assert record["hmi_time"] == pytest.approx(12.415)
        assert record["a"] == "veh1" and record["b"] == "veh2"


class TestCoupledRun:
    def test_stalled_vehicle_is_hit_without_alerts(self, stalled_intersection, metro, av):
        result = run_coupled(stalled_intersection, None, metro, av, 20.0)
        assert result.alerts == []
        assert len(result.collisions) == 1
        assert result.collisions[0].pair == ("runner", "stalled")
        assert result.collisions[0].time == pytest.approx(12.58, abs=0.02)
        assert result.end_time == pytest.approx(20.0)

    def test_open_loop_alerts_do_not_change_mobility(self, stalled_intersection, metro, av):
        result = run_coupled(stalled_intersection, Detector(DetectorParams()), metro, av, 20.0, closed_loop=False)
        assert len(result.collisions) == 1
        first = result.alerts[0]
        assert 2.8 <= first["issued_at"] <= 3.0
        assert first["hmi_time"] == pytest.approx(first["issued_at"] + 0.415)

    def test_default_closed_loop_av_metro_avoids_the_collision(self, stalled_intersection, metro, av):
        result = run_coupled(stalled_intersection, Detector(DetectorParams()), metro, av, 20.0)
        assert result.collisions == []
        assert result.stats["reactions"] > 0
        runner = stalled_intersection.agents["runner"]
        assert runner.pose()[0] < -75.4

    def test_alert_spacing_per_pair(self, scenario, metro, hd):
        arrivals = generate_arrivals(ArrivalConfig(1.2, 0.2, seed=5), 40.0, scenario)
        result = run_coupled(World(scenario, arrivals), Detector(DetectorParams()), metro, hd, 40.0)
        last = {}
        for alert in result.alerts:
            key = (alert["a"], alert["b"])
            if key in last:
                assert alert["issued_at"] - last[key] >= 1.0
            last[key] = alert["issued_at"]

    def test_runs_are_reproducible(self, scenario, metro, hd):
        def once():
            arrivals = generate_arrivals(ArrivalConfig(0.9, 0.2, seed=7), 30.0, scenario)
            return run_coupled(World(scenario, arrivals), Detector(DetectorParams()), metro, hd, 30.0)

        a, b = once(), once()
        assert a.trajectories == b.trajectories
        assert a.alerts == b.alerts
        assert [c.to_record() for c in a.collisions] == [c.to_record() for c in b.collisions]

    def test_rejects_bad_duration(self, stalled_intersection, metro, hd):
        with pytest.raises(ConfigError):
            run_coupled(stalled_intersection, None, metro, hd, 0.0)

    def test_reaction_events_target_both_recipients(self, stalled_intersection, metro, av):
        queue = EventQueue()
        alert = make_alert()
        timing = send_alert(alert, metro, av)
        for recipient in alert.recipients:
            queue.push(timing.action_time, Reaction(recipient))
        assert sorted(e.agent_id for _, e in queue.pop_due(100.0)) == ["veh1", "veh2"]
