import math
from dataclasses import replace

import pytest

from sim.detector import EntityClass, PairKind
from sim.errors import ConfigError
from sim.mobility import (Arrival, ArrivalConfig, World, find_knee, generate_arrivals, idm_accel,
                          mean_vehicle_count, stability_sweep, travel_time)
from sim.netmodel import cam_from_record

VEH = EntityClass.VEHICLE
PED = EntityClass.PEDESTRIAN


def drive(world, duration):
    """Step loop of a coupled run without the network: returns every collision record"""
    records = []
    n = int(round(duration / world.dt))
    for k in range(n + 1):
        if k:
            world.step()
        records.extend(world.ground_truth_collisions())
        world.process_spawns()
    return records


class TestArrivals:
    def test_same_seed_same_schedule(self, scenario):
        cfg = ArrivalConfig(0.7, 0.1, seed=3)
        assert generate_arrivals(cfg, 300.0, scenario) == generate_arrivals(cfg, 300.0, scenario)

    def test_different_seeds_differ(self, scenario):
        a = generate_arrivals(ArrivalConfig(0.7, 0.1, seed=1), 300.0, scenario)
        b = generate_arrivals(ArrivalConfig(0.7, 0.1, seed=2), 300.0, scenario)
        assert a != b

    def test_sorted_and_on_known_entries(self, scenario):
        arrivals = generate_arrivals(ArrivalConfig(0.7, 0.1, seed=0), 300.0, scenario)
        times = [a.time for a in arrivals]
        assert times == sorted(times)
        assert all(0.0 <= t <= 300.0 for t in times)
        for a in arrivals:
            entries = scenario.vehicle_entries if a.entity_class is VEH else scenario.pedestrian_entries
            assert a.entry in entries

    def test_counts_follow_the_rates(self, scenario):
        arrivals = generate_arrivals(ArrivalConfig(0.7, 0.1, seed=1), 20000.0, scenario)
        vehicles = sum(1 for a in arrivals if a.entity_class is VEH)
        pedestrians = len(arrivals) - vehicles
        assert vehicles == pytest.approx(14000, rel=0.05)
        assert pedestrians == pytest.approx(2000, rel=0.1)
        violators = sum(1 for a in arrivals if a.violator) / len(arrivals)
        assert violators == pytest.approx(scenario.behaviour.p_violate, abs=0.02)

    def test_zero_rates(self, scenario):
        assert generate_arrivals(ArrivalConfig(0.0, 0.0, seed=0), 300.0, scenario) == []
        only_peds = generate_arrivals(ArrivalConfig(0.0, 0.5, seed=0), 300.0, scenario)
        assert only_peds and all(a.entity_class is PED for a in only_peds)

    def test_bad_inputs(self, scenario):
        with pytest.raises(ValueError):
            generate_arrivals(ArrivalConfig(), 0.0, scenario)
        with pytest.raises(ConfigError):
            ArrivalConfig(lambda_v=-0.1)
        with pytest.raises(ConfigError):
            ArrivalConfig(seed=-1)


class TestIdm:
    def test_cruising_at_desired_speed(self, scenario):
        assert idm_accel(13.89, 13.89, None, 0.0, scenario.vehicle) == 0.0

    def test_standing_start(self, scenario):
        assert idm_accel(0.0, 13.89, None, 0.0, scenario.vehicle) == scenario.vehicle.accel

    def test_clamped_to_max_decel(self, scenario):
        assert idm_accel(13.89, 13.89, 1.0, 13.89, scenario.vehicle) == -scenario.vehicle.max_decel

    def test_stationary_target_speed(self, scenario):
        assert idm_accel(0.0, 0.0, None, 0.0, scenario.vehicle) == 0.0


class TestWorld:
    def test_rejects_bad_step(self, scenario):
        with pytest.raises(ValueError):
            World(scenario, dt=0.0)
        with pytest.raises(ValueError):
            World(scenario, dt=0.2)

    def test_unknown_entry(self, scenario):
        with pytest.raises(ConfigError):
            World(scenario).add_agent("v9")

    def test_free_vehicle_cruises(self, scenario):
        world = World(scenario, dt=0.01)
        car = world.add_agent("v1")
        drive(world, 10.0)
        x, y, heading = car.pose()
        assert car.speed == pytest.approx(13.89)
        assert x == pytest.approx(-250.0 + 138.9, abs=1e-6)
        assert y == -3.0
        assert heading == 0.0

    def test_vehicle_despawns_at_route_end(self, scenario):
        world = World(scenario, dt=0.1)
        world.add_agent("v1", s=490.0)
        drive(world, 2.0)
        assert world.active == 0
        assert world.despawned == 1

    def test_violators_collide_once_at_the_intersection(self, scenario):
        arrivals = [Arrival(0.0, VEH, "v3", True), Arrival(4.967, VEH, "v1", True)]
        world = World(scenario, arrivals, dt=0.01)
        records = drive(world, 25.0)
        assert len(records) == 1
        (record,) = records
        assert record.kind is PairKind.VEH_VEH
        assert record.pair == ("veh1", "veh2")
        assert 17.0 < record.time < 18.5
        assert record.position.x == pytest.approx(-72.0, abs=4.0)
        assert record.position.y == pytest.approx(-3.0, abs=4.0)

    def test_yielding_vehicles_take_turns(self, scenario):
        arrivals = [Arrival(0.0, VEH, "v3", False), Arrival(4.967, VEH, "v1", False)]
        world = World(scenario, arrivals, dt=0.01)
        assert drive(world, 30.0) == []

    def test_follower_keeps_distance(self, scenario):
        world = World(scenario, dt=0.01)
        leader = world.add_agent("v1", s=50.0, max_speed=5.0, violator=True)
        follower = world.add_agent("v1", s=0.0, violator=True)
        assert drive(world, 40.0) == []
        assert leader.rear - follower.front >= scenario.vehicle.min_gap * 0.5
        assert follower.speed == pytest.approx(5.0, abs=0.5)

    def test_blocked_entry_queues_the_arrival(self, scenario):
        arrivals = [Arrival(0.0, VEH, "v1", False), Arrival(0.0, VEH, "v1", False)]
        world = World(scenario, arrivals, dt=0.1)
        world.process_spawns()
        assert world.active == 1
        assert world.queued() == 1
        for _ in range(10):
            world.step()
            world.process_spawns()
        assert world.active == 2
        assert world.queued() == 0

    def test_reaction_brakes_then_holds(self, scenario):
        world = World(scenario, dt=0.01)
        car = world.add_agent("v1", violator=True)
        assert world.apply_reaction(car.agent_id, 0.0)
        for _ in range(500):
            world.step()
        # stops after 13.89 / 4.5 s and holds for 3 s
        assert car.speed == 0.0
        assert car.s == pytest.approx(13.89 ** 2 / (2 * 4.5), abs=0.2)
        for _ in range(200):
            world.step()
        assert car.speed > 0.0

    def test_pedestrian_reaction_is_immediate(self, scenario):
        world = World(scenario, dt=0.01)
        ped = world.add_agent("p1", PED)
        assert world.apply_reaction(ped.agent_id, 0.0)
        assert ped.speed == 0.0
        start = ped.s
        for _ in range(100):
            world.step()
        assert ped.s == start
        assert not world.apply_reaction("ghost", 1.0)

    def test_records_follow_the_cam_clock(self, scenario):
        world = World(scenario, dt=0.01)
        world.add_agent("v1")
        seen = []
        for k in range(31):
            if k:
                world.step()
            seen.extend(r["time"] for r in world.due_records(10))
        assert seen == pytest.approx([0.0, 0.1, 0.2, 0.3])

    def test_record_carries_the_agent_state(self, scenario):
        world = World(scenario, dt=0.01)
        car = world.add_agent("v3")
        (record,) = world.due_records(10)
        assert set(record) == {"time", "id", "cls", "x", "y", "speed", "heading", "accel"}
        cam = cam_from_record(record)
        state = car.state()
        assert cam.state.position == state.position
        assert cam.state.velocity.x == pytest.approx(state.velocity.x)
        assert cam.state.velocity.y == pytest.approx(state.velocity.y)
        assert math.isclose(cam.state.speed, 13.89)

    def test_follower_stops_behind_a_stopped_leader(self, scenario):
        world = World(scenario, dt=0.01)
        leader = world.add_agent("v1", s=50.0, speed=0.0, max_speed=0.0)
        follower = world.add_agent("v1", s=0.0)
        assert drive(world, 30.0) == []
        assert leader.s == 50.0
        assert follower.speed == pytest.approx(0.0, abs=0.05)
        assert leader.rear - follower.front > 0.0

    def test_steps_respect_top_speed_and_keep_the_census(self, scenario):
        world = World(scenario, generate_arrivals(ArrivalConfig(0.7, 0.1, seed=2), 120.0, scenario), dt=0.1)
        world.process_spawns()
        last = {}
        for _ in range(1200):
            world.step()
            world.process_spawns()
            assert world.spawned == world.active + world.despawned
            for agent_id, agent in world.agents.items():
                x, y, _ = agent.pose()
                if agent_id in last:
                    px, py = last[agent_id]
                    assert math.hypot(x - px, y - py) <= agent.max_speed * world.dt + 1e-6
                last[agent_id] = (x, y)
        assert world.spawned > 0

    def test_no_violators_no_collisions(self, scenario):
        lawful = replace(scenario, behaviour=replace(scenario.behaviour, p_violate=0.0))
        for seed in (0, 1):
            arrivals = generate_arrivals(ArrivalConfig(0.3, 0.05, seed=seed), 200.0, lawful)
            assert not any(a.violator for a in arrivals)
            world = World(lawful, arrivals, dt=0.1)
            assert drive(world, 200.0) == []


class TestJunction:
    def test_travel_time(self):
        assert travel_time(0.0, 0.0, 0.0, 10.0) == 0.0
        assert travel_time(10.0, 5.0, 0.0, 10.0) == pytest.approx(2.0)
        assert travel_time(10.0, 0.0, 0.0, 10.0) == math.inf
        assert travel_time(1.3, 0.0, 2.6, 13.89) == pytest.approx(1.0)
        # reaches 4 m/s after 2 s and 4 m, then cruises
        assert travel_time(8.0, 0.0, 2.0, 4.0) == pytest.approx(3.0)

    def test_later_vehicle_slows_instead_of_stopping(self, scenario):
        arrivals = [Arrival(0.0, VEH, "v3", False), Arrival(4.967, VEH, "v1", False)]
        world = World(scenario, arrivals, dt=0.01)
        slowest = {"veh1": math.inf, "veh2": math.inf}
        closest = math.inf
        for k in range(3001):
            if k:
                world.step()
            assert world.ground_truth_collisions() == []
            world.process_spawns()
            if set(slowest) <= set(world.agents):
                first, second = world.agents["veh1"], world.agents["veh2"]
                for agent in (first, second):
                    slowest[agent.agent_id] = min(slowest[agent.agent_id], agent.speed)
                (x1, y1, _), (x2, y2, _) = first.pose(), second.pose()
                closest = min(closest, math.hypot(x1 - x2, y1 - y2))
        yielded, went = sorted(slowest.values())
        assert went == pytest.approx(13.89)
        assert 0.5 < yielded < 13.0
        assert closest < 10.0

    def test_pedestrian_waits_for_the_gap_then_crosses(self, scenario):
        world = World(scenario, dt=0.01)
        ped = world.add_agent("p1", PED, s=166.0)
        car = world.add_agent("v4", s=200.0)
        waited = False
        for _ in range(1500):
            world.step()
            assert world.ground_truth_collisions() == []
            if car.agent_id in world.agents and car.rear < 230.0 + 0.8:
                # kerb of C1 is at s = 169
                assert ped.front <= 169.0 + 1e-9
            waited = waited or ped.waiting_since is not None
        assert waited
        assert ped.s > 181.0
        assert ped.waiting_since is None

    def test_impatient_pedestrian_ignores_vehicles_that_can_still_stop(self, scenario):
        def kerb(waiting_since):
            world = World(scenario, dt=0.01)
            ped = world.add_agent("p1", PED, s=168.7)
            ped.waiting_since = waiting_since
            world.add_agent("v4", s=185.0)
            world.step()
            return world, ped

        _, patient = kerb(-5.0)
        assert "C1" not in patient.committed
        assert patient.s == pytest.approx(168.7)

        world, bold = kerb(-25.0)
        assert "C1" in bold.committed
        assert bold.s > 168.7
        assert drive(world, 20.0) == []
        assert bold.s > 181.0

    def test_vehicle_gives_way_to_a_pedestrian_on_the_crossing(self, scenario):
        world = World(scenario, dt=0.01)
        ped = world.add_agent("p1", PED, s=171.0)
        car = world.add_agent("v4", s=200.0)
        world.apply_reaction(ped.agent_id, 0.0)
        slowest = math.inf
        for _ in range(2000):
            world.step()
            assert world.ground_truth_collisions() == []
            slowest = min(slowest, car.speed)
        assert slowest < 1.0
        assert ped.s > 181.0
        assert car.agent_id not in world.agents or car.s > 240.0

    def test_violator_does_not_wait_at_the_kerb(self, scenario):
        world = World(scenario, dt=0.01)
        ped = world.add_agent("p1", PED, s=168.7, violator=True)
        world.add_agent("v4", s=200.0)
        world.step()
        assert ped.s > 168.7
        assert ped.committed == set()


class TestStability:
    def test_sweep_table(self, scenario):
        table = stability_sweep([0.0, 0.5], [0.0], duration=30.0, seeds=[0, 1], scenario=scenario, dt=0.1)
        assert list(table.columns) == ["lambda_v", "lambda_p", "mean_count", "ci_low", "ci_high", "n_seeds"]
        assert len(table) == 2
        empty = table[table["lambda_v"] == 0.0].iloc[0]
        assert empty["mean_count"] == 0.0
        busy = table[table["lambda_v"] == 0.5].iloc[0]
        assert busy["mean_count"] > 0.0
        assert busy["n_seeds"] == 2

    def test_mean_count_is_deterministic(self, scenario):
        cfg = ArrivalConfig(0.7, 0.1, seed=4)
        assert mean_vehicle_count(scenario, cfg, 30.0) == mean_vehicle_count(scenario, cfg, 30.0)

    def test_empty_grid_rejected(self, scenario):
        with pytest.raises(ValueError):
            stability_sweep([], [0.0], 10.0, [0], scenario)

    def test_knee_of_a_saturating_curve(self):
        lambdas = [round(0.1 * i, 1) for i in range(1, 16)]
        means = [10 * x + (50 * (x - 0.8) ** 2 if x > 0.8 else 0.0) for x in lambdas]
        assert find_knee(lambdas, means) == pytest.approx(1.0)

    def test_no_knee_on_a_straight_line(self):
        lambdas = [0.1 * i for i in range(1, 16)]
        assert find_knee(lambdas, [10 * x for x in lambdas]) is None
        assert find_knee([0.1, 0.2], [1.0, 2.0]) is None

    @pytest.mark.slow
    def test_count_grows_with_vehicle_rate(self, scenario):
        table = stability_sweep([0.2, 0.6, 1.0, 1.4], [0.0, 0.2], duration=300.0, seeds=[0, 1, 2],
                                scenario=scenario, dt=0.1)
        for _, part in table.groupby("lambda_p"):
            means = part.sort_values("lambda_v")["mean_count"].tolist()
            assert means == sorted(means)

    @pytest.mark.slow
    def test_pedestrians_bring_the_knee_forward(self, scenario):
        grid = [round(0.2 * i, 1) for i in range(1, 11)]
        table = stability_sweep(grid, [0.0, 0.2], duration=300.0, seeds=[0, 1, 2], scenario=scenario, dt=0.1)
        knees = {}
        for lambda_p, part in table.groupby("lambda_p"):
            part = part.sort_values("lambda_v")
            knee = find_knee(part["lambda_v"].tolist(), part["mean_count"].tolist())
            knees[lambda_p] = math.inf if knee is None else knee
        assert knees[0.2] < knees[0.0]
