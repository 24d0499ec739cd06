import logging

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.distance import pdist

from config import ConfigurationError, GenieMode, Protocol, ScenarioConfig
from engine import (
    Frame,
    FrameKind,
    RxMode,
    Simulation,
    SimulationInvariantError,
    generate_topology,
    generate_traffic,
    neighbor_sets,
)
from metrics import aggregate_throughput, audit_throughput, coop_phase_breakdown, mean_duration
from protocols import NonCoopReason

PAIR = np.array([[0.0, 0.0], [5.0, 0.0]])
QUIET = ScenarioConfig(protocol=Protocol.CSMA_CSI, offered_load_kbps=0.0, duration_s=1.0, warmup_s=0.0)
SMALL = ScenarioConfig(node_count=8, area_m=100.0, offered_load_kbps=100.0, duration_s=2.0, warmup_s=0.5, seed=3)


def test_topology_respects_separation_and_connectivity():
    config = ScenarioConfig()
    positions = generate_topology(config, np.random.default_rng(1))
    assert positions.shape == (35, 2)
    assert pdist(positions).min() >= config.min_separation_m
    assert all(neighbor_sets(positions, config.neighbor_radius_m))
    np.testing.assert_array_equal(positions, generate_topology(config, np.random.default_rng(1)))


def test_topology_gives_up_when_constraints_cannot_be_met():
    with pytest.raises(ConfigurationError):
        generate_topology(ScenarioConfig(area_m=5.0), np.random.default_rng(0), max_attempts=20)


def test_neighbor_sets_use_inclusive_radius():
    positions = np.array([[0.0, 0.0], [60.0, 0.0], [200.0, 0.0]])
    assert neighbor_sets(positions, 60.0) == [[1], [0], []]


def test_poisson_traffic_rate():
    arrivals = generate_traffic([[1], [0]], 100.0, 5000, 2000.0, np.random.default_rng(5))
    from_zero = [a for a in arrivals if a.source == 0]
    assert len(from_zero) == pytest.approx(20 * 2000, rel=0.02)
    assert all(a.destination == 1 for a in from_zero)
    times = [a.time for a in arrivals]
    assert times == sorted(times)
    assert max(times) < 2000.0


def test_destinations_are_uniform_over_neighbours():
    neighbors = [[1, 2, 3, 4], [0], [0], [0], [0]]
    arrivals = generate_traffic(neighbors, 100.0, 5000, 500.0, np.random.default_rng(6))
    counts = np.bincount([a.destination for a in arrivals if a.source == 0], minlength=5)[1:]
    assert stats.chisquare(counts).pvalue > 1e-3


def test_isolated_node_generates_nothing(caplog):
    with caplog.at_level(logging.WARNING, logger="engine"):
        arrivals = generate_traffic([[1], [0], []], 100.0, 5000, 10.0, np.random.default_rng(0))
    assert all(a.source != 2 for a in arrivals)
    assert "Node 2 has no neighbour" in caplog.text
    assert generate_traffic([[1], [0]], 0.0, 5000, 10.0, np.random.default_rng(0)) == []


def test_empty_network_drains():
    sim = Simulation(QUIET, positions=PAIR)
    while sim.step():
        pass
    assert sim.transmissions == 0
    assert sim.now == 0.0


def test_single_pair_delivers_with_one_data_frame_and_one_ack():
    sim = Simulation(QUIET, positions=PAIR, audit=True)
    sim.inject_packet(0, 1)
    ledger = sim.run()

    assert ledger.generated == 1
    assert ledger.delivered == 1
    assert sim.transmissions == 2
    assert ledger.non_coop[NonCoopReason.GATED.value] == 1

    events = sim.events()
    frames = events[events["event"] == "tx-start"]
    assert frames["kind"].tolist() == ["data1", "ack"]
    data, ack = frames.iloc[0], frames.iloc[1]
    assert QUIET.difs_s - 1e-12 <= data["time"] <= QUIET.difs_s + 16 * QUIET.slot_s + 1e-12
    assert ack["time"] == pytest.approx(data["time"] + data["duration"] + QUIET.sifs_s, abs=1e-12)

    delivered = events[events["event"] == "delivered"].iloc[0]
    assert delivered["duration"] == pytest.approx(ack["time"] + ack["duration"] - data["time"], abs=1e-12)


def test_replication_is_deterministic():
    first = Simulation(SMALL).run()
    second = Simulation(SMALL).run()
    assert first.as_dict() == second.as_dict()
    assert first.generated > 0


def test_ledger_is_conserved_and_decisions_partition():
    ledger = Simulation(SMALL).run()
    assert ledger.pending >= 0
    assert ledger.generated == ledger.delivered + ledger.dropped + ledger.pending
    shares = coop_phase_breakdown(ledger)
    assert shares["split"] + sum(shares[r.value] for r in NonCoopReason) == pytest.approx(1.0)


def test_event_log_reproduces_throughput():
    sim = Simulation(SMALL, audit=True)
    ledger = sim.run()
    recomputed = audit_throughput(sim.events(), SMALL.warmup_s, ledger.measured_time_s)
    assert recomputed == pytest.approx(aggregate_throughput(ledger))


def test_logged_decisions_take_the_shortest_option():
    sim = Simulation(SMALL, audit=True)
    sim.run()
    decisions = sim.events().query("event == 'decision'")
    assert not decisions.empty
    for row in decisions.itertuples():
        best = min(row.t_sd, row.t_split_best, row.t_max)
        assert row.planned == pytest.approx(best)
        if row.choice == "split":
            assert row.planned == pytest.approx(row.t_split_best)


def test_cached_sensed_power_matches_brute_force():
    sim = Simulation(SMALL)
    checked = 0
    while sim.now < 1.0 and sim.step():
        for node in range(sim.n):
            assert sim.sensed_power(node) == pytest.approx(sim._sensed[node], rel=1e-9)
        checked += 1
    assert checked > 0


def test_events_need_audit():
    with pytest.raises(SimulationInvariantError):
        Simulation(QUIET, positions=PAIR).events()


def test_scheduling_in_the_past_is_rejected():
    sim = Simulation(QUIET, positions=PAIR)
    sim.run(until=0.5)
    with pytest.raises(SimulationInvariantError):
        sim.inject_packet(0, 1, at=0.1)


def test_coincident_nodes_are_rejected():
    with pytest.raises(ConfigurationError):
        Simulation(QUIET, positions=np.array([[0.0, 0.0], [0.0, 0.0]]))


def _frame(tx=0, rx=1, packet_id=99):
    return Frame(
        kind=FrameKind.DATA1,
        tx=tx,
        rx=rx,
        packet_id=packet_id,
        rate_bps=1e6,
        start=0.0,
        header_bits=112,
        payload_bits=5000,
        header_duration=QUIET.header_duration_s,
        nav_until=0.01,
    )


def test_reception_needs_detection_power_and_an_idle_receiver():
    sim = Simulation(QUIET, positions=PAIR)
    weak = sim.begin_reception(1, _frame(), rx_power_mw=QUIET.detection_threshold_mw / 2)
    assert weak.mode is RxMode.IDLE

    first = _frame()
    state = sim.begin_reception(1, first, rx_power_mw=1e-6)
    assert state.mode is RxMode.SYNCING and state.frame is first
    assert state.trace.gamma == pytest.approx(1e-6 / QUIET.noise_mw)

    later = sim.begin_reception(1, _frame(packet_id=100), rx_power_mw=1e-5)
    assert later.frame is first
    assert sim.is_busy(1)


STATIC = ScenarioConfig(max_doppler_hz=0.0, offered_load_kbps=0.0, duration_s=1.0, warmup_s=0.0)


def _pinned(config, positions, audit=False, gain=1.0):
    """Simulation whose links all hold a fixed fading gain."""
    sim = Simulation(config, positions=np.asarray(positions, dtype=float), audit=audit)
    for tx in range(sim.n):
        for rx in range(sim.n):
            if tx != rx:
                sim.fading.set_gain(tx, rx, gain)
    return sim


def _pin_pair(sim, a, b, gain):
    sim.fading.set_gain(a, b, gain)
    sim.fading.set_gain(b, a, gain)


def _long_frame(tx, rx, start=0.0):
    return Frame(
        kind=FrameKind.DATA1,
        tx=tx,
        rx=rx,
        packet_id=-1,
        rate_bps=1e6,
        start=start,
        header_bits=112,
        payload_bits=1e6,
        header_duration=STATIC.header_duration_s,
        nav_until=start + 1.0,
    )


def test_frozen_channels_make_every_split_succeed():
    config = STATIC.with_overrides(
        protocol=Protocol.COOP_CSI, genie=GenieMode.FORCED_COOPERATION, duration_s=2.0
    )
    sim = _pinned(config, [[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]])
    for index in range(10):
        sim.inject_packet(0, 2, at=0.1 * index)
    ledger = sim.run()
    assert ledger.generated == 10
    assert ledger.delivered == 10
    assert ledger.decisions["split"] == 10
    assert ledger.coop_outcomes["success"] == ledger.decisions["split"]


def test_interferer_starting_mid_frame_breaks_the_reception():
    config = STATIC.with_overrides(protocol=Protocol.CSMA_CSI)
    line = [[0.0, 0.0], [30.0, 0.0], [60.0, 0.0], [90.0, 0.0]]

    control = _pinned(config, line)
    control.inject_packet(0, 1)
    assert control.run(until=0.5).delivered == 1

    sim = _pinned(config, line)
    sim.inject_packet(0, 1)
    while sim.receiver_state(1).mode is not RxMode.LOCKED:
        assert sim.step()
    sim.launch(_long_frame(2, 3, start=sim.now))
    ledger = sim.run(until=0.5)
    assert ledger.delivered == 0
    assert ledger.pending == 1


def test_third_party_header_sets_the_nav():
    config = STATIC.with_overrides(protocol=Protocol.CSMA_CSI)
    sim = _pinned(config, [[0.0, 0.0], [30.0, 0.0], [15.0, 10.0]])
    sim.inject_packet(0, 1)
    while sim.receiver_state(2).mode is not RxMode.LOCKED:
        assert sim.step()
    frame = sim.receiver_state(2).frame
    assert frame.tx == 0 and frame.rx == 1

    sim.run(until=frame.end + config.sifs_s / 2)
    assert sim.receiver_state(2).mode is RxMode.IDLE
    assert sim.sensed_power(2) == pytest.approx(config.noise_mw)
    assert sim.is_busy(2)

    ledger = sim.run(until=frame.nav_until + config.slot_s)
    assert ledger.delivered == 1
    assert not sim.is_busy(2)


def test_relay_synchronized_to_a_hidden_transmitter_is_excluded():
    config = STATIC.with_overrides(protocol=Protocol.COOP_CSI)
    source, destination, relay, hidden, peer = range(5)
    sim = _pinned(config, [[0.0, 0.0], [30.0, 0.0], [50.0, 0.0], [200.0, 0.0], [230.0, 0.0]])
    sim.fading.set_gain(hidden, relay, 8 * config.detection_threshold_mw / sim.mean_power[hidden, relay])
    sim.fading.set_gain(hidden, source, 0.1)
    sim.fading.set_gain(hidden, destination, 0.01)

    sim.launch(_long_frame(hidden, peer))
    sim.inject_packet(source, destination)
    ledger = sim.run(until=0.05)
    assert sim.receiver_state(relay).frame.tx == hidden
    assert ledger.exclusions["hidden-sync"] >= 1
    assert ledger.exclusions["nav"] == 0
    assert ledger.delivered == 1


def test_destination_caches_the_partial_phase_one():
    config = STATIC.with_overrides(protocol=Protocol.COOP_CSI)
    sim = _pinned(config, [[0.0, 0.0], [30.0, 0.0], [60.0, 0.0]], audit=True)
    _pin_pair(sim, 0, 2, 0.1)
    sim.inject_packet(0, 2)
    ledger = sim.run(until=0.05)
    assert ledger.decisions["split"] == 1
    assert ledger.coop_outcomes["success"] == 1
    assert ledger.delivered == 1

    c_sd = config.bandwidth_hz * np.log2(1 + sim.mean_power[0, 2] * 0.1 / config.noise_mw)
    c_sc = config.bandwidth_hz * np.log2(1 + sim.mean_power[0, 1] / config.noise_mw)
    cached = sim.events().query("event == 'cached'")["bits"].tolist()
    assert len(cached) == 1
    expected = config.payload_bits * (1 + config.epsilon) * c_sd / c_sc
    assert cached[0] == pytest.approx(expected, rel=1e-6)
    assert 0 < cached[0] < config.payload_bits


def _saturated_line(config, extra=(), packets=400):
    positions = [[0.0, 0.0], [30.0, 0.0], [60.0, 0.0], *extra]
    sim = _pinned(config, positions)
    _pin_pair(sim, 0, 2, 0.1)
    for _ in range(packets):
        sim.inject_packet(0, 2)
    return sim


def test_cooperation_beats_direct_transmission_on_a_weak_link():
    config = STATIC.with_overrides(duration_s=0.5, seed=4)
    plain = _saturated_line(config.with_overrides(protocol=Protocol.CSMA_CSI)).run()
    coop = _saturated_line(config.with_overrides(protocol=Protocol.COOP_CSI)).run()
    assert plain.delivered > 0
    assert coop.decisions["split"] > 0
    assert aggregate_throughput(coop) > aggregate_throughput(plain)
    assert mean_duration(coop) < mean_duration(plain)


def test_sensing_genie_recovers_a_relay_busy_with_far_interference():
    relay, interferer, peer = 1, 3, 4

    def run(genie):
        config = STATIC.with_overrides(duration_s=0.5, seed=4, protocol=Protocol.COOP_CSI, genie=genie)
        sim = _saturated_line(config, extra=[[250.0, 0.0], [260.0, 0.0]])
        sim.fading.set_gain(interferer, relay, 1.6 * config.cs_threshold_mw / sim.mean_power[interferer, relay])
        for node in (0, 2):
            sim.fading.set_gain(interferer, node, 0.01)
        sim.launch(_long_frame(interferer, peer))
        return sim.run()

    sensing = run(GenieMode.OFF)
    genie = run(GenieMode.ALL_RELAYS_AVAILABLE)
    assert sensing.exclusions["cs-busy"] > 0
    assert sensing.decisions["split"] == 0
    assert genie.decisions["split"] > 0
    assert genie.delivered > sensing.delivered
    assert mean_duration(genie) < mean_duration(sensing)
