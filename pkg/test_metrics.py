import pandas as pd
import pytest

from config import GenieMode, ScenarioConfig
from metrics import (
    DurationAccumulator,
    MetricsError,
    MetricsLedger,
    aggregate_throughput,
    audit_throughput,
    coop_failure_breakdown,
    coop_outcome_breakdown,
    coop_phase_breakdown,
    coop_success_rate,
    duration_ratio,
    mean_duration,
    non_coop_breakdown,
    packet_delivery_ratio,
    pooled_key,
    relay_unavailability_breakdown,
)
from protocols import Choice, CoopOutcome, ExclusionReason, NonCoopReason


def _ledger(**kwargs):
    defaults = dict(warmup_s=1.0, measured_time_s=10.0, config_key=ScenarioConfig().matching_key())
    defaults.update(kwargs)
    return MetricsLedger(**defaults)


def test_zero_deliveries_give_zero_throughput():
    assert aggregate_throughput(_ledger()) == 0.0


def test_zero_measured_time_is_an_error():
    with pytest.raises(MetricsError):
        aggregate_throughput(_ledger(measured_time_s=0.0))


def test_warmup_filters_records():
    ledger = _ledger()
    ledger.record_generated(0.5)
    ledger.record_generated(1.5)
    ledger.record_delivery(now=1.2, generated_at=0.5, bits=5000, duration=2e-3, strategy=Choice.DIRECT)
    ledger.record_delivery(now=1.8, generated_at=1.5, bits=5000, duration=3e-3, strategy=Choice.SPLIT)
    ledger.record_decision(0.9, Choice.DIRECT, NonCoopReason.GATED)
    assert ledger.generated == 1
    assert ledger.delivered == 1
    assert ledger.delivered_bits == 10_000
    assert ledger.total_decisions == 0
    assert aggregate_throughput(ledger) == pytest.approx(1000.0)
    assert packet_delivery_ratio(ledger) == pytest.approx(1.0)
    assert mean_duration(ledger) == pytest.approx(2.5e-3)


def test_decisions_partition_into_split_and_reasons():
    ledger = _ledger(warmup_s=0.0)
    ledger.record_decision(1.0, Choice.SPLIT, exclusions=[ExclusionReason.NAV])
    ledger.record_decision(1.0, Choice.DIRECT, NonCoopReason.UNSUITABLE_RELAYS)
    ledger.record_decision(1.0, Choice.DEFER, NonCoopReason.NO_AVAIL_RELAYS, [ExclusionReason.CS_BUSY] * 2)
    ledger.record_decision(1.0, Choice.DIRECT, NonCoopReason.GATED)
    ledger.record_coop_outcome(1.0, CoopOutcome.SUCCESS)

    shares = coop_phase_breakdown(ledger)
    partition = shares["split"] + sum(shares[r.value] for r in NonCoopReason)
    assert partition == pytest.approx(1.0)
    assert shares["coop-success"] == pytest.approx(0.25)

    assert non_coop_breakdown(ledger) == {"no-avail-relays": 0.5, "unsuitable-relays": 0.5}
    assert sum(non_coop_breakdown(ledger, include_gated=True).values()) == pytest.approx(1.0)
    assert relay_unavailability_breakdown(ledger)["cs-busy"] == pytest.approx(2 / 3)
    ledger.check_conservation()


def test_non_split_decision_needs_reason():
    with pytest.raises(MetricsError):
        _ledger(warmup_s=0.0).record_decision(1.0, Choice.DIRECT)


def test_coop_outcome_statistics():
    ledger = _ledger(warmup_s=0.0)
    for outcome in [CoopOutcome.SUCCESS, CoopOutcome.SUCCESS, CoopOutcome.DATA_LOSS_AT_RELAY, CoopOutcome.HEADER_LOSS_CHANNEL]:
        ledger.record_coop_outcome(2.0, outcome)
    assert coop_success_rate(ledger) == pytest.approx(0.5)
    assert sum(coop_outcome_breakdown(ledger).values()) == pytest.approx(1.0)
    failures = coop_failure_breakdown(ledger)
    assert "success" not in failures
    assert failures["data-loss-at-relay"] == pytest.approx(0.5)


def test_empty_breakdowns_are_errors():
    ledger = _ledger()
    for statistic in (coop_phase_breakdown, coop_success_rate, relay_unavailability_breakdown, packet_delivery_ratio):
        with pytest.raises(MetricsError):
            statistic(ledger)
    with pytest.raises(MetricsError):
        mean_duration(ledger)
    with pytest.raises(MetricsError):
        DurationAccumulator().mean


def test_conservation_violation_detected():
    ledger = _ledger(warmup_s=0.0)
    ledger.record_generated(1.0)
    ledger.record_drop(1.0)
    ledger.record_drop(1.0)
    with pytest.raises(MetricsError):
        ledger.check_conservation()


def test_merge_pools_replications_and_keeps_zero_counters():
    first = _ledger(config_key={**ScenarioConfig(seed=1).matching_key()})
    second = _ledger(config_key={**ScenarioConfig(seed=2).matching_key()})
    first.record_decision(2.0, Choice.SPLIT)
    second.record_decision(2.0, Choice.DIRECT, NonCoopReason.GATED)
    merged = first.merge(second)
    assert merged.measured_time_s == pytest.approx(20.0)
    assert merged.decisions["split"] == 1 and merged.decisions["direct"] == 1
    assert merged.decisions["defer"] == 0
    assert "seed" not in merged.config_key
    assert set(merged.as_dict()) == set(first.as_dict())

    with pytest.raises(MetricsError):
        first.merge(_ledger(config_key=ScenarioConfig(offered_load_kbps=10.0).matching_key()))


def test_pooled_key_strips_seeds():
    key = ScenarioConfig(seed=3, placement_seed=4).matching_key()
    assert pooled_key(key) == pooled_key(ScenarioConfig(seed=9).matching_key())


def _with_durations(genie=GenieMode.OFF, key=None, durations=()):
    ledger = _ledger(warmup_s=0.0, genie=genie.value, config_key=key or ScenarioConfig().matching_key())
    for value in durations:
        ledger.record_delivery(1.0, 1.0, 5000, value, Choice.DIRECT)
    return ledger


def test_duration_ratio():
    coop = _with_durations(durations=[2e-3, 4e-3])
    plain = _with_durations(durations=[4e-3])
    assert duration_ratio(coop, plain) == pytest.approx(0.75)

    forced = _with_durations(GenieMode.FORCED_COOPERATION, durations=[3e-3])
    assert duration_ratio(forced, plain, GenieMode.FORCED_COOPERATION) == pytest.approx(0.75)
    with pytest.raises(MetricsError):
        duration_ratio(forced, plain)

    other = _with_durations(key=ScenarioConfig(node_count=20).matching_key(), durations=[1e-3])
    with pytest.raises(MetricsError):
        duration_ratio(other, plain)


def test_audit_throughput_recomputes_from_events():
    events = pd.DataFrame(
        [
            {"time": 0.5, "event": "delivered", "bits": 5000},
            {"time": 1.5, "event": "delivered", "bits": 5000},
            {"time": 1.6, "event": "generated", "bits": None},
            {"time": 2.5, "event": "delivered", "bits": 5000},
        ]
    )
    assert audit_throughput(events, warmup_s=1.0, measured_time_s=4.0) == pytest.approx(2500.0)
    with pytest.raises(MetricsError):
        audit_throughput(events, 1.0, 0.0)
