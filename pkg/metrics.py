"""Measurement ledger for one replication and the derived statistics."""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Mapping, Optional

import pandas as pd

from config import GenieMode
from protocols import Choice, CoopOutcome, ExclusionReason, NonCoopReason

LOGGER = logging.getLogger(__name__)


class MetricsError(RuntimeError):
    """Raised when a statistic is requested from an unusable ledger."""


@dataclass
class DurationAccumulator:
    total: float = 0.0
    count: int = 0

    def add(self, duration: float) -> None:
        self.total += duration
        self.count += 1

    @property
    def mean(self) -> float:
        if self.count == 0:
            raise MetricsError("No completed communication recorded")
        return self.total / self.count

    def merge(self, other: "DurationAccumulator") -> "DurationAccumulator":
        return DurationAccumulator(self.total + other.total, self.count + other.count)


def _counter(enum_type) -> Counter:
    return Counter({member.value: 0 for member in enum_type})


def pooled_key(key: Mapping[str, Any]) -> Dict[str, Any]:
    """Configuration key without the seeds, shared by the replications of one run."""
    return {name: value for name, value in key.items() if name not in {"seed", "placement_seed"}}


def _merged(enum_type, *counters: Counter) -> Counter:
    # Counter addition drops zero entries; update keeps them.
    merged = _counter(enum_type)
    for counter in counters:
        merged.update(counter)
    return merged


@dataclass
class MetricsLedger:
    """Counters of a replication, restricted to the measured window.

    Packet counts (generated/delivered/dropped) cover packets generated after
    the warm-up; ``delivered_bits`` covers deliveries acknowledged after it.
    """

    warmup_s: float = 0.0
    measured_time_s: float = 0.0
    config_key: Dict[str, Any] = field(default_factory=dict)
    protocol: str = ""
    genie: str = GenieMode.OFF.value
    seed: Optional[int] = None

    delivered_bits: float = 0.0
    generated: int = 0
    delivered: int = 0
    dropped: int = 0

    decisions: Counter = field(default_factory=lambda: _counter(Choice))
    non_coop: Counter = field(default_factory=lambda: _counter(NonCoopReason))
    exclusions: Counter = field(default_factory=lambda: _counter(ExclusionReason))
    coop_outcomes: Counter = field(default_factory=lambda: _counter(CoopOutcome))
    durations: Dict[str, DurationAccumulator] = field(
        default_factory=lambda: {Choice.DIRECT.value: DurationAccumulator(), Choice.SPLIT.value: DurationAccumulator()}
    )

    def measuring(self, now: float) -> bool:
        return now >= self.warmup_s

    # -- recording ------------------------------------------------------
    def record_generated(self, generated_at: float) -> None:
        if self.measuring(generated_at):
            self.generated += 1

    def record_delivery(self, now: float, generated_at: float, bits: float, duration: float, strategy: Choice) -> None:
        if self.measuring(now):
            self.delivered_bits += bits
            self.durations[strategy.value].add(duration)
        if self.measuring(generated_at):
            self.delivered += 1

    def record_drop(self, generated_at: float) -> None:
        if self.measuring(generated_at):
            self.dropped += 1

    def record_decision(
        self,
        now: float,
        choice: Choice,
        reason: Optional[NonCoopReason] = None,
        exclusions: Iterable[ExclusionReason] = (),
    ) -> None:
        if not self.measuring(now):
            return
        self.decisions[choice.value] += 1
        if choice is not Choice.SPLIT:
            if reason is None:
                raise MetricsError("Non-split decisions need a non-coop reason")
            self.non_coop[reason.value] += 1
        for exclusion in exclusions:
            self.exclusions[exclusion.value] += 1

    def record_coop_outcome(self, now: float, outcome: CoopOutcome) -> None:
        if self.measuring(now):
            self.coop_outcomes[outcome.value] += 1

    # -- reductions -----------------------------------------------------
    @property
    def pending(self) -> int:
        return self.generated - self.delivered - self.dropped

    @property
    def total_decisions(self) -> int:
        return sum(self.decisions.values())

    def check_conservation(self) -> None:
        if self.pending < 0:
            raise MetricsError(
                f"More packets terminated ({self.delivered + self.dropped}) than generated ({self.generated})"
            )
        if sum(self.non_coop.values()) != self.total_decisions - self.decisions[Choice.SPLIT.value]:
            raise MetricsError("Non-coop reasons do not partition the non-split decisions")

    def merge(self, other: "MetricsLedger") -> "MetricsLedger":
        """Pool two ledgers (e.g. replications of one configuration)."""
        if self.config_key and other.config_key and pooled_key(self.config_key) != pooled_key(other.config_key):
            raise MetricsError("Cannot merge ledgers from different configurations")
        return MetricsLedger(
            warmup_s=self.warmup_s,
            measured_time_s=self.measured_time_s + other.measured_time_s,
            config_key=pooled_key(self.config_key or other.config_key),
            protocol=self.protocol or other.protocol,
            genie=self.genie,
            delivered_bits=self.delivered_bits + other.delivered_bits,
            generated=self.generated + other.generated,
            delivered=self.delivered + other.delivered,
            dropped=self.dropped + other.dropped,
            decisions=_merged(Choice, self.decisions, other.decisions),
            non_coop=_merged(NonCoopReason, self.non_coop, other.non_coop),
            exclusions=_merged(ExclusionReason, self.exclusions, other.exclusions),
            coop_outcomes=_merged(CoopOutcome, self.coop_outcomes, other.coop_outcomes),
            durations={key: acc.merge(other.durations[key]) for key, acc in self.durations.items()},
        )

    def as_dict(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "seed": self.seed,
            "protocol": self.protocol,
            "genie": self.genie,
            "measured_time_s": self.measured_time_s,
            "delivered_bits": self.delivered_bits,
            "generated": self.generated,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "pending": self.pending,
        }
        row.update({f"decision_{key}": value for key, value in sorted(self.decisions.items())})
        row.update({f"noncoop_{key}": value for key, value in sorted(self.non_coop.items())})
        row.update({f"exclusion_{key}": value for key, value in sorted(self.exclusions.items())})
        row.update({f"outcome_{key}": value for key, value in sorted(self.coop_outcomes.items())})
        for key, acc in sorted(self.durations.items()):
            row[f"duration_{key}_total_s"] = acc.total
            row[f"duration_{key}_count"] = acc.count
        return row


def _shares(counts: Mapping[str, int], label: str) -> Dict[str, float]:
    total = sum(counts.values())
    if total == 0:
        raise MetricsError(f"No {label} recorded")
    return {key: value / total for key, value in counts.items()}


def aggregate_throughput(ledger: MetricsLedger) -> float:
    """Delivered payload bits per measured second."""
    if ledger.measured_time_s <= 0:
        raise MetricsError("Measured time is zero; the run did not outlast the warm-up")
    return ledger.delivered_bits / ledger.measured_time_s


def packet_delivery_ratio(ledger: MetricsLedger) -> float:
    if ledger.generated == 0:
        raise MetricsError("No packets generated in the measured window")
    return ledger.delivered / ledger.generated


def coop_phase_breakdown(ledger: MetricsLedger) -> Dict[str, float]:
    """Split decisions and non-coop reasons as shares of all access decisions.

    The four shares partition the decisions; ``coop-success`` is the share of
    decisions that ended in a successful two-hop delivery.
    """
    total = ledger.total_decisions
    if total == 0:
        raise MetricsError("No transmission decisions recorded")
    shares = {Choice.SPLIT.value: ledger.decisions[Choice.SPLIT.value] / total}
    for reason in NonCoopReason:
        shares[reason.value] = ledger.non_coop[reason.value] / total
    shares["coop-success"] = ledger.coop_outcomes[CoopOutcome.SUCCESS.value] / total
    return shares


def non_coop_breakdown(ledger: MetricsLedger, include_gated: bool = False) -> Dict[str, float]:
    """Reasons for not relaying, normalized over the non-relayed phases."""
    counts = {
        key: value
        for key, value in ledger.non_coop.items()
        if include_gated or key != NonCoopReason.GATED.value
    }
    return _shares(counts, "non-cooperative decisions")


def coop_success_rate(ledger: MetricsLedger) -> float:
    attempts = sum(ledger.coop_outcomes.values())
    if attempts == 0:
        raise MetricsError("No cooperative attempts recorded")
    return ledger.coop_outcomes[CoopOutcome.SUCCESS.value] / attempts


def coop_outcome_breakdown(ledger: MetricsLedger) -> Dict[str, float]:
    return _shares(ledger.coop_outcomes, "cooperative outcomes")


def coop_failure_breakdown(ledger: MetricsLedger) -> Dict[str, float]:
    failures = {k: v for k, v in ledger.coop_outcomes.items() if k != CoopOutcome.SUCCESS.value}
    return _shares(failures, "cooperative failures")


def relay_unavailability_breakdown(ledger: MetricsLedger) -> Dict[str, float]:
    return _shares(ledger.exclusions, "relay exclusions")


def mean_duration(ledger: MetricsLedger) -> float:
    """Mean duration of completed communications, all strategies pooled."""
    pooled = DurationAccumulator()
    for acc in ledger.durations.values():
        pooled = pooled.merge(acc)
    return pooled.mean


def duration_ratio(ledger_coop: MetricsLedger, ledger_plain: MetricsLedger, genie: GenieMode = GenieMode.OFF) -> float:
    """Mean completed-communication duration of a cooperative run over the
    plain CSMA-CSI one."""
    if ledger_coop.config_key != ledger_plain.config_key:
        raise MetricsError("Duration ratio needs ledgers from matched configurations")
    if ledger_coop.genie != GenieMode(genie).value:
        raise MetricsError(f"Cooperative ledger was run with genie={ledger_coop.genie}, not {GenieMode(genie).value}")
    return mean_duration(ledger_coop) / mean_duration(ledger_plain)


def audit_throughput(events: pd.DataFrame, warmup_s: float, measured_time_s: float) -> float:
    """Throughput recomputed from a raw event log (double-entry check)."""
    if measured_time_s <= 0:
        raise MetricsError("Measured time is zero")
    deliveries = events[(events["event"] == "delivered") & (events["time"] >= warmup_s)]
    return float(deliveries["bits"].sum()) / measured_time_s
