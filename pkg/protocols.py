"""Rate decisions for CSMA-CSI and Coop-CSI.

All functions here are pure: the engine hands in channel snapshots taken at
the channel-access instant and acts on the returned decision.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from channel import SinrTrace, instantaneous_capacity

INFINITE = math.inf


class Choice(str, Enum):
    DIRECT = "direct"
    SPLIT = "split"
    DEFER = "defer"


class ExclusionReason(str, Enum):
    CS_BUSY = "cs-busy"
    HIDDEN_SYNC = "hidden-sync"
    NAV = "nav"
    TX_RX_BUSY = "tx-rx-busy"


class NonCoopReason(str, Enum):
    NO_AVAIL_RELAYS = "no-avail-relays"
    UNSUITABLE_RELAYS = "unsuitable-relays"
    GATED = "gated"


class CoopOutcome(str, Enum):
    SUCCESS = "success"
    HEADER_LOSS_NO_SYNC_POWER = "header-loss/no-sync-power"
    HEADER_LOSS_NO_SYNC_BUSY = "header-loss/no-sync-busy"
    HEADER_LOSS_CHANNEL = "header-loss/channel"
    DATA_LOSS_AT_RELAY = "data-loss-at-relay"
    DATA_LOSS_OVER_CD = "data-loss-over-CD"


@dataclass(frozen=True)
class CandidateEvaluation:
    relay: int
    rho_sc: float
    rho_cd: float
    l1: float
    t_split: float


@dataclass(frozen=True)
class RateDecision:
    rho_sd: float
    t_sd: float
    t_max: float
    choice: Choice
    candidates: Tuple[CandidateEvaluation, ...] = ()
    relay: Optional[int] = None

    @property
    def planned_duration(self) -> float:
        """T* of the chosen option (T_max when deferring)."""
        if self.choice is Choice.DIRECT:
            return self.t_sd
        if self.choice is Choice.SPLIT:
            return self.chosen.t_split
        return self.t_max

    @property
    def chosen(self) -> Optional[CandidateEvaluation]:
        for candidate in self.candidates:
            if candidate.relay == self.relay:
                return candidate
        return None


@dataclass(frozen=True)
class CandidateSnapshot:
    """What the source needs to know about a neighbour at t0."""

    node: int
    transmitting: bool = False
    engaged: bool = False  # endpoint of another ongoing link
    receiving: bool = False
    receiving_hidden: bool = False  # frame's transmitter outside the source's sensing range
    nav_active: bool = False
    sensed_power_mw: float = 0.0


class CandidateFilter(NamedTuple):
    candidates: List[int]
    exclusions: Dict[int, ExclusionReason]


@dataclass
class CooperativeSession:
    """Destination-side state of a split delivery after the phase-1 header."""

    packet_id: int
    source: int
    relay: int
    destination: int
    phase: int = 1
    cached_bits: float = 0.0
    phase_rates: Dict[int, float] = field(default_factory=dict)

    def cache(self, bits: float) -> None:
        if bits < 0:
            raise ValueError("Cannot cache a negative amount of information")
        self.cached_bits += bits


@dataclass
class SplitPlan:
    """Source-side bookkeeping of one split attempt."""

    packet_id: int
    source: int
    relay: int
    destination: int
    header_loss: Optional[CoopOutcome] = None
    relay_decoded: Optional[bool] = None


class PhaseTwoResult(NamedTuple):
    delivered: bool
    outcome: CoopOutcome


def compute_direct_rate(gamma_sd: float, bandwidth: float, epsilon: float) -> float:
    """Sustainable rate as if L(1 + epsilon) bits had to be retrieved."""
    return instantaneous_capacity(gamma_sd, bandwidth) / (1.0 + epsilon)


def min_rate_gate(rho_sd: float, threshold: float) -> bool:
    return rho_sd >= threshold


def filter_candidates(
    neighbors: Iterable[int],
    snapshots: Mapping[int, CandidateSnapshot],
    cs_threshold_mw: float,
    ignore_sensing: bool = False,
) -> CandidateFilter:
    """Keep neighbours that are free and sense an idle medium.

    Exclusion reasons are checked in order: tx-rx-busy for transmitters and
    link endpoints, hidden-sync for receivers of a frame the source cannot
    sense, tx-rx-busy for other receivers, then nav and cs-busy. With
    ``ignore_sensing`` the last two are waived.
    """
    candidates: List[int] = []
    exclusions: Dict[int, ExclusionReason] = {}
    for node in sorted(neighbors):
        snap = snapshots[node]
        if snap.transmitting or snap.engaged:
            exclusions[node] = ExclusionReason.TX_RX_BUSY
        elif snap.receiving and snap.receiving_hidden:
            exclusions[node] = ExclusionReason.HIDDEN_SYNC
        elif snap.receiving:
            exclusions[node] = ExclusionReason.TX_RX_BUSY
        elif snap.nav_active and not ignore_sensing:
            exclusions[node] = ExclusionReason.NAV
        elif snap.sensed_power_mw > cs_threshold_mw and not ignore_sensing:
            exclusions[node] = ExclusionReason.CS_BUSY
        else:
            candidates.append(node)
    return CandidateFilter(candidates, exclusions)


def evaluate_split(
    relay: int,
    rho_sc: float,
    gamma_sd: float,
    gamma_cd: float,
    payload_bits: float,
    bandwidth: float,
    epsilon: float,
) -> CandidateEvaluation:
    """Two-hop duration with the destination caching the first phase."""
    if rho_sc <= 0:
        raise ValueError("Phase-one rate must be positive")
    t_sc = payload_bits / rho_sc
    l1 = t_sc * instantaneous_capacity(gamma_sd, bandwidth)
    rho_cd = instantaneous_capacity(gamma_cd, bandwidth) / (1.0 + epsilon)
    residual = max(0.0, payload_bits - l1)
    if residual == 0.0:
        t_split = t_sc
    elif rho_cd <= 0:
        t_split = INFINITE
    else:
        t_split = t_sc + residual / rho_cd
    return CandidateEvaluation(relay=relay, rho_sc=rho_sc, rho_cd=rho_cd, l1=l1, t_split=t_split)


def decide(
    rho_sd: float,
    payload_bits: float,
    min_rate: float,
    candidates: Sequence[CandidateEvaluation] = (),
    forced_cooperation: bool = False,
) -> RateDecision:
    """Pick T* = min{min_i T_split,i, T_sd, T_max}.

    Ties go to Direct, then to the lowest relay id; Defer only when T_max is
    strictly shorter than every option. ``forced_cooperation`` drops T_sd
    from the minimum whenever at least one candidate was evaluated.
    """
    t_sd = payload_bits / rho_sd if rho_sd > 0 else INFINITE
    t_max = payload_bits / min_rate
    ranked = sorted(candidates, key=lambda c: (c.t_split, c.relay))
    best = ranked[0] if ranked else None

    options: List[Tuple[float, int, Choice, Optional[int]]] = []
    if not (forced_cooperation and best is not None):
        options.append((t_sd, 0, Choice.DIRECT, None))
    if best is not None:
        options.append((best.t_split, 1, Choice.SPLIT, best.relay))
    options.append((t_max, 2, Choice.DEFER, None))

    _, _, choice, relay = min(options, key=lambda o: (o[0], o[1]))

    return RateDecision(
        rho_sd=rho_sd,
        t_sd=t_sd,
        t_max=t_max,
        choice=choice,
        candidates=tuple(candidates),
        relay=relay,
    )


def non_coop_reason(gate_passed: bool, candidate_count: int) -> NonCoopReason:
    if not gate_passed:
        return NonCoopReason.GATED
    if candidate_count == 0:
        return NonCoopReason.NO_AVAIL_RELAYS
    return NonCoopReason.UNSUITABLE_RELAYS


def run_phase_two(
    plan: SplitPlan,
    session: Optional[CooperativeSession],
    trace: Optional[SinrTrace],
    bandwidth: float,
    payload_bits: float,
) -> PhaseTwoResult:
    """Resolve a split attempt at the destination.

    ``trace`` covers the phase-2 payload as seen by the destination, or is
    ``None`` when no redundancy reached it. A phase-one cache that already
    holds ``payload_bits`` succeeds without one.
    """
    if session is None:
        outcome = plan.header_loss or CoopOutcome.HEADER_LOSS_CHANNEL
        return PhaseTwoResult(False, outcome)
    if not plan.relay_decoded:
        return PhaseTwoResult(False, CoopOutcome.DATA_LOSS_AT_RELAY)
    if trace is not None:
        session.phase = 2
        session.cache(trace.bits(bandwidth))
    if session.cached_bits >= payload_bits:
        return PhaseTwoResult(True, CoopOutcome.SUCCESS)
    return PhaseTwoResult(False, CoopOutcome.DATA_LOSS_OVER_CD)
