"""Discrete-event core of the network simulator.

A simpy ``Environment`` drives per-node MAC processes, transmissions and a
fading refresh clock. The physical layer is event driven: received powers,
sensed powers and reception traces are recomputed whenever a transmission
starts or stops, and every ``fading_refresh_ms`` while the air is busy.
"""

import itertools
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
import simpy
from scipy.spatial.distance import pdist, squareform
from simpy.core import EmptySchedule

from channel import FadingField, SinrTrace, sinr
from config import ConfigurationError, GenieMode, Protocol, ScenarioConfig
from mac import (
    BackoffState,
    Medium,
    NavState,
    consume_idle_slots,
    freeze,
    idle_slots_elapsed,
    new_backoff,
    on_attempt_failure,
    sense,
)
from metrics import MetricsLedger
from protocols import (
    CandidateSnapshot,
    Choice,
    CoopOutcome,
    CooperativeSession,
    RateDecision,
    SplitPlan,
    compute_direct_rate,
    decide,
    evaluate_split,
    filter_candidates,
    min_rate_gate,
    non_coop_reason,
    run_phase_two,
)

LOGGER = logging.getLogger(__name__)

# Two events closer than this are treated as simultaneous.
_TIME_EPS = 1e-12


class SimulationInvariantError(RuntimeError):
    """Raised when the event trace breaks an internal invariant."""


class FrameKind(str, Enum):
    DATA1 = "data1"
    DATA2 = "data2"
    ACK = "ack"


@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    tx: int
    rx: int
    packet_id: int
    rate_bps: float
    start: float
    header_bits: int
    payload_bits: float
    header_duration: float
    nav_until: float
    relay: Optional[int] = None
    destination: Optional[int] = None

    @property
    def payload_duration(self) -> float:
        if self.payload_bits <= 0:
            return 0.0
        return self.payload_bits / self.rate_bps

    @property
    def duration(self) -> float:
        return self.header_duration + self.payload_duration

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def is_split(self) -> bool:
        return self.kind is FrameKind.DATA1 and self.relay is not None


class RxMode(str, Enum):
    IDLE = "idle"
    SYNCING = "syncing"
    LOCKED = "locked"


@dataclass
class ReceiverState:
    mode: RxMode = RxMode.IDLE
    frame: Optional[Frame] = None
    trace: Optional[SinrTrace] = None


@dataclass
class Packet:
    packet_id: int
    source: int
    destination: int
    generated_at: float


class Arrival(NamedTuple):
    time: float
    source: int
    destination: int


@dataclass
class _MacState:
    busy: bool = False
    idle_since: float = 0.0
    expiry: Optional[float] = None
    nav: NavState = field(default_factory=NavState)
    idle_event: Optional[simpy.Event] = None
    wakeup: Optional[simpy.Event] = None
    process: Optional[simpy.Process] = None


@dataclass
class _SplitContext:
    plan: SplitPlan
    rho_cd: float
    residual_bits: float


# ----------------------------------------------------------------------
# Topology and traffic
# ----------------------------------------------------------------------
def neighbor_sets(positions: np.ndarray, radius_m: float) -> List[List[int]]:
    distances = squareform(pdist(positions))
    np.fill_diagonal(distances, np.inf)
    return [sorted(np.flatnonzero(row <= radius_m).tolist()) for row in distances]


def generate_topology(config: ScenarioConfig, rng: np.random.Generator, max_attempts: int = 1000) -> np.ndarray:
    """Uniform placement with a minimum separation and at least one
    neighbour per node, redrawn until both hold."""
    if config.area_m <= 0:
        raise ConfigurationError("Area must be positive")
    for attempt in range(1, max_attempts + 1):
        positions = rng.uniform(0.0, config.area_m, size=(config.node_count, 2))
        if pdist(positions).min() < config.min_separation_m:
            continue
        if all(neighbor_sets(positions, config.neighbor_radius_m)):
            LOGGER.debug("Topology accepted after %d draws", attempt)
            return positions
    raise ConfigurationError(
        f"No valid topology for {config.node_count} nodes on {config.area_m} m after {max_attempts} draws"
    )


def generate_traffic(
    neighbors: Sequence[Sequence[int]],
    load_kbps: float,
    payload_bits: float,
    horizon_s: float,
    rng: np.random.Generator,
) -> List[Arrival]:
    """Per-node Poisson arrivals at ``load_kbps * 1000 / payload_bits``
    packets/s, each addressed to a uniformly drawn neighbour."""
    if load_kbps <= 0:
        return []
    rate = load_kbps * 1000.0 / payload_bits
    arrivals: List[Arrival] = []
    for node, peers in enumerate(neighbors):
        if not peers:
            LOGGER.warning("Node %d has no neighbour and generates no traffic", node)
            continue
        times: List[float] = []
        clock = 0.0
        while True:
            chunk = clock + np.cumsum(rng.exponential(1.0 / rate, size=max(16, int(rate * horizon_s * 0.2) + 1)))
            inside = chunk[chunk < horizon_s]
            times.extend(inside.tolist())
            if inside.size < chunk.size:
                break
            clock = float(chunk[-1])
        destinations = rng.choice(np.asarray(peers), size=len(times))
        arrivals.extend(Arrival(t, node, int(d)) for t, d in zip(times, destinations))
    arrivals.sort(key=lambda a: (a.time, a.source))
    return arrivals


# ----------------------------------------------------------------------
# Simulation
# ----------------------------------------------------------------------
class Simulation:
    """One replication of the CSMA network under a given protocol."""

    def __init__(
        self,
        config: ScenarioConfig,
        positions: Optional[np.ndarray] = None,
        audit: bool = False,
        generate_load: bool = True,
    ) -> None:
        self.config = config.validate()
        self.audit = audit
        self.env = simpy.Environment()

        placement_rng = np.random.default_rng(np.random.SeedSequence(config.effective_placement_seed))
        traffic_seq, backoff_seq, fading_seq = np.random.SeedSequence(config.seed).spawn(3)
        self._traffic_rng = np.random.default_rng(traffic_seq)
        self._backoff_rng = np.random.default_rng(backoff_seq)

        if positions is None:
            positions = generate_topology(config, placement_rng)
        self.positions = np.asarray(positions, dtype=float)
        self.n = len(self.positions)
        distances = squareform(pdist(self.positions))
        if self.n > 1 and distances[~np.eye(self.n, dtype=bool)].min() <= 0:
            raise ConfigurationError("Two nodes share a position")
        self.neighbors = neighbor_sets(self.positions, config.neighbor_radius_m)

        law = config.path_loss_law()
        safe = np.where(distances > 0, distances, 1.0)
        self.mean_power = np.where(distances > 0, law.effective_power_mw * np.power(safe, -law.exponent), 0.0)
        self.fading = FadingField(self.n, config.max_doppler_hz, np.random.default_rng(fading_seq))

        self.ledger = MetricsLedger(
            warmup_s=config.warmup_s,
            config_key=config.matching_key(),
            protocol=config.protocol.value,
            genie=config.genie.value,
            seed=config.seed,
        )

        self._active: Dict[int, Frame] = {}
        self._rx_power: Dict[int, np.ndarray] = {}
        self._sensed = np.full(self.n, config.noise_mw)
        self._receivers = [ReceiverState() for _ in range(self.n)]
        self._mac = [_MacState() for _ in range(self.n)]
        self._queues: List[Deque[Packet]] = [deque() for _ in range(self.n)]
        self._engaged: Counter = Counter()
        self._awaiting_ack: Dict[int, tuple] = {}
        self._splits: Dict[int, _SplitContext] = {}
        self._sessions: Dict[int, CooperativeSession] = {}
        self._phase_two_traces: Dict[int, SinrTrace] = {}
        self._packet_ids = itertools.count()
        self._activity: Optional[simpy.Event] = None
        self._log: List[dict] = []
        self.transmissions = 0

        for node in range(self.n):
            self._mac[node].process = self.env.process(self._mac_process(node))
        self.env.process(self._fading_clock())
        if generate_load and config.offered_load_kbps > 0:
            arrivals = generate_traffic(
                self.neighbors, config.offered_load_kbps, config.payload_bits, config.duration_s, self._traffic_rng
            )
            self.env.process(self._traffic(arrivals))

    # -- driving ---------------------------------------------------------
    @property
    def now(self) -> float:
        return self.env.now

    def step(self) -> bool:
        """Process the next event; False once the queue is empty."""
        try:
            self.env.step()
        except EmptySchedule:
            return False
        return True

    def run(self, until: Optional[float] = None) -> MetricsLedger:
        horizon = self.config.duration_s if until is None else until
        self.env.run(until=horizon)
        self.ledger.measured_time_s = max(0.0, horizon - self.config.warmup_s)
        self.ledger.check_conservation()
        return self.ledger

    def inject_packet(self, source: int, destination: int, at: Optional[float] = None) -> int:
        packet_id = next(self._packet_ids)
        when = self.now if at is None else at
        packet = Packet(packet_id, source, destination, when)
        self._schedule(when - self.now, lambda: self._enqueue(packet))
        return packet_id

    def events(self) -> pd.DataFrame:
        if not self.audit:
            raise SimulationInvariantError("Event log requested from a run without audit")
        return pd.DataFrame(self._log)

    def sensed_power(self, node: int) -> float:
        """N plus the faded power of every active transmitter, from scratch."""
        total = self.config.noise_mw
        for tx in self._active:
            if tx != node:
                total += self.mean_power[tx, node] * self.fading.gain(tx, node)
        return total

    def receiver_state(self, node: int) -> ReceiverState:
        return self._receivers[node]

    def is_busy(self, node: int) -> bool:
        return self._busy(node)

    # -- scheduling helpers ----------------------------------------------
    def _schedule(self, delay: float, action: Callable[[], None]) -> None:
        if delay < -_TIME_EPS:
            raise SimulationInvariantError(f"Event scheduled {-delay:.3e} s in the past at t={self.now:.9f}")
        event = self.env.timeout(max(0.0, delay))
        event.callbacks.append(lambda _event: action())

    def _record(self, event: str, **fields) -> None:
        if self.audit:
            self._log.append({"time": self.now, "event": event, **fields})

    # -- traffic ---------------------------------------------------------
    def _traffic(self, arrivals: Sequence[Arrival]):
        for arrival in arrivals:
            yield self.env.timeout(arrival.time - self.now)
            packet = Packet(next(self._packet_ids), arrival.source, arrival.destination, arrival.time)
            self._enqueue(packet)

    def _enqueue(self, packet: Packet) -> None:
        self._queues[packet.source].append(packet)
        self.ledger.record_generated(packet.generated_at)
        self._record("generated", node=packet.source, packet=packet.packet_id, peer=packet.destination)
        wakeup = self._mac[packet.source].wakeup
        if wakeup is not None and not wakeup.triggered:
            wakeup.succeed()

    # -- MAC -------------------------------------------------------------
    def _busy(self, node: int) -> bool:
        return (
            node in self._active
            or self._receivers[node].mode is not RxMode.IDLE
            or self._mac[node].nav.active(self.now)
            or sense(self._sensed[node], self.config.cs_threshold_mw) is Medium.BUSY
        )

    def _update_medium(self, node: int) -> None:
        mac = self._mac[node]
        busy = self._busy(node)
        if busy == mac.busy:
            return
        mac.busy = busy
        if busy:
            # A countdown expiring at this very instant still transmits.
            if mac.expiry is not None and mac.expiry - self.now > _TIME_EPS:
                mac.process.interrupt("medium-busy")
                mac.expiry = None
        else:
            mac.idle_since = self.now
            if mac.idle_event is not None and not mac.idle_event.triggered:
                mac.idle_event.succeed()

    def _update_all_media(self) -> None:
        for node in range(self.n):
            self._update_medium(node)

    def _countdown(self, node: int, state: BackoffState):
        mac = self._mac[node]
        while True:
            if mac.busy:
                mac.idle_event = self.env.event()
                yield mac.idle_event
                continue
            countdown_start = max(mac.idle_since + self.config.difs_s, self.now)
            expiry = countdown_start + state.remaining * self.config.slot_s
            mac.expiry = expiry
            try:
                yield self.env.timeout(expiry - self.now)
            except simpy.Interrupt:
                slots = idle_slots_elapsed(countdown_start, self.now, self.config.slot_s)
                state = freeze(consume_idle_slots(state, slots))
                continue
            mac.expiry = None
            return consume_idle_slots(state, state.remaining)

    def _mac_process(self, node: int):
        mac = self._mac[node]
        queue = self._queues[node]
        srl = self.config.short_retry_limit
        while True:
            if not queue:
                mac.wakeup = self.env.event()
                yield mac.wakeup
                continue
            packet = queue[0]
            state: Optional[BackoffState] = new_backoff(0, self.config.cw_start, self._backoff_rng, srl)
            while state is not None:
                state = yield from self._countdown(node, state)
                delivered = yield from self._attempt(node, packet)
                if delivered:
                    break
                state = on_attempt_failure(state, srl, self._backoff_rng)
                if state is None:
                    self.ledger.record_drop(packet.generated_at)
                    self._record("dropped", node=node, packet=packet.packet_id)
            queue.popleft()

    # -- decisions -------------------------------------------------------
    def _sinr_now(self, tx: int, rx: int) -> float:
        desired = self.mean_power[tx, rx] * self.fading.gain(tx, rx)
        interference = self._sensed[rx] - self.config.noise_mw
        if tx in self._rx_power:
            interference -= self._rx_power[tx][rx]
        return sinr(desired, [max(0.0, interference)], self.config.noise_mw).value

    def _in_flight_sinr(self, node: int, desired: float) -> float:
        """SINR of a frame already counted in the sensed power of ``node``."""
        noise = self.config.noise_mw
        return sinr(desired, [max(0.0, self._sensed[node] - noise - desired)], noise).value

    def _snapshot(self, source: int, node: int) -> CandidateSnapshot:
        rx = self._receivers[node]
        receiving = rx.mode is not RxMode.IDLE
        hidden = False
        if receiving:
            tx = rx.frame.tx
            heard = self._rx_power[tx][source] if tx in self._rx_power else self.mean_power[tx, source]
            hidden = heard < self.config.cs_threshold_mw
        return CandidateSnapshot(
            node=node,
            transmitting=node in self._active,
            engaged=self._engaged[node] > 0,
            receiving=receiving,
            receiving_hidden=hidden,
            nav_active=self._mac[node].nav.active(self.now),
            sensed_power_mw=float(self._sensed[node]),
        )

    def _decide(self, packet: Packet):
        config = self.config
        s, d = packet.source, packet.destination
        bandwidth = config.bandwidth_hz

        peers = [c for c in self.neighbors[s] if c != d]
        coop = config.protocol is Protocol.COOP_CSI
        txs = [s] + ([s] * len(peers) + peers if coop else [])
        rxs = [d] + (peers + [d] * len(peers) if coop else [])
        self.fading.evolve(txs, rxs, self.now)
        self._refresh_channel()
        self._update_all_media()

        gamma_sd = self._sinr_now(s, d)
        rho_sd = compute_direct_rate(gamma_sd, bandwidth, config.epsilon)
        gate = coop and min_rate_gate(rho_sd, config.min_coop_rate_bps)
        exclusions = {}
        candidates = []
        if gate:
            snapshots = {c: self._snapshot(s, c) for c in peers}
            filtered = filter_candidates(
                peers,
                snapshots,
                config.relay_cs_threshold_mw,
                ignore_sensing=config.genie is GenieMode.ALL_RELAYS_AVAILABLE,
            )
            exclusions = filtered.exclusions
            for c in filtered.candidates:
                rho_sc = compute_direct_rate(self._sinr_now(s, c), bandwidth, config.epsilon)
                if rho_sc <= 0:
                    continue
                candidates.append(
                    evaluate_split(c, rho_sc, gamma_sd, self._sinr_now(c, d), config.payload_bits, bandwidth, config.epsilon)
                )

        decision = decide(
            rho_sd,
            config.payload_bits,
            config.min_rate_bps,
            candidates,
            forced_cooperation=gate and config.genie is GenieMode.FORCED_COOPERATION,
        )
        reason = None if decision.choice is Choice.SPLIT else non_coop_reason(gate, len(candidates))
        self.ledger.record_decision(self.now, decision.choice, reason, exclusions.values())
        self._record(
            "decision",
            node=s,
            packet=packet.packet_id,
            peer=d,
            choice=decision.choice.value,
            relay=decision.relay,
            t_sd=decision.t_sd,
            t_max=decision.t_max,
            t_split_best=min((c.t_split for c in candidates), default=np.inf),
            planned=decision.planned_duration,
            forced=gate and config.genie is GenieMode.FORCED_COOPERATION,
            reason=reason.value if reason else None,
        )
        return decision

    def _attempt(self, node: int, packet: Packet):
        config = self.config
        t0 = self.now
        decision: RateDecision = self._decide(packet)
        if decision.choice is Choice.DEFER:
            return False

        header = config.header_duration_s
        d = packet.destination
        if decision.choice is Choice.DIRECT:
            endpoints = [node, d]
            planned_end = t0 + header + config.payload_bits / decision.rho_sd
            frame = Frame(
                kind=FrameKind.DATA1,
                tx=node,
                rx=d,
                packet_id=packet.packet_id,
                rate_bps=decision.rho_sd,
                start=t0,
                header_bits=config.header_bits,
                payload_bits=config.payload_bits,
                header_duration=header,
                nav_until=planned_end + config.sifs_s + config.ack_duration_s,
                destination=d,
            )
        else:
            chosen = decision.chosen
            relay = chosen.relay
            endpoints = [node, relay, d]
            residual = max(0.0, config.payload_bits - chosen.l1)
            phase_one_end = t0 + header + config.payload_bits / chosen.rho_sc
            planned_end = phase_one_end + (residual / chosen.rho_cd if residual > 0 else 0.0)
            frame = Frame(
                kind=FrameKind.DATA1,
                tx=node,
                rx=relay,
                packet_id=packet.packet_id,
                rate_bps=chosen.rho_sc,
                start=t0,
                header_bits=config.header_bits,
                payload_bits=config.payload_bits,
                header_duration=header,
                nav_until=planned_end + config.sifs_s + config.ack_duration_s,
                relay=relay,
                destination=d,
            )
            self._splits[packet.packet_id] = _SplitContext(
                plan=SplitPlan(packet.packet_id, node, relay, d), rho_cd=chosen.rho_cd, residual_bits=residual
            )

        for endpoint in endpoints:
            self._engaged[endpoint] += 1
        ack = self.env.event()
        self._awaiting_ack[node] = (packet.packet_id, ack)
        self.launch(frame)

        deadline = planned_end + config.sifs_s + config.ack_duration_s + config.slot_s
        result = yield ack | self.env.timeout(deadline - self.now)
        self._awaiting_ack.pop(node, None)
        for endpoint in endpoints:
            self._engaged[endpoint] -= 1

        if ack in result:
            self.ledger.record_delivery(
                self.now, packet.generated_at, config.payload_bits, self.now - t0, decision.choice
            )
            self._record(
                "delivered", node=node, packet=packet.packet_id, bits=config.payload_bits, duration=self.now - t0,
                choice=decision.choice.value,
            )
            return True
        return False

    # -- physical layer --------------------------------------------------
    def _fading_clock(self):
        while True:
            if not self._active:
                self._activity = self.env.event()
                yield self._activity
            yield self.env.timeout(self.config.fading_refresh_s)
            if self._active:
                self._refresh_channel()
                self._update_all_media()

    def _refresh_channel(self) -> None:
        """Evolve active links to now and re-segment every reception trace."""
        noise = self.config.noise_mw
        active = sorted(self._active)
        self._rx_power = {}
        total = np.zeros(self.n)
        if active:
            self.fading.evolve_rows(active, self.now)
            rows = self.mean_power[active] * self.fading.row_gains(active)
            for tx, row in zip(active, rows):
                row[tx] = 0.0
                self._rx_power[tx] = row
            total = rows.sum(axis=0)
        self._sensed = noise + total

        for node, state in enumerate(self._receivers):
            if state.trace is None:
                continue
            tx = state.frame.tx
            if tx in self._rx_power:
                state.trace.advance(self.now, self._in_flight_sinr(node, float(self._rx_power[tx][node])))
            else:
                state.trace.advance(self.now)

    def launch(self, frame: Frame) -> None:
        """Put ``frame`` on the air now; it must be stamped with the current time."""
        self.env.process(self._transmission(frame))

    def _transmission(self, frame: Frame):
        self._start_transmission(frame)
        yield self.env.timeout(frame.header_duration)
        self._header_end(frame)
        if frame.payload_duration > 0:
            yield self.env.timeout(frame.payload_duration)
        self._finish_transmission(frame)

    def _start_transmission(self, frame: Frame) -> None:
        tx = frame.tx
        if tx in self._active:
            raise SimulationInvariantError(f"Node {tx} started a second transmission at t={self.now:.9f}")
        if abs(frame.start - self.now) > _TIME_EPS:
            raise SimulationInvariantError(f"Frame stamped {frame.start} launched at {self.now}")
        # Half duplex: whatever the node was receiving is lost.
        self._receivers[tx] = ReceiverState()
        self._active[tx] = frame
        self.transmissions += 1
        self._refresh_channel()
        for node in range(self.n):
            if node != tx:
                self.begin_reception(node, frame, float(self._rx_power[tx][node]))
        self._update_all_media()
        if self._activity is not None and not self._activity.triggered:
            self._activity.succeed()
        self._record("tx-start", node=tx, packet=frame.packet_id, peer=frame.rx, kind=frame.kind.value,
                     rate=frame.rate_bps, duration=frame.duration)

    def _finish_transmission(self, frame: Frame) -> None:
        del self._active[frame.tx]
        self._refresh_channel()
        for node in range(self.n):
            if self._receivers[node].frame is frame:
                self.end_reception(node, frame)
        self._update_all_media()

        if frame.is_split:
            context = self._splits.get(frame.packet_id)
            if context is not None and not context.plan.relay_decoded:
                context.plan.relay_decoded = False
                self._resolve_split(frame.packet_id)
        elif frame.kind is FrameKind.DATA2:
            self._resolve_split(frame.packet_id)

    def _is_phase_one_destination(self, node: int, frame: Frame) -> bool:
        return frame.is_split and node == frame.destination

    def _note_header_loss(self, frame: Frame, outcome) -> None:
        context = self._splits.get(frame.packet_id)
        if context is not None and context.plan.header_loss is None:
            context.plan.header_loss = outcome

    def begin_reception(self, node: int, frame: Frame, rx_power_mw: float) -> ReceiverState:
        """Try to synchronize ``node`` to ``frame``; otherwise it is interference.

        Phase-two frames carry no header: only the destination that holds the
        session from phase one can lock onto them.
        """
        state = self._receivers[node]
        if frame.kind is FrameKind.DATA2:
            armed = node == frame.rx and frame.packet_id in self._sessions
            if not armed or node in self._active or state.mode is not RxMode.IDLE:
                return state
            new_state = ReceiverState(RxMode.LOCKED, frame, SinrTrace(self.now, self._in_flight_sinr(node, rx_power_mw)))
            self._receivers[node] = new_state
            return new_state

        phase_one_destination = self._is_phase_one_destination(node, frame)
        if rx_power_mw < self.config.detection_threshold_mw:
            if phase_one_destination:
                self._note_header_loss(frame, CoopOutcome.HEADER_LOSS_NO_SYNC_POWER)
            return state
        if node in self._active or state.mode is not RxMode.IDLE:
            if phase_one_destination:
                self._note_header_loss(frame, CoopOutcome.HEADER_LOSS_NO_SYNC_BUSY)
            return state

        new_state = ReceiverState(RxMode.SYNCING, frame, SinrTrace(self.now, self._in_flight_sinr(node, rx_power_mw)))
        self._receivers[node] = new_state
        return new_state

    def _header_end(self, frame: Frame) -> None:
        bandwidth = self.config.bandwidth_hz
        for node in range(self.n):
            state = self._receivers[node]
            if state.frame is not frame or state.mode is not RxMode.SYNCING:
                continue
            state.trace.advance(self.now)
            decoded = state.trace.bits(bandwidth) >= frame.header_bits
            addressee = node == frame.rx or self._is_phase_one_destination(node, frame)
            if not decoded:
                if self._is_phase_one_destination(node, frame):
                    self._note_header_loss(frame, CoopOutcome.HEADER_LOSS_CHANNEL)
                self._receivers[node] = ReceiverState()
                continue
            if addressee:
                self._receivers[node] = ReceiverState(RxMode.LOCKED, frame, SinrTrace(self.now, state.trace.gamma))
                if self._is_phase_one_destination(node, frame):
                    self._sessions[frame.packet_id] = CooperativeSession(
                        packet_id=frame.packet_id,
                        source=frame.tx,
                        relay=frame.relay,
                        destination=node,
                        phase_rates={1: frame.rate_bps},
                    )
            else:
                self._receivers[node] = ReceiverState(RxMode.LOCKED, frame, None)
                if self._mac[node].nav.reserve(frame.nav_until):
                    self._schedule(frame.nav_until - self.now, lambda node=node: self._update_medium(node))
        self._update_all_media()

    def end_reception(self, node: int, frame: Frame) -> bool:
        """Close the reception of ``frame`` at ``node``; True if decoded."""
        state = self._receivers[node]
        if state.mode is not RxMode.LOCKED or state.frame is not frame:
            return False
        self._receivers[node] = ReceiverState()
        trace = state.trace
        if trace is None:
            return False

        if frame.kind is FrameKind.ACK:
            self._ack_received(node, frame.packet_id)
            return True

        bits = trace.bits(self.config.bandwidth_hz)
        if self._is_phase_one_destination(node, frame):
            session = self._sessions.get(frame.packet_id)
            if session is not None:
                session.cache(bits)
                self._record("cached", node=node, packet=frame.packet_id, peer=frame.tx, bits=bits)
            return False

        if frame.kind is FrameKind.DATA2:
            self._phase_two_traces[frame.packet_id] = trace
            return True

        decoded = bits >= frame.payload_bits
        if frame.is_split:
            context = self._splits.get(frame.packet_id)
            if context is not None:
                context.plan.relay_decoded = decoded
                if decoded:
                    self._schedule(0.0, lambda: self._send_phase_two(frame, context))
        elif decoded:
            self._send_ack(node, frame.tx, frame.packet_id)
        return decoded

    def _send_phase_two(self, phase_one: Frame, context: _SplitContext) -> None:
        config = self.config
        relay = phase_one.relay
        if relay in self._active:
            LOGGER.debug("Relay %d busy transmitting, phase two of packet %d lost", relay, phase_one.packet_id)
            self._resolve_split(phase_one.packet_id)
            return
        if context.residual_bits <= 0:
            self._resolve_split(phase_one.packet_id)
            return
        frame = Frame(
            kind=FrameKind.DATA2,
            tx=relay,
            rx=phase_one.destination,
            packet_id=phase_one.packet_id,
            rate_bps=context.rho_cd,
            start=self.now,
            header_bits=0,
            payload_bits=context.residual_bits,
            header_duration=0.0,
            nav_until=phase_one.nav_until,
            relay=relay,
            destination=phase_one.destination,
        )
        self.launch(frame)

    def _resolve_split(self, packet_id: int) -> None:
        context = self._splits.pop(packet_id, None)
        if context is None:
            return
        session = self._sessions.pop(packet_id, None)
        trace = self._phase_two_traces.pop(packet_id, None)
        result = run_phase_two(context.plan, session, trace, self.config.bandwidth_hz, self.config.payload_bits)
        self.ledger.record_coop_outcome(self.now, result.outcome)
        self._record("coop-outcome", node=context.plan.source, packet=packet_id, outcome=result.outcome.value,
                     peer=context.plan.destination, relay=context.plan.relay)
        if result.delivered:
            self._send_ack(context.plan.destination, context.plan.source, packet_id)

    def _send_ack(self, sender: int, receiver: int, packet_id: int) -> None:
        config = self.config

        def start() -> None:
            if sender in self._active:
                LOGGER.debug("Node %d busy at ACK time, ACK for packet %d lost", sender, packet_id)
                return
            self.launch(
                Frame(
                    kind=FrameKind.ACK,
                    tx=sender,
                    rx=receiver,
                    packet_id=packet_id,
                    rate_bps=config.control_rate_bps,
                    start=self.now,
                    header_bits=config.ack_bits,
                    payload_bits=0,
                    header_duration=config.ack_duration_s,
                    nav_until=self.now + config.ack_duration_s,
                )
            )

        self._schedule(config.sifs_s, start)

    def _ack_received(self, node: int, packet_id: int) -> None:
        pending = self._awaiting_ack.get(node)
        if pending is not None and pending[0] == packet_id and not pending[1].triggered:
            pending[1].succeed()