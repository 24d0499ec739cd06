"""Plain CSMA contention: slotted backoff with freezing, threshold sensing,
retry accounting and the network allocation vector."""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

LOGGER = logging.getLogger(__name__)


class RetryExhaustedError(RuntimeError):
    """Raised when a backoff is requested past the short retry limit."""


class Medium(str, Enum):
    BUSY = "busy"
    IDLE = "idle"


@dataclass(frozen=True)
class BackoffState:
    cw_index: int
    remaining: int
    cw_start: int
    frozen: bool = False

    @property
    def contention_window(self) -> int:
        return self.cw_start + self.cw_index


@dataclass
class NavState:
    reserved_until: float = 0.0

    def active(self, now: float) -> bool:
        return now < self.reserved_until

    def reserve(self, until: float) -> bool:
        """Extend the reservation; returns True if it moved forward."""
        if until > self.reserved_until:
            self.reserved_until = until
            return True
        return False


def draw_backoff(
    attempt: int,
    cw_start: int,
    rng: np.random.Generator,
    short_retry_limit: Optional[int] = None,
) -> int:
    """Uniform integer on [0, 2^(cw_start + attempt - 1)], inclusive."""
    if attempt < 0:
        raise ValueError("Attempt index cannot be negative")
    if short_retry_limit is not None and attempt >= short_retry_limit:
        raise RetryExhaustedError(f"Attempt {attempt} exceeds SRL {short_retry_limit}")
    upper = 2 ** (cw_start + attempt - 1)
    return int(rng.integers(0, upper + 1))


def new_backoff(
    attempt: int,
    cw_start: int,
    rng: np.random.Generator,
    short_retry_limit: Optional[int] = None,
) -> BackoffState:
    slots = draw_backoff(attempt, cw_start, rng, short_retry_limit)
    return BackoffState(cw_index=attempt, remaining=slots, cw_start=cw_start)


def sense(aggregate_power_mw: float, threshold_mw: float) -> Medium:
    """Busy iff the sensed power strictly exceeds the threshold."""
    return Medium.BUSY if aggregate_power_mw > threshold_mw else Medium.IDLE


def backoff_step(state: BackoffState, medium: Medium, in_difs_wait: bool) -> Tuple[BackoffState, bool]:
    """Advance the countdown by one slot; returns (state, transmit_granted)."""
    if medium is Medium.BUSY:
        return replace(state, frozen=True), False
    if in_difs_wait:
        return replace(state, frozen=False), False
    if state.remaining == 0:
        return replace(state, frozen=False), True
    remaining = state.remaining - 1
    return replace(state, remaining=remaining, frozen=False), remaining == 0


def idle_slots_elapsed(countdown_start: float, now: float, slot: float) -> int:
    """Whole slots counted down between the end of DIFS and ``now``."""
    if now <= countdown_start:
        return 0
    # Guard float noise on exact slot boundaries.
    return int(math.floor((now - countdown_start) / slot + 1e-9))


def consume_idle_slots(state: BackoffState, slots: int) -> BackoffState:
    """Apply ``slots`` idle, post-DIFS steps of :func:`backoff_step`."""
    for _ in range(min(slots, state.remaining)):
        state, _granted = backoff_step(state, Medium.IDLE, in_difs_wait=False)
    return state


def freeze(state: BackoffState) -> BackoffState:
    return backoff_step(state, Medium.BUSY, in_difs_wait=False)[0]


def on_attempt_failure(
    state: BackoffState,
    short_retry_limit: int,
    rng: np.random.Generator,
) -> Optional[BackoffState]:
    """Register a failed attempt; ``None`` means the packet must be dropped."""
    attempt = state.cw_index + 1
    if attempt >= short_retry_limit:
        LOGGER.debug("Retry limit %s reached, dropping packet", short_retry_limit)
        return None
    return new_backoff(attempt, state.cw_start, rng, short_retry_limit)
