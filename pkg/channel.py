"""Link-level physical model: path loss, Jakes-correlated Rayleigh fading,
SINR and capacity-based information accumulation."""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import j0

LOGGER = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Relative slack when checking that trace segments abut.
_TIME_TOLERANCE = 1e-12


class GeometryError(ValueError):
    """Raised for degenerate node placements (zero distance)."""


class ChannelError(RuntimeError):
    """Raised when channel state is advanced inconsistently."""


@dataclass(frozen=True)
class PathLossLaw:
    tx_power_mw: float
    exponent: float
    reference_loss_db: float = 0.0

    def __post_init__(self) -> None:
        if self.tx_power_mw <= 0:
            raise ValueError("Transmission power must be positive")
        if self.exponent <= 2:
            raise ValueError("Path loss exponent must exceed 2")

    @property
    def effective_power_mw(self) -> float:
        return self.tx_power_mw * 10.0 ** (-self.reference_loss_db / 10.0)


def mean_rx_power(law: PathLossLaw, distance: ArrayLike) -> ArrayLike:
    """Mean received power P * d^-alpha in mW (scalar or array)."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise GeometryError("Two nodes share the same position (distance <= 0)")
    power = law.effective_power_mw * np.power(d, -law.exponent)
    return float(power) if power.ndim == 0 else power


def jakes_correlation(lag: ArrayLike, doppler_hz: float) -> ArrayLike:
    """Autocorrelation J0(2*pi*f_d*tau) of the complex fading gain."""
    tau = np.asarray(lag, dtype=float)
    if np.any(tau < 0) or doppler_hz < 0:
        raise ValueError("Lag and Doppler frequency must be non-negative")
    rho = j0(2.0 * math.pi * doppler_hz * tau)
    return float(rho) if np.ndim(rho) == 0 else rho


@dataclass
class LinkChannel:
    """Time-correlated Rayleigh fading state of one ordered node pair.

    The complex gain h = re + j*im has E|h|^2 = 1, so the power gain
    |h|^2 is exponential with unit mean.
    """

    pair: Tuple[int, int]
    doppler_hz: float
    gain_re: float
    gain_im: float
    last_update: float = 0.0

    @classmethod
    def fresh(
        cls,
        pair: Tuple[int, int],
        doppler_hz: float,
        rng: np.random.Generator,
        start: float = 0.0,
    ) -> "LinkChannel":
        re, im = rng.normal(0.0, math.sqrt(0.5), size=2)
        return cls(pair=pair, doppler_hz=doppler_hz, gain_re=float(re), gain_im=float(im), last_update=start)

    @property
    def fading_gain(self) -> float:
        return self.gain_re * self.gain_re + self.gain_im * self.gain_im


def evolve_fading(channel: LinkChannel, t_new: float, rng: np.random.Generator) -> LinkChannel:
    """Advance the fading gain to ``t_new`` with a Gauss-Markov update.

    Each quadrature component follows new = rho*old + sqrt(1 - rho^2)*w with
    rho = J0(2*pi*f_d*(t_new - t)), which keeps the marginal exact.
    """
    if t_new < channel.last_update:
        raise ChannelError(
            f"Channel {channel.pair} asked to move back in time "
            f"({t_new:.9f} < {channel.last_update:.9f})"
        )
    lag = t_new - channel.last_update
    if lag == 0.0:
        return channel

    rho = jakes_correlation(lag, channel.doppler_hz)
    spread = math.sqrt(max(0.0, 1.0 - rho * rho)) * math.sqrt(0.5)
    w_re, w_im = rng.normal(0.0, 1.0, size=2)
    channel.gain_re = rho * channel.gain_re + spread * float(w_re)
    channel.gain_im = rho * channel.gain_im + spread * float(w_im)
    channel.last_update = t_new
    return channel


@dataclass(frozen=True)
class SinrSample:
    desired: float
    interference: float
    noise: float

    def __post_init__(self) -> None:
        if self.noise <= 0:
            raise ValueError("Noise power must be positive")
        if self.desired < 0 or self.interference < 0:
            raise ValueError("Received powers cannot be negative")

    @property
    def value(self) -> float:
        return self.desired / (self.noise + self.interference)


def sinr(desired: float, interferers: Iterable[float], noise: float) -> SinrSample:
    return SinrSample(desired=desired, interference=float(sum(interferers)), noise=noise)


def instantaneous_capacity(gamma: ArrayLike, bandwidth: float) -> ArrayLike:
    """Shannon capacity B*log2(1 + gamma) in bit/s."""
    capacity = bandwidth * np.log2(1.0 + np.asarray(gamma, dtype=float))
    return float(capacity) if np.ndim(capacity) == 0 else capacity


class SinrSegment(NamedTuple):
    start: float
    end: float
    gamma: float

    @property
    def duration(self) -> float:
        return self.end - self.start


def decoded_bits(
    segments: Sequence[SinrSegment],
    bandwidth: float,
    start: Optional[float] = None,
    end: Optional[float] = None,
) -> float:
    """Information bits accumulated over a piecewise-constant SINR trace.

    Segments must be contiguous and, when ``start``/``end`` are given, cover
    that interval exactly.
    """
    if not segments:
        if start is not None and end is not None and end > start:
            raise ChannelError("Empty SINR trace for a non-empty interval")
        return 0.0

    span = max(abs(segments[-1].end), 1.0)
    tol = _TIME_TOLERANCE * span
    if start is not None and abs(segments[0].start - start) > tol:
        raise ChannelError(f"Trace starts at {segments[0].start}, expected {start}")
    if end is not None and abs(segments[-1].end - end) > tol:
        raise ChannelError(f"Trace ends at {segments[-1].end}, expected {end}")

    total = 0.0
    previous_end = segments[0].start
    for segment in segments:
        if abs(segment.start - previous_end) > tol:
            raise ChannelError(f"Gap in SINR trace between {previous_end} and {segment.start}")
        if segment.end < segment.start or segment.gamma < 0:
            raise ChannelError(f"Malformed trace segment {segment}")
        total += segment.duration * instantaneous_capacity(segment.gamma, bandwidth)
        previous_end = segment.end
    return total


@dataclass
class SinrTrace:
    """Incrementally built trace for one reception in progress."""

    start: float
    gamma: float
    segments: List[SinrSegment] = field(default_factory=list)
    _cursor: float = field(init=False)

    def __post_init__(self) -> None:
        self._cursor = self.start

    def advance(self, now: float, gamma: Optional[float] = None) -> None:
        """Close the running segment at ``now``; optionally switch SINR."""
        if now < self._cursor:
            raise ChannelError(f"Trace advanced backwards to {now} from {self._cursor}")
        if now > self._cursor:
            self.segments.append(SinrSegment(self._cursor, now, self.gamma))
            self._cursor = now
        if gamma is not None:
            self.gamma = gamma

    @property
    def end(self) -> float:
        return self._cursor

    def bits(self, bandwidth: float) -> float:
        return decoded_bits(self.segments, bandwidth, start=self.start, end=self._cursor)


class FadingField:
    """Fading state of every ordered pair among ``n`` nodes.

    Same Gauss-Markov update as :func:`evolve_fading`, applied to many links
    per call. A pair gets a fresh draw the first time it is touched.
    """

    def __init__(self, n: int, doppler_hz: float, rng: np.random.Generator) -> None:
        self.doppler_hz = doppler_hz
        self._rng = rng
        self._re = np.zeros((n, n))
        self._im = np.zeros((n, n))
        self._last = np.zeros((n, n))
        self._ready = np.zeros((n, n), dtype=bool)

    def evolve(self, tx: Sequence[int], rx: Sequence[int], t_new: float) -> None:
        n = self._re.shape[0]
        codes = np.unique(np.asarray(tx, dtype=np.int64) * n + np.asarray(rx, dtype=np.int64))
        if codes.size == 0:
            return
        tx_idx, rx_idx = np.divmod(codes, n)
        ready = self._ready[tx_idx, rx_idx]
        lag = t_new - self._last[tx_idx, rx_idx]
        if np.any(ready & (lag < 0)):
            raise ChannelError(f"Fading field asked to move back in time to {t_new:.9f}")

        rho = np.where(ready, jakes_correlation(np.maximum(lag, 0.0), self.doppler_hz), 0.0)
        spread = np.sqrt(np.maximum(0.0, 1.0 - rho * rho)) * math.sqrt(0.5)
        w = self._rng.normal(0.0, 1.0, size=(2, codes.size))
        self._re[tx_idx, rx_idx] = rho * self._re[tx_idx, rx_idx] + spread * w[0]
        self._im[tx_idx, rx_idx] = rho * self._im[tx_idx, rx_idx] + spread * w[1]
        self._last[tx_idx, rx_idx] = t_new
        self._ready[tx_idx, rx_idx] = True

    def evolve_rows(self, rows: Sequence[int], t_new: float) -> None:
        n = self._re.shape[0]
        rows = np.asarray(rows, dtype=np.int64)
        self.evolve(np.repeat(rows, n), np.tile(np.arange(n), rows.size), t_new)

    def gain(self, tx, rx) -> ArrayLike:
        g = np.square(self._re[tx, rx]) + np.square(self._im[tx, rx])
        return float(g) if np.ndim(g) == 0 else g

    def row_gains(self, rows: Sequence[int]) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        return np.square(self._re[rows]) + np.square(self._im[rows])

    def set_gain(self, tx: int, rx: int, gain: float, at: float = 0.0) -> None:
        """Pin one link to a given power gain. With zero Doppler it stays there."""
        if gain < 0:
            raise ChannelError(f"Negative fading gain {gain}")
        self._re[tx, rx] = math.sqrt(gain)
        self._im[tx, rx] = 0.0
        self._last[tx, rx] = at
        self._ready[tx, rx] = True
