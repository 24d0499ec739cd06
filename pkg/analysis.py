"""Closed-form and Monte Carlo evaluation of proactive cooperation in a
four-node scene (source, destination, relay, interferer).

Powers are linear mW throughout; rates are bit/s.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from channel import GeometryError, PathLossLaw, instantaneous_capacity, mean_rx_power
from config import RUN_SETTINGS, ConfigurationError, ScenarioConfig

LOGGER = logging.getLogger(__name__)

Point = Tuple[float, float]
SeedLike = Union[int, np.random.SeedSequence]

EULER_GAMMA = 0.5772156649015329
MIN_MC_SAMPLES = 100_000

_E1_TOLERANCE = 1e-15
_E1_MAX_ITERATIONS = 1000
_FPMIN = 1e-300
# Floor applied to sampled relay/interferer distances; the sampled positions
# are continuous so exact coincidences only arise on hand-placed grids.
_MIN_DISTANCE_M = 0.1


class AnalysisError(RuntimeError):
    """Raised when a numerical evaluation cannot be completed."""


# ----------------------------------------------------------------------
# Exponential integral
# ----------------------------------------------------------------------
def scaled_exp1(x: float) -> float:
    """e^x * E1(x) for x > 0.

    Power series below 1, modified Lentz continued fraction from 1 upwards.
    """
    if x <= 0:
        raise AnalysisError(f"E1 is only defined here for x > 0, got {x}")

    if x < 1.0:
        total = -EULER_GAMMA - math.log(x)
        term = 1.0
        for k in range(1, _E1_MAX_ITERATIONS):
            term *= -x / k
            delta = -term / k
            total += delta
            if abs(delta) < abs(total) * _E1_TOLERANCE:
                return math.exp(x) * total
        raise AnalysisError(f"E1 series did not converge for x={x}")

    b = x + 1.0
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _E1_MAX_ITERATIONS):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        step = c * d
        h *= step
        if abs(step - 1.0) < _E1_TOLERANCE:
            return h
    raise AnalysisError(f"E1 continued fraction did not converge for x={x}")


def exp1(x: float) -> float:
    return math.exp(-x) * scaled_exp1(x)


def g_function(a: float, bandwidth: float = 1.0) -> float:
    """(B / ln 2) * e^(-a) * E1(-a): mean capacity of a Rayleigh link whose
    mean SNR is -1/a."""
    if a >= 0:
        raise AnalysisError(f"g_function requires a < 0, got {a}")
    return bandwidth / math.log(2.0) * scaled_exp1(-a)


# ----------------------------------------------------------------------
# Geometry
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Region:
    x_min: float = -150.0
    x_max: float = 200.0
    y_min: float = -200.0
    y_max: float = 200.0

    def __post_init__(self) -> None:
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("Region must have positive extent")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def contains(self, point: Point) -> bool:
        x, y = point
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def corners(self) -> np.ndarray:
        return np.array(
            [
                [self.x_min, self.y_min],
                [self.x_min, self.y_max],
                [self.x_max, self.y_min],
                [self.x_max, self.y_max],
            ]
        )

    def cell_centers(self, step: float) -> Tuple[np.ndarray, np.ndarray]:
        nx = int(round((self.x_max - self.x_min) / step))
        ny = int(round((self.y_max - self.y_min) / step))
        xs = self.x_min + (np.arange(nx) + 0.5) * step
        ys = self.y_min + (np.arange(ny) + 0.5) * step
        return xs, ys

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        xs = rng.uniform(self.x_min, self.x_max, size=n)
        ys = rng.uniform(self.y_min, self.y_max, size=n)
        return np.column_stack([xs, ys])


DEFAULT_REGION = Region()


def _distance(a: Union[Point, np.ndarray], b: Union[Point, np.ndarray]) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a - b
    return np.hypot(diff[..., 0], diff[..., 1])


@dataclass(frozen=True)
class AnalyticScene:
    p_s: Point
    p_d: Point
    law: PathLossLaw
    noise_mw: float
    bandwidth_hz: float
    cs_threshold_mw: float
    sigma2_mw: float = 0.0
    p_c: Optional[Point] = None
    p_i: Optional[Point] = None
    region: Region = DEFAULT_REGION
    payload_bits: float = 5000.0

    def __post_init__(self) -> None:
        if not (self.region.contains(self.p_s) and self.region.contains(self.p_d)):
            raise GeometryError("Source and destination must lie inside the region")
        placed = [p for p in (self.p_s, self.p_d, self.p_c, self.p_i) if p is not None]
        for i, first in enumerate(placed):
            for second in placed[i + 1 :]:
                if float(_distance(first, second)) <= 0:
                    raise GeometryError(f"Coincident nodes at {first}")
        if self.sigma2_mw < 0 or self.noise_mw <= 0:
            raise ValueError("Noise must be positive and interference non-negative")

    @classmethod
    def from_config(
        cls,
        config: ScenarioConfig,
        delta_sd: float,
        sigma2_mw: float = 0.0,
        relay: Optional[Point] = None,
        region: Region = DEFAULT_REGION,
    ) -> "AnalyticScene":
        """Source at the origin, destination on the x axis; ``relay`` defaults
        to the midpoint."""
        p_d = (float(delta_sd), 0.0)
        return cls(
            p_s=(0.0, 0.0),
            p_d=p_d,
            p_c=relay if relay is not None else (delta_sd / 2.0, 0.0),
            law=config.path_loss_law(),
            noise_mw=config.noise_mw,
            bandwidth_hz=config.bandwidth_hz,
            cs_threshold_mw=config.cs_threshold_mw,
            sigma2_mw=sigma2_mw,
            region=region,
            payload_bits=config.payload_bits,
        )

    def mean_power(self, a: Point, b: Point) -> float:
        return mean_rx_power(self.law, float(_distance(a, b)))


class ChannelVector(NamedTuple):
    """Samples of (eta_sd, eta_sc, eta_cd, iota_c, iota_d), any shape."""

    eta_sd: np.ndarray
    eta_sc: np.ndarray
    eta_cd: np.ndarray
    iota_c: np.ndarray
    iota_d: np.ndarray


class Capacities(NamedTuple):
    sd: np.ndarray
    sc: np.ndarray
    cd: np.ndarray


class MonteCarloEstimate(NamedTuple):
    value: float
    stderr: float


class CoopEstimate(NamedTuple):
    value: float
    stderr: float
    direct: float
    direct_stderr: float
    split_fraction: float


class BiasedComparison(NamedTuple):
    gain_uniform: float
    gain_csma: float
    lost_coop_fraction: float
    duration_ratio: float
    gain_efficiency: float


def capacities(v: ChannelVector, noise_mw: float, bandwidth: float) -> Capacities:
    return Capacities(
        sd=instantaneous_capacity(v.eta_sd / (noise_mw + v.iota_d), bandwidth),
        sc=instantaneous_capacity(v.eta_sc / (noise_mw + v.iota_c), bandwidth),
        cd=instantaneous_capacity(v.eta_cd / (noise_mw + v.iota_d), bandwidth),
    )


def split_region(caps: Capacities) -> np.ndarray:
    """Mask of Delta_split; its complement is Delta_direct."""
    return (caps.sc >= caps.sd) & (caps.cd >= caps.sd)


def t_split_closed(c_sc, c_cd, c_sd, payload_bits: float):
    """L * (C_sc + C_cd - C_sd) / (C_sc * C_cd); +inf when a hop is dead."""
    c_sc = np.asarray(c_sc, dtype=float)
    c_cd = np.asarray(c_cd, dtype=float)
    c_sd = np.asarray(c_sd, dtype=float)
    denominator = c_sc * c_cd
    with np.errstate(divide="ignore", invalid="ignore"):
        duration = np.where(
            (c_sc > 0) & (c_cd > 0),
            payload_bits * (c_sc + c_cd - c_sd) / np.where(denominator > 0, denominator, 1.0),
            np.inf,
        )
    return float(duration) if duration.ndim == 0 else duration


def _split_rate(caps: Capacities) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        denominator = caps.sc + caps.cd - caps.sd
        rate = np.where(denominator > 0, caps.sc * caps.cd / np.where(denominator > 0, denominator, 1.0), 0.0)
    return rate


# ----------------------------------------------------------------------
# Throughput of the direct and cooperative strategies
# ----------------------------------------------------------------------
def tau_direct(scene: AnalyticScene) -> float:
    """Mean capacity of the S-D link over fading and exponential interference."""
    mean = scene.mean_power(scene.p_s, scene.p_d)
    sigma2 = scene.sigma2_mw
    noise = scene.noise_mw
    bandwidth = scene.bandwidth_hz

    if sigma2 == 0:
        return g_function(-noise / mean, bandwidth)

    def closed_form(m: float, s: float) -> float:
        return m / (m - s) * (g_function(-noise / m, bandwidth) - g_function(-noise / s, bandwidth))

    if abs(mean - sigma2) <= 1e-9 * max(mean, sigma2):
        # Removable singularity at m == s.
        delta = 1e-6 * mean
        return 0.5 * (closed_form(mean + delta, sigma2) + closed_form(mean - delta, sigma2))
    return closed_form(mean, sigma2)


def _batch_generators(seed: SeedLike, n_samples: int, batch_size: int) -> Iterator[Tuple[np.random.Generator, int]]:
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    n_batches = max(1, math.ceil(n_samples / batch_size))
    for index, child in enumerate(sequence.spawn(n_batches)):
        size = min(batch_size, n_samples - index * batch_size)
        yield np.random.Generator(np.random.PCG64(child)), size


def tau_coop(
    scene: AnalyticScene,
    n_samples: int = 1_000_000,
    seed: SeedLike = 0,
    batch_size: Optional[int] = None,
) -> CoopEstimate:
    """Monte Carlo estimate of the cooperative throughput.

    Interference at relay and destination is i.i.d. exponential with mean
    sigma^2; the direct-link average over the same samples is returned too.
    """
    if n_samples < MIN_MC_SAMPLES:
        raise AnalysisError(f"tau_coop needs at least {MIN_MC_SAMPLES} samples")
    if scene.p_c is None:
        raise AnalysisError("tau_coop needs a relay position")
    batch_size = batch_size or RUN_SETTINGS.mc_batch_size

    m_sd = scene.mean_power(scene.p_s, scene.p_d)
    m_sc = scene.mean_power(scene.p_s, scene.p_c)
    m_cd = scene.mean_power(scene.p_c, scene.p_d)

    coop_sum = coop_sq = direct_sum = direct_sq = 0.0
    split_count = 0
    for rng, size in _batch_generators(seed, n_samples, batch_size):
        draws = rng.standard_exponential(size=(5, size))
        v = ChannelVector(
            eta_sd=m_sd * draws[0],
            eta_sc=m_sc * draws[1],
            eta_cd=m_cd * draws[2],
            iota_c=scene.sigma2_mw * draws[3],
            iota_d=scene.sigma2_mw * draws[4],
        )
        caps = capacities(v, scene.noise_mw, scene.bandwidth_hz)
        mask = split_region(caps)
        rate = np.where(mask, _split_rate(caps), caps.sd)
        coop_sum += rate.sum()
        coop_sq += np.square(rate).sum()
        direct_sum += caps.sd.sum()
        direct_sq += np.square(caps.sd).sum()
        split_count += int(mask.sum())

    coop = _mean_and_stderr(coop_sum, coop_sq, n_samples)
    direct = _mean_and_stderr(direct_sum, direct_sq, n_samples)
    return CoopEstimate(coop.value, coop.stderr, direct.value, direct.stderr, split_count / n_samples)


def _mean_and_stderr(total: float, total_sq: float, n: int) -> MonteCarloEstimate:
    mean = total / n
    variance = max(0.0, (total_sq / n - mean * mean) * n / max(n - 1, 1))
    return MonteCarloEstimate(mean, math.sqrt(variance / n))


# ----------------------------------------------------------------------
# Carrier-sense bias
# ----------------------------------------------------------------------
def _check_thresholds(cs_threshold_mw: float, noise_mw: float) -> None:
    if cs_threshold_mw <= noise_mw:
        raise ConfigurationError("Carrier sensing is impossible with a threshold at or below the noise floor")


def _idle_from_distance(distance, law: PathLossLaw, cs_threshold_mw: float, noise_mw: float) -> np.ndarray:
    # Limit d -> 0 is 0; keep it finite on hand-placed grids.
    d = np.asarray(distance, dtype=float)
    safe = np.where(d > 0, d, 1.0)
    mean = law.effective_power_mw * np.power(safe, -law.exponent)
    return np.where(d > 0, -np.expm1(-(cs_threshold_mw - noise_mw) / mean), 0.0)


def idle_probability(
    p_s: Union[Point, np.ndarray],
    p_i: Union[Point, np.ndarray],
    law: PathLossLaw,
    cs_threshold_mw: float,
    noise_mw: float,
):
    """Probability that a node at ``p_i`` senses idle while ``p_s`` transmits."""
    _check_thresholds(cs_threshold_mw, noise_mw)
    mean = mean_rx_power(law, _distance(p_s, p_i))
    probability = -np.expm1(-(cs_threshold_mw - noise_mw) / np.asarray(mean))
    return float(probability) if np.ndim(probability) == 0 else probability


class FieldGrid(NamedTuple):
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # shape (len(ys), len(xs))
    stderr: Optional[np.ndarray] = None

    def to_frame(self) -> pd.DataFrame:
        gx, gy = np.meshgrid(self.xs, self.ys)
        frame = pd.DataFrame({"x": gx.ravel(), "y": gy.ravel(), "value": self.values.ravel()})
        frame["stderr"] = self.stderr.ravel() if self.stderr is not None else np.nan
        return frame


def _idle_quadrature(
    scene: AnalyticScene,
    relays: np.ndarray,
    step: float,
) -> np.ndarray:
    xs, ys = scene.region.cell_centers(step)
    gx, gy = np.meshgrid(xs, ys)
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    weights = _idle_from_distance(_distance(cells, scene.p_s), scene.law, scene.cs_threshold_mw, scene.noise_mw)
    normalizer = weights.sum()
    if normalizer <= 0:
        raise AnalysisError("No interferer position in the region can access the channel")
    values = np.empty(len(relays))
    for index, relay in enumerate(relays):
        idle = _idle_from_distance(_distance(cells, relay), scene.law, scene.cs_threshold_mw, scene.noise_mw)
        values[index] = float(np.dot(idle, weights) / normalizer)
    return values


def relay_idle_field(
    scene: AnalyticScene,
    xs: Sequence[float],
    ys: Sequence[float],
    step: float = 0.5,
    tolerance: float = 0.005,
    check: Optional[bool] = None,
) -> FieldGrid:
    """Probability M that a relay at each grid point senses idle, averaged
    over a single carrier-sense-biased interferer."""
    _check_thresholds(scene.cs_threshold_mw, scene.noise_mw)
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    gx, gy = np.meshgrid(xs, ys)
    relays = np.column_stack([gx.ravel(), gy.ravel()])
    values = _idle_quadrature(scene, relays, step).reshape(len(ys), len(xs))

    if RUN_SETTINGS.quadrature_check if check is None else check:
        residual = quadrature_residual(scene, step)
        if residual > tolerance:
            raise AnalysisError(
                f"Quadrature did not converge at step {step} m: relative change {residual:.3e} under halving"
            )
        if residual > 0.5 * tolerance:
            LOGGER.warning("Quadrature residual %.3e is close to the tolerance %.3e", residual, tolerance)
    return FieldGrid(xs, ys, values)


def quadrature_residual(scene: AnalyticScene, step: float) -> float:
    """Largest relative change of M at the source, the midpoint and the destination when the step halves."""
    checkpoints = np.array(
        [
            scene.p_s,
            ((scene.p_s[0] + scene.p_d[0]) / 2.0, (scene.p_s[1] + scene.p_d[1]) / 2.0),
            scene.p_d,
        ],
        dtype=float,
    )
    coarse = _idle_quadrature(scene, checkpoints, step)
    fine = _idle_quadrature(scene, checkpoints, step / 2.0)
    return float(np.max(np.abs(coarse - fine) / np.maximum(np.abs(fine), 1e-300)))


def sample_interferer_pool(
    n: int,
    scene: AnalyticScene,
    rng: np.random.Generator,
    max_draws: Optional[int] = None,
) -> np.ndarray:
    """``n`` positions with density proportional to F(p_s, .) over the region."""
    peak = float(np.max(_idle_from_distance(_distance(scene.region.corners(), scene.p_s), scene.law,
                                            scene.cs_threshold_mw, scene.noise_mw)))
    if peak <= 0:
        raise AnalysisError("No interferer position in the region can access the channel")
    max_draws = max_draws or 1000 * n
    accepted: List[np.ndarray] = []
    collected = drawn = 0
    while collected < n:
        if drawn >= max_draws:
            raise AnalysisError(f"Interferer sampling starved after {drawn} draws ({collected}/{n} accepted)")
        batch = max(1024, 2 * (n - collected))
        points = scene.region.sample_uniform(batch, rng)
        accept = rng.uniform(size=batch) * peak < _idle_from_distance(
            _distance(points, scene.p_s), scene.law, scene.cs_threshold_mw, scene.noise_mw
        )
        accepted.append(points[accept])
        collected += int(accept.sum())
        drawn += batch
    return np.concatenate(accepted)[:n]


def relay_gain_field(
    scene: AnalyticScene,
    xs: Sequence[float],
    ys: Sequence[float],
    n_samples: int = MIN_MC_SAMPLES,
    seed: SeedLike = 0,
) -> FieldGrid:
    """Probability R that a relay at each grid point falls in Delta_split.

    One pool of biased interferer positions (mirrored about the x axis) and
    one set of unit exponential draws are shared by every grid point.
    """
    if n_samples < MIN_MC_SAMPLES:
        raise AnalysisError(f"relay_gain_field needs at least {MIN_MC_SAMPLES} samples per point")
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    pool_rng, draw_rng = (np.random.Generator(np.random.PCG64(s)) for s in sequence.spawn(2))

    half = sample_interferer_pool((n_samples + 1) // 2, scene, pool_rng)
    axis_y = scene.p_s[1]
    pool = np.concatenate([half, np.column_stack([half[:, 0], 2 * axis_y - half[:, 1]])])[:n_samples]
    # Mirrored positions reuse their twin's draws.
    half_draws = draw_rng.standard_exponential(size=(5, len(half)))
    draws = np.concatenate([half_draws, half_draws], axis=1)[:, : len(pool)]

    law = scene.law
    m_sd = scene.mean_power(scene.p_s, scene.p_d)
    m_id = _safe_mean(law, _distance(pool, scene.p_d))
    eta_sd = m_sd * draws[0]
    iota_d = m_id * draws[4]

    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    values = np.empty((len(ys), len(xs)))
    for row, y in enumerate(ys):
        for col, x in enumerate(xs):
            relay = (x, y)
            v = ChannelVector(
                eta_sd=eta_sd,
                eta_sc=_safe_mean(law, _distance(scene.p_s, relay)) * draws[1],
                eta_cd=_safe_mean(law, _distance(relay, scene.p_d)) * draws[2],
                iota_c=_safe_mean(law, _distance(pool, relay)) * draws[3],
                iota_d=iota_d,
            )
            values[row, col] = split_region(capacities(v, scene.noise_mw, scene.bandwidth_hz)).mean()
    stderr = np.sqrt(values * (1.0 - values) / len(pool))
    return FieldGrid(xs, ys, values, stderr)


def _safe_mean(law: PathLossLaw, distance) -> np.ndarray:
    return law.effective_power_mw * np.power(np.maximum(distance, _MIN_DISTANCE_M), -law.exponent)


def sample_csma_interferers(
    k: int,
    p_s: Point,
    region: Region,
    law: PathLossLaw,
    cs_threshold_mw: float,
    noise_mw: float,
    rng: np.random.Generator,
    max_draws: int = 200_000,
    batch: int = 1024,
) -> np.ndarray:
    """Place ``k`` interferers one at a time, each accepted with probability
    F(p_s, p_j) * prod_m F(p_m, p_j) over the previously placed ones."""
    if k < 1:
        raise ValueError("Need at least one interferer")
    _check_thresholds(cs_threshold_mw, noise_mw)
    placed: List[np.ndarray] = []
    for j in range(k):
        drawn = 0
        while True:
            if drawn >= max_draws:
                raise AnalysisError(
                    f"Could not place interferer {j + 1}/{k} after {drawn} draws; region too small"
                )
            points = region.sample_uniform(batch, rng)
            accept_probability = _idle_from_distance(_distance(points, p_s), law, cs_threshold_mw, noise_mw)
            for other in placed:
                accept_probability = accept_probability * _idle_from_distance(
                    _distance(points, other), law, cs_threshold_mw, noise_mw
                )
            hits = np.flatnonzero(rng.uniform(size=batch) < accept_probability)
            drawn += batch
            if hits.size:
                placed.append(points[hits[0]])
                break
    return np.array(placed)


def availability_profile(
    scene: AnalyticScene,
    k: int,
    deltas: Sequence[float],
    n_configs: int = 5000,
    n_fading: int = 64,
    seed: SeedLike = 0,
) -> pd.DataFrame:
    """M(delta_sc) / M(0) for a relay on the S-D line with ``k`` active
    carrier-sense-bound interferers.

    The relay is idle when the summed faded interference stays below
    Lambda - N.
    """
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    place_rng, fade_rng = (np.random.Generator(np.random.PCG64(s)) for s in sequence.spawn(2))
    direction = np.asarray(scene.p_d, dtype=float) - np.asarray(scene.p_s, dtype=float)
    direction /= np.hypot(*direction)
    deltas = np.asarray(deltas, dtype=float)
    relays = np.asarray(scene.p_s, dtype=float) + np.outer(deltas, direction)
    margin = scene.cs_threshold_mw - scene.noise_mw

    per_config = np.empty((n_configs, len(deltas)))
    for index in range(n_configs):
        interferers = sample_csma_interferers(
            k, scene.p_s, scene.region, scene.law, scene.cs_threshold_mw, scene.noise_mw, place_rng
        )
        fades = fade_rng.standard_exponential(size=(n_fading, k))
        # means: (len(deltas), k)
        means = _safe_mean(scene.law, _distance(relays[:, None, :], interferers[None, :, :]))
        sensed = fades @ means.T  # (n_fading, len(deltas))
        per_config[index] = (sensed < margin).mean(axis=0)

    availability = per_config.mean(axis=0)
    if availability[0] <= 0:
        raise AnalysisError("Relay at the source never senses the medium idle")
    ratio = availability / availability[0]
    # Delta-method standard error of a ratio of means.
    centered = per_config - availability
    var_num = centered.var(axis=0, ddof=1)
    var_den = centered[:, 0].var(ddof=1)
    cov = (centered * centered[:, [0]]).sum(axis=0) / max(n_configs - 1, 1)
    variance = (var_num + ratio**2 * var_den - 2 * ratio * cov) / (availability[0] ** 2 * n_configs)
    return pd.DataFrame(
        {
            "k": k,
            "delta_sc": deltas,
            "value": ratio,
            "stderr": np.sqrt(np.maximum(variance, 0.0)),
        }
    )


def biased_gain_comparison(
    delta_sd: float,
    config: ScenarioConfig,
    region: Region = DEFAULT_REGION,
    n_trials: int = MIN_MC_SAMPLES,
    seed: SeedLike = 0,
) -> BiasedComparison:
    """Cooperation with a uniformly placed relay under carrier-sense-biased
    interference versus i.i.d. interference at D.

    Every trial picks T* = min(T_sd, T_split, T_max) and defers at T_max,
    so gains are measured against direct transmission at rates of at least
    rho_min. The i.i.d. interference power is the log-domain mean of the
    biased one at D, which keeps interferers sitting on D from setting it.

    ``lost_coop_fraction`` is the share of worthwhile splits whose relay
    senses the medium busy. ``duration_ratio`` compares, under the same
    biased interference, the mean duration with an always available relay
    to the one carrier sense allows. ``gain_efficiency`` is the share of the
    i.i.d. cooperative gain that survives carrier sense.
    """
    scene = AnalyticScene.from_config(config, delta_sd, region=region)
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    pool_rng, relay_rng, draw_rng = (np.random.Generator(np.random.PCG64(s)) for s in sequence.spawn(3))

    interferers = sample_interferer_pool(n_trials, scene, pool_rng)
    relays = region.sample_uniform(n_trials, relay_rng)
    draws = draw_rng.standard_exponential(size=(5, n_trials))
    law = scene.law
    payload = scene.payload_bits
    t_max = payload / config.min_rate_bps

    eta_sd = scene.mean_power(scene.p_s, scene.p_d) * draws[0]
    eta_sc = _safe_mean(law, _distance(relays, scene.p_s)) * draws[1]
    eta_cd = _safe_mean(law, _distance(relays, scene.p_d)) * draws[2]
    m_ic = _safe_mean(law, _distance(interferers, relays))
    m_id = _safe_mean(law, _distance(interferers, scene.p_d))
    sigma2 = float(np.exp(np.log(m_id).mean()))

    def evaluate(iota_c: np.ndarray, iota_d: np.ndarray, available: np.ndarray):
        caps = capacities(ChannelVector(eta_sd, eta_sc, eta_cd, iota_c, iota_d), scene.noise_mw, scene.bandwidth_hz)
        with np.errstate(divide="ignore"):
            t_sd = payload / caps.sd
        t_split = t_split_closed(caps.sc, caps.cd, caps.sd, payload)
        wanted = split_region(caps) & (t_split < t_sd) & (t_split <= t_max)
        duration = np.where(wanted & available, t_split, t_sd)
        served = duration <= t_max
        rate = np.where(served, payload / duration, 0.0)
        baseline = np.where(t_sd <= t_max, caps.sd, 0.0)
        return rate.mean() / baseline.mean(), wanted, duration, served

    iota_c_csma = m_ic * draws[3]
    iota_d_csma = m_id * draws[4]
    csma_available = iota_c_csma < scene.cs_threshold_mw - scene.noise_mw
    everywhere = np.ones(n_trials, dtype=bool)
    gain_csma, wanted, duration_csma, served_csma = evaluate(iota_c_csma, iota_d_csma, csma_available)
    _, _, duration_free, _ = evaluate(iota_c_csma, iota_d_csma, everywhere)
    gain_uniform, _, _, _ = evaluate(sigma2 * draws[3], sigma2 * draws[4], everywhere)

    lost = float((wanted & ~csma_available).sum() / wanted.sum()) if wanted.any() else math.nan
    compared = wanted & served_csma
    duration_ratio = (
        float(duration_free[compared].mean() / duration_csma[compared].mean()) if compared.any() else math.nan
    )
    efficiency = (gain_csma - 1.0) / (gain_uniform - 1.0) if gain_uniform > 1.0 else math.nan
    return BiasedComparison(
        gain_uniform=float(gain_uniform),
        gain_csma=float(gain_csma),
        lost_coop_fraction=lost,
        duration_ratio=duration_ratio,
        gain_efficiency=float(efficiency),
    )


# ----------------------------------------------------------------------
# Tables for the analyze command
# ----------------------------------------------------------------------
def coop_gain_grid(
    config: ScenarioConfig,
    sigma2_values_mw: Sequence[float],
    delta_values_m: Sequence[float],
    n_samples: int = 1_000_000,
    seed: int = 0,
) -> pd.DataFrame:
    """tau_coop / tau_direct with the relay at the midpoint."""
    rows = []
    for delta in delta_values_m:
        for sigma2 in sigma2_values_mw:
            scene = AnalyticScene.from_config(config, delta, sigma2_mw=sigma2)
            direct = tau_direct(scene)
            coop = tau_coop(scene, n_samples=n_samples, seed=seed)
            rows.append(
                {
                    "sigma2_mw": sigma2,
                    "delta_sd": delta,
                    "value": coop.value / direct,
                    "stderr": coop.stderr / direct,
                }
            )
        LOGGER.info("Coop gain row delta_sd=%.1f m done", delta)
    return pd.DataFrame(rows)


def biased_gain_sweep(
    config: ScenarioConfig,
    delta_values_m: Sequence[float],
    n_trials: int = MIN_MC_SAMPLES,
    seed: int = 0,
    region: Region = DEFAULT_REGION,
) -> pd.DataFrame:
    rows = []
    for delta in delta_values_m:
        result = biased_gain_comparison(delta, config, region=region, n_trials=n_trials, seed=seed)
        rows.append({"delta_sd": delta, **result._asdict()})
    return pd.DataFrame(rows)
