from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union
import math
import os

from dotenv import dotenv_values


class ConfigurationError(ValueError):
    """Raised when a scenario cannot be built from the supplied parameters."""


class Protocol(str, Enum):
    CSMA_CSI = "csma-csi"
    COOP_CSI = "coop-csi"


class GenieMode(str, Enum):
    OFF = "off"
    ALL_RELAYS_AVAILABLE = "all-relays-available"
    FORCED_COOPERATION = "forced-cooperation"


def _env_flag(name: str, default: bool = True) -> bool:
    """Read a boolean flag from environment variables."""
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "on"}


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or not value.strip():
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigurationError(f"{name} must be an integer, got {value!r}") from exc


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


def calibrated_reference_loss_db(
    tx_power_dbm: float,
    exponent: float,
    detection_threshold_dbm: float,
    reach_m: float,
    reach_probability: float,
) -> float:
    """Loss at 1 m that lets a Rayleigh-faded frame sent from ``reach_m`` away
    clear the detection threshold with probability ``reach_probability``.

    Solves exp(-P_det / Pbar(reach)) = p for the mean received power Pbar.
    """
    if not 0 < reach_probability < 1 or reach_m <= 0:
        raise ConfigurationError("Sync reach needs a positive distance and a probability in (0, 1)")
    mean_at_reach_dbm = detection_threshold_dbm - 10.0 * math.log10(-math.log(reach_probability))
    return tx_power_dbm - 10.0 * exponent * math.log10(reach_m) - mean_at_reach_dbm


@dataclass(frozen=True)
class ScenarioConfig:
    # Radio and MAC parameters
    tx_power_dbm: float = 10.0
    noise_floor_dbm: float = -102.0
    detection_threshold_dbm: float = -96.0
    path_loss_exponent: float = 3.5
    max_doppler_hz: float = 11.1
    bandwidth_mhz: float = 1.0
    control_rate_mbps: float = 0.532
    min_rate_mbps: float = 0.95
    cs_threshold_dbm: float = -100.0
    slot_us: float = 10.0
    difs_us: float = 128.0
    sifs_us: float = 10.0
    cw_start: int = 5
    srl_coop_csi: int = 4
    srl_csma_csi: int = 5
    epsilon: float = 0.15
    header_bits: int = 112
    payload_bits: int = 5000
    ack_bits: int = 112

    # Topology and traffic
    node_count: int = 35
    area_m: float = 300.0
    neighbor_radius_m: float = 60.0
    min_separation_m: float = 1.0
    offered_load_kbps: float = 100.0

    # Protocol selection
    protocol: Protocol = Protocol.COOP_CSI
    genie: GenieMode = GenieMode.OFF
    min_coop_rate_mbps: Optional[float] = None  # None: same as min_rate_mbps
    relay_cs_threshold_dbm: Optional[float] = None  # None: same as cs_threshold_dbm

    # Channel bookkeeping
    reference_loss_db: Optional[float] = None  # None: derived from the sync reach below
    sync_reach_m: float = 60.0
    sync_reach_probability: float = 0.95
    fading_refresh_ms: float = 1.0

    # Run control
    duration_s: float = 60.0
    warmup_s: float = 5.0
    seed: int = 1
    placement_seed: Optional[int] = None  # None: same as seed

    # ------------------------------------------------------------------
    # Derived quantities (SI units, linear mW)
    # ------------------------------------------------------------------
    @property
    def tx_power_mw(self) -> float:
        return dbm_to_mw(self.tx_power_dbm)

    @property
    def noise_mw(self) -> float:
        return dbm_to_mw(self.noise_floor_dbm)

    @property
    def cs_threshold_mw(self) -> float:
        return dbm_to_mw(self.cs_threshold_dbm)

    @property
    def relay_cs_threshold_mw(self) -> float:
        if self.relay_cs_threshold_dbm is None:
            return self.cs_threshold_mw
        return dbm_to_mw(self.relay_cs_threshold_dbm)

    @property
    def detection_threshold_mw(self) -> float:
        return dbm_to_mw(self.detection_threshold_dbm)

    @property
    def bandwidth_hz(self) -> float:
        return self.bandwidth_mhz * 1e6

    @property
    def control_rate_bps(self) -> float:
        return self.control_rate_mbps * 1e6

    @property
    def min_rate_bps(self) -> float:
        return self.min_rate_mbps * 1e6

    @property
    def min_coop_rate_bps(self) -> float:
        if self.min_coop_rate_mbps is None:
            return self.min_rate_bps
        return self.min_coop_rate_mbps * 1e6

    @property
    def slot_s(self) -> float:
        return self.slot_us * 1e-6

    @property
    def difs_s(self) -> float:
        return self.difs_us * 1e-6

    @property
    def sifs_s(self) -> float:
        return self.sifs_us * 1e-6

    @property
    def fading_refresh_s(self) -> float:
        return self.fading_refresh_ms * 1e-3

    @property
    def effective_reference_loss_db(self) -> float:
        if self.reference_loss_db is None:
            return calibrated_reference_loss_db(
                self.tx_power_dbm,
                self.path_loss_exponent,
                self.detection_threshold_dbm,
                self.sync_reach_m,
                self.sync_reach_probability,
            )
        return self.reference_loss_db

    @property
    def short_retry_limit(self) -> int:
        if self.protocol is Protocol.COOP_CSI:
            return self.srl_coop_csi
        return self.srl_csma_csi

    @property
    def effective_placement_seed(self) -> int:
        return self.seed if self.placement_seed is None else self.placement_seed

    @property
    def ack_duration_s(self) -> float:
        return self.ack_bits / self.control_rate_bps

    @property
    def header_duration_s(self) -> float:
        return self.header_bits / self.control_rate_bps

    def path_loss_law(self):
        from channel import PathLossLaw

        return PathLossLaw(
            tx_power_mw=self.tx_power_mw,
            exponent=self.path_loss_exponent,
            reference_loss_db=self.effective_reference_loss_db,
        )

    def matching_key(self) -> Dict[str, Any]:
        """Fields that must agree for two runs to be compared side by side."""
        ignored = {"protocol", "genie", "min_coop_rate_mbps", "relay_cs_threshold_dbm"}
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ignored}

    def with_overrides(self, **overrides: Any) -> "ScenarioConfig":
        return replace(self, **overrides).validate()

    def validate(self) -> "ScenarioConfig":
        if self.cs_threshold_mw <= self.noise_mw:
            raise ConfigurationError(
                f"CS threshold ({self.cs_threshold_dbm} dBm) must exceed the noise floor "
                f"({self.noise_floor_dbm} dBm)"
            )
        if self.relay_cs_threshold_mw <= self.noise_mw:
            raise ConfigurationError("Relay CS threshold must exceed the noise floor")
        if self.payload_bits <= 0 or self.header_bits <= 0 or self.ack_bits <= 0:
            raise ConfigurationError("Header, payload and ACK sizes must be positive")
        if self.duration_s <= 0:
            raise ConfigurationError("Simulation duration must be positive")
        if not 0 <= self.warmup_s < self.duration_s:
            raise ConfigurationError("Warm-up must be non-negative and shorter than the duration")
        if self.offered_load_kbps < 0:
            raise ConfigurationError("Offered load cannot be negative")
        if self.srl_coop_csi < 1 or self.srl_csma_csi < 1:
            raise ConfigurationError("Short retry limits must be at least 1")
        if self.cw_start < 1:
            raise ConfigurationError("CW_start must be at least 1")
        if self.path_loss_exponent <= 2:
            raise ConfigurationError("Path loss exponent must exceed 2")
        if self.node_count < 2 or self.area_m <= 0:
            raise ConfigurationError("Need at least two nodes on a non-empty area")
        if self.min_rate_mbps <= 0 or self.control_rate_mbps <= 0 or self.bandwidth_mhz <= 0:
            raise ConfigurationError("Rates and bandwidth must be positive")
        if self.epsilon < 0:
            raise ConfigurationError("Margin epsilon cannot be negative")
        if self.fading_refresh_ms <= 0:
            raise ConfigurationError("Fading refresh interval must be positive")
        if self.sync_reach_m <= 0 or not 0 < self.sync_reach_probability < 1:
            raise ConfigurationError("Sync reach needs a positive distance and a probability in (0, 1)")
        return self


def _coerce(name: str, raw: str, annotation: Any) -> Any:
    text = raw.strip()
    annotation = str(annotation)
    if "Optional" in annotation and text.lower() in {"", "none", "auto"}:
        return None
    try:
        if "Protocol" in annotation:
            return Protocol(text.lower())
        if "GenieMode" in annotation:
            return GenieMode(text.lower())
        if "int" in annotation:
            return int(text)
        return float(text)
    except ValueError as exc:
        raise ConfigurationError(f"Invalid value for {name.upper()}: {raw!r}") from exc


def load_scenario(
    path: Optional[Union[str, Path]] = None,
    **overrides: Any,
) -> ScenarioConfig:
    """Build a scenario from a ``KEY = value`` file plus keyword overrides.

    Keys are the ``ScenarioConfig`` field names in upper case; blank lines and
    ``#`` comments are ignored.
    """
    known = {f.name: f.type for f in fields(ScenarioConfig)}
    values: Dict[str, Any] = {}

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Scenario file not found: {path}")
        for key, raw in dotenv_values(path).items():
            name = key.strip().lower()
            if name not in known:
                raise ConfigurationError(f"Unknown scenario key: {key}")
            if raw is None:
                raise ConfigurationError(f"Missing value for {key}")
            values[name] = _coerce(name, raw, known[name])

    for name, value in overrides.items():
        if name not in known:
            raise ConfigurationError(f"Unknown scenario field: {name}")
        if value is not None:
            values[name] = value

    try:
        return ScenarioConfig(**values).validate()
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


@dataclass
class RunSettings:
    workers: int = _env_int("COOPSIM_WORKERS", 1)
    log_level: str = os.getenv("COOPSIM_LOG_LEVEL", "INFO").upper()
    results_dir: str = os.getenv("COOPSIM_RESULTS_DIR", "results")
    mc_batch_size: int = _env_int("COOPSIM_MC_BATCH", 1 << 18)
    quadrature_check: bool = _env_flag("COOPSIM_QUADRATURE_CHECK", True)


RUN_SETTINGS = RunSettings()
