"""Replicated simulation batches, protocol comparisons and the CSV files
they produce."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from functools import reduce
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.stats

import analysis
from config import RUN_SETTINGS, ConfigurationError, GenieMode, Protocol, ScenarioConfig
from engine import Simulation
from metrics import (
    MetricsError,
    MetricsLedger,
    aggregate_throughput,
    coop_phase_breakdown,
    coop_success_rate,
    duration_ratio,
    mean_duration,
    packet_delivery_ratio,
)

LOGGER = logging.getLogger(__name__)

CSV_SCHEMA = "coopsim-csv/1"
DEFAULT_LOADS_KBPS = (25.0, 50.0, 100.0, 150.0, 200.0, 300.0, 400.0)
SUMMARY_METRICS = ("throughput_bps", "pdr", "split_fraction", "coop_success_rate", "mean_duration_s")
CONFIDENCE = 0.95


class ExperimentError(RuntimeError):
    """A replication aborted; ``seed`` identifies it."""

    def __init__(self, message: str, seed: Optional[int] = None) -> None:
        super().__init__(message)
        self.seed = seed


def replication_seeds(base_seed: int, replications: int) -> List[int]:
    if replications < 1:
        raise ConfigurationError("At least one replication is required")
    return [base_seed + index for index in range(replications)]


def run_single(config: ScenarioConfig) -> MetricsLedger:
    return Simulation(config).run()


def run_replications(
    config: ScenarioConfig,
    replications: int,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> List[MetricsLedger]:
    seeds = replication_seeds(config.seed if seed is None else seed, replications)
    configs = [config.with_overrides(seed=s) for s in seeds]
    workers = RUN_SETTINGS.workers if workers is None else workers

    ledgers: List[MetricsLedger] = []
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_single, c) for c in configs]
            for replication_seed, future in zip(seeds, futures):
                ledgers.append(_collect(replication_seed, future.result))
    else:
        for replication_seed, replication_config in zip(seeds, configs):
            ledgers.append(_collect(replication_seed, lambda: run_single(replication_config)))
    return ledgers


def _collect(seed: int, compute) -> MetricsLedger:
    try:
        ledger = compute()
    except Exception as exc:
        raise ExperimentError(f"Replication with seed {seed} failed: {exc}", seed=seed) from exc
    LOGGER.info("Replication seed=%d done: %.1f kbit/s delivered", seed, aggregate_throughput(ledger) / 1e3)
    return ledger


def _optional(metric, ledger: MetricsLedger) -> float:
    try:
        return float(metric(ledger))
    except MetricsError:
        return math.nan


def ledger_row(ledger: MetricsLedger) -> Dict[str, object]:
    row = ledger.as_dict()
    row["throughput_bps"] = aggregate_throughput(ledger)
    row["pdr"] = _optional(packet_delivery_ratio, ledger)
    row["split_fraction"] = _optional(lambda l: coop_phase_breakdown(l)["split"], ledger)
    row["coop_success_rate"] = _optional(coop_success_rate, ledger)
    row["mean_duration_s"] = _optional(mean_duration, ledger)
    return row


def confidence_half_width(values: Sequence[float], confidence: float = CONFIDENCE) -> float:
    """Normal-approximation half-width over replication values; NaN for n < 2."""
    data = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if data.size < 2:
        return math.nan
    return float(scipy.stats.norm.ppf(0.5 + confidence / 2.0) * scipy.stats.sem(data))


def summarize(rows: pd.DataFrame, metrics: Iterable[str] = SUMMARY_METRICS) -> Dict[str, object]:
    summary: Dict[str, object] = {"row": "summary"}
    numeric = rows.select_dtypes(include="number")
    for column in numeric.columns:
        summary[column] = float(numeric[column].mean())
    for metric in metrics:
        mean = float(rows[metric].mean())
        half_width = confidence_half_width(rows[metric].tolist())
        summary[f"{metric}_ci_rel"] = half_width / mean if mean and not math.isnan(half_width) else math.nan
    for column in ("protocol", "genie"):
        if column in rows:
            summary[column] = rows[column].iloc[0]
    summary["seed"] = math.nan
    return summary


def run_batch(
    config: ScenarioConfig,
    replications: int,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """One row per replication followed by a summary row."""
    ledgers = run_replications(config, replications, seed=seed, workers=workers)
    rows = pd.DataFrame([{"row": "replication", **ledger_row(ledger)} for ledger in ledgers])
    summary = summarize(rows)
    frame = pd.concat([rows, pd.DataFrame([summary])], ignore_index=True)
    return frame[rows.columns.tolist() + [c for c in summary if c not in rows.columns]]


def pooled_ledger(ledgers: Sequence[MetricsLedger]) -> MetricsLedger:
    return reduce(lambda a, b: a.merge(b), ledgers)


def genie_comparison(
    config: ScenarioConfig,
    replications: int,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    modes: Sequence[GenieMode] = tuple(GenieMode),
) -> pd.DataFrame:
    """Duration ratio and throughput gain of Coop-CSI over CSMA-CSI per genie mode."""
    plain = pooled_ledger(
        run_replications(config.with_overrides(protocol=Protocol.CSMA_CSI, genie=GenieMode.OFF), replications, seed, workers)
    )
    rows = []
    for mode in modes:
        coop_config = config.with_overrides(protocol=Protocol.COOP_CSI, genie=GenieMode(mode))
        coop = pooled_ledger(run_replications(coop_config, replications, seed, workers))
        rows.append(
            {
                "genie": GenieMode(mode).value,
                "duration_ratio": duration_ratio(coop, plain, GenieMode(mode)),
                "throughput_gain": aggregate_throughput(coop) / aggregate_throughput(plain) - 1.0,
                "split_fraction": coop_phase_breakdown(coop)["split"],
            }
        )
        LOGGER.info("Genie %s: duration ratio %.3f", rows[-1]["genie"], rows[-1]["duration_ratio"])
    return pd.DataFrame(rows)


def min_rate_sweep(
    config: ScenarioConfig,
    thresholds_mbps: Sequence[float],
    replications: int,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """Coop-CSI with a raised minimum S-D rate before looking for relays."""
    below = [t for t in thresholds_mbps if t < config.min_rate_mbps]
    if below:
        raise ConfigurationError(f"Thresholds {below} are below the minimum rate {config.min_rate_mbps} Mbit/s")
    plain = pooled_ledger(
        run_replications(config.with_overrides(protocol=Protocol.CSMA_CSI, genie=GenieMode.OFF), replications, seed, workers)
    )
    plain_throughput = aggregate_throughput(plain)
    rows = []
    for threshold in thresholds_mbps:
        coop_config = config.with_overrides(protocol=Protocol.COOP_CSI, min_coop_rate_mbps=threshold)
        coop = pooled_ledger(run_replications(coop_config, replications, seed, workers))
        rows.append(
            {
                "min_coop_rate_mbps": threshold,
                "performed_fraction": coop_phase_breakdown(coop)["split"],
                "success_fraction": _optional(coop_success_rate, coop),
                "throughput_gain": aggregate_throughput(coop) / plain_throughput - 1.0,
            }
        )
    return pd.DataFrame(rows)


def load_sweep(
    config: ScenarioConfig,
    loads_kbps: Sequence[float] = DEFAULT_LOADS_KBPS,
    replications: int = 1,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    protocols: Sequence[Protocol] = (Protocol.CSMA_CSI, Protocol.COOP_CSI),
) -> pd.DataFrame:
    rows = []
    for load in loads_kbps:
        for protocol in protocols:
            ledger = pooled_ledger(
                run_replications(
                    config.with_overrides(offered_load_kbps=float(load), protocol=Protocol(protocol)),
                    replications,
                    seed,
                    workers,
                )
            )
            rows.append(
                {
                    "load_kbps": float(load),
                    "protocol": Protocol(protocol).value,
                    "throughput_bps": aggregate_throughput(ledger),
                    "pdr": _optional(packet_delivery_ratio, ledger),
                    "split_fraction": _optional(lambda l: coop_phase_breakdown(l)["split"], ledger),
                }
            )
        LOGGER.info("Load %.0f kbit/s done", load)
    return pd.DataFrame(rows)


def saturation_load(loads: Sequence[float], throughputs: Sequence[float], tolerance: float = 0.01) -> Optional[float]:
    """Smallest load beyond which throughput changes by less than
    ``tolerance`` per load step."""
    if len(loads) != len(throughputs):
        raise ValueError("Loads and throughputs must have the same length")
    order = np.argsort(loads)
    loads = np.asarray(loads, dtype=float)[order]
    values = np.asarray(throughputs, dtype=float)[order]
    for index in range(len(loads) - 1):
        tail = values[index:]
        changes = np.abs(np.diff(tail)) / np.maximum(np.abs(tail[:-1]), 1e-300)
        if np.all(changes < tolerance):
            return float(loads[index])
    LOGGER.warning("Throughput still grows at %.0f kbit/s; saturation not reached", loads[-1])
    return None


# ----------------------------------------------------------------------
# Analytic tables
# ----------------------------------------------------------------------
TABLES = ("coop-gain", "idle-field", "gain-field", "availability", "biased-gain")
# Numbered aliases accepted by ``analyze``, in table order.
TABLE_ALIASES = dict(zip(("fig1", "fig2", "fig3", "fig4", "fig5"), TABLES))


def analysis_table(
    name: str,
    config: ScenarioConfig,
    region: analysis.Region = analysis.DEFAULT_REGION,
    step: float = 0.5,
    samples: int = analysis.MIN_MC_SAMPLES,
    seed: int = 0,
    delta_sd: float = 60.0,
) -> pd.DataFrame:
    name = TABLE_ALIASES.get(name, name)
    if name == "coop-gain":
        sigma2 = [10.0 ** (dbm / 10.0) for dbm in np.linspace(-110.0, -60.0, 20)]
        deltas = np.linspace(10.0, min(200.0, region.x_max), 20)
        return analysis.coop_gain_grid(config, sigma2, deltas, n_samples=samples, seed=seed)

    scene = analysis.AnalyticScene.from_config(config, delta_sd, region=region)
    xs = np.arange(-40.0, delta_sd + 40.0 + 1e-9, 5.0)
    ys = np.arange(-60.0, 60.0 + 1e-9, 5.0)
    if name == "idle-field":
        return analysis.relay_idle_field(scene, xs, ys, step=step).to_frame()
    if name == "gain-field":
        return analysis.relay_gain_field(scene, xs, ys, n_samples=samples, seed=seed).to_frame()
    if name == "availability":
        deltas = np.arange(0.0, delta_sd + 1e-9, 5.0)
        return pd.concat(
            [analysis.availability_profile(scene, k, deltas, seed=seed) for k in (1, 2, 3)], ignore_index=True
        )
    if name == "biased-gain":
        return analysis.biased_gain_sweep(config, np.arange(30.0, 91.0, 10.0), n_trials=samples, seed=seed, region=region)
    raise ConfigurationError(f"Unknown table {name!r}; expected one of {', '.join(TABLES + tuple(TABLE_ALIASES))}")


# ----------------------------------------------------------------------
# CSV output
# ----------------------------------------------------------------------
def write_csv(frame: pd.DataFrame, path: Union[str, Path], experiment: str) -> Path:
    """Write ``frame`` behind a one-line schema comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fp:
        fp.write(f"# schema={CSV_SCHEMA} experiment={experiment}\n")
        frame.to_csv(fp, index=False, float_format="%.10g")
    return path


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def output_path(prefix: Optional[str], experiment: str, results_dir: Optional[Path] = None) -> Path:
    """``<prefix>_<experiment>.csv``, or a timestamped name under the results directory."""
    if prefix:
        return Path(f"{prefix}_{experiment}.csv")
    base = Path(results_dir or RUN_SETTINGS.results_dir)
    timestamp = datetime.now(timezone.utc).strftime("%Y%m%d_%H%M%S")
    return base / f"{experiment}_{timestamp}.csv"


def print_summary(frame: pd.DataFrame, title: str, columns: Sequence[str]) -> None:
    print(f"{title}:")
    for column in columns:
        if column in frame:
            value = frame[column].iloc[-1]
            print(f"  {column:<22}: {value:.4g}" if isinstance(value, (float, int, np.floating)) else f"  {column:<22}: {value}")


def split_floats(text: Optional[str]) -> Tuple[float, ...]:
    if not text:
        return ()
    try:
        return tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError as exc:
        raise ConfigurationError(f"Expected comma-separated numbers, got {text!r}") from exc
