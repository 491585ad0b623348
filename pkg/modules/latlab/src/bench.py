"""Latency sources: host measurement, the analytic cost model and dataset assembly."""

import logging
import os
import platform
import time
from contextlib import contextmanager
from typing import TYPE_CHECKING, Any, Iterator, Sequence

import numpy as np
from attrs import asdict, define, field
from diffcore import Tensor, no_grad
from humanfriendly import format_timespan
from mpire import WorkerPool

from .kernels import KERNELS, block_weights, execute_block
from .records import LatencyDataset, LatencyRecord, Mode, WidthConfig

if TYPE_CHECKING:
    from srnet import CompactModel

DEFAULT_MAXIMA = (16, 64, 48, 16)
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")
_MIN_TICKS = 1000
_FLOOR = 1e-6
_LOGGER = logging.LoggerAdapter(logging.getLogger(__name__), {})


class TimerResolutionError(RuntimeError):
    """The timed region is too short for the host clock even after a retry."""


class CoefficientError(ValueError):
    """Analytic coefficients that cannot yield a positive latency."""


@define(frozen=True)
class AnalyticCoeffs:
    """``c0`` fixed ms, ``c1`` ms per million MACs, ``c2`` ms per million output elements."""

    c0: float = field(default=0.05, converter=float)
    c1: float = field(default=2.0, converter=float)
    c2: float = field(default=0.1, converter=float)

    def __attrs_post_init__(self) -> None:
        values = (self.c0, self.c1, self.c2)
        if any(value < 0 for value in values) or not any(value > 0 for value in values):
            raise CoefficientError(f"Coefficients must be nonnegative and not all zero, got {values}")


@define(frozen=True)
class ModelTiming:
    ms: float

    @property
    def fps(self) -> float:
        return 1000.0 / self.ms


def sample_configs(
    n: int,
    maxima: Sequence[int] = DEFAULT_MAXIMA,
    seed: int = 0,
    spatial: tuple[int, int] = (48, 48),
) -> list[WidthConfig]:
    """``n`` distinct configs with every ``f_i`` uniform over ``1..maxima[i]``."""
    maxima = np.asarray(maxima, dtype=np.int64)
    if n > np.prod(maxima):
        raise ValueError(f"Cannot draw {n} distinct configs under caps {tuple(maxima)}")
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, ...]] = set()
    configs = []
    while len(configs) < n:
        for row in rng.integers(1, maxima + 1, size=(n - len(configs), maxima.size)):
            f = tuple(int(width) for width in row)
            if f not in seen:
                seen.add(f)
                configs.append(WidthConfig(f=f, spatial=spatial))
    return configs


def analytic_latency(config: WidthConfig, coeffs: AnalyticCoeffs, kernels: Sequence[int] = KERNELS) -> float:
    macs, elements = _cost_terms(config, kernels)
    return coeffs.c0 + coeffs.c1 * macs + coeffs.c2 * elements


def _cost_terms(config: WidthConfig, kernels: Sequence[int]) -> tuple[float, float]:
    pixels = config.spatial[0] * config.spatial[1]
    f = config.f
    macs = sum(f[idx] * f[idx + 1] * k * k for idx, k in enumerate(kernels)) * pixels / 1e6
    elements = sum(f[1:]) * pixels / 1e6
    return macs, elements


def calibrate(
    measured: LatencyDataset,
    kernels: Sequence[int] = KERNELS,
    logger: logging.LoggerAdapter = _LOGGER,
) -> AnalyticCoeffs:
    """Least-squares fit of the analytic coefficients to measured records."""
    if len(measured) < 3:
        raise CoefficientError(f"Calibration needs at least 3 records, got {len(measured)}")
    design = np.array([[1.0, *_cost_terms(record.config, kernels)] for record in measured.records])
    fitted, *_ = np.linalg.lstsq(design, measured.targets(), rcond=None)
    coeffs = []
    for name, value in zip(("c0", "c1", "c2"), fitted):
        if value <= 0:
            logger.warning(f"Fitted {name}={value:.3g} is not positive, flooring to {_FLOOR}")
            value = _FLOOR
        coeffs.append(float(value))
    logger.info(f"Calibrated c0={coeffs[0]:.4g} c1={coeffs[1]:.4g} c2={coeffs[2]:.4g}")
    return AnalyticCoeffs(*coeffs)


@contextmanager
def benchmark_pool(cpu: int = 0) -> Iterator[WorkerPool]:
    """One worker pinned to ``cpu`` with every BLAS/OpenMP pool forced to one thread."""
    saved = {name: os.environ.get(name) for name in _THREAD_VARS}
    os.environ.update({name: "1" for name in _THREAD_VARS})
    try:
        with WorkerPool(n_jobs=1, cpu_ids=[cpu], start_method="spawn") as pool:
            yield pool
    finally:
        for name, value in saved.items():
            if value is None:
                os.environ.pop(name, None)
            else:
                os.environ[name] = value


def _time_stack(config: WidthConfig, stack: int, reps: int, warmup: int, fusion: bool, seed: int) -> list[float]:
    weights = block_weights(config, seed)
    x = np.random.default_rng(seed).standard_normal((1, config.f[0], *config.spatial))

    def run() -> None:
        h = x
        for _ in range(stack):
            h = execute_block(config, h, fusion, weights)[:, : config.f[0]]

    for _ in range(warmup):
        run()
    totals = []
    for _ in range(reps):
        start = time.perf_counter()
        run()
        totals.append(time.perf_counter() - start)
    return totals


def measure_latency(
    config: WidthConfig,
    stack: int = 20,
    reps: int = 9,
    warmup: int = 3,
    fusion: bool = True,
    seed: int = 0,
    pool: WorkerPool | None = None,
    logger: logging.LoggerAdapter = _LOGGER,
) -> float:
    """Per-block ms: median over ``reps`` of ``stack`` chained blocks, divided by ``stack``."""
    if warmup < 1 or reps < 1 or stack < 1:
        raise ValueError(f"stack, reps and warmup must be positive, got {stack}, {reps}, {warmup}")
    if pool is None:
        with benchmark_pool() as own:
            return measure_latency(config, stack, reps, warmup, fusion, seed, own, logger)

    resolution = time.get_clock_info("perf_counter").resolution
    for attempt in range(2):
        totals = pool.apply(_time_stack, args=(config, stack, reps, warmup, fusion, seed))
        median = float(np.median(totals))
        if median >= _MIN_TICKS * resolution:
            logger.debug(f"{config.f}: {format_timespan(median, detailed=True)} for {stack} blocks")
            return median * 1000.0 / stack
        if attempt == 0:
            logger.warning(f"{config.f}: {median:.3g}s is near the timer resolution, retrying with more work")
            stack, reps = stack * 2, reps * 2
    logger.error(f"{config.f}: runtime stays below {_MIN_TICKS} timer ticks")
    raise TimerResolutionError(f"Timer resolution {resolution}s too coarse for config {config.f}")


@define(frozen=True)
class FusionReport:
    """Median per-block ms of the same configs with fused and with unfused kernels."""

    fused_ms: float
    unfused_ms: float
    count: int

    @property
    def speedup(self) -> float:
        return self.unfused_ms / self.fused_ms


def compare_fusion(
    configs: Sequence[WidthConfig],
    stack: int = 20,
    reps: int = 9,
    warmup: int = 3,
    seed: int = 0,
    cpu: int = 0,
    pool: WorkerPool | None = None,
    logger: logging.LoggerAdapter = _LOGGER,
) -> FusionReport:
    """Time every config both ways on the benchmark worker and report the two medians."""
    if not configs:
        raise ValueError("Fusion comparison needs at least one config")
    if pool is None:
        with benchmark_pool(cpu) as own:
            return compare_fusion(configs, stack, reps, warmup, seed, cpu, own, logger)

    timings: dict[bool, list[float]] = {True: [], False: []}
    for config in configs:
        for fusion in (True, False):
            timings[fusion].append(measure_latency(config, stack, reps, warmup, fusion, seed, pool, logger))
    report = FusionReport(
        fused_ms=float(np.median(timings[True])),
        unfused_ms=float(np.median(timings[False])),
        count=len(configs),
    )
    logger.info(
        f"Fused median {report.fused_ms:.4f} ms, unfused median {report.unfused_ms:.4f} ms "
        f"over {report.count} configs ({report.speedup:.2f}x)"
    )
    return report


def _analytic_record(config: WidthConfig, coeffs: AnalyticCoeffs) -> LatencyRecord:
    return LatencyRecord(config=config, t_ms=analytic_latency(config, coeffs))


def build_dataset(
    mode: Mode,
    n: int,
    maxima: Sequence[int] = DEFAULT_MAXIMA,
    seed: int = 0,
    spatial: tuple[int, int] = (48, 48),
    coeffs: AnalyticCoeffs | None = None,
    stack: int = 20,
    reps: int = 9,
    warmup: int = 3,
    fusion: bool = True,
    n_jobs: int = 1,
    cpu: int = 0,
    logger: logging.LoggerAdapter = _LOGGER,
) -> LatencyDataset:
    configs = sample_configs(n, maxima, seed, spatial)
    meta: dict[str, Any] = {
        "seed": seed,
        "spatial": list(spatial),
        "maxima": [int(value) for value in maxima],
        "fusion": fusion,
        "host": " ".join(
            (platform.node(), platform.machine(), platform.python_implementation(), platform.python_version())
        ),
    }
    start = time.perf_counter()
    if mode == "analytic":
        coeffs = AnalyticCoeffs() if coeffs is None else coeffs
        meta["coeffs"] = asdict(coeffs)
        with WorkerPool(n_jobs=n_jobs) as pool:
            records = pool.map(_analytic_record, [(config, coeffs) for config in configs]) if configs else []
    else:
        meta.update(stack=stack, reps=reps, warmup=warmup)
        records = []
        with benchmark_pool(cpu) as pool:
            for idx, config in enumerate(configs, start=1):
                t_ms = measure_latency(config, stack, reps, warmup, fusion, seed, pool, logger)
                records.append(LatencyRecord(config=config, t_ms=t_ms))
                if idx % 100 == 0:
                    logger.info(f"Measured {idx}/{n} configs")
    logger.info(f"Built {n} {mode} records in {format_timespan(time.perf_counter() - start)}")
    return LatencyDataset(records=list(records), mode=mode, meta=meta)


def _time_model(compact: "CompactModel", spatial: tuple[int, int], reps: int, warmup: int, seed: int) -> list[float]:
    lr = Tensor(np.random.default_rng(seed).standard_normal((1, 3, *spatial)))
    with no_grad():
        for _ in range(warmup):
            compact.forward(lr)
        totals = []
        for _ in range(reps):
            start = time.perf_counter()
            compact.forward(lr)
            totals.append(time.perf_counter() - start)
    return totals


def measure_model(
    compact: "CompactModel",
    spatial: tuple[int, int] = (48, 48),
    reps: int = 9,
    warmup: int = 3,
    seed: int = 0,
    cpu: int = 0,
    logger: logging.LoggerAdapter = _LOGGER,
) -> ModelTiming:
    """Median host wall time of one forward pass of a compact model."""
    with benchmark_pool(cpu) as pool:
        totals = pool.apply(_time_model, args=(compact, tuple(spatial), reps, warmup, seed))
    timing = ModelTiming(ms=float(np.median(totals)) * 1000.0)
    logger.info(f"Model forward at {spatial[0]}x{spatial[1]}: {timing.ms:.3f} ms ({timing.fps:.1f} FPS)")
    return timing
