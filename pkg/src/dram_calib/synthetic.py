"""Synthetic ground truth: "measured" energies and power traces from planted currents.

Real calibration needs wall-power measurements of the memory channels.  For
testing and demonstration, the measured side is instead produced by running
the same energy model with hidden ("planted") currents, adding an intercept
and multiplicative Gaussian noise per run.
"""

from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from .device import CURRENT_NAMES, CalibratedCurrents, DeviceSpec
from .measurement import MeasurementSeries, RunEnergy
from .power import energy
from .tracestats import CommandStats


def planted_currents(
    device: DeviceSpec,
    rng: Optional[np.random.Generator] = None,
    low: float = 0.5,
    high: float = 0.7,
    intercept: float = 0.0,
    factors: Optional[Dict[str, float]] = None,
) -> CalibratedCurrents:
    """Datasheet currents scaled by per-current factors drawn from ``[low, high]``."""
    if factors is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        factors = {k: float(rng.uniform(low, high)) for k in CURRENT_NAMES}
    sheet = CalibratedCurrents.from_datasheet(device).scaled(factors)
    return CalibratedCurrents(**{k: getattr(sheet, k) for k in CURRENT_NAMES}, intercept_b=intercept)


def true_energy(stats: CommandStats, device: DeviceSpec, planted: CalibratedCurrents) -> float:
    # planted i_pre may sit below IDD2N; the model is still well defined
    return energy(stats, device, planted, allow_negative=True).e_total


def synthetic_run_energy(
    bench: str,
    stats: CommandStats,
    device: DeviceSpec,
    planted: CalibratedCurrents,
    noise: float,
    rng: np.random.Generator,
    runs: int = 1,
) -> RunEnergy:
    """Net energy of ``runs`` noisy repetitions, each scaled by ``1 + noise * N(0, 1)``."""
    e = true_energy(stats, device, planted)
    draws = e * (1.0 + noise * rng.standard_normal(runs))
    duration = stats.c_total * device.tck_s
    return RunEnergy(
        benchmark=bench,
        gross_energy=float(np.mean(draws)),
        static_energy=0.0,
        net_energy=float(np.mean(draws)),
        duration=duration,
        n_runs_averaged=runs,
        stddev=float(np.std(draws, ddof=1)) if runs > 1 else 0.0,
    )


def synthetic_series(
    stats: CommandStats,
    device: DeviceSpec,
    planted: CalibratedCurrents,
    rng: np.random.Generator,
    static_power: float = 0.3984,
    noise: float = 0.01,
    sample_noise: float = 0.02,
    n_idle: int = 200,
    n_run: int = 400,
    channel: str = "AB",
) -> Tuple[MeasurementSeries, Tuple[float, float], Tuple[float, float]]:
    """An idle stretch followed by one run of the benchmark.

    The run's mean dynamic power carries a single ``1 + noise * N(0, 1)`` gain;
    every sample also gets additive white noise of ``sample_noise`` W, which
    averages out over the window.  Returns the series and the idle and run
    windows.
    """
    duration = stats.c_total * device.tck_s
    dyn = true_energy(stats, device, planted) / duration * (1.0 + noise * rng.standard_normal())
    dt = duration / n_run
    t_idle = np.arange(n_idle) * dt
    t_run = t_idle[-1] + dt + np.arange(n_run + 1) * dt
    p_idle = static_power + sample_noise * rng.standard_normal(n_idle)
    p_run = static_power + dyn + sample_noise * rng.standard_normal(n_run + 1)
    t = np.concatenate([t_idle, t_run])
    p = np.maximum(np.concatenate([p_idle, p_run]), 0.0)
    series = MeasurementSeries(channel, t, p, device.dimms_per_channel)
    return series, (float(t_idle[0]), float(t_idle[-1])), (float(t_run[0]), float(t_run[-1]))
