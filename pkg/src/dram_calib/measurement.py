"""Power-sample ingestion: trapezoidal energy, static baselines, run averaging."""

from __future__ import annotations

import csv
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    EmptyRuns,
    NameConventionError,
    NoFiles,
    ParseError,
    TooFewSamples,
    ValidationError,
    WindowOutOfRange,
)


@dataclass(frozen=True)
class MeasurementSeries:
    channel: str
    t: np.ndarray  # seconds, strictly increasing
    p: np.ndarray  # watts, >= 0
    dimms_per_channel: int = 2

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if t.shape != p.shape or t.ndim != 1:
            raise ValidationError("timestamps and power samples must be 1-D and equally long")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValidationError(f"channel {self.channel}: timestamps are not strictly increasing")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValidationError(f"channel {self.channel}: power samples must be finite and >= 0")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])


def _window(series: MeasurementSeries, window) -> Tuple[float, float]:
    if window is None:
        return series.span
    t0, t1 = float(window[0]), float(window[1])
    if len(series.t) == 0 or t0 >= t1 or t0 < series.t[0] or t1 > series.t[-1]:
        raise WindowOutOfRange(
            f"window [{t0}, {t1}] not inside series span "
            f"{series.span if len(series.t) else '(empty)'}"
        )
    return t0, t1


def integrate(series: MeasurementSeries, window=None) -> float:
    """Energy in joules over ``window`` (default: whole series).

    Trapezoid rule on the samples, with the power at the window edges
    linearly interpolated.
    """
    if len(series.t) < 2:
        raise TooFewSamples("need at least 2 samples")
    t0, t1 = _window(series, window)
    t, p = series.t, series.p
    i0 = int(np.searchsorted(t, t0, side="right"))
    i1 = int(np.searchsorted(t, t1, side="left"))
    inside = np.count_nonzero((t >= t0) & (t <= t1))
    if inside < 2:
        raise TooFewSamples(f"window [{t0}, {t1}] holds {inside} sample(s), need 2")
    tt = np.concatenate(([t0], t[i0:i1], [t1]))
    pp = np.concatenate(([np.interp(t0, t, p)], p[i0:i1], [np.interp(t1, t, p)]))
    return float(np.sum(0.5 * (pp[1:] + pp[:-1]) * np.diff(tt)))


@dataclass(frozen=True)
class StaticBaseline:
    power: float  # W for the whole channel
    current_per_dimm: float  # A
    stddev: float  # W, sample noise estimate
    n_samples: int


def static_baseline(series: MeasurementSeries, idle_window, vdd: float) -> StaticBaseline:
    """Mean idle power of a channel and the implied per-DIMM static current.

    The caller must pick a window that contains only idle samples.
    """
    t0, t1 = _window(series, idle_window)
    sel = series.p[(series.t >= t0) & (series.t <= t1)]
    if len(sel) < 2:
        raise TooFewSamples(f"idle window holds {len(sel)} sample(s), need 2")
    power = float(np.mean(sel))
    return StaticBaseline(
        power=power,
        current_per_dimm=power / (vdd * series.dimms_per_channel),
        stddev=float(np.std(sel, ddof=1)),
        n_samples=len(sel),
    )


@dataclass(frozen=True)
class RunEnergy:
    benchmark: str
    gross_energy: float
    static_energy: float
    net_energy: float
    duration: float
    n_runs_averaged: int = 1
    stddev: float = 0.0


def run_energy(runs: Sequence[Tuple[MeasurementSeries, object]], baseline: float, benchmark: str = "") -> RunEnergy:
    """Average net energy of repeated runs; ``baseline`` is the static power in W."""
    if not runs:
        raise EmptyRuns("no runs given")
    gross, static, dur = [], [], []
    for series, window in runs:
        t0, t1 = _window(series, window)
        gross.append(integrate(series, (t0, t1)))
        dur.append(t1 - t0)
        static.append(baseline * (t1 - t0))
    gross_a, static_a = np.array(gross), np.array(static)
    net = gross_a - static_a
    g, s = float(np.mean(gross_a)), float(np.mean(static_a))
    return RunEnergy(
        benchmark=benchmark,
        gross_energy=g,
        static_energy=s,
        net_energy=g - s,
        duration=float(np.mean(dur)),
        n_runs_averaged=len(runs),
        stddev=float(np.std(net, ddof=1)) if len(runs) > 1 else 0.0,
    )


# -- files ------------------------------------------------------------------


def write_series_csv(series: MeasurementSeries, path) -> None:
    lines = ["timestamp_s,power_w"]
    lines += [f"{t!r},{p!r}" for t, p in zip(series.t.tolist(), series.p.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_series_csv(path, channel: Optional[str] = None, dimms_per_channel: int = 2, sort: bool = False) -> MeasurementSeries:
    """Read a ``timestamp_s,power_w`` CSV.  With ``sort`` unsorted input is sorted instead of rejected."""
    ts, ps = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp_s", "power_w"]:
            raise ParseError("expected header 'timestamp_s,power_w'", line=1, path=path)
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                ts.append(float(rec[0]))
                ps.append(float(rec[1]))
            except (IndexError, ValueError):
                raise ParseError(f"bad sample {rec!r}", line=lineno, path=path) from None
    t, p = np.array(ts), np.array(ps)
    if sort:
        order = np.argsort(t, kind="stable")
        t, p = t[order], p[order]
    return MeasurementSeries(channel or Path(path).stem, t, p, dimms_per_channel)


ENERGY_FIELDS = ("gross_energy_j", "static_energy_j", "net_energy_j", "duration_s", "n_runs", "stddev_j")


def write_energies_csv(energies: Sequence[RunEnergy], path) -> None:
    lines = ["id," + ",".join(ENERGY_FIELDS)]
    for e in energies:
        lines.append(
            f"{e.benchmark},{float(e.gross_energy)!r},{float(e.static_energy)!r},{float(e.net_energy)!r},"
            f"{float(e.duration)!r},{e.n_runs_averaged},{float(e.stddev)!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_energies_csv(path) -> List[RunEnergy]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", *ENERGY_FIELDS} - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"energies CSV lacks column(s) {sorted(missing)}", path=path)
        for lineno, r in enumerate(reader, 2):
            try:
                out.append(RunEnergy(
                    benchmark=r["id"],
                    gross_energy=float(r["gross_energy_j"]),
                    static_energy=float(r["static_energy_j"]),
                    net_energy=float(r["net_energy_j"]),
                    duration=float(r["duration_s"]),
                    n_runs_averaged=int(r["n_runs"]),
                    stddev=float(r["stddev_j"]),
                ))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
    return out


_RUN_NAME = re.compile(r"^(?P<bench>.+)_(?P<threads>\d+)_(?P<channel>[A-Za-z0-9]+)_(?P<run>\d+)$")


def parse_run_name(name: str):
    m = _RUN_NAME.match(Path(name).stem)
    if not m:
        raise NameConventionError(f"{name!r} does not follow <bench>_<threads>_<channel>_<run>.csv")
    return m.group("bench"), int(m.group("threads")), m.group("channel"), int(m.group("run"))


@dataclass(frozen=True)
class AggregateRow:
    benchmark: str
    threads: int
    channel: str
    mean_power: float
    n_runs: int


def aggregate_runs(directory) -> List[AggregateRow]:
    """Mean power per (benchmark, thread count, channel) over a directory of series files."""
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise NoFiles(f"no series files in {directory}")
    groups = defaultdict(list)
    for f in files:
        bench, threads, channel, _ = parse_run_name(f.name)
        s = read_series_csv(f, channel=channel)
        t0, t1 = s.span
        groups[(bench, threads, channel)].append(integrate(s) / (t1 - t0))
    return [
        AggregateRow(b, th, ch, float(np.mean(v)), len(v))
        for (b, th, ch), v in sorted(groups.items())
    ]


def aggregate_csv(rows: Sequence[AggregateRow]) -> str:
    lines = ["benchmark,threads,channel,mean_power_w,n_runs"]
    lines += [f"{r.benchmark},{r.threads},{r.channel},{float(r.mean_power)!r},{r.n_runs}" for r in rows]
    return "\n".join(lines) + "\n"
