"""End-to-end workflow: streams -> traces -> stats -> energies -> calibration -> validation.

A pipeline is described by an INI file::

    [pipeline]
    device = builtin:ddr4_2133_2rx8_8gb.json
    mapping = builtin:ddr4_2rx8_default.map
    kernels = read, assign, scale, addition, triad, copy, selfscale
    elements = 1000000
    output = out/demo
    seed = 7

    [synthetic]
    planted_low = 0.5
    planted_high = 0.7

    [holdout]
    quad = pattern=a:R,b:R,c:R,d:W elements=1000000

Paths are relative to the config file; ``builtin:`` names a file shipped
with the package.  ``measurements = <dir>`` points at real run files (see
measure_directory).  Without it the measured side is synthesised from
planted currents, written out as power series, and read back through the
same measurement code.
"""

from __future__ import annotations

import configparser
import csv
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import addrmap, device as dev, measurement as meas, power, tracestats, workload
from .calibrate import build_problem, calibrate, validate, validation_csv
from .errors import MissingArtifacts, ParseError, StageError
from .memctrl import schedule
from .synthetic import planted_currents, synthetic_series

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
SEED_ENV = "DRAM_CALIB_SEED"
THREADS = 24  # label used in synthetic measurement file names


def resolve_path(value: str, base: Path) -> Path:
    if value.startswith("builtin:"):
        return DATA_DIR / value[len("builtin:"):]
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


@dataclass
class WorkloadSpec:
    name: str
    accesses: Tuple[Tuple[str, int], ...]
    elements: int
    stride: int = workload.LINE_BYTES

    def stream(self):
        return workload.generate_pattern(self.accesses, self.elements, stride=self.stride, name=self.name)


def parse_workload(name: str, text: str, default_elements: int, rfo: bool = False) -> WorkloadSpec:
    """``kernel=<kind>`` or ``pattern=a:R,b:W`` plus optional ``elements=`` / ``stride=``."""
    opts = dict(tok.split("=", 1) for tok in text.split() if "=" in tok)
    elements = int(opts.get("elements", default_elements))
    stride = int(opts.get("stride", workload.LINE_BYTES))
    if "kernel" in opts:
        acc = workload.ACCESS_LISTS[workload.KernelKind.parse(opts["kernel"])]
    elif "pattern" in opts:
        acc = []
        for item in opts["pattern"].split(","):
            arr, _, op = item.partition(":")
            acc.append((arr, {"R": workload.READ, "W": workload.WRITE}[op.strip().upper()]))
        acc = tuple(acc)
    else:
        raise ParseError(f"workload {name!r} needs kernel= or pattern=")
    if rfo:
        acc = workload.with_rfo(acc)
    return WorkloadSpec(name, acc, elements, stride)


@dataclass
class PipelineConfig:
    device: Path
    mapping: Path
    kernels: List[WorkloadSpec]
    output: Path
    holdout: List[WorkloadSpec] = field(default_factory=list)
    measurements: Optional[Path] = None  # real runs; synthesised when None
    seed: int = 0
    rfo: bool = False
    weighted: bool = False
    intercept: bool = True
    gross: bool = False
    strict_timing: bool = False
    write_streams: bool = True
    jobs: int = 1
    planted_low: float = 0.5
    planted_high: float = 0.7
    planted_intercept: float = 1e-6
    noise: float = 0.01
    sample_noise: float = 0.002
    static_power: float = 0.3984
    runs: int = 3


def load_pipeline_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists() and (DATA_DIR / path.name).exists() and path.parent == Path("."):
        path = DATA_DIR / path.name  # shipped config, e.g. "demo.cfg"
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(f"config file {path} not found")
    base = path.parent
    p = cp["pipeline"]
    s = cp["synthetic"] if cp.has_section("synthetic") else {}
    rfo = p.getboolean("rfo", fallback=False)
    elements = p.getint("elements", fallback=1_000_000)
    stride = p.getint("stride", fallback=workload.LINE_BYTES)
    kernels = []
    for k in (x.strip() for x in p.get("kernels", ",".join(k.value for k in workload.KernelKind)).split(",")):
        if k:
            kernels.append(parse_workload(k, f"kernel={k} elements={elements} stride={stride}", elements, rfo))
    holdout = []
    if cp.has_section("holdout"):
        holdout = [parse_workload(n, v, elements, rfo) for n, v in cp.items("holdout")
                   if n not in cp.defaults()]
    seed = int(os.environ.get(SEED_ENV, p.getint("seed", fallback=0)))

    def opt_path(key):
        v = p.get(key, fallback="").strip()
        return resolve_path(v, base) if v else None

    return PipelineConfig(
        device=resolve_path(p.get("device", "builtin:ddr4_2133_2rx8_8gb.json"), base),
        mapping=resolve_path(p.get("mapping", "builtin:ddr4_2rx8_default.map"), base),
        kernels=kernels,
        output=resolve_path(p.get("output", "out"), Path.cwd()),
        holdout=holdout,
        measurements=opt_path("measurements"),
        jobs=p.getint("jobs", fallback=1),
        seed=seed,
        rfo=rfo,
        weighted=p.getboolean("weighted", fallback=False),
        intercept=not p.getboolean("no_intercept", fallback=False),
        gross=p.getboolean("gross", fallback=False),
        strict_timing=p.getboolean("strict_timing", fallback=False),
        write_streams=p.getboolean("write_streams", fallback=True),
        planted_low=float(s.get("planted_low", 0.5)),
        planted_high=float(s.get("planted_high", 0.7)),
        planted_intercept=float(s.get("intercept_j", 1e-6)),
        noise=float(s.get("noise", 0.01)),
        sample_noise=float(s.get("sample_noise_w", 0.002)),
        static_power=float(s.get("static_power_w", 0.3984)),
        runs=int(s.get("runs", 3)),
    )


class _Stage:
    """Context manager tagging any exception with the stage name."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.debug("stage %s", self.name)

    def __exit__(self, et, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _simulate_one(w: WorkloadSpec, out: Path, device, mapping, cfg: "PipelineConfig"):
    sheet = dev.CalibratedCurrents.from_datasheet(device)
    with _Stage("workload-gen"):
        stream = w.stream()
        if cfg.write_streams:
            workload.write_stream_csv(stream, out / "streams" / f"{w.name}.csv")
    with _Stage("memctrl-sim"):
        trace = schedule(stream, mapping, device)
        tracestats.write_trace(trace, out / "traces" / f"{w.name}.trace")
    with _Stage("trace-stats"):
        st = tracestats.reduce(trace, timing="strict" if cfg.strict_timing else "ignore")
    with _Stage("power-model"):
        bd = power.energy(st, device, sheet)
        (out / "breakdown" / f"{w.name}.csv").write_text(power.breakdown_report(bd).to_csv())
    log.info("%s: %d ACT, %d RD, %d WR, %d cycles", w.name, st.n_act, st.n_rd, st.n_wr, st.c_total)
    return w.name, st


def _simulate(specs, out: Path, device, mapping, cfg: "PipelineConfig"):
    """Streams, traces, stats and datasheet breakdowns for a list of workloads.

    Workloads are independent; with ``jobs > 1`` they run on a thread pool
    and the results are still collected in config order.
    """
    for sub in ("streams", "traces", "breakdown"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(lambda w: _simulate_one(w, out, device, mapping, cfg), specs))
    else:
        results = [_simulate_one(w, out, device, mapping, cfg) for w in specs]
    tracestats.write_stats_csv(results, out / "stats.csv")
    return results


WINDOWS_FILE = "windows.txt"


def read_windows(path) -> Dict[str, Tuple[Tuple[float, float], Tuple[float, float]]]:
    """``file,idle_t0,idle_t1,run_t0,run_t1`` rows -> {file: (idle, run)}."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, r in enumerate(reader, 2):
            try:
                out[r["file"]] = ((float(r["idle_t0"]), float(r["idle_t1"])), (float(r["run_t0"]), float(r["run_t1"])))
            except (KeyError, TypeError, ValueError):
                raise ParseError(f"bad window row {r!r}", line=lineno, path=path) from None
    return out


def measure_directory(directory, device, benchmarks: Optional[Sequence[str]] = None) -> List[meas.RunEnergy]:
    """Net energy per benchmark from a directory of run files plus a window table.

    Files follow ``<bench>_<threads>_<channel>_<run>.csv``; the window table
    (``windows.txt``) gives each file's idle and run windows.  The static
    baseline is the mean idle power over all runs of a benchmark.
    """
    d = Path(directory)
    if not (d / WINDOWS_FILE).exists():
        raise MissingArtifacts(f"{d} has no {WINDOWS_FILE}")
    windows = read_windows(d / WINDOWS_FILE)
    groups: Dict[str, list] = {}
    for fname in sorted(windows):
        bench, _, channel, _ = meas.parse_run_name(fname)
        groups.setdefault(bench, []).append((fname, channel))
    order = list(benchmarks) if benchmarks is not None else sorted(groups)
    energies = []
    for bench in order:
        if bench not in groups:
            raise MissingArtifacts(f"no measurement runs for benchmark {bench!r} in {d}")
        runs, baselines = [], []
        for fname, channel in groups[bench]:
            idle, run = windows[fname]
            series = meas.read_series_csv(d / fname, channel=channel, dimms_per_channel=device.dimms_per_channel)
            baselines.append(meas.static_baseline(series, idle, device.vdd).power)
            runs.append((series, run))
        energies.append(meas.run_energy(runs, float(np.mean(baselines)), benchmark=bench))
    return energies


def _synthetic_measurements(stats, mdir: Path, device, planted, cfg: "PipelineConfig", salt: int):
    """Write noisy power series per run and their window table."""
    mdir.mkdir(parents=True, exist_ok=True)
    windows = ["file,idle_t0,idle_t1,run_t0,run_t1"]
    for idx, (name, st) in enumerate(stats):
        rng = np.random.default_rng([cfg.seed, salt, idx])
        for r in range(cfg.runs):
            series, idle, run = synthetic_series(
                st, device, planted, rng, static_power=cfg.static_power,
                noise=cfg.noise, sample_noise=cfg.sample_noise,
            )
            fname = f"{name}_{THREADS}_{series.channel}_{r}.csv"
            meas.write_series_csv(series, mdir / fname)
            windows.append(f"{fname},{idle[0]!r},{idle[1]!r},{run[0]!r},{run[1]!r}")
    (mdir / WINDOWS_FILE).write_text("\n".join(windows) + "\n")


def run_pipeline(cfg: PipelineConfig) -> Dict[str, float]:
    """Run every stage; returns the summary metrics.  Raises StageError on failure."""
    out = cfg.output
    with _Stage("device-spec"):
        device = dev.load_device_spec(cfg.device)
    with _Stage("address-map"):
        mapping = addrmap.load_mapping(cfg.mapping)
        mapping.validate_geometry(device)
    with _Stage("output"):
        if out.exists():
            shutil.rmtree(out)
        out.mkdir(parents=True)
        shutil.copyfile(cfg.device, out / "device.json")

    train = _simulate(cfg.kernels, out, device, mapping, cfg)
    hold = _simulate(cfg.holdout, out / "holdout", device, mapping, cfg) if cfg.holdout else []

    with _Stage("measurement"):
        rng = np.random.default_rng([cfg.seed, 0])
        planted = planted_currents(device, rng, cfg.planted_low, cfg.planted_high, cfg.planted_intercept)
        if cfg.measurements is None:
            power.write_currents(planted, out / "planted_currents.txt", "hidden currents behind the synthetic measurements")
            _synthetic_measurements(train, out / "measurements", device, planted, cfg, salt=1)
            if hold:
                _synthetic_measurements(hold, out / "holdout" / "measurements", device, planted, cfg, salt=2)
            mdir, hdir = out / "measurements", out / "holdout" / "measurements"
        else:
            mdir, hdir = cfg.measurements, cfg.measurements / "holdout"
        energies = measure_directory(mdir, device, [n for n, _ in train])
        meas.write_energies_csv(energies, out / "energies.csv")
        hold_energies = []
        if hold:
            hold_energies = measure_directory(hdir, device, [n for n, _ in hold])
            meas.write_energies_csv(hold_energies, out / "holdout" / "energies.csv")

    with _Stage("calibrate"):
        problem = build_problem(
            train, [(e.benchmark, e) for e in energies], device,
            fit_intercept=cfg.intercept, weighted=cfg.weighted, gross=cfg.gross,
        )
        result = calibrate(problem)
        power.write_currents(result.currents, out / "currents.txt", "calibrated currents")
        sheet = dev.CalibratedCurrents.from_datasheet(device)
        lines = ["id,measured_j,uncalibrated_j,calibrated_j,error_pct"]
        for (bench, st), m, p, err in zip(train, result.measured.tolist(), result.predicted.tolist(), result.relative_error.tolist()):
            unc = power.energy(st, device, sheet).e_total
            if cfg.gross:
                unc += dict((e.benchmark, e) for e in energies)[bench].static_energy
            lines.append(f"{bench},{m!r},{unc!r},{p!r},{err:.6f}")
        (out / "calibration.csv").write_text("\n".join(lines) + "\n")
        (out / "diagnostics.txt").write_text(result.diagnostics.format())

    summary = {
        "mean_calibration_error_pct": result.mean_relative_error,
        "max_calibration_error_pct": float(np.max(result.relative_error)),
    }
    with _Stage("validate"):
        if hold:
            by = {e.benchmark: e for e in hold_energies}
            rows = validate(result.currents, [(n, st, by[n]) for n, st in hold], device, gross=cfg.gross)
            (out / "validation.csv").write_text(validation_csv(rows))
            summary["mean_precal_holdout_error_pct"] = float(np.mean([abs(r.precal_error) for r in rows]))
            summary["mean_postcal_holdout_error_pct"] = float(np.mean([abs(r.postcal_error) for r in rows]))

    with _Stage("report"):
        for k in (*dev.CURRENT_NAMES, "intercept_b"):
            summary[k] = getattr(result.currents, k)
        (out / "summary.csv").write_text(
            "metric,value\n" + "".join(f"{k},{float(v)!r}\n" for k, v in summary.items())
        )
        text = [result.format(), result.diagnostics.format()]
        if hold:
            text.append("held-out workloads (signed % error vs measured)")
            text += [f"  {r.id:<16} pre {r.precal_error:+8.2f}   post {r.postcal_error:+8.2f}" for r in rows]
        (out / "summary.txt").write_text("\n".join(text) + "\n")
        emit_plots(out)
    return summary


# -- plot data --------------------------------------------------------------

PLOT_FILES = ("fig_breakdown.csv", "fig_calibration.csv", "fig_validation.csv", "fig_static.csv")


def emit_plots(directory) -> List[Path]:
    """Write the CSV tables behind the breakdown, calibration, validation and static-power figures."""
    d = Path(directory)
    need = [d / "breakdown", d / "calibration.csv", d / "currents.txt", d / "device.json"]
    missing = [str(p) for p in need if not p.exists()]
    if missing:
        raise MissingArtifacts(f"pipeline artifacts missing in {d}: {missing}")
    written = []

    lines = ["benchmark,component,energy_j,percent"]
    for f in sorted((d / "breakdown").glob("*.csv")):
        with open(f, newline="") as fh:
            for r in csv.DictReader(fh):
                lines.append(f"{f.stem},{r['component']},{r['energy_j']},{r['percent']}")
    written.append(_write(d / "fig_breakdown.csv", lines))

    device = dev.load_device_spec(d / "device.json")
    currents = power.read_currents(d / "currents.txt")
    sheet = dev.CalibratedCurrents.from_datasheet(device)
    lines = ["kind,name,measured_j,uncalibrated_j,calibrated_j,datasheet_a,calibrated_a"]
    with open(d / "calibration.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            lines.append(f"energy,{r['id']},{r['measured_j']},{r['uncalibrated_j']},{r['calibrated_j']},,")
    for k in dev.CURRENT_NAMES:
        lines.append(f"current,{k},,,,{float(getattr(sheet, k))!r},{float(getattr(currents, k))!r}")
    lines.append(f"intercept,intercept_b,,,,,{float(currents.intercept_b)!r}")
    written.append(_write(d / "fig_calibration.csv", lines))

    lines = ["id,measured_j,precal_j,postcal_j"]
    if (d / "validation.csv").exists():
        with open(d / "validation.csv", newline="") as fh:
            for r in csv.DictReader(fh):
                lines.append(f"{r['id']},{r['measured_j']},{r['precal_j']},{r['postcal_j']}")
    written.append(_write(d / "fig_validation.csv", lines))

    # idle stretches of every synthetic run (empty when energies came from outside)
    lines = ["file,channel,timestamp_s,power_w"]
    win = d / "measurements" / WINDOWS_FILE
    if win.exists():
        with open(win, newline="") as fh:
            for r in csv.DictReader(fh):
                s = meas.read_series_csv(d / "measurements" / r["file"])
                _, _, ch, _ = meas.parse_run_name(r["file"])
                sel = (s.t >= float(r["idle_t0"])) & (s.t <= float(r["idle_t1"]))
                lines += [f"{r['file']},{ch},{t!r},{p!r}" for t, p in zip(s.t[sel].tolist(), s.p[sel].tolist())]
    written.append(_write(d / "fig_static.csv", lines))
    return written


def _write(path: Path, lines) -> Path:
    path.write_text("\n".join(lines) + "\n")
    return path
