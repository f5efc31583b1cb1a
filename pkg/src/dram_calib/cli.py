"""``dram-calib`` command line.  Data goes to files or stdout, logs to stderr."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import addrmap, device as dev, measurement as meas, pipeline, power, tracestats, workload
from .calibrate import build_problem, calibrate, validate, validation_csv
from .errors import DramCalibError, IdMismatch
from .memctrl import schedule

log = logging.getLogger("dram_calib")


def _device(args):
    return dev.load_device_spec(args.device) if args.device else dev.default_device()


def _window(text: str):
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be t0:t1, got {text!r}") from None


def _out(path):
    """Open ``path`` for writing, ``-`` or None meaning stdout."""
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w"), True


# -- subcommands ------------------------------------------------------------


def cmd_gen_stream(args):
    s = workload.generate(args.kernel, args.elements, stride=args.stride, rfo=args.rfo)
    fh, close = _out(args.out)
    try:
        workload.write_stream_csv(s, fh)
    finally:
        if close:
            fh.close()
    log.info("%s: %d requests (%d reads, %d writes)", s.name, len(s), s.n_reads, s.n_writes)


def cmd_simulate(args):
    d = _device(args)
    amap = addrmap.load_mapping(args.map) if args.map else addrmap.default_mapping(d)
    amap.validate_geometry(d)
    stream = workload.read_stream_csv(args.stream)
    trace = schedule(stream, amap, d)
    fh, close = _out(args.out)
    try:
        fh.write(tracestats.format_trace(trace))
    finally:
        if close:
            fh.close()
    log.info("%d commands, %d cycles", len(trace), trace.end_cycle)


def cmd_stats(args):
    d = _device(args)
    trace = tracestats.parse_trace(args.trace, d)
    st = tracestats.reduce(trace, timing="strict" if args.strict_timing else "warn")
    sys.stdout.write(st.format_kv())
    sys.stdout.write(tracestats.stats_csv_header() + "\n")
    sys.stdout.write(tracestats.stats_csv_row(args.id or Path(args.trace).stem, st) + "\n")


def cmd_energy(args):
    d = _device(args)
    trace = tracestats.parse_trace(args.trace, d)
    st = tracestats.reduce(trace, timing="strict" if args.strict_timing else "warn")
    cur = power.read_currents(args.currents) if args.currents else dev.CalibratedCurrents.from_datasheet(d)
    bd = power.energy(st, d, cur, allow_negative=args.currents is not None)
    rep = power.breakdown_report(bd)
    sys.stdout.write(rep.format_table())
    sys.stdout.write(f"{'total':<12} {bd.e_total:14.6e} J\naverage power {bd.p_avg:.6g} W over {bd.duration:.6g} s\n\n")
    sys.stdout.write(rep.to_csv())
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())


def cmd_measure(args):
    d = _device(args)
    series = meas.read_series_csv(args.series, channel=args.channel, dimms_per_channel=d.dimms_per_channel, sort=args.sort)
    base = meas.static_baseline(series, args.idle, d.vdd)
    runs = [(series, w) for w in args.run]
    e = meas.run_energy(runs, base.power, benchmark=args.id or Path(args.series).stem)
    sys.stdout.write(
        f"static_power_w = {base.power!r}\nstatic_current_per_dimm_a = {base.current_per_dimm!r}\n"
        f"gross_energy_j = {e.gross_energy!r}\nstatic_energy_j = {e.static_energy!r}\n"
        f"net_energy_j = {e.net_energy!r}\nduration_s = {e.duration!r}\nn_runs = {e.n_runs_averaged}\n"
        f"stddev_j = {e.stddev!r}\n"
    )
    if args.out:
        meas.write_energies_csv([e], args.out)


def cmd_infer_map(args):
    samples = addrmap.read_samples_csv(args.samples)
    res = addrmap.infer_mapping(samples, addrmap.widths_from_samples(samples), address_bits=args.address_bits)
    for (coord, bit), free in sorted(res.underdetermined.items()):
        log.warning("%s.%d is underdetermined (%d free address bit(s)); free bits set to 0", coord, bit, free)
    text = addrmap.format_mapping(res.mapping)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_calibrate(args):
    d = _device(args)
    stats = tracestats.read_stats_csv(args.stats)
    energies = [(e.benchmark, e) for e in meas.read_energies_csv(args.energies)]
    prob = build_problem(stats, energies, d, fit_intercept=not args.no_intercept,
                             weighted=args.weighted, gross=args.gross)
    res = calibrate(prob)
    sys.stderr.write(res.diagnostics.format())
    sys.stdout.write(res.format())
    power.write_currents(res.currents, args.out, f"calibrated from {len(stats)} benchmark(s)")


def cmd_validate(args):
    d = _device(args)
    cur = power.read_currents(args.currents)
    hdir = Path(args.holdout)
    stats = tracestats.read_stats_csv(hdir / "stats.csv")
    by = {e.benchmark: e for e in meas.read_energies_csv(hdir / "energies.csv")}
    missing = [i for i, _ in stats if i not in by]
    if missing:
        raise IdMismatch(f"no measured energy for held-out benchmark(s) {missing}")
    rows = validate(cur, [(i, st, by[i]) for i, st in stats], d, gross=args.gross)
    fh, close = _out(args.out)
    try:
        fh.write(validation_csv(rows))
    finally:
        if close:
            fh.close()


def cmd_pipeline(args):
    cfg = pipeline.load_pipeline_config(args.config)
    if args.output:
        cfg.output = Path(args.output)
    if args.seed is not None:
        cfg.seed = args.seed
    for flag in ("rfo", "weighted", "gross", "strict_timing"):
        if getattr(args, flag):
            setattr(cfg, flag, True)
    if args.no_intercept:
        cfg.intercept = False
    if args.device:
        cfg.device = Path(args.device)
    summary = pipeline.run_pipeline(cfg)
    sys.stdout.write((cfg.output / "summary.txt").read_text())
    log.info("artifacts in %s (mean calibration error %.3f %%)", cfg.output, summary["mean_calibration_error_pct"])


def cmd_emit_plots(args):
    for p in pipeline.emit_plots(args.dir):
        log.info("wrote %s", p)


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dram-calib", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--device", help="device description JSON (default: shipped DDR4-2133 2Rx8)")
        p.set_defaults(func=func)
        return p

    p = add("gen-stream", cmd_gen_stream, "emit the request stream of a STREAM-style kernel as type,address CSV")
    p.add_argument("--kernel", required=True, choices=[k.value for k in workload.KernelKind])
    p.add_argument("--elements", required=True, type=int, help="array length in 8-byte elements")
    p.add_argument("--stride", type=int, default=workload.LINE_BYTES, help="bytes between accesses (multiple of 64)")
    p.add_argument("--rfo", action="store_true", help="add a read-for-ownership before writes to unread arrays")
    p.add_argument("--out", help="output file (default stdout)")

    p = add("simulate", cmd_simulate, "schedule a request stream into a DRAM command trace")
    p.add_argument("--stream", required=True)
    p.add_argument("--map", help="address mapping file (default: shipped bit-slice map)")
    p.add_argument("--out", help="trace file (default stdout)")

    p = add("stats", cmd_stats, "count commands and standby cycles of a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--id", help="row id for the CSV line (default: trace file stem)")
    p.add_argument("--strict-timing", action="store_true", help="reject traces with timing violations")

    p = add("energy", cmd_energy, "energy breakdown of a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--currents", help="currents file (default: datasheet values)")
    p.add_argument("--csv", help="also write the breakdown CSV here")
    p.add_argument("--strict-timing", action="store_true")

    p = add("measure", cmd_measure, "static baseline and net energy from a power series")
    p.add_argument("--series", required=True, help="timestamp_s,power_w CSV")
    p.add_argument("--idle", required=True, type=_window, help="idle window t0:t1 (s)")
    p.add_argument("--run", required=True, type=_window, action="append", help="run window t0:t1 (repeatable)")
    p.add_argument("--channel", help="channel label (default: file stem)")
    p.add_argument("--id", help="benchmark id for --out")
    p.add_argument("--sort", action="store_true", help="sort unsorted timestamps instead of failing")
    p.add_argument("--out", help="write an energies CSV row here")

    p = add("infer-map", cmd_infer_map, "recover an XOR address mapping from labelled samples")
    p.add_argument("--samples", required=True, help="CSV: address,channel,rank,bank_group,bank,row,column")
    p.add_argument("--address-bits", type=int)
    p.add_argument("--out", help="mapping file (default stdout)")

    p = add("calibrate", cmd_calibrate, "fit the calibrated currents to measured energies")
    p.add_argument("--stats", required=True)
    p.add_argument("--energies", required=True)
    p.add_argument("--out", required=True, help="currents file to write")
    p.add_argument("--weighted", action="store_true", help="weight rows by 1/stddev")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--gross", action="store_true", help="fit gross energy with the static part in the fixed term")

    p = add("validate", cmd_validate, "pre/post-calibration error on held-out benchmarks")
    p.add_argument("--currents", required=True)
    p.add_argument("--holdout", required=True, help="directory with stats.csv and energies.csv")
    p.add_argument("--gross", action="store_true")
    p.add_argument("--out", help="validation CSV (default stdout)")

    p = add("pipeline", cmd_pipeline, "run the whole workflow from a config file")
    p.add_argument("--config", required=True, help="INI config (shipped: demo.cfg)")
    p.add_argument("--output", help="override the output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--rfo", action="store_true")
    p.add_argument("--weighted", action="store_true")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--gross", action="store_true")
    p.add_argument("--strict-timing", action="store_true")

    p = add("emit-plots", cmd_emit_plots, "write fig_*.csv plot tables from pipeline artifacts")
    p.add_argument("--dir", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # own handler on the package logger, bound to the stderr of this call
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    log.propagate = False
    try:
        args.func(args)
    except (DramCalibError, OSError) as exc:
        log.error("%s", exc)
        return 1
    finally:
        log.removeHandler(handler)
        log.propagate = True
    return 0


if __name__ == "__main__":
    sys.exit(main())
