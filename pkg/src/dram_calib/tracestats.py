"""Trace files and their reduction to command counts and standby dwell times.

Trace file format, one command per line::

    # end_cycle=1234
    <cycle>,<CMD>,<rank>,<bank_group>,<bank>

with CMD one of ACT, PRE, PREA, RD, WR, REF.  Lines starting with ``#`` are
comments; the optional ``end_cycle`` comment carries the simulated length.
"""

from __future__ import annotations

import csv
import io
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .device import DeviceSpec
from .errors import IllegalTrace, NonMonotonicCycle, ParseError
from .memctrl import CMD_NAMES, Cmd, CommandTrace, check_timing

_END = re.compile(r"#\s*end_cycle\s*=\s*(\d+)")


def format_trace(trace: CommandTrace, header: bool = True) -> str:
    out = io.StringIO()
    if header:
        out.write(f"# device={trace.device.name}\n# end_cycle={trace.end_cycle}\n")
    names = CMD_NAMES
    cols = [trace.cycle.tolist(), trace.kind.tolist(), trace.rank.tolist(),
            trace.bank_group.tolist(), trace.bank.tolist()]
    out.write("".join(f"{t},{names[k]},{r},{g},{b}\n" for t, k, r, g, b in zip(*cols)))
    return out.getvalue()


def write_trace(trace: CommandTrace, path) -> None:
    Path(path).write_text(format_trace(trace))


def _completion(device: DeviceSpec, kind: int, cycle: int) -> int:
    t = device.timings
    return cycle + {
        Cmd.ACT: t.trcd,
        Cmd.PRE: t.trp,
        Cmd.PREA: t.trp,
        Cmd.RD: t.trl + device.burst_cycles,
        Cmd.WR: device.write_recovery,
        Cmd.REF: t.trfc,
    }[Cmd(kind)]


def parse_trace_text(text: str, device: DeviceSpec, path=None) -> CommandTrace:
    cols: List[List[int]] = [[] for _ in range(5)]
    end_cycle: Optional[int] = None
    last = -1
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _END.match(line)
            if m:
                end_cycle = int(m.group(1))
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 5:
            raise ParseError(f"expected 5 fields, got {len(parts)}: {raw!r}", line=lineno, path=path)
        try:
            kind = CMD_NAMES.index(parts[1].upper())
        except ValueError:
            raise ParseError(f"unknown command {parts[1]!r}", line=lineno, path=path) from None
        try:
            cycle, rank, bg, bank = (int(parts[i]) for i in (0, 2, 3, 4))
        except ValueError:
            raise ParseError(f"non-integer field in {raw!r}", line=lineno, path=path) from None
        if min(cycle, rank, bg, bank) < 0:
            raise ParseError(f"negative field in {raw!r}", line=lineno, path=path)
        if cycle < last:
            raise NonMonotonicCycle(f"cycle {cycle} after {last}", line=lineno, path=path)
        last = cycle
        for c, v in zip(cols, (cycle, kind, rank, bg, bank)):
            c.append(v)
    arr = [np.array(c, dtype=np.int64) for c in cols]
    if end_cycle is None:
        end_cycle = max((_completion(device, k, t) for t, k in zip(cols[0], cols[1])), default=0)
    zeros = np.zeros(len(arr[0]), dtype=np.int64)
    return CommandTrace(
        device=device, cycle=arr[0], kind=arr[1], rank=arr[2], bank_group=arr[3], bank=arr[4],
        row=zeros, column=zeros.copy(), end_cycle=int(end_cycle),
    )


def parse_trace(path, device: DeviceSpec) -> CommandTrace:
    path = Path(path)
    return parse_trace_text(path.read_text(), device, path=path)


STAT_FIELDS = ("n_act", "n_pre", "n_rd", "n_wr", "n_ref", "c_total", "c_act_stdby", "c_pre_stdby", "ranks")


@dataclass(frozen=True)
class CommandStats:
    """Command counts and standby dwell cycles (dwell summed over ranks)."""

    n_act: int = 0
    n_pre: int = 0
    n_rd: int = 0
    n_wr: int = 0
    n_ref: int = 0
    c_total: int = 0
    c_act_stdby: int = 0
    c_pre_stdby: int = 0
    ranks: int = 1
    bank_acts: Dict[int, int] = field(default_factory=dict, compare=False)
    bank_open_cycles: Dict[int, int] = field(default_factory=dict, compare=False)

    def as_dict(self) -> Dict[str, int]:
        return {k: getattr(self, k) for k in STAT_FIELDS}

    def conserved(self) -> bool:
        return self.c_act_stdby + self.c_pre_stdby == self.c_total * self.ranks

    def format_kv(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())


def reduce(trace: CommandTrace, timing: str = "ignore") -> CommandStats:
    """Count commands and sweep per-bank open/closed state over the trace.

    A bank counts as open from its ACT cycle (inclusive) to its PRE/PREA
    cycle (exclusive); a rank is in active standby whenever one of its banks
    is open.  PREA adds one precharge per bank it actually closes, and a PRE
    to an already closed bank is not counted.  ``timing`` selects what to do
    with timing violations: ``"ignore"``, ``"warn"`` or ``"strict"`` (raise
    IllegalTrace).
    """
    if timing not in ("ignore", "warn", "strict"):
        raise ValueError(f"timing must be ignore/warn/strict, got {timing!r}")
    if timing != "ignore":
        bad = check_timing(trace)
        if bad and timing == "strict":
            raise IllegalTrace(f"{len(bad)} timing violation(s), first: {bad[0]}", bad)
        if bad:
            warnings.warn(f"trace has {len(bad)} timing violation(s), first: {bad[0]}", stacklevel=2)

    dev = trace.device
    R, BPR, BPG = dev.ranks, dev.banks_per_rank, dev.banks_per_group
    end = trace.end_cycle
    n = np.bincount(trace.kind, minlength=len(Cmd))
    open_since = [-1] * (R * BPR)
    n_open = [0] * R
    since = [0] * R  # start of the current rank state interval
    act_cyc = [0] * R
    bank_acts: Dict[int, int] = {}
    bank_open: Dict[int, int] = {}
    n_pre = 0
    ACT, PRE, PREA = int(Cmd.ACT), int(Cmd.PRE), int(Cmd.PREA)

    def close(b, t):
        nonlocal n_pre
        r = b // BPR
        bank_open[b] = bank_open.get(b, 0) + t - open_since[b]
        open_since[b] = -1
        n_pre += 1
        n_open[r] -= 1
        if n_open[r] == 0:
            act_cyc[r] += t - since[r]
            since[r] = t

    for t, k, r, g, b in zip(
        np.minimum(trace.cycle, end).tolist(), trace.kind.tolist(), trace.rank.tolist(),
        trace.bank_group.tolist(), trace.bank.tolist(),
    ):
        if k == ACT:
            fb = r * BPR + g * BPG + b
            bank_acts[fb] = bank_acts.get(fb, 0) + 1
            if open_since[fb] >= 0:
                continue  # illegal re-ACT; keep the bank open from its first ACT
            open_since[fb] = t
            if n_open[r] == 0:
                since[r] = t
            n_open[r] += 1
        elif k == PRE:
            fb = r * BPR + g * BPG + b
            if open_since[fb] >= 0:
                close(fb, t)
        elif k == PREA:
            for fb in range(r * BPR, (r + 1) * BPR):
                if open_since[fb] >= 0:
                    close(fb, t)
    for fb in range(R * BPR):
        if open_since[fb] >= 0:
            bank_open[fb] = bank_open.get(fb, 0) + end - open_since[fb]
    for r in range(R):
        if n_open[r]:
            act_cyc[r] += end - since[r]
    c_act = sum(act_cyc)
    return CommandStats(
        n_act=int(n[Cmd.ACT]),
        n_pre=n_pre,
        n_rd=int(n[Cmd.RD]),
        n_wr=int(n[Cmd.WR]),
        n_ref=int(n[Cmd.REF]),
        c_total=end,
        c_act_stdby=c_act,
        c_pre_stdby=end * R - c_act,
        ranks=R,
        bank_acts=bank_acts,
        bank_open_cycles=bank_open,
    )


# -- stats CSV ----------------------------------------------------------------


def stats_csv_header() -> str:
    return ",".join(("id",) + STAT_FIELDS)


def stats_csv_row(bench_id: str, stats: CommandStats) -> str:
    return ",".join([bench_id] + [str(getattr(stats, k)) for k in STAT_FIELDS])


def write_stats_csv(rows, path) -> None:
    """``rows`` is an iterable of ``(id, CommandStats)``."""
    lines = [stats_csv_header()] + [stats_csv_row(i, s) for i, s in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_stats_csv(path) -> List[tuple]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", *STAT_FIELDS} - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"stats CSV lacks column(s) {sorted(missing)}", path=path)
        for lineno, rec in enumerate(reader, 2):
            try:
                out.append((rec["id"], CommandStats(**{k: int(rec[k]) for k in STAT_FIELDS})))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
    return out
