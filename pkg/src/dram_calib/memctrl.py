"""In-order, open-page DDR4 command scheduler and timing checker.

``schedule`` turns a request stream into a timing-legal command trace: one
request at a time, rows left open until a conflict, all-bank refresh issued
at exact multiples of tREFI (with a PREA early enough to meet it), and a
final PREA.  ``check_timing`` is an independent validator for any trace,
including externally produced ones.
"""

from __future__ import annotations

import enum
from array import array
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional

import numpy as np

from .addrmap import AddressMapping, decompose_many
from .device import DeviceSpec
from .errors import AddressOutOfRange, MappingError
from .workload import WRITE


class Cmd(enum.IntEnum):
    ACT = 0
    PRE = 1
    PREA = 2
    RD = 3
    WR = 4
    REF = 5


CMD_NAMES = tuple(c.name for c in Cmd)


class Command(NamedTuple):
    cycle: int
    kind: Cmd
    rank: int = 0
    bank_group: int = 0
    bank: int = 0
    row: int = 0
    column: int = 0

    def __str__(self):
        return f"{self.kind.name}@{self.cycle}(r{self.rank} bg{self.bank_group} b{self.bank})"


_FIELDS = ("cycle", "kind", "rank", "bank_group", "bank", "row", "column")


@dataclass(eq=False)
class CommandTrace:
    """Commands as parallel int64 arrays, sorted by cycle."""

    device: DeviceSpec
    cycle: np.ndarray
    kind: np.ndarray
    rank: np.ndarray
    bank_group: np.ndarray
    bank: np.ndarray
    row: np.ndarray
    column: np.ndarray
    end_cycle: int

    @classmethod
    def from_commands(cls, device, commands: Iterable, end_cycle: Optional[int] = None) -> "CommandTrace":
        cols = {f: [] for f in _FIELDS}
        for c in commands:
            c = Command(*c)
            for f, v in zip(_FIELDS, c):
                cols[f].append(int(v))
        arrs = {f: np.array(v, dtype=np.int64) for f, v in cols.items()}
        if end_cycle is None:
            end_cycle = int(arrs["cycle"][-1]) + 1 if len(arrs["cycle"]) else 0
        return cls(device=device, end_cycle=int(end_cycle), **arrs)

    def __len__(self) -> int:
        return len(self.cycle)

    def __iter__(self):
        kinds = list(Cmd)
        for t, k, r, g, b, row, col in zip(*(getattr(self, f).tolist() for f in _FIELDS)):
            yield Command(t, kinds[k], r, g, b, row, col)

    def counts(self):
        n = np.bincount(self.kind, minlength=len(Cmd))
        return {c.name: int(n[c]) for c in Cmd}

    def same_commands(self, other: "CommandTrace", with_addresses: bool = False) -> bool:
        """Equality on the fields the trace file format carries (and optionally row/column)."""
        fields = _FIELDS if with_addresses else _FIELDS[:5]
        return self.end_cycle == other.end_cycle and all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in fields
        )


def refresh_margin(device: DeviceSpec) -> int:
    """Cycles of look-ahead that guarantee a REF can land exactly on its due cycle.

    Covers the longest advance of one request (PRE, ACT, column command) plus
    a PREA per rank and tRP before the REF.
    """
    t = device.timings
    pre_wait = max(t.tras, t.trtp, device.write_recovery)
    per_request = pre_wait + t.trc + t.trcd + t.tccd + 1
    per_refresh = pre_wait + device.ranks + t.trp
    return per_request + per_refresh + 1


class _Emitter:
    def __init__(self):
        self.cols = [array("q") for _ in _FIELDS]

    def __call__(self, *vals):
        for a, v in zip(self.cols, vals):
            a.append(v)

    def arrays(self):
        return {f: np.frombuffer(a, dtype=np.int64).copy() if len(a) else np.zeros(0, np.int64)
                for f, a in zip(_FIELDS, self.cols)}


def schedule(stream, mapping: AddressMapping, device: DeviceSpec, channel: Optional[int] = None) -> CommandTrace:
    """Serve ``stream`` in order and return the resulting command trace.

    All addresses must fall in one channel; pass ``channel`` to keep only the
    requests of that channel instead.
    """
    t = device.timings
    tRCD, tRP, tRAS, tRC, tCCD, tRTP = t.trcd, t.trp, t.tras, t.trc, t.tccd, t.trtp
    tRFC, tREFI = t.trfc, t.trefi
    tWRREC = device.write_recovery
    R, BPR, BPG = device.ranks, device.banks_per_rank, device.banks_per_group
    margin = refresh_margin(device)
    if tREFI <= margin + tRFC + R:
        raise ValueError(f"tREFI={tREFI} too short for refresh look-ahead {margin} + tRFC {tRFC}")

    NB = R * BPR
    NEG = -(1 << 40)
    open_row = [-1] * NB
    act_t = [NEG] * NB
    pre_t = [NEG] * NB
    rd_t = [NEG] * NB
    wr_ok = [NEG] * NB
    col_t = [NEG] * R
    now = -1
    ref_due = tREFI
    emit = _Emitter()
    ACT, PRE, PREA, RD, WR, REF = (int(c) for c in Cmd)
    seen_channel = channel

    def refresh():
        nonlocal now, ref_due
        for r in range(R):
            banks = [b for b in range(r * BPR, (r + 1) * BPR) if open_row[b] >= 0]
            if not banks:
                continue
            tp = now + 1
            for b in banks:
                tp = max(tp, act_t[b] + tRAS, rd_t[b] + tRTP, wr_ok[b])
            emit(tp, PREA, r, 0, 0, 0, 0)
            for b in banks:
                open_row[b] = -1
                pre_t[b] = tp
            now = tp
        # one REF per rank on consecutive cycles, the last one on the due cycle
        t0 = max(ref_due - R + 1, now + 1, max(pre_t) + tRP)
        for r in range(R):
            emit(t0 + r, REF, r, 0, 0, 0, 0)
        now = t0 + R - 1 + tRFC - 1
        ref_due += tREFI

    for ops, addrs in stream.chunks():
        try:
            co = decompose_many(mapping, addrs)
        except AddressOutOfRange as exc:
            raise MappingError(str(exc)) from None
        ch = co["channel"]
        if channel is None and len(ch):
            if seen_channel is None:
                seen_channel = int(ch[0])
            if np.any(ch != seen_channel):
                raise MappingError("stream spans several channels; schedule one channel at a time")
        elif channel is not None:
            keep = ch == channel
            ops, co = ops[keep], {k: v[keep] for k, v in co.items()}
        rk, bg, bk = co["rank"], co["bank_group"], co["bank"]
        if len(rk) and (rk.max() >= R or bg.max() >= device.bank_groups or bk.max() >= BPG):
            raise MappingError("mapping produces rank/bank indices outside the device geometry")
        flat = (rk * BPR + bg * BPG + bk).tolist()
        for op, b, r, g, bb, row, col in zip(
            ops.tolist(), flat, rk.tolist(), bg.tolist(), bk.tolist(), co["row"].tolist(), co["column"].tolist()
        ):
            if now + margin >= ref_due:
                refresh()
            if open_row[b] != row:
                if open_row[b] >= 0:
                    tp = max(now + 1, act_t[b] + tRAS, rd_t[b] + tRTP, wr_ok[b])
                    emit(tp, PRE, r, g, bb, 0, 0)
                    pre_t[b] = now = tp
                ta = max(now + 1, pre_t[b] + tRP, act_t[b] + tRC)
                emit(ta, ACT, r, g, bb, row, 0)
                act_t[b] = now = ta
                open_row[b] = row
            tc = max(now + 1, act_t[b] + tRCD, col_t[r] + tCCD)
            if op == WRITE:
                emit(tc, WR, r, g, bb, 0, col)
                wr_ok[b] = tc + tWRREC
            else:
                emit(tc, RD, r, g, bb, 0, col)
                rd_t[b] = tc
            col_t[r] = now = tc

    end = now + 1
    if now >= 0:
        if now + margin >= ref_due:
            refresh()
        # ``now`` already covers tRFC after any refresh
        end = max(now + 1, max(col_t) + t.trl + device.burst_cycles)
        for r in range(R):
            banks = [b for b in range(r * BPR, (r + 1) * BPR) if open_row[b] >= 0]
            if not banks:
                continue
            tp = now + 1
            for b in banks:
                tp = max(tp, act_t[b] + tRAS, rd_t[b] + tRTP, wr_ok[b])
            emit(tp, PREA, r, 0, 0, 0, 0)
            for b in banks:
                open_row[b] = -1
                pre_t[b] = tp
            now = tp
            end = max(end, tp + tRP)
    return CommandTrace(device=device, end_cycle=int(max(end, 0)), **emit.arrays())


# -- timing validation ------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    rule: str
    first: Optional[Command]
    second: Command
    deficit: int

    def __str__(self):
        a = f"{self.first} -> " if self.first is not None else ""
        return f"{self.rule}: {a}{self.second} short by {self.deficit} cycle(s)"


def check_timing(trace: CommandTrace) -> List[Violation]:
    """List every timing or protocol violation in ``trace`` (empty when legal)."""
    dev = trace.device
    t = dev.timings
    WRREC = dev.write_recovery
    R, BPR, BPG = dev.ranks, dev.banks_per_rank, dev.banks_per_group
    out: List[Violation] = []

    last_act: List[Optional[Command]] = [None] * (R * BPR)
    last_pre: List[Optional[Command]] = [None] * (R * BPR)
    last_rd: List[Optional[Command]] = [None] * (R * BPR)
    last_wr: List[Optional[Command]] = [None] * (R * BPR)
    is_open = [False] * (R * BPR)
    last_col: List[Optional[Command]] = [None] * R
    last_ref: List[Optional[Command]] = [None] * R
    prev: Optional[Command] = None

    def need(rule, first, second, gap):
        if first is not None and second.cycle - first.cycle < gap:
            out.append(Violation(rule, first, second, gap - (second.cycle - first.cycle)))

    def close(b, cmd):
        if is_open[b]:
            need("tRAS", last_act[b], cmd, t.tras)
            need("tRTP", last_rd[b], cmd, t.trtp)
            need("tWR", last_wr[b], cmd, WRREC)
        is_open[b] = False
        last_pre[b] = cmd

    for cmd in trace:
        if prev is not None and cmd.cycle < prev.cycle:
            out.append(Violation("order", prev, cmd, prev.cycle - cmd.cycle))
        prev = cmd
        r = cmd.rank
        if not 0 <= r < R:
            out.append(Violation("rank-range", None, cmd, 0))
            continue
        ref = last_ref[r]
        if ref is not None and cmd.kind != Cmd.REF:
            need("tRFC", ref, cmd, t.trfc)
        if cmd.kind == Cmd.REF:
            for b in range(r * BPR, (r + 1) * BPR):
                if is_open[b]:
                    out.append(Violation("REF-open-bank", last_act[b], cmd, 0))
                need("tRP", last_pre[b], cmd, t.trp)
            gap = cmd.cycle - (ref.cycle if ref is not None else 0)
            if gap > t.trefi:
                out.append(Violation("tREFI", ref, cmd, gap - t.trefi))
            last_ref[r] = cmd
            continue
        if cmd.kind == Cmd.PREA:
            for b in range(r * BPR, (r + 1) * BPR):
                close(b, cmd)
            continue
        if not (0 <= cmd.bank_group < dev.bank_groups and 0 <= cmd.bank < BPG):
            out.append(Violation("bank-range", None, cmd, 0))
            continue
        b = r * BPR + cmd.bank_group * BPG + cmd.bank
        if cmd.kind == Cmd.PRE:
            close(b, cmd)
        elif cmd.kind == Cmd.ACT:
            if is_open[b]:
                out.append(Violation("ACT-open-bank", last_act[b], cmd, 0))
            need("tRP", last_pre[b], cmd, t.trp)
            need("tRC", last_act[b], cmd, t.trc)
            last_act[b] = cmd
            last_rd[b] = last_wr[b] = None
            is_open[b] = True
        else:
            if not is_open[b]:
                out.append(Violation("column-closed-bank", last_pre[b], cmd, 0))
            need("tRCD", last_act[b], cmd, t.trcd)
            need("tCCD", last_col[r], cmd, t.tccd)
            last_col[r] = cmd
            if cmd.kind == Cmd.RD:
                last_rd[b] = cmd
            else:
                last_wr[b] = cmd

    end = Command(trace.end_cycle, Cmd.REF)
    for r in range(R):
        ref = last_ref[r]
        gap = trace.end_cycle - (ref.cycle if ref is not None else 0)
        if gap > t.trefi:
            out.append(Violation("tREFI", ref, end._replace(rank=r), gap - t.trefi))
    return out
