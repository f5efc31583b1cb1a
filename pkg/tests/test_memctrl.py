import numpy as np
import pytest

from dram_calib import addrmap, workload
from dram_calib.errors import MappingError
from dram_calib.memctrl import Cmd, Command, CommandTrace, check_timing, schedule
from dram_calib.workload import READ, WRITE, ExplicitStream

from conftest import random_device, small_mapping, with_timings


def explicit(pairs):
    ops = np.array([o for o, _ in pairs], dtype=np.int8)
    addrs = np.array([a for _, a in pairs], dtype=np.uint64)
    return ExplicitStream("t", ops, addrs)


def kinds(trace):
    return [Cmd(k).name for k in trace.kind.tolist()]


def test_single_read(device, mapping):
    tr = schedule(explicit([(READ, 0)]), mapping, device)
    t = device.timings
    assert kinds(tr) == ["ACT", "RD", "PREA"]
    assert tr.cycle.tolist()[:2] == [0, t.trcd]
    # PREA waits for tRAS after the ACT
    assert tr.cycle[2] == t.tras
    assert tr.end_cycle == t.tras + t.trp
    assert check_timing(tr) == []


def test_two_reads_same_row(device, mapping):
    tr = schedule(explicit([(READ, 0), (READ, 64)]), mapping, device)
    assert kinds(tr) == ["ACT", "RD", "RD", "PREA"]
    assert tr.cycle[2] - tr.cycle[1] == device.timings.tccd


def test_row_conflict_precharges(device, mapping):
    row_step = 1 << 18  # next row, same rank/bank
    tr = schedule(explicit([(WRITE, 0), (READ, row_step)]), mapping, device)
    assert kinds(tr) == ["ACT", "WR", "PRE", "ACT", "RD", "PREA"]
    c = tr.cycle.tolist()
    assert c[2] >= c[1] + device.write_recovery
    assert c[3] >= max(c[2] + device.timings.trp, c[0] + device.timings.trc)
    assert check_timing(tr) == []


def test_row_hits_match_geometry(device, mapping):
    """Sequential read of 2^20 elements: one ACT per 8 KiB row when refresh is off."""
    quiet = with_timings(device, trefi=10**9)
    s = workload.generate("read", 1 << 20)
    lines = (1 << 20) * 8 // 64
    lines_per_row = (1 << mapping.widths["column"]) * 8 // 64
    tr = schedule(s, mapping, quiet)
    n = tr.counts()
    assert n["RD"] == lines
    assert n["ACT"] == lines // lines_per_row
    assert n["RD"] - n["ACT"] == lines - lines // lines_per_row
    # with refresh, every REF can cost at most one extra ACT per rank
    tr = schedule(s, mapping, device)
    n = tr.counts()
    assert lines // lines_per_row <= n["ACT"] <= lines // lines_per_row + n["REF"]


def test_refresh_cadence(device, mapping):
    s = workload.generate("copy", 200_000)
    tr = schedule(s, mapping, device)
    refs = tr.cycle[tr.kind == Cmd.REF]
    per_rank = [refs[tr.rank[tr.kind == Cmd.REF] == r] for r in range(device.ranks)]
    tREFI = device.timings.trefi
    for r, times in enumerate(per_rank):
        assert len(times) == tr.end_cycle // tREFI
        # last rank lands on multiples of tREFI, earlier ranks just before
        assert np.all((times + device.ranks - 1 - r) % tREFI == 0)
    assert check_timing(tr) == []


def test_counts_match_requests(device, mapping):
    s = workload.generate("addition", 40_000)
    tr = schedule(s, mapping, device)
    n = tr.counts()
    assert n["RD"] == s.n_reads and n["WR"] == s.n_writes
    assert kinds(tr)[-1] == "PREA"


def test_deterministic(device, mapping):
    s = workload.generate("triad", 20_000)
    a, b = schedule(s, mapping, device), schedule(s, mapping, device)
    assert a.same_commands(b, with_addresses=True)


def test_mapping_errors(device, mapping):
    with pytest.raises(MappingError):
        schedule(explicit([(READ, 1 << 40)]), mapping, device)
    two_ch = addrmap.AddressMapping(34, {**mapping.masks, "channel": (1 << 33,)})
    with pytest.raises(MappingError, match="channel"):
        schedule(explicit([(READ, 0), (READ, 1 << 33)]), two_ch, device)
    tr = schedule(explicit([(READ, 0), (READ, 1 << 33)]), two_ch, device, channel=1)
    assert tr.counts()["RD"] == 1


def test_hand_built_trcd_violation(device):
    t = device.timings
    tr = CommandTrace.from_commands(
        device,
        [Command(0, Cmd.ACT, 0, 0, 0, 1, 0), Command(1, Cmd.RD, 0, 0, 0, 0, 0),
         Command(t.tras, Cmd.PREA, 0, 0, 0, 0, 0)],
        end_cycle=t.tras + t.trp,
    )
    v = check_timing(tr)
    assert [x.rule for x in v] == ["tRCD"]
    assert v[0].deficit == t.trcd - 1
    assert v[0].first.kind == Cmd.ACT and v[0].second.kind == Cmd.RD
    assert "tRCD" in str(v[0])


@pytest.mark.parametrize(
    "cmds, rule",
    [
        ([(0, Cmd.ACT, 0, 0, 0), (5, Cmd.PRE, 0, 0, 0)], "tRAS"),
        ([(0, Cmd.ACT, 0, 0, 0), (36, Cmd.PRE, 0, 0, 0), (40, Cmd.ACT, 0, 0, 0), (80, Cmd.PREA, 0, 0, 0)], "tRP"),
        ([(0, Cmd.ACT, 0, 0, 0), (15, Cmd.RD, 0, 0, 0), (16, Cmd.RD, 0, 0, 0), (60, Cmd.PREA, 0, 0, 0)], "tCCD"),
        ([(0, Cmd.ACT, 0, 0, 0), (15, Cmd.WR, 0, 0, 0), (40, Cmd.PRE, 0, 0, 0)], "tWR"),
        ([(0, Cmd.ACT, 0, 0, 0), (30, Cmd.RD, 0, 0, 0), (36, Cmd.PRE, 0, 0, 0)], "tRTP"),
        ([(0, Cmd.REF, 0, 0, 0), (10, Cmd.ACT, 0, 0, 0), (60, Cmd.PREA, 0, 0, 0)], "tRFC"),
        ([(0, Cmd.RD, 0, 0, 0)], "closed"),
    ],
)
def test_constructed_violations(device, cmds, rule):
    tr = CommandTrace.from_commands(device, [Command(c, k, r, g, b, 0, 0) for c, k, r, g, b in cmds])
    rules = [v.rule for v in check_timing(tr)]
    assert any(rule in r for r in rules), rules


def test_refresh_gap_violation(device):
    t = device.timings
    tr = CommandTrace.from_commands(device, [], end_cycle=3 * t.trefi)
    assert any("tREFI" in v.rule for v in check_timing(tr))


@pytest.mark.parametrize("seed", range(40))
def test_fuzzed_devices_are_legal(seed):
    rng = np.random.default_rng(seed)
    d = random_device(rng)
    m = small_mapping(d, xor=bool(seed % 2))
    n = int(rng.integers(1, 400))
    lines = rng.integers(0, 1 << (m.address_bits - 6), n).astype(np.uint64) * np.uint64(64)
    s = ExplicitStream("fuzz", (rng.random(n) < 0.4).astype(np.int8), lines)
    tr = schedule(s, m, d)
    assert check_timing(tr) == []
    n_ref = tr.counts()["REF"] // d.ranks
    assert abs(n_ref - tr.end_cycle // d.timings.trefi) <= 1


def test_refresh_margin_guard(device):
    with pytest.raises(ValueError, match="tREFI"):
        schedule(explicit([(READ, 0)]), addrmap.default_mapping(device),
                 with_timings(device, trefi=device.timings.trfc + 1))
