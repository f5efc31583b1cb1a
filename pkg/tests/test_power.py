import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dram_calib import power
from dram_calib.device import CURRENT_NAMES, CalibratedCurrents
from dram_calib.errors import NegativeComponent, ParseError
from dram_calib.tracestats import CommandStats


def stats_strategy():
    return st.builds(
        lambda a, rd, wr, ref, tot, frac, ranks: CommandStats(
            n_act=a, n_pre=a, n_rd=rd, n_wr=wr, n_ref=ref, c_total=tot,
            c_act_stdby=int(tot * ranks * frac), c_pre_stdby=tot * ranks - int(tot * ranks * frac), ranks=ranks,
        ),
        st.integers(0, 10**6), st.integers(0, 10**7), st.integers(0, 10**7), st.integers(0, 10**4),
        st.integers(1, 10**9), st.floats(0, 1), st.sampled_from([1, 2, 4]),
    )


def test_single_term_example(device):
    d = dataclasses.replace(device, tck=0.75)
    s = CommandStats(c_total=10**9, c_pre_stdby=10**9, ranks=1)
    bd = power.energy(s, d, CalibratedCurrents.from_datasheet(d))
    assert d.idd.idd2n == 0.040 and d.vdd == 1.2
    assert bd.e_total == pytest.approx(1.2 * 0.75e-9 * 1e9 * 0.04, rel=1e-12)
    assert bd.e_total == pytest.approx(0.036, rel=1e-12)
    assert bd.p_avg == pytest.approx(0.036 / 0.75, rel=1e-12)


def test_act_equal_asb_gives_zero(device):
    c = dataclasses.replace(CalibratedCurrents.from_datasheet(device), i_act=0.055, i_asb=0.055)
    s = CommandStats(n_act=12345, n_pre=12345, c_total=10**6, c_act_stdby=10**6, c_pre_stdby=10**6, ranks=2)
    assert power.energy(s, device, c).e_act == 0.0


def test_hand_computed_trace(device):
    """ACT@0, RD@tRCD, PREA@tRAS on a 2-rank device, end = tRAS + tRP."""
    t = device.timings
    end = t.tras + t.trp
    s = CommandStats(n_act=1, n_pre=1, n_rd=1, c_total=end, c_act_stdby=t.tras, c_pre_stdby=2 * end - t.tras, ranks=2)
    c = CalibratedCurrents(i_act=0.06, i_pre=0.05, i_asb=0.045, i_rd=0.15, i_wr=0.14, intercept_b=1e-9)
    V, tck = 1.2, 0.9375e-9
    want = (
        V * (0.06 - 0.045) * 36 * tck
        + V * (0.05 - 0.040) * 15 * tck
        + V * (0.15 - 0.045) * 4 * tck
        + V * tck * 36 * 0.045
        + V * tck * (2 * 51 - 36) * 0.040
        + 1e-9
    )
    bd = power.energy(s, device, c)
    assert bd.e_total == pytest.approx(want, rel=1e-12)
    assert bd.e_wr == 0.0 and bd.e_ref == 0.0
    assert bd.duration == pytest.approx(51 * tck, rel=1e-15)


def test_total_is_ordered_sum(device):
    s = CommandStats(n_act=7, n_pre=7, n_rd=50, n_wr=20, n_ref=3, c_total=5000, c_act_stdby=4000, c_pre_stdby=6000, ranks=2)
    bd = power.energy(s, device, CalibratedCurrents.from_datasheet(device))
    acc = 0.0
    for k in power.COMPONENTS:
        acc += getattr(bd, k)
    assert bd.e_total == acc


@settings(max_examples=200, deadline=None)
@given(stats_strategy(), st.lists(st.floats(0.0, 0.3), min_size=5, max_size=5), st.floats(0, 1e-3))
def test_linearity_identity(s, cur, b):
    from dram_calib.device import default_device

    d = default_device()
    c = CalibratedCurrents(*cur, intercept_b=b)
    row = power.coefficients(s, d)
    e = power.energy(s, d, c, allow_negative=True).e_total
    assert row.predict(c) == pytest.approx(e, rel=1e-12, abs=1e-300)


def test_coefficient_zeros(device):
    idle = power.coefficients(CommandStats(c_total=1000, c_act_stdby=300, c_pre_stdby=1700, ranks=2), device)
    assert (idle.coeff_i_act, idle.coeff_i_pre, idle.coeff_i_rd, idle.coeff_i_wr) == (0, 0, 0, 0)
    assert idle.coeff_i_asb > 0 and idle.e_const > 0
    reads = power.coefficients(CommandStats(n_act=1, n_pre=1, n_rd=10, c_total=100, c_act_stdby=80, c_pre_stdby=120, ranks=2), device)
    assert reads.coeff_i_wr == 0


def test_negative_component(device):
    c = dataclasses.replace(CalibratedCurrents.from_datasheet(device), i_rd=0.01)
    s = CommandStats(n_act=1, n_pre=1, n_rd=1, c_total=100, c_act_stdby=60, c_pre_stdby=140, ranks=2)
    with pytest.raises(NegativeComponent, match="e_rd"):
        power.energy(s, device, c)
    assert power.energy(s, device, c, allow_negative=True).e_rd < 0


def test_doubling(device):
    s = CommandStats(n_act=7, n_pre=7, n_rd=50, n_wr=20, n_ref=3, c_total=5000, c_act_stdby=4000, c_pre_stdby=6000, ranks=2)
    s2 = CommandStats(**{k: 2 * v for k, v in s.as_dict().items() if k != "ranks"}, ranks=2)
    c = dataclasses.replace(CalibratedCurrents.from_datasheet(device), intercept_b=1e-6)
    a, b = power.energy(s, device, c), power.energy(s2, device, c)
    for k in power.COMPONENTS:
        want = getattr(a, k) if k == "e_intercept" else 2 * getattr(a, k)
        assert getattr(b, k) == pytest.approx(want, rel=1e-14)


def test_monotone_in_currents(device):
    s = CommandStats(n_act=70, n_pre=70, n_rd=500, n_wr=200, n_ref=3, c_total=5000, c_act_stdby=4000, c_pre_stdby=6000, ranks=2)
    row = power.coefficients(s, device)
    base = CalibratedCurrents.from_datasheet(device)
    e0 = power.energy(s, device, base, allow_negative=True).e_total
    for k, coef in zip(CURRENT_NAMES, row.vector()):
        bumped = dataclasses.replace(base, **{k: getattr(base, k) + 0.01})
        e1 = power.energy(s, device, bumped, allow_negative=True).e_total
        assert np.sign(e1 - e0) == np.sign(coef)


def test_addition_rd_wr_ratio(desk_stats, device):
    s = dict(desk_stats)["addition"]
    c = CalibratedCurrents.from_datasheet(device)
    bd = power.energy(s, device, c)
    assert s.n_rd / s.n_wr == pytest.approx(2.0)
    want = (c.i_rd - c.i_asb) * s.n_rd / ((c.i_wr - c.i_asb) * s.n_wr)
    assert bd.e_rd / bd.e_wr == pytest.approx(want, rel=1e-12)


def test_breakdown_report(desk_stats, device):
    bd = power.energy(dict(desk_stats)["addition"], device, CalibratedCurrents.from_datasheet(device))
    rep = power.breakdown_report(bd)
    pct = [p for _, _, p in rep.rows]
    assert sum(pct) == pytest.approx(100.0, abs=0.01)
    assert [e for _, e, _ in rep.rows] == sorted((e for _, e, _ in rep.rows), reverse=True)
    assert rep.to_csv().splitlines()[0] == "component,energy_j,percent"
    assert not rep.empty


def test_breakdown_single_and_empty(device):
    zero = CalibratedCurrents(0, 0, 0, 0, 0)
    s = CommandStats(c_total=0, ranks=2)
    rep = power.breakdown_report(power.energy(s, device, zero, allow_negative=True))
    assert rep.empty and all(p == 0 for _, _, p in rep.rows)
    assert "empty" in rep.format_table()
    only_b = power.energy(s, device, CalibratedCurrents(0, 0, 0, 0, 0, intercept_b=1.0), allow_negative=True)
    rep = power.breakdown_report(only_b)
    assert rep.rows[0] == ("e_intercept", 1.0, 100.0)


def test_currents_file(tmp_path, device):
    c = CalibratedCurrents(0.03, 0.02, 0.04, 0.1, 0.09, 2.5e-7)
    p = tmp_path / "c.txt"
    power.write_currents(c, p, "fitted\ntwo lines")
    text = p.read_text()
    assert text.startswith("# fitted\n# two lines\n") and "i_rd_a = 0.1" in text
    assert power.read_currents(p) == c
    p.write_text("i_rd_a = 0.1\n")
    with pytest.raises(ParseError, match="missing"):
        power.read_currents(p)
    p.write_text("i_xx_a = 0.1\n")
    with pytest.raises(ParseError):
        power.read_currents(p)
