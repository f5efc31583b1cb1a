import dataclasses
import math

import numpy as np
import pytest

from dram_calib import power, workload
from dram_calib.calibrate import build_problem, calibrate, diagnose, validate, validation_csv
from dram_calib.device import CURRENT_NAMES, CalibratedCurrents, default_bounds
from dram_calib.errors import IdMismatch, ValidationError
from dram_calib.measurement import RunEnergy
from dram_calib.memctrl import schedule
from dram_calib.synthetic import planted_currents, synthetic_run_energy, true_energy
from dram_calib.tracestats import CommandStats, reduce


def exact_energies(stats, device, planted):
    return [(k, RunEnergy(k, e, 0.0, e, 1e-3)) for k, s in stats for e in [true_energy(s, device, planted)]]


def random_stats(rng, n):
    """Stats with independent ACT and PRE counts, so every column is identifiable."""
    out = []
    for i in range(n):
        tot = int(rng.integers(10**5, 10**6))
        act = int(rng.integers(10, 5000))
        rd, wr = (int(v) for v in rng.integers(0, 40000, 2))
        a_cyc = int(tot * 2 * rng.uniform(0.3, 0.9))
        out.append((f"b{i}", CommandStats(
            n_act=act, n_pre=int(rng.integers(10, 5000)), n_rd=rd, n_wr=wr, n_ref=int(rng.integers(0, 50)),
            c_total=tot, c_act_stdby=a_cyc, c_pre_stdby=2 * tot - a_cyc, ranks=2)))
    return out


def test_problem_shape(desk_stats, device):
    planted = planted_currents(device, np.random.default_rng(0))
    prob = build_problem(desk_stats, exact_energies(desk_stats, device, planted), device)
    assert prob.A.shape == (7, 5) and prob.design().shape == (7, 6)
    assert prob.columns == [*CURRENT_NAMES, "intercept_b"]
    read_row = prob.ids.index("read")
    assert prob.A[read_row, CURRENT_NAMES.index("i_wr")] == 0


def test_y_is_net_minus_const(device):
    s = CommandStats(n_act=10, n_pre=10, n_rd=100, c_total=10**6, c_act_stdby=10**5, c_pre_stdby=19 * 10**5, ranks=2)
    e_const = power.coefficients(s, device).e_const
    prob = build_problem([("k", s)], [("k", RunEnergy("k", e_const + 20.0, 0.0, e_const + 20.0, 1.0))], device)
    assert prob.y[0] == pytest.approx(20.0, rel=1e-12)


def test_id_mismatch(desk_stats, device):
    en = exact_energies(desk_stats, device, CalibratedCurrents.from_datasheet(device))
    with pytest.raises(IdMismatch, match="copy"):
        build_problem(desk_stats, en[:-2] + [("other", en[-1][1])], device)
    with pytest.raises(IdMismatch):
        build_problem(desk_stats + desk_stats[:1], en + en[:1], device)


def test_noiseless_full_rank_recovers_currents(device):
    rng = np.random.default_rng(3)
    stats = random_stats(rng, 12)
    planted = dataclasses.replace(planted_currents(device, rng), intercept_b=2e-7)
    res = calibrate(build_problem(stats, exact_energies(stats, device, planted), device))
    for k in (*CURRENT_NAMES, "intercept_b"):
        assert getattr(res.currents, k) == pytest.approx(getattr(planted, k), rel=1e-6)
    assert np.max(res.relative_error) < 1e-6
    assert res.solver.kkt_ok


def test_noiseless_streams_reproduce_energies(desk_stats, device):
    planted = planted_currents(device, np.random.default_rng(1), intercept=1e-7)
    res = calibrate(build_problem(desk_stats, exact_energies(desk_stats, device, planted), device))
    assert np.max(res.relative_error) < 1e-6
    # the two ACT/PRE columns are tied (one PRE per ACT); their combination is still recovered
    sheet_t = device.timings
    combo = lambda c: c.i_act * sheet_t.tras + c.i_pre * sheet_t.trp
    assert combo(res.currents) == pytest.approx(combo(planted), rel=1e-5)
    for k in ("i_asb", "i_rd", "i_wr"):
        assert getattr(res.currents, k) == pytest.approx(getattr(planted, k), rel=1e-5)


def test_one_percent_noise(desk_stats, device):
    rng = np.random.default_rng(12)
    planted = planted_currents(device, rng, intercept=1e-7)
    en = [(k, synthetic_run_energy(k, s, device, planted, 0.01, rng)) for k, s in desk_stats]
    res = calibrate(build_problem(desk_stats, en, device))
    assert res.mean_relative_error < 5.0
    res.currents.check_bounds(default_bounds(device))
    assert res.objective == pytest.approx(0.5 * float(res.residuals @ res.residuals), rel=1e-12)


def test_degenerate_box_gives_datasheet_model(desk_stats, device):
    planted = planted_currents(device, np.random.default_rng(2))
    sheet = CalibratedCurrents.from_datasheet(device)
    bounds = {k: (getattr(sheet, k),) * 2 for k in CURRENT_NAMES}
    prob = build_problem(desk_stats, exact_energies(desk_stats, device, planted), device,
                         bounds=bounds, fit_intercept=False)
    res = calibrate(prob)
    assert res.currents == sheet
    for (k, s), p in zip(desk_stats, res.predicted):
        assert p == pytest.approx(power.energy(s, device, sheet).e_total, rel=1e-12)
    assert np.all(np.abs(res.residuals) > 0)


def test_zero_column_excluded(device):
    rng = np.random.default_rng(4)
    stats = [(k, dataclasses.replace(s, n_wr=0)) for k, s in random_stats(rng, 8)]
    planted = planted_currents(device, rng)
    res = calibrate(build_problem(stats, exact_energies(stats, device, planted), device))
    assert res.excluded == ["i_wr"]
    assert res.currents.i_wr == device.idd.idd4w
    assert "i_wr" not in res.kkt
    assert "datasheet" in res.format()


def test_no_intercept_and_determinism(desk_stats, device):
    rng = np.random.default_rng(5)
    planted = planted_currents(device, rng)
    en = [(k, synthetic_run_energy(k, s, device, planted, 0.01, rng)) for k, s in desk_stats]
    p = build_problem(desk_stats, en, device, fit_intercept=False)
    a, b = calibrate(p), calibrate(p)
    assert a.currents.intercept_b == 0.0 and "intercept_b" not in a.kkt
    assert a.currents == b.currents and np.array_equal(a.residuals, b.residuals)


def test_weighted(desk_stats, device):
    rng = np.random.default_rng(6)
    planted = planted_currents(device, rng)
    en = [(k, synthetic_run_energy(k, s, device, planted, 0.01, rng, runs=4)) for k, s in desk_stats]
    res = calibrate(build_problem(desk_stats, en, device, weighted=True))
    assert res.mean_relative_error < 5.0
    flat = [(k, dataclasses.replace(e, stddev=0.0)) for k, e in en]
    with pytest.raises(ValidationError, match="stddev"):
        calibrate(build_problem(desk_stats, flat, device, weighted=True))


def test_gross_matches_net(desk_stats, device):
    rng = np.random.default_rng(7)
    planted = planted_currents(device, rng)
    net = exact_energies(desk_stats, device, planted)
    gross = [(k, RunEnergy(k, e.net_energy + 0.4 * e.duration, 0.4 * e.duration, e.net_energy, e.duration))
             for k, e in net]
    a = calibrate(build_problem(desk_stats, net, device))
    b = calibrate(build_problem(desk_stats, gross, device, gross=True))
    for k in CURRENT_NAMES:
        assert getattr(a.currents, k) == pytest.approx(getattr(b.currents, k), rel=1e-6, abs=1e-12)
    assert np.all(b.measured > a.measured)


def test_diagnose_duplicate_and_identity():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(10)
    rep = diagnose(np.column_stack([a, a, rng.standard_normal(10)]), ["x", "y", "z"])
    assert rep.correlation[0, 1] == pytest.approx(1.0)
    assert ("x", "y") in [(p, q) for p, q, _ in rep.collinear]
    assert math.isinf(rep.condition_number)
    eye = diagnose(np.eye(4))
    assert eye.condition_number == pytest.approx(1.0) and not eye.weak and not eye.collinear
    assert np.all(np.abs(eye.correlation) <= 1.0)


def test_diagnose_weak_column():
    A = np.column_stack([np.ones(5), 1e-6 * np.arange(1, 6), np.zeros(5)])
    rep = diagnose(A, ["big", "tiny", "zero"])
    assert rep.weak == ["tiny", "zero"]
    assert "WEAK" in rep.format()


def test_stream_problem_rd_wr_not_collinear(desk_stats, device):
    planted = planted_currents(device, np.random.default_rng(0))
    res = calibrate(build_problem(desk_stats, exact_energies(desk_stats, device, planted), device))
    pairs = {(a, b) for a, b, _ in res.diagnostics.collinear}
    assert ("i_rd", "i_wr") not in pairs
    assert ("i_act", "i_pre") in pairs
    assert res.diagnostics.condition_number >= 1


def test_validate_in_sample(desk_stats, device):
    planted = planted_currents(device, np.random.default_rng(9))
    en = exact_energies(desk_stats, device, planted)
    res = calibrate(build_problem(desk_stats, en, device))
    rows = validate(res.currents, [(k, s, e) for (k, s), (_, e) in zip(desk_stats, en)], device)
    assert max(abs(r.postcal_error) for r in rows) < 1e-6
    assert validation_csv(rows).splitlines()[0] == "id,measured_j,precal_j,postcal_j,precal_error_pct,postcal_error_pct"
    with pytest.raises(ValueError):
        validate(res.currents, [], device)


def test_unseen_mixed_pattern(desk_stats, device, mapping):
    """Train on the seven kernels, validate on a 3-read/2-write pattern never seen in training."""
    rng = np.random.default_rng(10)
    planted = planted_currents(device, rng, intercept=1e-7)
    en = [(k, synthetic_run_energy(k, s, device, planted, 0.01, rng)) for k, s in desk_stats]
    res = calibrate(build_problem(desk_stats, en, device))
    acc = (("a", 0), ("b", 0), ("c", 0), ("c", 1), ("d", 1))
    st_ = reduce(schedule(workload.generate_pattern(acc, 400_000, name="mix"), mapping, device))
    hold = [("mix", st_, synthetic_run_energy("mix", st_, device, planted, 0.01, rng))]
    (row,) = validate(res.currents, hold, device)
    assert abs(row.postcal_error) < abs(row.precal_error)
