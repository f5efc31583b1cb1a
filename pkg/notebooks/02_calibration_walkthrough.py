"""
Calibrating IDD currents against power measurements
===================================================

Plant "true" currents below the datasheet values, synthesise power traces
for the seven kernels, integrate them the way a real measurement would be
processed and fit the currents back.
"""

# %%
import numpy as np

from dram_calib import addrmap, memctrl, tracestats, workload
from dram_calib.calibrate import build_problem, calibrate, validate
from dram_calib.device import CURRENT_NAMES, CalibratedCurrents, default_device
from dram_calib.measurement import run_energy, static_baseline
from dram_calib.synthetic import planted_currents, synthetic_series

rng = np.random.default_rng(11)
dev = default_device()
amap = addrmap.default_mapping(dev)
sheet = CalibratedCurrents.from_datasheet(dev)

N = 1_000_000
train = [(k.value, tracestats.reduce(memctrl.schedule(workload.generate(k.value, N), amap, dev)))
         for k in workload.KernelKind]

planted = planted_currents(dev, rng, 0.5, 0.7, intercept=1e-6)
for k in CURRENT_NAMES:
    print(f"{k:<6} datasheet {getattr(sheet, k):.4f} A   planted {getattr(planted, k):.4f} A")

# %% [markdown]
# Each benchmark gets three runs.  Every run is an idle stretch, used for
# the static baseline, followed by the benchmark itself.

# %%
energies = []
for name, s in train:
    runs, idle = [], []
    for _ in range(3):
        series, w_idle, w_run = synthetic_series(s, dev, planted, rng, noise=0.01, sample_noise=0.002)
        idle.append(static_baseline(series, w_idle, dev.vdd).power)
        runs.append((series, w_run))
    energies.append((name, run_energy(runs, float(np.mean(idle)), name)))

base = static_baseline(series, w_idle, dev.vdd)
print(f"static baseline {base.power:.4f} W  ->  {base.current_per_dimm:.4f} A per DIMM")

# %%
res = calibrate(build_problem(train, energies, dev))
print(res.format())

# %% [markdown]
# ``i_act`` and ``i_pre`` always move together in these kernels (one PRE per
# ACT), so only their combination is pinned down.  The diagnostics say so.

# %%
print(res.diagnostics.format())
t = dev.timings
print("i_act*tRAS + i_pre*tRP  fitted", res.currents.i_act * t.tras + res.currents.i_pre * t.trp,
      " planted", planted.i_act * t.tras + planted.i_pre * t.trp)

# %% [markdown]
# Held-out workload: four arrays, three read and one written, never seen
# during fitting.

# %%
quad = workload.generate_pattern((("a", 0), ("b", 0), ("c", 0), ("d", 1)), N, name="quad")
sq = tracestats.reduce(memctrl.schedule(quad, amap, dev))
series, w_idle, w_run = synthetic_series(sq, dev, planted, rng, sample_noise=0.002)
e = run_energy([(series, w_run)], static_baseline(series, w_idle, dev.vdd).power, "quad")
(row,) = validate(res.currents, [("quad", sq, e)], dev)
print(f"quad: measured {row.measured * 1e3:.4f} mJ, datasheet {row.precal * 1e3:.4f} mJ ({row.precal_error:+.1f} %), "
      f"calibrated {row.postcal * 1e3:.4f} mJ ({row.postcal_error:+.2f} %)")
