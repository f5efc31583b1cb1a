"""
From access pattern to energy breakdown
=======================================

Generate the seven streaming kernels, run them through the open-page
scheduler and split the datasheet energy estimate into its components.
Run with ``python3 notebooks/01_traces_and_breakdown.py``.
"""

# %%
import numpy as np

from dram_calib import addrmap, memctrl, power, tracestats, workload
from dram_calib.device import CalibratedCurrents, default_device

dev = default_device()
amap = addrmap.default_mapping(dev)
sheet = CalibratedCurrents.from_datasheet(dev)
print(dev.name, f"tCK={dev.tck_s * 1e9:.4f} ns, {dev.ranks} ranks x {dev.banks_per_rank} banks")

# %% [markdown]
# The mapping is a plain bit slice: 8 B offset, ten column bits (an 8 KiB
# row), then bank group, bank, rank and row.  A sequential sweep stays in
# one row for 128 lines before it opens the next one.

# %%
for line in addrmap.format_mapping(amap).splitlines():
    if not line.startswith(("row.", "column.")):
        print(line)

# %%
N = 200_000
stats = {}
for kind in workload.KernelKind:
    trace = memctrl.schedule(workload.generate(kind.value, N), amap, dev)
    assert not memctrl.check_timing(trace)
    stats[kind.value] = tracestats.reduce(trace)

print(f"{'kernel':<10} {'RD':>7} {'WR':>7} {'ACT':>6} {'REF':>4} {'hit rate':>8}")
for k, s in stats.items():
    hits = 1 - s.n_act / max(1, s.n_rd + s.n_wr)
    print(f"{k:<10} {s.n_rd:>7} {s.n_wr:>7} {s.n_act:>6} {s.n_ref:>4} {hits:>8.3f}")

# %% [markdown]
# Datasheet breakdown of one kernel.  Column reads and writes plus the two
# standby terms carry almost everything; ACT and PRE barely register.

# %%
bd = power.energy(stats["triad"], dev, sheet)
print(power.breakdown_report(bd).format_table())

# %%
# share of background energy per kernel
for k, s in stats.items():
    b = power.energy(s, dev, sheet)
    bg = (b.e_bg_act + b.e_bg_pre) / b.e_total
    print(f"{k:<10} total {b.e_total * 1e3:7.3f} mJ   background {100 * bg:5.1f} %   {b.p_avg:.3f} W")

# %% [markdown]
# Energy is affine in the five fitted currents.  The coefficient row is what
# calibration stacks, one per benchmark.

# %%
row = power.coefficients(stats["addition"], dev)
print(np.round(row.vector(), 9), row.e_const)
print(row.predict(sheet), power.energy(stats["addition"], dev, sheet).e_total)
