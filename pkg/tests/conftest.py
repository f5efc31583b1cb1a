import dataclasses

import numpy as np
import pytest

from dram_calib import addrmap, device as dev, memctrl, tracestats, workload

DESK_ELEMENTS = 1_000_000
KERNELS = [k.value for k in workload.KernelKind]

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def device():
    return dev.default_device()


@pytest.fixture(scope="session")
def mapping(device):
    return addrmap.default_mapping(device)


@pytest.fixture(scope="session")
def desk_stats(device, mapping):
    """CommandStats of the seven kernels at 1M elements, stride 64 B."""
    out = []
    for k in KERNELS:
        trace = memctrl.schedule(workload.generate(k, DESK_ELEMENTS), mapping, device)
        out.append((k, tracestats.reduce(trace)))
    return out


def with_timings(d, **kw):
    return dataclasses.replace(d, timings=dataclasses.replace(d.timings, **kw))


def with_idd(d, **kw):
    return dataclasses.replace(d, idd=dataclasses.replace(d.idd, **kw))


def random_device(rng: np.random.Generator) -> dev.DeviceSpec:
    """A small valid device with short refresh interval so REF shows up often."""
    ranks = int(rng.choice([1, 2, 4]))
    bank_groups = int(rng.choice([1, 2, 4]))
    banks = bank_groups * int(rng.choice([1, 2, 4]))
    trcd, trp = int(rng.integers(2, 20)), int(rng.integers(2, 20))
    tras = int(rng.integers(trcd + 1, 45))
    twr, twl, trtp = int(rng.integers(2, 18)), int(rng.integers(2, 14)), int(rng.integers(2, 10))
    bl = int(rng.choice([4, 8]))
    trfc = int(rng.integers(10, 120))
    t = dev.Timings(
        trcd=trcd, trp=trp, tras=tras, trc=tras + trp, trfc=trfc, trefi=0,
        tccd=int(rng.integers(1, 8)), trtp=trtp, twr=twr, twl=twl, trl=int(rng.integers(2, 20)),
    )
    base = dev.default_device()
    d = dataclasses.replace(
        base, name="fuzz", ranks=ranks, banks_per_rank=banks, bank_groups=bank_groups,
        burst_length=bl, timings=dataclasses.replace(t, trefi=10**9),
    )
    need = memctrl.refresh_margin(d) + trfc + ranks + 1
    return with_timings(d, trefi=need + int(rng.integers(0, 600)))


def small_mapping(d: dev.DeviceSpec, row_bits=4, column_bits=5, xor=False) -> addrmap.AddressMapping:
    return addrmap.default_mapping(d, row_bits=row_bits, column_bits=column_bits, bank_xor=xor)
