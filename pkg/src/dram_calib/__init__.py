"""Trace-driven DDR4 energy modeling and IDD current calibration.

Typical flow::

    dev = default_device()
    amap = default_mapping(dev)
    trace = schedule(generate("triad", 1_000_000), amap, dev)
    st = reduce(trace)
    energy(st, dev, CalibratedCurrents.from_datasheet(dev))

Calibration stacks one ``coefficients`` row per benchmark, subtracts the
fixed energy from measured net energy and solves a box-constrained least
squares problem for the five currents (``calibrate``).
"""

from .addrmap import (
    AddressMapping,
    DramCoord,
    decompose,
    decompose_many,
    default_mapping,
    infer_mapping,
    load_mapping,
    parse_mapping,
    save_mapping,
)
from .bvls import BVLSResult, solve_bvls
from .calibrate import (
    CalibrationProblem,
    CalibrationResult,
    build_problem,
    calibrate,
    diagnose,
    validate,
)
from .device import (
    CURRENT_NAMES,
    CalibratedCurrents,
    DeviceSpec,
    IddCurrents,
    Timings,
    default_device,
    load_device_spec,
    validate_device_spec,
)
from .errors import DramCalibError
from .measurement import MeasurementSeries, RunEnergy, integrate, run_energy, static_baseline
from .memctrl import Cmd, CommandTrace, check_timing, schedule
from .power import EnergyBreakdown, coefficients, energy, read_currents, write_currents
from .tracestats import CommandStats, parse_trace, reduce, write_trace
from .workload import KernelKind, RequestStream, generate, generate_pattern

__version__ = "0.1.0"

__all__ = [
    "AddressMapping",
    "DramCoord",
    "decompose",
    "decompose_many",
    "default_mapping",
    "infer_mapping",
    "load_mapping",
    "parse_mapping",
    "save_mapping",
    "BVLSResult",
    "solve_bvls",
    "CalibrationProblem",
    "CalibrationResult",
    "build_problem",
    "calibrate",
    "diagnose",
    "validate",
    "CURRENT_NAMES",
    "CalibratedCurrents",
    "DeviceSpec",
    "IddCurrents",
    "Timings",
    "default_device",
    "load_device_spec",
    "validate_device_spec",
    "DramCalibError",
    "MeasurementSeries",
    "RunEnergy",
    "integrate",
    "run_energy",
    "static_baseline",
    "Cmd",
    "CommandTrace",
    "check_timing",
    "schedule",
    "EnergyBreakdown",
    "coefficients",
    "energy",
    "read_currents",
    "write_currents",
    "CommandStats",
    "parse_trace",
    "reduce",
    "write_trace",
    "KernelKind",
    "RequestStream",
    "generate",
    "generate_pattern",
]

