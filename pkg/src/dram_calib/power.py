"""Linear IDD energy model.

Background energy is charged for every standby cycle at the active-standby
(``i_asb``) or precharge-standby (IDD2N) current; each command adds energy
above that background: ACT over tRAS, PRE over tRP, RD/WR over one burst and
REF over tRFC.  Because every term is linear in the five calibrated currents,
``coefficients`` regroups the same sum by current; the two must agree exactly
for any currents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .device import CURRENT_NAMES, CalibratedCurrents, DeviceSpec
from .errors import NegativeComponent, ParseError
from .tracestats import CommandStats

COMPONENTS = ("e_act", "e_pre", "e_rd", "e_wr", "e_ref", "e_bg_act", "e_bg_pre", "e_intercept")


@dataclass(frozen=True)
class EnergyBreakdown:
    e_act: float
    e_pre: float
    e_rd: float
    e_wr: float
    e_ref: float
    e_bg_act: float
    e_bg_pre: float
    e_intercept: float
    e_total: float
    p_avg: float
    duration: float

    def components(self) -> Dict[str, float]:
        return {k: getattr(self, k) for k in COMPONENTS}


def energy(
    stats: CommandStats,
    device: DeviceSpec,
    currents: CalibratedCurrents,
    allow_negative: bool = False,
) -> EnergyBreakdown:
    """Energy per component (J) and average power (W) for one trace.

    Raises NegativeComponent when an incremental current falls below its
    baseline, unless ``allow_negative`` (calibration fits may legitimately
    land there, e.g. a fitted ``i_pre`` below the fixed IDD2N).
    """
    V, tck, g = device.vdd, device.tck_s, device.geometry_scale
    t = device.timings
    idd = device.idd
    t_burst = device.burst_cycles * tck
    c = currents
    parts = {
        "e_act": V * (c.i_act - c.i_asb) * t.tras * tck * stats.n_act * g,
        "e_pre": V * (c.i_pre - idd.idd2n) * t.trp * tck * stats.n_pre * g,
        "e_rd": V * (c.i_rd - c.i_asb) * t_burst * stats.n_rd * g,
        "e_wr": V * (c.i_wr - c.i_asb) * t_burst * stats.n_wr * g,
        "e_ref": V * (idd.idd5b - idd.idd2n) * t.trfc * tck * stats.n_ref * g,
        "e_bg_act": V * tck * stats.c_act_stdby * c.i_asb * g,
        "e_bg_pre": V * tck * stats.c_pre_stdby * idd.idd2n * g,
        "e_intercept": c.intercept_b,
    }
    if not allow_negative:
        neg = [k for k, v in parts.items() if v < 0]
        if neg:
            raise NegativeComponent(
                f"negative energy component(s) {neg}: currents violate the standby ordering"
            )
    total = 0.0
    for k in COMPONENTS:
        total += parts[k]
    duration = stats.c_total * tck
    p_avg = total / duration if duration > 0 else 0.0
    return EnergyBreakdown(**parts, e_total=total, p_avg=p_avg, duration=duration)


@dataclass(frozen=True)
class CoefficientRow:
    """Volt-seconds per ampere for each calibrated current, plus the fixed energy."""

    coeff_i_act: float
    coeff_i_pre: float
    coeff_i_asb: float
    coeff_i_rd: float
    coeff_i_wr: float
    e_const: float

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, f"coeff_{k}") for k in CURRENT_NAMES])

    def predict(self, currents: CalibratedCurrents) -> float:
        return float(self.vector() @ np.array(currents.as_vector())) + self.e_const + currents.intercept_b


def coefficients(stats: CommandStats, device: DeviceSpec) -> CoefficientRow:
    V, tck, g = device.vdd, device.tck_s, device.geometry_scale
    t = device.timings
    idd = device.idd
    t_burst = device.burst_cycles * tck
    return CoefficientRow(
        coeff_i_act=V * t.tras * tck * stats.n_act * g,
        coeff_i_pre=V * t.trp * tck * stats.n_pre * g,
        coeff_i_asb=V * (tck * stats.c_act_stdby - t.tras * tck * stats.n_act
                         - t_burst * (stats.n_rd + stats.n_wr)) * g,
        coeff_i_rd=V * t_burst * stats.n_rd * g,
        coeff_i_wr=V * t_burst * stats.n_wr * g,
        e_const=V * (tck * stats.c_pre_stdby * idd.idd2n - t.trp * tck * stats.n_pre * idd.idd2n
                     + (idd.idd5b - idd.idd2n) * t.trfc * tck * stats.n_ref) * g,
    )


@dataclass(frozen=True)
class BreakdownReport:
    rows: List[Tuple[str, float, float]]
    empty: bool

    def to_csv(self) -> str:
        lines = ["component,energy_j,percent"]
        lines += [f"{k},{float(e)!r},{p:.6f}" for k, e, p in self.rows]
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        if self.empty:
            return "(empty breakdown: total energy is zero)\n"
        return "".join(f"{k:<12} {e:14.6e} J {p:8.3f} %\n" for k, e, p in self.rows)


def breakdown_report(bd: EnergyBreakdown) -> BreakdownReport:
    comps = bd.components()
    total = bd.e_total
    empty = total == 0 or not math.isfinite(total)
    rows = [(k, v, 0.0 if empty else 100.0 * v / total) for k, v in comps.items()]
    rows.sort(key=lambda r: (-r[1], COMPONENTS.index(r[0])))
    return BreakdownReport(rows=rows, empty=empty)


# -- currents file ----------------------------------------------------------

_CURRENT_KEYS = {f"{k}_a": k for k in CURRENT_NAMES}
_CURRENT_KEYS["intercept_b_j"] = "intercept_b"


def format_currents(currents: CalibratedCurrents, comment: str = "") -> str:
    lines = [f"# {line}" for line in comment.splitlines()] if comment else []
    for key, attr in _CURRENT_KEYS.items():
        lines.append(f"{key} = {float(getattr(currents, attr))!r}")
    return "\n".join(lines) + "\n"


def write_currents(currents: CalibratedCurrents, path, comment: str = "") -> None:
    Path(path).write_text(format_currents(currents, comment))


def read_currents(path) -> CalibratedCurrents:
    vals = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep or key not in _CURRENT_KEYS:
            raise ParseError(f"unexpected entry {raw!r}", line=lineno, path=path)
        try:
            vals[_CURRENT_KEYS[key]] = float(val)
        except ValueError:
            raise ParseError(f"bad number {val!r}", line=lineno, path=path) from None
    missing = set(_CURRENT_KEYS.values()) - set(vals) - {"intercept_b"}
    if missing:
        raise ParseError(f"missing current(s) {sorted(missing)}", path=path)
    return CalibratedCurrents(**vals)
