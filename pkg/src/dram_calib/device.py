"""DDR4 device description: geometry, supply voltage, timings and IDD currents.

A device is loaded from a flat JSON file whose keys carry their unit as a
suffix (``tck_ns``, ``trcd_ck``, ``idd3n_a``, ...).  Timings are held in clock
cycles; ``trfc`` and ``trefi`` may be given either in cycles (``*_ck``) or in
nanoseconds (``*_ns``) and are converted on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Tuple

from .errors import ParseError, ValidationError

CURRENT_NAMES = ("i_act", "i_pre", "i_asb", "i_rd", "i_wr")

# calibrated current -> datasheet IDD supplying its upper bound
DATASHEET_SOURCE = {
    "i_act": "idd0",
    "i_pre": "idd0",
    "i_asb": "idd3n",
    "i_rd": "idd4r",
    "i_wr": "idd4w",
}


@dataclass(frozen=True)
class Timings:
    """DDR timing parameters, all in clock cycles."""

    trcd: int
    trp: int
    tras: int
    trc: int
    trfc: int
    trefi: int
    tccd: int
    trtp: int
    twr: int
    twl: int
    trl: int


@dataclass(frozen=True)
class IddCurrents:
    """Datasheet supply currents in amperes."""

    idd0: float
    idd2n: float
    idd3n: float
    idd4r: float
    idd4w: float
    idd5b: float


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    ranks: int
    banks_per_rank: int
    bank_groups: int
    capacity_per_dimm: int
    dimms_per_channel: int
    vdd: float
    tck: float
    burst_length: int
    timings: Timings
    idd: IddCurrents
    geometry_scale: float = 1.0
    source: str = ""

    def __post_init__(self):
        validate_device_spec(self)

    @property
    def tck_s(self) -> float:
        return self.tck * 1e-9

    @property
    def burst_cycles(self) -> int:
        """Clock cycles occupied by one burst on the data bus (BL/2, DDR)."""
        return self.burst_length // 2

    @property
    def write_recovery(self) -> int:
        """Cycles from a WR command until its bank may be precharged."""
        t = self.timings
        return t.twl + self.burst_cycles + t.twr

    @property
    def banks_per_group(self) -> int:
        return self.banks_per_rank // self.bank_groups

    @property
    def total_banks(self) -> int:
        return self.ranks * self.banks_per_rank


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def validate_device_spec(spec: DeviceSpec) -> None:
    """Raise ValidationError naming the first violated invariant."""
    if spec.ranks < 1:
        raise ValidationError(f"ranks must be >= 1, got {spec.ranks}")
    if not _is_pow2(spec.banks_per_rank):
        raise ValidationError(f"banks_per_rank must be a power of two, got {spec.banks_per_rank}")
    if not _is_pow2(spec.bank_groups) or spec.banks_per_rank % spec.bank_groups:
        raise ValidationError(
            f"bank_groups must be a power of two dividing banks_per_rank, got {spec.bank_groups}"
        )
    if spec.dimms_per_channel < 1:
        raise ValidationError("dimms_per_channel must be >= 1")
    if spec.capacity_per_dimm <= 0:
        raise ValidationError("capacity_per_dimm must be > 0")
    if not spec.vdd > 0:
        raise ValidationError(f"vdd must be > 0, got {spec.vdd}")
    if not spec.tck > 0:
        raise ValidationError(f"tck must be > 0, got {spec.tck}")
    if spec.burst_length not in (4, 8):
        raise ValidationError(f"burst_length must be 4 or 8, got {spec.burst_length}")
    if not spec.geometry_scale > 0:
        raise ValidationError("geometry_scale must be > 0")
    for f in fields(Timings):
        v = getattr(spec.timings, f.name)
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise ValidationError(f"timing {f.name} must be a positive integer cycle count, got {v!r}")
    for f in fields(IddCurrents):
        v = getattr(spec.idd, f.name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ValidationError(f"current {f.name.upper()} must be > 0, got {v!r}")
    t = spec.timings
    if t.trc != t.tras + t.trp:
        raise ValidationError(f"tRC != tRAS + tRP ({t.trc} != {t.tras} + {t.trp})")
    if t.trefi <= t.trfc:
        raise ValidationError(f"tREFI must exceed tRFC ({t.trefi} <= {t.trfc})")
    i = spec.idd
    if not i.idd4r > i.idd3n:
        raise ValidationError(f"IDD4R must exceed IDD3N ({i.idd4r} <= {i.idd3n})")
    if not i.idd4w > i.idd3n:
        raise ValidationError(f"IDD4W must exceed IDD3N ({i.idd4w} <= {i.idd3n})")
    if not i.idd0 > i.idd2n:
        raise ValidationError(f"IDD0 must exceed IDD2N ({i.idd0} <= {i.idd2n})")


@dataclass(frozen=True)
class CalibratedCurrents:
    """The five calibrated currents (A) plus the energy intercept (J)."""

    i_act: float
    i_pre: float
    i_asb: float
    i_rd: float
    i_wr: float
    intercept_b: float = 0.0

    @classmethod
    def from_datasheet(cls, spec: DeviceSpec) -> "CalibratedCurrents":
        return cls(**{k: getattr(spec.idd, v) for k, v in DATASHEET_SOURCE.items()})

    def as_vector(self):
        return [getattr(self, k) for k in CURRENT_NAMES]

    def scaled(self, factors: Dict[str, float]) -> "CalibratedCurrents":
        return replace(self, **{k: getattr(self, k) * f for k, f in factors.items()})

    def check_bounds(self, bounds: Dict[str, Tuple[float, float]]) -> None:
        for k in (*CURRENT_NAMES, "intercept_b"):
            if k not in bounds:
                continue
            lo, hi = bounds[k]
            v = getattr(self, k)
            if not lo <= v <= hi:
                raise ValidationError(f"{k}={v} outside [{lo}, {hi}]")


def default_bounds(spec: DeviceSpec) -> Dict[str, Tuple[float, float]]:
    """Box constraints ``0 <= current <= datasheet IDD``; intercept in ``[0, inf)``."""
    bounds = {k: (0.0, float(getattr(spec.idd, src))) for k, src in DATASHEET_SOURCE.items()}
    bounds["intercept_b"] = (0.0, math.inf)
    return bounds


# -- file format ------------------------------------------------------------

_INT_KEYS = {
    "ranks": "ranks",
    "banks_per_rank": "banks_per_rank",
    "bank_groups": "bank_groups",
    "capacity_per_dimm_bytes": "capacity_per_dimm",
    "dimms_per_channel": "dimms_per_channel",
    "burst_length": "burst_length",
}
_CYCLE_TIMINGS = ("trcd", "trp", "tras", "trc", "tccd", "trtp", "twr", "twl", "trl")
_NS_TIMINGS = ("trfc", "trefi")


def _ns_to_cycles(ns: float, tck: float, round_up: bool) -> int:
    x = ns / tck
    # tolerate representation error in e.g. 7800 / 0.9375
    return math.ceil(x - 1e-9) if round_up else math.floor(x + 1e-9)


def device_from_dict(raw: dict, path=None) -> DeviceSpec:
    if not isinstance(raw, dict) or not raw:
        raise ParseError("device config is empty or not an object", path=path)
    try:
        tck = float(raw["tck_ns"])
        timings = {k: raw[f"{k}_ck"] for k in _CYCLE_TIMINGS}
        for k in _NS_TIMINGS:
            if f"{k}_ck" in raw:
                timings[k] = raw[f"{k}_ck"]
            else:
                # tRFC is a minimum duration, tREFI a maximum interval
                timings[k] = _ns_to_cycles(float(raw[f"{k}_ns"]), tck, round_up=(k == "trfc"))
        idd = {f.name: float(raw[f"{f.name}_a"]) for f in fields(IddCurrents)}
        kwargs = {attr: raw[key] for key, attr in _INT_KEYS.items()}
        name = str(raw["name"])
        vdd = float(raw["vdd_v"])
    except KeyError as exc:
        raise ParseError(f"missing required key {exc.args[0]!r}", path=path) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad value: {exc}", path=path) from None
    for key, val in list(kwargs.items()) + list(timings.items()):
        if isinstance(val, float) and val.is_integer():
            val = int(val)
        if not isinstance(val, int) or isinstance(val, bool):
            raise ValidationError(f"{key} must be an integer, got {val!r}")
        if key in kwargs:
            kwargs[key] = val
        else:
            timings[key] = val
    return DeviceSpec(
        name=name,
        vdd=vdd,
        tck=tck,
        timings=Timings(**timings),
        idd=IddCurrents(**idd),
        geometry_scale=float(raw.get("geometry_scale", 1.0)),
        source=str(raw.get("source", "")),
        **kwargs,
    )


def device_to_dict(spec: DeviceSpec) -> dict:
    out = {
        "name": spec.name,
        "source": spec.source,
        "ranks": spec.ranks,
        "banks_per_rank": spec.banks_per_rank,
        "bank_groups": spec.bank_groups,
        "capacity_per_dimm_bytes": spec.capacity_per_dimm,
        "dimms_per_channel": spec.dimms_per_channel,
        "vdd_v": spec.vdd,
        "tck_ns": spec.tck,
        "burst_length": spec.burst_length,
        "geometry_scale": spec.geometry_scale,
    }
    out.update({f"{k}_ck": v for k, v in asdict(spec.timings).items()})
    out.update({f"{k}_a": v for k, v in asdict(spec.idd).items()})
    return out


def serialize_device_spec(spec: DeviceSpec) -> str:
    return json.dumps(device_to_dict(spec), indent=2) + "\n"


def parse_device_spec(text: str, path=None) -> DeviceSpec:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=path) from None
    return device_from_dict(raw, path=path)


def load_device_spec(path) -> DeviceSpec:
    path = Path(path)
    return parse_device_spec(path.read_text(), path=path)


def save_device_spec(spec: DeviceSpec, path) -> None:
    Path(path).write_text(serialize_device_spec(spec))


def shipped_device_path() -> Path:
    return Path(__file__).parent / "data" / "ddr4_2133_2rx8_8gb.json"


def default_device() -> DeviceSpec:
    return load_device_spec(shipped_device_path())
