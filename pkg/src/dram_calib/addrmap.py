"""Physical address -> DRAM coordinate mapping with XOR (GF(2)-linear) bit functions.

Every output bit of every coordinate is the parity of a subset of address
bits, optionally inverted.  Masks are plain Python ints (bit ``i`` set means
address bit ``i`` participates).  ``infer_mapping`` recovers such a mapping
from observed (address, coordinate) pairs by Gaussian elimination over GF(2).
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import AddressOutOfRange, InconsistentMappingError, ParseError, ValidationError

COORDS = ("channel", "rank", "bank_group", "bank", "row", "column")


class DramCoord(NamedTuple):
    channel: int = 0
    rank: int = 0
    bank_group: int = 0
    bank: int = 0
    row: int = 0
    column: int = 0


@dataclass(frozen=True)
class AddressMapping:
    """XOR mapping.  ``masks[coord][k]`` produces bit ``k`` of ``coord``."""

    address_bits: int
    masks: Dict[str, Tuple[int, ...]]
    constants: Dict[str, Tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        masks = {c: tuple(int(m) for m in self.masks.get(c, ())) for c in COORDS}
        unknown = set(self.masks) - set(COORDS)
        if unknown:
            raise ValidationError(f"unknown coordinate(s) {sorted(unknown)}")
        consts = {}
        for c in COORDS:
            k = self.constants.get(c, (0,) * len(masks[c]))
            if len(k) != len(masks[c]):
                raise ValidationError(f"{c}: {len(k)} constants for {len(masks[c])} bits")
            consts[c] = tuple(int(v) & 1 for v in k)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "constants", consts)
        limit = 1 << self.address_bits
        for c in COORDS:
            for k, m in enumerate(masks[c]):
                if m < 0 or m >= limit:
                    raise ValidationError(
                        f"{c}.{k} references address bits >= address_bits={self.address_bits}"
                    )

    @property
    def widths(self) -> Dict[str, int]:
        return {c: len(self.masks[c]) for c in COORDS}

    def validate_geometry(self, device=None, line_bytes: int = 64) -> None:
        """Check cache-line contiguity and, given a device, coordinate widths.

        The low ``log2(line_bytes)`` address bits may only feed the column.
        """
        low = (1 << (line_bytes.bit_length() - 1)) - 1
        for c in COORDS:
            if c == "column":
                continue
            for k, m in enumerate(self.masks[c]):
                if m & low:
                    raise ValidationError(f"{c}.{k} uses line-offset address bits (< {line_bytes} B)")
        if device is None:
            return
        expect = {
            "bank_group": device.bank_groups.bit_length() - 1,
            "bank": device.banks_per_group.bit_length() - 1,
        }
        for c, w in expect.items():
            if self.widths[c] != w:
                raise ValidationError(f"{c} width {self.widths[c]} != {w} implied by device geometry")
        if (1 << self.widths["rank"]) < device.ranks:
            raise ValidationError(f"rank width {self.widths['rank']} cannot address {device.ranks} ranks")


def _bits(x: int) -> List[int]:
    out, i = [], 0
    while x:
        if x & 1:
            out.append(i)
        x >>= 1
        i += 1
    return out


def decompose(mapping: AddressMapping, addr: int) -> DramCoord:
    addr = int(addr)
    if addr < 0 or addr >> mapping.address_bits:
        raise AddressOutOfRange(f"address {addr:#x} needs more than {mapping.address_bits} bits")
    vals = []
    for c in COORDS:
        v = 0
        for k, (m, b) in enumerate(zip(mapping.masks[c], mapping.constants[c])):
            v |= (((addr & m).bit_count() & 1) ^ b) << k
        vals.append(v)
    return DramCoord(*vals)


def decompose_many(mapping: AddressMapping, addrs) -> Dict[str, np.ndarray]:
    """Vectorised ``decompose``; returns one int64 array per coordinate."""
    a = np.asarray(addrs, dtype=np.uint64)
    if a.size and (mapping.address_bits < 64 and int(a.max()) >> mapping.address_bits):
        bad = int(a[a >= np.uint64(1 << mapping.address_bits)][0])
        raise AddressOutOfRange(f"address {bad:#x} needs more than {mapping.address_bits} bits")
    out = {}
    for c in COORDS:
        v = np.zeros(a.shape, dtype=np.int64)
        for k, (m, b) in enumerate(zip(mapping.masks[c], mapping.constants[c])):
            bit = np.bitwise_count(a & np.uint64(m)).astype(np.int64) & 1
            v |= (bit ^ b) << k
        out[c] = v
    return out


def bit_slice_mapping(layout: Sequence[Tuple[str, int]], low_bits: int = 3) -> AddressMapping:
    """Plain (non-XOR) mapping from contiguous bit fields, listed low to high.

    ``low_bits`` address bits below the first field are the byte offset on
    the data bus and map to nothing.
    """
    masks: Dict[str, List[int]] = {c: [] for c in COORDS}
    pos = low_bits
    for coord, width in layout:
        for _ in range(width):
            masks[coord].append(1 << pos)
            pos += 1
    return AddressMapping(address_bits=pos, masks={c: tuple(v) for c, v in masks.items()})


def default_mapping(device, row_bits: int = 15, column_bits: int = 10, bank_xor: bool = False) -> AddressMapping:
    """Row:rank:bank:bank-group:column layout for one DIMM with a 64-bit bus.

    With ``bank_xor`` the bank and bank-group bits are additionally XORed with
    the lowest row bits, the usual controller trick for spreading row conflicts.
    """
    layout = [
        ("column", column_bits),
        ("bank_group", device.bank_groups.bit_length() - 1),
        ("bank", device.banks_per_group.bit_length() - 1),
        ("rank", (device.ranks - 1).bit_length()),
        ("row", row_bits),
    ]
    m = bit_slice_mapping(layout)
    if not bank_xor:
        return m
    masks = dict(m.masks)
    rows = masks["row"]
    j = 0
    for c in ("bank_group", "bank"):
        new = []
        for mk in masks[c]:
            new.append(mk | rows[j % len(rows)])
            j += 1
        masks[c] = tuple(new)
    return AddressMapping(address_bits=m.address_bits, masks=masks)


# -- inference --------------------------------------------------------------


@dataclass
class InferenceResult:
    mapping: AddressMapping
    rank: int
    # (coord, bit) -> number of free variables left by the samples
    underdetermined: Dict[Tuple[str, int], int]

    @property
    def exact(self) -> bool:
        return not self.underdetermined


def gf2_rref(rows: List[int], n_cols: int) -> Tuple[List[int], List[int]]:
    """Reduced row echelon form over GF(2) on the low ``n_cols`` bit columns.

    Higher bits ride along as augmented right-hand sides.  Returns the
    reduced rows (pivot rows first) and the pivot column of each pivot row.
    """
    work = list(rows)
    pivots: List[int] = []
    r = 0
    for col in range(n_cols):
        bit = 1 << col
        p = next((i for i in range(r, len(work)) if work[i] & bit), None)
        if p is None:
            continue
        work[r], work[p] = work[p], work[r]
        piv = work[r]
        for i in range(len(work)):
            if i != r and work[i] & bit:
                work[i] ^= piv
        pivots.append(col)
        r += 1
        if r == len(work):
            break
    return work, pivots


def infer_mapping(
    samples: Iterable[Tuple[int, Sequence[int]]],
    widths: Dict[str, int],
    address_bits: Optional[int] = None,
) -> InferenceResult:
    """Find an XOR mapping reproducing every (address, coordinate) sample.

    Underdetermined output bits take the solution with all free variables
    zero; they are reported with their free-variable count.  Raises
    ``InconsistentMappingError`` if no affine GF(2) function fits.
    """
    samples = [(int(a), tuple(int(v) for v in c)) for a, c in samples]
    if not samples:
        raise ValueError("infer_mapping needs at least one sample")
    if address_bits is None:
        address_bits = max(1, max(a for a, _ in samples).bit_length())
    for a, _ in samples:
        if a < 0 or a >> address_bits:
            raise AddressOutOfRange(f"address {a:#x} needs more than {address_bits} bits")
    out_bits = [(c, k) for c in COORDS for k in range(widths.get(c, 0))]
    n = address_bits + 1  # + constant column
    rows = []
    for a, coord in samples:
        coord = DramCoord(*coord)
        rhs = 0
        for j, (c, k) in enumerate(out_bits):
            rhs |= ((getattr(coord, c) >> k) & 1) << j
        rows.append(a | (1 << address_bits) | (rhs << n))
    reduced, pivots = gf2_rref(rows, n)
    rank = len(pivots)
    bad = 0
    for row in reduced[rank:]:
        bad |= row >> n
    if bad:
        names = [f"{c}.{k}" for j, (c, k) in enumerate(out_bits) if bad >> j & 1]
        raise InconsistentMappingError(
            "no XOR-of-address-bits function fits " + ", ".join(names), bits=names
        )
    masks: Dict[str, List[int]] = {c: [] for c in COORDS}
    consts: Dict[str, List[int]] = {c: [] for c in COORDS}
    for j, (c, k) in enumerate(out_bits):
        m, b = 0, 0
        for row, col in zip(reduced, pivots):
            if row >> (n + j) & 1:
                if col == address_bits:
                    b = 1
                else:
                    m |= 1 << col
        masks[c].append(m)
        consts[c].append(b)
    free = n - rank
    under = {bit: free for bit in out_bits} if free else {}
    mapping = AddressMapping(
        address_bits=address_bits,
        masks={c: tuple(v) for c, v in masks.items()},
        constants={c: tuple(v) for c, v in consts.items()},
    )
    return InferenceResult(mapping=mapping, rank=rank, underdetermined=under)


def gf2_rank(rows: Iterable[int], n_cols: int) -> int:
    return len(gf2_rref(list(rows), n_cols)[1])


# -- file format ------------------------------------------------------------

_LINE = re.compile(r"^(\w+)\.(\d+)\s*=\s*xor\(([^)]*)\)\s*(\+\s*1)?$")


def format_mapping(mapping: AddressMapping) -> str:
    lines = [f"address_bits = {mapping.address_bits}"]
    for c in COORDS:
        for k, (m, b) in enumerate(zip(mapping.masks[c], mapping.constants[c])):
            terms = ", ".join(f"a{i}" for i in _bits(m))
            lines.append(f"{c}.{k} = xor({terms})" + (" +1" if b else ""))
    return "\n".join(lines) + "\n"


def parse_mapping(text: str, path=None) -> AddressMapping:
    address_bits = None
    bits: Dict[str, Dict[int, Tuple[int, int]]] = {c: {} for c in COORDS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("address_bits"):
            try:
                address_bits = int(line.split("=", 1)[1])
            except (IndexError, ValueError):
                raise ParseError(f"bad address_bits line {raw!r}", line=lineno, path=path) from None
            continue
        m = _LINE.match(line)
        if not m or m.group(1) not in COORDS:
            raise ParseError(f"cannot parse {raw!r}", line=lineno, path=path)
        coord, k = m.group(1), int(m.group(2))
        mask = 0
        for term in filter(None, (t.strip() for t in m.group(3).split(","))):
            if not re.fullmatch(r"a\d+", term):
                raise ParseError(f"bad term {term!r}", line=lineno, path=path)
            mask ^= 1 << int(term[1:])
        if k in bits[coord]:
            raise ParseError(f"duplicate definition of {coord}.{k}", line=lineno, path=path)
        bits[coord][k] = (mask, 1 if m.group(4) else 0)
    masks, consts = {}, {}
    top = 0
    for c in COORDS:
        idx = sorted(bits[c])
        if idx != list(range(len(idx))):
            raise ParseError(f"{c} bit indices are not contiguous from 0: {idx}", path=path)
        masks[c] = tuple(bits[c][k][0] for k in idx)
        consts[c] = tuple(bits[c][k][1] for k in idx)
        for mk in masks[c]:
            top = max(top, mk.bit_length())
    if address_bits is None:
        address_bits = top
    return AddressMapping(address_bits=address_bits, masks=masks, constants=consts)


def load_mapping(path) -> AddressMapping:
    path = Path(path)
    return parse_mapping(path.read_text(), path=path)


def save_mapping(mapping: AddressMapping, path) -> None:
    Path(path).write_text(format_mapping(mapping))


def read_samples_csv(path) -> List[Tuple[int, DramCoord]]:
    """Samples CSV with header ``address,channel,rank,bank_group,bank,row,column``."""

    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"address", *COORDS} - set(reader.fieldnames or ())
        if missing:
            raise ParseError(f"samples CSV lacks column(s) {sorted(missing)}", path=path)
        for lineno, rec in enumerate(reader, 2):
            try:
                out.append((int(rec["address"], 0), DramCoord(*(int(rec[c], 0) for c in COORDS))))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
    return out


def widths_from_samples(samples) -> Dict[str, int]:
    return {c: max((getattr(s[1], c) for s in samples), default=0).bit_length() for c in COORDS}
