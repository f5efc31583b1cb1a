"""DRAM request streams for STREAM-style kernels.

Each kernel touches one 64-byte line per array access per iteration (the
loop advances by ``stride`` bytes), so the request stream is fully determined
by the kernel's access list, the array bases and the array length.  Streams
are generated lazily in numpy chunks; nothing of size ``array_len`` is ever
materialised.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from .errors import AlignmentError, OverlapError, ParseError

READ, WRITE = 0, 1
REQUEST_NAMES = ("READ", "WRITE")
LINE_BYTES = 64
ELEMENT_SIZE = 8
DEFAULT_CHUNK = 1 << 16


class KernelKind(enum.Enum):
    READ = "read"
    ASSIGN = "assign"
    SCALE = "scale"
    ADDITION = "addition"
    TRIAD = "triad"
    COPY = "copy"
    SELFSCALE = "selfscale"

    @classmethod
    def parse(cls, name) -> "KernelKind":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown kernel {name!r}; choose from {[k.value for k in cls]}") from None


# (array id, is_write) per loop iteration, in program order
ACCESS_LISTS: Dict[KernelKind, Tuple[Tuple[str, int], ...]] = {
    KernelKind.READ: (("a", READ),),  # sum += a[j]
    KernelKind.ASSIGN: (("a", WRITE),),  # a[j] = 2
    KernelKind.SCALE: (("a", READ), ("b", WRITE)),  # b[j] = 2*a[j]
    KernelKind.ADDITION: (("a", READ), ("b", READ), ("c", WRITE)),  # c[j] = a[j] + b[j]
    KernelKind.TRIAD: (("b", READ), ("a", READ), ("a", WRITE)),  # a[j] = b[j] + 2*a[j]
    KernelKind.COPY: (("a", READ), ("b", WRITE)),  # b[j] = a[j]
    KernelKind.SELFSCALE: (("a", READ), ("a", WRITE)),  # a[j] = 2*a[j]
}


def with_rfo(accesses: Sequence[Tuple[str, int]]) -> Tuple[Tuple[str, int], ...]:
    """Insert a read-for-ownership before writes to lines not already read."""
    seen, out = set(), []
    for arr, op in accesses:
        if op == WRITE and arr not in seen:
            out.append((arr, READ))
        seen.add(arr)
        out.append((arr, op))
    return tuple(out)


@dataclass(frozen=True)
class RequestStream:
    """Lazy request stream of a strided multi-array kernel."""

    name: str
    accesses: Tuple[Tuple[str, int], ...]
    array_bases: Dict[str, int]
    array_len: int
    stride: int = LINE_BYTES
    element_size: int = ELEMENT_SIZE

    @property
    def iterations(self) -> int:
        return self.array_len * self.element_size // self.stride

    def __len__(self) -> int:
        return self.iterations * len(self.accesses)

    @property
    def n_reads(self) -> int:
        return self.iterations * sum(op == READ for _, op in self.accesses)

    @property
    def n_writes(self) -> int:
        return self.iterations * sum(op == WRITE for _, op in self.accesses)

    def chunks(self, max_requests: int = DEFAULT_CHUNK) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Yield ``(ops, addresses)`` arrays, ``ops`` holding READ/WRITE codes."""
        per = len(self.accesses)
        lines = max(1, max_requests // per)
        bases = np.array([self.array_bases[a] for a, _ in self.accesses], dtype=np.uint64)
        ops_row = np.array([op for _, op in self.accesses], dtype=np.int8)
        for start in range(0, self.iterations, lines):
            stop = min(self.iterations, start + lines)
            offs = np.arange(start, stop, dtype=np.uint64) * np.uint64(self.stride)
            addrs = (offs[:, None] + bases[None, :]).ravel()
            yield np.tile(ops_row, stop - start), addrs

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        for ops, addrs in self.chunks():
            yield from zip(ops.tolist(), addrs.tolist())


@dataclass(frozen=True)
class ExplicitStream:
    """A materialised request stream (e.g. read back from CSV or randomly drawn)."""

    name: str
    ops: np.ndarray
    addresses: np.ndarray

    def __len__(self) -> int:
        return len(self.ops)

    @property
    def n_reads(self) -> int:
        return int(np.count_nonzero(self.ops == READ))

    @property
    def n_writes(self) -> int:
        return int(np.count_nonzero(self.ops == WRITE))

    def chunks(self, max_requests: int = DEFAULT_CHUNK):
        for s in range(0, len(self.ops), max_requests):
            yield self.ops[s : s + max_requests], self.addresses[s : s + max_requests]

    def __iter__(self):
        return zip(self.ops.tolist(), self.addresses.tolist())


def default_bases(arrays: Sequence[str], array_len: int, element_size: int = ELEMENT_SIZE, start: int = 0):
    """Contiguous placement, each array rounded up to a whole line."""
    size = -(-array_len * element_size // LINE_BYTES) * LINE_BYTES
    return {a: start + i * size for i, a in enumerate(arrays)}


def generate_pattern(
    accesses: Sequence[Tuple[str, int]],
    array_len: int,
    bases: Optional[Dict[str, int]] = None,
    stride: int = LINE_BYTES,
    name: str = "custom",
    element_size: int = ELEMENT_SIZE,
) -> RequestStream:
    accesses = tuple((str(a), int(op)) for a, op in accesses)
    arrays = sorted({a for a, _ in accesses})
    if array_len <= 0:
        raise ValueError("array_len must be positive")
    if stride <= 0 or stride % LINE_BYTES:
        raise AlignmentError(f"stride {stride} is not a positive multiple of {LINE_BYTES} bytes")
    if (array_len * element_size) % stride:
        raise AlignmentError(f"array size {array_len * element_size} B is not a multiple of stride {stride}")
    if bases is None:
        bases = default_bases(arrays, array_len, element_size)
    missing = set(arrays) - set(bases)
    if missing:
        raise ValueError(f"no base address for array(s) {sorted(missing)}")
    size = array_len * element_size
    spans = sorted((int(bases[a]), a) for a in arrays)
    for base, a in spans:
        if base < 0 or base % LINE_BYTES:
            raise AlignmentError(f"base of array {a!r} ({base:#x}) is not {LINE_BYTES}-byte aligned")
    for (b0, a0), (b1, a1) in zip(spans, spans[1:]):
        if b0 + size > b1:
            raise OverlapError(f"arrays {a0!r} and {a1!r} overlap")
    return RequestStream(
        name=name,
        accesses=accesses,
        array_bases={a: int(bases[a]) for a in arrays},
        array_len=array_len,
        stride=stride,
        element_size=element_size,
    )


def generate(
    kind,
    array_len: int,
    bases: Optional[Dict[str, int]] = None,
    stride: int = LINE_BYTES,
    rfo: bool = False,
) -> RequestStream:
    """Request stream of one of the seven kernels (``kind`` may be a name)."""
    kind = KernelKind.parse(kind)
    accesses = ACCESS_LISTS[kind]
    if rfo:
        accesses = with_rfo(accesses)
    return generate_pattern(accesses, array_len, bases, stride, name=kind.value)


def random_stream(
    n_requests: int,
    footprint: int,
    write_fraction: float = 0.3,
    seed: int = 0,
    base: int = 0,
    name: str = "random",
) -> ExplicitStream:
    """Uniformly random line-aligned accesses over ``footprint`` bytes."""
    rng = np.random.default_rng(seed)
    lines = rng.integers(0, footprint // LINE_BYTES, size=n_requests, dtype=np.uint64)
    ops = (rng.random(n_requests) < write_fraction).astype(np.int8)
    return ExplicitStream(name, ops, np.uint64(base) + lines * np.uint64(LINE_BYTES))


def write_stream_csv(stream, path) -> None:
    """``type,address`` CSV, addresses in hex.  ``path`` may be an open text file."""
    if hasattr(path, "write"):
        _write_stream(stream, path)
        return
    with open(path, "w") as fh:
        _write_stream(stream, fh)


def _write_stream(stream, fh) -> None:
    fh.write("type,address\n")
    for ops, addrs in stream.chunks():
        fh.write("".join(f"{REQUEST_NAMES[o]},{a:#x}\n" for o, a in zip(ops.tolist(), addrs.tolist())))


def read_stream_csv(path, name: Optional[str] = None) -> ExplicitStream:
    ops, addrs = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["type", "address"]:
            raise ParseError("expected header 'type,address'", line=1, path=path)
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                t, a = rec[0].strip().upper(), int(rec[1], 0)
                ops.append(REQUEST_NAMES.index(t))
            except (IndexError, ValueError):
                raise ParseError(f"bad request {','.join(rec)!r}", line=lineno, path=path) from None
            addrs.append(a)
    return ExplicitStream(
        name or Path(path).stem, np.array(ops, dtype=np.int8), np.array(addrs, dtype=np.uint64)
    )
