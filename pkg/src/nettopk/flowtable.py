"""Fixed-shape multi-vector hash tables and a pipeline-order access checker.

Every table in the simulator is a MultiVectorTable: d vectors of s slots,
each vector indexed by its own seeded hash of the flow ID. All tables in
one simulation share the same seeds, so a flow probes the same slot
coordinates in every table on every switch.

Slot (id=0, count=0) is the empty sentinel; traces never contain flow ID 0.

The AccessLog mechanizes the feed-forward constraint of a switch pipeline:
stages (vectors) are traversed in order, and within a stage the two fields
live in distinct ALUs whose order is fixed per table. A recorded access
sequence that would require moving backwards is rejected by verify().
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, NamedTuple

EMPTY_ID = 0
EMPTY_COUNT = 0

_MASK32 = 0xFFFFFFFF


def mix32(x: int) -> int:
    """Avalanche a 32-bit integer (murmur3 finalizer)."""
    x &= _MASK32
    x ^= x >> 16
    x = (x * 0x85EBCA6B) & _MASK32
    x ^= x >> 13
    x = (x * 0xC2B2AE35) & _MASK32
    x ^= x >> 16
    return x


class FieldOrder(Enum):
    """Which field of a slot the pipeline reaches first."""

    ID_FIRST = "id_first"
    COUNT_FIRST = "count_first"


class Field(Enum):
    ID = "id"
    COUNT = "count"


class Mode(Enum):
    READ = "read"
    WRITE = "write"


class FlowEntry(NamedTuple):
    """An (id, count) pair, the unit stored in tables and sent on the wire."""

    id: int
    count: int


class PipelineOrderError(Exception):
    """An access sequence violated feed-forward stage order."""


@dataclass(frozen=True)
class TableConfig:
    """Shape and hashing of a table: d vectors of s slots, one seed per vector.

    s must be a power of two so the hash reduces by masking. The same config
    is shared by every table on every switch in a simulation.
    """

    d: int
    s: int
    seeds: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.s < 1 or (self.s & (self.s - 1)) != 0:
            raise ValueError("s must be a power of two >= 1")
        if len(self.seeds) != self.d:
            raise ValueError("need exactly one seed per vector")
        object.__setattr__(self, "seeds", tuple(int(x) & _MASK32 for x in self.seeds))


def hash_index(config: TableConfig, vector_i: int, flow_id: int) -> int:
    """Slot index of flow_id in vector vector_i: mix32(id ^ seed) masked to s."""
    assert 0 <= vector_i < config.d, "vector index out of range"
    assert flow_id != EMPTY_ID, "empty sentinel is never hashed"
    return mix32(flow_id ^ config.seeds[vector_i]) & (config.s - 1)


# AccessLog entries: (vector, Field, Mode) tuples, or the RECIRCULATE marker.
RECIRCULATE = "recirculate"


@dataclass
class AccessLog:
    """Ordered record of slot-field accesses made by one pipeline operation.

    verify(field_order) checks that accesses only move forward: vector
    indices never decrease, and within one vector the first-order field is
    never touched after the second-order field. recirculate() marks the
    start of a fresh pass, resetting the position.
    """

    records: list = field(default_factory=list)

    def record(self, vector: int, f: Field, mode: Mode) -> None:
        self.records.append((vector, f, mode))

    def recirculate(self) -> None:
        self.records.append(RECIRCULATE)

    @property
    def recirculations(self) -> int:
        return sum(1 for r in self.records if r is RECIRCULATE)

    def verify(self, field_order: FieldOrder) -> None:
        """Raise PipelineOrderError if the log is not a legal forward pass."""
        first = Field.ID if field_order is FieldOrder.ID_FIRST else Field.COUNT
        pos = (-1, -1)
        for rec in self.records:
            if rec is RECIRCULATE:
                pos = (-1, -1)
                continue
            vector, f, _mode = rec
            phase = 0 if f is first else 1
            here = (vector, phase)
            if here < pos:
                raise PipelineOrderError(
                    f"access to vector {vector} {f.value} after position {pos}"
                )
            pos = here


class MultiVectorTable:
    """d x s slots of FlowEntry with per-vector seeded hashing.

    Accessors optionally record to an AccessLog so operations can prove
    they respect pipeline order. Reads and writes take (vector, index)
    coordinates; placement at the hash index is the caller's contract,
    checkable after the fact with check_placement().
    """

    __slots__ = ("config", "field_order", "ids", "counts")

    def __init__(self, config: TableConfig, field_order: FieldOrder) -> None:
        self.config = config
        self.field_order = field_order
        self.ids = [[EMPTY_ID] * config.s for _ in range(config.d)]
        self.counts = [[EMPTY_COUNT] * config.s for _ in range(config.d)]

    def read_id(self, vector: int, index: int, log: AccessLog | None = None) -> int:
        if log is not None:
            log.record(vector, Field.ID, Mode.READ)
        return self.ids[vector][index]

    def write_id(self, vector: int, index: int, value: int, log: AccessLog | None = None) -> None:
        if log is not None:
            log.record(vector, Field.ID, Mode.WRITE)
        self.ids[vector][index] = value

    def read_count(self, vector: int, index: int, log: AccessLog | None = None) -> int:
        if log is not None:
            log.record(vector, Field.COUNT, Mode.READ)
        return self.counts[vector][index]

    def write_count(self, vector: int, index: int, value: int, log: AccessLog | None = None) -> None:
        if log is not None:
            log.record(vector, Field.COUNT, Mode.WRITE)
        self.counts[vector][index] = value

    def set_entry(self, vector: int, index: int, entry: FlowEntry) -> None:
        """Place an entry directly (test and copy plumbing, not a pipeline op)."""
        self.ids[vector][index] = entry.id
        self.counts[vector][index] = entry.count

    def reset(self) -> None:
        for i in range(self.config.d):
            ids_i = self.ids[i]
            counts_i = self.counts[i]
            for j in range(self.config.s):
                ids_i[j] = EMPTY_ID
                counts_i[j] = EMPTY_COUNT

    def entries(self) -> Iterator[FlowEntry]:
        """Non-empty entries, vector-major then index order."""
        for i in range(self.config.d):
            ids_i = self.ids[i]
            counts_i = self.counts[i]
            for j in range(self.config.s):
                if ids_i[j] != EMPTY_ID:
                    yield FlowEntry(ids_i[j], counts_i[j])

    def entry_multiset(self) -> dict[FlowEntry, int]:
        out: dict[FlowEntry, int] = {}
        for e in self.entries():
            out[e] = out.get(e, 0) + 1
        return out

    def occupancy(self) -> int:
        return sum(1 for _ in self.entries())

    def check_placement(self) -> None:
        """Assert every non-empty entry sits at its own hash index."""
        for i in range(self.config.d):
            for j in range(self.config.s):
                fid = self.ids[i][j]
                if fid != EMPTY_ID:
                    assert hash_index(self.config, i, fid) == j, (
                        f"entry {fid} misplaced at ({i},{j})"
                    )
                else:
                    assert self.counts[i][j] == EMPTY_COUNT, (
                        f"empty slot ({i},{j}) carries count {self.counts[i][j]}"
                    )

    def equals(self, other: "MultiVectorTable") -> bool:
        return self.ids == other.ids and self.counts == other.counts


def snapshot_copy(src: MultiVectorTable, field_order: FieldOrder | None = None) -> MultiVectorTable:
    """Deep, isolated copy of src; optionally with a different field order."""
    out = MultiVectorTable(src.config, field_order or src.field_order)
    out.ids = [row[:] for row in src.ids]
    out.counts = [row[:] for row in src.counts]
    return out


def table_entries(t: MultiVectorTable) -> list[FlowEntry]:
    """All non-empty entries of t in deterministic vector-major order."""
    return list(t.entries())


def memory_bytes(config: TableConfig, id_bytes: int, count_bytes: int) -> int:
    """Exact size of one table at the given per-field widths."""
    return config.d * config.s * (id_bytes + count_bytes)
