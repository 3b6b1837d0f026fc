"""Partitioned global memory.

Each unit owns a private virtual arena. Every registered block of globally
addressable bytes (the non-collective scratch region and each collective
segment's local portion) is mapped into that arena at a 64-byte aligned,
monotonically increasing base, so a single absolute arena offset names any
local byte a progress agent may need to touch on the requesting unit's
behalf.

Collective segments carry small monotonically increasing integer ids that
are never reused; id 0 is reserved for the per-unit scratch region.
"""

from __future__ import annotations

import bisect
import itertools
import struct
import threading
from dataclasses import dataclass, replace

from . import transport as tp
from .errors import (AllocationError, BoundsError, CollectiveTimeoutError,
                     StaleSegmentError, UsageError)

REGION_SEGID = 0
_ALLOC_PAYLOAD = struct.Struct("<II")  # (allocation ordinal within team, segid)


def _align(x: int, a: int) -> int:
    return (x + a - 1) // a * a


@dataclass(frozen=True)
class GlobalPtr:
    """Names one byte of one unit's portion of a segment."""

    segid: int
    unit: object  # UnitId
    offset: int

    def __add__(self, nbytes: int) -> "GlobalPtr":
        return replace(self, offset=self.offset + nbytes)

    def at(self, unit) -> "GlobalPtr":
        """Same segment and offset, viewed at another unit's portion."""
        return replace(self, unit=unit)


@dataclass
class LocalView:
    """A window onto bytes owned by one unit.

    ``arena_offset`` is the absolute arena address of the first byte, or
    None for wrapped foreign buffers, which are invisible to progress
    agents and therefore usable on the direct path only.
    """

    unit: object
    mv: memoryview
    length: int
    arena_offset: int | None
    segid: int | None = None
    _region_start: int | None = None  # set only for freeable scratch blocks

    def slice(self, start: int, nbytes: int) -> "LocalView":
        if start < 0 or start + nbytes > self.length:
            raise BoundsError(
                f"slice [{start}, {start + nbytes}) outside view of {self.length} bytes")
        off = None if self.arena_offset is None else self.arena_offset + start
        return LocalView(self.unit, self.mv[start:start + nbytes], nbytes, off,
                         self.segid)


@dataclass
class SegmentRecord:
    segid: int
    team_id: int
    index: int             # ordinal of this allocation within its team
    nbytes_per_unit: int
    alignment: int
    members: tuple
    live: bool = True


class RegionAllocator:
    """First-fit free-list allocator over the scratch region.

    Blocks are handed out at 8-byte granularity. Freed blocks return to the
    list as-is; adjacent free blocks are not merged, so heavily mixed sizes
    can strand fragments. That is acceptable for a scratch region that is
    reset when the runtime goes away.
    """

    GRAIN = 8

    def __init__(self, nbytes: int):
        self.size = nbytes
        self._free: list[tuple[int, int]] = [(0, nbytes)] if nbytes else []
        self._lock = threading.Lock()

    def alloc(self, nbytes: int) -> int:
        if nbytes <= 0:
            raise UsageError("allocation size must be positive")
        need = _align(nbytes, self.GRAIN)
        with self._lock:
            for i, (start, size) in enumerate(self._free):
                if size >= need:
                    if size == need:
                        del self._free[i]
                    else:
                        self._free[i] = (start + need, size - need)
                    return start
        raise AllocationError(
            f"scratch region exhausted: {need} bytes requested")

    def free(self, start: int, nbytes: int):
        need = _align(nbytes, self.GRAIN)
        with self._lock:
            # Keep the list address-ordered so the scan is genuinely
            # first-fit and freed low blocks are found again.
            bisect.insort(self._free, (start, need))


class LocalStore:
    """One unit's arena: scratch region plus collective segment portions."""

    def __init__(self, unit, region_bytes: int):
        self.unit = unit
        self._lock = threading.Lock()
        self._next_base = 0
        # arena map, ordered by base: (base, length, segid)
        self._arena: list[tuple[int, int, int]] = []
        self._segments: dict[int, bytearray] = {}
        self.region = RegionAllocator(region_bytes)
        self.register_segment(REGION_SEGID, region_bytes)
        self.region_base = 0

    def register_segment(self, segid: int, nbytes: int, alignment: int = 64) -> int:
        with self._lock:
            base = _align(self._next_base, max(64, alignment))
            self._segments[segid] = bytearray(nbytes)
            self._arena.append((base, nbytes, segid))
            self._next_base = base + max(nbytes, 64)
            return base

    def segment_buffer(self, segid: int) -> bytearray:
        with self._lock:
            try:
                return self._segments[segid]
            except KeyError:
                raise StaleSegmentError(
                    f"unit {self.unit.rank} holds no segment {segid}") from None

    def segment_base(self, segid: int) -> int:
        with self._lock:
            for base, _, sid in self._arena:
                if sid == segid:
                    return base
        raise StaleSegmentError(f"unit {self.unit.rank} holds no segment {segid}")

    def resolve_arena(self, offset: int, nbytes: int) -> tuple[int, memoryview]:
        """Map an absolute arena offset to (segid, bytes)."""
        with self._lock:
            for base, length, segid in self._arena:
                if base <= offset < base + max(length, 1):
                    if offset - base + nbytes > length:
                        raise BoundsError(
                            f"arena range [{offset}, {offset + nbytes}) spills out of "
                            f"segment {segid} on unit {self.unit.rank}")
                    buf = self._segments[segid]
                    start = offset - base
                    return segid, memoryview(buf)[start:start + nbytes]
        raise BoundsError(
            f"arena offset {offset} maps to no registered block on unit {self.unit.rank}")

    def describe(self) -> str:
        with self._lock:
            lines = [f"unit {self.unit.rank} arena ({len(self._arena)} blocks)"]
            for base, length, segid in self._arena:
                lines.append(f"  base={base:<12d} len={length:<10d} segid={segid}")
        return "\n".join(lines)


class MemoryManager:
    def __init__(self, config, units, transport):
        self.config = config
        self.transport = transport
        self.stores = {
            u.rank: LocalStore(u, 0 if u.is_agent else config.region_bytes)
            for u in units
        }
        self._units = {u.rank: u for u in units}
        self._registry: dict[int, SegmentRecord] = {}
        self._reg_lock = threading.Lock()
        self._segid = itertools.count(1)
        self._team_slot: dict[int, dict] = {}
        self._team_ordinal: dict[int, itertools.count] = {}

    # -- local (non-collective) ------------------------------------------------

    def local_alloc(self, unit, nbytes: int) -> LocalView:
        store = self.stores[unit.rank]
        start = store.region.alloc(nbytes)
        mv = memoryview(store.segment_buffer(REGION_SEGID))[start:start + nbytes]
        return LocalView(unit, mv, nbytes, store.region_base + start,
                         REGION_SEGID, _region_start=start)

    def local_free(self, unit, view: LocalView):
        if view._region_start is None:
            raise UsageError("view was not produced by local_alloc")
        if view.unit.rank != unit.rank:
            raise UsageError("a unit may free only its own scratch blocks")
        self.stores[unit.rank].region.free(view._region_start, view.length)
        view._region_start = None

    def wrap_buffer(self, unit, buf) -> LocalView:
        """Expose a caller-owned writable buffer for direct-path transfers."""
        mv = memoryview(buf)
        if mv.readonly:
            raise UsageError("wrapped buffers must be writable")
        mv = mv.cast("B")
        return LocalView(unit, mv, len(mv), None)

    # -- collective segments -----------------------------------------------

    def _barrier(self, team):
        try:
            team.barrier.wait()
        except threading.BrokenBarrierError:
            raise CollectiveTimeoutError(
                f"collective on team {team.team_id} timed out") from None

    def team_alloc_aligned(self, team, unit, nbytes: int, alignment: int = 64):
        """Collective. Every member allocates ``nbytes`` of its own memory;
        returns a pointer to byte 0 of the lowest member's portion."""
        if unit.is_agent:
            raise UsageError("progress agents do not participate in collectives")
        if nbytes < 0:
            raise UsageError("allocation size must be non-negative")
        lowest = team.members[0]
        self._barrier(team)
        if unit.rank == lowest.rank:
            segid = next(self._segid)
            ordinal = next(self._team_ordinal.setdefault(team.team_id,
                                                         itertools.count()))
            rec = SegmentRecord(segid, team.team_id, ordinal, nbytes, alignment,
                                team.members)
            with self._reg_lock:
                self._registry[segid] = rec
            self._team_slot[team.team_id] = {"segid": segid}
            # Agents on every node that hosts a member get an empty portion so
            # the segment id is mapped in their arenas too, and the agents on
            # those nodes hear about the id on their control channel.
            touched = sorted({m.node for m in team.members})
            payload = _ALLOC_PAYLOAD.pack(ordinal, segid)
            for node in touched:
                for agent in self._agents_on(node):
                    self.stores[agent.rank].register_segment(segid, 0, alignment)
                    self.transport.send_ctrl(
                        tp.CtrlMessage(unit, agent, tp.ALLOC, payload))
        self._barrier(team)
        segid = self._team_slot[team.team_id]["segid"]
        self.stores[unit.rank].register_segment(segid, nbytes, alignment)
        self._barrier(team)
        return GlobalPtr(segid, lowest, 0)

    def team_free(self, team, unit, gptr: GlobalPtr):
        """Collective. Retires the segment; later accesses fail loudly."""
        rec = self._record(gptr.segid)
        lowest = team.members[0]
        self._barrier(team)
        if unit.rank == lowest.rank:
            rec.live = False
            payload = _ALLOC_PAYLOAD.pack(rec.index, rec.segid)
            for node in sorted({m.node for m in team.members}):
                for agent in self._agents_on(node):
                    self.transport.send_ctrl(
                        tp.CtrlMessage(unit, agent, tp.FREE, payload))
        self._barrier(team)

    def _agents_on(self, node):
        return [u for u in self._units.values() if u.node == node and u.is_agent]

    # -- resolution ---------------------------------------------------------

    def _record(self, segid: int) -> SegmentRecord:
        with self._reg_lock:
            try:
                return self._registry[segid]
            except KeyError:
                raise StaleSegmentError(f"unknown segment id {segid}") from None

    def segment_view(self, unit, segid: int) -> LocalView:
        """This unit's own portion of a collective segment."""
        rec = self._record(segid)
        if not rec.live:
            raise StaleSegmentError(f"segment {segid} has been freed")
        store = self.stores[unit.rank]
        buf = store.segment_buffer(segid)
        return LocalView(unit, memoryview(buf), len(buf),
                         store.segment_base(segid), segid)

    def descriptor(self, view: LocalView) -> int:
        """Arena address of a view, for encoding into request packets."""
        if view.arena_offset is None:
            raise UsageError(
                "wrapped buffers have no arena address; use the direct path")
        return view.arena_offset

    def locate_view(self, rank: int, arena_offset: int, nbytes: int) -> LocalView:
        """Materialize a view from an arena address (agent-side lookup)."""
        store = self.stores[rank]
        segid, mv = store.resolve_arena(arena_offset, nbytes)
        if segid != REGION_SEGID and not self._record(segid).live:
            raise StaleSegmentError(f"segment {segid} has been freed")
        return LocalView(self._units[rank], mv, nbytes, arena_offset, segid)

    def target_buffer(self, gptr: GlobalPtr, nbytes: int) -> memoryview:
        """Writable window on the target unit's portion of a segment."""
        if gptr.segid != REGION_SEGID:
            rec = self._record(gptr.segid)
            if not rec.live:
                raise StaleSegmentError(f"segment {gptr.segid} has been freed")
        buf = self.stores[gptr.unit.rank].segment_buffer(gptr.segid)
        if gptr.offset < 0 or gptr.offset + nbytes > len(buf):
            raise BoundsError(
                f"range [{gptr.offset}, {gptr.offset + nbytes}) outside the "
                f"{len(buf)}-byte portion of segment {gptr.segid} on unit "
                f"{gptr.unit.rank}")
        return memoryview(buf)[gptr.offset:gptr.offset + nbytes]

    def dump_segments(self, unit=None) -> str:
        stores = ([self.stores[unit.rank]] if unit is not None
                  else [self.stores[r] for r in sorted(self.stores)])
        return "\n".join(s.describe() for s in stores)
