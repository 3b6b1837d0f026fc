"""One-sided put/get with pluggable completion routes.

Three routes exist per operation:

* ``eager-direct`` — the issuing unit starts the data transfer immediately
  and completion is just waiting on it.
* ``deferred``     — nothing moves until ``wait``; the transfer runs, and is
  paid for, inside the wait.
* ``agent``        — the request is encoded into a fixed 41-byte packet and
  handed to the unit's progress agent over its control channel; the agent
  moves the data while the issuing unit keeps computing. Sizes at or below
  ``Config.threshold_bytes`` skip the packet hop and use the direct route.

The request packet is a little-endian frame of seven fields:
``dest:u64  index:u32  origin_offset:u64  target_offset:u64  data_size:u64
segid:u32  is_shmem:u8`` — 41 bytes total.
"""

from __future__ import annotations

import struct
import threading
from collections import namedtuple
from dataclasses import dataclass, field

from . import transport as tp
from .errors import AgentReportedError, ProtocolError, UsageError
from .memory import REGION_SEGID, GlobalPtr, LocalView

PACKET = struct.Struct("<QIQQQIB")
PACKET_BYTES = PACKET.size  # 41

Packet = namedtuple(
    "Packet", "dest index origin_offset target_offset data_size segid is_shmem")

OP_GET = "get"
OP_PUT = "put"

ROUTE_AGENT = "agent"
ROUTE_DIRECT = "direct"
ROUTE_DEFERRED = "deferred"


def encode_packet(pkt: Packet) -> bytes:
    if pkt.is_shmem not in (0, 1):
        raise ProtocolError(f"is_shmem must be 0 or 1, got {pkt.is_shmem}")
    return PACKET.pack(*pkt)


def decode_packet(buf: bytes) -> Packet:
    if len(buf) != PACKET_BYTES:
        raise ProtocolError(
            f"request packet must be {PACKET_BYTES} bytes, got {len(buf)}")
    pkt = Packet(*PACKET.unpack(buf))
    if pkt.is_shmem not in (0, 1):
        raise ProtocolError(f"is_shmem must be 0 or 1, got {pkt.is_shmem}")
    return pkt


@dataclass
class Handle:
    """Ticket for one outstanding nonblocking operation."""

    seq: int
    op: str
    origin: object
    route: str
    nbytes: int
    agent: object = None        # agent route only
    token: object = None        # direct route only
    thunk: object = None        # deferred route: () -> TransferToken
    done: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def test(self) -> bool:
        if self.done:
            return True
        if self.route == ROUTE_DIRECT and self.token.done.is_set():
            self.done = True
        return self.done


def _resolve_target(rt, gptr: GlobalPtr, nbytes: int):
    """Validate the remote range up front and fetch the segment ordinal."""
    rt.mem.target_buffer(gptr, nbytes)  # raises on stale/out-of-range
    if gptr.segid == REGION_SEGID:
        return 0
    return rt.mem._record(gptr.segid).index


def _issue_direct(rt, origin, op, view, gptr, nbytes):
    if op == OP_GET:
        return rt.transport.rma_read(origin, gptr, view, nbytes)
    return rt.transport.rma_write(origin, view, gptr, nbytes)


def _nb(rt, origin, op, view: LocalView, gptr: GlobalPtr, nbytes: int, mode):
    if origin.is_agent:
        raise UsageError("progress agents may not issue application transfers")
    if nbytes <= 0:
        raise UsageError("transfer size must be positive")
    if nbytes > view.length:
        raise UsageError(
            f"local view holds {view.length} bytes, transfer wants {nbytes}")
    mode = mode or rt.config.mode
    index = _resolve_target(rt, gptr, nbytes)
    seq = rt.next_seq(origin)

    if mode == "agent" and nbytes > rt.config.threshold_bytes:
        if view.arena_offset is None:
            raise UsageError(
                "agent-routed transfers need arena-resident local buffers; "
                "wrap_buffer views work only on the direct path")
        agent = rt.agent_of(origin)
        pkt = Packet(dest=gptr.unit.rank, index=index,
                     origin_offset=view.arena_offset,
                     target_offset=gptr.offset, data_size=nbytes,
                     segid=gptr.segid,
                     is_shmem=1 if origin.node == gptr.unit.node else 0)
        tag = tp.GET if op == OP_GET else tp.PUT
        rt.transport.send_ctrl(tp.CtrlMessage(origin, agent, tag, encode_packet(pkt)))
        h = Handle(seq, op, origin, ROUTE_AGENT, nbytes, agent=agent)
    elif mode == "deferred":
        h = Handle(seq, op, origin, ROUTE_DEFERRED, nbytes,
                   thunk=lambda: _issue_direct(rt, origin, op, view, gptr, nbytes))
    else:  # eager-direct, or agent mode at or below the threshold
        token = _issue_direct(rt, origin, op, view, gptr, nbytes)
        h = Handle(seq, op, origin, ROUTE_DIRECT, nbytes, token=token)
    rt.track(h)
    return h


def get_nb(rt, origin, into: LocalView, src: GlobalPtr, nbytes: int,
           mode: str | None = None) -> Handle:
    """Start copying ``nbytes`` from ``src`` into the local view."""
    return _nb(rt, origin, OP_GET, into, src, nbytes, mode)


def put_nb(rt, origin, dst: GlobalPtr, frm: LocalView, nbytes: int,
           mode: str | None = None) -> Handle:
    """Start copying ``nbytes`` from the local view to ``dst``.

    The source view must stay unmodified until the handle completes.
    """
    return _nb(rt, origin, OP_PUT, frm, dst, nbytes, mode)


def _sync_agent(rt, origin, agent):
    """One WAIT round-trip; completes everything queued at that agent."""
    rt.transport.send_ctrl(tp.CtrlMessage(origin, agent, tp.WAIT))
    reply = rt.transport.recv_ctrl(
        origin, agent, tp.WAIT_DONE,
        timeout=max(60.0, 4 * rt.config.collective_timeout))
    if reply.payload[:1] == b"\x01":
        detail = reply.payload[1:].decode("utf-8", "replace")
        raise AgentReportedError(detail or "agent reported a transfer error")


def _finish(rt, handle):
    handle.done = True
    rt.untrack(handle)


def wait(rt, handle: Handle):
    """Block until the operation is locally and remotely complete."""
    if handle.done:
        return
    if handle.route == ROUTE_DIRECT:
        handle.token.done.wait()
        _finish(rt, handle)
    elif handle.route == ROUTE_DEFERRED:
        token = handle.thunk()
        token.done.wait()
        _finish(rt, handle)
    else:
        agent = handle.agent
        _sync_agent(rt, handle.origin, agent)
        # One round-trip retires every agent-routed operation this origin
        # had outstanding at that agent, not just this handle.
        for h in rt.outstanding(handle.origin):
            if h.route == ROUTE_AGENT and h.agent.rank == agent.rank:
                _finish(rt, h)
        if not handle.done:
            _finish(rt, handle)


def waitall(rt, origin, handles):
    """Complete a batch. Agent-routed handles cost one WAIT round-trip per
    distinct agent, in first-use order; deferred handles are all issued
    before any is waited on."""
    agents_seen = []
    for h in handles:
        if h.done or h.route != ROUTE_AGENT:
            continue
        if all(a.rank != h.agent.rank for a in agents_seen):
            agents_seen.append(h.agent)
    tokens = []
    for h in handles:
        if not h.done and h.route == ROUTE_DEFERRED:
            tokens.append((h, h.thunk()))
    for agent in agents_seen:
        _sync_agent(rt, origin, agent)
    for h, token in tokens:
        token.done.wait()
        _finish(rt, h)
    for h in handles:
        if h.done:
            continue
        if h.route == ROUTE_DIRECT:
            h.token.done.wait()
            _finish(rt, h)
        elif h.route == ROUTE_AGENT:
            _finish(rt, h)


def get_blocking(rt, origin, into, src, nbytes, mode=None):
    wait(rt, get_nb(rt, origin, into, src, nbytes, mode))


def put_blocking(rt, origin, dst, frm, nbytes, mode=None):
    wait(rt, put_nb(rt, origin, dst, frm, nbytes, mode))
