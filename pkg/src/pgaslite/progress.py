"""Progress agents.

An agent is a dedicated unit that loops on its control channel and
completes one-sided transfers on behalf of the application units bound to
it. Each GET/PUT packet is decoded and its transfer *started* the moment
it is received; a record then joins a FIFO queue of in-flight requests.
The queue is settled — one flush per distinct (target unit, segment) pair
— when an origin synchronizes (WAIT) or when the probe loop goes idle, so
a burst of n requests costs far fewer than n flushes. Replies to WAIT
carry a status byte (0 ok, 1 error) plus diagnostic text, letting the
origin's wait raise instead of silently losing agent-side failures.
"""

from __future__ import annotations

import struct
import time
from collections import deque, namedtuple
from dataclasses import dataclass, field, asdict

from . import rma
from . import transport as tp
from .errors import PgasError, ProtocolError
from .memory import GlobalPtr

# An in-flight (already started) transfer awaiting its flush.
Request = namedtuple("Request", "dest segid origin")

_ALLOC_PAYLOAD = struct.Struct("<II")

PARK_SECONDS = 1e-6  # nominal; the OS floor (~0.1 ms) is the real pause

STATUS_OK = b"\x00"
STATUS_ERR = b"\x01"


@dataclass
class AgentMetrics:
    requests_received: int = 0
    gets: int = 0
    puts: int = 0
    drain_batches: int = 0
    idle_drains: int = 0
    wait_syncs: int = 0
    flushes_issued: int = 0
    allocs_seen: int = 0
    frees_seen: int = 0
    exits_seen: int = 0
    protocol_errors: int = 0
    max_queue_len: int = 0
    known_segids: set = field(default_factory=set)

    def snapshot(self) -> dict:
        d = asdict(self)
        d["known_segids"] = set(self.known_segids)
        return d


class Agent:
    """Runs the probe/dispatch/drain loop on its own thread."""

    def __init__(self, rt, unit, bound_origins):
        self.rt = rt
        self.unit = unit
        self.bound = frozenset(u.rank for u in bound_origins)
        self.metrics = AgentMetrics()
        self._queue: deque[Request] = deque()
        self._waiters: list = []
        self._inflight: dict[tuple[int, int], list] = {}
        self._exited: set[int] = set()
        self._pending_err: dict[int, str] = {}

    def queue_len(self) -> int:
        return len(self._queue)

    # -- main loop ----------------------------------------------------------

    def run(self):
        transport = self.rt.transport
        try:
            while True:
                hdr = transport.iprobe(self.unit)
                if hdr is None:
                    # Settle only when the inbox is exhausted *and* every
                    # started transfer has landed; never block, so newly
                    # arriving requests are started without delay.
                    if self._queue or self._waiters:
                        if self._settled():
                            self._drain(idle=not self._waiters)
                            self._reply_waiters()
                        else:
                            time.sleep(PARK_SECONDS)
                    elif self.rt.shutdown_requested() and not self.bound:
                        break
                    else:
                        time.sleep(PARK_SECONDS)
                    continue
                msg = transport.recv_ctrl(self.unit, hdr.src, hdr.tag, timeout=5.0)
                if self._dispatch(msg):
                    break
        finally:
            transport.exit_ack(self.unit)
            transport.mark_terminated(self.unit)

    def _dispatch(self, msg) -> bool:
        m = self.metrics
        if msg.tag in (tp.GET, tp.PUT):
            op = rma.OP_GET if msg.tag == tp.GET else rma.OP_PUT
            try:
                pkt = rma.decode_packet(msg.payload)
                self._validate(pkt)
                self._initiate(msg.src, op, pkt)
            except PgasError as e:
                m.protocol_errors += 1
                self._pending_err[msg.src.rank] = str(e)
                return False
            m.requests_received += 1
            if op == rma.OP_GET:
                m.gets += 1
            else:
                m.puts += 1
            m.max_queue_len = max(m.max_queue_len, len(self._queue))
        elif msg.tag == tp.WAIT:
            m.wait_syncs += 1
            self._waiters.append(msg.src)
        elif msg.tag == tp.ALLOC:
            _, segid = _ALLOC_PAYLOAD.unpack(msg.payload)
            m.allocs_seen += 1
            m.known_segids.add(segid)
        elif msg.tag == tp.FREE:
            _, segid = _ALLOC_PAYLOAD.unpack(msg.payload)
            m.frees_seen += 1
            if segid not in m.known_segids:
                m.protocol_errors += 1
            m.known_segids.discard(segid)
        elif msg.tag == tp.EXIT:
            m.exits_seen += 1
            self._exited.add(msg.src.rank)
            if self._exited >= self.bound:
                self._drain()
                self._reply_waiters()
                return True
        return False

    def _reply_waiters(self):
        for origin in self._waiters:
            err = self._pending_err.pop(origin.rank, "")
            payload = STATUS_OK if not err else STATUS_ERR + err.encode("utf-8")
            self.rt.transport.send_ctrl(
                tp.CtrlMessage(self.unit, origin, tp.WAIT_DONE, payload))
        self._waiters.clear()

    def _validate(self, pkt):
        units = self.rt.units_by_rank
        if pkt.dest not in units or units[pkt.dest].is_agent:
            raise ProtocolError(f"packet names no application unit: dest={pkt.dest}")
        shmem = 1 if units[pkt.dest].node == self.unit.node else 0
        if pkt.is_shmem != shmem:
            raise ProtocolError(
                f"locality flag {pkt.is_shmem} contradicts destination node")

    def _initiate(self, origin, op, pkt):
        """Start the described transfer right away; enqueue it for flush."""
        mem = self.rt.mem
        view = mem.locate_view(origin.rank, pkt.origin_offset, pkt.data_size)
        dest = self.rt.units_by_rank[pkt.dest]
        gptr = GlobalPtr(pkt.segid, dest, pkt.target_offset)
        if op == rma.OP_GET:
            token = self.rt.transport.rma_read(self.unit, gptr, view, pkt.data_size)
        else:
            token = self.rt.transport.rma_write(self.unit, view, gptr, pkt.data_size)
        self._queue.append(Request(dest, pkt.segid, origin))
        if not token.done.is_set():
            self._inflight.setdefault((pkt.dest, pkt.segid), []).append(token)

    def _settled(self) -> bool:
        """True once every started transfer has landed; prunes as it goes."""
        finished = []
        for key, tokens in self._inflight.items():
            tokens[:] = [t for t in tokens if not t.done.is_set()]
            if not tokens:
                finished.append(key)
        for key in finished:
            del self._inflight[key]
        return not self._inflight

    # -- queue settlement -----------------------------------------------------

    def _drain(self, idle: bool = False):
        """Flush every queued in-flight request, one flush per distinct
        (target unit, segment) pair; leaves the queue empty."""
        if not self._queue:
            return
        m = self.metrics
        m.drain_batches += 1
        if idle:
            m.idle_drains += 1
        flushed: set[tuple[int, int]] = set()
        while self._queue:
            req = self._queue.popleft()
            key = (req.dest.rank, req.segid)
            if key in flushed:
                continue
            self.rt.transport.flush(self.unit, req.dest, req.segid)
            m.flushes_issued += 1
            flushed.add(key)
