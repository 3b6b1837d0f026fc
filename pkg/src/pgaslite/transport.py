"""In-process transport substrate.

Ordered point-to-point control channels with non-consuming probe, plus
one-sided data channels. Intra-node transfers are immediate memory copies;
inter-node transfers follow a latency/bandwidth cost model and land on a
background delivery thread (one per ordered node pair, preserving issue
order). All sleeps are wall-clock, scaled by ``Config.time_dilation``.
"""

from __future__ import annotations

import threading
import time
from collections import deque, namedtuple
from dataclasses import dataclass, field

from .errors import BoundsError, ChannelClosedError, CollectiveTimeoutError

# Control message tags.
GET = "GET"
PUT = "PUT"
WAIT = "WAIT"
WAIT_DONE = "WAIT_DONE"
ALLOC = "ALLOC"
FREE = "FREE"
EXIT = "EXIT"
TAGS = frozenset({GET, PUT, WAIT, WAIT_DONE, ALLOC, FREE, EXIT})

# Transcript record kinds.
K_CTRL = "CTRL"
K_XFER_INTRA = "XFER_INTRA"
K_XFER_INTER = "XFER_INTER"
K_EXIT_ACK = "EXIT_ACK"

Header = namedtuple("Header", "src tag")

Record = namedtuple("Record", "seq t kind src dst info nbytes")


def cost_model(nbytes: int, latency: float, bandwidth: float) -> float:
    """Model seconds for one inter-node transfer of ``nbytes``."""
    return latency + nbytes / bandwidth


@dataclass
class CtrlMessage:
    src: object  # UnitId
    dst: object  # UnitId
    tag: str
    payload: bytes = b""


@dataclass
class TransferToken:
    """Completion record for one one-sided data transfer."""

    accessor: object  # UnitId that issued the transfer
    dest: object      # UnitId whose memory is accessed
    segid: int
    nbytes: int
    issue_time: float
    complete_time: float       # wall-clock target, dilation included
    model_cost: float          # undilated model seconds (0 for intra-node)
    done: threading.Event = field(default_factory=threading.Event)


class Transcript:
    """Optional log: one line per control message and transfer token."""

    def __init__(self, clock):
        self._clock = clock
        self._lock = threading.Lock()
        self._records: list[Record] = []

    def append(self, kind, src, dst, info, nbytes):
        with self._lock:
            seq = len(self._records)
            self._records.append(Record(seq, self._clock(), kind, src, dst, info, nbytes))

    def records(self, kind=None, info=None):
        with self._lock:
            recs = list(self._records)
        if kind is not None:
            recs = [r for r in recs if r.kind == kind]
        if info is not None:
            recs = [r for r in recs if r.info == info]
        return recs

    def ctrl(self, tag=None):
        return self.records(kind=K_CTRL, info=tag)

    def count(self, kind=None, info=None):
        return len(self.records(kind, info))

    def dump(self, path):
        with open(path, "w") as f:
            for r in self.records():
                f.write(f"{r.t:.9f}\t{r.kind}\t{r.src}\t{r.dst}\t{r.info}\t{r.nbytes}\n")


class _Inbox:
    """Per-destination mailbox: one FIFO deque per source."""

    def __init__(self):
        self.lock = threading.Lock()
        self.cond = threading.Condition(self.lock)
        self.queues: dict[int, deque] = {}
        self.rr_last = -1


class _DeliveryWorker(threading.Thread):
    """Delivers inter-node transfers for one ordered node pair in FIFO order."""

    def __init__(self, name):
        super().__init__(name=name, daemon=True)
        self._items = deque()
        self._cond = threading.Condition()
        self._halt = False

    def post(self, token, action):
        with self._cond:
            self._items.append((token, action))
            self._cond.notify()

    def stop(self):
        with self._cond:
            self._halt = True
            self._cond.notify()

    def run(self):
        while True:
            with self._cond:
                while not self._items and not self._halt:
                    self._cond.wait(0.1)
                if self._items:
                    token, action = self._items.popleft()
                elif self._halt:
                    return
                else:
                    continue
            # Sleep until the token's wall completion target, never earlier.
            while True:
                rem = token.complete_time - time.perf_counter()
                if rem <= 0:
                    break
                time.sleep(rem)
            action()
            token.done.set()


class Transport:
    def __init__(self, config, units):
        self.config = config
        self.units = {u.rank: u for u in units}
        self._t0 = time.perf_counter()
        self.transcript = Transcript(self.now)
        self._inboxes = {u.rank: _Inbox() for u in units}
        self._terminated: set[int] = set()
        self._workers: dict[tuple[int, int], _DeliveryWorker] = {}
        self._wlock = threading.Lock()
        self._tok_lock = threading.Lock()
        # accessor rank -> (dest rank, segid) -> [tokens]
        self._tokens: dict[int, dict[tuple[int, int], list[TransferToken]]] = {}
        self.memory = None  # wired by the runtime after memory setup
        self._down = False

    def now(self) -> float:
        return time.perf_counter() - self._t0

    # -- control channels ---------------------------------------------------

    def send_ctrl(self, msg: CtrlMessage):
        """Enqueue on the (src, dst) FIFO. Non-blocking (buffered)."""
        if msg.tag not in TAGS:
            raise ValueError(f"unknown tag {msg.tag!r}")
        if msg.dst.rank in self._terminated or self._down:
            raise ChannelClosedError(f"destination unit {msg.dst.rank} has terminated")
        inbox = self._inboxes[msg.dst.rank]
        with inbox.cond:
            inbox.queues.setdefault(msg.src.rank, deque()).append(msg)
            inbox.cond.notify_all()
        self.transcript.append(K_CTRL, msg.src.rank, msg.dst.rank, msg.tag, len(msg.payload))

    def iprobe(self, unit):
        """Non-blocking probe. Returns Header(src, tag) of the oldest
        undelivered message of the next source in round-robin order, or None.
        Does not consume the message."""
        inbox = self._inboxes[unit.rank]
        with inbox.lock:
            ready = sorted(r for r, q in inbox.queues.items() if q)
            if not ready:
                return None
            nxt = next((r for r in ready if r > inbox.rr_last), ready[0])
            inbox.rr_last = nxt
            head = inbox.queues[nxt][0]
            return Header(self.units[nxt], head.tag)

    def recv_ctrl(self, unit, src, tag, timeout=None):
        """Dequeue the first (src, tag) match; blocks until one arrives.

        Earlier messages from the same source with other tags stay queued.
        """
        inbox = self._inboxes[unit.rank]
        deadline = None if timeout is None else time.perf_counter() + timeout
        with inbox.cond:
            while True:
                q = inbox.queues.get(src.rank)
                if q:
                    for i, msg in enumerate(q):
                        if msg.tag == tag:
                            del q[i]
                            return msg
                if src.rank in self._terminated:
                    raise ChannelClosedError(
                        f"unit {src.rank} terminated with no {tag} message pending")
                if deadline is not None and time.perf_counter() >= deadline:
                    raise CollectiveTimeoutError(
                        f"recv of {tag} from unit {src.rank} timed out")
                inbox.cond.wait(0.05)

    # -- one-sided data channels ---------------------------------------------

    def _wall_cost(self, model_cost: float) -> float:
        return model_cost * self.config.time_dilation

    def _record_token(self, token):
        with self._tok_lock:
            per = self._tokens.setdefault(token.accessor.rank, {})
            lst = per.setdefault((token.dest.rank, token.segid), [])
            if len(lst) > 32:
                lst[:] = [t for t in lst if not t.done.is_set()]
            lst.append(token)

    def _worker_for(self, a_node, d_node):
        key = (a_node, d_node)
        with self._wlock:
            w = self._workers.get(key)
            if w is None:
                w = _DeliveryWorker(f"delivery-{a_node}-{d_node}")
                self._workers[key] = w
                w.start()
            return w

    def rma_read(self, accessor, remote, into, nbytes) -> TransferToken:
        """One-sided read of remote bytes into a local view."""
        target = self.memory.target_buffer(remote, nbytes)
        if nbytes > into.length:
            raise BoundsError(
                f"destination view holds {into.length} bytes, need {nbytes}")
        dst_mv = into.mv
        issue = time.perf_counter()
        if accessor.node == remote.unit.node:
            dst_mv[:nbytes] = bytes(target[:nbytes])
            token = TransferToken(accessor, remote.unit, remote.segid, nbytes,
                                  issue, issue, 0.0)
            token.done.set()
            self.transcript.append(K_XFER_INTRA, accessor.rank, remote.unit.rank,
                                   remote.segid, nbytes)
            return token
        cost = cost_model(nbytes, self.config.net_latency, self.config.net_bandwidth)
        token = TransferToken(accessor, remote.unit, remote.segid, nbytes,
                              issue, issue + self._wall_cost(cost), cost)
        self._record_token(token)

        def land():
            dst_mv[:nbytes] = bytes(target[:nbytes])
            self.transcript.append(K_XFER_INTER, accessor.rank, remote.unit.rank,
                                   remote.segid, nbytes)

        self._worker_for(accessor.node, remote.unit.node).post(token, land)
        return token

    def rma_write(self, accessor, frm, remote, nbytes) -> TransferToken:
        """One-sided write of local bytes to remote memory.

        The source bytes are snapshotted at issue time.
        """
        target = self.memory.target_buffer(remote, nbytes)
        if nbytes > frm.length:
            raise BoundsError(f"source view holds {frm.length} bytes, need {nbytes}")
        issue = time.perf_counter()
        if accessor.node == remote.unit.node:
            target[:nbytes] = bytes(frm.mv[:nbytes])
            token = TransferToken(accessor, remote.unit, remote.segid, nbytes,
                                  issue, issue, 0.0)
            token.done.set()
            self.transcript.append(K_XFER_INTRA, accessor.rank, remote.unit.rank,
                                   remote.segid, nbytes)
            return token
        payload = bytes(frm.mv[:nbytes])
        cost = cost_model(nbytes, self.config.net_latency, self.config.net_bandwidth)
        token = TransferToken(accessor, remote.unit, remote.segid, nbytes,
                              issue, issue + self._wall_cost(cost), cost)
        self._record_token(token)

        def land():
            target[:nbytes] = payload
            self.transcript.append(K_XFER_INTER, accessor.rank, remote.unit.rank,
                                   remote.segid, nbytes)

        self._worker_for(accessor.node, remote.unit.node).post(token, land)
        return token

    def flush(self, accessor, dest, segid):
        """Block until every transfer issued by accessor toward (dest, segid)
        has landed. No-op when there are none."""
        with self._tok_lock:
            per = self._tokens.get(accessor.rank, {})
            pending = list(per.get((dest.rank, segid), ()))
        for t in pending:
            if not t.done.wait(timeout=max(60.0, 4 * self.config.collective_timeout)):
                raise CollectiveTimeoutError(
                    f"flush({accessor.rank}->{dest.rank}, segid={segid}) stuck")
        with self._tok_lock:
            per = self._tokens.get(accessor.rank, {})
            lst = per.get((dest.rank, segid))
            if lst:
                lst[:] = [t for t in lst if not t.done.is_set()]

    # -- lifecycle ------------------------------------------------------------

    def mark_terminated(self, unit):
        self._terminated.add(unit.rank)
        for inbox in self._inboxes.values():
            with inbox.cond:
                inbox.cond.notify_all()

    def exit_ack(self, unit):
        self.transcript.append(K_EXIT_ACK, unit.rank, -1, "", 0)

    def shutdown(self):
        self._down = True
        with self._wlock:
            workers = list(self._workers.values())
        for w in workers:
            w.stop()
        for w in workers:
            w.join(timeout=10.0)
