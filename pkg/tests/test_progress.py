"""Agent behaviour: queue build-up, batched flushing, error reporting."""

import time

import pytest

from pgaslite import Config, Runtime, rma
from pgaslite import transport as tp
from pgaslite.errors import AgentReportedError


def slow_wire_runtime(**kw):
    # A long modelled latency keeps transfers in flight, so requests pile
    # up in the agent queue instead of settling between probes.
    kw.setdefault("nodes", 2)
    kw.setdefault("units_per_node", 2)
    kw.setdefault("agents_per_node", 1)
    kw.setdefault("mode", "agent")
    kw.setdefault("net_latency", 0.05)
    return Runtime(Config(**kw))


def test_queue_grows_while_wire_is_busy_and_flushes_once():
    with slow_wire_runtime() as rt:
        def body(rt, unit):
            gptr = rt.team_alloc(rt.team_all, unit, 1 << 18)
            if unit.rank == rt.team_all.members[0].rank:
                peer = rt.team_all.members[1]
                views = [rt.local_alloc(unit, 8192) for _ in range(12)]
                handles = [rt.get_nb(unit, v, gptr.at(peer) + i * 8192, 8192)
                           for i, v in enumerate(views)]
                rt.waitall(unit, handles)
            rt.barrier()
            rt.team_free(rt.team_all, unit, gptr)

        rt.run(body)
        agent_rank = rt.agent_of(rt.team_all.members[0]).rank
        snap = rt.metrics()[agent_rank]
        assert snap["requests_received"] == 12
        assert snap["gets"] == 12
        # All twelve were queued before the wire settled...
        assert snap["max_queue_len"] == 12
        # ...and one flush of the shared (target, segment) pair retired them.
        assert snap["drain_batches"] == 1
        assert snap["flushes_issued"] == 1
        assert snap["wait_syncs"] == 1
        assert rt.agent(agent_rank).queue_len() == 0


def test_malformed_packet_is_reported_on_next_wait():
    with slow_wire_runtime(net_latency=1e-6) as rt:
        def body(rt, unit):
            gptr = rt.team_alloc(rt.team_all, unit, 1 << 14)
            if unit.rank == rt.team_all.members[0].rank:
                peer = rt.team_all.members[1]
                agent = rt.agent_of(unit)
                rt.transport.send_ctrl(
                    tp.CtrlMessage(unit, agent, tp.GET, b"\x00" * 17))
                view = rt.local_alloc(unit, 8192)
                h = rt.get_nb(unit, view, gptr.at(peer), 8192)
                with pytest.raises(AgentReportedError):
                    rt.wait(h)
                # The report is one-shot; the next sync is clean and the
                # valid operation has completed by then.
                rt.wait(h)
                assert h.done
            rt.barrier()
            rt.team_free(rt.team_all, unit, gptr)

        rt.run(body)
        agent_rank = rt.agent_of(rt.team_all.members[0]).rank
        assert rt.metrics()[agent_rank]["protocol_errors"] == 1


def test_packet_naming_an_agent_is_rejected():
    with slow_wire_runtime(net_latency=1e-6) as rt:
        def body(rt, unit):
            if unit.rank != rt.team_all.members[0].rank:
                return
            agent = rt.agent_of(unit)
            view = rt.local_alloc(unit, 64)
            pkt = rma.Packet(dest=agent.rank, index=0,
                             origin_offset=view.arena_offset, target_offset=0,
                             data_size=64, segid=0, is_shmem=1)
            rt.transport.send_ctrl(
                tp.CtrlMessage(unit, agent, tp.PUT, rma.encode_packet(pkt)))
            rt.transport.send_ctrl(tp.CtrlMessage(unit, agent, tp.WAIT))
            reply = rt.transport.recv_ctrl(unit, agent, tp.WAIT_DONE, timeout=10.0)
            assert reply.payload[:1] == b"\x01"
            assert b"application unit" in reply.payload[1:]

        rt.run(body)


def test_wrong_locality_flag_is_rejected():
    with slow_wire_runtime(net_latency=1e-6) as rt:
        def body(rt, unit):
            if unit.rank != rt.team_all.members[0].rank:
                return
            peer = rt.team_all.members[1]          # other node
            agent = rt.agent_of(unit)
            view = rt.local_alloc(unit, 64)
            pkt = rma.Packet(dest=peer.rank, index=0,
                             origin_offset=view.arena_offset, target_offset=0,
                             data_size=64, segid=0,
                             is_shmem=1)           # claims shared memory
            rt.transport.send_ctrl(
                tp.CtrlMessage(unit, agent, tp.PUT, rma.encode_packet(pkt)))
            rt.transport.send_ctrl(tp.CtrlMessage(unit, agent, tp.WAIT))
            reply = rt.transport.recv_ctrl(unit, agent, tp.WAIT_DONE, timeout=10.0)
            assert reply.payload[:1] == b"\x01"

        rt.run(body)
        agent_rank = rt.agent_of(rt.team_all.members[0]).rank
        assert rt.metrics()[agent_rank]["protocol_errors"] == 1


def test_wait_with_nothing_queued_returns_quickly():
    with slow_wire_runtime() as rt:          # slow wire must not matter
        def body(rt, unit):
            if unit.rank != rt.team_all.members[0].rank:
                return None
            agent = rt.agent_of(unit)
            t0 = time.perf_counter()
            rt.transport.send_ctrl(tp.CtrlMessage(unit, agent, tp.WAIT))
            reply = rt.transport.recv_ctrl(unit, agent, tp.WAIT_DONE, timeout=10.0)
            elapsed = time.perf_counter() - t0
            assert reply.payload == b"\x00"
            return elapsed

        elapsed = [e for e in rt.run(body) if e is not None][0]
        assert elapsed < 1.0
        agent_rank = rt.agent_of(rt.team_all.members[0]).rank
        snap = rt.metrics()[agent_rank]
        assert snap["wait_syncs"] == 1
        assert snap["drain_batches"] == 0
