"""Runtime startup, unit/team layout, and lifecycle.

A configuration of ``nodes`` x ``units_per_node`` execution units is laid
out with ranks dense per node. On every node the highest
``agents_per_node`` ranks become progress agents; the rest are application
units. Application units run caller code on private single-thread
executors; agents run their probe loop on dedicated threads. Teams only
ever contain application units, so the default team over the whole job has
``nodes * (units_per_node - agents_per_node)`` members and the agents stay
invisible to application code.
"""

from __future__ import annotations

import itertools
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

from . import rma
from . import transport as tp
from .errors import (CollectiveTimeoutError, ConfigError, HandleLeakError,
                     StartupError, UsageError)
from .memory import MemoryManager
from .progress import Agent
from .transport import Transport

ROLE_APP = "application"
ROLE_AGENT = "agent"

MODES = ("deferred", "agent", "eager-direct")
_MODE_ALIASES = {"eager": "eager-direct"}

_SWITCH_INTERVAL = 1e-4  # finer thread preemption while a runtime is live


@dataclass(frozen=True)
class UnitId:
    rank: int
    node: int
    role: str

    @property
    def is_agent(self) -> bool:
        return self.role == ROLE_AGENT

    def __str__(self):
        return f"unit{self.rank}/{self.role[:3]}@node{self.node}"


@dataclass
class Team:
    team_id: int
    members: tuple
    barrier: threading.Barrier

    @property
    def size(self) -> int:
        return len(self.members)

    def rank_of(self, unit: UnitId) -> int:
        for i, m in enumerate(self.members):
            if m.rank == unit.rank:
                return i
        raise UsageError(f"{unit} is not a member of team {self.team_id}")

    def members_on(self, node: int):
        return [m for m in self.members if m.node == node]

    def __contains__(self, unit):
        return any(m.rank == unit.rank for m in self.members)


@dataclass
class Config:
    nodes: int = 1
    units_per_node: int = 2
    agents_per_node: int = 1
    threshold_bytes: int = 4096
    net_latency: float = 100e-6
    net_bandwidth: float = float(2 ** 30)
    region_bytes: int = 4 * 2 ** 20
    mode: str = "agent"
    seed: int = 0
    time_dilation: float = 1.0
    collective_timeout: float = 30.0

    def __post_init__(self):
        self.mode = _MODE_ALIASES.get(self.mode, self.mode)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.nodes < 1:
            raise ConfigError("nodes must be at least 1")
        if self.agents_per_node < 1:
            raise ConfigError("agents_per_node must be at least 1")
        if self.units_per_node < self.agents_per_node + 1:
            raise ConfigError(
                "units_per_node must exceed agents_per_node: every node needs "
                "at least one application unit")
        if self.threshold_bytes < 0:
            raise ConfigError("threshold_bytes must be non-negative")
        if self.net_latency < 0:
            raise ConfigError("net_latency must be non-negative")
        if self.net_bandwidth <= 0:
            raise ConfigError("net_bandwidth must be positive")
        if self.region_bytes < 4096:
            raise ConfigError("region_bytes must be at least 4096")
        if self.time_dilation <= 0:
            raise ConfigError("time_dilation must be positive")
        if self.collective_timeout <= 0:
            raise ConfigError("collective_timeout must be positive")

    @classmethod
    def from_mapping(cls, mapping) -> "Config":
        kinds = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in kinds:
                raise ConfigError(f"unknown configuration key {key!r}")
            kind = kinds[key]
            try:
                if "int" in kind:
                    kwargs[key] = int(raw)
                elif "float" in kind:
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = str(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "Config":
        mapping = {}
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, val = line.split("=", 1)
                mapping[key.strip()] = val.strip()
        return cls.from_mapping(mapping)


def layout_units(config: Config) -> list[UnitId]:
    """All units in rank order: on each node, the application units come
    first and the node's agents take the highest local ranks."""
    apps_pn = config.units_per_node - config.agents_per_node
    units = []
    for node in range(config.nodes):
        base = node * config.units_per_node
        for i in range(config.units_per_node):
            role = ROLE_APP if i < apps_pn else ROLE_AGENT
            units.append(UnitId(base + i, node, role))
    return units


class Runtime:
    """Owns the units, transport, memory, and agents for one job."""

    def __init__(self, config: Config):
        if not isinstance(config, Config):
            raise ConfigError("Runtime needs a Config instance")
        self.config = config
        self._finalized = False
        self._shutdown = threading.Event()
        self._old_switch = sys.getswitchinterval()
        sys.setswitchinterval(_SWITCH_INTERVAL)

        self.units = layout_units(config)
        self.units_by_rank = {u.rank: u for u in self.units}
        self.app_units = [u for u in self.units if not u.is_agent]
        self.agent_units = [u for u in self.units if u.is_agent]

        self.transport = Transport(config, self.units)
        self.mem = MemoryManager(config, self.units, self.transport)
        self.transport.memory = self.mem

        self.team_all = Team(
            0, tuple(self.app_units),
            threading.Barrier(len(self.app_units),
                              timeout=config.collective_timeout))

        # Static block partition of each node's application units over its
        # agents; the first (apps % agents) agents take one extra origin.
        self._agent_of: dict[int, UnitId] = {}
        bound: dict[int, list[UnitId]] = {a.rank: [] for a in self.agent_units}
        for node in range(config.nodes):
            apps = [u for u in self.app_units if u.node == node]
            agents = [u for u in self.agent_units if u.node == node]
            q, r = divmod(len(apps), len(agents))
            pos = 0
            for i, agent in enumerate(agents):
                take = q + (1 if i < r else 0)
                for app in apps[pos:pos + take]:
                    self._agent_of[app.rank] = agent
                    bound[agent.rank].append(app)
                pos += take

        self._agents: dict[int, Agent] = {}
        self._agent_threads: dict[int, threading.Thread] = {}
        self._executors: dict[int, ThreadPoolExecutor] = {}
        self._outstanding: dict[int, dict[int, rma.Handle]] = {
            u.rank: {} for u in self.app_units}
        self._seq = {u.rank: itertools.count() for u in self.app_units}
        try:
            for u in self.agent_units:
                agent = Agent(self, u, bound[u.rank])
                t = threading.Thread(target=agent.run, name=f"agent-{u.rank}",
                                     daemon=True)
                self._agents[u.rank] = agent
                self._agent_threads[u.rank] = t
                t.start()
            for u in self.app_units:
                self._executors[u.rank] = ThreadPoolExecutor(
                    max_workers=1, thread_name_prefix=f"unit-{u.rank}")
        except (OSError, RuntimeError) as e:
            self._shutdown.set()
            sys.setswitchinterval(self._old_switch)
            raise StartupError(f"could not start unit threads: {e}") from e

    # -- layout -----------------------------------------------------------

    def unit(self, rank: int) -> UnitId:
        try:
            return self.units_by_rank[rank]
        except KeyError:
            raise UsageError(f"no unit with rank {rank}") from None

    def agent_of(self, origin: UnitId) -> UnitId:
        if origin.is_agent:
            raise UsageError("agents have no progress agent of their own")
        return self._agent_of[origin.rank]

    def agent(self, rank: int) -> Agent:
        return self._agents[rank]

    def metrics(self) -> dict:
        return {rank: a.metrics.snapshot() for rank, a in self._agents.items()}

    def shutdown_requested(self) -> bool:
        return self._shutdown.is_set()

    # -- running application code ------------------------------------------

    def submit(self, unit: UnitId, fn, *args):
        """Run ``fn(rt, unit, *args)`` on the unit's executor thread."""
        if unit.is_agent:
            raise UsageError("cannot submit application work to an agent")
        return self._executors[unit.rank].submit(fn, self, unit, *args)

    def run(self, fn, *args) -> list:
        """Run ``fn(rt, unit, *args)`` on every application unit; returns
        the per-unit results in team order."""
        futures = [self.submit(u, fn, *args) for u in self.team_all.members]
        return [f.result() for f in futures]

    def barrier(self, team: Team | None = None):
        team = team or self.team_all
        try:
            team.barrier.wait()
        except threading.BrokenBarrierError:
            raise CollectiveTimeoutError(
                f"barrier on team {team.team_id} timed out") from None

    # -- memory and transfers (thin delegates) --------------------------------

    def local_alloc(self, unit, nbytes):
        return self.mem.local_alloc(unit, nbytes)

    def local_free(self, unit, view):
        self.mem.local_free(unit, view)

    def wrap_buffer(self, unit, buf):
        return self.mem.wrap_buffer(unit, buf)

    def team_alloc(self, team, unit, nbytes, alignment=64):
        return self.mem.team_alloc_aligned(team, unit, nbytes, alignment)

    def team_free(self, team, unit, gptr):
        self.mem.team_free(team, unit, gptr)

    def segment_view(self, unit, segid):
        return self.mem.segment_view(unit, segid)

    def get_nb(self, origin, into, src, nbytes, mode=None):
        return rma.get_nb(self, origin, into, src, nbytes, mode)

    def put_nb(self, origin, dst, frm, nbytes, mode=None):
        return rma.put_nb(self, origin, dst, frm, nbytes, mode)

    def wait(self, handle):
        rma.wait(self, handle)

    def waitall(self, origin, handles):
        rma.waitall(self, origin, handles)

    def get_blocking(self, origin, into, src, nbytes, mode=None):
        rma.get_blocking(self, origin, into, src, nbytes, mode)

    def put_blocking(self, origin, dst, frm, nbytes, mode=None):
        rma.put_blocking(self, origin, dst, frm, nbytes, mode)

    # -- handle bookkeeping ---------------------------------------------------

    def next_seq(self, origin) -> int:
        return next(self._seq[origin.rank])

    def track(self, handle):
        self._outstanding[handle.origin.rank][handle.seq] = handle

    def untrack(self, handle):
        self._outstanding[handle.origin.rank].pop(handle.seq, None)

    def outstanding(self, origin) -> list:
        return list(self._outstanding[origin.rank].values())

    # -- shutdown ------------------------------------------------------------

    def finalize(self, force: bool = False):
        """Stop agents and executors. With ``force`` the check for
        un-waited handles is skipped and they are dropped instead."""
        if self._finalized:
            return
        leaked = [h for per in self._outstanding.values()
                  for h in per.values() if not h.test()]
        if leaked and not force:
            raise HandleLeakError(leaked)
        for per in self._outstanding.values():
            per.clear()
        for u in self.app_units:
            self.transport.send_ctrl(
                tp.CtrlMessage(u, self.agent_of(u), tp.EXIT))
        self._shutdown.set()
        join_timeout = max(60.0, 4 * self.config.collective_timeout)
        for rank, t in self._agent_threads.items():
            t.join(timeout=join_timeout)
            if t.is_alive():
                raise CollectiveTimeoutError(f"agent {rank} failed to stop")
        for u in self.app_units:
            self.transport.mark_terminated(u)
        for ex in self._executors.values():
            ex.shutdown(wait=True)
        self.transport.shutdown()
        sys.setswitchinterval(self._old_switch)
        self._finalized = True

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.finalize(force=exc_type is not None)
        return False


def init(config: Config | None = None, **overrides) -> Runtime:
    """Start a runtime from a Config or from keyword overrides."""
    if config is None:
        config = Config(**overrides)
    elif overrides:
        raise ConfigError("pass either a Config or keyword overrides, not both")
    return Runtime(config)
