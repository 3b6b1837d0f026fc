"""3D heat conduction with halo exchange over one-sided gets.

Explicit Euler on a 7-point stencil, cell-centered grid, fixed-temperature
(Dirichlet) ghost faces. Diffusivity is either constant or linear in the
temperature, kappa(T) = kappa0 * (1 + alpha*T); face diffusivity is the
arithmetic mean of the two adjacent cells, which reduces to the constant
scheme when alpha = 0.

The global grid is split as a 3D checkerboard, one block per application
unit. Each iteration a unit posts nonblocking gets for the six halo faces
(packed contiguously by the neighbor into its segment), computes its
interior — which needs no ghost data — while those are in flight, waits,
computes the six boundary slabs, then meets the team barrier. The update
for every cell evaluates the exact same expression the serial reference
evaluates, so the parallel field matches the serial one bitwise no matter
the decomposition or the transfer mode.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from ..errors import NumericError, UsageError
from ..runtime import Config, Runtime
from .workload import agent_counters

HEAT_COLUMNS = ("grid", "units", "mode", "iters", "total_t_ms", "comm_t_ms",
                "calc_fraction", "checksum")

# Face ids: 0 x-low, 1 x-high, 2 y-low, 3 y-high, 4 z-low, 5 z-high.
_OPPOSITE = (1, 0, 3, 2, 5, 4)
_NAN_CHECK_EVERY = 32


@dataclass
class HeatConfig:
    grid: tuple            # global cells (nx, ny, nz)
    iterations: int
    decomposition: tuple   # checkerboard factors (Px, Py, Pz)
    diffusivity_model: str = "constant"   # or "linear"
    kappa0: float = 0.1
    alpha: float = 0.0
    dt: float | None = None               # None: 90% of the stability bound
    dx: float = 1.0
    initial_temp: float = 0.0
    face_temps: tuple = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        self.grid = tuple(int(v) for v in self.grid)
        self.decomposition = tuple(int(v) for v in self.decomposition)
        if len(self.grid) != 3 or min(self.grid) < 1:
            raise UsageError("grid must be three positive extents")
        if len(self.decomposition) != 3 or min(self.decomposition) < 1:
            raise UsageError("decomposition must be three positive factors")
        for g, p in zip(self.grid, self.decomposition):
            if g % p:
                raise UsageError(
                    f"grid {self.grid} not divisible by decomposition "
                    f"{self.decomposition}")
        if self.diffusivity_model not in ("constant", "linear"):
            raise UsageError("diffusivity_model must be constant or linear")
        if self.kappa0 <= 0 or self.alpha < 0:
            raise UsageError("kappa0 must be positive and alpha non-negative")
        if self.iterations < 0 or self.dx <= 0:
            raise UsageError("iterations must be >= 0 and dx positive")
        if len(self.face_temps) != 6:
            raise UsageError("face_temps needs six values")
        if self.dt is None:
            self.dt = 0.9 * self.stable_dt

    @property
    def units(self) -> int:
        px, py, pz = self.decomposition
        return px * py * pz

    @property
    def block(self) -> tuple:
        return tuple(g // p for g, p in zip(self.grid, self.decomposition))

    @property
    def kappa_max(self) -> float:
        if self.diffusivity_model == "constant":
            return self.kappa0
        t_max = max(float(self.initial_temp), *map(float, self.face_temps))
        return self.kappa0 * (1.0 + self.alpha * max(t_max, 0.0))

    @property
    def stable_dt(self) -> float:
        return self.dx * self.dx / (6.0 * self.kappa_max)

    @property
    def linear(self) -> bool:
        return self.diffusivity_model == "linear"


@dataclass
class HeatResult:
    grid: tuple
    units: int
    mode: str
    iterations: int
    total_t: float          # seconds, wall over the iteration loop
    comm_t: float           # seconds, mean per unit: pack+post+wait+unpack
    calc_t: float           # seconds, mean per unit: interior+boundary
    calc_fraction: float
    checksum: str
    agent_counters: dict | None = field(default=None, repr=False,
                                        compare=False)
    field: np.ndarray = field(default=None, repr=False, compare=False)


def step_region(p: np.ndarray, kappa0: float, alpha: float, linear: bool,
                r: float) -> np.ndarray:
    """One explicit-Euler update of the core of padded region ``p``.

    ``r`` is dt/dx^2. Returns the new core values; ``p`` is not modified.
    Every cell's update is one fixed elementwise expression, so any
    partition of a domain into regions produces bitwise-identical results.
    """
    c = p[1:-1, 1:-1, 1:-1]
    xm = p[:-2, 1:-1, 1:-1]
    xp = p[2:, 1:-1, 1:-1]
    ym = p[1:-1, :-2, 1:-1]
    yp = p[1:-1, 2:, 1:-1]
    zm = p[1:-1, 1:-1, :-2]
    zp = p[1:-1, 1:-1, 2:]
    if linear:
        kc = kappa0 * (1.0 + alpha * c)

        def kface(n):
            return 0.5 * (kappa0 * (1.0 + alpha * n) + kc)

        flux = (kface(xm) * (xm - c) + kface(xp) * (xp - c)
                + kface(ym) * (ym - c) + kface(yp) * (yp - c)
                + kface(zm) * (zm - c) + kface(zp) * (zp - c))
    else:
        flux = kappa0 * ((xm - c) + (xp - c) + (ym - c) + (yp - c)
                         + (zm - c) + (zp - c))
    return c + r * flux


def checksum_field(f: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(f).tobytes()).hexdigest()


def _check_finite(arr, hc):
    if not np.isfinite(arr).all():
        raise NumericError(
            f"field went non-finite: dt={hc.dt!r} against the explicit-Euler "
            f"bound dt <= dx^2/(6*kappa_max) = {hc.stable_dt!r}")


def heat3d_serial_oracle(hc: HeatConfig) -> np.ndarray:
    """Single-context reference: same kernel, whole grid as one region."""
    nx, ny, nz = hc.grid
    r = hc.dt / (hc.dx * hc.dx)
    a = np.full((nx + 2, ny + 2, nz + 2), float(hc.initial_temp))
    _apply_bc_all(a, hc.face_temps)
    for it in range(hc.iterations):
        a[1:-1, 1:-1, 1:-1] = step_region(a, hc.kappa0, hc.alpha, hc.linear, r)
        if it % _NAN_CHECK_EVERY == _NAN_CHECK_EVERY - 1 or it == hc.iterations - 1:
            _check_finite(a[1:-1, 1:-1, 1:-1], hc)
    return a[1:-1, 1:-1, 1:-1].copy()


def _apply_bc_all(a, temps):
    a[0, 1:-1, 1:-1] = temps[0]
    a[-1, 1:-1, 1:-1] = temps[1]
    a[1:-1, 0, 1:-1] = temps[2]
    a[1:-1, -1, 1:-1] = temps[3]
    a[1:-1, 1:-1, 0] = temps[4]
    a[1:-1, 1:-1, -1] = temps[5]


# -- parallel worker ------------------------------------------------------

def _plane(arr, face, ghost=False):
    """Boundary core plane of a padded block (or its ghost plane)."""
    lo, hi = (0, -1) if ghost else (1, -2)
    sel = [slice(1, -1)] * 3
    axis = face // 2
    sel[axis] = lo if face % 2 == 0 else hi
    return arr[tuple(sel)]


def _heat_worker(rt, unit, hc: HeatConfig):
    team = rt.team_all
    rank = team.rank_of(unit)
    px_n, py_n, pz_n = hc.decomposition
    pos = (rank % px_n, (rank // px_n) % py_n, rank // (px_n * py_n))
    bx, by, bz = hc.block
    r = hc.dt / (hc.dx * hc.dx)
    kap, alp, lin = hc.kappa0, hc.alpha, hc.linear

    # face geometry: byte size and the neighbor's team rank per side
    fshape = {0: (by, bz), 1: (by, bz), 2: (bx, bz), 3: (bx, bz),
              4: (bx, by), 5: (bx, by)}
    fbytes = {f: int(np.prod(s)) * 8 for f, s in fshape.items()}
    stride = (px_n, py_n, pz_n)
    rank_step = (1, px_n, px_n * py_n)
    neighbor = {}
    for f in range(6):
        axis, side = f // 2, f % 2
        coord = pos[axis] + (1 if side else -1)
        neighbor[f] = (rank + (1 if side else -1) * rank_step[axis]
                       if 0 <= coord < stride[axis] else None)
    internal = [f for f in range(6) if neighbor[f] is not None]

    # outgoing slots: two parities x six faces, contiguous in our segment
    off, cur = {}, 0
    for f in range(6):
        off[f] = cur
        cur += fbytes[f]
    parity_stride = cur
    gp = rt.team_alloc(team, unit, 2 * parity_stride)
    out = rt.segment_view(unit, gp.segid)
    inbuf = {f: rt.local_alloc(unit, fbytes[f]) for f in internal}

    a = np.full((bx + 2, by + 2, bz + 2), float(hc.initial_temp))
    for f in range(6):
        if neighbor[f] is None:
            _plane(a, f, ghost=True)[...] = hc.face_temps[f]
    nxt = a.copy()

    def pack(parity, arr):
        base = parity * parity_stride
        for f in internal:
            data = np.ascontiguousarray(_plane(arr, f)).tobytes()
            out.mv[base + off[f]:base + off[f] + fbytes[f]] = data

    pack(0, a)
    rt.barrier()
    t_comm = t_calc = 0.0
    pc = time.perf_counter
    t_start = pc()
    for it in range(hc.iterations):
        parity = it & 1
        t0 = pc()
        handles = []
        for f in internal:
            nbr = team.members[neighbor[f]]
            src = gp.at(nbr) + (parity * parity_stride + off[_OPPOSITE[f]])
            handles.append(rt.get_nb(unit, inbuf[f], src, fbytes[f]))
        # Hand the core over once so whoever can progress the posted pulls
        # (other blocks still posting, progress agents) starts before the
        # stencil work pins the CPU.
        os.sched_yield()
        t_comm += pc() - t0

        t0 = pc()
        nxt[2:-2, 2:-2, 2:-2] = step_region(
            a[1:-1, 1:-1, 1:-1], kap, alp, lin, r)
        t_calc += pc() - t0

        t0 = pc()
        rt.waitall(unit, handles)
        for f in internal:
            got = np.frombuffer(inbuf[f].mv, dtype=np.float64)
            _plane(a, f, ghost=True)[...] = got.reshape(fshape[f])
        t_comm += pc() - t0

        t0 = pc()
        # six non-overlapping boundary slabs partition core \ interior
        nxt[1:2, 1:-1, 1:-1] = step_region(a[0:3, :, :], kap, alp, lin, r)
        nxt[-2:-1, 1:-1, 1:-1] = step_region(a[-3:, :, :], kap, alp, lin, r)
        nxt[2:-2, 1:2, 1:-1] = step_region(a[1:-1, 0:3, :], kap, alp, lin, r)
        nxt[2:-2, -2:-1, 1:-1] = step_region(a[1:-1, -3:, :], kap, alp, lin, r)
        nxt[2:-2, 2:-2, 1:2] = step_region(a[1:-1, 1:-1, 0:3], kap, alp, lin, r)
        nxt[2:-2, 2:-2, -2:-1] = step_region(a[1:-1, 1:-1, -3:], kap, alp, lin, r)
        t_calc += pc() - t0

        a, nxt = nxt, a
        if it % _NAN_CHECK_EVERY == _NAN_CHECK_EVERY - 1 or it == hc.iterations - 1:
            _check_finite(a[1:-1, 1:-1, 1:-1], hc)
        t0 = pc()
        pack(parity ^ 1, a)
        t_comm += pc() - t0
        rt.barrier()
    total = pc() - t_start

    for f in internal:
        rt.local_free(unit, inbuf[f])
    rt.barrier()
    rt.team_free(team, unit, gp)
    return pos, a[1:-1, 1:-1, 1:-1].copy(), total, t_comm, t_calc


def default_heat_runtime(hc: HeatConfig, mode: str, **overrides) -> Config:
    units = hc.units
    nodes = 2 if units % 2 == 0 else 1
    base = dict(nodes=nodes, units_per_node=units // nodes + 1,
                agents_per_node=1, mode=mode, net_latency=100e-6)
    base.update(overrides)
    return Config(**base)


def _run_once(hc: HeatConfig, mode: str, rt_config: Config | None) -> HeatResult:
    cfg = rt_config or default_heat_runtime(hc, mode)
    if cfg.mode != mode:
        mapping = {f.name: getattr(cfg, f.name) for f in fields(Config)}
        mapping["mode"] = mode
        cfg = Config(**mapping)
    rt = Runtime(cfg)
    try:
        apps = len(rt.team_all.members)
        if apps != hc.units:
            raise UsageError(
                f"runtime has {apps} application units, decomposition "
                f"{hc.decomposition} needs {hc.units}")
        outs = rt.run(_heat_worker, hc)
        counters = agent_counters(rt)
    finally:
        rt.finalize(force=True)
    bx, by, bz = hc.block
    g = np.empty(hc.grid)
    total = comm = calc = 0.0
    for pos, block, t_total, t_comm, t_calc in outs:
        ix, iy, iz = pos
        g[ix * bx:(ix + 1) * bx, iy * by:(iy + 1) * by,
          iz * bz:(iz + 1) * bz] = block
        total = max(total, t_total)
        comm += t_comm / len(outs)
        calc += t_calc / len(outs)
    frac = calc / total if total > 0 else 0.0
    return HeatResult(hc.grid, hc.units, mode, hc.iterations, total, comm,
                      calc, frac, checksum_field(g), field=g,
                      agent_counters=counters)


def heat3d(hc: HeatConfig, mode: str, rt_config: Config | None = None,
           repeats: int = 1) -> HeatResult:
    """Run the kernel ``repeats`` times on fresh runtimes and report the
    run with the median total time (fields are identical across runs)."""
    if repeats < 1:
        raise UsageError("repeats must be at least 1")
    runs = [_run_once(hc, mode, rt_config) for _ in range(repeats)]
    runs.sort(key=lambda res: res.total_t)
    return runs[len(runs) // 2]


# -- CSV ------------------------------------------------------------------

def _grid_str(grid) -> str:
    return "x".join(str(v) for v in grid)


def write_heat_csv(results, path, metadata: dict | None = None):
    import csv as _csv
    import io as _io
    buf = _io.StringIO()
    for key, val in (metadata or {}).items():
        buf.write(f"# {key}={val}\n")
    w = _csv.writer(buf, lineterminator="\n")
    w.writerow(HEAT_COLUMNS)
    for res in results:
        w.writerow([_grid_str(res.grid), res.units, res.mode, res.iterations,
                    repr(res.total_t * 1e3), repr(res.comm_t * 1e3),
                    repr(res.calc_fraction), res.checksum])
    text = buf.getvalue()
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w") as f:
            f.write(text)
