"""Command line driver: ``bench avail`` and ``bench heat3d``.

Both subcommands print (or write) CSV and exit 0 on success, 2 when a
benchmark fails to converge or a run goes numerically unstable.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import BenchmarkError, NumericError, UsageError
from ..runtime import Config
from .avail import parse_sizes, sweep_availability
from .heat3d import HeatConfig, heat3d, write_heat_csv
from .workload import calibrate_spin


def _gbps_to_bytes(gbps: float) -> float:
    return gbps * 1e9 / 8.0


def _parse_grid(text: str) -> tuple:
    try:
        parts = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"bad grid {text!r}; expected like 32x32x64") from None
    if len(parts) != 3:
        raise UsageError("grid needs three extents, like 32x32x64")
    return parts


def balanced_factors(units: int) -> tuple:
    """Split a unit count into three near-cubic checkerboard factors."""
    if units < 1:
        raise UsageError("units must be positive")
    primes, n = [], units
    d = 2
    while d * d <= n:
        while n % d == 0:
            primes.append(d)
            n //= d
        d += 1
    if n > 1:
        primes.append(n)
    factors = [1, 1, 1]
    for p in sorted(primes, reverse=True):
        factors[factors.index(min(factors))] *= p
    return tuple(sorted(factors, reverse=True))


def _add_runtime_args(sp, units_default=4):
    sp.add_argument("--nodes", type=int, default=2)
    sp.add_argument("--units-per-node", type=int, default=units_default)
    sp.add_argument("--agents-per-node", type=int, default=1)
    sp.add_argument("--threshold", type=int, default=4096)
    sp.add_argument("--net-latency-us", type=float, default=100.0)
    sp.add_argument("--net-bandwidth-gbps", type=float, default=8.0)
    sp.add_argument("--time-dilation", type=float, default=1.0)
    sp.add_argument("--csv", default=None, help="output path (default stdout)")


def _build_parser():
    p = argparse.ArgumentParser(
        prog="bench",
        description="overlap/availability and heat-conduction benchmarks")
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("avail", help="host overhead / availability sweep")
    pa.add_argument("--sizes", default="1K..1M",
                    help="comma list or power-of-two range, e.g. 8K,64K or 1K..1M")
    pa.add_argument("--modes", default="agent,deferred,eager")
    pa.add_argument("--locality", default="inter",
                    help="comma list out of intra,inter")
    pa.add_argument("--reps", type=int, default=5,
                    help="timed repetitions averaged per trial")
    _add_runtime_args(pa)

    ph = sub.add_parser("heat3d", help="3D heat conduction halo-exchange run")
    ph.add_argument("--grid", default="32x32x64")
    ph.add_argument("--units", type=int, default=8)
    ph.add_argument("--iters", type=int, default=100)
    ph.add_argument("--mode", default="agent")
    ph.add_argument("--decomposition", default=None,
                    help="explicit factors like 2x2x2 (default: near-cubic)")
    ph.add_argument("--diffusivity", default="constant",
                    choices=("constant", "linear"))
    ph.add_argument("--kappa0", type=float, default=0.1)
    ph.add_argument("--alpha", type=float, default=0.0)
    ph.add_argument("--repeats", type=int, default=15,
                    help="independent runs; the median run is reported")
    _add_runtime_args(ph, units_default=5)
    return p


def _cmd_avail(args) -> int:
    sizes = parse_sizes(args.sizes)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    localities = [l.strip() for l in args.locality.split(",") if l.strip()]
    cfg = Config(nodes=args.nodes, units_per_node=args.units_per_node,
                 agents_per_node=args.agents_per_node,
                 threshold_bytes=args.threshold,
                 net_latency=args.net_latency_us * 1e-6,
                 net_bandwidth=_gbps_to_bytes(args.net_bandwidth_gbps),
                 time_dilation=args.time_dilation)
    out = args.csv if args.csv is not None else sys.stdout
    sweep_availability(sizes, modes, localities, config=cfg,
                       reps=args.reps, csv_path=out)
    return 0


def _cmd_heat(args) -> int:
    grid = _parse_grid(args.grid)
    decomp = (_parse_grid(args.decomposition) if args.decomposition
              else balanced_factors(args.units))
    hc = HeatConfig(grid=grid, iterations=args.iters, decomposition=decomp,
                    diffusivity_model=args.diffusivity,
                    kappa0=args.kappa0, alpha=args.alpha)
    if hc.units != args.units:
        raise UsageError(
            f"decomposition {decomp} implies {hc.units} units, got --units "
            f"{args.units}")
    if args.units % args.nodes:
        raise UsageError("--units must divide evenly over --nodes")
    cfg = Config(nodes=args.nodes,
                 units_per_node=args.units // args.nodes + args.agents_per_node,
                 agents_per_node=args.agents_per_node,
                 threshold_bytes=args.threshold,
                 net_latency=args.net_latency_us * 1e-6,
                 net_bandwidth=_gbps_to_bytes(args.net_bandwidth_gbps),
                 time_dilation=args.time_dilation, mode=args.mode)
    res = heat3d(hc, cfg.mode, rt_config=cfg, repeats=args.repeats)
    meta = {"net_latency": cfg.net_latency, "repeats": args.repeats,
            "decomposition": "x".join(map(str, decomp)), "dt": hc.dt,
            "diffusivity_model": hc.diffusivity_model,
            "spin_s_per_iter": repr(calibrate_spin())}
    for key, val in (res.agent_counters or {}).items():
        meta[f"agent_{key}"] = val
    out = args.csv if args.csv is not None else sys.stdout
    write_heat_csv([res], out, meta)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "avail":
            return _cmd_avail(args)
        return _cmd_heat(args)
    except (BenchmarkError, NumericError) as e:
        print(f"benchmark error: {e}", file=sys.stderr)
        return 2
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
