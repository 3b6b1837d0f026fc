"""Calibrated CPU workload for the overlap micro-benchmark.

The work loop is a plain Python counting loop: it holds the interpreter
lock like real application code would hold a core, it does no allocation,
and its per-iteration cost is stable enough to calibrate once and reuse.
"""

from __future__ import annotations

import time

_CAL_ITERS = 1 << 16
_calibrated: float | None = None

# Agent counters worth carrying into benchmark CSV metadata.
COUNTER_KEYS = ("requests_received", "flushes_issued", "drain_batches",
                "idle_drains")


def agent_counters(rt) -> dict:
    """Sum the interesting per-agent counters across a runtime's agents."""
    totals = dict.fromkeys(COUNTER_KEYS, 0)
    for snap in rt.metrics().values():
        for key in COUNTER_KEYS:
            totals[key] += snap[key]
    return totals


def sum_counters(dicts) -> dict:
    totals = dict.fromkeys(COUNTER_KEYS, 0)
    for d in dicts:
        if d:
            for key in COUNTER_KEYS:
                totals[key] += d.get(key, 0)
    return totals


def spin(iters: int) -> int:
    """Burn CPU for ``iters`` loop iterations; returns the count."""
    i = 0
    while i < iters:
        i += 1
    return i


def calibrate_spin(force: bool = False) -> float:
    """Seconds per spin iteration, measured once and cached.

    Takes the best of five short timings so a scheduling hiccup during
    calibration cannot inflate every later estimate.
    """
    global _calibrated
    if _calibrated is None or force:
        best = float("inf")
        for _ in range(5):
            t0 = time.perf_counter()
            spin(_CAL_ITERS)
            best = min(best, time.perf_counter() - t0)
        _calibrated = best / _CAL_ITERS
    return _calibrated
