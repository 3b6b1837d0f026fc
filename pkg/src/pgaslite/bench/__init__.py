"""Benchmark harness: overlap/availability micro-benchmark and a 3D
heat-conduction halo-exchange kernel with a serial reference."""

from .avail import (BenchSample, measure_availability, parse_sizes,
                    read_avail_csv, sweep_availability, write_avail_csv)
from .heat3d import (HeatConfig, HeatResult, checksum_field, heat3d,
                     heat3d_serial_oracle)
from .workload import calibrate_spin, spin

__all__ = [
    "BenchSample", "HeatConfig", "HeatResult", "calibrate_spin",
    "checksum_field", "heat3d", "heat3d_serial_oracle",
    "measure_availability", "parse_sizes", "read_avail_csv", "spin",
    "sweep_availability", "write_avail_csv",
]
