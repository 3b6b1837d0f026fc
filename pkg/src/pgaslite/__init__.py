"""Desk-scale partitioned-global-address-space runtime.

Execution units live in one process as threads; a configurable subset of
them act as progress agents that complete one-sided transfers on behalf of
the application units bound to them. Inter-node traffic is timed with a
latency/bandwidth model so overlap behaviour is measurable at laptop scale.
"""

from .errors import (AgentReportedError, AllocationError, BenchmarkError,
                     BoundsError, ChannelClosedError, CollectiveTimeoutError,
                     ConfigError, HandleLeakError, NumericError, PgasError,
                     ProtocolError, StaleSegmentError, StartupError,
                     UsageError)
from .memory import GlobalPtr, LocalView, REGION_SEGID
from .rma import (Handle, Packet, PACKET_BYTES, decode_packet, encode_packet,
                  get_blocking, get_nb, put_blocking, put_nb, wait, waitall)
from .runtime import (Config, MODES, ROLE_AGENT, ROLE_APP, Runtime, Team,
                      UnitId, init, layout_units)

__version__ = "0.1.0"

__all__ = [
    "AgentReportedError", "AllocationError", "BenchmarkError", "BoundsError",
    "ChannelClosedError", "CollectiveTimeoutError", "Config", "ConfigError",
    "GlobalPtr", "Handle", "HandleLeakError", "LocalView", "MODES",
    "NumericError", "Packet", "PACKET_BYTES", "PgasError", "ProtocolError",
    "REGION_SEGID", "ROLE_AGENT", "ROLE_APP", "Runtime", "StaleSegmentError",
    "StartupError", "Team", "UnitId", "UsageError", "decode_packet",
    "encode_packet", "get_blocking", "get_nb", "init", "layout_units",
    "put_blocking", "put_nb", "wait", "waitall", "__version__",
]
