"""Exception taxonomy for the runtime."""


class PgasError(Exception):
    """Base class for all runtime errors."""


class ConfigError(PgasError):
    """Configuration violates an invariant."""


class StartupError(PgasError):
    """A unit failed to come up during init."""


class UsageError(PgasError):
    """API called from the wrong kind of unit or in the wrong state."""


class AllocationError(PgasError):
    """Reserved-region allocator exhausted."""


class BoundsError(PgasError):
    """Offset or length falls outside a live segment."""


class StaleSegmentError(PgasError):
    """Segment id does not name a live segment (freed or never allocated)."""


class ChannelClosedError(PgasError):
    """Control channel endpoint has terminated."""


class CollectiveTimeoutError(PgasError):
    """A collective call timed out waiting for the other members."""


class HandleLeakError(PgasError):
    """Un-waited handles exist where none are allowed."""

    def __init__(self, handles):
        self.handles = list(handles)
        names = ", ".join(str(h) for h in self.handles)
        super().__init__(f"outstanding handles: {names}")


class AgentReportedError(PgasError):
    """The progress agent reported a protocol error on WAIT_DONE."""


class ProtocolError(PgasError):
    """Malformed or inconsistent command received."""


class BenchmarkError(PgasError):
    """A benchmark failed to converge or produced no sample."""


class NumericError(PgasError):
    """The solver went unstable (NaN/Inf in the field)."""
