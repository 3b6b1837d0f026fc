import faulthandler

import pytest

# Threaded runtimes can deadlock rather than fail; a watchdog turns any
# hang into a stack dump and a hard exit instead of a stuck CI job.
WATCHDOG_SECONDS = 300


@pytest.fixture(autouse=True)
def _watchdog():
    faulthandler.dump_traceback_later(WATCHDOG_SECONDS, exit=True)
    yield
    faulthandler.cancel_dump_traceback_later()
