"""Shared test wiring: wall-clock anchor and ordering.

The suite-runtime check has to observe everything else, so it is moved to
the very end of the collection order.
"""

import time

SESSION_T0 = time.time()


def pytest_collection_modifyitems(config, items):
    last = [it for it in items if "suite_runtime" in it.name]
    rest = [it for it in items if "suite_runtime" not in it.name]
    items[:] = rest + last
