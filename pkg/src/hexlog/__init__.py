"""Checkpointing and message-log recovery for mobile hosts on a hex grid.

Mobile hosts roam a hexagonal cell grid of support stations. Stations log
every delivered message before handing it over, hosts checkpoint on their
own clocks, and a per-host trace record tracks where the latest checkpoint
and the post-checkpoint log entries live. On handoff, recovery data is
consolidated at the new station only when the hop distance to the current
checkpoint site reaches the threshold K. A failed host recovers anywhere
by fetching that checkpoint and replaying the logged messages in sequence
order.
"""

from .metrics import CostWeights, MetricsReport, RecoveryReport, TransferReport
from .sim import ScenarioConfig, World, run
from .topology import CellCoord, build_distance_table, build_grid, hex_distance

__version__ = "0.1.0"

__all__ = [
    "CellCoord",
    "CostWeights",
    "MetricsReport",
    "RecoveryReport",
    "ScenarioConfig",
    "TransferReport",
    "World",
    "build_distance_table",
    "build_grid",
    "hex_distance",
    "run",
    "__version__",
]
