"""Trace-driven peer-to-peer backup: availability traces, transfer
scheduling (optimal max-flow and randomized), redundancy policies, full
system simulation with crash/repair dynamics, and metric reporting.

The usual entry points:

- :mod:`p2pbackup.trace`: event parsing, slotization, synthetic traces.
- :mod:`p2pbackup.sched`: F(T)/O(x) via max-flow, randomized scheduling.
- :mod:`p2pbackup.redundancy`: fixed-n planning, eTTR, data-loss bounds.
- :mod:`p2pbackup.sim`: the slot-by-slot simulator.
- :mod:`p2pbackup.report`: metric aggregation and CSV export.
- ``p2pbackup`` console script: the command-line front end.
"""

__version__ = "0.1.0"

from .redundancy import (  # noqa: F401
    AdaptiveThresholds,
    CodingParams,
    backup_complete,
    data_loss_probability,
    estimate_ttr,
    fixed_redundancy_n,
)
from .sched import (  # noqa: F401
    Schedule,
    ScheduleOutcome,
    TransferProblem,
    ideal_baseline,
    max_fragments,
    optimal_completion,
    random_schedule,
)
from .sim import SimConfig, SimReport, run  # noqa: F401
from .trace import (  # noqa: F401
    AvailabilityMatrix,
    parse_events,
    read_matrix_file,
    slotize,
    synth_trace,
    write_matrix_file,
)

__all__ = [
    "AdaptiveThresholds",
    "AvailabilityMatrix",
    "CodingParams",
    "Schedule",
    "ScheduleOutcome",
    "SimConfig",
    "SimReport",
    "TransferProblem",
    "backup_complete",
    "data_loss_probability",
    "estimate_ttr",
    "fixed_redundancy_n",
    "ideal_baseline",
    "max_fragments",
    "optimal_completion",
    "parse_events",
    "random_schedule",
    "read_matrix_file",
    "run",
    "slotize",
    "synth_trace",
    "write_matrix_file",
]
