"""Availability traces: parse a login log, discretize it, synthesize one.

Walks the trace toolkit end to end on data small enough to read by eye:
a handwritten event log becomes a slot matrix, the matrix is filtered and
summarized, and a larger synthetic trace with diurnal structure is written
to disk in the cache format the other tools consume.
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from p2pbackup import trace

EVENT_LOG = """\
# peer, unix seconds, login|logoff
alice,0,login
alice,5400,logoff
bob,0,login
bob,7200,logoff
carol,3600,login
carol,5000,logoff
alice,7000,login
"""


def show_matrix(matrix: trace.AvailabilityMatrix, title: str) -> None:
    print(f"\n{title} ({matrix.num_peers} peers x {matrix.num_slots} slots, "
          f"{matrix.slot_seconds:.0f}s slots)")
    ids = matrix.peer_ids or [str(i) for i in range(matrix.num_peers)]
    for pid, row in zip(ids, matrix.bits):
        print(f"  {pid:>8s}  {''.join('#' if b else '.' for b in row)}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    events, warnings = trace.parse_events(EVENT_LOG.splitlines())
    for w in warnings:
        print(f"note: {w}")
    matrix = trace.slotize(events, slot_seconds=1800.0)
    show_matrix(matrix, "from the handwritten log")

    stats = trace.availability_stats(matrix)
    for pid, a in zip(matrix.peer_ids, stats.per_peer):
        print(f"  {pid:>8s}  online {a:.0%} of the horizon")
    print(f"  system-wide availability {stats.system:.0%}")

    # keep only peers online at least half the time
    filtered, kept = trace.filter_min_uptime(matrix, 0.5)
    print(f"\n>=50% uptime keeps {kept}")

    # a synthetic week: 12 peers, hourly slots, afternoon peak, quiet weekends
    week = trace.synth_trace(12, 24 * 7, availability=(0.3, 0.8),
                             diurnal_amplitude=0.4, weekend_factor=0.6,
                             seed=args.seed)
    stats = trace.availability_stats(week)
    by_hour = week.bits.reshape(12, 7, 24).mean(axis=(0, 1))
    print(f"\nsynthetic week: system availability {stats.system:.0%}")
    print("  mean availability by hour of day:")
    print("  " + " ".join(f"{v:.2f}" for v in by_hour))
    print(f"  busiest hour {int(np.argmax(by_hour)):02d}:00, "
          f"quietest {int(np.argmin(by_hour)):02d}:00")

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "week.txt"
        trace.write_matrix_file(week, path)
        again = trace.read_matrix_file(path)
        assert (again.bits == week.bits).all()
        print(f"\nround-tripped through {path.name}: "
              f"{path.stat().st_size} bytes, bits identical")


if __name__ == "__main__":
    main()
