"""Availability traces.

Ingests login/logoff event logs, discretizes them into per-peer, per-slot
availability matrices, filters out low-uptime peers, and generates synthetic
traces with diurnal and weekly correlation for reproducible experiments.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

LOGIN = "login"
LOGOFF = "logoff"

DEFAULT_SLOT_SECONDS = 3600.0
DEFAULT_MIN_UPTIME = 4.0 / 24.0


class TraceFormatError(ValueError):
    """Raised for malformed event or matrix files; message carries the line number."""


@dataclass(frozen=True)
class AvailabilityEvent:
    peer_id: str
    timestamp: float
    kind: str  # LOGIN or LOGOFF


@dataclass(frozen=True, eq=False)
class AvailabilityMatrix:
    """Online indicator a_{i,t} per (peer row i, time slot t), plus the slot length."""

    bits: np.ndarray
    slot_seconds: float = DEFAULT_SLOT_SECONDS
    peer_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise ValueError(f"bits must be 2-D, got shape {bits.shape}")
        if self.slot_seconds <= 0:
            raise ValueError("slot_seconds must be positive")
        if self.peer_ids is not None and len(self.peer_ids) != bits.shape[0]:
            raise ValueError("peer_ids length does not match row count")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def num_peers(self) -> int:
        return self.bits.shape[0]

    @property
    def num_slots(self) -> int:
        return self.bits.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.bits[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AvailabilityMatrix):
            return NotImplemented
        return (
            self.slot_seconds == other.slot_seconds
            and self.peer_ids == other.peer_ids
            and self.bits.shape == other.bits.shape
            and bool(np.array_equal(self.bits, other.bits))
        )


@dataclass(frozen=True, eq=False)
class PeerAvailabilityStats:
    per_peer: np.ndarray  # a_i, one fraction per peer row
    system: float  # a, the mean of per-peer values


def parse_events(lines) -> tuple[list[AvailabilityEvent], list[str]]:
    """Parse text records into a sorted, alternation-repaired event list.

    Each record is ``peer_id,timestamp_seconds,login|logoff``; blank lines and
    lines starting with ``#`` are skipped.  Events are sorted by (timestamp,
    peer_id).  Consecutive same-kind events for a peer are dropped (first wins).
    A logoff with no preceding login gets a synthesized login at the epoch and
    a warning.  Returns (events, warnings).
    """
    raw: list[AvailabilityEvent] = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split(",")
        if len(parts) != 3:
            raise TraceFormatError(f"line {lineno}: expected 3 comma-separated fields, got {len(parts)}")
        peer_id, ts_text, kind = (p.strip() for p in parts)
        if kind not in (LOGIN, LOGOFF):
            raise TraceFormatError(f"line {lineno}: kind must be login or logoff, got {kind!r}")
        try:
            timestamp = float(ts_text)
        except ValueError:
            raise TraceFormatError(f"line {lineno}: bad timestamp {ts_text!r}") from None
        if timestamp < 0:
            raise TraceFormatError(f"line {lineno}: negative timestamp {ts_text}")
        raw.append(AvailabilityEvent(peer_id, timestamp, kind))

    raw.sort(key=lambda e: (e.timestamp, e.peer_id))

    events: list[AvailabilityEvent] = []
    warnings: list[str] = []
    last_kind: dict[str, str] = {}
    for ev in raw:
        prev = last_kind.get(ev.peer_id)
        if prev is None and ev.kind == LOGOFF:
            warnings.append(
                f"peer {ev.peer_id}: logoff at {ev.timestamp:g} before any login; assuming login at epoch"
            )
            events.append(AvailabilityEvent(ev.peer_id, 0.0, LOGIN))
            last_kind[ev.peer_id] = LOGIN
            prev = LOGIN
        if ev.kind == prev:
            continue  # duplicate same-kind event, first wins
        events.append(ev)
        last_kind[ev.peer_id] = ev.kind

    events.sort(key=lambda e: (e.timestamp, e.peer_id))
    return events, warnings


def read_event_file(path) -> tuple[list[AvailabilityEvent], list[str]]:
    with open(path, encoding="utf-8") as fh:
        return parse_events(fh)


def _sessions(events) -> dict[str, list[tuple[float, float | None]]]:
    """Group alternating events into per-peer [login, logoff) intervals; None = still open."""
    out: dict[str, list[tuple[float, float | None]]] = {}
    for ev in events:
        spans = out.setdefault(ev.peer_id, [])
        if ev.kind == LOGIN:
            spans.append((ev.timestamp, None))
        else:
            start, _ = spans[-1]
            spans[-1] = (start, ev.timestamp)
    return out


def slotize(events, slot_seconds: float = DEFAULT_SLOT_SECONDS, num_slots: int | None = None) -> AvailabilityMatrix:
    """Discretize alternating events into an availability matrix.

    A peer counts as online in a slot iff it is online for at least half the
    slot.  Rows are ordered by sorted peer id.  The horizon defaults to the
    smallest whole number of slots covering the last event; sessions still open
    at the horizon run to its end.
    """
    if slot_seconds <= 0:
        raise ValueError("slot_seconds must be positive")
    if num_slots is None:
        if not events:
            raise ValueError("cannot infer num_slots from an empty event list")
        horizon = max(ev.timestamp for ev in events)
        num_slots = max(1, math.ceil(horizon / slot_seconds))
    if num_slots <= 0:
        raise ValueError("num_slots must be positive")

    horizon = num_slots * slot_seconds
    peer_ids = tuple(sorted({ev.peer_id for ev in events}))
    index = {pid: i for i, pid in enumerate(peer_ids)}
    coverage = np.zeros((len(peer_ids), num_slots), dtype=float)

    for pid, spans in _sessions(events).items():
        i = index[pid]
        for start, end in spans:
            stop = horizon if end is None else min(end, horizon)
            if stop <= start:
                continue
            first = int(start // slot_seconds)
            last = min(num_slots - 1, int(math.ceil(stop / slot_seconds)) - 1)
            for t in range(first, last + 1):
                lo = max(start, t * slot_seconds)
                hi = min(stop, (t + 1) * slot_seconds)
                if hi > lo:
                    coverage[i, t] += hi - lo

    bits = (coverage >= slot_seconds / 2).astype(np.uint8)
    return AvailabilityMatrix(bits=bits, slot_seconds=slot_seconds, peer_ids=peer_ids)


def filter_min_uptime(matrix: AvailabilityMatrix, min_fraction: float = DEFAULT_MIN_UPTIME):
    """Drop peers whose mean availability is below min_fraction (>= keeps).

    Returns (filtered matrix, kept peer ids); kept ids are row indices when the
    matrix has no peer_ids.  Relative row order is preserved.
    """
    if not 0 <= min_fraction <= 1:
        raise ValueError("min_fraction must be in [0, 1]")
    means = matrix.bits.mean(axis=1) if matrix.num_slots else np.zeros(matrix.num_peers)
    keep = np.flatnonzero(means >= min_fraction)
    if matrix.peer_ids is not None:
        kept_ids = [matrix.peer_ids[i] for i in keep]
        new_ids = tuple(kept_ids)
    else:
        kept_ids = [int(i) for i in keep]
        new_ids = None
    filtered = AvailabilityMatrix(
        bits=matrix.bits[keep].copy(),
        slot_seconds=matrix.slot_seconds,
        peer_ids=new_ids,
    )
    return filtered, kept_ids


def synth_trace(
    num_peers: int,
    num_slots: int,
    availability=(0.2, 0.9),
    diurnal_amplitude: float = 0.0,
    weekend_factor: float = 1.0,
    slot_seconds: float = DEFAULT_SLOT_SECONDS,
    seed=None,
) -> AvailabilityMatrix:
    """Generate a random availability matrix with diurnal/weekly correlation.

    Each peer draws a target availability a_i: uniformly from a (low, high)
    pair, or directly from a length-num_peers array.  Slot t is online with
    probability a_i scaled by a sinusoidal profile with a 24-slot period
    (peak at slot 14 of each day) and a weekend multiplier applied to days 5
    and 6 of each 7-day week, clamped to [0, 1].  Deterministic under seed.
    """
    if num_peers <= 0 or num_slots <= 0:
        raise ValueError("num_peers and num_slots must be positive")
    if not 0 <= diurnal_amplitude <= 1:
        raise ValueError("diurnal_amplitude must be in [0, 1]")
    if not 0 <= weekend_factor <= 1:
        raise ValueError("weekend_factor must be in [0, 1]")
    rng = np.random.default_rng(seed)

    target = np.asarray(availability, dtype=float)
    if target.shape == (2,):
        lo, hi = float(target[0]), float(target[1])
        if not (0 <= lo <= hi <= 1):
            raise ValueError("availability range must satisfy 0 <= low <= high <= 1")
        a_i = rng.uniform(lo, hi, size=num_peers)
    elif target.shape == (num_peers,):
        if target.min() < 0 or target.max() > 1:
            raise ValueError("per-peer availabilities must be in [0, 1]")
        a_i = target
    else:
        raise ValueError("availability must be a (low, high) pair or a length-num_peers array")

    slots = np.arange(num_slots)
    hour = slots % 24
    profile = 1.0 + diurnal_amplitude * np.cos(2 * np.pi * (hour - 14) / 24)
    day = (slots // 24) % 7
    profile = np.where(day >= 5, profile * weekend_factor, profile)

    p_online = np.clip(a_i[:, None] * profile[None, :], 0.0, 1.0)
    bits = (rng.random((num_peers, num_slots)) < p_online).astype(np.uint8)
    return AvailabilityMatrix(bits=bits, slot_seconds=slot_seconds)


def availability_stats(matrix: AvailabilityMatrix) -> PeerAvailabilityStats:
    """Per-peer availabilities a_i (row means) and the system-wide mean a."""
    if matrix.num_peers == 0 or matrix.num_slots == 0:
        raise ValueError("matrix must have at least one peer and one slot")
    per_peer = matrix.bits.mean(axis=1)
    return PeerAvailabilityStats(per_peer=per_peer, system=float(per_peer.mean()))


_MATRIX_HEADER = re.compile(r"^peers=(\d+) slots=(\d+) slot_seconds=([0-9.eE+-]+)$")


def write_matrix_file(matrix: AvailabilityMatrix, path) -> None:
    """Write the matrix cache format: a header line, then one 0/1 row per peer.

    The format carries no peer ids; reading back yields an id-less matrix.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"peers={matrix.num_peers} slots={matrix.num_slots} slot_seconds={matrix.slot_seconds:g}\n")
        for i in range(matrix.num_peers):
            fh.write("".join("1" if b else "0" for b in matrix.bits[i]) + "\n")


def read_matrix_file(path) -> AvailabilityMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        m = _MATRIX_HEADER.match(header)
        if not m:
            raise TraceFormatError(f"line 1: bad matrix header {header!r}")
        peers, slots = int(m.group(1)), int(m.group(2))
        slot_seconds = float(m.group(3))
        bits = np.zeros((peers, slots), dtype=np.uint8)
        for i in range(peers):
            line = fh.readline().rstrip("\n")
            if len(line) != slots or set(line) - {"0", "1"}:
                raise TraceFormatError(f"line {i + 2}: expected {slots} characters of 0/1")
            bits[i] = np.frombuffer(line.encode("ascii"), dtype=np.uint8) - ord("0")
    return AvailabilityMatrix(bits=bits, slot_seconds=slot_seconds)
