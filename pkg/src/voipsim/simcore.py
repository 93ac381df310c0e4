"""Deterministic discrete-event core: microsecond clock, event queue, seeded streams.

All simulation interfaces exchange time as integer microsecond ticks; floats
only appear in emitted reports.  Events fire in (fire_at, insertion seq)
order, so runs are reproducible byte for byte given the same master seed.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from heapq import heappop, heappush

US_PER_MS = 1_000
US_PER_S = 1_000_000


def seconds(value: float) -> int:
    """Convert seconds to integer microsecond ticks."""
    return round(value * US_PER_S)


def millis(value: float) -> int:
    """Convert milliseconds to integer microsecond ticks."""
    return round(value * US_PER_MS)


def to_seconds(ticks: int) -> float:
    return ticks / US_PER_S


class SimError(Exception):
    """Base class for simulator errors."""


class SchedulingInPast(SimError):
    """An event was scheduled before the current simulation time."""


class InvalidMean(SimError):
    """Sampling means must be strictly positive."""


class EventHandlerFault(SimError):
    """An event handler raised; the run aborted with partial stats attached."""

    def __init__(self, message: str, stats: "RunStats"):
        super().__init__(message)
        self.stats = stats


@dataclass
class RunStats:
    """Counters accumulated over one simulation run."""

    events_processed: int = 0
    end_ticks: int = 0
    calls_started: int = 0
    calls_blocked: int = 0
    calls_established: int = 0
    calls_failed_setup: int = 0
    calls_completed: int = 0
    packets_generated: int = 0
    packets_delivered: int = 0
    packets_dropped: int = 0
    packets_in_flight: int = 0
    sip_messages_sent: int = 0
    sip_messages_delivered: int = 0
    sip_messages_dropped: int = 0
    drop_reasons: dict[str, int] = field(default_factory=dict)

    def count_drop(self, reason: str) -> None:
        self.drop_reasons[reason] = self.drop_reasons.get(reason, 0) + 1

    def conservation_holds(self) -> bool:
        """Every generated packet must be delivered, dropped or still in flight."""
        return self.packets_generated == (
            self.packets_delivered + self.packets_dropped + self.packets_in_flight
        )


def derive_stream_seed(master_seed: int, name: str) -> int:
    """Stable 64-bit seed for a named stream, independent of platform hashing."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class RngManager:
    """Named, independently seeded random streams.

    Each consumer pulls from its own stream, so adding a new random consumer
    cannot shift the draw sequences of existing ones.
    """

    def __init__(self, master_seed: int):
        self.master_seed = master_seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            rng = random.Random(derive_stream_seed(self.master_seed, name))
            self._streams[name] = rng
        return rng


def exp_sample(rng: random.Random, mean_ticks: int, u: float | None = None) -> int:
    """Exponential draw with the given mean, in ticks.

    Uses the inverse transform -mean*ln(u) with u uniform in (0, 1]; u may be
    forced for boundary tests (u=1 yields exactly 0).
    """
    if mean_ticks <= 0:
        raise InvalidMean(f"mean must be > 0, got {mean_ticks}")
    if u is None:
        u = 1.0 - rng.random()  # random() is [0,1); flip to (0,1]
    return round(-mean_ticks * math.log(u))


class Simulator:
    """Single-threaded event loop over a future-event list.

    Events are heap entries [fire_at, seq, fn, arg, target, kind]; cancellation
    is lazy (fn tombstoned to None) so schedule/cancel stay O(log n).
    """

    def __init__(self, master_seed: int = 1, trace=None):
        self.now = 0
        self.rng = RngManager(master_seed)
        self.stats = RunStats()
        self._heap: list[list] = []
        self._pending: dict[int, list] = {}
        self._next_seq = 0
        self._trace = trace  # writable text stream or None

    def schedule(self, fire_at: int, fn, arg=None, target: str = "", kind: str = "") -> int:
        """Enqueue fn(arg) to run at fire_at; returns a cancellable event id."""
        if fire_at < self.now:
            raise SchedulingInPast(f"fire_at={fire_at} < now={self.now}")
        seq = self._next_seq
        self._next_seq = seq + 1
        entry = [fire_at, seq, fn, arg, target, kind]
        heappush(self._heap, entry)
        self._pending[seq] = entry
        return seq

    def schedule_in(self, delay: int, fn, arg=None, target: str = "", kind: str = "") -> int:
        return self.schedule(self.now + delay, fn, arg, target, kind)

    def cancel(self, event_id: int) -> bool:
        """Make a pending event inert; False if it already fired or is unknown."""
        entry = self._pending.pop(event_id, None)
        if entry is None:
            return False
        entry[2] = None
        return True

    def pending_count(self) -> int:
        return len(self._pending)

    def run_until(self, t_end: int) -> RunStats:
        """Process all events with fire_at <= t_end in (fire_at, seq) order.

        The clock lands exactly on t_end.  A raising handler aborts the run
        with EventHandlerFault carrying the partial stats.
        """
        if t_end < self.now:
            raise SchedulingInPast(f"t_end={t_end} < now={self.now}")
        heap = self._heap
        pending = self._pending
        stats = self.stats
        trace = self._trace
        while heap and heap[0][0] <= t_end:
            entry = heappop(heap)
            fn = entry[2]
            if fn is None:
                continue
            self.now = entry[0]
            del pending[entry[1]]
            stats.events_processed += 1
            if trace is not None:
                trace.write(f"{entry[0]} {entry[1]} {entry[4]} {entry[5]}\n")
            try:
                fn(entry[3])
            except Exception as exc:
                stats.end_ticks = self.now
                raise EventHandlerFault(
                    f"handler for event seq={entry[1]} kind={entry[5]!r} raised: {exc!r}",
                    stats,
                ) from exc
        self.now = t_end
        stats.end_ticks = t_end
        return stats
