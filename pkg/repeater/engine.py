"""Deterministic discrete-event scheduler and labelled random streams.

Time is kept as an integer number of nanoseconds (``TICKS_PER_SECOND``). All
protocol periods are converted once with :func:`to_ticks`, so a period that is
repeated a million times never drifts.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .exceptions import CausalityError

logger = logging.getLogger(__name__)

TICKS_PER_SECOND = 1_000_000_000


def to_ticks(seconds: float) -> int:
    if seconds is None or math.isnan(seconds):
        raise CausalityError("Durée invalide (NaN).")
    if seconds < 0:
        raise CausalityError(f"Durée négative: {seconds!r} s.")
    if math.isinf(seconds):
        raise CausalityError("Durée infinie non représentable.")
    return int(round(seconds * TICKS_PER_SECOND))


def to_seconds(ticks: int) -> float:
    return ticks / TICKS_PER_SECOND


def derive_seed(master_seed: int, label: str) -> int:
    """64-bit seed from ``(master_seed, label)``; stable across runs and platforms."""
    digest = hashlib.blake2b(f"{int(master_seed)}:{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class RandomStream:
    """Independent PRNG stream identified by a label path such as ``link.left.reg3``."""

    def __init__(self, master_seed: int, label: str):
        self.label = label
        self.seed = derive_seed(master_seed, label)
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self) -> float:
        return float(self._generator.random())

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def __repr__(self) -> str:
        return f"RandomStream({self.label!r})"


def uniform(stream: RandomStream) -> float:
    return stream.uniform()


@dataclass(frozen=True)
class Payload:
    action: str
    target: str
    data: tuple[tuple[str, Any], ...] = ()

    def get(self, key: str, default: Any = None) -> Any:
        for name, value in self.data:
            if name == key:
                return value
        return default


@dataclass(order=True)
class Event:
    fire_time: int
    sequence: int
    payload: Payload = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


class EventHandle:
    def __init__(self, event: Event, simulator: "Simulator"):
        self._event = event
        self._simulator = simulator

    @property
    def fire_time(self) -> int:
        return self._event.fire_time

    @property
    def cancelled(self) -> bool:
        return self._event.cancelled

    def cancel(self) -> bool:
        return self._simulator.cancel(self)


Handler = Callable[[Event], None]


class Simulator:
    """Single-threaded event loop ordered by ``(fire_time, sequence)``."""

    def __init__(self, master_seed: int = 0, *, record_trace: bool = False):
        self.master_seed = int(master_seed)
        self._now = 0
        self._queue: list[Event] = []
        self._sequence = itertools.count()
        self._handlers: dict[str, Handler] = {}
        self._streams: dict[str, RandomStream] = {}
        self._stop_requested = False
        self.record_trace = record_trace
        self.trace: list[tuple[int, str, str]] = []
        self.scheduled = 0
        self.processed = 0
        self.cancelled = 0

    @property
    def now(self) -> int:
        return self._now

    @property
    def now_seconds(self) -> float:
        return to_seconds(self._now)

    def on(self, action: str, handler: Handler) -> None:
        self._handlers[action] = handler

    def stream(self, label: str) -> RandomStream:
        stream = self._streams.get(label)
        if stream is None:
            stream = RandomStream(self.master_seed, label)
            self._streams[label] = stream
        return stream

    def event(self, fire_time: int, action: str, target: str = "", **data: Any) -> Event:
        return Event(
            fire_time=int(fire_time),
            sequence=next(self._sequence),
            payload=Payload(action=action, target=target, data=tuple(sorted(data.items()))),
        )

    def schedule(self, event: Event) -> EventHandle:
        if event.fire_time < self._now:
            raise CausalityError(
                f"Événement '{event.payload.action}' planifié à {event.fire_time} ns "
                f"avant l'instant courant {self._now} ns."
            )
        heapq.heappush(self._queue, event)
        self.scheduled += 1
        return EventHandle(event, self)

    def call_at(self, fire_time: int, action: str, target: str = "", **data: Any) -> EventHandle:
        return self.schedule(self.event(fire_time, action, target, **data))

    def call_in(self, delay: int, action: str, target: str = "", **data: Any) -> EventHandle:
        return self.call_at(self._now + int(delay), action, target, **data)

    def cancel(self, handle: EventHandle) -> bool:
        event = handle._event
        if event.cancelled:
            return False
        if event not in self._queue:
            return False
        event.cancelled = True
        self.cancelled += 1
        return True

    def stop(self) -> None:
        self._stop_requested = True

    @property
    def pending(self) -> int:
        return sum(1 for event in self._queue if not event.cancelled)

    def run_until(self, t_end: int) -> int:
        """Process every event with ``fire_time <= t_end``; returns how many ran.

        When a handler calls :meth:`stop` the loop returns right after that event
        and the clock stays at its fire time.
        """
        if t_end < self._now:
            raise CausalityError(f"t_end={t_end} ns antérieur à l'instant courant {self._now} ns.")
        self._stop_requested = False
        count = 0
        while self._queue and self._queue[0].fire_time <= t_end:
            event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self._now = event.fire_time
            handler = self._handlers.get(event.payload.action)
            if handler is None:
                raise KeyError(f"Aucun gestionnaire pour l'action '{event.payload.action}'.")
            if self.record_trace:
                self.trace.append((event.fire_time, event.payload.action, event.payload.target))
            handler(event)
            self.processed += 1
            count += 1
            if self._stop_requested:
                logger.debug("Arrêt demandé à t=%d ns après %d événements.", self._now, count)
                return count
        self._now = t_end
        return count

    def audit(self) -> dict[str, int]:
        pending = self.pending
        return {
            "scheduled": self.scheduled,
            "processed": self.processed,
            "cancelled": self.cancelled,
            "pending": pending,
            "balanced": int(self.scheduled == self.processed + self.cancelled + pending),
        }

    def trace_digest(self) -> str:
        digest = hashlib.sha256()
        for fire_time, action, target in self.trace:
            digest.update(f"{fire_time}|{action}|{target}\n".encode("utf-8"))
        return digest.hexdigest()
