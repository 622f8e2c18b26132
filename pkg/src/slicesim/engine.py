"""Deterministic discrete-event engine.

Virtual clock in integer microseconds, a (fire_at, seq) ordered event queue,
per-entity seeded RNG streams, and a message bus between simulated entities.
Single-threaded by design: one engine instance per simulation run.
"""

from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable

US = 1
MS = 1_000
SECOND = 1_000_000

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SchedulingInPast(Exception):
    """Raised when an event is scheduled before the current clock."""

    def __init__(self, fire_at: int, clock: int):
        super().__init__(f"cannot schedule at t={fire_at}us, clock is {clock}us")
        self.fire_at = fire_at
        self.clock = clock


def splitmix64(x: int) -> int:
    """One splitmix64 finalizer step (public-domain constants)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & _MASK64
    return h


def derive_stream_seed(global_seed: int, stream_id: str) -> int:
    """Mix (global seed, stream label) into an independent 64-bit seed.

    Label-keyed so that adding or removing entities never perturbs the
    draw sequence of any other entity.
    """
    return splitmix64(splitmix64(global_seed & _MASK64) ^ _fnv1a64(stream_id.encode()))


class RngStream:
    """Deterministic 64-bit generator (splitmix64 sequence).

    Same (seed, stream_id) yields the identical draw sequence on every
    platform; no dependence on interpreter hash seeds or libc.
    """

    def __init__(self, seed: int, stream_id: str = ""):
        self.seed = seed
        self.stream_id = stream_id
        self._state = derive_stream_seed(seed, stream_id)

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        # 53-bit mantissa, same construction as most PRNG float paths
        return (self.next_u64() >> 11) / float(1 << 53)

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def randint(self, a: int, b: int) -> int:
        """Inclusive integer draw via the unbiased multiply-shift trick."""
        n = b - a + 1
        return a + ((self.next_u64() * n) >> 64)

    def choice(self, seq):
        return seq[self.randint(0, len(seq) - 1)]

    def bytes(self, n: int) -> bytes:
        """n random bytes, packed eight per generator step."""
        out = bytearray()
        for _ in range((n + 7) // 8):
            out += self.next_u64().to_bytes(8, "big")
        return bytes(out[:n])


@dataclass(frozen=True)
class Event:
    fire_at: int
    seq: int
    target: str
    payload: Any


@dataclass
class SimSummary:
    """Result of one run_until call."""

    end_time: int
    events_processed: int
    per_entity: Counter = field(default_factory=Counter)
    total_scheduled: int = 0
    total_processed: int = 0
    pending: int = 0


class Entity:
    """Base class for engine-confined actors.

    Subclasses implement handle(msg); all state mutation happens inside
    event handlers on the single engine thread.
    """

    def __init__(self, entity_id: str):
        self.entity_id = entity_id
        self.engine: Engine | None = None

    def handle(self, msg: Any) -> None:
        raise NotImplementedError


def message_kind(payload: Any) -> str:
    if isinstance(payload, tuple) and payload and isinstance(payload[0], str):
        return payload[0]
    return type(payload).__name__


class Engine:
    """Single-threaded event loop with a virtual microsecond clock."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.clock = 0
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self.entities: dict[str, Entity] = {}
        self._rngs: dict[str, RngStream] = {}
        self.total_scheduled = 0
        self.total_processed = 0
        # hooks: trace receives (time, target, kind); log receives free-form lines
        self.trace_hook: Callable[[int, str, str], None] | None = None
        self.dispatch_log: list[tuple[int, str, str]] = []
        self.keep_dispatch_log = False

    def register(self, entity: Entity) -> Entity:
        if entity.entity_id in self.entities:
            raise ValueError(f"duplicate entity id {entity.entity_id!r}")
        entity.engine = self
        self.entities[entity.entity_id] = entity
        return entity

    def unregister(self, entity_id: str) -> None:
        self.entities.pop(entity_id, None)

    def rng(self, stream_id: str) -> RngStream:
        stream = self._rngs.get(stream_id)
        if stream is None:
            stream = RngStream(self.seed, stream_id)
            self._rngs[stream_id] = stream
        return stream

    def schedule(self, fire_at: int, target: str, payload: Any) -> int:
        if fire_at < self.clock:
            raise SchedulingInPast(fire_at, self.clock)
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (fire_at, seq, Event(fire_at, seq, target, payload)))
        self.total_scheduled += 1
        return seq

    def schedule_in(self, delay: int, target: str, payload: Any) -> int:
        return self.schedule(self.clock + max(0, int(delay)), target, payload)

    def send(self, target: str, payload: Any, delay: int = 0) -> int:
        return self.schedule_in(delay, target, payload)

    def run_until(self, t_end: int) -> SimSummary:
        processed = 0
        per_entity: Counter = Counter()
        while self._queue and self._queue[0][0] <= t_end:
            fire_at, _seq, event = heapq.heappop(self._queue)
            self.clock = fire_at
            kind = message_kind(event.payload)
            if self.trace_hook is not None:
                self.trace_hook(fire_at, event.target, kind)
            if self.keep_dispatch_log:
                self.dispatch_log.append((fire_at, event.target, kind))
            entity = self.entities.get(event.target)
            if entity is not None:
                entity.handle(event.payload)
            processed += 1
            self.total_processed += 1
            per_entity[event.target] += 1
        self.clock = t_end
        return SimSummary(
            end_time=self.clock,
            events_processed=processed,
            per_entity=per_entity,
            total_scheduled=self.total_scheduled,
            total_processed=self.total_processed,
            pending=len(self._queue),
        )
