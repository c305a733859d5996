"""Deterministic discrete-event core.

One virtual clock (integer ticks), one priority queue ordered by
``(time, seq)`` and one seeded RNG stream shared by every module. All
randomness must be drawn from :attr:`Engine.rng` inside event dispatch so
that a run is a pure function of its configuration and seed.
"""

from __future__ import annotations

import enum
import heapq
import logging
import random
from dataclasses import dataclass, field, replace
from typing import Any, Callable

from .errors import SchedulingInPast, SimulationAbort

logger = logging.getLogger(__name__)

SimTime = int


class EventKind(enum.Enum):
    CONTACT_ATTEMPT = "ContactAttempt"
    PEER_UPDATE_DUE = "PeerUpdateDue"
    COMMAND_PUSH = "CommandPush"
    ATTACK_TICK = "AttackTick"
    FLUX_ROTATE_DUE = "FluxRotateDue"
    SOAP_PROBE = "SoapProbe"
    DETECTOR_SAMPLE_DUE = "DetectorSampleDue"


@dataclass(frozen=True, order=True)
class Event:
    time: SimTime
    seq: int = -1
    kind: EventKind = field(default=EventKind.CONTACT_ATTEMPT, compare=False)
    subject: str = field(default="", compare=False)
    payload: Any = field(default=None, compare=False)


@dataclass
class RunMetrics:
    """Per-tick rows produced by the engine's tick sampler, plus a summary."""

    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


Handler = Callable[["Engine", Event], None]


class Engine:
    def __init__(self, seed: int) -> None:
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock: SimTime = 0
        self._queue: list[tuple[SimTime, int, Event]] = []
        self._seq = 0
        self._handlers: dict[EventKind, Handler] = {}
        self._next_tick: SimTime = 0
        self.sampler: Callable[[SimTime], dict] | None = None
        self.metrics = RunMetrics()
        # (time, seq, kind, subject) of every dispatched event
        self.transcript: list[tuple[int, int, str, str]] = []
        self.record_dispatch = True

    def on(self, kind: EventKind, handler: Handler) -> None:
        self._handlers[kind] = handler

    def schedule(self, event: Event) -> Event:
        if event.time < self.clock:
            raise SchedulingInPast(event.time, self.clock)
        if event.seq != self._seq:
            event = replace(event, seq=self._seq)
        self._seq += 1
        heapq.heappush(self._queue, (event.time, event.seq, event))
        return event

    def at(self, time: SimTime, kind: EventKind, subject: str = "", payload: Any = None) -> Event:
        return self.schedule(Event(time, self._seq, kind, subject, payload))

    def after(self, delay: int, kind: EventKind, subject: str = "", payload: Any = None) -> Event:
        return self.at(self.clock + delay, kind, subject, payload)

    def __len__(self) -> int:
        return len(self._queue)

    def _dispatch_through(self, tick: SimTime) -> None:
        queue = self._queue
        while queue and queue[0][0] <= tick:
            ev = heapq.heappop(queue)[2]
            if ev.time > self.clock:
                self.clock = ev.time
            if self.record_dispatch:
                self.transcript.append((ev.time, ev.seq, ev.kind.value, ev.subject))
            handler = self._handlers.get(ev.kind)
            if handler is None:
                logger.debug("no handler for %s, dropped", ev.kind)
                continue
            try:
                handler(self, ev)
            except SimulationAbort:
                raise
            except Exception as exc:
                raise SimulationAbort(ev, exc) from exc

    def run_until(self, horizon: SimTime) -> RunMetrics:
        """Dispatch every event with ``time <= horizon`` and leave the clock at ``horizon``.

        When a sampler is installed it is called once per tick, after all of
        that tick's events, and its row appended to :attr:`metrics`.
        """
        if self.sampler is None:
            self._dispatch_through(horizon)
        else:
            for tick in range(self._next_tick, horizon + 1):
                self.clock = tick
                self._dispatch_through(tick)
                self.metrics.rows.append(self.sampler(tick))
        self.clock = max(self.clock, horizon)
        self._next_tick = max(self._next_tick, horizon + 1)
        return self.metrics


class Transcript:
    """Append-only record of protocol-visible facts for audit scans.

    Disabled transcripts accept and discard records so callers need not branch.
    """

    def __init__(self, enabled: bool = False) -> None:
        self.enabled = enabled
        self.records: list[dict] = []

    def add(self, kind: str, time: SimTime, **fields: Any) -> None:
        if self.enabled:
            self.records.append({"type": kind, "t": time, **fields})
