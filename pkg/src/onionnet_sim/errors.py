"""Exception types raised across the simulator."""

from __future__ import annotations


class SimError(Exception):
    """Base class for all simulator errors."""


class SchedulingInPast(SimError):
    def __init__(self, time: int, clock: int) -> None:
        super().__init__(f"event at t={time} scheduled while clock={clock}")
        self.time = time
        self.clock = clock


class SimulationAbort(SimError):
    """A handler failed; names the tick and event being dispatched."""

    def __init__(self, event, cause: BaseException) -> None:
        super().__init__(
            f"aborted at tick {event.time} while dispatching {event.kind.value} "
            f"(seq {event.seq}, subject {event.subject!r}): {type(cause).__name__}: {cause}"
        )
        self.event = event
        self.cause = cause


# overlay

class EmptyRelayList(SimError):
    pass


class DuplicateRelay(SimError):
    pass


class TagVerificationFailed(SimError):
    pass


class RelayDown(SimError):
    def __init__(self, node: str, trace=None) -> None:
        super().__init__(f"relay {node} is down")
        self.node = node
        self.trace = trace


class RendezvousMismatch(SimError):
    pass


class UnknownService(SimError):
    pass


# botnet

class BootstrapExhausted(SimError):
    pass


class BadSignature(SimError):
    pass


class IllegalTransition(SimError):
    pass


# soap

class TargetUnknown(SimError):
    pass


class HostNotInfected(SimError):
    pass


# evasion

class UnknownDomain(SimError):
    pass


class NoRendezvous(SimError):
    pass


# scenario

class ParseError(SimError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class ValidationError(SimError):
    def __init__(self, field: str, constraint: str) -> None:
        super().__init__(f"{field}: must satisfy {constraint}")
        self.field = field
        self.constraint = constraint


class MalformedMetrics(SimError):
    def __init__(self, offset: int, message: str) -> None:
        super().__init__(f"malformed metrics at byte {offset}: {message}")
        self.offset = offset
