"""OnionBot lifecycle: infection, rally/bootstrap, peer maintenance, push C&C, execution.

Bots know each other only by onion address. Every contact between bots goes
through :class:`Botnet.contact`, which consults the endpoint registry keyed by
onion address; command traffic additionally rides real overlay sessions.

Peering protocol (two request types):

* ``PEER`` - confirmation: the responder moves the requester to the front of
  its table and answers with its neighbour list. Bots send it when
  bootstrapping and once per peer-update period to each current peer; defender
  sybils send it several times per period.
* ``LIST`` - neighbour-list fetch that leaves the responder's table untouched.
  Used by honeypots, which observe without joining tables.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .engine import Engine, EventKind, SimTime, Transcript
from .errors import BadSignature, BootstrapExhausted, IllegalTransition, RelayDown, UnknownService
from .overlay import KeyPair, NodeId, Overlay, derive_onion_address, is_onion_address, verify_signature

logger = logging.getLogger(__name__)

PEER = "peer"
LIST = "list"


class BotState(enum.Enum):
    SUSCEPTIBLE = "susceptible"
    RALLY = "rally"
    WAITING = "waiting"
    EXECUTING = "executing"
    NEUTRALIZED = "neutralized"


S, R, W, E, N = (
    BotState.SUSCEPTIBLE,
    BotState.RALLY,
    BotState.WAITING,
    BotState.EXECUTING,
    BotState.NEUTRALIZED,
)

# W->R and E->R cover orphaned bots whose peer table emptied.
LEGAL_TRANSITIONS = frozenset(
    {(S, R), (R, W), (W, E), (E, W), (W, R), (E, R), (R, N), (W, N), (E, N)}
)
ALIVE = frozenset({R, W, E})


class PeerTable:
    """Bounded, duplicate-free list of onion addresses, most recently confirmed first."""

    def __init__(self, owner: str, capacity: int = 8) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.owner = owner
        self.capacity = capacity
        self.entries: list[str] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, addr: object) -> bool:
        return addr in self.entries

    def _check(self, addr: str) -> None:
        if not is_onion_address(addr):
            raise TypeError(f"peer tables hold onion addresses only, got {addr!r}")

    def touch(self, addr: str) -> str | None:
        """Move or insert ``addr`` at the front. Returns the evicted address, if any."""
        self._check(addr)
        if addr == self.owner:
            return None
        if addr in self.entries:
            self.entries.remove(addr)
        self.entries.insert(0, addr)
        if len(self.entries) > self.capacity:
            return self.entries.pop()
        return None

    def replace(self, ordered: Iterable[str]) -> None:
        out: list[str] = []
        seen = {self.owner}
        for addr in ordered:
            if addr in seen:
                continue
            self._check(addr)
            seen.add(addr)
            out.append(addr)
            if len(out) == self.capacity:
                break
        self.entries = out

    def snapshot(self) -> list[str]:
        return list(self.entries)


@dataclass(frozen=True)
class Command:
    id: str
    kind: str  # "ddos" or "spam"
    issued_at: SimTime
    target: str = "victim"
    rate: int = 0
    duration: int = 0
    volume: int = 0
    window: int = 1
    signature: bytes = b""

    def body(self) -> bytes:
        fields = {
            "id": self.id,
            "kind": self.kind,
            "issued_at": self.issued_at,
            "target": self.target,
            "rate": self.rate,
            "duration": self.duration,
            "volume": self.volume,
            "window": self.window,
        }
        return json.dumps(fields, sort_keys=True, separators=(",", ":")).encode()

    def encode(self) -> bytes:
        return self.body()[:-1] + b',"sig":"' + self.signature.hex().encode() + b'"}'

    @classmethod
    def decode(cls, data: bytes) -> Command:
        raw = json.loads(data)
        sig = bytes.fromhex(raw.pop("sig"))
        return cls(signature=sig, **raw)

    @property
    def span(self) -> int:
        return self.duration if self.kind == "ddos" else self.window

    def emissions(self) -> list[int]:
        """Attack events per tick over the execution span."""
        if self.kind == "ddos":
            return [self.rate] * self.duration
        w = self.window
        return [self.volume * (i + 1) // w - self.volume * i // w for i in range(w)]


@dataclass(frozen=True)
class AttackEvent:
    time: SimTime
    source: str
    target: str
    kind: str  # "ddos-request" or "spam"


@dataclass
class Botmaster:
    node: NodeId
    keypair: KeyPair
    known_bots: set[str] = field(default_factory=set)
    issued: list[Command] = field(default_factory=list)

    @property
    def onion(self) -> str:
        return derive_onion_address(self.keypair.public)

    def issue(self, kind: str, now: SimTime, **params) -> Command:
        unsigned = Command(id=f"cmd-{len(self.issued):04d}", kind=kind, issued_at=now, **params)
        cmd = Command(**{**unsigned.__dict__, "signature": self.keypair.sign(unsigned.body())})
        self.issued.append(cmd)
        return cmd


@dataclass(eq=False)
class Bot:
    node: NodeId
    index: int
    state: BotState = S
    keypair: KeyPair | None = None
    onion: str | None = None
    peers: PeerTable | None = None
    last_update: SimTime = -1
    seen_commands: set[str] = field(default_factory=set)
    current: tuple[str, SimTime] | None = None  # (command id, ends_at) while executing
    attack_events: int = 0

    @property
    def label(self) -> str:
        return self.onion or self.node.id


class Endpoint(Protocol):
    """Non-bot participants (honeypots, sybils) answer the same requests as bots."""

    onion: str

    def on_list_request(self, botnet: Botnet, requester: str, now: SimTime) -> list[str] | None: ...

    def on_peer_request(self, botnet: Botnet, requester: str, now: SimTime) -> list[str] | None: ...

    def on_command(self, botnet: Botnet, data: bytes, sender: str, now: SimTime) -> None: ...


@dataclass
class BotnetParams:
    k: int = 8
    peer_update_period: int = 60
    contact_rate: int = 1
    beta: float = 0.05
    hardcoded_peers: int = 5
    bootstrap_retries: int = 2
    contact_loss: float = 0.0
    seeds_per_push: int = 3
    infection_stop_tick: int = 0  # 0 disables the cut-off
    transport: str = "onion"


@dataclass(frozen=True)
class Delivery:
    command: str
    bot: str
    time: SimTime
    sender: str


class Botnet:
    def __init__(
        self,
        engine: Engine,
        overlay: Overlay | None,
        hosts: list[NodeId],
        master_node: NodeId,
        params: BotnetParams | None = None,
        transcript: Transcript | None = None,
    ) -> None:
        self.engine = engine
        self.rng = engine.rng
        self.overlay = overlay
        self.params = params or BotnetParams()
        self.transcript = transcript or Transcript(False)
        self.bots = [Bot(node, i) for i, node in enumerate(hosts)]
        self.by_node = {b.node.id: b for b in self.bots}
        self.endpoints: dict[str, Bot | Endpoint] = {}
        self.counts = {s: 0 for s in BotState}
        self.counts[S] = len(self.bots)
        self.master = Botmaster(master_node, KeyPair.generate(self.rng))
        self.hardcoded: list[str] = []
        self.contacts_running = False

        # audit logs
        self.transitions: list[tuple[SimTime, str, str, str]] = []
        self.deliveries: list[Delivery] = []
        self.forwards: dict[tuple[str, str], list[str]] = {}
        self.drops: list[tuple[str, str, str, SimTime]] = []
        self.membership_changes: list[SimTime] = []
        self.attack_log: list[AttackEvent] | None = None

        # per-tick counters, reset by the sampler
        self.tick_commands_issued = 0
        self.tick_deliveries = 0
        self.tick_attack_events = 0

    # ------------------------------------------------------------------ state

    def set_state(self, bot: Bot, new: BotState, now: SimTime) -> None:
        old = bot.state
        if old == new:
            return
        if (old, new) not in LEGAL_TRANSITIONS:
            raise IllegalTransition(f"{bot.node.id}: {old.value} -> {new.value} at t={now}")
        bot.state = new
        self.counts[old] -= 1
        self.counts[new] += 1
        self.transitions.append((now, bot.node.id, old.value, new.value))
        self.transcript.add("transition", now, node=bot.node.id, src=old.value, dst=new.value)
        if new is W and bot.onion is not None:
            self.master.known_bots.add(bot.onion)

    def infected_count(self) -> int:
        return self.counts[R] + self.counts[W] + self.counts[E]

    def bot_at(self, onion: str) -> Bot | None:
        ep = self.endpoints.get(onion)
        return ep if isinstance(ep, Bot) else None

    def _new_onion(self) -> tuple[KeyPair, str]:
        while True:
            kp = KeyPair.generate(self.rng)
            onion = derive_onion_address(kp.public)
            if onion not in self.endpoints and (self.overlay is None or not self.overlay.knows(onion)):
                return kp, onion

    def register_endpoint(self, onion: str, node: NodeId, endpoint: Bot | Endpoint) -> None:
        self.endpoints[onion] = endpoint
        if self.overlay is not None:
            self.overlay.register(onion, node)

    def infect(self, bot: Bot, now: SimTime, bootstrap_at: SimTime | None = None) -> None:
        """Susceptible -> Rally with a fresh keypair and onion address."""
        if self.params.transport == "onion":
            bot.keypair, bot.onion = self._new_onion()
            bot.peers = PeerTable(bot.onion, self.params.k)
            self.register_endpoint(bot.onion, bot.node, bot)
        self.set_state(bot, R, now)
        when = now + 1 if bootstrap_at is None else bootstrap_at
        self.engine.at(when, EventKind.PEER_UPDATE_DUE, bot.node.id)

    def seed_infections(self, count: int, now: SimTime = 0) -> list[Bot]:
        """Infect ``count`` hosts drawn uniformly; their addresses form the hardcoded list."""
        chosen = sorted(self.rng.sample(range(len(self.bots)), count))
        bots = [self.bots[i] for i in chosen]
        for bot in bots:
            self.infect(bot, now, bootstrap_at=now)
        self.hardcoded = [b.onion for b in bots[: self.params.hardcoded_peers] if b.onion]
        return bots

    def refresh_hardcoded(self, now: SimTime) -> list[str]:
        """Master pushes a new bootstrap list: random alive bots it knows about."""
        pool = sorted(o for o in self.master.known_bots if (b := self.bot_at(o)) is not None and b.state in ALIVE)
        if pool:
            self.hardcoded = self.rng.sample(pool, min(self.params.hardcoded_peers, len(pool)))
        self.transcript.add("hardcoded", now, peers=list(self.hardcoded))
        return self.hardcoded

    def try_infect(self, source: NodeId, target: NodeId, beta: float) -> bool:
        """Infect ``target`` with probability ``beta`` if it is still susceptible."""
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        bot = self.by_node[target.id]
        if bot.state is not S:
            return False
        if self.rng.random() >= beta:
            return False
        self.infect(bot, self.engine.clock)
        return True

    def start_contacts(self, at: SimTime = 1) -> None:
        if not self.contacts_running:
            self.contacts_running = True
            self.engine.at(at, EventKind.CONTACT_ATTEMPT, "*")

    def contact_round(self, now: SimTime) -> None:
        """Homogeneous mixing: every infected bot draws ``contact_rate`` random targets."""
        p = self.params
        if p.infection_stop_tick and now >= p.infection_stop_tick:
            self.contacts_running = False
            return
        n = len(self.bots)
        active = [b for b in self.bots if b.state in ALIVE]
        if n > 1:
            for bot in active:
                for _ in range(p.contact_rate):
                    j = self.rng.randrange(n - 1)
                    if j >= bot.index:
                        j += 1
                    self.try_infect(bot.node, self.bots[j].node, p.beta)
        if self.counts[S] > 0:
            self.engine.at(now + 1, EventKind.CONTACT_ATTEMPT, "*")
        else:
            self.contacts_running = False

    # ---------------------------------------------------------------- peering

    def contact(self, requester: str, target: str, kind: str, now: SimTime) -> list[str] | None:
        """Send a peering request over the overlay; ``None`` means no answer."""
        if self.params.contact_loss > 0 and self.rng.random() < self.params.contact_loss:
            return None
        ep = self.endpoints.get(target)
        if ep is None:
            return None
        if isinstance(ep, Bot):
            if ep.state not in ALIVE:
                return None
            answer = [a for a in ep.peers if a != requester]  # the table as it was when asked
            if kind == PEER:
                self._accept_peering(ep, requester, now)
            return answer
        if kind == PEER:
            return ep.on_peer_request(self, requester, now)
        return ep.on_list_request(self, requester, now)

    def _accept_peering(self, bot: Bot, requester: str, now: SimTime) -> None:
        known = requester in bot.peers or requester == bot.onion
        bot.peers.touch(requester)
        if not known:
            self.membership_changes.append(now)
            self.transcript.add("peers", now, bot=bot.onion, peers=bot.peers.snapshot())
        if bot.state is R:
            self.set_state(bot, W, now)

    def _note_table(self, bot: Bot, before: set[str], now: SimTime) -> None:
        if set(bot.peers) != before:
            self.membership_changes.append(now)
            self.transcript.add("peers", now, bot=bot.onion, peers=bot.peers.snapshot())

    def bootstrap(self, bot: Bot, hardcoded: list[str], now: SimTime) -> None:
        """Rally -> Waiting by peering with any responsive hardcoded address."""
        if bot.state is not R:
            raise IllegalTransition(f"bootstrap requires Rally, bot is {bot.state.value}")
        before = set(bot.peers)
        for addr in hardcoded:
            if addr == bot.onion:
                continue
            for _ in range(max(1, self.params.bootstrap_retries)):
                if self.contact(bot.onion, addr, PEER, now) is not None:
                    bot.peers.touch(addr)
                    break
        self._note_table(bot, before, now)
        bot.last_update = now
        if len(bot.peers) == 0:
            raise BootstrapExhausted(f"{bot.onion}: no hardcoded peer answered")
        self.set_state(bot, W, now)

    def update_peers(self, bot: Bot, now: SimTime) -> None:
        """Refresh the table: confirm to each current peer, keep the responsive ones, then
        fill from their advertised lists."""
        if bot.state not in (W, E):
            raise IllegalTransition(f"update_peers requires Waiting/Executing, bot is {bot.state.value}")
        before = set(bot.peers)
        responsive: list[str] = []
        candidates: list[str] = []
        for addr in bot.peers.snapshot():
            answer = self.contact(bot.onion, addr, PEER, now)
            if answer is None:
                continue
            responsive.append(addr)
            candidates.extend(answer)
        bot.peers.replace(responsive + candidates)
        bot.last_update = now
        self._note_table(bot, before, now)
        if len(bot.peers) == 0:
            self.set_state(bot, R, now)
            try:
                self.bootstrap(bot, self.hardcoded, now)
            except BootstrapExhausted:
                logger.debug("orphan %s could not re-bootstrap at t=%d", bot.onion, now)

    def on_peer_update_due(self, bot: Bot, now: SimTime) -> None:
        if bot.state in (S, N):
            return
        if bot.state is R:
            try:
                self.bootstrap(bot, self.hardcoded, now)
            except BootstrapExhausted:
                pass
        else:
            self.update_peers(bot, now)
        self.engine.at(now + self.params.peer_update_period, EventKind.PEER_UPDATE_DUE, bot.node.id)

    # ---------------------------------------------------------------- command

    def push_command(self, cmd: Command, now: SimTime) -> list[str]:
        """Send ``cmd`` from the hidden master to randomly chosen known bots."""
        self.tick_commands_issued += 1
        self.transcript.add("issue", now, command=cmd.id)
        known = sorted(self.master.known_bots)
        seeds = self.rng.sample(known, min(self.params.seeds_per_push, len(known)))
        for onion in seeds:
            self._send_command(self.master.node, self.master.onion, onion, cmd, now)
        return seeds

    def _send_command(self, node: NodeId, src: str, dst: str, cmd: Command, now: SimTime) -> None:
        data = cmd.encode()
        if self.overlay is None:
            delay = 0
        else:
            try:
                _, delay = self.overlay.send(node, src, dst, data)
            except (UnknownService, RelayDown) as exc:
                self.drops.append((cmd.id, dst, type(exc).__name__, now))
                return
        self.engine.at(now + delay, EventKind.COMMAND_PUSH, dst, {"data": data, "from": src})

    def deliver(self, onion: str, data: bytes, sender: str, now: SimTime) -> None:
        ep = self.endpoints.get(onion)
        if ep is None:
            self.drops.append(("?", onion, "unknown", now))
        elif isinstance(ep, Bot):
            self._bot_on_command(ep, data, sender, now)
        else:
            ep.on_command(self, data, sender, now)

    def _bot_on_command(self, bot: Bot, data: bytes, sender: str, now: SimTime) -> None:
        cmd = Command.decode(data)
        if bot.state is N:
            self.drops.append((cmd.id, bot.onion, "neutralized", now))
            return
        if cmd.id in bot.seen_commands:
            return
        try:
            self.verify(cmd)
        except BadSignature:
            self.drops.append((cmd.id, bot.onion, "bad_signature", now))
            return
        bot.seen_commands.add(cmd.id)
        self.deliveries.append(Delivery(cmd.id, bot.onion, now, sender))
        self.tick_deliveries += 1
        targets = bot.peers.snapshot()
        self.forwards[(cmd.id, bot.onion)] = targets
        self.transcript.add("forward", now, command=cmd.id, bot=bot.onion, to=targets)
        for dst in targets:
            self._send_command(bot.node, bot.onion, dst, cmd, now)
        if bot.state is W:
            self.execute(bot, cmd, now)

    def verify(self, cmd: Command) -> None:
        if not verify_signature(self.master.keypair.public, cmd.signature, cmd.body()):
            raise BadSignature(cmd.id)

    # ---------------------------------------------------------------- execute

    def execute(self, bot: Bot, cmd: Command, now: SimTime) -> None:
        """Waiting -> Executing for the command's span, emitting attack events each tick."""
        if bot.state is not W:
            return
        self.set_state(bot, E, now)
        bot.current = (cmd.id, now + cmd.span)
        if cmd.span == 0:
            bot.current = None
            self.set_state(bot, W, now)
            return
        self.engine.at(now, EventKind.ATTACK_TICK, bot.node.id, {"cmd": cmd, "step": 0})

    def on_attack_tick(self, bot: Bot, payload: dict, now: SimTime) -> None:
        cmd: Command = payload["cmd"]
        step: int = payload["step"]
        if bot.state is not E or bot.current is None or bot.current[0] != cmd.id:
            return
        counts = cmd.emissions()
        if step >= len(counts):
            bot.current = None
            self.set_state(bot, W, now)
            return
        n = counts[step]
        bot.attack_events += n
        self.tick_attack_events += n
        if self.attack_log is not None:
            kind = "ddos-request" if cmd.kind == "ddos" else "spam"
            self.attack_log.extend(AttackEvent(now, bot.label, cmd.target, kind) for _ in range(n))
        self.engine.at(now + 1, EventKind.ATTACK_TICK, bot.node.id, {"cmd": cmd, "step": step + 1})

    # ----------------------------------------------------------------- wiring

    def install(self) -> None:
        eng = self.engine
        eng.on(EventKind.CONTACT_ATTEMPT, lambda e, ev: self.contact_round(ev.time))
        eng.on(EventKind.PEER_UPDATE_DUE, self._on_peer_update)
        eng.on(EventKind.COMMAND_PUSH, self._on_command_push)
        eng.on(EventKind.ATTACK_TICK, lambda e, ev: self.on_attack_tick(self.by_node[ev.subject], ev.payload, ev.time))

    def _on_peer_update(self, engine: Engine, ev) -> None:
        if ev.subject == "master":
            self.refresh_hardcoded(ev.time)
        else:
            self.on_peer_update_due(self.by_node[ev.subject], ev.time)

    def _on_command_push(self, engine: Engine, ev) -> None:
        if ev.subject == "master":
            p = ev.payload
            cmd = self.master.issue(p["kind"], ev.time, **p["params"])
            self.push_command(cmd, ev.time)
        else:
            self.deliver(ev.subject, ev.payload["data"], ev.payload["from"], ev.time)
