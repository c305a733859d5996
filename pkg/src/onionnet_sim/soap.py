"""Sybil-based neutralization of an onion botnet.

The defender learns bot onion addresses (honeypots, probabilistic reverse
engineering of infected hosts), then surrounds each known bot with sybil
clones that keep re-peering with it. Because bot tables keep the most recently
confirmed addresses, frequent sybil PEER requests push honest entries out.
A bot whose table holds nothing but sybils is cut off from the botnet and
marked Neutralized.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .botnet import ALIVE, LIST, PEER, Bot, Botnet, BotState, Command, PeerTable
from .engine import EventKind, SimTime
from .errors import HostNotInfected, TargetUnknown
from .overlay import KeyPair, NodeId, derive_onion_address

logger = logging.getLogger(__name__)


@dataclass
class SoapPolicy:
    sybils_per_target: int = 8
    ping_interval: int = 15
    honeypots: int = 0
    p_detect: float = 0.0
    probe_interval: int = 60
    probes_per_round: int = 0  # 0 probes every infected host
    gossip_poisoning: bool = False


@dataclass
class DefenderState:
    discovered: set[str] = field(default_factory=set)
    sybils: dict[str, list[str]] = field(default_factory=dict)
    neutralized: set[str] = field(default_factory=set)
    honeypots: list[str] = field(default_factory=list)


@dataclass(eq=False)
class SybilNode:
    node: NodeId
    onion: str
    target: str
    defender: Defender = field(repr=False)

    def _answers(self, requester: str) -> bool:
        return requester == self.target or self.defender.policy.gossip_poisoning

    def _siblings(self) -> list[str]:
        return [s for s in self.defender.state.sybils.get(self.target, []) if s != self.onion]

    def on_list_request(self, botnet: Botnet, requester: str, now: SimTime) -> list[str] | None:
        return self._siblings() if self._answers(requester) else None

    def on_peer_request(self, botnet: Botnet, requester: str, now: SimTime) -> list[str] | None:
        return self._siblings() if self._answers(requester) else None

    def on_command(self, botnet: Botnet, data: bytes, sender: str, now: SimTime) -> None:
        botnet.drops.append((Command.decode(data).id, self.onion, "sybil", now))


@dataclass(eq=False)
class Honeypot:
    """Defender host that joins the botnet and records every address it sees."""

    node: NodeId
    onion: str
    peers: PeerTable
    defender: Defender = field(repr=False)
    observed: set[str] = field(default_factory=set)  # bot addresses this honeypot has seen

    def learn(self, addresses) -> None:
        self.observed.update(self.defender.learn(addresses))

    def on_list_request(self, botnet: Botnet, requester: str, now: SimTime) -> list[str] | None:
        self.learn([requester])
        return [a for a in self.peers if a != requester]

    def on_peer_request(self, botnet: Botnet, requester: str, now: SimTime) -> list[str] | None:
        self.learn([requester])
        self.peers.touch(requester)
        return [a for a in self.peers if a != requester]

    def on_command(self, botnet: Botnet, data: bytes, sender: str, now: SimTime) -> None:
        self.learn([sender])
        botnet.drops.append((Command.decode(data).id, self.onion, "honeypot", now))

    def exchange(self, botnet: Botnet, now: SimTime) -> None:
        """One peer-update round, run with the bot protocol."""
        responsive: list[str] = []
        candidates: list[str] = []
        for addr in self.peers.snapshot():
            answer = botnet.contact(self.onion, addr, LIST, now)
            if answer is None:
                continue
            responsive.append(addr)
            candidates.extend(answer)
        self.learn(responsive + candidates)
        self.peers.replace(responsive + candidates)
        if len(self.peers) == 0:
            self.join(botnet, now)

    def join(self, botnet: Botnet, now: SimTime) -> None:
        """Peer with the hardcoded bots, as a freshly infected host would."""
        for addr in botnet.hardcoded:
            answer = botnet.contact(self.onion, addr, PEER, now)
            if answer is not None:
                self.peers.touch(addr)
                self.learn([addr] + answer)


@dataclass
class NeutralizationReport:
    neutralized_per_tick: list[int]
    final_fraction: float
    discovered: int
    sybils: int
    time_to_half: SimTime | None
    time_to_full: SimTime | None

    def to_dict(self) -> dict:
        return {
            "final_fraction": self.final_fraction,
            "discovered": self.discovered,
            "sybils": self.sybils,
            "time_to_half": self.time_to_half,
            "time_to_full": self.time_to_full,
        }


class Defender:
    def __init__(self, botnet: Botnet, policy: SoapPolicy | None = None) -> None:
        self.botnet = botnet
        self.engine = botnet.engine
        self.rng = botnet.rng
        self.policy = policy or SoapPolicy()
        self.state = DefenderState()
        self.own: set[str] = set()  # defender-controlled onion addresses
        self.honeypots: list[Honeypot] = []
        self.sybil_nodes: dict[str, SybilNode] = {}
        self._node_counter = 0
        self.running = False

    def _fresh_node(self, prefix: str) -> NodeId:
        i = self._node_counter
        self._node_counter += 1
        return NodeId(f"{prefix}{i:05d}", f"192.168.{i // 250}.{i % 250 + 1}")

    def _fresh_onion(self) -> tuple[KeyPair, str]:
        while True:
            kp = KeyPair.generate(self.rng)
            onion = derive_onion_address(kp.public)
            if onion not in self.botnet.endpoints:
                return kp, onion

    def learn(self, addresses) -> list[str]:
        """Record bot addresses (defender-owned and unknown ones are ignored); returns those kept."""
        kept = [a for a in addresses if a not in self.own and self.botnet.bot_at(a) is not None]
        self.state.discovered.update(kept)
        return kept

    # ------------------------------------------------------------- discovery

    def plant_honeypot(self) -> NodeId:
        """Join the botnet as a bot would and start periodic peer exchanges."""
        node = self._fresh_node("h")
        _, onion = self._fresh_onion()
        hp = Honeypot(node, onion, PeerTable(onion, self.botnet.params.k), self)
        self.own.add(onion)
        self.botnet.register_endpoint(onion, node, hp)
        self.honeypots.append(hp)
        self.state.honeypots.append(node.id)
        now = self.engine.clock
        hp.join(self.botnet, now)
        self.engine.at(now + self.botnet.params.peer_update_period, EventKind.SOAP_PROBE, node.id,
                       {"action": "honeypot"})
        return node

    def reverse_engineer(self, host: NodeId, p_detect: float) -> str | None:
        """Recover the host's onion address and peer table with probability ``p_detect``.

        Returns ``None`` when nothing is found.
        """
        bot = self.botnet.by_node.get(host.id)
        if bot is None or bot.state is BotState.SUSCEPTIBLE or bot.onion is None:
            raise HostNotInfected(host.id)
        if self.rng.random() >= p_detect:
            return None
        self.learn([bot.onion] + bot.peers.snapshot())
        return bot.onion

    # ---------------------------------------------------------------- sybils

    def spawn_sybils(self, target: str, n: int) -> list[SybilNode]:
        if n < 1:
            raise ValueError("need at least one sybil")
        if target not in self.state.discovered:
            raise TargetUnknown(target)
        made = []
        ids = self.state.sybils.setdefault(target, [])
        now = self.engine.clock
        interval = max(1, self.policy.ping_interval)
        for _ in range(n):
            node = self._fresh_node("s")
            _, onion = self._fresh_onion()
            syb = SybilNode(node, onion, target, self)
            self.own.add(onion)
            self.botnet.register_endpoint(onion, node, syb)
            self.sybil_nodes[onion] = syb
            ids.append(onion)
            made.append(syb)
            self.engine.at(now + self.rng.randrange(interval), EventKind.SOAP_PROBE, node.id,
                           {"action": "ping", "sybil": onion})
        return made

    def sybil_ping(self, syb: SybilNode, now: SimTime) -> None:
        if syb.target in self.state.neutralized:
            return
        self.botnet.contact(syb.onion, syb.target, PEER, now)
        self.check_partitioned(syb.target)
        if syb.target not in self.state.neutralized:
            self.engine.at(now + max(1, self.policy.ping_interval), EventKind.SOAP_PROBE, syb.node.id,
                           {"action": "ping", "sybil": syb.onion})

    def check_partitioned(self, target: str) -> bool:
        """True iff every entry of the target's table is a defender sybil; neutralizes it."""
        if target not in self.state.discovered:
            raise TargetUnknown(target)
        if target in self.state.neutralized:
            return True
        bot = self.botnet.bot_at(target)
        if bot is None or bot.state not in ALIVE:
            return False
        table = bot.peers.snapshot()
        if not table or any(a not in self.sybil_nodes for a in table):
            return False
        self.state.neutralized.add(target)
        bot.current = None
        self.botnet.set_state(bot, BotState.NEUTRALIZED, self.engine.clock)
        return True

    # ------------------------------------------------------------------ loop

    def probe_round(self, now: SimTime) -> None:
        """discover -> spawn sybils for new targets -> check partitions."""
        p = self.policy
        hosts = [b for b in self.botnet.bots if b.state in ALIVE]
        if p.probes_per_round and p.probes_per_round < len(hosts):
            hosts = self.rng.sample(hosts, p.probes_per_round)
        if p.p_detect > 0:
            for b in hosts:
                self.reverse_engineer(b.node, p.p_detect)
        for target in sorted(self.state.discovered):
            if target in self.state.sybils or target in self.state.neutralized:
                continue
            bot = self.botnet.bot_at(target)
            if bot is None or bot.state not in ALIVE:
                continue
            self.spawn_sybils(target, p.sybils_per_target)
        for target in sorted(self.state.sybils):
            self.check_partitioned(target)

    def start(self, at: SimTime) -> None:
        self.running = True
        self.engine.at(at, EventKind.SOAP_PROBE, "defender", {"action": "start"})

    def on_probe(self, engine, ev) -> None:
        action = ev.payload["action"]
        now = ev.time
        if action == "start":
            for _ in range(self.policy.honeypots):
                self.plant_honeypot()
            self.probe_round(now)
            self.engine.at(now + self.policy.probe_interval, EventKind.SOAP_PROBE, "defender", {"action": "round"})
        elif action == "round":
            self.probe_round(now)
            self.engine.at(now + self.policy.probe_interval, EventKind.SOAP_PROBE, "defender", {"action": "round"})
        elif action == "ping":
            self.sybil_ping(self.sybil_nodes[ev.payload["sybil"]], now)
        elif action == "honeypot":
            hp = next(h for h in self.honeypots if h.node.id == ev.subject)
            hp.exchange(self.botnet, now)
            self.engine.at(now + self.botnet.params.peer_update_period, EventKind.SOAP_PROBE, ev.subject,
                           {"action": "honeypot"})

    def install(self) -> None:
        self.engine.on(EventKind.SOAP_PROBE, self.on_probe)

    @property
    def sybil_count(self) -> int:
        return len(self.sybil_nodes)

    def run_soap(self, start: SimTime) -> None:
        """Wire the defender into the engine and schedule its first round."""
        self.install()
        self.start(start)
