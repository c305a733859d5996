"""Onion-routed overlay: identities, circuits, layered envelopes, rendezvous sessions.

Layer sealing uses AES-GCM from ``cryptography``; the nonce is derived from
the key and the inner bytes so that ``wrap`` is a pure function of its
inputs. Relays are addressed by ``NodeId.id``; IP strings never enter an
envelope, a session transcript or a peer table.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import random
import re
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import (
    DuplicateRelay,
    EmptyRelayList,
    RelayDown,
    RendezvousMismatch,
    TagVerificationFailed,
    UnknownService,
)

MAX_CIRCUIT_LENGTH = 5
_ONION_RE = re.compile(r"^[a-z2-7]{16}$")


@dataclass(frozen=True)
class NodeId:
    id: str
    ip: str

    def __str__(self) -> str:
        return self.id


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if not self.public:
            raise ValueError("empty public key")

    @classmethod
    def generate(cls, rng: random.Random) -> KeyPair:
        sk = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        return cls(public=sk.public_key().public_bytes_raw(), private=sk.private_bytes_raw())

    def sign(self, data: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.private).sign(data)


def verify_signature(public: bytes, signature: bytes, data: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True


def derive_onion_address(public_key: bytes) -> str:
    """16-char base32 address from the first 80 bits of SHA-1 of the key (v2 layout)."""
    if not public_key:
        raise ValueError("empty public key")
    digest = hashlib.sha1(public_key).digest()[:10]
    return base64.b32encode(digest).decode("ascii").lower()


def is_onion_address(value: object) -> bool:
    return isinstance(value, str) and _ONION_RE.match(value) is not None


class Role(enum.Enum):
    CLIENT_SIDE = "ClientSide"
    SERVICE_SIDE = "ServiceSide"


@dataclass(frozen=True)
class Hop:
    node: NodeId
    key: bytes = field(repr=False)


@dataclass(frozen=True)
class Circuit:
    hops: tuple[Hop, ...]
    role: Role = Role.CLIENT_SIDE

    def __post_init__(self) -> None:
        if not 1 <= len(self.hops) <= MAX_CIRCUIT_LENGTH:
            raise ValueError(f"circuit length {len(self.hops)} outside 1..{MAX_CIRCUIT_LENGTH}")

    def __len__(self) -> int:
        return len(self.hops)

    @property
    def nodes(self) -> list[NodeId]:
        return [h.node for h in self.hops]

    @property
    def terminal(self) -> NodeId:
        return self.hops[-1].node

    def reversed_prefix(self) -> list[Hop]:
        """Hops leading back from the terminal relay, terminal excluded."""
        return list(reversed(self.hops[:-1]))


def build_circuit(
    source: NodeId,
    relays: list[NodeId],
    role: Role,
    rng: random.Random,
    max_length: int = MAX_CIRCUIT_LENGTH,
) -> Circuit:
    """One fresh 256-bit key per hop, in the order given.

    The caller chooses the relays; on a client-side circuit the first one
    acts as the introduction point.
    """
    if not relays:
        raise EmptyRelayList("no relays given")
    ids = [r.id for r in relays]
    if len(set(ids)) != len(ids):
        raise DuplicateRelay(f"duplicate relay in {ids}")
    if source.id in ids:
        raise DuplicateRelay(f"source {source.id} cannot relay its own circuit")
    if len(relays) > max_length:
        raise ValueError(f"circuit longer than {max_length}")
    return Circuit(tuple(Hop(r, rng.randbytes(32)) for r in relays), role)


class _Deliver:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "DELIVER"


DELIVER = _Deliver()

_RELAY, _FINAL = 0, 1


@dataclass(frozen=True)
class Envelope:
    blob: bytes
    layers: int

    def hex(self) -> str:
        return self.blob.hex()


def _seal(key: bytes, plaintext: bytes) -> bytes:
    nonce = hashlib.blake2b(plaintext, key=key, digest_size=12).digest()
    return nonce + AESGCM(key).encrypt(nonce, plaintext, None)


def _open(key: bytes, blob: bytes) -> bytes:
    if len(blob) < 12 + 16:
        raise TagVerificationFailed("blob too short")
    try:
        return AESGCM(key).decrypt(blob[:12], blob[12:], None)
    except (InvalidTag, ValueError) as exc:
        raise TagVerificationFailed("layer tag mismatch") from exc


def wrap(payload: bytes, circuit: Circuit) -> Envelope:
    """Seal ``payload`` once per hop, innermost layer for the terminal hop."""
    hops = circuit.hops
    inner = _seal(hops[-1].key, struct.pack(">BH", _FINAL, 0) + payload)
    for i in range(len(hops) - 2, -1, -1):
        nxt = hops[i + 1].node.id.encode()
        inner = _seal(hops[i].key, struct.pack(">BH", _RELAY, len(nxt)) + nxt + inner)
    return Envelope(inner, len(hops))


def peel(envelope: Envelope, key: bytes) -> tuple[object, Envelope | bytes]:
    """Remove one layer. Returns ``(next_hop_id, inner_envelope)`` or ``(DELIVER, payload)``."""
    if envelope.layers < 1:
        raise ValueError("envelope has no layers")
    plain = _open(key, envelope.blob)
    flag, n = struct.unpack(">BH", plain[:3])
    if flag == _FINAL:
        return DELIVER, plain[3:]
    nxt = plain[3:3 + n].decode()
    return nxt, Envelope(plain[3 + n:], envelope.layers - 1)


@dataclass(frozen=True)
class HopObservation:
    node: str
    predecessor: str
    successor: str
    observed: frozenset[str]


@dataclass
class DeliveryTrace:
    sender: str
    destination: str | None
    hops: list[HopObservation] = field(default_factory=list)
    delivered: bool = False
    dropped_at: str | None = None
    elapsed: int = 0
    payload: bytes | None = None

    @property
    def degenerate(self) -> bool:
        """A single relay sees both ends of the path."""
        return len(self.hops) == 1 and self.destination is not None

    def to_dict(self) -> dict:
        return {
            "sender": self.sender,
            "destination": self.destination,
            "delivered": self.delivered,
            "dropped_at": self.dropped_at,
            "elapsed": self.elapsed,
            "degenerate": self.degenerate,
            "hops": [
                {"node": h.node, "pred": h.predecessor, "succ": h.successor, "observed": sorted(h.observed)}
                for h in self.hops
            ],
        }


def route(
    sender: NodeId,
    envelope: Envelope,
    circuit: Circuit,
    destination: NodeId | None = None,
    is_alive: Callable[[NodeId], bool] | None = None,
    latency: Callable[[], int] | None = None,
) -> DeliveryTrace:
    """Carry ``envelope`` hop by hop, recording what each relay learns.

    A relay's observed set is built only from the link it received on and the
    result of its own peel. Raises :class:`RelayDown` (with the partial trace
    attached) if a hop is not alive when the message reaches it.
    """
    trace = DeliveryTrace(sender.id, destination.id if destination else None)
    current: Envelope | bytes = envelope
    prev = sender.id
    for i, hop in enumerate(circuit.hops):
        if latency is not None:
            trace.elapsed += latency()
        if is_alive is not None and not is_alive(hop.node):
            trace.dropped_at = hop.node.id
            raise RelayDown(hop.node.id, trace)
        nxt, inner = peel(current, hop.key)
        if nxt is DELIVER:
            if i != len(circuit.hops) - 1:
                raise TagVerificationFailed("early delivery layer")
            succ = destination.id if destination is not None else hop.node.id
            observed = {prev} | ({destination.id} if destination is not None else set())
            trace.hops.append(HopObservation(hop.node.id, prev, succ, frozenset(observed)))
            trace.delivered = True
            trace.payload = inner
            return trace
        if i + 1 >= len(circuit.hops) or circuit.hops[i + 1].node.id != nxt:
            raise TagVerificationFailed(f"layer names unexpected successor {nxt}")
        trace.hops.append(HopObservation(hop.node.id, prev, nxt, frozenset({prev, nxt})))
        prev = hop.node.id
        current = inner
    raise TagVerificationFailed("envelope outlived its circuit")


@dataclass
class Session:
    """Joined client and service half-circuits meeting at a rendezvous relay.

    Endpoint ``NodeId`` values are kept only to drive routing; the
    :attr:`transcript` holds onion addresses, the rendezvous relay id and
    envelope bytes.
    """

    client_circuit: Circuit
    service_circuit: Circuit
    rendezvous: NodeId
    client_onion: str
    service_onion: str
    _client_node: NodeId = field(repr=False)
    _service_node: NodeId = field(repr=False)
    transcript: list[dict] = field(default_factory=list)
    traces: list[DeliveryTrace] = field(default_factory=list)

    def send(
        self,
        payload: bytes,
        from_client: bool = True,
        is_alive: Callable[[NodeId], bool] | None = None,
        latency: Callable[[], int] | None = None,
    ) -> tuple[bytes, int]:
        """Deliver ``payload`` to the far endpoint; returns ``(payload, elapsed_ticks)``."""
        if from_client:
            first, second = self.client_circuit, self.service_circuit
            src, dst = self._client_node, self._service_node
            src_onion, dst_onion = self.client_onion, self.service_onion
        else:
            first, second = self.service_circuit, self.client_circuit
            src, dst = self._service_node, self._client_node
            src_onion, dst_onion = self.service_onion, self.client_onion

        env = wrap(payload, first)
        t1 = self._route(src, env, first, None, is_alive, latency)
        entry = {
            "from": src_onion,
            "to": dst_onion,
            "rendezvous": self.rendezvous.id,
            "envelope": env.hex(),
        }
        back = second.reversed_prefix()
        elapsed = t1.elapsed
        if back:
            leg = Circuit(tuple(back), second.role)
            env2 = wrap(t1.payload, leg)
            t2 = self._route(self.rendezvous, env2, leg, dst, is_alive, latency)
            entry["return_envelope"] = env2.hex()
            elapsed += t2.elapsed
            out = t2.payload
        else:
            if latency is not None:
                elapsed += latency()
            out = t1.payload
        self.transcript.append(entry)
        return out, elapsed

    def _route(self, sender, env, circuit, dst, is_alive, latency) -> DeliveryTrace:
        try:
            trace = route(sender, env, circuit, dst, is_alive, latency)
        except RelayDown as exc:
            self.traces.append(exc.trace)
            raise
        self.traces.append(trace)
        return trace

    def transcript_dict(self) -> dict:
        return {
            "client": self.client_onion,
            "service": self.service_onion,
            "rendezvous": self.rendezvous.id,
            "messages": self.transcript,
        }


def rendezvous_connect(
    client_circuit: Circuit,
    service_circuit: Circuit,
    rendezvous: NodeId,
    client: tuple[NodeId, str],
    service: tuple[NodeId, str],
) -> Session:
    """Join two half-circuits that both terminate at ``rendezvous``.

    ``client`` and ``service`` are ``(node, onion_address)`` pairs.
    """
    if client_circuit.terminal.id != rendezvous.id or service_circuit.terminal.id != rendezvous.id:
        raise RendezvousMismatch(
            f"client ends at {client_circuit.terminal.id}, service ends at "
            f"{service_circuit.terminal.id}, rendezvous is {rendezvous.id}"
        )
    return Session(
        client_circuit,
        service_circuit,
        rendezvous,
        client[1],
        service[1],
        client[0],
        service[0],
    )


class Overlay:
    """Relay population plus the hidden-service directory (onion -> host node).

    Only the overlay resolves onion addresses to hosts; callers above it deal
    in onion addresses.
    """

    def __init__(
        self,
        rng: random.Random,
        relays: Iterable[NodeId] = (),
        circuit_length: int = 3,
        latency: tuple[int, int] = (1, 3),
        record: bool = False,
    ) -> None:
        if not 1 <= circuit_length <= MAX_CIRCUIT_LENGTH:
            raise ValueError("circuit_length outside 1..5")
        self.rng = rng
        self.relays: list[NodeId] = list(relays)
        self.circuit_length = circuit_length
        self.latency_range = latency
        self.down: set[str] = set()
        self._directory: dict[str, NodeId] = {}
        self.record = record
        self.sessions: list[dict] = []
        self.traces: list[DeliveryTrace] = []

    def register(self, onion: str, node: NodeId) -> None:
        self._directory[onion] = node

    def unregister(self, onion: str) -> None:
        self._directory.pop(onion, None)

    def knows(self, onion: str) -> bool:
        return onion in self._directory

    def is_alive(self, node: NodeId) -> bool:
        return node.id not in self.down

    def draw_latency(self) -> int:
        lo, hi = self.latency_range
        return self.rng.randint(lo, hi)

    def _pick(self, n: int, exclude: set[str]) -> list[NodeId]:
        pool = [r for r in self.relays if r.id not in exclude]
        return self.rng.sample(pool, n)

    def open_session(self, client: NodeId, client_onion: str, service_onion: str) -> Session:
        service = self._directory.get(service_onion)
        if service is None:
            raise UnknownService(service_onion)
        endpoints = {client.id, service.id}
        rendezvous = self._pick(1, endpoints)[0]
        n = self.circuit_length
        # the first client relay is the introduction point, uniformly drawn
        c_relays = self._pick(n - 1, endpoints | {rendezvous.id}) + [rendezvous]
        s_relays = self._pick(n - 1, endpoints | {rendezvous.id}) + [rendezvous]
        cc = build_circuit(client, c_relays, Role.CLIENT_SIDE, self.rng)
        sc = build_circuit(service, s_relays, Role.SERVICE_SIDE, self.rng)
        return rendezvous_connect(cc, sc, rendezvous, (client, client_onion), (service, service_onion))

    def send(self, client: NodeId, client_onion: str, service_onion: str, payload: bytes) -> tuple[bytes, int]:
        """One-shot message over a fresh rendezvous session.

        Raises :class:`UnknownService` or :class:`RelayDown`.
        """
        session = self.open_session(client, client_onion, service_onion)
        try:
            out, elapsed = session.send(payload, True, self.is_alive, self.draw_latency)
        finally:
            if self.record:
                self.sessions.append(session.transcript_dict())
                self.traces.extend(session.traces)
        return out, elapsed
