from __future__ import annotations

import random

import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from hypothesis import given, settings
from hypothesis import strategies as st

from onionnet_sim.errors import (
    DuplicateRelay,
    EmptyRelayList,
    RelayDown,
    RendezvousMismatch,
    TagVerificationFailed,
)
from onionnet_sim.overlay import (
    DELIVER,
    Circuit,
    Envelope,
    Hop,
    KeyPair,
    NodeId,
    Overlay,
    Role,
    build_circuit,
    derive_onion_address,
    is_onion_address,
    peel,
    rendezvous_connect,
    route,
    wrap,
)

SRC = NodeId("src", "10.9.9.9")
DST = NodeId("dst", "10.8.8.8")


def relays(n: int) -> list[NodeId]:
    return [NodeId(f"r{i}", f"172.16.0.{i + 1}") for i in range(n)]


def peel_all(env: Envelope, circuit: Circuit) -> bytes:
    current = env
    for i, hop in enumerate(circuit.hops):
        nxt, current = peel(current, hop.key)
        if i < len(circuit) - 1:
            assert nxt == circuit.hops[i + 1].node.id
    assert nxt is DELIVER
    return current


# ------------------------------------------------------------------ addresses

def test_address_is_pure_and_well_formed():
    kp = KeyPair.generate(random.Random(1))
    a = derive_onion_address(kp.public)
    assert a == derive_onion_address(kp.public)
    assert is_onion_address(a) and len(a) == 16


def test_no_collisions_among_ten_thousand_random_keys():
    rng = random.Random(2024)
    addrs = {derive_onion_address(rng.randbytes(32)) for _ in range(10_000)}
    assert len(addrs) == 10_000


def test_empty_key_rejected():
    with pytest.raises(ValueError):
        KeyPair(b"", b"x" * 32)


def test_signature_roundtrip():
    from onionnet_sim.overlay import verify_signature

    kp = KeyPair.generate(random.Random(5))
    sig = kp.sign(b"hello")
    assert verify_signature(kp.public, sig, b"hello")
    assert not verify_signature(kp.public, sig, b"hellO")


# ------------------------------------------------------------------- circuits

def test_circuit_has_one_distinct_key_per_hop():
    c = build_circuit(SRC, relays(3), Role.CLIENT_SIDE, random.Random(0))
    assert len(c) == 3
    assert len({h.key for h in c.hops}) == 3
    assert all(len(h.key) == 32 for h in c.hops)


def test_empty_relay_list():
    with pytest.raises(EmptyRelayList):
        build_circuit(SRC, [], Role.CLIENT_SIDE, random.Random(0))


def test_duplicate_relay():
    a, b = relays(2)
    with pytest.raises(DuplicateRelay):
        build_circuit(SRC, [a, a, b], Role.CLIENT_SIDE, random.Random(0))


def test_source_cannot_relay_itself():
    with pytest.raises(DuplicateRelay):
        build_circuit(SRC, [relays(1)[0], SRC], Role.CLIENT_SIDE, random.Random(0))


# --------------------------------------------------------------- wrap / peel

@settings(max_examples=150, deadline=None)
@given(st.binary(max_size=256), st.integers(min_value=1, max_value=5), st.integers(min_value=0, max_value=2**32))
def test_peel_inverts_wrap(payload, length, seed):
    c = build_circuit(SRC, relays(length), Role.CLIENT_SIDE, random.Random(seed))
    env = wrap(payload, c)
    assert env.layers == length
    assert peel_all(env, c) == payload


def test_one_hop_is_a_single_layer():
    c = build_circuit(SRC, relays(1), Role.CLIENT_SIDE, random.Random(0))
    env = wrap(b"x", c)
    assert env.layers == 1
    assert peel(env, c.hops[0].key) == (DELIVER, b"x")


def test_wrong_key_fails_tag_check():
    c = build_circuit(SRC, relays(3), Role.CLIENT_SIDE, random.Random(0))
    env = wrap(b"payload", c)
    with pytest.raises(TagVerificationFailed):
        peel(env, c.hops[1].key)


def test_outer_layer_is_a_reference_aead_seal():
    # an independent AES-GCM open with hop 1's key succeeds, with hop 2's key fails
    c = build_circuit(SRC, relays(2), Role.CLIENT_SIDE, random.Random(3))
    env = wrap(b"abc", c)
    nonce, ct = env.blob[:12], env.blob[12:]
    plain = AESGCM(c.hops[0].key).decrypt(nonce, ct, None)
    assert plain.endswith(peel(env, c.hops[0].key)[1].blob)
    from cryptography.exceptions import InvalidTag

    with pytest.raises(InvalidTag):
        AESGCM(c.hops[1].key).decrypt(nonce, ct, None)


def test_tampered_blob_fails():
    c = build_circuit(SRC, relays(2), Role.CLIENT_SIDE, random.Random(0))
    env = wrap(b"payload", c)
    bad = Envelope(env.blob[:-1] + bytes([env.blob[-1] ^ 1]), env.layers)
    with pytest.raises(TagVerificationFailed):
        peel(bad, c.hops[0].key)


# --------------------------------------------------------------------- route

def test_middle_relay_sees_only_its_neighbours():
    c = build_circuit(SRC, relays(3), Role.CLIENT_SIDE, random.Random(0))
    trace = route(SRC, wrap(b"m", c), c, DST)
    assert trace.delivered and trace.payload == b"m"
    middle = trace.hops[1]
    assert middle.observed == {"r0", "r2"}
    assert SRC.id not in middle.observed and DST.id not in middle.observed


def test_one_hop_route_is_degenerate():
    c = build_circuit(SRC, relays(1), Role.CLIENT_SIDE, random.Random(0))
    trace = route(SRC, wrap(b"m", c), c, DST)
    assert trace.hops[0].observed == {SRC.id, DST.id}
    assert trace.degenerate


def test_dead_relay_drops_message():
    c = build_circuit(SRC, relays(3), Role.CLIENT_SIDE, random.Random(0))
    with pytest.raises(RelayDown) as info:
        route(SRC, wrap(b"m", c), c, DST, is_alive=lambda n: n.id != "r1")
    trace = info.value.trace
    assert not trace.delivered and trace.dropped_at == "r1" and trace.payload is None


# ---------------------------------------------------------------- rendezvous

def _halves(rng):
    rs = relays(5)
    rdv = rs[4]
    cc = build_circuit(SRC, [rs[0], rs[1], rdv], Role.CLIENT_SIDE, rng)
    sc = build_circuit(DST, [rs[2], rs[3], rdv], Role.SERVICE_SIDE, rng)
    return cc, sc, rdv


def test_rendezvous_session_carries_payload():
    cc, sc, rdv = _halves(random.Random(0))
    s = rendezvous_connect(cc, sc, rdv, (SRC, "a" * 16), (DST, "b" * 16))
    assert s.send(b"ping")[0] == b"ping"
    assert s.send(b"pong", from_client=False)[0] == b"pong"


def test_rendezvous_mismatch():
    cc, sc, rdv = _halves(random.Random(0))
    other = relays(6)[5]
    sc2 = Circuit(sc.hops[:-1] + (Hop(other, b"k" * 32),), Role.SERVICE_SIDE)
    with pytest.raises(RendezvousMismatch):
        rendezvous_connect(cc, sc2, rdv, (SRC, "a" * 16), (DST, "b" * 16))


def test_session_transcript_has_no_ips():
    cc, sc, rdv = _halves(random.Random(0))
    s = rendezvous_connect(cc, sc, rdv, (SRC, "a" * 16), (DST, "b" * 16))
    s.send(b"ping")
    text = repr(s.transcript_dict())
    for ip in [SRC.ip, DST.ip] + [r.ip for r in relays(5)]:
        assert ip not in text
    assert "ip" not in {k for m in s.transcript for k in m}


def test_overlay_session_relay_knowledge():
    rng = random.Random(11)
    ov = Overlay(rng, relays(12), circuit_length=3, record=True)
    ov.register("b" * 16, DST)
    for _ in range(20):
        out, elapsed = ov.send(SRC, "a" * 16, "b" * 16, b"hi")
        assert out == b"hi" and elapsed >= 5
    for trace in ov.traces:
        for hop in trace.hops:
            assert hop.observed <= {hop.predecessor, hop.successor}
