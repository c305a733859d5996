from __future__ import annotations

import random
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onionnet_sim.errors import NoRendezvous, UnknownDomain
from onionnet_sim.evasion import (
    RESOLVER,
    DgaConfig,
    DnsZone,
    FluxConfig,
    FlowRecord,
    Thresholds,
    c2_lookup,
    classify,
    dga_domains,
    dns_query_bytes,
    extract_flow_features,
    flux_pool,
    flux_rotate,
    predict_blocklist,
    read_blocklist,
    read_flows,
    write_blocklist,
    write_flows,
)

CFG = DgaConfig(seed=20151, domains_per_period=10, period_length=200)


# ---------------------------------------------------------------------- DGA

@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**31), st.integers(min_value=0, max_value=10_000))
def test_dga_is_pure(seed, period):
    cfg = DgaConfig(seed=seed)
    assert dga_domains(cfg, period) == dga_domains(cfg, period)


def test_dga_periods_do_not_collide_over_100_periods():
    seen: dict[str, int] = {}
    for p in range(100):
        for d in dga_domains(CFG, p):
            assert d not in seen, f"{d} in periods {seen[d]} and {p}"
            seen[d] = p
    assert len(seen) == 1000


def test_dga_empty_period():
    assert dga_domains(DgaConfig(seed=1, domains_per_period=0), 3) == []


def test_dga_domain_shape():
    for d in dga_domains(CFG, 0):
        label, tld = d.rsplit(".", 1)
        assert len(label) == 12 and label.isalpha() and label.islower()
        assert "." + tld in CFG.tlds


# --------------------------------------------------------------------- flux

def test_rotation_draws_three_from_the_pool():
    pool = flux_pool(1000)
    zone = DnsZone()
    zone.register("x.com", (), 5, 0)
    ips = flux_rotate(zone, "x.com", FluxConfig(pool, 3, 10), 10, random.Random(0))
    assert len(ips) == 3 and ips <= set(pool)
    assert zone.resolve("x.com", 10) == ips == zone.resolve("x.com", 10)


def test_consecutive_rotations_differ():
    pool = flux_pool(1000)
    cfg = FluxConfig(pool, 3, 10)
    zone = DnsZone()
    zone.register("x.com", (), 5, 0)
    rng = random.Random(7)
    prev = flux_rotate(zone, "x.com", cfg, 0, rng)
    differ = 0
    for i in range(1, 101):
        cur = flux_rotate(zone, "x.com", cfg, i * 10, rng)
        differ += cur != prev
        prev = cur
    assert differ >= 99


def test_rotate_unknown_domain():
    with pytest.raises(UnknownDomain):
        flux_rotate(DnsZone(), "nope.com", FluxConfig(flux_pool(10)), 0, random.Random(0))


# ------------------------------------------------------------------- lookup

def _zone_with(domain, ips=("198.18.0.9", "198.18.0.7")):
    zone = DnsZone()
    zone.register(domain, ips, 5, 0)
    return zone


def test_lookup_stops_at_registered_domain():
    domains = dga_domains(CFG, 0)
    zone = _zone_with(domains[3])  # the fourth domain
    log: list[FlowRecord] = []
    ip = c2_lookup("10.0.0.1", CFG, zone, 5, log=log)
    assert ip == "198.18.0.7"
    assert len(log) == 4
    assert [f.bytes for f in log] == [dns_query_bytes(d) for d in domains[:4]]
    assert {f.destination for f in log} == {RESOLVER}


def test_lookup_with_full_blocklist():
    domains = dga_domains(CFG, 0)
    zone = _zone_with(domains[3])
    with pytest.raises(NoRendezvous):
        c2_lookup("10.0.0.1", CFG, zone, 5, blocklist=set(domains))


def test_lookup_without_registrations():
    with pytest.raises(NoRendezvous):
        c2_lookup("10.0.0.1", CFG, DnsZone(), 5)


# ---------------------------------------------------------------- blocklist

def test_true_seed_blocklist_matches_for_100_periods():
    for p in range(100):
        assert predict_blocklist(CFG.seed, CFG, p) == set(dga_domains(CFG, p))


def test_wrong_seeds_miss_entirely():
    for wrong in range(1, 51):
        for p in range(5):
            assert not predict_blocklist(CFG.seed + wrong, CFG, p) & set(dga_domains(CFG, p))


def test_blocklist_then_lookup_fails_every_period():
    for p in range(100):
        domains = dga_domains(CFG, p)
        zone = _zone_with(domains[p % len(domains)])
        with pytest.raises(NoRendezvous):
            c2_lookup("10.0.0.1", CFG, zone, p * CFG.period_length, predict_blocklist(CFG.seed, CFG, p))


def test_blocklist_file_roundtrip(tmp_path):
    doms = predict_blocklist(CFG.seed, CFG, 0)
    write_blocklist(tmp_path / "b.txt", doms)
    assert read_blocklist(tmp_path / "b.txt") == doms


# ----------------------------------------------------------------- features

def test_constant_beacon_features_are_closed_form():
    flows = [FlowRecord(t, "a", "x", 100, "c2") for t in range(0, 200, 10)]
    (w,) = extract_flow_features(flows, 200)["a"]
    assert (w.flows, w.mean_bytes, w.byte_variance, w.gap_cv, w.distinct_destinations) == (20, 100, 0, 0, 1)


def test_empty_flows():
    assert extract_flow_features([], 100) == {}


def test_gap_cv_needs_three_distinct_times():
    flows = [FlowRecord(5, "a", "x", 10, "c2"), FlowRecord(5, "a", "y", 10, "c2"), FlowRecord(9, "a", "x", 10, "c2")]
    (w,) = extract_flow_features(flows, 100)["a"]
    assert w.gap_cv is None


def _independent_features(times, sizes):
    gaps = [b - a for a, b in zip(sorted(set(times)), sorted(set(times))[1:])]
    cv = statistics.pstdev(gaps) / statistics.fmean(gaps)
    return cv, statistics.pvariance(sizes)


def test_beacons_are_more_regular_than_benign_traffic():
    rng = random.Random(99)
    flows = []
    beacon_t = list(range(3, 1000, 20))
    flows += [FlowRecord(t, "bot", "c2", 512, "c2") for t in beacon_t]
    benign = {}
    for s in range(20):
        t, ts, sz = 0.0, [], []
        while True:
            t += rng.expovariate(1 / 15)
            if t >= 1000:
                break
            ts.append(int(t))
            sz.append(rng.randint(50, 5000))
        benign[f"h{s}"] = (ts, sz)
        flows += [FlowRecord(a, f"h{s}", "web", b, "benign") for a, b in zip(ts, sz)]
    feats = extract_flow_features(flows, 1000)
    beacon_cv, beacon_var = _independent_features(beacon_t, [512] * len(beacon_t))
    assert feats["bot"][0].gap_cv == pytest.approx(beacon_cv, abs=1e-12)
    for src, (ts, sz) in benign.items():
        cv, var = _independent_features(ts, sz)
        assert feats[src][0].gap_cv == pytest.approx(cv, rel=1e-9)
        assert feats[src][0].byte_variance == pytest.approx(var, rel=1e-9)
        assert beacon_cv < cv


# --------------------------------------------------------------- classifier

def test_only_beacons_full_recall():
    flows = [FlowRecord(t, f"b{i}", "c2", 512, "c2") for i in range(5) for t in range(i, 1000, 20)]
    det = classify(extract_flow_features(flows, 200), Thresholds(1.0, 1e9, 1), {f"b{i}" for i in range(5)})
    assert det.recall == 1.0 and det.precision == 1.0


def test_only_benign_reports_no_detections():
    rng = random.Random(3)
    flows = [FlowRecord(rng.randrange(1000), f"h{i}", "web", rng.randint(50, 5000), "benign")
             for i in range(10) for _ in range(60)]
    det = classify(extract_flow_features(flows, 200), Thresholds(), set())
    assert det.flagged == set() and det.precision is None
    assert det.summary == "no detections"


def test_flow_csv_roundtrip(tmp_path):
    flows = [FlowRecord(1, "a", "b", 3, "c2"), FlowRecord(2, "c", "d", 4, "benign")]
    write_flows(tmp_path / "f.csv", flows)
    assert read_flows(tmp_path / "f.csv") == flows
