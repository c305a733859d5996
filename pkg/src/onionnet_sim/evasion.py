"""DNS-based C&C: domain generation, fast-flux zones, rendezvous lookup and flow detection."""

from __future__ import annotations

import csv
import hashlib
import math
import random
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .engine import SimTime
from .errors import NoRendezvous, UnknownDomain

RESOLVER = "resolver"


@dataclass(frozen=True)
class DgaConfig:
    seed: int = 0
    domains_per_period: int = 10
    label_length: int = 12
    tlds: tuple[str, ...] = (".com", ".net", ".biz")
    period_length: int = 200


def _period_rng(seed: int, period_index: int) -> random.Random:
    material = f"dga:{seed}:{period_index}".encode()
    return random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))


def dga_domains(cfg: DgaConfig, period_index: int) -> list[str]:
    """Domains for one period: seeded lowercase labels, TLDs cycled in order."""
    if period_index < 0:
        raise ValueError("period_index must be non-negative")
    rng = _period_rng(cfg.seed, period_index)
    letters = string.ascii_lowercase
    out = []
    for i in range(cfg.domains_per_period):
        label = "".join(rng.choice(letters) for _ in range(cfg.label_length))
        out.append(label + cfg.tlds[i % len(cfg.tlds)])
    return out


def predict_blocklist(recovered_seed: int, cfg: DgaConfig, period_index: int) -> set[str]:
    """Defender side: rerun the generator with a recovered seed."""
    return set(dga_domains(DgaConfig(recovered_seed, cfg.domains_per_period, cfg.label_length,
                                     cfg.tlds, cfg.period_length), period_index))


@dataclass
class DnsRecord:
    ips: frozenset[str]
    ttl: int
    registered_at: SimTime


@dataclass
class DnsZone:
    records: dict[str, DnsRecord] = field(default_factory=dict)

    def register(self, domain: str, ips: Iterable[str], ttl: int, now: SimTime) -> None:
        self.records[domain] = DnsRecord(frozenset(ips), ttl, now)

    def deregister(self, domain: str) -> None:
        self.records.pop(domain, None)

    def resolve(self, domain: str, now: SimTime) -> frozenset[str] | None:
        rec = self.records.get(domain)
        return None if rec is None else rec.ips


@dataclass(frozen=True)
class FluxConfig:
    ip_pool: tuple[str, ...]
    ips_per_record: int = 3
    rotation_period: int = 10

    def __post_init__(self) -> None:
        if not 1 <= self.ips_per_record <= len(self.ip_pool):
            raise ValueError("ips_per_record must be within 1..len(ip_pool)")


def flux_pool(size: int) -> tuple[str, ...]:
    return tuple(f"198.18.{i // 250}.{i % 250 + 1}" for i in range(size))


def flux_rotate(zone: DnsZone, domain: str, cfg: FluxConfig, now: SimTime, rng: random.Random) -> frozenset[str]:
    """Replace the A-record set with ``ips_per_record`` distinct uniform draws from the pool."""
    rec = zone.records.get(domain)
    if rec is None:
        raise UnknownDomain(domain)
    ips = frozenset(rng.sample(cfg.ip_pool, cfg.ips_per_record))
    zone.records[domain] = DnsRecord(ips, rec.ttl, now)
    return ips


@dataclass(frozen=True)
class FlowRecord:
    time: SimTime
    source: str
    destination: str
    bytes: int
    label: str  # ground truth, "c2" or "benign"; scoring only


def dns_query_bytes(domain: str) -> int:
    return 40 + len(domain)


def c2_lookup(
    source: str,
    cfg: DgaConfig,
    zone: DnsZone,
    now: SimTime,
    blocklist: set[str] | frozenset[str] = frozenset(),
    log: list[FlowRecord] | None = None,
) -> str:
    """Probe the current period's domains in order; return the first reachable C&C IP.

    Each probe is appended to ``log`` as a flow to the resolver. Raises
    :class:`NoRendezvous` when no domain resolves past the blocklist.
    """
    period = now // cfg.period_length
    for domain in dga_domains(cfg, period):
        if log is not None:
            log.append(FlowRecord(now, source, RESOLVER, dns_query_bytes(domain), "c2"))
        if domain in blocklist:
            continue
        ips = zone.resolve(domain, now)
        if ips:
            return min(ips)
    raise NoRendezvous(f"period {period}: no domain resolved")


# ------------------------------------------------------------------ flows


@dataclass(frozen=True)
class WindowFeatures:
    window: int
    flows: int
    mean_bytes: float
    byte_variance: float
    gap_cv: float | None  # None with fewer than two gaps
    distinct_destinations: int


def _gap_cv(times: list[int]) -> float | None:
    distinct = sorted(set(times))
    if len(distinct) < 3:
        return None
    gaps = [b - a for a, b in zip(distinct, distinct[1:])]
    mean = sum(gaps) / len(gaps)
    var = sum((g - mean) ** 2 for g in gaps) / len(gaps)
    return math.sqrt(var) / mean


def extract_flow_features(flows: list[FlowRecord], window: int) -> dict[str, list[WindowFeatures]]:
    """Per source, per time window: byte mean/variance, inter-arrival CV, destination count.

    Flows sharing a tick count as one arrival for the gap statistics.
    """
    if window < 1:
        raise ValueError("window must be positive")
    buckets: dict[tuple[str, int], list[FlowRecord]] = {}
    for f in flows:
        buckets.setdefault((f.source, f.time // window), []).append(f)
    out: dict[str, list[WindowFeatures]] = {}
    for (src, w) in sorted(buckets):
        group = buckets[(src, w)]
        sizes = [f.bytes for f in group]
        mean = sum(sizes) / len(sizes)
        var = sum((s - mean) ** 2 for s in sizes) / len(sizes)
        out.setdefault(src, []).append(WindowFeatures(
            window=w,
            flows=len(group),
            mean_bytes=mean,
            byte_variance=var,
            gap_cv=_gap_cv([f.time for f in group]),
            distinct_destinations=len({f.destination for f in group}),
        ))
    return out


@dataclass(frozen=True)
class Thresholds:
    cv_max: float = 0.3
    var_max: float = 250_000.0
    min_windows: int = 2


@dataclass
class Detection:
    flagged: set[str]
    precision: float | None  # None when nothing was flagged
    recall: float | None  # None without positives to find

    @property
    def summary(self) -> str:
        if not self.flagged:
            return "no detections"
        recall = "n/a" if self.recall is None else f"{self.recall:.3f}"
        return f"precision={self.precision:.3f} recall={recall}"


def classify(
    features: dict[str, list[WindowFeatures]],
    thresholds: Thresholds,
    positives: set[str] | None = None,
) -> Detection:
    """Flag sources with regular, uniform-size traffic in at least ``min_windows`` windows.

    ``positives`` (ground truth) only feeds the precision/recall numbers.
    """
    flagged = set()
    for src, windows in features.items():
        hits = sum(
            1 for w in windows
            if w.gap_cv is not None and w.gap_cv <= thresholds.cv_max and w.byte_variance <= thresholds.var_max
        )
        if hits >= thresholds.min_windows:
            flagged.add(src)
    precision = recall = None
    if positives is not None:
        tp = len(flagged & positives)
        precision = tp / len(flagged) if flagged else None
        recall = tp / len(positives) if positives else None
    return Detection(flagged, precision, recall)


# --------------------------------------------------------------------- io

FLOW_HEADER = ["time", "source", "destination", "bytes", "label"]


def write_flows(path: str | Path, flows: Iterable[FlowRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLOW_HEADER)
        for f in flows:
            w.writerow([f.time, f.source, f.destination, f.bytes, f.label])


def read_flows(path: str | Path) -> list[FlowRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FLOW_HEADER:
            raise ValueError(f"unexpected flow header {header}")
        return [FlowRecord(int(t), s, d, int(b), lab) for t, s, d, b, lab in reader]


def write_blocklist(path: str | Path, domains: Iterable[str]) -> None:
    Path(path).write_text("".join(d + "\n" for d in sorted(domains)))


def read_blocklist(path: str | Path) -> set[str]:
    return {line.strip() for line in Path(path).read_text().splitlines() if line.strip()}
