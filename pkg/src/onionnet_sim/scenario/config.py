"""Scenario files: flat ``key = value`` lines, ``#`` comments, dotted keys for groups."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..errors import ParseError, ValidationError


@dataclass
class LatencySection:
    min: int = 1
    max: int = 3


@dataclass
class CommandSection:
    count: int = 0
    first_tick: int = 100
    interval: int = 200
    kind: str = "ddos"
    target: str = "victim"
    rate: int = 5
    duration: int = 10
    volume: int = 50
    window: int = 10
    seeds: int = 3


@dataclass
class SoapSection:
    enabled: bool = False
    start_tick: int = 300
    honeypots: int = 0
    p_detect: float = 0.0
    sybils_per_target: int = 8
    ping_interval: int = 0  # 0 means peer_update_period // 4
    probe_interval: int = 60
    probes_per_round: int = 0  # 0 means every infected host
    gossip_poisoning: bool = False


@dataclass
class DgaSection:
    seed: int = 20151
    domains_per_period: int = 10
    label_length: int = 12
    tlds: tuple = (".com", ".net", ".biz")
    period_length: int = 200
    master_index: int = -1  # -1 draws a fresh index each period


@dataclass
class FluxSection:
    pool_size: int = 1000
    ips_per_record: int = 3
    rotation_period: int = 10
    ttl: int = 5


@dataclass
class C2Section:
    poll_interval: int = 20
    jitter: int = 1
    beacon_bytes: int = 512


@dataclass
class BenignSection:
    mean_gap: float = 15.0
    min_bytes: int = 50
    max_bytes: int = 5000
    destinations: int = 50


@dataclass
class BlocklistSection:
    enabled: bool = False
    recovered_seed: int = -1  # -1 means the true DGA seed
    activation_delay: int = 0


@dataclass
class DetectorSection:
    window: int = 200
    cv_max: float = 0.3
    var_max: float = 250000.0
    min_windows: int = 2


@dataclass
class ScenarioConfig:
    name: str = "unnamed"
    seed: int = 1
    horizon: int = 1000
    population: int = 100
    initial_infected: int = 5
    transport: str = "onion"
    contact_rate: int = 1
    beta: float = 0.05
    k: int = 8
    peer_update_period: int = 60
    hardcoded_peers: int = 5
    bootstrap_retries: int = 2
    contact_loss: float = 0.0
    infection_stop_tick: int = 0  # 0 means infections never stop
    hardcoded_refresh_tick: int = 0  # 0 keeps the initial bootstrap list for the whole run
    circuit_length: int = 3
    relays: int = 40
    output: str = ""
    latency: LatencySection = field(default_factory=LatencySection)
    command: CommandSection = field(default_factory=CommandSection)
    soap: SoapSection = field(default_factory=SoapSection)
    dga: DgaSection = field(default_factory=DgaSection)
    flux: FluxSection = field(default_factory=FluxSection)
    c2: C2Section = field(default_factory=C2Section)
    benign: BenignSection = field(default_factory=BenignSection)
    blocklist: BlocklistSection = field(default_factory=BlocklistSection)
    detector: DetectorSection = field(default_factory=DetectorSection)

    @property
    def ping_interval(self) -> int:
        return self.soap.ping_interval or max(1, self.peer_update_period // 4)

    def with_overrides(self, overrides: Mapping[str, Any]) -> ScenarioConfig:
        """Copy with dotted-key overrides applied (string values are parsed), then validated."""
        cfg = dataclasses.replace(
            self, **{f.name: dataclasses.replace(getattr(self, f.name)) for f in _sections()}
        )
        for key, value in overrides.items():
            _assign(cfg, key, value, line=0)
        validate(cfg)
        return cfg


def _sections():
    return [f for f in dataclasses.fields(ScenarioConfig) if dataclasses.is_dataclass(f.default_factory)]


def _parse_value(raw: str, default: Any, key: str, line: int) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            try:
                return int(raw, 0)
            except ValueError:
                return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(p.strip() for p in raw.split(",") if p.strip())
    except ValueError:
        raise ParseError(line, f"bad value {raw!r} for {key}") from None
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def _assign(cfg: ScenarioConfig, key: str, value: Any, line: int) -> None:
    parts = key.split(".")
    target: Any = cfg
    for part in parts[:-1]:
        sub = getattr(target, part, None) if part in _section_names() and target is cfg else None
        if sub is None:
            raise ParseError(line, f"unknown key {key!r}")
        target = sub
    leaf = parts[-1]
    names = {f.name for f in dataclasses.fields(target)}
    if leaf not in names or (target is cfg and leaf in _section_names()):
        raise ParseError(line, f"unknown key {key!r}")
    default = getattr(target, leaf)
    if isinstance(value, str):
        value = _parse_value(value, default, key, line)
    setattr(target, leaf, value)


def _section_names() -> set[str]:
    return {f.name for f in _sections()}


def parse_scenario(text: str) -> ScenarioConfig:
    cfg = ScenarioConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(lineno, "empty key")
        _assign(cfg, key, value, lineno)
    validate(cfg)
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_text())


def _prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValidationError(name, "∈[0,1]")


def validate(cfg: ScenarioConfig) -> None:
    _prob("beta", cfg.beta)
    _prob("contact_loss", cfg.contact_loss)
    _prob("soap.p_detect", cfg.soap.p_detect)
    if cfg.horizon <= 0:
        raise ValidationError("horizon", "> 0")
    if cfg.population < 0:
        raise ValidationError("population", ">= 0")
    if not 0 <= cfg.initial_infected <= cfg.population:
        raise ValidationError("initial_infected", "0 <= initial_infected <= population")
    if cfg.transport not in ("onion", "dns-flux"):
        raise ValidationError("transport", "one of onion, dns-flux")
    checks = [
        ("contact_rate", cfg.contact_rate >= 0, ">= 0"),
        ("k", cfg.k >= 1, ">= 1"),
        ("peer_update_period", cfg.peer_update_period >= 1, ">= 1"),
        ("hardcoded_peers", cfg.hardcoded_peers >= 0, ">= 0"),
        ("bootstrap_retries", cfg.bootstrap_retries >= 1, ">= 1"),
        ("infection_stop_tick", cfg.infection_stop_tick >= 0, ">= 0"),
        ("hardcoded_refresh_tick", cfg.hardcoded_refresh_tick >= 0, ">= 0"),
        ("circuit_length", 1 <= cfg.circuit_length <= 5, "∈[1,5]"),
        ("latency.min", cfg.latency.min >= 0, ">= 0"),
        ("latency.max", cfg.latency.max >= cfg.latency.min, ">= latency.min"),
        ("command.count", cfg.command.count >= 0, ">= 0"),
        ("command.kind", cfg.command.kind in ("ddos", "spam"), "one of ddos, spam"),
        ("command.rate", cfg.command.rate >= 0, ">= 0"),
        ("command.duration", cfg.command.duration >= 0, ">= 0"),
        ("command.volume", cfg.command.volume >= 0, ">= 0"),
        ("command.window", cfg.command.window >= 1, ">= 1"),
        ("command.interval", cfg.command.interval >= 1, ">= 1"),
        ("command.seeds", cfg.command.seeds >= 1, ">= 1"),
        ("soap.start_tick", cfg.soap.start_tick >= 0, ">= 0"),
        ("soap.honeypots", cfg.soap.honeypots >= 0, ">= 0"),
        ("soap.sybils_per_target", cfg.soap.sybils_per_target >= 1, ">= 1"),
        ("soap.ping_interval", cfg.soap.ping_interval >= 0, ">= 0"),
        ("soap.probe_interval", cfg.soap.probe_interval >= 1, ">= 1"),
        ("soap.probes_per_round", cfg.soap.probes_per_round >= 0, ">= 0"),
        ("dga.domains_per_period", cfg.dga.domains_per_period >= 0, ">= 0"),
        ("dga.label_length", cfg.dga.label_length >= 1, ">= 1"),
        ("dga.tlds", len(cfg.dga.tlds) >= 1, "non-empty"),
        ("dga.period_length", cfg.dga.period_length >= 1, ">= 1"),
        ("dga.master_index", -1 <= cfg.dga.master_index < max(1, cfg.dga.domains_per_period),
         "-1 or < domains_per_period"),
        ("flux.pool_size", cfg.flux.pool_size >= 1, ">= 1"),
        ("flux.ips_per_record", 1 <= cfg.flux.ips_per_record <= cfg.flux.pool_size, "∈[1,pool_size]"),
        ("flux.rotation_period", cfg.flux.rotation_period >= 1, ">= 1"),
        ("c2.poll_interval", cfg.c2.poll_interval >= 1, ">= 1"),
        ("c2.jitter", 0 <= cfg.c2.jitter < cfg.c2.poll_interval, "∈[0,poll_interval)"),
        ("benign.mean_gap", cfg.benign.mean_gap > 0, "> 0"),
        ("benign.min_bytes", 1 <= cfg.benign.min_bytes <= cfg.benign.max_bytes, "∈[1,max_bytes]"),
        ("benign.destinations", cfg.benign.destinations >= 1, ">= 1"),
        ("blocklist.activation_delay", cfg.blocklist.activation_delay >= 0, ">= 0"),
        ("detector.window", cfg.detector.window >= 1, ">= 1"),
        ("detector.min_windows", cfg.detector.min_windows >= 1, ">= 1"),
    ]
    for name, ok, constraint in checks:
        if not ok:
            raise ValidationError(name, constraint)
    if cfg.transport == "onion" and cfg.relays < 2 * cfg.circuit_length + 1:
        raise ValidationError("relays", ">= 2 * circuit_length + 1")
