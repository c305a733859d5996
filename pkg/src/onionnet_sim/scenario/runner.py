"""Build a world from a :class:`ScenarioConfig`, run it, and collect per-tick metrics."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from ..botnet import ALIVE, Bot, Botnet, BotnetParams, BotState
from ..engine import Engine, EventKind, RunMetrics, SimTime, Transcript
from ..errors import BadSignature, NoRendezvous
from ..evasion import (
    DgaConfig,
    DnsZone,
    FluxConfig,
    FlowRecord,
    Thresholds,
    WindowFeatures,
    c2_lookup,
    classify,
    dga_domains,
    extract_flow_features,
    flux_pool,
    flux_rotate,
    predict_blocklist,
    write_flows,
)
from ..overlay import NodeId, Overlay
from ..soap import Defender, NeutralizationReport, SoapPolicy
from .config import ScenarioConfig

logger = logging.getLogger(__name__)

ROW_FIELDS = (
    "tick",
    "susceptible",
    "rally",
    "waiting",
    "executing",
    "neutralized",
    "commands_issued",
    "command_deliveries",
    "attack_events",
    "discovered",
    "sybils_active",
    "detector_precision",
    "detector_recall",
)


def host_ip(i: int) -> str:
    n = i + 1
    return f"10.{n >> 16 & 255}.{n >> 8 & 255}.{n & 255}"


def _r6(x: float | None) -> float | None:
    return None if x is None else round(x, 6)


class FluxC2:
    """C&C over DGA domains with fast-flux A records, plus benign traffic and the flow detector."""

    def __init__(self, world: World) -> None:
        cfg = world.cfg
        self.world = world
        self.engine = world.engine
        self.rng = world.engine.rng
        self.botnet = world.botnet
        self.dga = DgaConfig(cfg.dga.seed, cfg.dga.domains_per_period, cfg.dga.label_length,
                             tuple(cfg.dga.tlds), cfg.dga.period_length)
        self.flux = FluxConfig(flux_pool(cfg.flux.pool_size), cfg.flux.ips_per_record, cfg.flux.rotation_period)
        self.zone = DnsZone()
        self.current_domain: str | None = None
        self.blocklist: set[str] = set()
        self.flows: list[FlowRecord] = []
        self._pending: list[FlowRecord] = []
        self.features: dict[str, list[WindowFeatures]] = {}
        self.positives: set[str] = set()
        self.thresholds = Thresholds(cfg.detector.cv_max, cfg.detector.var_max, cfg.detector.min_windows)
        self.precision: float | None = None
        self.recall: float | None = None
        self.flagged: set[str] = set()
        self.lookups = 0
        self.failed_lookups = 0
        self.benign_dests = [f"203.0.113.{i % 254 + 1}" if i < 254 else f"198.51.100.{i % 254 + 1}"
                             for i in range(cfg.benign.destinations)]

    def install(self) -> None:
        eng = self.engine
        eng.on(EventKind.PEER_UPDATE_DUE, lambda e, ev: self.poll(self.botnet.by_node[ev.subject], ev.time))
        eng.on(EventKind.COMMAND_PUSH, self._on_command)
        eng.on(EventKind.FLUX_ROTATE_DUE, self._on_flux)
        eng.on(EventKind.DETECTOR_SAMPLE_DUE, self._on_sample)
        eng.at(0, EventKind.FLUX_ROTATE_DUE, "master", {"action": "period", "period": 0})
        eng.at(self.flux.rotation_period, EventKind.FLUX_ROTATE_DUE, "master", {"action": "rotate"})
        eng.at(self.world.cfg.detector.window, EventKind.DETECTOR_SAMPLE_DUE, "detector")

    def _log(self, flow: FlowRecord) -> None:
        self.flows.append(flow)
        self._pending.append(flow)

    def _on_command(self, engine, ev) -> None:
        p = ev.payload
        self.botnet.master.issue(p["kind"], ev.time, **p["params"])
        self.botnet.tick_commands_issued += 1

    def _on_flux(self, engine, ev) -> None:
        cfg = self.world.cfg
        now = ev.time
        action = ev.payload["action"]
        if action == "period":
            period = ev.payload["period"]
            if self.current_domain is not None:
                self.zone.deregister(self.current_domain)
                self.current_domain = None
            domains = dga_domains(self.dga, period)
            if domains:
                idx = cfg.dga.master_index if cfg.dga.master_index >= 0 else self.rng.randrange(len(domains))
                self.current_domain = domains[idx]
                self.zone.register(self.current_domain, (), cfg.flux.ttl, now)
                flux_rotate(self.zone, self.current_domain, self.flux, now, self.rng)
            if cfg.blocklist.enabled:
                if cfg.blocklist.activation_delay == 0:
                    self._block(period)  # before any poll queued for this tick
                else:
                    engine.at(now + cfg.blocklist.activation_delay, EventKind.FLUX_ROTATE_DUE, "defender",
                              {"action": "block", "period": period})
            engine.at(now + self.dga.period_length, EventKind.FLUX_ROTATE_DUE, "master",
                      {"action": "period", "period": period + 1})
        elif action == "rotate":
            if self.current_domain is not None:
                flux_rotate(self.zone, self.current_domain, self.flux, now, self.rng)
            engine.at(now + self.flux.rotation_period, EventKind.FLUX_ROTATE_DUE, "master", {"action": "rotate"})
        elif action == "block":
            self._block(ev.payload["period"])

    def _block(self, period: int) -> None:
        b = self.world.cfg.blocklist
        seed = b.recovered_seed if b.recovered_seed >= 0 else self.dga.seed
        self.blocklist |= predict_blocklist(seed, self.dga, period)

    def poll(self, bot: Bot, now: SimTime) -> None:
        if bot.state not in ALIVE:
            return
        botnet = self.botnet
        src = bot.node.ip
        probes: list[FlowRecord] = []
        self.lookups += 1
        try:
            ip = c2_lookup(src, self.dga, self.zone, now, self.blocklist, probes)
        except NoRendezvous:
            self.failed_lookups += 1
            if bot.state is BotState.WAITING:
                botnet.set_state(bot, BotState.RALLY, now)
            ip = None
        for f in probes:
            self.positives.add(src)
            self._log(f)
        if ip is not None:
            self.positives.add(src)
            self._log(FlowRecord(now, src, ip, self.world.cfg.c2.beacon_bytes, "c2"))
            if bot.state is BotState.RALLY:
                botnet.set_state(bot, BotState.WAITING, now)
            for cmd in botnet.master.issued:
                if cmd.id in bot.seen_commands:
                    continue
                try:
                    botnet.verify(cmd)
                except BadSignature:
                    continue
                bot.seen_commands.add(cmd.id)
                botnet.tick_deliveries += 1
                if bot.state is BotState.WAITING:
                    botnet.execute(bot, cmd, now)
        j = self.world.cfg.c2.jitter
        delay = self.world.cfg.c2.poll_interval + (self.rng.randint(-j, j) if j else 0)
        self.engine.at(now + delay, EventKind.PEER_UPDATE_DUE, bot.node.id)

    def _benign(self, start: SimTime, end: SimTime) -> list[FlowRecord]:
        b = self.world.cfg.benign
        out = []
        for bot in self.botnet.bots:
            if bot.state is not BotState.SUSCEPTIBLE:
                continue
            t = start + self.rng.expovariate(1.0 / b.mean_gap)
            while t < end:
                out.append(FlowRecord(int(t), bot.node.ip, self.rng.choice(self.benign_dests),
                                      self.rng.randint(b.min_bytes, b.max_bytes), "benign"))
                t += self.rng.expovariate(1.0 / b.mean_gap)
        return out

    def _on_sample(self, engine, ev) -> None:
        now = ev.time
        w = self.world.cfg.detector.window
        start = now - w
        window_flows = [f for f in self._pending if f.time < now]
        self._pending = [f for f in self._pending if f.time >= now]
        benign = self._benign(start, now)
        self.flows.extend(benign)
        window_flows.extend(benign)
        window_flows.sort(key=lambda f: (f.time, f.source))
        for src, feats in extract_flow_features(window_flows, w).items():
            self.features.setdefault(src, []).extend(feats)
        det = classify(self.features, self.thresholds, self.positives)
        self.flagged = det.flagged
        self.precision, self.recall = det.precision, det.recall
        engine.at(now + w, EventKind.DETECTOR_SAMPLE_DUE, "detector")

    def sorted_flows(self) -> list[FlowRecord]:
        return sorted(self.flows, key=lambda f: (f.time, f.source, f.destination, f.bytes))


class World:
    """One isolated simulation: engine, overlay, botnet and optional defender/DNS stack."""

    def __init__(self, cfg: ScenarioConfig, record_transcript: bool = False) -> None:
        self.cfg = cfg
        self.engine = Engine(cfg.seed)
        self.engine.record_dispatch = record_transcript
        self.transcript = Transcript(record_transcript)
        hosts = [NodeId(f"n{i:05d}", host_ip(i)) for i in range(cfg.population)]
        self.overlay: Overlay | None = None
        if cfg.transport == "onion":
            relays = [NodeId(f"r{i:04d}", f"172.16.{i // 250}.{i % 250 + 1}") for i in range(cfg.relays)]
            self.overlay = Overlay(self.engine.rng, relays, cfg.circuit_length,
                                   (cfg.latency.min, cfg.latency.max), record=record_transcript)
        params = BotnetParams(
            k=cfg.k,
            peer_update_period=cfg.peer_update_period,
            contact_rate=cfg.contact_rate,
            beta=cfg.beta,
            hardcoded_peers=cfg.hardcoded_peers,
            bootstrap_retries=cfg.bootstrap_retries,
            contact_loss=cfg.contact_loss,
            seeds_per_push=cfg.command.seeds,
            infection_stop_tick=cfg.infection_stop_tick,
            transport=cfg.transport,
        )
        self.botnet = Botnet(self.engine, self.overlay, hosts, NodeId("master", "172.31.0.1"), params,
                             self.transcript)
        self.botnet.install()
        self.flux: FluxC2 | None = None
        if cfg.transport == "dns-flux":
            self.flux = FluxC2(self)
            self.flux.install()
        self.defender: Defender | None = None
        if cfg.soap.enabled and cfg.transport == "onion":
            self.defender = Defender(self.botnet, SoapPolicy(
                sybils_per_target=cfg.soap.sybils_per_target,
                ping_interval=cfg.ping_interval,
                honeypots=cfg.soap.honeypots,
                p_detect=cfg.soap.p_detect,
                probe_interval=cfg.soap.probe_interval,
                probes_per_round=cfg.soap.probes_per_round,
                gossip_poisoning=cfg.soap.gossip_poisoning,
            ))
            self.defender.run_soap(cfg.soap.start_tick)

        self.botnet.seed_infections(cfg.initial_infected, 0)
        if cfg.initial_infected and cfg.contact_rate and cfg.population > 1:
            self.botnet.start_contacts(1)
        if cfg.hardcoded_refresh_tick and cfg.transport == "onion":
            self.engine.at(cfg.hardcoded_refresh_tick, EventKind.PEER_UPDATE_DUE, "master")
        c = cfg.command
        params_for = {"target": c.target, "rate": c.rate, "duration": c.duration,
                      "volume": c.volume, "window": c.window}
        for i in range(c.count):
            self.engine.at(c.first_tick + i * c.interval, EventKind.COMMAND_PUSH, "master",
                           {"kind": c.kind, "params": params_for})
        self.engine.sampler = self.sample

    def sample(self, tick: SimTime) -> dict:
        bn = self.botnet
        counts = bn.counts
        row = {
            "tick": tick,
            "susceptible": counts[BotState.SUSCEPTIBLE],
            "rally": counts[BotState.RALLY],
            "waiting": counts[BotState.WAITING],
            "executing": counts[BotState.EXECUTING],
            "neutralized": counts[BotState.NEUTRALIZED],
            "commands_issued": bn.tick_commands_issued,
            "command_deliveries": bn.tick_deliveries,
            "attack_events": bn.tick_attack_events,
            "discovered": len(self.defender.state.discovered) if self.defender else 0,
            "sybils_active": self.defender.sybil_count if self.defender else 0,
            "detector_precision": _r6(self.flux.precision) if self.flux else None,
            "detector_recall": _r6(self.flux.recall) if self.flux else None,
        }
        bn.tick_commands_issued = bn.tick_deliveries = bn.tick_attack_events = 0
        return row

    def run(self, until: SimTime | None = None) -> RunMetrics:
        horizon = self.cfg.horizon if until is None else until
        metrics = self.engine.run_until(horizon)
        if until is None or until >= self.cfg.horizon:
            metrics.summary = self.summary(metrics.rows)
        return metrics

    def neutralization_report(self, rows: list[dict]) -> NeutralizationReport:
        series = [r["neutralized"] for r in rows]
        half, full = _neutralization_milestones(rows)
        last = rows[-1] if rows else None
        return NeutralizationReport(
            neutralized_per_tick=series,
            final_fraction=_neutralized_fraction(last) if last else 0.0,
            discovered=len(self.defender.state.discovered) if self.defender else 0,
            sybils=self.defender.sybil_count if self.defender else 0,
            time_to_half=half,
            time_to_full=full,
        )

    def summary(self, rows: list[dict]) -> dict:
        cfg = self.cfg
        pop = cfg.population
        last = rows[-1] if rows else {f: 0 for f in ROW_FIELDS}

        def first(pred):
            return next((r["tick"] for r in rows if pred(r)), None)

        ever = (lambda r: (pop - r["susceptible"]) / pop) if pop else (lambda r: 0.0)
        half, full = _neutralization_milestones(rows)
        out = {
            "name": cfg.name,
            "seed": cfg.seed,
            "transport": cfg.transport,
            "population": pop,
            "horizon": cfg.horizon,
            "final": {f: last[f] for f in ROW_FIELDS if f != "tick"},
            "ever_infected": pop - last["susceptible"],
            "time_to_50pct_infection": first(lambda r: pop and ever(r) >= 0.5),
            "time_to_90pct_infection": first(lambda r: pop and ever(r) >= 0.9),
            "neutralized_fraction": round(_neutralized_fraction(last), 6),
            "time_to_50pct_neutralization": half,
            "time_to_100pct_neutralization": full,
            "commands_issued": sum(r["commands_issued"] for r in rows),
            "command_deliveries": sum(r["command_deliveries"] for r in rows),
            "attack_events": sum(r["attack_events"] for r in rows),
            "detector_precision": last["detector_precision"],
            "detector_recall": last["detector_recall"],
        }
        if self.defender is not None:
            out["soap"] = self.neutralization_report(rows).to_dict()
        return out

    def transcript_lines(self) -> list[str]:
        """Serialized run transcript: dispatch log, protocol records, sessions, traces."""
        lines = [json.dumps({"type": "dispatch", "t": t, "seq": s, "kind": k, "subject": subj},
                            separators=(",", ":")) for t, s, k, subj in self.engine.transcript]
        lines += [json.dumps(r, separators=(",", ":")) for r in self.transcript.records]
        if self.overlay is not None:
            lines += [json.dumps({"type": "session", **s}, separators=(",", ":")) for s in self.overlay.sessions]
            lines += [json.dumps({"type": "trace", **t.to_dict()}, separators=(",", ":"))
                      for t in self.overlay.traces]
        for bot in self.botnet.bots:
            if bot.peers is not None:
                lines.append(json.dumps({"type": "final_peers", "bot": bot.onion, "peers": bot.peers.snapshot()},
                                        separators=(",", ":")))
        return lines


def _neutralized_fraction(row: dict) -> float:
    infected = row["rally"] + row["waiting"] + row["executing"] + row["neutralized"]
    return row["neutralized"] / infected if infected else 0.0


def _neutralization_milestones(rows: list[dict]) -> tuple[SimTime | None, SimTime | None]:
    half = next((r["tick"] for r in rows if r["neutralized"] and _neutralized_fraction(r) >= 0.5), None)
    full = next((r["tick"] for r in rows if r["neutralized"] and _neutralized_fraction(r) >= 1.0), None)
    return half, full


def encode_metrics(metrics: RunMetrics) -> bytes:
    lines = [json.dumps({f: row[f] for f in ROW_FIELDS}, separators=(",", ":")) for row in metrics.rows]
    lines.append(json.dumps({"summary": metrics.summary}, separators=(",", ":"), sort_keys=True))
    return ("\n".join(lines) + "\n").encode()


def run_scenario(cfg: ScenarioConfig, out: str | Path | None = None, transcript: str | Path | None = None,
                 flows: str | Path | None = None) -> RunMetrics:
    """Run to the horizon; optionally write metrics JSONL, the transcript and the flow corpus."""
    world = World(cfg, record_transcript=transcript is not None)
    metrics = world.run()
    target = out or cfg.output
    if target:
        Path(target).write_bytes(encode_metrics(metrics))
    if transcript is not None:
        Path(transcript).write_text("\n".join(world.transcript_lines()) + "\n")
    if flows is not None and world.flux is not None:
        write_flows(flows, world.flux.sorted_flows())
    return metrics
