"""Command-line entry point: run, report, sweep, blocklist."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .errors import MalformedMetrics, ParseError, SimError, ValidationError
from .evasion import DgaConfig, predict_blocklist, write_blocklist
from .scenario.config import ScenarioConfig, load_scenario
from .scenario.report import report
from .scenario.runner import run_scenario
from .scenarios import NAMES, path as shipped_path

logger = logging.getLogger("onionnet_sim")

SEED_ENV = "ONIONNET_SIM_SEED"

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2


def resolve_scenario(name: str) -> Path:
    """A file path, or the name of a shipped scenario."""
    p = Path(name)
    if p.exists():
        return p
    if name in NAMES:
        return shipped_path(name)
    raise FileNotFoundError(f"no scenario file or shipped scenario named {name!r}")


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ParseError(0, f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args) -> ScenarioConfig:
    cfg = load_scenario(resolve_scenario(args.scenario))
    over = _overrides(args.set or [])
    seed = os.environ.get(SEED_ENV)
    if seed is not None and seed.strip():
        over["seed"] = seed.strip()
    elif getattr(args, "seed", None) is not None:
        over["seed"] = str(args.seed)
    return cfg.with_overrides(over) if over else cfg


def parse_seed_range(text: str) -> range:
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise ValidationError("seeds", "a..b with integers") from None
    if hi < lo:
        raise ValidationError("seeds", "a <= b")
    return range(lo, hi + 1)


def cmd_run(args) -> int:
    cfg = _config(args)
    metrics = run_scenario(cfg, out=args.out, transcript=args.transcript, flows=args.flows)
    s = metrics.summary
    logger.info("run %s seed %d: %d ticks written to %s", cfg.name, cfg.seed, len(metrics.rows), args.out)
    print(f"{cfg.name} seed={cfg.seed} ever_infected={s['ever_infected']} "
          f"neutralized_fraction={s['neutralized_fraction']} deliveries={s['command_deliveries']}")
    return EXIT_OK


def cmd_report(args) -> int:
    sys.stdout.write(report(args.metrics, args.plots))
    return EXIT_OK


def _sweep_one(job: tuple[ScenarioConfig, str]) -> str:
    cfg, out = job
    run_scenario(cfg, out=out)
    return out


def cmd_sweep(args) -> int:
    base = _config(args)
    seeds = parse_seed_range(args.seeds)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(base.with_overrides({"seed": s}), str(out_dir / f"{base.name}-seed{s}.jsonl")) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_sweep_one, jobs))
    else:
        done = [_sweep_one(j) for j in jobs]
    for d in done:
        print(d)
    return EXIT_OK


def cmd_blocklist(args) -> int:
    cfg = load_scenario(resolve_scenario(args.scenario))
    dga = DgaConfig(args.recovered_seed, cfg.dga.domains_per_period, cfg.dga.label_length,
                    tuple(cfg.dga.tlds), cfg.dga.period_length)
    domains: set[str] = set()
    for period in range(args.first, args.last + 1):
        domains |= predict_blocklist(args.recovered_seed, dga, period)
    write_blocklist(args.out, domains)
    print(f"{len(domains)} domains written to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onionnet-sim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario to its horizon")
    run.add_argument("--scenario", required=True, help="scenario file or shipped name")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", required=True, help="metrics JSONL path")
    run.add_argument("--transcript", default=None, help="write the serialized run transcript here")
    run.add_argument("--flows", default=None, help="write the flow corpus CSV here (dns-flux only)")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario key")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize a metrics file")
    rep.add_argument("--metrics", required=True)
    rep.add_argument("--plots", default=None, help="directory for PNG line charts")
    rep.set_defaults(func=cmd_report)

    sw = sub.add_parser("sweep", help="run a scenario over a seed range")
    sw.add_argument("--scenario", required=True)
    sw.add_argument("--seeds", required=True, help="inclusive range a..b")
    sw.add_argument("--out", required=True, help="output directory")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes")
    sw.add_argument("--set", action="append", metavar="KEY=VALUE")
    sw.set_defaults(func=cmd_sweep)

    bl = sub.add_parser("blocklist", help="predict DGA domains from a recovered seed")
    bl.add_argument("--scenario", required=True)
    bl.add_argument("--recovered-seed", type=int, required=True)
    bl.add_argument("--first", type=int, default=0, help="first period index")
    bl.add_argument("--last", type=int, default=9, help="last period index")
    bl.add_argument("--out", required=True)
    bl.set_defaults(func=cmd_blocklist)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError, MalformedMetrics, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SimError as exc:  # SimulationAbort and other runtime failures
        print(f"abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
