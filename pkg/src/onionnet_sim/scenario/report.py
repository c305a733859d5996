"""Read a metrics JSONL file back and summarize it."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from ..errors import MalformedMetrics
from .runner import ROW_FIELDS

logger = logging.getLogger(__name__)

STATE_FIELDS = ("susceptible", "rally", "waiting", "executing", "neutralized")


@dataclass
class MetricsFile:
    rows: list[dict]
    summary: dict


def parse_metrics(data: bytes) -> MetricsFile:
    """Parse tick rows followed by one summary object; errors carry the byte offset."""
    rows: list[dict] = []
    summary: dict | None = None
    offset = 0
    for raw in data.splitlines(keepends=True):
        start = offset
        offset += len(raw)
        if summary is not None:
            raise MalformedMetrics(start, "content after summary line")
        if not raw.endswith(b"\n"):
            raise MalformedMetrics(start, "truncated line (no newline)")
        if not raw.strip():
            raise MalformedMetrics(start, "blank line")
        try:
            obj = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedMetrics(start, f"invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise MalformedMetrics(start, "line is not a JSON object")
        if "summary" in obj:
            if not isinstance(obj["summary"], dict) or len(obj) != 1:
                raise MalformedMetrics(start, "bad summary object")
            summary = obj["summary"]
            continue
        if list(obj) != list(ROW_FIELDS):
            raise MalformedMetrics(start, f"row fields {list(obj)} differ from schema")
        rows.append(obj)
    if summary is None:
        raise MalformedMetrics(offset, "missing summary line")
    return MetricsFile(rows, summary)


def load_metrics(path: str | Path) -> MetricsFile:
    return parse_metrics(Path(path).read_bytes())


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def render_report(m: MetricsFile) -> str:
    s = m.summary
    pop = s.get("population", 0)
    final = s.get("final", {})
    lines = [
        f"scenario {s.get('name', '?')} seed {s.get('seed', '?')} transport {s.get('transport', '?')}",
        f"population {pop}, horizon {s.get('horizon', '?')}, ticks recorded {len(m.rows)}",
        "",
        "final state counts:",
    ]
    for f in STATE_FIELDS:
        lines.append(f"  {f:<12} {final.get(f, 0)}")
    lines += [
        "",
        "milestones:",
        f"  infected 50% at tick {_fmt(s.get('time_to_50pct_infection'))}",
        f"  infected 90% at tick {_fmt(s.get('time_to_90pct_infection'))}",
        f"  neutralized 50% at tick {_fmt(s.get('time_to_50pct_neutralization'))}",
        f"  neutralized 100% at tick {_fmt(s.get('time_to_100pct_neutralization'))}",
        "",
        f"ever infected        {s.get('ever_infected', 0)}",
        f"neutralized fraction {_fmt(s.get('neutralized_fraction', 0.0))}",
        f"commands issued      {s.get('commands_issued', 0)}",
        f"command deliveries   {s.get('command_deliveries', 0)}",
        f"attack events        {s.get('attack_events', 0)}",
    ]
    p, r = s.get("detector_precision"), s.get("detector_recall")
    if s.get("transport") == "dns-flux":
        if p is None:
            lines.append("detector             no detections")
        else:
            lines.append(f"detector             precision {_fmt(p)} recall {_fmt(r)}")
    return "\n".join(lines) + "\n"


def write_plots(m: MetricsFile, out_dir: str | Path) -> list[Path]:
    """Line charts of state counts and per-tick activity; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ticks = [r["tick"] for r in m.rows]
    written = []

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for f in STATE_FIELDS:
        ax.plot(ticks, [r[f] for r in m.rows], label=f)
    ax.set_xlabel("tick")
    ax.set_ylabel("hosts")
    ax.set_title(f"{m.summary.get('name', '')} seed {m.summary.get('seed', '')}")
    ax.legend()
    fig.tight_layout()
    path = out / "states.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for f in ("command_deliveries", "attack_events", "discovered", "sybils_active"):
        ax.plot(ticks, [r[f] for r in m.rows], label=f)
    ax.set_xlabel("tick")
    ax.legend()
    fig.tight_layout()
    path = out / "activity.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)
    return written


def report(path: str | Path, plots: str | Path | None = None) -> str:
    m = load_metrics(path)
    text = render_report(m)
    if plots is not None:
        for p in write_plots(m, plots):
            logger.info("wrote %s", p)
    return text
