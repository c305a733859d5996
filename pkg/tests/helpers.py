"""Shared builders and independent oracles for the test suite."""

from __future__ import annotations

from collections import deque

from onionnet_sim.scenario.config import ScenarioConfig


def small_config(**over) -> ScenarioConfig:
    base = dict(
        name="t",
        seed=1,
        horizon=400,
        population=50,
        initial_infected=50,
        beta=0.0,
        k=8,
        peer_update_period=100,
        relays=12,
    )
    base.update(over)
    cfg = ScenarioConfig()
    return cfg.with_overrides(base)


def reachable(graph: dict[str, list[str]], seeds, forwarding, receiving) -> set[str]:
    """Breadth-first closure: nodes that receive, starting from ``seeds``.

    Only nodes in ``receiving`` get the message; only those in ``forwarding``
    pass it on along their out-edges.
    """
    seen: set[str] = set()
    queue = deque(s for s in seeds if s in receiving)
    seen.update(queue)
    while queue:
        u = queue.popleft()
        if u not in forwarding:
            continue
        for v in graph.get(u, ()):
            if v in receiving and v not in seen:
                seen.add(v)
                queue.append(v)
    return seen
