"""Offline threshold sweep for the flow detector.

Generates flow corpora from a dns-flux scenario on training seeds, grid-searches
(cv_max, var_max, min_windows), and prints a setting with the best mean F1. When many settings tie, it takes
the median of the tied set along each axis in turn, which keeps the frozen
thresholds away from the edges of the region that works.

    python tools/tune_detector.py --scenario dns-flux-small --seeds 101..110
"""

from __future__ import annotations

import argparse
import itertools

from onionnet_sim.cli import parse_seed_range, resolve_scenario
from onionnet_sim.evasion import Thresholds, classify, extract_flow_features
from onionnet_sim.scenario.config import load_scenario
from onionnet_sim.scenario.runner import World

CV_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.6)
VAR_GRID = (1e3, 1e4, 1e5, 2.5e5, 5e5, 1e6)
WINDOW_GRID = (1, 2, 3, 5)


def corpus(cfg):
    w = World(cfg)
    w.run()
    return w.flux.sorted_flows(), set(w.flux.positives)


def f1(det) -> float:
    p, r = det.precision or 0.0, det.recall or 0.0
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenario", default="dns-flux-small")
    ap.add_argument("--seeds", default="101..110")
    args = ap.parse_args(argv)

    base = load_scenario(resolve_scenario(args.scenario))
    runs = []
    for seed in parse_seed_range(args.seeds):
        flows, positives = corpus(base.with_overrides({"seed": seed}))
        runs.append((extract_flow_features(flows, base.detector.window), positives))

    scored = []
    for cv, var, m in itertools.product(CV_GRID, VAR_GRID, WINDOW_GRID):
        th = Thresholds(cv, var, m)
        dets = [classify(feats, th, pos) for feats, pos in runs]
        mean_f1 = sum(f1(d) for d in dets) / len(dets)
        worst_p = min(d.precision or 0.0 for d in dets)
        worst_r = min(d.recall or 0.0 for d in dets)
        scored.append((mean_f1, -cv, -var, m, worst_p, worst_r))
    scored.sort(reverse=True)
    print("mean_f1  cv_max  var_max   min_windows  worst_p  worst_r")
    for mean_f1, ncv, nvar, m, wp, wr in scored[:10]:
        print(f"{mean_f1:.4f}  {-ncv:<6}  {-nvar:<8g}  {m:<11}  {wp:.3f}    {wr:.3f}")
    top = scored[0][0]
    tied = [(-ncv, -nvar, m) for f, ncv, nvar, m, _, _ in scored if f == top]

    def median(values):
        vals = sorted(set(values))
        return vals[(len(vals) - 1) // 2]

    cv = median(c for c, _, _ in tied)
    var = median(v for c, v, _ in tied if c == cv)
    m = median(w for c, v, w in tied if c == cv and v == var)
    print(f"\n{len(tied)} settings tie at mean F1 {top:.4f}")
    print(f"detector.cv_max = {cv}\ndetector.var_max = {var:g}\ndetector.min_windows = {m}")


if __name__ == "__main__":
    main()
