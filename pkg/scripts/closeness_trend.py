"""Tracker closeness to the planned fluid path on RS for growing n.

Writes one JSON summary per n plus a plot-ready CSV of per-segment medians:

    python3 scripts/closeness_trend.py --seeds 200 --out-dir results/closeness
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from fluidnet.experiments import ClosenessConfig, closeness_summary, rs_closeness, sq_closeness_control


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ns", default="100,200,400")
    ap.add_argument("--seeds", type=int, default=200)
    ap.add_argument("--cap", type=int, default=1000)
    ap.add_argument("--out-dir", default=None)
    a = ap.parse_args()
    cfg = ClosenessConfig(ns=tuple(int(x) for x in a.ns.split(",")), seeds=a.seeds, cap=a.cap)
    out = Path(a.out_dir) if a.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    seg_rows = ["n,segment,scaled_dev_median"]
    summaries = []
    for n in cfg.ns:
        t0 = time.time()
        rep = rs_closeness(n, cfg)
        s = closeness_summary(rep) | {"seconds": time.time() - t0}
        summaries.append(s)
        print(json.dumps(s))
        seg_rows += [f"{n},{r},{v!r}" for r, v in rep.scaled_dev_by_segment().items()]
    control = closeness_summary(sq_closeness_control(100))
    print(json.dumps({"sq_control": control}))
    if out:
        (out / "summary.json").write_text(json.dumps({"config": cfg.to_json(), "rs": summaries, "sq_control": control}, indent=1))
        (out / "by_segment.csv").write_text("\n".join(seg_rows) + "\n")


if __name__ == "__main__":
    main()
