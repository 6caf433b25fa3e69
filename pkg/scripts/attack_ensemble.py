"""Supervisor ensemble on the RS fixture from ||q|| = n.

The calibration run (seeds 1000..1099) fixes the thresholds checked by the
acceptance suite, which uses seeds 0..99:

    python3 scripts/attack_ensemble.py --first-seed 1000 --out tests/fixtures/attack_calibration.json
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import time

from fluidnet.experiments import AttackConfig, attack_ensemble, summarize_attack


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--first-seed", type=int, default=1000)
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--n", type=int, default=AttackConfig.n)
    ap.add_argument("--cap", type=int, default=AttackConfig.cap)
    ap.add_argument("--out", default=None)
    a = ap.parse_args()
    cfg = AttackConfig(n=a.n, cap=a.cap)
    t0 = time.time()
    rows, theta = attack_ensemble(range(a.first_seed, a.first_seed + a.seeds), cfg)
    out = {
        "config": dataclasses.asdict(cfg) | {"theta": theta, "first_seed": a.first_seed},
        "summary": summarize_attack(rows),
        "runs": rows,
        "seconds": time.time() - t0,
    }
    if a.out:
        with open(a.out, "w") as fh:
            fh.write(json.dumps(out, indent=1) + "\n")
    print(json.dumps(out["summary"] | {"seconds": out["seconds"]}, indent=1))


if __name__ == "__main__":
    main()
