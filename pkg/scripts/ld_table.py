"""Chernoff constants against Monte-Carlo tail frequencies for each family.

    python3 scripts/ld_table.py --trials 100000 > ld_table.csv
"""
from __future__ import annotations

import argparse
import math

from fluidnet.ld import binomial_sigma, chernoff_rate, empirical_ld_time, ld_time_bound
from fluidnet.network import DistSpec

FAMILIES = {
    "exponential:1": DistSpec.exponential(1.0),
    "erlang:3,3": DistSpec("erlang", (3, 3.0)),
    "uniform:0,2": DistSpec("uniform-bounded", (0.0, 2.0)),
    "deterministic:1": DistSpec.deterministic(1.0),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--eps", default="0.25,0.5")
    ap.add_argument("--ns", default="50,100,200")
    ap.add_argument("--trials", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    print("family,eps,n,L_upper,L_lower,bound,frequency,margin,within")
    for name, dist in FAMILIES.items():
        for eps in (float(x) for x in a.eps.split(",")):
            Lu = chernoff_rate(dist, eps, "upper")[0]
            Ll = chernoff_rate(dist, eps, "lower")[0] if eps < dist.mean else math.inf
            for n in (int(x) for x in a.ns.split(",")):
                bound = ld_time_bound(dist, eps, n)
                freq = empirical_ld_time(dist, eps, n, 0.0, a.trials, a.seed + n)
                margin = 3 * binomial_sigma(bound, a.trials)
                print(f"{name},{eps},{n},{Lu!r},{Ll!r},{bound!r},{freq!r},{margin!r},{int(freq <= bound + margin)}")


if __name__ == "__main__":
    main()
