#!/usr/bin/env python3
"""Recompute the frozen benchmark statistics from their contingency tables
and print them as TSV, so the numbers in the test suite can be audited."""

import os
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "src"))

from patchrepro.analytics import (  # noqa: E402
    ContingencyTable2x2 as T,
    cmh_test,
    convergence_curve,
    expected_overall_time,
    fisher_exact,
    mantel_haenszel_or,
)

SUBSYSTEM = {
    "mid-tier": [("net", T(24, 26, 23, 27)), ("net/filter", T(14, 20, 33, 33)),
                 ("bpf", T(4, 3, 43, 50)), ("others", T(5, 4, 42, 49))],
    "top-tier": [("net", T(28, 22, 28, 22)), ("net/filter", T(18, 16, 38, 28)),
                 ("bpf", T(4, 3, 52, 41)), ("others", T(6, 3, 50, 41))],
}

STRATA = {
    "mid-tier": [T(4, 18, 1, 0), T(29, 31, 13, 2)],
    "top-tier": [T(6, 16, 1, 0), T(36, 24, 13, 2)],
}

SINGLE = [
    ("cutoff mid-tier", T(28, 30, 19, 23)),
    ("cutoff top-tier", T(34, 24, 22, 20)),
    ("race balance", T(44, 14, 32, 10)),
]


def main():
    print("# per-subsystem odds ratios (a,b = in-subsystem succ/fail)")
    print("tier\tsubsystem\ta\tb\tc\td\tOR\tp")
    for tier, tables in SUBSYSTEM.items():
        for label, t in tables:
            r = fisher_exact(t)
            print("%s\t%s\t%d\t%d\t%d\t%d\t%.3f\t%.4f"
                  % (tier, label, t.a, t.b, t.c, t.d,
                     r.odds_ratio, r.p_two_sided))

    print("\n# temporal (UAF/DF) vs spatial (OOB) stratified by race status")
    print("tier\tMH_OR\tCMH_stat\tCMH_p")
    for tier, strata in STRATA.items():
        res = cmh_test(strata)
        print("%s\t%.4f\t%.4f\t%.5f"
              % (tier, mantel_haenszel_or(strata),
                 res["statistic"], res["p_two_sided"]))

    print("\n# single tables")
    print("name\ta\tb\tc\td\tOR\tp")
    for name, t in SINGLE:
        r = fisher_exact(t)
        print("%s\t%d\t%d\t%d\t%d\t%.3f\t%.4f"
              % (name, t.a, t.b, t.c, t.d, r.odds_ratio, r.p_two_sided))

    print("\n# expected overall time: 42 solved at 11.74h, 58 filled at 24h")
    print("%.4f h" % expected_overall_time([11.74] * 42, 58, 24.0))

    print("\n# convergence over three attempts (56 first, +7, +1)")
    universe = ["c%03d" % i for i in range(100)]
    wins = [set(universe[:56]),
            set(universe[:50]) | set(universe[56:63]),
            set(universe[40:64])]
    print(convergence_curve([{c: c in w for c in universe} for w in wins]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
