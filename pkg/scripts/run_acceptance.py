"""Run every acceptance suite and print one PASS/FAIL line each.

    python3 scripts/run_acceptance.py [suite ...]
"""
import sys

from seqmargin.harness.experiments import SUITES, run_suite


def main(argv):
    names = argv or ["all"]
    bad = [n for n in names if n != "all" and n not in SUITES]
    if bad:
        print(f"unknown suite(s): {', '.join(bad)}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return 2
    failed = 0
    for name in names:
        for res in run_suite(name):
            print(res.line(), flush=True)
            failed += not res.passed
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
