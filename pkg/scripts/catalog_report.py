"""Check every stored family at full sample count and print a residual table.

Usage: python scripts/catalog_report.py [--n 200] [--seed 42]
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dodesym import catalog  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    started = time.time()
    failures = 0
    print(f"{'entry':12s} {'algebra':24s} {'fields':>6s} {'worst residual':>15s}")
    for entry in catalog.list_entries():
        if not entry.has_system:
            print(f"{entry.id:12s} {entry.algebra_label:24s} {'-':>6s}"
                  f" {'marker only':>15s}")
            continue
        reports = catalog.check_entry(entry.id, n=args.n, seed=args.seed)
        worst = max(max(r.max_residual_dode, r.max_residual_delay)
                    for r in reports)
        ok = all(r.passed for r in reports)
        failures += 0 if ok else 1
        mark = "" if ok else "  <-- FAIL"
        print(f"{entry.id:12s} {entry.algebra_label:24s}"
              f" {entry.n_basis:6d} {worst:15.3e}{mark}")
    print(f"\n{time.time() - started:.1f}s, {failures} failure(s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
