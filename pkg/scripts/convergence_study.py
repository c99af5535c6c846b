"""Step-size study for the method-of-steps integrator.

Solves y'' = y(x - 1) from a sine history and prints the observed error
at x = 2 against a Richardson-extrapolated reference for a ladder of
step sizes, together with the local convergence order.

Usage: python scripts/convergence_study.py
"""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dodesym.dods import DelayKind, DodsSystem  # noqa: E402
from dodesym.expr import parse  # noqa: E402
from dodesym.integrate import HistoryFunction, solve  # noqa: E402


def main() -> int:
    system = DodsSystem(f=parse("ym"), g=parse("x-1"),
                        delay_kind=DelayKind.CONSTANT)
    phi = HistoryFunction.from_text("sin(x)", (-1.0, 0.0))

    def value(h):
        return solve(system, phi, "from-phi", 2.0, h).interpolate(2.0)[0]

    ref = (16.0 * value(0.000625) - value(0.00125)) / 15.0
    steps = [0.04, 0.02, 0.01, 0.005, 0.0025]
    errors = [abs(value(h) - ref) for h in steps]
    print(f"{'h':>10s} {'error at x=2':>15s} {'order':>8s}")
    previous = None
    for h, err in zip(steps, errors):
        order = "" if previous is None else f"{math.log2(previous / err):8.3f}"
        print(f"{h:10.5f} {err:15.3e} {order:>8s}")
        previous = err
    return 0


if __name__ == "__main__":
    sys.exit(main())
