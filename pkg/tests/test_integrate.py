import math
from fractions import Fraction

import numpy as np
import pytest

from dodesym import expr as E
from dodesym.dods import DelayKind, DodsSystem
from dodesym.expr import parse
from dodesym.integrate import (
    DelayViolationError,
    FixedPointError,
    HistoryFunction,
    HistoryUnderrunError,
    IntegrationError,
    Trajectory,
    combine_trajectories,
    interpolate,
    residual_on_trajectory,
    solve,
)
from tests.conftest import bisect_root


def ramp_history():
    return HistoryFunction.from_text("x", (-1.0, 0.0))


def linear_delay_system():
    # ddy = ym with unit constant delay
    return DodsSystem(f=parse("ym"), g=parse("x-1"),
                      delay_kind=DelayKind.CONSTANT)


def stepwise_quadrature_oracle(n_steps: int):
    """Exact solution of ddy = y(x-1), phi = x, dy(0) = 1 by polynomial
    integration interval by interval.  Polynomials in (x - step_start)
    with rational coefficients, so the values are exact.
    """
    # state per interval: polynomial coefficients of y in s = x - k
    polys = [[Fraction(0), Fraction(1)]]  # y = s on [-1, 0] with s = x + 1...
    # work instead with y_k(s) on [k, k+1], s = x - k; history: y(s-1) on
    # interval k uses previous polynomial shifted
    y_prev = [Fraction(-1), Fraction(1)]  # phi(x) = x = (s - 1) on s in [0,1]
    y_val = Fraction(0)
    dy_val = Fraction(1)
    out = []
    for _ in range(n_steps):
        ddy = y_prev  # ddy(s) = y_prev(s)
        dy = _integrate_poly(ddy, dy_val)
        y = _integrate_poly(dy, y_val)
        out.append(y)
        y_val = _eval_poly(y, Fraction(1))
        dy_val = _eval_poly(dy, Fraction(1))
        y_prev = y
    return out


def _integrate_poly(coeffs, constant):
    out = [constant]
    for i, c in enumerate(coeffs):
        out.append(c / (i + 1))
    return out


def _eval_poly(coeffs, s):
    total = Fraction(0)
    for c in reversed(coeffs):
        total = total * s + c
    return total


class TestOracle:
    def test_first_interval_value(self):
        polys = stepwise_quadrature_oracle(2)
        assert _eval_poly(polys[0], Fraction(1)) == Fraction(2, 3)
        assert _eval_poly(polys[1], Fraction(1)) == Fraction(13, 10)

    def test_integrator_matches_oracle(self):
        traj = solve(linear_delay_system(), ramp_history(), 1.0, 2.0, 1e-3)
        y1, _ = traj.interpolate(1.0)
        y2, _ = traj.interpolate(2.0)
        assert abs(y1 - 2.0 / 3.0) < 1e-8
        assert abs(y2 - 1.3) < 1e-8


class TestExponentialReference:
    def test_pure_exponential_solution(self, char_root_0011):
        # y = e^(lam x) solves ddy = ym exactly when lam^2 e^lam = 1
        lam = char_root_0011
        system = linear_delay_system()
        phi = HistoryFunction(parse("exp(L*x)"), (-1.0, 0.0),
                              params={"L": lam})
        traj = solve(system, phi, "from-phi", 3.0, 1e-3)
        worst = max(abs(y - math.exp(lam * x)) / math.exp(lam * x)
                    for x, y in zip(traj.xs, traj.ys))
        assert worst < 1e-9


class TestInterpolate:
    def test_breakpoints_are_exact(self):
        traj = solve(linear_delay_system(), ramp_history(), 1.0, 1.5, 0.01)
        for i in (0, 7, len(traj.xs) - 1):
            y, dy = interpolate(traj, traj.xs[i])
            assert y == traj.ys[i] and dy == traj.dys[i]

    def test_cubic_segments_are_reproduced(self):
        xs = [0.0, 0.5, 1.0]
        cubic = lambda x: x ** 3 - 2 * x ** 2 + 0.5 * x + 1  # noqa: E731
        dcubic = lambda x: 3 * x ** 2 - 4 * x + 0.5  # noqa: E731
        traj = Trajectory(
            xs=xs, ys=[cubic(x) for x in xs], dys=[dcubic(x) for x in xs],
            history=ramp_history(), h=0.5,
        )
        for x in (0.25, 0.4, 0.75):
            y, dy = traj.interpolate(x)
            assert y == pytest.approx(cubic(x), abs=1e-12)
            assert dy == pytest.approx(dcubic(x), abs=1e-12)

    def test_below_history_is_an_error(self):
        traj = solve(linear_delay_system(), ramp_history(), 1.0, 1.5, 0.01)
        with pytest.raises(HistoryUnderrunError):
            traj.interpolate(-1.5)

    def test_beyond_computed_range_is_an_error(self):
        traj = solve(linear_delay_system(), ramp_history(), 1.0, 1.5, 0.01)
        with pytest.raises(IntegrationError):
            traj.interpolate(2.0)

    def test_first_derivative_continuous_at_breakpoints(self):
        traj = solve(linear_delay_system(), ramp_history(), 1.0, 2.0, 0.05)
        for i in range(1, len(traj.xs) - 1):
            x = traj.xs[i]
            left = traj.interpolate(x - 1e-12)[1]
            right = traj.interpolate(x + 1e-12)[1]
            assert abs(left - right) < 1e-9


class TestResidual:
    def test_exact_trajectory_residual_small(self):
        traj = solve(linear_delay_system(), ramp_history(), 1.0, 2.0, 1e-3)
        rep = residual_on_trajectory(linear_delay_system(), traj, n=200)
        assert rep.max_residual_dode < 1e-6
        assert rep.max_residual_delay < 1e-14

    def test_perturbed_trajectory_detected(self):
        traj = solve(linear_delay_system(), ramp_history(), 1.0, 2.0, 1e-3)
        # shift one stretch of the solution; the delayed term then disagrees
        # with the reconstructed second derivative one delay later
        for i, x in enumerate(traj.xs):
            if 0.4 <= x <= 0.6:
                traj.ys[i] += 0.01
        rep = residual_on_trajectory(linear_delay_system(), traj, n=400)
        assert rep.max_residual_dode > 1e-3


class TestConvergence:
    def test_fourth_order_on_smooth_history(self):
        system = linear_delay_system()
        phi = HistoryFunction.from_text("sin(x)", (-1.0, 0.0))

        def value(h):
            return solve(system, phi, "from-phi", 2.0, h).interpolate(2.0)[0]

        ref = (16.0 * value(0.00125) - value(0.0025)) / 15.0
        errors = [abs(value(h) - ref) for h in (0.02, 0.01, 0.005)]
        for coarse, fine in zip(errors, errors[1:]):
            ratio = coarse / fine
            assert 16.0 * 0.7 < ratio < 16.0 * 1.3
            assert abs(math.log2(ratio) - 4.0) < 0.3


class TestLinearity:
    def test_superposition(self):
        system = linear_delay_system()
        phi1 = HistoryFunction.from_text("sin(x)", (-1.0, 0.0))
        phi2 = HistoryFunction.from_text("x + 0.3", (-1.0, 0.0))
        c1, c2 = 0.6, -1.7
        combo_phi = HistoryFunction(
            E.Const(c1) * parse("sin(x)") + E.Const(c2) * parse("x + 0.3"),
            (-1.0, 0.0))
        t1 = solve(system, phi1, "from-phi", 2.5, 2e-3)
        t2 = solve(system, phi2, "from-phi", 2.5, 2e-3)
        tc = solve(system, combo_phi, "from-phi", 2.5, 2e-3)
        combined = combine_trajectories(t1, t2, c1, c2)
        worst = max(abs(a - b) for a, b in zip(tc.ys, combined.ys))
        assert worst < 1e-9


class TestStateDependentDelay:
    def test_contractive_fixed_point(self, char_root_0011):
        lam = char_root_0011
        # delay relation xm = x - c ym / y holds with width one on the
        # exponential solution; the iteration map is a contraction there
        system = DodsSystem(
            f=parse("ym"), g=parse("x - C0*(ym/y)"),
            params={"C0": math.exp(lam)},
            delay_kind=DelayKind.STATE_DEPENDENT,
        )
        phi = HistoryFunction(parse("exp(L*x)"), (-1.2, 0.0),
                              params={"L": lam})
        traj = solve(system, phi, "from-phi", 2.0, 1e-3)
        assert traj.n_fixed_point_fallbacks == 0
        worst = max(abs(y - math.exp(lam * x)) / math.exp(lam * x)
                    for x, y in zip(traj.xs, traj.ys))
        assert worst < 1e-6
        rep = residual_on_trajectory(system, traj, n=150)
        assert rep.max_residual_delay < 1e-10

    def test_bisection_fallback_on_noncontractive_map(self, char_root_0011):
        lam = char_root_0011
        # steep dependence on ym makes the damped iteration diverge for
        # later x; the bracketed defect is monotone, so bisection succeeds
        system = DodsSystem(
            f=parse("ym"), g=parse("x - 1 - 8*(ym - exp(L*(x-1)))"),
            params={"L": lam},
            delay_kind=DelayKind.STATE_DEPENDENT,
        )
        phi = HistoryFunction(parse("exp(L*x)"), (-1.2, 0.0),
                              params={"L": lam})
        traj = solve(system, phi, "from-phi", 2.0, 2e-3)
        assert traj.n_fixed_point_fallbacks > 0
        worst = max(abs(y - math.exp(lam * x)) / math.exp(lam * x)
                    for x, y in zip(traj.xs, traj.ys))
        assert worst < 1e-6

    def test_oracle_root_agrees_with_solver(self, char_root_0011):
        assert abs(char_root_0011 ** 2 * math.exp(char_root_0011) - 1.0) < 1e-13


class TestErrors:
    def test_delay_violation(self):
        system = DodsSystem(f=parse("ym"), g=parse("x+1"))
        with pytest.raises(DelayViolationError):
            solve(system, ramp_history(), 1.0, 2.0, 1e-2)

    def test_history_underrun(self):
        short = HistoryFunction.from_text("x", (-0.25, 0.0))
        with pytest.raises(HistoryUnderrunError):
            solve(linear_delay_system(), short, 1.0, 1.0, 1e-2)

    def test_noncovered_state_delay_fails(self):
        system = DodsSystem(
            f=parse("ym"), g=parse("x - 5 - 0.001*y"),
            delay_kind=DelayKind.STATE_DEPENDENT,
        )
        with pytest.raises((FixedPointError, HistoryUnderrunError,
                            DelayViolationError)):
            solve(system, ramp_history(), 1.0, 1.0, 1e-2)

    def test_from_phi_initial_slope(self):
        traj = solve(linear_delay_system(),
                     HistoryFunction.from_text("sin(x)", (-1.0, 0.0)),
                     "from-phi", 0.5, 1e-2)
        assert traj.dys[0] == pytest.approx(math.cos(0.0), rel=1e-14)

    def test_nonpositive_step_rejected(self):
        with pytest.raises(ValueError):
            solve(linear_delay_system(), ramp_history(), 1.0, 2.0, 0.0)


class TestCsv:
    def test_header_and_precision(self):
        traj = solve(linear_delay_system(), ramp_history(), 1.0, 1.2, 0.05)
        text = traj.to_csv()
        lines = text.strip().splitlines()
        assert lines[0] == "x,y,dy"
        assert len(lines) == len(traj.xs) + 1
        x, y, dy = (float(v) for v in lines[-1].split(","))
        assert x == traj.xs[-1] and y == traj.ys[-1] and dy == traj.dys[-1]


class TestHistoryFunction:
    def test_tabulated_segment(self):
        xs = np.linspace(-1.0, 0.0, 11)
        hist = HistoryFunction.from_samples(xs, np.sin(xs), np.cos(xs))
        y, dy = hist.value(-0.37)
        assert y == pytest.approx(math.sin(-0.37), abs=1e-6)
        assert dy == pytest.approx(math.cos(-0.37), abs=1e-4)

    def test_interval_must_be_ordered(self):
        with pytest.raises(ValueError):
            HistoryFunction(parse("x"), (0.0, 0.0))
