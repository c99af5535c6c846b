"""Method-of-steps integration with cubic Hermite dense output.

Classical 4th-order one-step integration of (y, dy)' = (dy, f), reading
delayed values from the already-computed part of the trajectory or from
the initial history.  For constant delay the step grid is aligned so the
multiples of the delay are breakpoints, which confines derivative
discontinuities to nodes.  Solution-independent delays evaluate g(x)
directly; state-dependent delays run a damped fixed-point iteration with
a bisection fallback.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .dods import DelayKind, DodsSystem, FREE_COORDS
from .expr import Bindings, DomainError, Expr, bind_params, compile_fn, diff, parse


class IntegrationError(Exception):
    pass


class DelayViolationError(IntegrationError):
    pass


class HistoryUnderrunError(IntegrationError):
    pass


class FixedPointError(IntegrationError):
    pass


class StepRejectionError(IntegrationError):
    pass


@dataclass
class HistoryFunction:
    """Initial data on [lo, hi]: symbolic phi(x) or a tabulated segment."""

    phi: Expr | None
    interval: tuple[float, float]
    params: dict[str, float] = field(default_factory=dict)
    xs: np.ndarray | None = None
    ys: np.ndarray | None = None
    dys: np.ndarray | None = None

    def __post_init__(self):
        lo, hi = self.interval
        if not lo < hi:
            raise ValueError("history interval must have positive length")
        if self.phi is not None:
            bound = bind_params(self.phi, self.params)
            self._y = compile_fn(bound, ("x",))
            self._dy = compile_fn(diff(bound, "x"), ("x",))
        elif self.xs is None:
            raise ValueError("history needs either phi or samples")

    @staticmethod
    def from_text(text: str, interval: tuple[float, float],
                  params: Bindings | None = None) -> "HistoryFunction":
        return HistoryFunction(parse(text), interval, dict(params or {}))

    @staticmethod
    def from_samples(xs, ys, dys) -> "HistoryFunction":
        xs = np.asarray(xs, dtype=float)
        return HistoryFunction(None, (float(xs[0]), float(xs[-1])),
                               xs=xs, ys=np.asarray(ys, dtype=float),
                               dys=np.asarray(dys, dtype=float))

    def value(self, x: float) -> tuple[float, float]:
        lo, hi = self.interval
        if x < lo - 1e-12 or x > hi + 1e-12:
            raise HistoryUnderrunError(
                f"history covers [{lo:g}, {hi:g}], asked for {x:g}"
            )
        if self.phi is not None:
            return self._y(x), self._dy(x)
        i = _segment_index(self.xs, x)
        return _hermite(x, self.xs[i], self.xs[i + 1], self.ys[i],
                        self.ys[i + 1], self.dys[i], self.dys[i + 1])


def _segment_index(xs, x: float) -> int:
    i = bisect.bisect_right(xs, x) - 1
    return min(max(i, 0), len(xs) - 2)


def _hermite(x, x0, x1, y0, y1, d0, d1) -> tuple[float, float]:
    h = x1 - x0
    s = x - x0
    slope = (y1 - y0) / h
    c2 = (3.0 * slope - 2.0 * d0 - d1) / h
    c3 = (d0 + d1 - 2.0 * slope) / (h * h)
    y = y0 + s * (d0 + s * (c2 + s * c3))
    dy = d0 + s * (2.0 * c2 + 3.0 * s * c3)
    return y, dy


def _hermite_dd(x, x0, x1, y0, y1, d0, d1) -> float:
    h = x1 - x0
    s = x - x0
    slope = (y1 - y0) / h
    c2 = (3.0 * slope - 2.0 * d0 - d1) / h
    c3 = (d0 + d1 - 2.0 * slope) / (h * h)
    return 2.0 * c2 + 6.0 * s * c3


@dataclass
class Trajectory:
    """Breakpoint nodes with per-node (y, dy); C1 by construction."""

    xs: list[float]
    ys: list[float]
    dys: list[float]
    history: HistoryFunction
    h: float
    method: str = "rk4"
    warnings: list[str] = field(default_factory=list)
    n_fixed_point_fallbacks: int = 0

    @property
    def x_start(self) -> float:
        return self.xs[0]

    @property
    def x_end(self) -> float:
        return self.xs[-1]

    def interpolate(self, x: float) -> tuple[float, float]:
        """(y, dy) from the Hermite dense output or the history."""
        if x < self.history.interval[0] - 1e-12:
            raise HistoryUnderrunError(
                f"{x:g} is below the covered range"
            )
        if x < self.xs[0]:
            return self.history.value(x)
        if x > self.xs[-1] + 1e-12:
            raise IntegrationError(f"{x:g} is beyond the computed range")
        i = _segment_index(self.xs, x)
        if x == self.xs[i]:
            return self.ys[i], self.dys[i]
        if x == self.xs[i + 1]:
            return self.ys[i + 1], self.dys[i + 1]
        return _hermite(x, self.xs[i], self.xs[i + 1], self.ys[i],
                        self.ys[i + 1], self.dys[i], self.dys[i + 1])

    def second_derivative(self, x: float) -> float:
        if not self.xs[0] <= x <= self.xs[-1]:
            raise IntegrationError("second derivative only on the computed range")
        i = _segment_index(self.xs, x)
        return _hermite_dd(x, self.xs[i], self.xs[i + 1], self.ys[i],
                           self.ys[i + 1], self.dys[i], self.dys[i + 1])

    def to_csv(self) -> str:
        lines = ["x,y,dy"]
        for x, y, dy in zip(self.xs, self.ys, self.dys):
            lines.append(f"{x:.17g},{y:.17g},{dy:.17g}")
        return "\n".join(lines) + "\n"


def interpolate(trajectory: Trajectory, x: float) -> tuple[float, float]:
    return trajectory.interpolate(x)


def combine_trajectories(a: Trajectory, b: Trajectory, ca: float,
                         cb: float) -> Trajectory:
    """Pointwise linear combination; grids must match exactly."""
    if a.xs != b.xs:
        raise ValueError("trajectories live on different grids")
    if a.history.phi is None or b.history.phi is None:
        raise ValueError("combination needs symbolic histories")
    phi = bind_params(a.history.phi, a.history.params) * ca \
        + bind_params(b.history.phi, b.history.params) * cb
    hist = HistoryFunction(phi, a.history.interval)
    return Trajectory(
        xs=list(a.xs),
        ys=[ca * u + cb * v for u, v in zip(a.ys, b.ys)],
        dys=[ca * u + cb * v for u, v in zip(a.dys, b.dys)],
        history=hist, h=a.h, method=a.method,
    )


# ---------------------------------------------------------------------------
# delay resolution


class _DelaySpec:
    kind: DelayKind

    def resolve(self, x, y, dy, lookup, prev_xm, hist_lo, completed_end):
        raise NotImplementedError


class _ConstantDelay(_DelaySpec):
    def __init__(self, tau: float):
        if tau <= 0:
            raise DelayViolationError(f"constant delay must be positive, got {tau:g}")
        self.kind = DelayKind.CONSTANT
        self.tau = tau

    def resolve(self, x, y, dy, lookup, prev_xm, hist_lo, completed_end):
        return x - self.tau, 0


class _IndependentDelay(_DelaySpec):
    def __init__(self, g_of_x):
        self.kind = DelayKind.SOLUTION_INDEPENDENT
        self.g = g_of_x

    def resolve(self, x, y, dy, lookup, prev_xm, hist_lo, completed_end):
        return self.g(x), 0


class _StateDelay(_DelaySpec):
    """xm = g(x, y, ym(xm), dy, dym(xm)) by damped fixed point, then bisection.

    Multiple admissible solutions (several sign changes of xm - g) pick the
    one nearest the previous step's xm and are reported in warnings.
    """

    damping = 0.5
    max_iter = 100

    def __init__(self, g_full, warn):
        self.kind = DelayKind.STATE_DEPENDENT
        self.g = g_full
        self._warn = warn

    def _defect_target(self, x, y, dy, lookup):
        def g_at(s: float) -> float:
            ym, dym = lookup(s)
            return self.g(x, y, ym, dy, dym)

        return g_at

    def resolve(self, x, y, dy, lookup, prev_xm, hist_lo, completed_end):
        g_at = self._defect_target(x, y, dy, lookup)
        hi = min(x - 1e-13 * max(1.0, abs(x)), completed_end)
        lo = hist_lo
        xm = min(max(prev_xm, lo), hi)
        try:
            for _ in range(self.max_iter):
                target = g_at(xm)
                nxt = (1.0 - self.damping) * xm + self.damping * target
                nxt = min(max(nxt, lo), hi)
                if abs(nxt - xm) < 5e-13 * max(1.0, abs(xm)):
                    xm = nxt
                    if abs(g_at(xm) - xm) < 1e-10:
                        return xm, 0
                    break
                xm = nxt
        except (DomainError, HistoryUnderrunError):
            pass
        return self._bisect(g_at, lo, hi, prev_xm), 1

    def _bisect(self, g_at, lo, hi, prev_xm, cells: int = 64):
        def defect(s: float) -> float:
            return s - g_at(s)

        grid = np.linspace(lo, hi, cells + 1)
        values = []
        for s in grid:
            try:
                values.append(defect(float(s)))
            except (DomainError, HistoryUnderrunError):
                values.append(math.nan)
        brackets = []
        for i in range(cells):
            a, b = values[i], values[i + 1]
            if math.isnan(a) or math.isnan(b):
                continue
            if a == 0.0:
                brackets.append((grid[i], grid[i]))
            elif a * b < 0.0:
                brackets.append((grid[i], grid[i + 1]))
        if not brackets:
            raise FixedPointError(
                "state-dependent delay: no root of xm - g located in the"
                " admissible bracket"
            )
        if len(brackets) > 1:
            self._warn(
                f"state-dependent delay has {len(brackets)} candidate roots;"
                " taking the one nearest the previous delayed point"
            )
        mid = min(brackets, key=lambda ab: abs(0.5 * (ab[0] + ab[1]) - prev_xm))
        a, b = float(mid[0]), float(mid[1])
        if a == b:
            return a
        fa = defect(a)
        for _ in range(120):
            m = 0.5 * (a + b)
            fm = defect(m)
            if fm == 0.0 or (b - a) < 1e-15 * max(1.0, abs(m)):
                return m
            if (fa < 0) == (fm < 0):
                a, fa = m, fm
            else:
                b = m
        return 0.5 * (a + b)


def _delay_spec(system: DodsSystem, warn) -> _DelaySpec:
    g = system.bound(system.g)
    if system.delay_kind is DelayKind.CONSTANT:
        g_fn = compile_fn(g, ("x",))
        taus = [x - g_fn(x) for x in (0.0, 0.7, 1.3)]
        if max(taus) - min(taus) > 1e-12:
            raise DelayViolationError("declared constant delay is not constant")
        return _ConstantDelay(taus[0])
    if system.delay_kind is DelayKind.SOLUTION_INDEPENDENT:
        return _IndependentDelay(compile_fn(g, ("x",)))
    return _StateDelay(compile_fn(g, FREE_COORDS), warn)


# ---------------------------------------------------------------------------
# the driver


def solve(
    system: DodsSystem,
    phi: HistoryFunction,
    dy0: float | str,
    x_end: float,
    h: float,
) -> Trajectory:
    """Integrate the system from the end of the history to x_end.

    dy0 may be a number or "from-phi" (left derivative of the history at
    its right end).  The first derivative is continuous across every
    breakpoint by construction; continuity of the second derivative at the
    start is neither required nor expected.
    """
    f_fn = compile_fn(system.bound(system.f),
                      ("x", "y", "xm", "ym", "dy", "dym"))

    def f_eval(x, y, xm, ym, dy, dym):
        return f_fn(x, y, xm, ym, dy, dym)

    return solve_numeric(f_eval, system, phi, dy0, x_end, h)


def solve_numeric(
    f_eval,
    system_or_delay,
    phi: HistoryFunction,
    dy0: float | str,
    x_end: float,
    h: float,
) -> Trajectory:
    """Driver over a numeric right-hand side f(x, y, xm, ym, dy, dym).

    system_or_delay is either a DodsSystem (its delay relation is used) or
    an already-built delay specification tuple ("constant", tau).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    x0 = phi.interval[1]
    if x_end <= x0:
        raise ValueError("x_end must lie beyond the history")

    warnings: list[str] = []
    if isinstance(system_or_delay, DodsSystem):
        spec = _delay_spec(system_or_delay, warnings.append)
    else:
        kind, tau = system_or_delay
        if kind != "constant":
            raise ValueError("only constant prebuilt delay specs are supported")
        spec = _ConstantDelay(tau)

    y0, phi_dy0 = phi.value(x0)
    dy_start = phi_dy0 if dy0 == "from-phi" else float(dy0)

    traj = Trajectory(xs=[x0], ys=[y0], dys=[dy_start], history=phi, h=h,
                      warnings=warnings)
    hist_lo = phi.interval[0]

    def lookup(xq: float) -> tuple[float, float]:
        return traj.interpolate(xq)

    prev_xm = x0 - (spec.tau if isinstance(spec, _ConstantDelay) else
                    min(1.0, x_end - x0))
    fallbacks = 0

    def rhs(xs: float, ys: float, dys: float):
        nonlocal prev_xm, fallbacks
        xm, used_fallback = spec.resolve(xs, ys, dys, lookup, prev_xm,
                                         hist_lo, traj.xs[-1])
        fallbacks += used_fallback
        if xm >= xs:
            raise DelayViolationError(
                f"delay relation puts the delayed point at {xm:g} >= x = {xs:g}"
            )
        prev_xm = xm
        ym, dym = lookup(xm)
        try:
            fv = f_eval(xs, ys, xm, ym, dys, dym)
        except DomainError as exc:
            raise StepRejectionError(
                f"right-hand side not evaluable at x = {xs:g}: {exc}"
            ) from None
        return dys, fv

    # step plan: align to delay multiples for constant delay
    if isinstance(spec, _ConstantDelay):
        tau = spec.tau
        n_sub = max(1, math.ceil(tau / h - 1e-12))
        h_eff = tau / n_sub
        edges = []
        edge = x0
        while edge < x_end - 1e-12:
            edge = min(edge + tau, x_end)
            edges.append(edge)
    else:
        h_eff = h
        edges = [x_end]

    x, y, dy = x0, y0, dy_start
    for edge in edges:
        while x < edge - 1e-12:
            step = min(h_eff, edge - x)
            k1y, k1d = rhs(x, y, dy)
            k2y, k2d = rhs(x + 0.5 * step, y + 0.5 * step * k1y,
                           dy + 0.5 * step * k1d)
            k3y, k3d = rhs(x + 0.5 * step, y + 0.5 * step * k2y,
                           dy + 0.5 * step * k2d)
            k4y, k4d = rhs(x + step, y + step * k3y, dy + step * k3d)
            y = y + step * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
            dy = dy + step * (k1d + 2.0 * k2d + 2.0 * k3d + k4d) / 6.0
            x = x + step
            traj.xs.append(x)
            traj.ys.append(y)
            traj.dys.append(dy)
    traj.n_fixed_point_fallbacks = fallbacks
    return traj


# ---------------------------------------------------------------------------
# a posteriori residual


@dataclass
class ResidualReport:
    max_residual_dode: float
    max_residual_delay: float
    n_samples: int


def residual_on_trajectory(
    system: DodsSystem,
    trajectory: Trajectory,
    n: int = 200,
    seed: int = 42,
) -> ResidualReport:
    """Reconstruct the second derivative from the dense output and compare.

    Reports max |y'' - f| with delayed values interpolated, plus the delay
    defect |xm - g| under the system's own delay resolution.
    """
    rng = np.random.default_rng(seed)
    f_fn = compile_fn(system.bound(system.f),
                      ("x", "y", "xm", "ym", "dy", "dym"))
    warnings: list[str] = []
    spec = _delay_spec(system, warnings.append)
    g_full = compile_fn(system.bound(system.g), FREE_COORDS)
    lo, hi = trajectory.x_start, trajectory.x_end
    hist_lo = trajectory.history.interval[0]
    max_dode = 0.0
    max_delay = 0.0
    prev_xm = lo - 0.1 * (hi - lo)
    for x in sorted(rng.uniform(lo + 1e-9, hi - 1e-9, size=n)):
        x = float(x)
        y, dy = trajectory.interpolate(x)
        xm, _ = spec.resolve(x, y, dy, trajectory.interpolate, prev_xm,
                             hist_lo, hi)
        prev_xm = xm
        ym, dym = trajectory.interpolate(xm)
        ddy = trajectory.second_derivative(x)
        try:
            fv = f_fn(x, y, xm, ym, dy, dym)
            gv = g_full(x, y, ym, dy, dym)
        except DomainError:
            continue
        max_dode = max(max_dode, abs(ddy - fv))
        max_delay = max(max_delay, abs(xm - gv))
    return ResidualReport(max_dode, max_delay, n)
