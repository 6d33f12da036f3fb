"""Backward minimizers and the pullback construction of the invariant state.

Finite-horizon minimizers with zero initial value data approximate the
one-sided minimizers; doubling the pullback horizon and measuring the L1
change of the step-0 profile is the convergence certificate.  On top of
the extraction live the structural diagnostics: the single-crossing check,
the a-priori velocity bounds, and the asymptotic slope law.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .forcing import BrownianPath, ForceNorm, ForcingSpec, force_norm
from .geometry import ActionValue, Curve, action, write_curve_csv
from .inviscid import Snapshot, SolveResult, backward_chain, l1_distance, solve

__all__ = [
    "CrossingReport",
    "InvariantProfile",
    "MinimizerResult",
    "VelocityBoundReport",
    "asymptotic_slope",
    "check_no_double_intersection",
    "finite_minimizer",
    "one_sided_profile",
    "two_sided_minimizer",
    "velocity_bound_check",
    "write_minimizer_csv",
]


@dataclass(frozen=True)
class MinimizerResult:
    """Argmin chain of a finite-horizon variational problem.

    action is the discrete c-metric action of the extracted curve;
    dp_value is the solver's own optimal value in the same metric, and
    action_gap is the defect of the two after the interpolation residuals
    collected along the chain are accounted for (rounding-level when the
    extraction is consistent with the value tables).  Two-sided runs also
    carry the mid-time position and velocity, and a degeneracy flag for
    forcing that cannot select a unique minimizer.
    """

    curve: Curve
    terminal_velocity: float
    action: ActionValue
    horizon_steps: int
    dp_value: float
    residual_sum: float
    action_gap: float
    mid_position: float | None = None
    mid_velocity: float | None = None
    degenerate: bool = False


@dataclass(frozen=True)
class InvariantProfile:
    """Pullback approximation of the invariant profile at one step.

    residual is the L1 distance to the run with half the horizon; it must
    shrink (within noise) as horizon_steps doubles.  Export reuses the
    snapshot CSV writer.
    """

    snapshot: Snapshot
    horizon_steps: int
    residual: float


@dataclass(frozen=True)
class CrossingReport:
    crossings: int
    passed: bool
    shift: int
    window: tuple
    near_tangencies: int


@dataclass(frozen=True)
class VelocityBoundReport:
    terminal_velocity: float
    bound: float
    terminal_ok: bool
    tau: float
    short_gate: bool
    max_speed: float
    short_ok: bool | None
    passed: bool
    norm: ForceNorm


def _rest(n_cells: int, c: float) -> np.ndarray:
    return np.full(n_cells, float(c))


def _pl(w: np.ndarray, x: float, dx: float) -> float:
    """Periodic piecewise-linear interpolation of nodal values."""
    n = w.size
    s = x / dx
    i = int(np.floor(s))
    f = s - i
    i %= n
    return float((1.0 - f) * w[i] + f * w[(i + 1) % n])


def _chain_result(res: SolveResult, x: float, step_end: int) -> MinimizerResult:
    """Extract the chain into (x, step_end) and close the value identity.

    With zero initial value data the telescoped identity reads
        action(curve) = W_end(x) + sum(anchors) + steps*c^2*dt/2
                        - sum(residuals),
    where the c^2 term converts the solver's drift-gauged kinetic cost to
    the c-metric used by the action functional.
    """
    pos, diag = backward_chain(res, [x], step_end, res.n0, side="rightmost")
    curve = Curve(res.n0, res.dt, pos[0])
    act = action(curve, res.spec, res.path, res.c)
    steps = step_end - res.n0
    anchors = sum(res.anchor_at(j) for j in range(res.n0 + 1, step_end + 1))
    dp_value = (
        _pl(res.w_at(step_end), x, res.dx)
        + anchors
        + 0.5 * steps * res.c**2 * res.dt
    )
    residual_sum = float(np.sum(diag["residuals"][0]))
    gap = abs(act.value - (dp_value - residual_sum))
    return MinimizerResult(
        curve=curve,
        terminal_velocity=float(curve.speeds()[-1]),
        action=act,
        horizon_steps=steps,
        dp_value=dp_value,
        residual_sum=residual_sum,
        action_gap=gap,
    )


def _require_coverage(path: BrownianPath, n0: int, n1: int) -> None:
    # increments for steps n0 .. n1-1 must exist
    if n1 <= n0:
        raise ConfigError(f"need a nonempty step window, got ({n0}, {n1})")
    if not (path.in_range(n0) and path.in_range(n1 - 1)):
        raise ConfigError(
            f"path covers [{path.t_origin}, {path.t_end}), "
            f"run needs [{n0}, {n1})"
        )


def one_sided_profile(
    spec: ForcingSpec,
    path: BrownianPath,
    t_back: int,
    at_step: int = 0,
    c: float = 0.0,
    n_cells: int = 256,
    search_width: int | None = None,
) -> InvariantProfile:
    """Pullback profile at `at_step` from rest data `t_back` steps earlier.

    Runs the least-action update from u = c at step at_step - t_back and
    returns the arrival snapshot together with the self-convergence
    residual: the L1 distance to the run started at half the horizon.
    """
    if t_back < 2 or t_back % 2:
        raise ConfigError(f"t_back must be an even step count >= 2, got {t_back}")
    _require_coverage(path, at_step - t_back, at_step)
    kw = dict(c=c, search_width=search_width, keep="last")
    full = solve(_rest(n_cells, c), spec, path, at_step - t_back, at_step, **kw)
    half = solve(_rest(n_cells, c), spec, path, at_step - t_back // 2, at_step, **kw)
    snap = full.snapshot(at_step)
    return InvariantProfile(snap, t_back, l1_distance(snap.u, half.u_at(at_step)))


def finite_minimizer(
    x: float,
    step_end: int,
    step_start: int,
    spec: ForcingSpec,
    path: BrownianPath,
    c: float = 0.0,
    n_cells: int = 256,
    search_width: int | None = None,
) -> MinimizerResult:
    """Minimizing chain into the fixed endpoint (x, step_end).

    The left endpoint is free: the run starts from uniform zero value data
    at step_start, so the chain is the finite-horizon approximation of the
    one-sided minimizer through x.
    """
    _require_coverage(path, step_start, step_end)
    res = solve(
        _rest(n_cells, c),
        spec,
        path,
        step_start,
        step_end,
        c=c,
        search_width=search_width,
        keep="all",
    )
    return _chain_result(res, float(x), step_end)


def two_sided_minimizer(
    spec: ForcingSpec,
    path: BrownianPath,
    t_steps: int,
    c: float = 0.0,
    n_cells: int = 256,
    search_width: int | None = None,
) -> MinimizerResult:
    """Free-endpoint minimizer over the window [-t_steps, t_steps].

    Starts from zero value data at -t_steps, takes the argmin of the
    arrival potential U = W + c x over the fundamental window [0, 1) at
    +t_steps, and chains back.  The mid-time fields report the curve at
    step 0; degenerate marks ties in the arrival argmin (zero forcing).
    """
    if t_steps < 1:
        raise ConfigError(f"t_steps must be >= 1, got {t_steps}")
    _require_coverage(path, -t_steps, t_steps)
    res = solve(
        _rest(n_cells, c),
        spec,
        path,
        -t_steps,
        t_steps,
        c=c,
        search_width=search_width,
        keep="all",
    )
    xg = np.arange(n_cells) * res.dx
    big_u = res.w_at(t_steps) + c * xg
    i_min = int(np.argmin(big_u))
    span = float(big_u.max() - big_u.min())
    ties = int(np.count_nonzero(big_u - big_u[i_min] <= 1e-12 * max(1.0, span)))
    out = _chain_result(res, float(xg[i_min]), t_steps)
    pos = out.curve.positions
    return replace(
        out,
        mid_position=float(pos[t_steps]),
        mid_velocity=float((pos[t_steps] - pos[t_steps - 1]) / res.dt),
        degenerate=ties > 1,
    )


def _count_crossings(d: np.ndarray, band: float) -> tuple:
    """Sign changes of d with a dead band; re-entries on one side are
    tangencies, not crossings."""
    state = 0
    crossings = 0
    touches = 0
    dipped = False
    for v in d:
        if abs(v) <= band:
            dipped = True
            continue
        s = 1 if v > 0.0 else -1
        if state != 0 and s != state:
            crossings += 1
        elif state == s and dipped:
            touches += 1
        state = s
        dipped = False
    return crossings, touches


def check_no_double_intersection(
    c1: Curve,
    c2: Curve,
    cell_width: float = 1.0 / 256,
) -> CrossingReport:
    """Single-crossing test for two lifted curves on overlapping windows.

    The integer part of the offset between the lifts is gauge; it is
    removed by the shift (among the two integers nearest the median
    difference, the one giving fewer crossings).  Excursions that return
    to the same side without leaving a one-cell band are tangencies and
    are reported separately, not counted as double crossings.
    """
    a0, a1 = c1.window
    b0, b1 = c2.window
    s0, s1 = max(a0, b0), min(a1, b1)
    if s1 <= s0:
        raise ConfigError(f"curve windows ({a0},{a1}) and ({b0},{b1}) are disjoint")
    d_raw = c1.restrict(s0, s1).positions - c2.restrict(s0, s1).positions
    med = float(np.median(d_raw))
    best = None
    for k in {int(np.floor(med)), int(np.ceil(med))}:
        crossings, touches = _count_crossings(d_raw - k, cell_width)
        if best is None or crossings < best[0]:
            best = (crossings, touches, k)
    crossings, touches, shift = best
    return CrossingReport(
        crossings=crossings,
        passed=crossings <= 1,
        shift=shift,
        window=(s0, s1),
        near_tangencies=touches,
    )


def velocity_bound_check(
    curve: Curve,
    spec: ForcingSpec,
    path: BrownianPath,
) -> VelocityBoundReport:
    """A-priori speed bounds for a minimizer chain; report-only.

    The terminal velocity must obey |v| <= 20 C1 with C1 the windowed
    forcing constant; when the window is short enough that the anchored
    forcing norm is at most 1/40, the whole chain must move slower than
    2/tau.
    """
    n0, n1 = curve.window
    fn = force_norm(spec, path, window=(n0, n1))
    sp = curve.speeds()
    v_term = float(sp[-1])
    bound = 20.0 * fn.c1
    terminal_ok = bool(abs(v_term) <= bound)
    tau = (n1 - n0) * curve.dt
    gate = bool(fn.value <= 1.0 / 40.0)
    max_speed = float(np.max(np.abs(sp)))
    short_ok = bool(max_speed <= 2.0 / tau) if gate else None
    return VelocityBoundReport(
        terminal_velocity=v_term,
        bound=bound,
        terminal_ok=terminal_ok,
        tau=tau,
        short_gate=gate,
        max_speed=max_speed,
        short_ok=short_ok,
        passed=terminal_ok and short_ok is not False,
        norm=fn,
    )


def asymptotic_slope(
    spec: ForcingSpec,
    path: BrownianPath,
    c: float,
    t_back: int,
    n_cells: int = 256,
    search_width: int | None = None,
) -> float:
    """Mean backward slope (xi(0) - xi(-t_back)) / (t_back dt).

    The chain is taken through the step-0 grid node with the smallest
    neighboring velocity jumps, a proxy for a continuity point.  Horizons
    shorter than eight time units are refused: the slope law is an
    asymptotic statement.
    """
    if t_back * path.dt < 8.0 - 1e-9:
        raise ConfigError(
            f"t_back spans {t_back * path.dt:g} time units, need at least 8"
        )
    _require_coverage(path, -t_back, 0)
    res = solve(
        _rest(n_cells, c),
        spec,
        path,
        -t_back,
        0,
        c=c,
        search_width=search_width,
        keep="all",
    )
    u = res.u_at(0)
    osc = np.maximum(np.abs(u - np.roll(u, 1)), np.abs(np.roll(u, -1) - u))
    i_star = int(np.argmin(osc))
    pos, _ = backward_chain(res, [i_star * res.dx], 0, -t_back)
    return float((pos[0, -1] - pos[0, 0]) / (t_back * path.dt))


def write_minimizer_csv(result: MinimizerResult, dest) -> None:
    """Curve table preceded by a two-row action header."""
    own = isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__")
    fh = open(dest, "w", newline="") if own else dest
    try:
        w = csv.writer(fh)
        w.writerow(["action", "mean_velocity_c", "terminal_velocity", "horizon_steps"])
        w.writerow(
            [
                repr(result.action.value),
                repr(result.action.mean_velocity_c),
                repr(result.terminal_velocity),
                result.horizon_steps,
            ]
        )
        write_curve_csv(result.curve, fh)
    finally:
        if own:
            fh.close()
