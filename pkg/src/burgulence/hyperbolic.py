"""Hyperbolicity of the minimizer flow and the action parametrization.

The two-sided minimizer attracts every backward characteristic, and the
tangent cocycle along it has unit determinant, so a positive exponent
forces an equal negative one.  This module estimates that exponent with a
renormalized power iteration along the prescribed minimizer orbit, pushes
the same iteration to the unstable direction at time zero, and audits the
geometry the exponent implies: the invariant profile is a graph over the
unstable direction away from shocks; every grid position is reached by
one or two extreme backward characteristics whose relative actions agree
at shock cuts; and the lifted covered intervals wind once around the
circle for the main shock and not at all for the others.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CheckFailure, ConfigError
from .forcing import BrownianPath, ForcingSpec
from .inviscid import SolveResult, backward_chain, solve
from .minimizers import two_sided_minimizer
from .shocks import covered_intervals, detect_shocks, main_shock

__all__ = [
    "ActionParametrization",
    "LyapunovReport",
    "ManifoldSample",
    "StructureReport",
    "TangencyReport",
    "action_parametrization",
    "graph_tangency_check",
    "lyapunov",
    "shock_structure_check",
    "unstable_direction",
    "write_lyapunov_json",
    "write_manifold_csv",
]


@dataclass(frozen=True)
class LyapunovReport:
    """Forward and backward exponents along the two-sided minimizer.

    direction_at_0 is the renormalized tangent (position, velocity
    components) when the forward pass reaches step 0, sign-fixed to a
    nonnegative position component.  The confidence interval is a
    time-block bootstrap over the per-step log growth of the forward
    pass.  Unit determinant makes lambda_forward + lambda_backward vanish
    up to alignment defects of order 1/window.
    """

    lambda_forward: float
    lambda_backward: float
    window_steps: int
    direction_at_0: tuple
    ci_lower: float
    ci_upper: float
    n_blocks: int


@dataclass(frozen=True)
class ManifoldSample:
    """One sample of the invariant graph over the universal cover.

    s is the rank in the circular walk that starts at the two-sided
    minimizer; x is the lifted position (increasing from the minimizer,
    span one); u the branch velocity; a_rel the action of the extreme
    backward characteristic through the point relative to the minimizer.
    A shock cut contributes two samples at one position, left branch
    first.
    """

    s: int
    x: float
    u: float
    a_rel: float
    is_shock_cut: bool


@dataclass(frozen=True)
class TangencyReport:
    """Secant slope of the invariant profile against the unstable direction.

    conclusive is False when no admissible window exists (shock within two
    cells of the minimizer, degenerate arrival, or a vertical direction);
    reason then says why.  window_cells is the half-width actually used.
    """

    conclusive: bool
    matched: bool | None
    slope_graph: float | None
    slope_direction: float | None
    window_cells: int
    y_position: float | None
    reason: str | None
    profile_cells: int = 0


@dataclass(frozen=True)
class ActionParametrization:
    """Sampled action parametrization of the invariant graph at one step.

    samples walk the circle once starting at the two-sided minimizer and
    carry both branches at every shock cut; a_bar holds the per-node
    minimum relative action in grid order (node i at position i/n);
    cut_gaps pairs with shocks and holds, for each cut, the difference of
    the two branch actions after each is corrected by its chain's
    interpolation residual sum (the raw branch sums stored on the cut
    samples differ by those residuals); scale normalizes equal-action
    tolerances.
    """

    samples: tuple
    y_position: float
    a_bar: np.ndarray
    shocks: tuple
    cut_gaps: tuple
    scale: float
    horizon_steps: int
    threshold: float

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


@dataclass(frozen=True)
class StructureReport:
    """Audit of the cut and winding structure of the invariant graph.

    Clauses: the two branch actions agree at every shock cut; the lifted
    covered interval of every non-main shock has zero winding; the main
    shock winds exactly once; the shock count is stable under grid
    refinement.  vacuous marks shock-free profiles (clauses hold
    trivially); degenerate marks forcing with no stable majority holder,
    which fails the winding-one clause by construction.
    """

    n_shocks: int
    n_shocks_refined: int
    count_stable: bool
    cut_gaps: tuple
    equal_action_ok: bool
    windings: tuple
    main_index: int | None
    main_winding_ok: bool
    others_winding_ok: bool
    degenerate: bool
    vacuous: bool
    passed: bool
    scale: float


# ------------------------------------------------------------------ tangent

def _steps(value: float, dt: float, name: str) -> int:
    n = int(round(value / dt))
    if n < 1:
        raise ConfigError(f"{name} must cover at least one step, got {value} at dt={dt}")
    return n


def _require_coverage(path: BrownianPath, n0: int, n1: int) -> None:
    if n0 < path.t_origin or n1 > path.t_end:
        raise ConfigError(
            f"path covers [{path.t_origin}, {path.t_end}), need [{n0}, {n1}]"
        )


def _shear_series(spec: ForcingSpec, path: BrownianPath, positions, n0: int) -> np.ndarray:
    """Velocity-kick slope sum at the pre-step orbit positions.

    positions[j] is the orbit at step n0 + j; entry j of the result is the
    only orbit dependence of the tangent map for step n0 + j.
    """
    x = np.asarray(positions, dtype=np.float64)[:-1]
    db = path.window(n0, n0 + x.size)
    return np.einsum("kn,kn->n", spec.force_deriv_table(x), db)


def _push_forward(b: np.ndarray, dt: float, w) -> tuple:
    """Renormalized tangent push through the maps (dx, dv) ->
    (dx + dt (dv + b dx), dv + b dx); returns per-step log growth and the
    final unit vector."""
    g = np.empty(b.size)
    w0, w1 = float(w[0]), float(w[1])
    for i in range(b.size):
        v0 = (1.0 + b[i] * dt) * w0 + dt * w1
        v1 = b[i] * w0 + w1
        r = math.hypot(v0, v1)
        g[i] = math.log(r)
        w0, w1 = v0 / r, v1 / r
    return g, np.array([w0, w1])


def _push_backward(b: np.ndarray, dt: float, w) -> tuple:
    """Renormalized push through the exact inverse maps, late steps first."""
    g = np.empty(b.size)
    w0, w1 = float(w[0]), float(w[1])
    for i in range(b.size - 1, -1, -1):
        v0 = w0 - dt * w1
        v1 = -b[i] * w0 + (1.0 + b[i] * dt) * w1
        r = math.hypot(v0, v1)
        g[i] = math.log(r)
        w0, w1 = v0 / r, v1 / r
    return g, np.array([w0, w1])


def _canonical_sign(w: np.ndarray) -> np.ndarray:
    if w[0] < 0.0 or (w[0] == 0.0 and w[1] < 0.0):
        return -w
    return w


_GENERIC = (1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0))


def lyapunov(
    spec: ForcingSpec,
    path: BrownianPath,
    T: float,
    c: float = 0.0,
    n_cells: int = 256,
    search_width: int | None = None,
    block_units: float = 0.5,
    n_boot: int = 400,
    confidence: float = 0.95,
) -> LyapunovReport:
    """Exponents per unit time over the window [-T, T] (T in time units).

    The orbit is the two-sided minimizer; the tangent iteration is
    renormalized every step.  The backward exponent is minus the growth
    rate of the inverse cocycle traversed from +T down to -T, so
    forward + backward ~ 0 certifies the unit determinant with an
    alignment defect O(1/T).  The bootstrap resamples block means of the
    forward per-step log growth with a fixed generator, so the interval
    is reproducible.
    """
    if confidence <= 0.0 or confidence >= 1.0:
        raise ConfigError(f"confidence must lie in (0, 1), got {confidence}")
    dt = path.dt
    t_steps = _steps(T, dt, "T")
    mzr = two_sided_minimizer(
        spec, path, t_steps, c=c, n_cells=n_cells, search_width=search_width
    )
    b = _shear_series(spec, path, mzr.curve.positions, -t_steps)
    g_past, w_mid = _push_forward(b[:t_steps], dt, np.array(_GENERIC))
    g_future, _ = _push_forward(b[t_steps:], dt, w_mid)
    g = np.concatenate([g_past, g_future])
    lam_f = float(np.sum(g)) / (g.size * dt)
    g_rev, _ = _push_backward(b, dt, np.array(_GENERIC))
    lam_b = -float(np.sum(g_rev)) / (g_rev.size * dt)

    blk = max(1, int(round(block_units / dt)))
    n_blocks = g.size // blk
    if n_blocks < 4:
        raise ConfigError(
            f"window gives {n_blocks} bootstrap blocks, need >= 4; "
            "increase T or shrink block_units"
        )
    means = g[: n_blocks * blk].reshape(n_blocks, blk).mean(axis=1)
    rng = np.random.default_rng(0)
    draws = means[rng.integers(0, n_blocks, size=(n_boot, n_blocks))].mean(axis=1) / dt
    tail = 0.5 * (1.0 - confidence)
    lo, hi = np.quantile(draws, [tail, 1.0 - tail])
    w_mid = _canonical_sign(w_mid)
    return LyapunovReport(
        lam_f,
        lam_b,
        2 * t_steps,
        (float(w_mid[0]), float(w_mid[1])),
        float(lo),
        float(hi),
        n_blocks,
    )


def _direction_from_orbit(spec, path, past_positions, n0: int) -> np.ndarray:
    b = _shear_series(spec, path, past_positions, n0)
    _, w = _push_forward(b, path.dt, np.array(_GENERIC))
    return _canonical_sign(w)


def unstable_direction(
    spec: ForcingSpec,
    path: BrownianPath,
    warmup_T: float,
    c: float = 0.0,
    n_cells: int = 256,
    search_width: int | None = None,
) -> np.ndarray:
    """Unit tangent (position, velocity) of the expanding direction at step 0.

    Power iteration along the past half of the two-sided minimizer orbit,
    sign-fixed to a nonnegative position component.  Stable under doubling
    of warmup_T once the warmup dominates the alignment time 1/lambda.
    """
    dt = path.dt
    t_steps = _steps(warmup_T, dt, "warmup_T")
    mzr = two_sided_minimizer(
        spec, path, t_steps, c=c, n_cells=n_cells, search_width=search_width
    )
    return _direction_from_orbit(
        spec, path, mzr.curve.positions[: t_steps + 1], -t_steps
    )


# ----------------------------------------------------------------- tangency

def _circle_dist(a: float, b: float) -> float:
    return abs((a - b + 0.5) % 1.0 - 0.5)


def graph_tangency_check(
    spec: ForcingSpec,
    path: BrownianPath,
    T: float = 8.0,
    c: float = 0.0,
    n_cells: int = 256,
    threshold: float | None = None,
    search_width: int | None = None,
    secant_span: float = 0.02,
    slope_tol: float = 0.1,
    profile_refine: int = 4,
) -> TangencyReport:
    """Secant slope of the profile at the minimizer vs the unstable direction.

    The direction comes from the caller grid; the graph is sampled from a
    profile solved profile_refine times finer, because the cell profile
    carries percent-level slope error at stock resolution while the
    cocycle direction is grid-stable.  The secant spans the largest
    shock-free symmetric window around the minimizer position, capped at
    the physical half-width secant_span so refining the grid does not
    shrink the span; fewer than two clean cells per side, a degenerate
    arrival, or a vertical direction makes the check inconclusive rather
    than failed.
    """
    if profile_refine < 1:
        raise ConfigError(f"profile_refine must be >= 1, got {profile_refine}")
    dt = path.dt
    t_steps = _steps(T, dt, "T")
    mzr = two_sided_minimizer(
        spec, path, t_steps, c=c, n_cells=n_cells, search_width=search_width
    )
    if mzr.degenerate:
        return TangencyReport(
            False, None, None, None, 0, None,
            "arrival minimum is degenerate; no unique minimizer",
        )
    n_fine = profile_refine * n_cells
    res = solve(
        np.full(n_fine, float(c)), spec, path, -t_steps, 0,
        c=c, search_width=search_width, keep="last",
    )
    snap = res.snapshot(0)
    dets = detect_shocks(snap, threshold)
    y = mzr.mid_position % 1.0
    dx = 1.0 / n_cells
    dist = min((_circle_dist(y, s.position) for s in dets), default=0.5)
    alpha = min(int(round(secant_span / dx)), int(dist / dx) - 2)
    if alpha < 2:
        return TangencyReport(
            False, None, None, None, max(alpha, 0), y,
            "shock within two cells of the minimizer", n_fine,
        )
    w = _direction_from_orbit(
        spec, path, mzr.curve.positions[: t_steps + 1], -t_steps
    )
    if abs(w[0]) < 1e-6:
        return TangencyReport(
            False, None, None, None, alpha, y,
            "unstable direction is vertical", n_fine,
        )
    # secant symmetric about y itself, not about the nearest cell center:
    # the half-cell offset times u'' would otherwise dominate the error
    centers = (np.arange(n_fine) + 0.5) / n_fine
    grid = np.concatenate([centers - 1.0, centers, centers + 1.0])
    vals = np.tile(snap.u, 3)
    hi, lo = np.interp([y + alpha * dx, y - alpha * dx], grid, vals)
    slope_graph = float((hi - lo) / (2 * alpha * dx))
    slope_dir = float(w[1] / w[0])
    return TangencyReport(
        True, abs(slope_graph - slope_dir) <= slope_tol,
        slope_graph, slope_dir, alpha, y, None, n_fine,
    )


# ----------------------------------------------------- action parametrization

def _batched_action(positions: np.ndarray, spec, path, n0: int, c: float) -> np.ndarray:
    """Discrete c-metric action of many chains sharing one window.

    Row j of positions is one chain over steps n0 .. n0 + steps.  Matches
    the curve action: drift-relative kinetic cost plus the mode potentials
    at segment midpoints against the increments.  Chunked so the midpoint
    tables never hold more than a few million entries.
    """
    p = np.asarray(positions, dtype=np.float64)
    steps = p.shape[1] - 1
    dt = path.dt
    db = path.window(n0, n0 + steps)
    out = 0.5 * dt * np.sum((np.diff(p, axis=1) / dt - c) ** 2, axis=1)
    mids = 0.5 * (p[:, :-1] + p[:, 1:])
    chunk = max(1, int(4.0e6) // max(steps, 1))
    for a in range(0, p.shape[0], chunk):
        pot = spec.potential_table(mids[a : a + chunk])
        out[a : a + chunk] += np.einsum("kmn,kn->m", pot, db)
    return out


def _tie_branches(res: SolveResult, shock, dx: float, tb: int) -> tuple:
    """The two extreme chains through the variational tie point of a cut.

    A generic launch position has a unique argmin chain, so the two
    branches of a shock are found by bisecting the basin boundary between
    its clean flank cell centers: probes are classified by which flank
    chain they land nearest at the depth where the flanks are farthest
    apart, and the final bracket endpoints (1e-13 apart) are rechained at
    full depth on their own sides.  Every breakpoint of the chain map is
    an exact value-function tie, so the two returned curves are distinct
    backward minimizers into the same point.

    Returns (left chain, right chain, left residual sum, right residual
    sum).  Raw Lagrangian sums of distinct chains differ by their
    accumulated interpolation residuals; adding each chain's residual sum
    telescopes its action onto the value table, where the two branches
    must agree.
    """
    x_lo = shock.position - ((shock.position - (shock.cell_left + 0.5) * dx) % 1.0)
    x_hi = shock.position + (((shock.cell_right + 0.5) * dx - shock.position) % 1.0)
    cl, _ = backward_chain(res, np.array([x_lo]), 0, -tb, side="leftmost")
    cr, _ = backward_chain(res, np.array([x_hi]), 0, -tb, side="rightmost")
    sep = np.abs(cl[0, :-1] - cr[0, :-1])
    m_ind = int(np.argmax(sep))
    ref_l, ref_r = cl[0, m_ind], cr[0, m_ind]
    n_stop = -tb + m_ind
    lo, hi = x_lo, x_hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        probe, _ = backward_chain(res, np.array([mid]), 0, n_stop)
        if abs(probe[0, 0] - ref_l) <= abs(probe[0, 0] - ref_r):
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    bl, diag_l = backward_chain(res, np.array([lo]), 0, -tb, side="leftmost")
    br, diag_r = backward_chain(res, np.array([hi]), 0, -tb, side="rightmost")
    return bl, br, float(np.sum(diag_l["residuals"])), float(np.sum(diag_r["residuals"]))


def _pullback(spec, path, tb: int, c: float, n_cells: int, search_width, keep="all"):
    _require_coverage(path, -tb, 0)
    return solve(
        np.full(n_cells, float(c)), spec, path, -tb, 0,
        c=c, search_width=search_width, keep=keep,
    )


def _parametrize(res: SolveResult, spec, path, dets) -> ActionParametrization:
    tb = -res.n0
    c = res.c
    n_cells = res.n_cells
    dx = res.dx
    xg = np.arange(n_cells) * dx
    i_star = int(np.argmin(res.w_at(0) + c * xg))
    y0 = float(xg[i_star])

    pos_l, _ = backward_chain(res, xg, 0, -tb, side="leftmost")
    pos_r, _ = backward_chain(res, xg, 0, -tb, side="rightmost")
    act_l = _batched_action(pos_l, spec, path, -tb, c)
    act_r = _batched_action(pos_r, spec, path, -tb, c)
    a_ref = min(act_l[i_star], act_r[i_star])
    a_bar = np.minimum(act_l, act_r) - a_ref

    # node velocity = centered slope of the gauge, the PL-consistent value;
    # cut samples carry the detector's exact flank velocities instead
    u = res.u_at(0)
    u_node = 0.5 * (u + np.roll(u, 1))
    events = [
        (i * dx, 0, float(u_node[(i_star + i) % n_cells]),
         float(a_bar[(i_star + i) % n_cells]), False)
        for i in range(n_cells)
    ]
    cut_gaps = []
    if len(dets):
        branches = [_tie_branches(res, s, dx, tb) for s in dets]
        acts = _batched_action(
            np.vstack([np.vstack((b[0], b[1])) for b in branches]), spec, path, -tb, c
        )
        al = acts[0::2] - a_ref
        ar = acts[1::2] - a_ref
        res_sum_l = np.array([b[2] for b in branches])
        res_sum_r = np.array([b[3] for b in branches])
        for j, s in enumerate(dets):
            # raw Lagrangian sums of two distinct chains differ by their
            # accumulated interpolation residuals (1e-3ish at stock
            # resolution); the residual-corrected sums both telescope to the
            # value table at the tie point, and that is the equality a cut
            # has to satisfy
            cut_gaps.append(
                float(abs((al[j] + res_sum_l[j]) - (ar[j] + res_sum_r[j])))
            )
            lift = (s.position - y0) % 1.0
            events.append((lift, 1, s.u_left, float(al[j]), True))
            events.append((lift, 2, s.u_right, float(ar[j]), True))
    events.sort(key=lambda e: (e[0], e[1]))
    samples = tuple(
        ManifoldSample(k, y0 + e[0], e[2], e[3], e[4]) for k, e in enumerate(events)
    )
    return ActionParametrization(
        samples,
        y0,
        a_bar,
        tuple(dets.shocks),
        tuple(cut_gaps),
        max(1.0, float(np.max(a_bar))),
        tb,
        dets.threshold,
    )


def action_parametrization(
    spec: ForcingSpec,
    path: BrownianPath,
    T_back: float = 8.0,
    c: float = 0.0,
    n_cells: int = 256,
    threshold: float | None = None,
    search_width: int | None = None,
) -> ActionParametrization:
    """Relative action of every extreme backward characteristic at step 0.

    Pulls the profile back from rest over T_back time units, launches the
    leftmost and rightmost chains from every grid node and from both
    flanks of every detected shock, and reports their discrete actions
    relative to the two-sided minimizer (the arrival argmin).  Backward
    merging of the chains makes every relative value stable under horizon
    doubling long before the individual actions converge.
    """
    tb = _steps(T_back, path.dt, "T_back")
    res = _pullback(spec, path, tb, c, n_cells, search_width)
    dets = detect_shocks(res.snapshot(0), threshold)
    return _parametrize(res, spec, path, dets)


def shock_structure_check(
    spec: ForcingSpec,
    path: BrownianPath,
    T_back: float = 8.0,
    c: float = 0.0,
    n_cells: int = 256,
    threshold: float | None = None,
    search_width: int | None = None,
    refine_factor: int = 2,
) -> StructureReport:
    """Equal-action cuts, winding numbers, and refinement-stable count.

    A shock-free profile returns an empty pass.  A degenerate main shock
    (no stable majority holder) is reported, fails the winding-one clause,
    and fails the audit; a horizon too short to certify any main shock
    propagates as an error instead.
    """
    if refine_factor < 2:
        raise ConfigError(f"refine_factor must be >= 2, got {refine_factor}")
    tb = _steps(T_back, path.dt, "T_back")
    res = _pullback(spec, path, tb, c, n_cells, search_width)
    dets = detect_shocks(res.snapshot(0), threshold)
    if not len(dets):
        return StructureReport(
            0, 0, True, (), True, (), None, True, True, False, True, True, 1.0
        )
    param = _parametrize(res, spec, path, dets)
    equal_ok = all(gap <= 1e-3 * param.scale for gap in param.cut_gaps)
    ivs = covered_intervals(res, dets.shocks, -tb)
    windings = tuple(float(iv.right - iv.left) for iv in ivs)

    degenerate = False
    main_index = None
    try:
        rep = main_shock(spec, path, 0, tb, c, n_cells, threshold, search_width)
        main_index = int(
            min(
                range(len(dets)),
                key=lambda k: _circle_dist(dets.shocks[k].position, rep.record.position),
            )
        )
    except CheckFailure as err:
        if "degenerate" not in str(err):
            raise
        degenerate = True

    dx = 1.0 / n_cells
    if main_index is None:
        main_ok = False
        others = windings
    else:
        main_ok = abs(windings[main_index] - 1.0) <= dx
        others = tuple(w for j, w in enumerate(windings) if j != main_index)
    others_ok = all(abs(w) <= dx for w in others)

    fine = _pullback(spec, path, tb, c, refine_factor * n_cells, search_width, keep="last")
    n_fine = len(detect_shocks(fine.snapshot(0), threshold))
    count_stable = abs(n_fine - len(dets)) <= 1

    return StructureReport(
        len(dets),
        n_fine,
        count_stable,
        param.cut_gaps,
        equal_ok,
        windings,
        main_index,
        main_ok,
        others_ok,
        degenerate,
        False,
        equal_ok and main_ok and others_ok and count_stable and not degenerate,
        param.scale,
    )


# ------------------------------------------------------------------ writers

def write_manifold_csv(param: ActionParametrization, dest) -> None:
    """Rows (s_index, x_lifted, u, A_rel, is_shock_cut), full float repr."""
    writer = csv.writer(dest)
    writer.writerow(["s_index", "x_lifted", "u", "A_rel", "is_shock_cut"])
    for s in param.samples:
        writer.writerow([s.s, repr(s.x), repr(s.u), repr(s.a_rel), int(s.is_shock_cut)])


def write_lyapunov_json(report: LyapunovReport, dest) -> None:
    payload = {
        "lambda_forward": report.lambda_forward,
        "lambda_backward": report.lambda_backward,
        "window_steps": report.window_steps,
        "direction_at_0": list(report.direction_at_0),
        "ci_lower": report.ci_lower,
        "ci_upper": report.ci_upper,
        "n_blocks": report.n_blocks,
    }
    json.dump(payload, dest, indent=2, sort_keys=True)
    dest.write("\n")
