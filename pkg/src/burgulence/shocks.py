"""Shock detection, covered intervals, and the merge genealogy.

A shock is a run of cell interfaces where the velocity drops by more than
a threshold; the run is one smeared discontinuity, so detection coalesces
it and places the shock on the smear footprint by the equal-area rule.
The covered interval of a shock is the span, at an earlier base step,
between the backward characteristics launched from the cells flanking the
smear: everything in between has already been absorbed.  Nearest-position
matching across consecutive snapshots turns per-step detections into a
merge genealogy, and on top of these live the main-shock extraction, the
pairwise merge probability, and the absorption-rate fit.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from statistics import NormalDist

import numpy as np

from .errors import CheckFailure, ConfigError, SolverError
from .forcing import BrownianPath, ForcingSpec, sample_path
from .inviscid import Snapshot, SolveResult, backward_chain, solve

__all__ = [
    "AbsorptionFit",
    "CoveredInterval",
    "Genealogy",
    "MainShockReport",
    "MergeEstimate",
    "MergeEvent",
    "ShockRecord",
    "ShockSet",
    "ShockTrack",
    "absorption_rate_fit",
    "covered_interval",
    "covered_intervals",
    "default_threshold",
    "detect_shocks",
    "main_shock",
    "merge_probability",
    "track_genealogy",
    "write_genealogy_json",
    "write_stats_csv",
]


@dataclass(frozen=True)
class ShockRecord:
    """One detected discontinuity.

    cell is the steepest flagged interface in the coalesced run;
    cell_left / cell_right are the clean cells carrying u_left / u_right,
    i.e. the footprint the equal-area position was computed on.  Detection
    numbers records by position within one snapshot; track_genealogy
    re-stamps id, parents, and birth_step with track-level values.
    """

    id: int
    step: int
    cell: int
    position: float
    u_left: float
    u_right: float
    strength: float
    parents: frozenset
    birth_step: int
    cell_left: int
    cell_right: int

    def __post_init__(self):
        if not self.u_right < self.u_left:
            raise ConfigError(
                f"entropy violated: u_left={self.u_left} <= u_right={self.u_right}"
            )
        if self.strength <= 0 or abs(self.strength - (self.u_left - self.u_right)) > 1e-9 * max(
            1.0, abs(self.strength)
        ):
            raise ConfigError("strength must equal u_left - u_right and be positive")
        if not 0.0 <= self.position < 1.0:
            raise ConfigError(f"position must lie in [0, 1), got {self.position}")


@dataclass(frozen=True)
class ShockSet:
    """All shocks of one snapshot, ordered by position."""

    step: int
    n_cells: int
    threshold: float
    shocks: tuple

    def __len__(self):
        return len(self.shocks)

    def __iter__(self):
        return iter(self.shocks)


@dataclass(frozen=True)
class CoveredInterval:
    """Absorbed span of a shock at an earlier base step.

    left/right are lifted endpoints (right >= left, right - left <= 1
    up to rounding); length is the clipped width, so 1.0 means the shock
    has eaten the whole circle by that depth.
    """

    shock_id: int
    base_step: int
    left: float
    right: float
    length: float


@dataclass(frozen=True)
class MergeEvent:
    """Two or more tracks landing in one detected shock."""

    step: int
    parents: tuple
    child: int


@dataclass(frozen=True)
class ShockTrack:
    """Life of one shock: records share the track id and birth step.

    fate is "alive" (persists to the last snapshot), "merged"
    (merged_into holds the child track id), or "vanished" (no match;
    expected only once the strength has decayed to the threshold scale).
    """

    id: int
    birth_step: int
    end_step: int
    records: tuple
    fate: str
    merged_into: int | None = None

    @property
    def positions(self):
        return np.array([r.position for r in self.records])


@dataclass(frozen=True)
class Genealogy:
    """Merge tree over a snapshot sequence."""

    threshold: float
    dt: float | None
    step_first: int
    step_last: int
    tracks: tuple
    events: tuple
    warnings: tuple

    def track(self, track_id: int) -> ShockTrack:
        for tr in self.tracks:
            if tr.id == track_id:
                return tr
        raise ConfigError(f"no track with id {track_id}")

    def alive(self) -> tuple:
        return tuple(tr for tr in self.tracks if tr.fate == "alive")


@dataclass(frozen=True)
class MainShockReport:
    """The unique dominating shock and its certificate.

    lengths holds the covered-interval lengths of every step-`at_step`
    shock at the deepest base step, sorted decreasing; deep_min is the
    qualifying shock's minimum covered length over the deepest quarter
    of the horizon, the stability certificate that separates a true main
    shock from a saddle-point fluctuation that briefly covers the circle.
    """

    record: ShockRecord
    interval: CoveredInterval
    lengths: tuple
    deep_min: float
    horizon_steps: int


@dataclass(frozen=True)
class MergeEstimate:
    """Wilson interval for the pairwise merge probability."""

    p_hat: float
    lower: float
    upper: float
    n_seeds: int
    successes: int
    tau_steps: int
    confidence: float


@dataclass(frozen=True)
class AbsorptionFit:
    """Exponential fit 1 - ell(tau) ~ prefactor * exp(-rate * tau).

    tau is the pullback depth of the base step in time units; the fit runs
    on the ensemble median of the main-shock covered length, restricted to
    the window where the gap 1 - ell is resolved (neither saturated at
    rounding level nor still in the early growth phase).
    """

    rate: float
    prefactor: float
    r_squared: float
    n_seeds: int
    skipped: int
    horizon_steps: int
    taus: np.ndarray
    median_length: np.ndarray


def default_threshold(u, n_cells: int) -> float:
    """Jump threshold 5 dx, scaled up when the profile exceeds unit size."""
    return 5.0 / n_cells * max(1.0, float(np.max(np.abs(u))))


def detect_shocks(snap: Snapshot, threshold: float | None = None) -> ShockSet:
    """Flag interfaces with drop > threshold and coalesce adjacent runs.

    Each run of flagged interfaces becomes one record: cell is the
    steepest interface, u_left / u_right the clean flank values, and the
    position is the equal-area point of the sharp jump that carries the
    same mass as the smear over its footprint.
    """
    u = snap.u
    n = snap.n_cells
    dx = 1.0 / n
    if threshold is None:
        threshold = default_threshold(u, n)
    if threshold <= 0 or not math.isfinite(threshold):
        raise ConfigError(f"threshold must be positive, got {threshold}")
    drops = u - np.roll(u, -1)
    flag = drops > threshold
    if not flag.any():
        return ShockSet(snap.step, n, float(threshold), ())
    if flag.all():
        raise SolverError("every interface exceeds the threshold; no clean flank cell")

    # Rotate so index 0 is unflagged; runs then never wrap.
    k0 = int(np.flatnonzero(~flag)[0])
    rot = np.roll(flag, -k0).astype(np.int8)
    d = np.diff(rot)
    starts = np.flatnonzero(d == 1) + 1
    ends = list(np.flatnonzero(d == -1))
    if rot[-1]:
        ends.append(n - 1)

    raw = []
    for s, e in zip(starts, ends):
        i0 = (s + k0) % n
        run = e - s + 1
        cells = (i0 + np.arange(run + 1)) % n
        u_left = float(u[cells[0]])
        u_right = float(u[cells[-1]])
        steerable = cells[:-1]
        steepest = int(steerable[np.argmax(drops[steerable])])
        span = (run + 1) * dx
        a = i0 * dx
        mass = float(np.sum(u[cells])) * dx
        x_s = a + (mass - u_right * span) / (u_left - u_right)
        x_s = min(max(x_s, a), a + span)
        raw.append(
            dict(
                cell=steepest,
                position=x_s % 1.0,
                u_left=u_left,
                u_right=u_right,
                cell_left=int(cells[0]),
                cell_right=int(cells[-1]),
            )
        )
    raw.sort(key=lambda r: r["position"])
    shocks = tuple(
        ShockRecord(
            id=k,
            step=snap.step,
            strength=r["u_left"] - r["u_right"],
            parents=frozenset(),
            birth_step=snap.step,
            **r,
        )
        for k, r in enumerate(raw)
    )
    return ShockSet(snap.step, n, float(threshold), shocks)


def _flank_points(shocks, n_cells: int):
    """Lifted launch points just outside each smear: clean cell centers."""
    dx = 1.0 / n_cells
    xm = np.array([(s.cell_left + 0.5) * dx for s in shocks])
    span = np.array([(s.cell_right - s.cell_left) % n_cells for s in shocks])
    return xm, xm + span * dx


def _flank_chains(res: SolveResult, shocks, base_step: int):
    """Backward trajectories of both flanks, batched over shocks.

    Returns (pos_minus, pos_plus), each of shape (n_shocks, steps + 1)
    in time order: column t is the lifted position at base_step + t.
    """
    step = shocks[0].step
    xm, xp = _flank_points(shocks, res.n_cells)
    pos_m, _ = backward_chain(res, xm, step, base_step, side="leftmost")
    pos_p, _ = backward_chain(res, xp, step, base_step, side="rightmost")
    return pos_m, pos_p


def covered_intervals(res: SolveResult, shocks, base_step: int) -> tuple:
    """Covered intervals of several same-step shocks in one batched pass."""
    shocks = tuple(shocks)
    if not shocks:
        raise ConfigError("need at least one shock")
    step = shocks[0].step
    if any(s.step != step for s in shocks):
        raise ConfigError("shocks must share the detection step")
    if not (res.n0 <= base_step < step <= res.n1):
        raise ConfigError(
            f"need n0 <= base_step < shock step <= n1, got ({base_step}, {step})"
        )
    pos_m, pos_p = _flank_chains(res, shocks, base_step)
    out = []
    for s, left, right in zip(shocks, pos_m[:, 0], pos_p[:, 0]):
        out.append(
            CoveredInterval(
                s.id,
                base_step,
                float(left),
                float(right),
                float(np.clip(right - left, 0.0, 1.0)),
            )
        )
    return tuple(out)


def covered_interval(res: SolveResult, shock: ShockRecord, base_step: int) -> CoveredInterval:
    """Span at base_step between the shock's backward flank characteristics."""
    return covered_intervals(res, (shock,), base_step)[0]


def _circle_dist(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)


def track_genealogy(snapshots, threshold: float | None = None, dt: float | None = None) -> Genealogy:
    """Merge tree of the shocks across a snapshot sequence.

    Tracks continue to the nearest detection; two tracks landing in one
    detection is a merge event, and the child track's first record
    carries both parent ids.  Detection runs with hysteresis: births need
    a single interface drop above the threshold, but established tracks
    follow detections down to half of it, so weak shocks grazing the
    detector floor do not flap in and out of the census.  Passing dt (the
    time spacing of consecutive snapshots) widens the matching tolerance
    by the measured speed scale.  A track whose nearest detection is out
    of tolerance ends as vanished; that is expected decay when its
    strength is near the threshold and logged as a warning otherwise.
    """
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise ConfigError("genealogy needs at least two snapshots")
    n = snaps[0].n_cells
    if any(s.n_cells != n for s in snaps):
        raise ConfigError("snapshots must share the grid")
    if any(b.step <= a.step for a, b in zip(snaps, snaps[1:])):
        raise ConfigError("snapshot steps must be strictly increasing")
    u_max = max(float(np.max(np.abs(s.u))) for s in snaps)
    if threshold is None:
        threshold = 5.0 / n * max(1.0, u_max)
    dx = 1.0 / n
    drift = 0.0 if dt is None else (u_max + 1.0) * dt
    match_tol = 2.5 * dx + drift
    merge_tol = 6.0 * dx + 2.0 * drift

    def _peak_drop(snap, rec):
        drops = snap.u - np.roll(snap.u, -1)
        span = (rec.cell_right - rec.cell_left) % n
        cells = (rec.cell_left + np.arange(span)) % n
        return float(drops[cells].max())

    next_id = 0
    active = []
    finished = []
    events = []
    warnings = []

    def _start(rec, step, parents):
        nonlocal next_id
        tid = next_id
        next_id += 1
        stamped = replace(rec, id=tid, parents=frozenset(parents), birth_step=step)
        active.append({"id": tid, "birth": step, "records": [stamped]})
        return tid

    def _finish(tr, fate, merged_into=None):
        recs = tuple(tr["records"])
        finished.append(
            ShockTrack(tr["id"], tr["birth"], recs[-1].step, recs, fate, merged_into)
        )

    def _vanish(tr, step):
        last = tr["records"][-1]
        if last.strength >= 2.0 * threshold:
            warnings.append(
                f"step {step}: track {tr['id']} lost at strength {last.strength:.4g}"
            )
        _finish(tr, "vanished")

    for snap in snaps:
        dets = detect_shocks(snap, 0.5 * threshold).shocks
        incoming, active = active, []
        if not incoming:
            for rec in dets:
                if _peak_drop(snap, rec) > threshold:
                    _start(rec, snap.step, ())
            continue
        if not dets:
            for tr in incoming:
                _vanish(tr, snap.step)
            continue

        prev = np.array([tr["records"][-1].position for tr in incoming])
        cur = np.array([r.position for r in dets])
        dist = _circle_dist(prev[:, None], cur[None, :])
        nearest = np.argmin(dist, axis=1)
        claims = {}
        lost = []
        for i in range(len(incoming)):
            j = int(nearest[i])
            if dist[i, j] <= merge_tol:
                claims.setdefault(j, []).append(i)
            else:
                lost.append(i)

        owner = {}
        for j, rec in enumerate(dets):
            cl = claims.get(j, [])
            if not cl:
                if _peak_drop(snap, rec) > threshold:
                    owner[j] = _start(rec, snap.step, ())
            elif len(cl) == 1:
                i = cl[0]
                tr = incoming[i]
                if dist[i, j] > match_tol:
                    warnings.append(
                        f"step {snap.step}: loose match {dist[i, j]:.4g} on track {tr['id']}"
                    )
                tr["records"].append(
                    replace(rec, id=tr["id"], parents=frozenset(), birth_step=tr["birth"])
                )
                active.append(tr)
                owner[j] = tr["id"]
            else:
                parents = tuple(sorted(incoming[i]["id"] for i in cl))
                child = _start(rec, snap.step, parents)
                events.append(MergeEvent(snap.step, parents, child))
                for i in cl:
                    _finish(incoming[i], "merged", merged_into=child)
                owner[j] = child

        # A lost track whose last position sits inside a surviving
        # detection's footprint was absorbed, not dissolved: record a
        # merge into that detection's owner (child equals the owner id).
        for i in lost:
            tr = incoming[i]
            p = tr["records"][-1].position
            hit = None
            for j, rec in enumerate(dets):
                if j not in owner or owner[j] == tr["id"]:
                    continue
                lo = rec.cell_left * dx
                width = ((rec.cell_right - rec.cell_left) % n + 1) * dx
                if (p - lo) % 1.0 <= width + dx:
                    hit = j
                    break
            if hit is not None:
                into = owner[hit]
                events.append(MergeEvent(snap.step, (tr["id"], into), into))
                _finish(tr, "merged", merged_into=into)
            else:
                _vanish(tr, snap.step)

    for tr in active:
        _finish(tr, "alive")
    finished.sort(key=lambda t: t.id)
    return Genealogy(
        float(threshold),
        dt,
        snaps[0].step,
        snaps[-1].step,
        tuple(finished),
        tuple(events),
        tuple(warnings),
    )


def main_shock(
    spec: ForcingSpec,
    path: BrownianPath,
    at_step: int = 0,
    t_back: int = 8000,
    c: float = 0.0,
    n_cells: int = 256,
    threshold: float | None = None,
    search_width: int | None = None,
) -> MainShockReport:
    """The unique shock whose covered interval dominates the circle.

    Pulls the profile back from rest over t_back steps, detects shocks at
    at_step, and requires exactly one of them to keep a covered length
    >= 0.9 throughout the deepest quarter of the horizon.  No shocks, or
    nobody covering the circle even jointly, means the horizon is too
    short.  If no single shock qualifies but the top two lengths sum to
    >= 0.9 everywhere deep, the forcing cannot select one main shock
    (symmetric single-mode forcing does this: the two persistent shocks
    trade circle share as the saddle trajectories wander).
    """
    if t_back < 4:
        raise ConfigError(f"t_back must be >= 4, got {t_back}")
    n0 = at_step - t_back
    if path.t_origin > n0 or at_step > path.t_origin + path.n_steps:
        raise ConfigError(
            f"path covers [{path.t_origin}, {path.t_origin + path.n_steps}], "
            f"need [{n0}, {at_step}]"
        )
    res = solve(
        np.full(n_cells, c),
        spec,
        path,
        n0,
        at_step,
        c=c,
        search_width=search_width,
        keep="all",
    )
    dets = detect_shocks(res.snapshot(at_step), threshold).shocks
    if not dets:
        raise CheckFailure(
            "no shocks at the reference step: horizon too short or forcing too weak"
        )
    pos_m, pos_p = _flank_chains(res, dets, n0)
    ell = np.clip(pos_p - pos_m, 0.0, 1.0)
    deep = ell[:, : t_back // 4 + 1]
    deep_min = deep.min(axis=1)
    order = sorted(range(len(dets)), key=lambda k: -ell[k, 0])
    lengths = tuple(float(ell[k, 0]) for k in order)
    qual = [k for k in range(len(dets)) if deep_min[k] >= 0.9]
    if len(qual) == 1:
        k = qual[0]
        iv = CoveredInterval(
            dets[k].id, n0, float(pos_m[k, 0]), float(pos_p[k, 0]), float(ell[k, 0])
        )
        return MainShockReport(dets[k], iv, lengths, float(deep_min[k]), t_back)
    top2 = np.sort(deep, axis=0)[-2:].sum(axis=0) if len(dets) >= 2 else deep[0]
    if len(qual) > 1 or (len(dets) >= 2 and top2.min() >= 0.9):
        raise CheckFailure(
            f"degenerate main shock: covered lengths {lengths[:3]} share the circle "
            "with no stable majority holder"
        )
    raise CheckFailure(
        f"horizon too short: deepest covered lengths {lengths[:3]} never stabilize "
        f"above 0.9 within {t_back} steps"
    )


def _wilson(successes: int, n: int, confidence: float):
    z = NormalDist().inv_cdf(0.5 + confidence / 2.0)
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _merge_seed(args):
    (spec, seed, dt, c, n_cells, burn_steps, tau_steps, x1, x2, threshold, width) = args
    path = sample_path(spec, seed, dt, burn_steps + tau_steps, t_origin=-burn_steps)
    base = solve(
        np.full(n_cells, c), spec, path, -burn_steps, 0, c=c, search_width=width, keep="last"
    )
    res = solve(base.u_at(0), spec, path, 0, tau_steps, c=c, search_width=width, keep="all")
    dets = detect_shocks(res.snapshot(tau_steps), threshold).shocks
    if not dets:
        return False
    for iv in covered_intervals(res, dets, 0):
        r1 = iv.left + ((x1 - iv.left) % 1.0)
        r2 = iv.left + ((x2 - iv.left) % 1.0)
        if r1 <= iv.right and r2 <= iv.right:
            return True
    return False


def merge_probability(
    spec: ForcingSpec,
    n_seeds: int,
    x1: float,
    x2: float,
    tau: float,
    dt: float = 1e-3,
    c: float = 0.0,
    n_cells: int = 256,
    burn_in: float = 4.0,
    base_seed: int = 0,
    threshold: float | None = None,
    search_width: int | None = None,
    confidence: float = 0.95,
    workers: int = 1,
) -> MergeEstimate:
    """Fraction of seeds where x1 and x2 are absorbed by one shock by tau.

    Each seed burns in from rest for burn_in time units, runs forward for
    tau, and succeeds when some shock's covered interval at base time 0
    contains both points.  Coincident points merge trivially, so that
    case returns without simulating.
    """
    if n_seeds < 100:
        raise ConfigError(f"need at least 100 seeds for the interval, got {n_seeds}")
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if not 0.0 < confidence < 1.0:
        raise ConfigError(f"confidence must lie in (0, 1), got {confidence}")
    x1, x2 = x1 % 1.0, x2 % 1.0
    tau_steps = max(1, round(tau / dt))
    if float(_circle_dist(x1, x2)) < 1e-12:
        lo, hi = _wilson(n_seeds, n_seeds, confidence)
        return MergeEstimate(1.0, lo, hi, n_seeds, n_seeds, tau_steps, confidence)
    burn_steps = max(1, round(burn_in / dt))
    jobs = [
        (spec, base_seed + s, dt, c, n_cells, burn_steps, tau_steps, x1, x2, threshold, search_width)
        for s in range(n_seeds)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            hits = list(pool.map(_merge_seed, jobs, chunksize=8))
    else:
        hits = [_merge_seed(j) for j in jobs]
    successes = int(sum(hits))
    lo, hi = _wilson(successes, n_seeds, confidence)
    return MergeEstimate(successes / n_seeds, lo, hi, n_seeds, successes, tau_steps, confidence)


def _absorption_seed(args):
    spec, seed, dt, c, n_cells, horizon_steps, threshold, width = args
    path = sample_path(spec, seed, dt, horizon_steps, t_origin=-horizon_steps)
    res = solve(
        np.full(n_cells, c),
        spec,
        path,
        -horizon_steps,
        0,
        c=c,
        search_width=width,
        keep="all",
    )
    dets = detect_shocks(res.snapshot(0), threshold).shocks
    if not dets:
        return None
    pos_m, pos_p = _flank_chains(res, dets, -horizon_steps)
    widths = pos_p[:, 0] - pos_m[:, 0]
    k = int(np.argmax(widths))
    return np.clip(pos_p[k] - pos_m[k], 0.0, 1.0)


def absorption_rate_fit(
    spec: ForcingSpec,
    n_seeds: int,
    horizon: int,
    dt: float = 1e-3,
    c: float = 0.0,
    n_cells: int = 256,
    base_seed: int = 0,
    threshold: float | None = None,
    search_width: int | None = None,
    workers: int = 1,
) -> AbsorptionFit:
    """Exponential absorption law of the main shock's covered interval.

    Per seed, the widest-covering step-0 shock contributes the curve
    ell(tau) = covered length at pullback depth tau; the fit is linear
    regression of log(1 - ell) against tau on the ensemble median,
    restricted to depths where the gap is past the early growth phase
    (median ell >= 0.2) yet not saturated at rounding level.
    """
    if n_seeds < 2:
        raise ConfigError(f"need at least 2 seeds, got {n_seeds}")
    if horizon * dt < 8.0 - 1e-9:
        raise ConfigError(
            f"horizon must span at least 8 time units, got {horizon * dt:.3f}"
        )
    jobs = [
        (spec, base_seed + s, dt, c, n_cells, horizon, threshold, search_width)
        for s in range(n_seeds)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            curves = list(pool.map(_absorption_seed, jobs))
    else:
        curves = [_absorption_seed(j) for j in jobs]
    kept = [cv for cv in curves if cv is not None]
    skipped = n_seeds - len(kept)
    if not kept:
        raise ConfigError("no seed produced a shock; the forcing cannot be fit")
    med = np.median(np.stack(kept), axis=0)
    taus = (horizon - np.arange(horizon + 1)) * dt
    gap = 1.0 - med
    mask = (med >= 0.2) & (gap >= 1e-9)
    if int(mask.sum()) < 8:
        raise CheckFailure(
            "absorption fit window too small: the median curve never leaves "
            "the growth phase unsaturated"
        )
    x = taus[mask]
    y = np.log(gap[mask])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    return AbsorptionFit(
        rate=float(-slope),
        prefactor=float(math.exp(intercept)),
        r_squared=r2,
        n_seeds=n_seeds,
        skipped=skipped,
        horizon_steps=horizon,
        taus=taus,
        median_length=med,
    )


def write_genealogy_json(gen: Genealogy, dest) -> None:
    """Merge tree as JSON: one node per track, one edge per merge event."""
    nodes = []
    for tr in gen.tracks:
        rec = tr.records[0]
        nodes.append(
            {
                "id": tr.id,
                "birth_step": tr.birth_step,
                "end_step": tr.end_step,
                "fate": tr.fate,
                "merged_into": tr.merged_into,
                "step": rec.step,
                "cell": rec.cell,
                "position": rec.position,
                "u_left": rec.u_left,
                "u_right": rec.u_right,
                "strength": rec.strength,
                "parents": sorted(rec.parents),
            }
        )
    edges = [
        {"step": ev.step, "parents": list(ev.parents), "child": ev.child}
        for ev in gen.events
    ]
    doc = {
        "threshold": gen.threshold,
        "dt": gen.dt,
        "step_first": gen.step_first,
        "step_last": gen.step_last,
        "nodes": nodes,
        "edges": edges,
        "warnings": list(gen.warnings),
    }
    if hasattr(dest, "write"):
        json.dump(doc, dest, indent=1)
    else:
        with open(dest, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)


def write_stats_csv(rows, dest) -> None:
    """Per-seed scalar statistics as (seed, quantity, value) rows."""
    rows = list(rows)
    for row in rows:
        if len(row) != 3:
            raise ConfigError(f"stats rows must be (seed, quantity, value), got {row!r}")
    if hasattr(dest, "write"):
        fh, close = dest, False
    else:
        fh, close = open(dest, "w", newline="", encoding="utf-8"), True
    try:
        writer = csv.writer(fh)
        writer.writerow(["seed", "quantity", "value"])
        for seed, quantity, value in rows:
            writer.writerow([int(seed), str(quantity), repr(float(value))])
    finally:
        if close:
            fh.close()
