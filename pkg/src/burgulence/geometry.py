"""Curves on the space-time cylinder and the discrete action functional.

Positions live on the universal cover (lifted reals, never wrapped), so a
curve knows its winding; wrapping is applied only when comparing circle
points.  The action of a curve over its window is

    A_c = sum_n [ ((x_{n+1} - x_n)/dt - c)^2 dt/2 + sum_k F_k(midpoint) dB_k ]

with c the reference mean velocity (c = 0 is the plain action).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .forcing import BrownianPath, ForcingSpec, force_norm


@dataclass(frozen=True)
class Curve:
    """Time-grid sampled curve: node j sits at step start_step + j."""

    start_step: int
    dt: float
    positions: np.ndarray
    velocities: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 1 or pos.size < 2:
            raise ConfigError("curve needs at least 2 positions")
        if not np.all(np.isfinite(pos)):
            raise ConfigError("curve positions must be finite")
        if self.dt <= 0 or not math.isfinite(self.dt):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.velocities is not None:
            vel = np.asarray(self.velocities, dtype=np.float64)
            if vel.shape != pos.shape or not np.all(np.isfinite(vel)):
                raise ConfigError("velocities must match positions and be finite")
            vel = vel.copy()
            vel.setflags(write=False)
            object.__setattr__(self, "velocities", vel)

    @property
    def n_steps(self) -> int:
        return self.positions.size - 1

    @property
    def window(self) -> tuple:
        return (self.start_step, self.start_step + self.n_steps)

    def speeds(self) -> np.ndarray:
        """Per-step speeds (x_{n+1} - x_n) / dt, length n_steps."""
        return np.diff(self.positions) / self.dt

    def restrict(self, n0: int, n1: int) -> "Curve":
        """Sub-curve on absolute steps [n0, n1]."""
        a, b = self.window
        if not (a <= n0 < n1 <= b):
            raise IndexError(f"[{n0}, {n1}] not inside curve window [{a}, {b}]")
        i, j = n0 - a, n1 - a
        vel = None if self.velocities is None else self.velocities[i : j + 1]
        return Curve(n0, self.dt, self.positions[i : j + 1], vel)


@dataclass(frozen=True)
class ActionValue:
    value: float
    mean_velocity_c: float
    window: tuple


def action(curve: Curve, spec: ForcingSpec, path: BrownianPath, c: float = 0.0) -> ActionValue:
    """Discrete action of `curve` against the noise in `path`.

    Kinetic term uses per-step displacement relative to drift c; the
    stochastic term evaluates each mode potential at the segment midpoint.
    """
    n0, n1 = curve.window
    db = path.window(n0, n1)
    x = curve.positions
    mids = 0.5 * (x[:-1] + x[1:])
    kinetic = 0.5 * curve.dt * np.sum((np.diff(x) / curve.dt - c) ** 2)
    stoch = float(np.sum(spec.potential_table(mids) * db))
    return ActionValue(float(kinetic) + stoch, c, (n0, n1))


def additivity_check(
    curve: Curve,
    split_step: int,
    spec: ForcingSpec,
    path: BrownianPath,
    c: float = 0.0,
    rel_tol: float = 1e-12,
) -> bool:
    """Action over the window equals the sum over the two halves."""
    n0, n1 = curve.window
    if not (n0 < split_step < n1):
        raise ConfigError(f"split {split_step} not strictly inside [{n0}, {n1}]")
    full = action(curve, spec, path, c).value
    left = action(curve.restrict(n0, split_step), spec, path, c).value
    right = action(curve.restrict(split_step, n1), spec, path, c).value
    return abs(full - (left + right)) <= rel_tol * max(1.0, abs(full))


def reconnect(c1: Curve, c2: Curve, window: tuple) -> Curve:
    """Linear blend from c1 into c2 across `window` = (n0, n1).

    The result equals c1 at the window start and c2 at the window end.
    """
    n0, n1 = int(window[0]), int(window[1])
    if n1 - n0 < 2:
        raise ConfigError(f"reconnection window needs >= 2 steps, got [{n0}, {n1}]")
    a = c1.restrict(n0, n1).positions
    b = c2.restrict(n0, n1).positions
    if c1.dt != c2.dt:
        raise ConfigError("curves disagree on dt")
    theta = np.arange(n1 - n0 + 1) / (n1 - n0)
    return Curve(n0, c1.dt, (1.0 - theta) * a + theta * b)


def reconnect_action_bound(
    c1: Curve,
    c2: Curve,
    window: tuple,
    spec: ForcingSpec,
    path: BrownianPath,
    c: float = 0.0,
) -> tuple:
    """Actual action perturbation of the blend and its a-priori bound.

    Returns (delta_action, bound) with
        delta_action = A(blend) - A(c1 | window)
        bound = K * ||c1 - c2||_C1 * (1 + T) * (1 + max speed),
    K folding in the windowed force norm and the 1/T blend-slope factor.
    """
    n0, n1 = int(window[0]), int(window[1])
    blend = reconnect(c1, c2, window)
    r1, r2 = c1.restrict(n0, n1), c2.restrict(n0, n1)
    d_a = action(blend, spec, path, c).value - action(r1, spec, path, c).value
    dpos = float(np.max(np.abs(r1.positions - r2.positions)))
    dvel = float(np.max(np.abs(r1.speeds() - r2.speeds())))
    norm_c1 = dpos + dvel
    t_len = (n1 - n0) * c1.dt
    max_speed = max(
        float(np.max(np.abs(r1.speeds()))), float(np.max(np.abs(r2.speeds())))
    ) + abs(c)
    fn = force_norm(spec, path, (n0, n1))
    k_const = 2.0 * (1.0 + fn.value) * (1.0 + 1.0 / t_len)
    bound = k_const * norm_c1 * (1.0 + t_len) * (1.0 + max_speed)
    return d_a, bound


def circle_distance(x, y):
    """Distance on the unit circle: min over integers m of |x - y - m|."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    r = np.abs(d - np.round(d))
    return float(r) if r.ndim == 0 else r


def write_curve_csv(curve: Curve, dest) -> None:
    """Export as CSV with columns step, time, position_lifted, velocity.

    Velocity column uses stored velocities when present, otherwise forward
    differences (last node repeats the final step speed).
    """
    if curve.velocities is not None:
        vel = curve.velocities
    else:
        sp = curve.speeds()
        vel = np.concatenate([sp, sp[-1:]])
    own = isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__")
    fh = open(dest, "w", newline="") if own else dest
    try:
        w = csv.writer(fh)
        w.writerow(["step", "time", "position_lifted", "velocity"])
        for j, (x, v) in enumerate(zip(curve.positions, vel)):
            n = curve.start_step + j
            w.writerow([n, n * curve.dt, repr(float(x)), repr(float(v))])
    finally:
        if own:
            fh.close()
