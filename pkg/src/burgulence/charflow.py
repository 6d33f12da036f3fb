"""Characteristic flow and its 2x2 tangent (Jacobi) cocycle.

The characteristic system dx/dt = v, dv = sum_k f_k(x) dB_k is integrated
with kick-then-drift Euler:

    v' = v + sum_k f_k(x) dB_k,    x' = x + v' dt.

The scheme is exactly invertible and its per-step tangent matrix

    M_n = [[1 + b_n dt, dt], [b_n, 1]],   b_n = sum_k f_k'(x) dB_k

has determinant 1 algebraically, so area preservation and invertibility
are exact structural facts of the discretization, not approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .forcing import BrownianPath, ForcingSpec

_FORWARD = "forward"
_BACKWARD = "backward"


def _check_direction(direction: str) -> None:
    if direction not in (_FORWARD, _BACKWARD):
        raise ConfigError(f"direction must be forward or backward, got {direction!r}")


@dataclass(frozen=True)
class PhasePoint:
    x: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.v)):
            raise ConfigError("phase point components must be finite")


@dataclass(frozen=True)
class JacobiMatrix:
    j11: float
    j12: float
    j21: float
    j22: float

    @classmethod
    def identity(cls) -> "JacobiMatrix":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_array(cls, a) -> "JacobiMatrix":
        a = np.asarray(a, dtype=np.float64)
        return cls(float(a[0, 0]), float(a[0, 1]), float(a[1, 0]), float(a[1, 1]))

    def as_array(self) -> np.ndarray:
        return np.array([[self.j11, self.j12], [self.j21, self.j22]])

    @property
    def det(self) -> float:
        return self.j11 * self.j22 - self.j12 * self.j21


def _kick(spec: ForcingSpec, path: BrownianPath, x: float, n: int) -> float:
    db = path.increments_at(n)
    return float(db @ spec.force_table(x))


def _shear(spec: ForcingSpec, path: BrownianPath, x: float, n: int) -> float:
    db = path.increments_at(n)
    return float(db @ spec.force_deriv_table(x))


def step(
    p: PhasePoint,
    spec: ForcingSpec,
    path: BrownianPath,
    n: int,
    direction: str = _FORWARD,
) -> PhasePoint:
    """One kick-then-drift step over step index n, or its exact inverse."""
    _check_direction(direction)
    dt = path.dt
    if direction == _FORWARD:
        v = p.v + _kick(spec, path, p.x, n)
        return PhasePoint(p.x + v * dt, v)
    x = p.x - p.v * dt
    return PhasePoint(x, p.v - _kick(spec, path, x, n))


def flow(
    p: PhasePoint, spec: ForcingSpec, path: BrownianPath, n0: int, n1: int
) -> list:
    """Orbit from step n0 to step n1; backward when n1 < n0.

    Returns the list of phase points at every visited step, endpoints
    included, so its length is |n1 - n0| + 1.
    """
    pts = [p]
    if n1 >= n0:
        for n in range(n0, n1):
            p = step(p, spec, path, n, _FORWARD)
            pts.append(p)
    else:
        for n in range(n0 - 1, n1 - 1, -1):
            p = step(p, spec, path, n, _BACKWARD)
            pts.append(p)
    return pts


def jacobi_step(
    j: JacobiMatrix,
    x: float,
    spec: ForcingSpec,
    path: BrownianPath,
    n: int,
    direction: str = _FORWARD,
) -> JacobiMatrix:
    """Left-multiply by the per-step tangent matrix (or its exact inverse).

    `x` is the position before the forward step at index n in both
    directions, i.e. the point where the kick is evaluated.
    """
    _check_direction(direction)
    dt = path.dt
    b = _shear(spec, path, x, n)
    if direction == _FORWARD:
        m = np.array([[1.0 + b * dt, dt], [b, 1.0]])
    else:
        m = np.array([[1.0, -dt], [-b, 1.0 + b * dt]])
    return JacobiMatrix.from_array(m @ j.as_array())


def cocycle(
    p0: PhasePoint,
    spec: ForcingSpec,
    path: BrownianPath,
    n0: int,
    n1: int,
    v_init,
) -> tuple:
    """Propagate a tangent vector along the orbit of p0 from n0 to n1.

    Renormalizes to unit length every step and accumulates log norms.
    Returns (log_growth, unit direction).  Backward (n1 < n0) uses the
    inverse tangent matrices along the backward orbit.
    """
    w = np.asarray(v_init, dtype=np.float64)
    norm = float(np.hypot(w[0], w[1]))
    if norm == 0.0 or not np.all(np.isfinite(w)):
        raise ValueError("v_init must be a nonzero finite 2-vector")
    w = w / norm
    dt = path.dt
    log_growth = 0.0
    p = p0
    if n1 >= n0:
        for n in range(n0, n1):
            b = _shear(spec, path, p.x, n)
            w = np.array([(1.0 + b * dt) * w[0] + dt * w[1], b * w[0] + w[1]])
            r = float(np.hypot(w[0], w[1]))
            log_growth += math.log(r)
            w /= r
            p = step(p, spec, path, n, _FORWARD)
    else:
        for n in range(n0 - 1, n1 - 1, -1):
            p = step(p, spec, path, n, _BACKWARD)
            b = _shear(spec, path, p.x, n)
            w = np.array([w[0] - dt * w[1], -b * w[0] + (1.0 + b * dt) * w[1]])
            r = float(np.hypot(w[0], w[1]))
            log_growth += math.log(r)
            w /= r
    return log_growth, w


def det_drift(
    p0: PhasePoint, spec: ForcingSpec, path: BrownianPath, n0: int, n1: int
) -> float:
    """Accumulated rounding in the product determinant over [n0, n1).

    det of the product equals the product of per-step dets, and each
    per-step det is O(1)-conditioned, so the drift is tracked as
    |sum_n log det(M_n)|; algebraically the value is 0.  Evaluating det
    on the accumulated product matrix instead would be hopeless: its
    condition number grows like exp(2 lambda T) along a hyperbolic orbit.
    """
    if n1 <= n0:
        raise ConfigError("det_drift needs n1 > n0")
    dt = path.dt
    log_det = 0.0
    p = p0
    for n in range(n0, n1):
        b = _shear(spec, path, p.x, n)
        d = (1.0 + b * dt) * 1.0 - dt * b
        log_det += math.log(d)
        p = step(p, spec, path, n, _FORWARD)
    return abs(log_det)
