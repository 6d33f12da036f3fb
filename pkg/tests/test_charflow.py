"""Characteristic integrator and tangent cocycle."""

import math

import numpy as np
import pytest

from burgulence.charflow import (
    JacobiMatrix,
    PhasePoint,
    cocycle,
    det_drift,
    flow,
    jacobi_step,
    step,
)
from burgulence.errors import ConfigError
from burgulence.forcing import preset_spec, sample_path, zero_spec


def test_free_streaming():
    spec = zero_spec()
    path = sample_path(spec, 0, 0.1, 5)
    p1 = step(PhasePoint(0.0, 1.0), spec, path, 0)
    assert p1.x == pytest.approx(0.1) and p1.v == pytest.approx(1.0)


def test_step_exact_inverse():
    spec = preset_spec("ekms3")
    path = sample_path(spec, 3, 1e-3, 10)
    p = PhasePoint(0.37, -0.52)
    q = step(p, spec, path, 4, "forward")
    back = step(q, spec, path, 4, "backward")
    assert back.x == pytest.approx(p.x, abs=1e-14)
    assert back.v == pytest.approx(p.v, abs=1e-14)


def test_single_kick_at_force_maximum():
    # sine_basic force is sin(2 pi x), equal to 1 at x = 1/4, so one step
    # from rest picks up exactly the increment.
    spec = preset_spec("sine_basic")
    dt = 1e-3
    path = sample_path(spec, 8, dt, 3)
    db = path.increments[0, 1]
    q = step(PhasePoint(0.25, 0.0), spec, path, 1)
    assert q.v == pytest.approx(db, rel=1e-12)
    assert q.x - 0.25 == pytest.approx(db * dt, rel=1e-12)


def test_step_out_of_range():
    spec = preset_spec("ekms3")
    path = sample_path(spec, 3, 1e-3, 10)
    with pytest.raises(IndexError):
        step(PhasePoint(0.0, 0.0), spec, path, 10)


def test_flow_straight_line_and_round_trip():
    spec = zero_spec()
    path = sample_path(spec, 0, 0.01, 50)
    pts = flow(PhasePoint(0.2, 0.5), spec, path, 0, 50)
    assert len(pts) == 51
    assert pts[-1].x == pytest.approx(0.2 + 0.5 * 0.5, rel=1e-12)

    spec2 = preset_spec("ekms3")
    path2 = sample_path(spec2, 12, 1e-3, 200)
    fwd = flow(PhasePoint(0.6, -0.3), spec2, path2, 0, 200)
    back = flow(fwd[-1], spec2, path2, 200, 0)
    assert back[-1].x == pytest.approx(0.6, abs=1e-12)
    assert back[-1].v == pytest.approx(-0.3, abs=1e-12)
    # intermediate points retrace too
    assert back[50].x == pytest.approx(fwd[150].x, abs=1e-12)


def test_flow_matches_fine_substep_oracle():
    # Interpret each increment as a constant force over its step and
    # integrate that system with 10 substeps; the one-kick step must agree
    # at the endpoint to first order in dt.
    spec = preset_spec("ekms3")
    dt, n = 1e-3, 500
    path = sample_path(spec, 21, dt, n)
    p0 = PhasePoint(0.1, 0.3)
    end = flow(p0, spec, path, 0, n)[-1]

    sub = 10
    h = dt / sub
    x, v = p0.x, p0.v
    for j in range(n):
        db = path.increments[:, j]
        for _ in range(sub):
            v += float(db @ spec.force_table(x)) / sub
            x += v * h
    assert end.x == pytest.approx(x, abs=20 * dt)
    assert end.v == pytest.approx(v, abs=20 * dt)


def test_jacobi_shear_and_unit_determinant():
    spec = zero_spec()
    path = sample_path(spec, 0, 0.1, 5)
    j = jacobi_step(JacobiMatrix.identity(), 0.3, spec, path, 0)
    np.testing.assert_allclose(j.as_array(), [[1.0, 0.1], [0.0, 1.0]], atol=1e-15)

    spec2 = preset_spec("ekms3")
    path2 = sample_path(spec2, 5, 1e-3, 100)
    for n in range(20):
        m = jacobi_step(JacobiMatrix.identity(), 0.1 + 0.04 * n, spec2, path2, n)
        assert m.det == pytest.approx(1.0, abs=1e-15)
        inv = jacobi_step(JacobiMatrix.identity(), 0.1 + 0.04 * n, spec2, path2, n, "backward")
        np.testing.assert_allclose(inv.as_array() @ m.as_array(), np.eye(2), atol=1e-14)


def test_jacobi_matches_finite_differences():
    spec = preset_spec("ekms3")
    path = sample_path(spec, 17, 1e-3, 10)
    p = PhasePoint(0.42, -0.2)
    n = 3
    m = jacobi_step(JacobiMatrix.identity(), p.x, spec, path, n).as_array()
    h = 1e-6
    cols = []
    for dx, dv in ((h, 0.0), (0.0, h)):
        plus = step(PhasePoint(p.x + dx, p.v + dv), spec, path, n)
        minus = step(PhasePoint(p.x - dx, p.v - dv), spec, path, n)
        cols.append([(plus.x - minus.x) / (2 * h), (plus.v - minus.v) / (2 * h)])
    fd = np.array(cols).T
    np.testing.assert_allclose(fd, m, atol=1e-5)


def test_cocycle_pure_shear_closed_form():
    spec = zero_spec()
    dt, k = 0.01, 40
    path = sample_path(spec, 0, dt, k)
    lg, w = cocycle(PhasePoint(0.0, 0.0), spec, path, 0, k, (0.0, 1.0))
    t = k * dt
    assert lg == pytest.approx(0.5 * math.log(1 + t * t), rel=1e-12)
    np.testing.assert_allclose(w, np.array([t, 1.0]) / math.hypot(t, 1.0), atol=1e-12)


def test_cocycle_composition():
    spec = preset_spec("ekms3")
    path = sample_path(spec, 9, 1e-3, 300)
    p0 = PhasePoint(0.3, 0.1)
    v0 = (0.6, -0.8)
    lg_full, w_full = cocycle(p0, spec, path, 0, 300, v0)
    lg_a, w_a = cocycle(p0, spec, path, 0, 120, v0)
    p_mid = flow(p0, spec, path, 0, 120)[-1]
    lg_b, w_b = cocycle(p_mid, spec, path, 120, 300, w_a)
    assert lg_full == pytest.approx(lg_a + lg_b, abs=1e-10)
    np.testing.assert_allclose(w_full, w_b, atol=1e-10)


def test_cocycle_backward_inverts_forward():
    # Chaining the forward image direction through the backward cocycle
    # recovers exactly minus the forward log growth (P^-1 P = I).
    spec = preset_spec("ekms3")
    path = sample_path(spec, 14, 1e-3, 400)
    p0 = PhasePoint(0.7, -0.1)
    lg_f, w_f = cocycle(p0, spec, path, 0, 400, (1.0, 0.3))
    p1 = flow(p0, spec, path, 0, 400)[-1]
    lg_b, w_b = cocycle(p1, spec, path, 400, 0, w_f)
    assert lg_b == pytest.approx(-lg_f, abs=1e-9)
    v0 = np.array([1.0, 0.3]) / math.hypot(1.0, 0.3)
    np.testing.assert_allclose(np.abs(w_b), np.abs(v0), atol=1e-9)


def test_cocycle_rejects_zero_vector():
    spec = preset_spec("ekms3")
    path = sample_path(spec, 9, 1e-3, 10)
    with pytest.raises(ValueError):
        cocycle(PhasePoint(0.0, 0.0), spec, path, 0, 5, (0.0, 0.0))


def test_det_drift_stays_at_rounding_level():
    spec = preset_spec("ekms3")
    path = sample_path(spec, 31, 1e-3, 10_000)
    drift = det_drift(PhasePoint(0.25, 0.0), spec, path, 0, 10_000)
    assert drift < 1e-10
    with pytest.raises(ConfigError):
        det_drift(PhasePoint(0.0, 0.0), spec, path, 5, 5)
