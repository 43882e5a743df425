import numpy as np
import pytest

from tfgsmooth import so3, tfg
from tfgsmooth.dynamics import (DEFAULT_GRAVITY, ImuSample, ProcessNoise,
                                compound, finite_difference_jacobian,
                                propagate, propagate_segment, step_jacobian,
                                step_noise)
from tfgsmooth.parametrizations import Parametrization, local_coordinates, retract

ALL_KINDS = list(Parametrization)


def expm_series(m, terms=30):
    out = np.eye(3)
    term = np.eye(3)
    for j in range(1, terms + 1):
        term = term @ m / j
        out = out + term
    return out


def random_state(rng, bias_scale=0.1):
    return tfg.TfgElement(so3.exp(rng.normal(size=3)), rng.normal(size=3),
                          rng.normal(size=3), bias_scale * rng.normal(size=3),
                          bias_scale * rng.normal(size=3))


def random_sample(rng, t=0.0):
    return ImuSample(t, 0.5 * rng.normal(size=3), rng.normal(size=3))


def test_propagate_static_equilibrium():
    rng = np.random.default_rng(0)
    r = so3.exp(rng.normal(size=3))
    b_a, b_w = 0.1 * rng.normal(size=3), 0.1 * rng.normal(size=3)
    x = tfg.TfgElement(r, np.zeros(3), rng.normal(size=3), b_a, b_w)
    u = ImuSample(0.0, b_w.copy(), r.T @ (-DEFAULT_GRAVITY) + b_a)
    y = propagate(x, u, 0.01)
    assert np.max(np.abs(y.r - x.r)) < 1e-14
    assert np.max(np.abs(y.v)) < 1e-14
    assert np.max(np.abs(y.p - x.p)) < 1e-14


def test_propagate_free_fall():
    x = tfg.TfgElement(np.eye(3), np.array([1.0, 0.0, 0.0]), np.zeros(3),
                       np.zeros(3), np.zeros(3))
    dt = 0.5
    y = propagate(x, ImuSample(0.0, np.zeros(3), np.zeros(3)), dt)
    assert np.allclose(y.p, [dt, 0.0, 0.0])
    assert np.allclose(y.v, x.v + dt * DEFAULT_GRAVITY)


def test_propagate_matches_independent_expression():
    # term-by-term re-evaluation of the discrete model with a series
    # exponential, written independently of the implementation
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = random_state(rng)
        u = random_sample(rng)
        dt = rng.uniform(0.001, 0.1)
        y = propagate(x, u, dt, DEFAULT_GRAVITY)
        r_expected = x.r @ expm_series(so3.skew(dt * (u.omega - x.b_w)))
        v_expected = x.v + dt * (DEFAULT_GRAVITY + x.r @ (u.accel - x.b_a))
        p_expected = x.p + dt * x.v
        assert np.max(np.abs(y.r - r_expected)) < 1e-14
        assert np.max(np.abs(y.v - v_expected)) < 1e-14
        assert np.max(np.abs(y.p - p_expected)) < 1e-14
        assert np.array_equal(y.b_a, x.b_a)
        assert np.array_equal(y.b_w, x.b_w)


def test_propagate_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        propagate(tfg.identity(), ImuSample(0.0, np.zeros(3), np.zeros(3)), 0.0)


def test_propagate_preserves_rotation_invariants():
    rng = np.random.default_rng(2)
    x = random_state(rng)
    u = random_sample(rng)
    y = propagate(x, u, 0.01)
    assert np.linalg.norm(y.r.T @ y.r - np.eye(3)) < 1e-12
    assert abs(np.linalg.det(y.r) - 1.0) < 1e-12


def test_long_stream_orthonormality_drift():
    # renormalization policy: polar projection every 1000 steps
    rng = np.random.default_rng(3)
    x = random_state(rng)
    u = ImuSample(0.0, np.array([0.3, -0.2, 0.4]), np.array([0.0, 0.0, 9.81]))
    for k in range(100_000):
        x = propagate(x, u, 0.01)
        if (k + 1) % 1000 == 0:
            x.r = so3.project_rotation(x.r)
    assert np.linalg.norm(x.r.T @ x.r - np.eye(3)) < 1e-9


def test_step_jacobian_zero_rate_zero_bias_pattern():
    rng = np.random.default_rng(4)
    accel = rng.normal(size=3)
    x = tfg.TfgElement(so3.exp(rng.normal(size=3)), rng.normal(size=3),
                       rng.normal(size=3), np.zeros(3), np.zeros(3))
    dt = 0.02
    u = ImuSample(0.0, np.zeros(3), accel)
    for kind in ALL_KINDS:
        f = step_jacobian(kind, x, u, dt)
        assert np.allclose(f[tfg.XI_R, tfg.XI_R], np.eye(3))
        assert np.allclose(f[tfg.XI_V, tfg.XI_R], -so3.skew(dt * accel))
        assert np.allclose(f[tfg.XI_BA, tfg.XI_R], 0.0)
        assert np.allclose(f[tfg.XI_BW, tfg.XI_R], 0.0)
        assert np.allclose(f[tfg.XI_R, tfg.XI_BW], -dt * np.eye(3))
        assert np.allclose(f[tfg.XI_P, tfg.XI_V], dt * np.eye(3))


@pytest.mark.parametrize("kind", ALL_KINDS)
@pytest.mark.parametrize("dt", [0.01, 0.001])
def test_step_jacobian_matches_finite_differences(kind, dt):
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = random_state(rng)
        u = random_sample(rng)
        f = step_jacobian(kind, x, u, dt)
        f_fd = finite_difference_jacobian(kind, x, lambda s: propagate(s, u, dt))
        rel = np.linalg.norm(f - f_fd) / np.linalg.norm(f_fd)
        assert rel < 1e-5


def test_tfg_exact_log_linearity_without_gyro_subsystem():
    # zero rate and zero gyro bias: the group error propagates exactly
    # linearly on the gyro-free sub-state, even for unit-size errors
    rng = np.random.default_rng(6)
    for _ in range(50):
        x = random_state(rng)
        x.b_w = np.zeros(3)
        u = ImuSample(0.0, np.zeros(3), rng.normal(size=3))
        dt = 0.05
        xi = rng.normal(size=15)
        xi[tfg.XI_BW] = 0.0
        xi *= 1.0 / np.linalg.norm(xi)
        if np.linalg.norm(xi[tfg.XI_R]) >= np.pi - 1e-3:
            continue
        f = step_jacobian(Parametrization.TFG, x, u, dt)
        perturbed = propagate(retract(Parametrization.TFG, x, xi), u, dt)
        defect = local_coordinates(Parametrization.TFG, propagate(x, u, dt),
                                   perturbed) - f @ xi
        assert np.max(np.abs(defect)) < 1e-12


def test_step_noise_zero_parameters():
    pn = ProcessNoise(0.0, 0.0, 0.0, 0.0)
    q = step_noise(ImuSample(0.0, np.zeros(3), np.zeros(3)), 0.01, pn)
    assert np.array_equal(q, np.zeros((15, 15)))


def test_step_noise_accel_scaling():
    u = ImuSample(0.0, np.zeros(3), np.zeros(3))
    q1 = step_noise(u, 0.01, ProcessNoise(sigma_a=0.05))
    q2 = step_noise(u, 0.01, ProcessNoise(sigma_a=0.10))
    assert np.allclose(q2[tfg.XI_V, tfg.XI_V], 4.0 * q1[tfg.XI_V, tfg.XI_V])


def test_step_noise_positive_semidefinite():
    rng = np.random.default_rng(7)
    u = ImuSample(0.0, np.zeros(3), np.zeros(3))
    for _ in range(20):
        pn = ProcessNoise(*rng.uniform(0.0, 1.0, size=4))
        q = step_noise(u, rng.uniform(1e-3, 0.1), pn)
        assert np.min(np.linalg.eigvalsh(q)) >= 0.0
        assert np.allclose(q, q.T)


def test_step_noise_rejects_negative_sigma():
    with pytest.raises(ValueError):
        ProcessNoise(sigma_a=-1.0)


def test_compound_single_sample():
    rng = np.random.default_rng(8)
    x = random_state(rng)
    u = random_sample(rng, t=0.0)
    pn = ProcessNoise()
    dt = 0.01
    for kind in ALL_KINDS:
        tr = compound(kind, x, [u], DEFAULT_GRAVITY, pn, t_end=dt)
        assert tr.predicted.allclose(propagate(x, u, dt), atol=1e-14)
        assert np.max(np.abs(tr.f - step_jacobian(kind, x, u, dt))) < 1e-14
        assert np.max(np.abs(tr.q - step_noise(u, dt, pn))) < 1e-20


def test_compound_two_samples_unrolled():
    rng = np.random.default_rng(9)
    x = random_state(rng)
    u1, u2 = random_sample(rng, 0.0), random_sample(rng, 0.01)
    pn = ProcessNoise()
    tr = compound(Parametrization.TFG, x, [u1, u2], DEFAULT_GRAVITY, pn, t_end=0.02)
    x1 = propagate(x, u1, 0.01)
    f1 = step_jacobian(Parametrization.TFG, x, u1, 0.01)
    f2 = step_jacobian(Parametrization.TFG, x1, u2, 0.01)
    q1 = step_noise(u1, 0.01, pn)
    q2 = step_noise(u2, 0.01, pn)
    assert np.max(np.abs(tr.f - f2 @ f1)) < 1e-13
    assert np.max(np.abs(tr.q - (f2 @ q1 @ f2.T + q2))) < 1e-18
    assert tr.predicted.allclose(propagate(x1, u2, 0.01), atol=1e-13)


def test_compound_equals_ordered_step_products():
    rng = np.random.default_rng(10)
    x = random_state(rng)
    samples = [ImuSample(0.01 * k, 0.3 * rng.normal(size=3), rng.normal(size=3))
               for k in range(20)]
    pn = ProcessNoise()
    for kind in ALL_KINDS:
        tr = compound(kind, x, samples, DEFAULT_GRAVITY, pn, t_end=0.2)
        f_prod = np.eye(15)
        cur = x
        for k, s in enumerate(samples):
            f_prod = step_jacobian(kind, cur, s, 0.01) @ f_prod
            cur = propagate(cur, s, 0.01)
        assert np.max(np.abs(tr.f - f_prod)) < 1e-12
        assert tr.predicted.allclose(cur, atol=1e-12)


def test_compound_finite_difference_100_samples():
    rng = np.random.default_rng(11)
    x = random_state(rng)
    samples = [ImuSample(0.01 * k, 0.3 * rng.normal(size=3),
                         rng.normal(size=3) - DEFAULT_GRAVITY)
               for k in range(100)]
    pn = ProcessNoise()
    for kind in ALL_KINDS:
        tr = compound(kind, x, samples, DEFAULT_GRAVITY, pn, t_end=1.0)
        f_fd = finite_difference_jacobian(
            kind, x, lambda s: propagate_segment(s, samples, 1.0, DEFAULT_GRAVITY))
        rel = np.linalg.norm(tr.f - f_fd) / np.linalg.norm(f_fd)
        assert rel < 1e-4


def test_compound_rejects_nonmonotonic_timestamps():
    rng = np.random.default_rng(12)
    x = random_state(rng)
    samples = [ImuSample(0.0, np.zeros(3), np.zeros(3)),
               ImuSample(0.02, np.zeros(3), np.zeros(3)),
               ImuSample(0.01, np.zeros(3), np.zeros(3))]
    with pytest.raises(ValueError, match="nonmonotonic"):
        compound(Parametrization.TFG, x, samples, t_end=0.03)


def test_propagate_segment_matches_fold():
    rng = np.random.default_rng(13)
    x = random_state(rng)
    samples = [ImuSample(0.01 * k, 0.2 * rng.normal(size=3), rng.normal(size=3))
               for k in range(50)]
    seg = propagate_segment(x, samples, 0.5, DEFAULT_GRAVITY)
    cur = x
    for s in samples:
        cur = propagate(cur, s, 0.01, DEFAULT_GRAVITY)
    assert seg.allclose(cur, atol=1e-12)
