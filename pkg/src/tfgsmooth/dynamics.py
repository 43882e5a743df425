"""Discrete biased-IMU propagation, per-step transition Jacobians for each
state parametrization, process noise, and compounding of many IMU steps into
a single smoother factor.

The discrete model over one step of length dt with gyro sample w and
specific-force sample a:

    R+  = R exp(dt (w - b_w))
    v+  = v + dt (g + R (a - b_a))
    p+  = p + dt v
    b+  = b

Jacobians are the exact differentials of the retraction-conjugated step map,
so they satisfy the finite-difference contract for every parametrization.
For the two-frames retraction this includes the bias rows' couplings through
the rotated-bias composition; for the SE2(3) and linear retractions (which
share one first-order Jacobian) the bias rows are identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, so3
from .parametrizations import Parametrization, local_coordinates, retract
from .tfg import XI_BA, XI_BW, XI_P, XI_R, XI_V, TfgElement

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])

# polar re-orthonormalization cadence for long propagation streams
RENORMALIZE_EVERY = 1000

_EYE3 = np.eye(3)


@dataclass
class ImuSample:
    """One IMU reading: time, angular rate (rad/s), specific force (m/s^2),
    both in the body frame."""

    t: float
    omega: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)


@dataclass
class ProcessNoise:
    """White-noise densities: accel/gyro measurement noise plus bias random
    walks, in continuous-time convention (scaled by dt per step)."""

    sigma_a: float = 0.05
    sigma_w: float = 0.01
    sigma_ba: float = 0.002
    sigma_bw: float = 3e-5

    def __post_init__(self):
        if min(self.sigma_a, self.sigma_w, self.sigma_ba, self.sigma_bw) < 0:
            raise ValueError("noise densities must be nonnegative")


@dataclass
class StepTransition:
    """Linearized transition between two smoother states: error-state matrix
    f, additive noise covariance q, and the propagated mean."""

    f: np.ndarray
    q: np.ndarray
    predicted: TfgElement


def propagate(x: TfgElement, u: ImuSample, dt: float, gravity=None) -> TfgElement:
    """One step of the discrete IMU model. Biases pass through unchanged."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = DEFAULT_GRAVITY if gravity is None else np.asarray(gravity, dtype=float)
    return TfgElement(
        x.r @ so3.exp(dt * (u.omega - x.b_w)),
        x.v + dt * (g + x.r @ (u.accel - x.b_a)),
        x.p + dt * x.v,
        x.b_a,
        x.b_w,
    )


def step_jacobian(kind: Parametrization, x: TfgElement, u: ImuSample, dt: float):
    """15x15 error-state transition F for one IMU step.

    F is defined by local(kind, f(x), f(retract(kind, x, xi))) = F xi + O(xi^2)
    with f the step map.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    phi = dt * (u.omega - x.b_w)
    om_t = so3.exp(phi).T
    d = so3.dexp(-phi)
    f = np.zeros((15, 15))
    f[XI_V, XI_V] = om_t
    f[XI_P, XI_V] = dt * om_t
    f[XI_P, XI_P] = om_t
    f[XI_V, XI_BA] = -dt * om_t
    f[XI_R, XI_BW] = -dt * d
    f[XI_BA, XI_BA] = _EYE3
    f[XI_BW, XI_BW] = _EYE3
    if kind == Parametrization.TFG:
        k_ba = so3.skew(x.b_a)
        k_bw = so3.skew(x.b_w)
        d_kbw = d @ k_bw
        coupling = _EYE3 - om_t + dt * d_kbw
        f[XI_R, XI_R] = om_t - dt * d_kbw
        f[XI_V, XI_R] = -dt * (om_t @ so3.skew(u.accel))
        f[XI_BA, XI_R] = k_ba @ coupling
        f[XI_BW, XI_R] = k_bw @ coupling
        f[XI_BA, XI_BW] = dt * (k_ba @ d)
        f[XI_BW, XI_BW] = _EYE3 + dt * (k_bw @ d)
    elif kind in (Parametrization.SE23, Parametrization.LINEAR):
        # additive-bias retractions; the first-order Jacobian is common to
        # both since the retractions agree to first order
        f[XI_R, XI_R] = om_t
        f[XI_V, XI_R] = -dt * (om_t @ so3.skew(u.accel - x.b_a))
    else:
        raise ValueError(f"unknown parametrization {kind!r}")
    return f


def step_noise(u: ImuSample, dt: float, pn: ProcessNoise):
    """Per-step additive noise covariance, diagonal by block: attitude and
    velocity from the gyro/accel white noise, a small position term from
    integrating velocity noise over the step, and the bias random walks."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return np.diag(_noise_diagonals(np.array([dt]), pn)[0])


def _noise_diagonals(dts, pn: ProcessNoise):
    out = np.empty((len(dts), 15))
    out[:, XI_R] = ((dts * pn.sigma_w) ** 2)[:, None]
    out[:, XI_V] = ((dts * pn.sigma_a) ** 2)[:, None]
    out[:, XI_P] = (0.25 * dts**4 * pn.sigma_a**2)[:, None]
    out[:, XI_BA] = (dts * pn.sigma_ba**2)[:, None]
    out[:, XI_BW] = (dts * pn.sigma_bw**2)[:, None]
    return out


def segment_arrays(samples, t_end):
    """Validate and pack a sample stream into (omegas, accels, dts) arrays.

    Sample k applies over [t_k, t_{k+1}), the last one up to ``t_end``.
    """
    times = np.array([s.t for s in samples], dtype=float)
    if times.size == 0:
        raise ValueError("samples must be nonempty")
    if np.any(np.diff(times) <= 0):
        bad = int(np.argmax(np.diff(times) <= 0)) + 1
        raise ValueError(f"nonmonotonic IMU timestamps at sample index {bad}")
    if t_end <= times[-1]:
        raise ValueError("t_end must lie beyond the last sample time")
    dts = np.diff(np.append(times, t_end))
    omegas = np.stack([s.omega for s in samples])
    accels = np.stack([s.accel for s in samples])
    return omegas, accels, dts


def _prefix_products(mats):
    """Inclusive prefix products s_k = m_0 @ ... @ m_k of a square-matrix
    stack, by a log-depth scan (Hillis-Steele with left multiplication)."""
    s = mats.copy()
    n = len(s)
    d = 1
    while d < n:
        prev = s.copy()
        s[d:] = prev[:-d] @ prev[d:]
        d *= 2
    return s


def _propagate_arrays_numpy(x, omegas, accels, dts, g):
    """Segment mean propagation via prefix rotations and cumulative sums.

    With P_k the product of the first k step rotations, the velocity
    increment of step k is dt_k (g + R_0 P_k a_k); velocities and positions
    then follow from cumulative sums.
    """
    r, v, p = x.r, x.v, x.p
    n = len(dts)
    start = 0
    while start < n:
        stop = min(start + RENORMALIZE_EVERY, n)
        m = stop - start
        dt = dts[start:stop]
        oms = so3.exp_batch(dt[:, None] * (omegas[start:stop] - x.b_w))
        prefix = _prefix_products(oms)
        incr = np.empty((m, 3))
        incr[0] = dt[0] * (g + r @ (accels[start] - x.b_a))
        if m > 1:
            rotated = np.einsum("kij,kj->ki", prefix[:-1],
                                accels[start + 1:stop] - x.b_a)
            incr[1:] = dt[1:, None] * (g + rotated @ r.T)
        v_steps = v + np.vstack([np.zeros(3), np.cumsum(incr[:-1], axis=0)])
        p = p + dt @ v_steps
        v = v + incr.sum(axis=0)
        r = r @ prefix[-1]
        if m == RENORMALIZE_EVERY:
            r = so3.project_rotation(r)
        start = stop
    return r, v, p


def _propagate_arrays(x, omegas, accels, dts, g):
    if not _kernels.HAVE_NUMBA:
        return _propagate_arrays_numpy(x, omegas, accels, dts, g)
    r, v, p = x.r, x.v, x.p
    n = len(dts)
    start = 0
    while start < n:
        stop = min(start + RENORMALIZE_EVERY, n)
        r, v, p = _kernels.mean_segment(
            np.ascontiguousarray(omegas[start:stop]),
            np.ascontiguousarray(accels[start:stop]), dts[start:stop],
            x.b_a, x.b_w, g, r, v, p)
        if stop - start == RENORMALIZE_EVERY:
            r = so3.project_rotation(r)
        start = stop
    return r, v, p


def propagate_segment(x: TfgElement, samples, t_end, gravity=None) -> TfgElement:
    """Fold ``propagate`` over a sample stream; mean only, no Jacobians."""
    g = DEFAULT_GRAVITY if gravity is None else np.asarray(gravity, dtype=float)
    omegas, accels, dts = segment_arrays(samples, t_end)
    r, v, p = _propagate_arrays(x, omegas, accels, dts, g)
    return TfgElement(r, v, p, x.b_a.copy(), x.b_w.copy())


def propagate_arrays(x: TfgElement, omegas, accels, dts, gravity) -> TfgElement:
    """Array-input variant of ``propagate_segment`` for prepacked segments."""
    r, v, p = _propagate_arrays(x, omegas, accels, dts,
                                np.asarray(gravity, dtype=float))
    return TfgElement(r, v, p, x.b_a.copy(), x.b_w.copy())


def _batch_step_matrices(kind, x, omegas, accels, dts):
    """Per-step transition matrices for a whole segment, shape (n, 15, 15)."""
    n = len(dts)
    phis = dts[:, None] * (omegas - x.b_w)
    oms = so3.exp_batch(phis)
    om_t = np.swapaxes(oms, 1, 2)
    d = so3.dexp_batch(-phis)
    dt1 = dts[:, None, None]
    f = np.zeros((n, 15, 15))
    f[:, XI_V, XI_V] = om_t
    f[:, XI_P, XI_V] = dt1 * om_t
    f[:, XI_P, XI_P] = om_t
    f[:, XI_V, XI_BA] = -dt1 * om_t
    f[:, XI_R, XI_BW] = -dt1 * d
    f[:, XI_BA, XI_BA] = _EYE3
    f[:, XI_BW, XI_BW] = _EYE3
    if kind == Parametrization.TFG:
        k_ba = so3.skew(x.b_a)
        k_bw = so3.skew(x.b_w)
        d_kbw = d @ k_bw
        coupling = _EYE3 - om_t + dt1 * d_kbw
        f[:, XI_R, XI_R] = om_t - dt1 * d_kbw
        f[:, XI_V, XI_R] = -dt1 * (om_t @ so3.skew_batch(accels))
        f[:, XI_BA, XI_R] = k_ba @ coupling
        f[:, XI_BW, XI_R] = k_bw @ coupling
        f[:, XI_BA, XI_BW] = dt1 * (k_ba @ d)
        f[:, XI_BW, XI_BW] = _EYE3 + dt1 * (k_bw @ d)
    else:
        f[:, XI_R, XI_R] = om_t
        f[:, XI_V, XI_R] = -dt1 * (om_t @ so3.skew_batch(accels - x.b_a))
    return f


def _fold_transitions(f_steps, q_diags):
    """Reduce per-step transitions, earliest first, to one (F, Q) pair.

    F is the ordered product (latest step leftmost); Q accumulates each
    step's diagonal noise through the suffix products S_k = F_{n-1}...F_{k+1}
    as sum_k S_k diag(q_k) S_k^T. Suffix products come from one log-depth
    scan over the reversed steps.
    """
    n = len(f_steps)
    scan = _prefix_products(f_steps[::-1])
    f_total = scan[-1]
    suffix = np.empty_like(f_steps)
    suffix[-1] = np.eye(f_steps.shape[1])
    if n > 1:
        suffix[:-1] = scan[:n - 1][::-1]
    weighted = suffix * q_diags[:, None, :]
    q_total = np.tensordot(weighted, suffix, axes=([0, 2], [0, 2]))
    return f_total, q_total


def compound_arrays(kind: Parametrization, x0: TfgElement, omegas, accels,
                    dts, gravity, pn: ProcessNoise) -> StepTransition:
    """Array-input core of ``compound`` for prepacked segments."""
    g = np.asarray(gravity, dtype=float)
    if _kernels.HAVE_NUMBA:
        return _compound_kernel(kind, x0, omegas, accels, dts, g, pn)
    f_steps = _batch_step_matrices(kind, x0, omegas, accels, dts)
    f_total, q_total = _fold_transitions(f_steps, _noise_diagonals(dts, pn))
    q_total = 0.5 * (q_total + q_total.T)
    r, v, p = _propagate_arrays(x0, omegas, accels, dts, g)
    predicted = TfgElement(r, v, p, x0.b_a.copy(), x0.b_w.copy())
    return StepTransition(f_total, q_total, predicted)


def _compound_kernel(kind, x0, omegas, accels, dts, g, pn):
    q_diags = _noise_diagonals(dts, pn)
    tfg_mode = kind == Parametrization.TFG
    f_total = np.eye(15)
    q_total = np.zeros((15, 15))
    r, v, p = x0.r, x0.v, x0.p
    n = len(dts)
    start = 0
    while start < n:
        stop = min(start + RENORMALIZE_EVERY, n)
        f_c, q_c, r, v, p = _kernels.fold_segment(
            np.ascontiguousarray(omegas[start:stop]),
            np.ascontiguousarray(accels[start:stop]), dts[start:stop],
            x0.b_a, x0.b_w, q_diags[start:stop], tfg_mode, g, r, v, p)
        if start == 0:
            f_total, q_total = f_c, q_c
        else:
            f_total = f_c @ f_total
            q_total = f_c @ q_total @ f_c.T + q_c
        if stop - start == RENORMALIZE_EVERY:
            r = so3.project_rotation(r)
        start = stop
    q_total = 0.5 * (q_total + q_total.T)
    predicted = TfgElement(r, v, p, x0.b_a.copy(), x0.b_w.copy())
    return StepTransition(f_total, q_total, predicted)


def compound(kind: Parametrization, x0: TfgElement, samples, gravity=None,
             noise: ProcessNoise | None = None, t_end=None) -> StepTransition:
    """Chain per-step transitions over an IMU segment into one factor.

    Returns the propagated mean, the product of step Jacobians (latest step
    leftmost), and the accumulated noise covariance sum_k F_{k+1..n} Q_k
    F_{k+1..n}^T. ``t_end`` defaults to extending the last inter-sample gap.
    """
    g = DEFAULT_GRAVITY if gravity is None else np.asarray(gravity, dtype=float)
    pn = ProcessNoise() if noise is None else noise
    if t_end is None:
        if len(samples) >= 2:
            t_end = samples[-1].t + (samples[-1].t - samples[-2].t)
        else:
            raise ValueError("t_end is required for a single-sample segment")
    omegas, accels, dts = segment_arrays(samples, t_end)
    return compound_arrays(kind, x0, omegas, accels, dts, g, pn)


def finite_difference_jacobian(kind: Parametrization, x: TfgElement,
                               step_map, h=1e-6):
    """Central finite differences of xi -> local(kind, f(x), f(retract(x, xi))).

    ``step_map`` maps a TfgElement to its propagated TfgElement; used by the
    test suites as the independent oracle for the analytic Jacobians.
    """
    base = step_map(x)
    out = np.empty((15, 15))
    for j in range(15):
        xi = np.zeros(15)
        xi[j] = h
        plus = local_coordinates(kind, base, step_map(retract(kind, x, xi)))
        xi[j] = -h
        minus = local_coordinates(kind, base, step_map(retract(kind, x, xi)))
        out[:, j] = (plus - minus) / (2.0 * h)
    return out
