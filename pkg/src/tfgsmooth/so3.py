"""SO(3) primitives: skew maps, exponential, logarithm, and the differential
of the exponential. Everything downstream (group operations, dynamics
Jacobians, retractions) is built on these.

Conventions: rotation matrices map body-frame vectors to the earth frame.
Tangent vectors are axis-angle 3-vectors in radians; outputs of ``log`` are
canonical with angle <= pi.
"""

from __future__ import annotations

import numpy as np

# Below this angle the closed-form Rodrigues/Jacobian coefficients switch to
# truncated Taylor series to avoid 0/0.
SMALL_ANGLE = 1e-6

_EYE3 = np.eye(3)


def skew(u):
    """Skew-symmetric matrix of a 3-vector, so that skew(u) @ w == cross(u, w)."""
    x, y, z = u
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_batch(u):
    """Skew matrices for an (N, 3) stack, returned as (N, 3, 3)."""
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape[:-1] + (3, 3))
    out[..., 0, 1] = -u[..., 2]
    out[..., 0, 2] = u[..., 1]
    out[..., 1, 0] = u[..., 2]
    out[..., 1, 2] = -u[..., 0]
    out[..., 2, 0] = -u[..., 1]
    out[..., 2, 1] = u[..., 0]
    return out


def _one_minus_cos(angle):
    # 2 sin^2(x/2) avoids the cancellation in 1 - cos(x) for small x
    s = np.sin(0.5 * angle)
    return 2.0 * s * s


def _rodrigues_coeffs(angle):
    """Coefficients (a, b) with exp = I + a*K + b*K^2 for K = skew(theta)."""
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        return 1.0 - a2 / 6.0 + a2 * a2 / 120.0, 0.5 - a2 / 24.0 + a2 * a2 / 720.0
    return np.sin(angle) / angle, _one_minus_cos(angle) / (angle * angle)


def exp(theta):
    """Rodrigues closed form of the SO(3) exponential map."""
    theta = np.asarray(theta, dtype=float)
    angle = np.sqrt(theta @ theta)
    a, b = _rodrigues_coeffs(angle)
    k = skew(theta)
    return _EYE3 + a * k + b * (k @ k)


def exp_batch(thetas):
    """Vectorized ``exp`` over an (N, 3) stack of axis-angle vectors."""
    thetas = np.asarray(thetas, dtype=float)
    angles = np.linalg.norm(thetas, axis=-1)
    small = angles < SMALL_ANGLE
    safe = np.where(small, 1.0, angles)
    a2 = angles * angles
    a = np.where(small, 1.0 - a2 / 6.0 + a2 * a2 / 120.0, np.sin(safe) / safe)
    half_sin = np.sin(0.5 * safe)
    b = np.where(small, 0.5 - a2 / 24.0 + a2 * a2 / 720.0,
                 2.0 * half_sin * half_sin / (safe * safe))
    k = skew_batch(thetas)
    k2 = k @ k
    return _EYE3 + a[..., None, None] * k + b[..., None, None] * k2


def check_rotation(r, tol=1e-6):
    """Raise ValueError unless ``r`` is orthonormal with unit determinant."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got shape {r.shape}")
    defect = np.linalg.norm(r.T @ r - _EYE3)
    if defect > tol:
        raise ValueError(f"matrix is not orthonormal (defect {defect:.3e})")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("matrix has determinant != +1")
    return r


def project_rotation(r):
    """Nearest rotation matrix in the Frobenius sense (polar projection)."""
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def log(r, validate=True):
    """Axis-angle logarithm of a rotation matrix, with angle <= pi.

    Rotations within 1e-4 of a half turn use the symmetric-part eigenvector
    to recover the axis; the usual vee formula loses precision there.
    """
    r = np.asarray(r, dtype=float)
    if validate:
        check_rotation(r)
    cos_angle = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    vee = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle < SMALL_ANGLE:
        # sin(angle)/angle ~ 1; second-order correction keeps 1e-12 round trips
        return vee * (1.0 + angle * angle / 6.0)
    if angle > np.pi - 1e-4:
        sym = 0.5 * (r + r.T)
        eigval, eigvec = np.linalg.eigh(sym)
        axis = eigvec[:, np.argmax(eigval)]
        axis = axis / np.linalg.norm(axis)
        # eigenvector sign is arbitrary; align with the skew part when it
        # still carries signal, otherwise pick a lexicographic canonical sign
        alignment = axis @ vee
        if abs(alignment) > 1e-12:
            axis = axis * np.sign(alignment)
        else:
            for component in axis:
                if abs(component) > 1e-8:
                    axis = axis * np.sign(component)
                    break
        return axis * angle
    return vee * (angle / np.sin(angle))


def _dexp_coeffs(angle):
    """Coefficients (a, b) with dexp = I + a*K + b*K^2."""
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        return 0.5 - a2 / 24.0 + a2 * a2 / 720.0, 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0
    a2 = angle * angle
    return _one_minus_cos(angle) / a2, (angle - np.sin(angle)) / (a2 * angle)


def dexp(theta):
    """Differential of the exponential (the SO(3) left Jacobian).

    Satisfies exp(theta + delta) ~= exp(dexp(theta) @ delta) @ exp(theta)
    for small delta; dexp(-theta) gives the right-multiplication version.
    """
    theta = np.asarray(theta, dtype=float)
    angle = np.sqrt(theta @ theta)
    a, b = _dexp_coeffs(angle)
    k = skew(theta)
    return _EYE3 + a * k + b * (k @ k)


def dexp_batch(thetas):
    """Vectorized ``dexp`` over an (N, 3) stack."""
    thetas = np.asarray(thetas, dtype=float)
    angles = np.linalg.norm(thetas, axis=-1)
    small = angles < SMALL_ANGLE
    safe = np.where(small, 1.0, angles)
    a2 = angles * angles
    half_sin = np.sin(0.5 * safe)
    a = np.where(small, 0.5 - a2 / 24.0 + a2 * a2 / 720.0,
                 2.0 * half_sin * half_sin / (safe * safe))
    b = np.where(small, 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0,
                 (safe - np.sin(safe)) / (safe * safe * safe))
    k = skew_batch(thetas)
    k2 = k @ k
    return _EYE3 + a[..., None, None] * k + b[..., None, None] * k2


def dexp_inv(theta):
    """Inverse of ``dexp``, in closed form. Requires angle < 2*pi."""
    theta = np.asarray(theta, dtype=float)
    angle = np.sqrt(theta @ theta)
    if angle >= 2.0 * np.pi:
        raise ValueError("dexp is singular at angle 2*pi")
    k = skew(theta)
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        c = 1.0 / 12.0 + a2 / 720.0 + a2 * a2 / 30240.0
    else:
        half = 0.5 * angle
        c = (1.0 - half * np.cos(half) / np.sin(half)) / (angle * angle)
    return _EYE3 - 0.5 * k + c * (k @ k)


def quat_from_rotation(r):
    """Unit quaternion (w, x, y, z) of a rotation matrix."""
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_from_quat(q):
    """Rotation matrix of a (w, x, y, z) quaternion (normalized internally)."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])


def rotz(angle):
    """Rotation about the z axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler_zyx(yaw, pitch, roll):
    """R = Rz(yaw) @ Ry(pitch) @ Rx(roll), the aerospace ZYX convention."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def euler_zyx(r):
    """(yaw, pitch, roll) of a rotation matrix in the ZYX convention."""
    r = np.asarray(r, dtype=float)
    pitch = -np.arcsin(np.clip(r[2, 0], -1.0, 1.0))
    yaw = np.arctan2(r[1, 0], r[0, 0])
    roll = np.arctan2(r[2, 1], r[2, 2])
    return yaw, pitch, roll
