"""Compiled inner loops for segment compounding and mean propagation.

The per-step transition matrices are block sparse (at most eleven nonzero
3x3 blocks of twenty-five), so the fold is written block-wise. The numpy
implementations in ``dynamics`` remain the reference; these kernels must
match them to floating-point roundoff and are cross-checked by the test
suite. Everything here is optional: ``dynamics`` falls back to numpy when
numba is unavailable.
"""

import numpy as np

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap

SMALL_ANGLE = 1e-6


@njit(cache=True, fastmath=True)
def _rotation_coeffs(angle):
    """Rodrigues coefficients (sin/one-minus-cos terms), series form below
    the small-angle threshold; mirrors so3._rodrigues_coeffs."""
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        return 1.0 - a2 / 6.0 + a2 * a2 / 120.0, 0.5 - a2 / 24.0 + a2 * a2 / 720.0
    s = np.sin(0.5 * angle)
    return np.sin(angle) / angle, 2.0 * s * s / (angle * angle)


@njit(cache=True, fastmath=True)
def _dexp_coeffs(angle):
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        return (0.5 - a2 / 24.0 + a2 * a2 / 720.0,
                1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0)
    a2 = angle * angle
    s = np.sin(0.5 * angle)
    return 2.0 * s * s / a2, (angle - np.sin(angle)) / (a2 * angle)


@njit(cache=True, fastmath=True)
def _mat_from_axis(phi, ca, cb, sign, out):
    """out = I + sign*ca*K + cb*K^2 for K = skew(phi)."""
    x, y, z = phi[0], phi[1], phi[2]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    out[0, 0] = 1.0 + cb * (-yy - zz)
    out[0, 1] = sign * ca * (-z) + cb * xy
    out[0, 2] = sign * ca * y + cb * xz
    out[1, 0] = sign * ca * z + cb * xy
    out[1, 1] = 1.0 + cb * (-xx - zz)
    out[1, 2] = sign * ca * (-x) + cb * yz
    out[2, 0] = sign * ca * (-y) + cb * xz
    out[2, 1] = sign * ca * x + cb * yz
    out[2, 2] = 1.0 + cb * (-xx - yy)


@njit(cache=True, fastmath=True)
def _apply_left(a, e, b, w, c, g, k1, l1, m1, n1, m, out):
    """out = F @ m with F in five-block-row form."""
    for j in range(15):
        for i in range(3):
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            s3 = 0.0
            s4 = 0.0
            for k in range(3):
                s0 += a[i, k] * m[k, j] + e[i, k] * m[12 + k, j]
                s1 += b[i, k] * m[k, j] + w[i, k] * m[3 + k, j] + c[i, k] * m[9 + k, j]
                s2 += g[i, k] * m[3 + k, j] + w[i, k] * m[6 + k, j]
                s3 += k1[i, k] * m[k, j] + l1[i, k] * m[12 + k, j]
                s4 += m1[i, k] * m[k, j] + n1[i, k] * m[12 + k, j]
            out[i, j] = s0
            out[3 + i, j] = s1
            out[6 + i, j] = s2
            out[9 + i, j] = s3 + m[9 + i, j]
            out[12 + i, j] = s4


@njit(cache=True, fastmath=True)
def _apply_right(a, e, b, w, c, g, k1, l1, m1, n1, m, out):
    """out = m @ F^T; column block J of out contracts m with row J of F."""
    for i in range(15):
        for j in range(3):
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            s3 = 0.0
            s4 = 0.0
            for k in range(3):
                s0 += m[i, k] * a[j, k] + m[i, 12 + k] * e[j, k]
                s1 += m[i, k] * b[j, k] + m[i, 3 + k] * w[j, k] + m[i, 9 + k] * c[j, k]
                s2 += m[i, 3 + k] * g[j, k] + m[i, 6 + k] * w[j, k]
                s3 += m[i, k] * k1[j, k] + m[i, 12 + k] * l1[j, k]
                s4 += m[i, k] * m1[j, k] + m[i, 12 + k] * n1[j, k]
            out[i, j] = s0
            out[i, 3 + j] = s1
            out[i, 6 + j] = s2
            out[i, 9 + j] = s3 + m[i, 9 + j]
            out[i, 12 + j] = s4


@njit(cache=True, fastmath=True)
def fold_segment(omegas, accels, dts, b_a, b_w, q_diags, tfg_mode, gravity,
                 r0, v0, p0):
    """One pass over a segment: mean propagation plus the (F, Q) fold.

    Returns (f_total, q_total, r, v, p). ``tfg_mode`` selects the
    two-frames-group step Jacobian; otherwise the shared SE2(3)/linear one.
    """
    n = dts.shape[0]
    f_total = np.eye(15)
    q_total = np.zeros((15, 15))
    buf = np.empty((15, 15))
    buf2 = np.empty((15, 15))

    r = r0.copy()
    v = v0.copy()
    p = p0.copy()
    rn = np.empty((3, 3))

    omg = np.empty((3, 3))
    om_t = np.empty((3, 3))
    dmat = np.empty((3, 3))
    a_blk = np.empty((3, 3))
    e_blk = np.empty((3, 3))
    b_blk = np.empty((3, 3))
    c_blk = np.empty((3, 3))
    g_blk = np.empty((3, 3))
    k1_blk = np.zeros((3, 3))
    l1_blk = np.zeros((3, 3))
    m1_blk = np.zeros((3, 3))
    n1_blk = np.eye(3)
    kba = np.empty((3, 3))
    kbw = np.empty((3, 3))
    dkbw = np.empty((3, 3))
    cpl = np.empty((3, 3))
    phi = np.empty(3)
    acc = np.empty(3)
    ra = np.empty(3)

    if tfg_mode:
        kba[0, 0] = 0.0
        kba[0, 1] = -b_a[2]
        kba[0, 2] = b_a[1]
        kba[1, 0] = b_a[2]
        kba[1, 1] = 0.0
        kba[1, 2] = -b_a[0]
        kba[2, 0] = -b_a[1]
        kba[2, 1] = b_a[0]
        kba[2, 2] = 0.0
        kbw[0, 0] = 0.0
        kbw[0, 1] = -b_w[2]
        kbw[0, 2] = b_w[1]
        kbw[1, 0] = b_w[2]
        kbw[1, 1] = 0.0
        kbw[1, 2] = -b_w[0]
        kbw[2, 0] = -b_w[1]
        kbw[2, 1] = b_w[0]
        kbw[2, 2] = 0.0

    for s in range(n):
        dt = dts[s]
        for i in range(3):
            phi[i] = dt * (omegas[s, i] - b_w[i])
            acc[i] = accels[s, i] - b_a[i]
        angle = np.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
        ca, cb = _rotation_coeffs(angle)
        _mat_from_axis(phi, ca, cb, 1.0, omg)
        da, db = _dexp_coeffs(angle)
        _mat_from_axis(phi, da, db, -1.0, dmat)   # right Jacobian dexp(-phi)
        for i in range(3):
            for j in range(3):
                om_t[i, j] = omg[j, i]

        # mean: p uses the old v, v uses the old r
        for i in range(3):
            p[i] += dt * v[i]
        for i in range(3):
            x = 0.0
            for k in range(3):
                x += r[i, k] * acc[k]
            ra[i] = x
        for i in range(3):
            v[i] += dt * (gravity[i] + ra[i])
        for i in range(3):
            for j in range(3):
                x = 0.0
                for k in range(3):
                    x += r[i, k] * omg[k, j]
                rn[i, j] = x
        for i in range(3):
            for j in range(3):
                r[i, j] = rn[i, j]

        # per-step blocks shared by all parametrizations
        for i in range(3):
            for j in range(3):
                e_blk[i, j] = -dt * dmat[i, j]
                c_blk[i, j] = -dt * om_t[i, j]
                g_blk[i, j] = dt * om_t[i, j]

        if tfg_mode:
            for i in range(3):
                for j in range(3):
                    x = 0.0
                    for k in range(3):
                        x += dmat[i, k] * kbw[k, j]
                    dkbw[i, j] = x
            for i in range(3):
                for j in range(3):
                    a_blk[i, j] = om_t[i, j] - dt * dkbw[i, j]
            # b = -dt * om_t @ skew(accels[s]) (raw measurement, not unbiased)
            ax, ay, az = accels[s, 0], accels[s, 1], accels[s, 2]
            for i in range(3):
                b_blk[i, 0] = -dt * (om_t[i, 1] * az - om_t[i, 2] * ay)
                b_blk[i, 1] = -dt * (om_t[i, 2] * ax - om_t[i, 0] * az)
                b_blk[i, 2] = -dt * (om_t[i, 0] * ay - om_t[i, 1] * ax)
            # coupling = I - om_t + dt * dkbw
            for i in range(3):
                for j in range(3):
                    cpl[i, j] = (1.0 if i == j else 0.0) - om_t[i, j] + dt * dkbw[i, j]
            for i in range(3):
                for j in range(3):
                    x1 = 0.0
                    x2 = 0.0
                    x3 = 0.0
                    x4 = 0.0
                    for k in range(3):
                        x1 += kba[i, k] * cpl[k, j]
                        x2 += kbw[i, k] * cpl[k, j]
                        x3 += kba[i, k] * dmat[k, j]
                        x4 += kbw[i, k] * dmat[k, j]
                    k1_blk[i, j] = x1
                    m1_blk[i, j] = x2
                    l1_blk[i, j] = dt * x3
                    n1_blk[i, j] = (1.0 if i == j else 0.0) + dt * x4
        else:
            for i in range(3):
                for j in range(3):
                    a_blk[i, j] = om_t[i, j]
            ax, ay, az = acc[0], acc[1], acc[2]
            for i in range(3):
                b_blk[i, 0] = -dt * (om_t[i, 1] * az - om_t[i, 2] * ay)
                b_blk[i, 1] = -dt * (om_t[i, 2] * ax - om_t[i, 0] * az)
                b_blk[i, 2] = -dt * (om_t[i, 0] * ay - om_t[i, 1] * ax)

        _apply_left(a_blk, e_blk, b_blk, om_t, c_blk, g_blk, k1_blk, l1_blk,
                    m1_blk, n1_blk, f_total, buf)
        for i in range(15):
            for j in range(15):
                f_total[i, j] = buf[i, j]
        _apply_left(a_blk, e_blk, b_blk, om_t, c_blk, g_blk, k1_blk, l1_blk,
                    m1_blk, n1_blk, q_total, buf)
        _apply_right(a_blk, e_blk, b_blk, om_t, c_blk, g_blk, k1_blk, l1_blk,
                     m1_blk, n1_blk, buf, buf2)
        for i in range(15):
            for j in range(15):
                q_total[i, j] = buf2[i, j]
        for i in range(15):
            q_total[i, i] += q_diags[s, i]

    return f_total, q_total, r, v, p


@njit(cache=True, fastmath=True)
def mean_segment(omegas, accels, dts, b_a, b_w, gravity, r0, v0, p0):
    """Mean-only segment propagation (the fold's mean part, standalone)."""
    n = dts.shape[0]
    r = r0.copy()
    v = v0.copy()
    p = p0.copy()
    rn = np.empty((3, 3))
    omg = np.empty((3, 3))
    phi = np.empty(3)
    ra = np.empty(3)
    for s in range(n):
        dt = dts[s]
        for i in range(3):
            phi[i] = dt * (omegas[s, i] - b_w[i])
        angle = np.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
        ca, cb = _rotation_coeffs(angle)
        _mat_from_axis(phi, ca, cb, 1.0, omg)
        for i in range(3):
            p[i] += dt * v[i]
        for i in range(3):
            x = 0.0
            for k in range(3):
                x += r[i, k] * (accels[s, k] - b_a[k])
            ra[i] = x
        for i in range(3):
            v[i] += dt * (gravity[i] + ra[i])
        for i in range(3):
            for j in range(3):
                x = 0.0
                for k in range(3):
                    x += r[i, k] * omg[k, j]
                rn[i, j] = x
        for i in range(3):
            for j in range(3):
                r[i, j] = rn[i, j]
    return r, v, p
