"""Two-frames group operations for the full IMU state (attitude, velocity,
position, accelerometer bias, gyroscope bias).

The composition rotates earth-frame vectors (v, p) by the left element's
attitude and body-frame vectors (the biases) by the transpose of the right
element's attitude. The baseline law with additive biases is also provided
(``compose_imperfect``).

Tangent vectors are 15-vectors ordered (xi_R, xi_v, xi_p, xi_ba, xi_bw);
every matrix in the package uses this block order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import so3

DIM = 15
XI_R = slice(0, 3)
XI_V = slice(3, 6)
XI_P = slice(6, 9)
XI_BA = slice(9, 12)
XI_BW = slice(12, 15)

_BLOCKS = (XI_R, XI_V, XI_P, XI_BA, XI_BW)


@dataclass
class TfgElement:
    """Full state: attitude r (3x3), velocity v, position p, accel bias b_a,
    gyro bias b_w (3-vectors; SI units, body-frame biases)."""

    r: np.ndarray
    v: np.ndarray
    p: np.ndarray
    b_a: np.ndarray
    b_w: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.b_a = np.asarray(self.b_a, dtype=float)
        self.b_w = np.asarray(self.b_w, dtype=float)

    def copy(self):
        return TfgElement(self.r.copy(), self.v.copy(), self.p.copy(),
                          self.b_a.copy(), self.b_w.copy())

    def allclose(self, other, atol=1e-12):
        return (np.allclose(self.r, other.r, atol=atol)
                and np.allclose(self.v, other.v, atol=atol)
                and np.allclose(self.p, other.p, atol=atol)
                and np.allclose(self.b_a, other.b_a, atol=atol)
                and np.allclose(self.b_w, other.b_w, atol=atol))


def identity():
    return TfgElement(np.eye(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))


def tangent(xi_r=None, xi_v=None, xi_p=None, xi_ba=None, xi_bw=None):
    """Assemble a 15-vector tangent from per-block 3-vectors (None = zero)."""
    xi = np.zeros(DIM)
    for block, value in zip(_BLOCKS, (xi_r, xi_v, xi_p, xi_ba, xi_bw)):
        if value is not None:
            xi[block] = value
    return xi


def compose(a: TfgElement, b: TfgElement) -> TfgElement:
    """Group composition: earth-frame vectors rotate by a.r, biases by b.r^T."""
    return TfgElement(
        a.r @ b.r,
        a.v + a.r @ b.v,
        a.p + a.r @ b.p,
        b.b_a + b.r.T @ a.b_a,
        b.b_w + b.r.T @ a.b_w,
    )


def inverse(x: TfgElement) -> TfgElement:
    rt = x.r.T
    return TfgElement(rt, -(rt @ x.v), -(rt @ x.p), -(x.r @ x.b_a), -(x.r @ x.b_w))


def compose_imperfect(a: TfgElement, b: TfgElement) -> TfgElement:
    """Baseline law on SE2(3) x R^6: navigation part as above, biases add."""
    return TfgElement(
        a.r @ b.r,
        a.v + a.r @ b.v,
        a.p + a.r @ b.p,
        a.b_a + b.b_a,
        a.b_w + b.b_w,
    )


def exp(xi) -> TfgElement:
    """Group exponential of a 15-vector tangent."""
    xi = np.asarray(xi, dtype=float)
    xi_r = xi[XI_R]
    j = so3.dexp(xi_r)
    j_neg = so3.dexp(-xi_r)
    return TfgElement(so3.exp(xi_r), j @ xi[XI_V], j @ xi[XI_P],
                      j_neg @ xi[XI_BA], j_neg @ xi[XI_BW])


def log(x: TfgElement):
    """Group logarithm; requires the rotation angle to be below pi."""
    xi_r = so3.log(x.r)
    if np.linalg.norm(xi_r) >= np.pi - 1e-6:
        raise ValueError("logarithm undefined this close to a half-turn rotation")
    j_inv = so3.dexp_inv(xi_r)
    j_neg_inv = so3.dexp_inv(-xi_r)
    out = np.empty(DIM)
    out[XI_R] = xi_r
    out[XI_V] = j_inv @ x.v
    out[XI_P] = j_inv @ x.p
    out[XI_BA] = j_neg_inv @ x.b_a
    out[XI_BW] = j_neg_inv @ x.b_w
    return out


def adjoint(x: TfgElement):
    """Adjoint matrix: the differential of g -> x * g * x^{-1} at the identity."""
    out = np.zeros((DIM, DIM))
    for block in _BLOCKS:
        out[block, block] = x.r
    out[XI_V, XI_R] = so3.skew(x.v) @ x.r
    out[XI_P, XI_R] = so3.skew(x.p) @ x.r
    out[XI_BA, XI_R] = x.r @ so3.skew(x.b_a)
    out[XI_BW, XI_R] = x.r @ so3.skew(x.b_w)
    return out


def ad(xi):
    """Algebra adjoint; satisfies expm(ad(xi)) == adjoint(exp(xi))."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((DIM, DIM))
    k = so3.skew(xi[XI_R])
    for block in _BLOCKS:
        out[block, block] = k
    out[XI_V, XI_R] = so3.skew(xi[XI_V])
    out[XI_P, XI_R] = so3.skew(xi[XI_P])
    out[XI_BA, XI_R] = so3.skew(xi[XI_BA])
    out[XI_BW, XI_R] = so3.skew(xi[XI_BW])
    return out


def left_jacobian(xi, tol=1e-14, max_terms=80):
    """Left Jacobian sum_{j>=0} ad(xi)^j / (j+1)!, truncated when the added
    term drops below ``tol`` in Frobenius norm."""
    a = ad(xi)
    out = np.eye(DIM)
    term = np.eye(DIM)
    for j in range(1, max_terms):
        term = term @ a / (j + 1)
        out = out + term
        if np.linalg.norm(term) < tol:
            break
    return out
