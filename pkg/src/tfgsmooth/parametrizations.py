"""State-update retractions compared by the smoother.

Three ways to apply a 15-vector correction to a state estimate:

* ``tfg``    - full group exponential of the two-frames group,
* ``se23``   - SE2(3) exponential on the navigation part, additive biases,
* ``linear`` - rotation update R exp(xi_R) with body-frame additive vector
  updates (the classic NavState retraction), additive biases.

All three agree to first order; the differences are second order in the
correction and are exactly what the consistency experiments probe.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import so3, tfg
from .tfg import XI_BA, XI_BW, XI_P, XI_R, XI_V, TfgElement


class Parametrization(str, Enum):
    TFG = "tfg"
    SE23 = "se23"
    LINEAR = "linear"

    @classmethod
    def from_string(cls, name: str) -> "Parametrization":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown parametrization {name!r} (expected one of: {valid})")


def se23_exp(xi9):
    """SE2(3) exponential of a 9-vector (xi_R, xi_v, xi_p) as an (R, v, p) triple."""
    xi9 = np.asarray(xi9, dtype=float)
    xi_r = xi9[0:3]
    j = so3.dexp(xi_r)
    return so3.exp(xi_r), j @ xi9[3:6], j @ xi9[6:9]


def se23_log(r, v, p):
    """Inverse of ``se23_exp``; rotation angle must be below pi."""
    xi_r = so3.log(r)
    if np.linalg.norm(xi_r) >= np.pi - 1e-6:
        raise ValueError("SE2(3) logarithm undefined this close to a half turn")
    j_inv = so3.dexp_inv(xi_r)
    return np.concatenate([xi_r, j_inv @ v, j_inv @ p])


def se23_left_jacobian(xi9, tol=1e-14, max_terms=80):
    """Left Jacobian of SE2(3) by the truncated adjoint series."""
    xi9 = np.asarray(xi9, dtype=float)
    a = np.zeros((9, 9))
    k = so3.skew(xi9[0:3])
    for i in range(3):
        a[3 * i:3 * i + 3, 3 * i:3 * i + 3] = k
    a[3:6, 0:3] = so3.skew(xi9[3:6])
    a[6:9, 0:3] = so3.skew(xi9[6:9])
    out = np.eye(9)
    term = np.eye(9)
    for j in range(1, max_terms):
        term = term @ a / (j + 1)
        out = out + term
        if np.linalg.norm(term) < tol:
            break
    return out


def retract(kind: Parametrization, x: TfgElement, xi) -> TfgElement:
    """Apply a tangent correction to a state estimate."""
    xi = np.asarray(xi, dtype=float)
    if kind == Parametrization.TFG:
        return tfg.compose(x, tfg.exp(xi))
    if kind == Parametrization.SE23:
        dr, dv, dp = se23_exp(xi[0:9])
        return TfgElement(x.r @ dr, x.v + x.r @ dv, x.p + x.r @ dp,
                          x.b_a + xi[XI_BA], x.b_w + xi[XI_BW])
    if kind == Parametrization.LINEAR:
        return TfgElement(x.r @ so3.exp(xi[XI_R]), x.v + x.r @ xi[XI_V],
                          x.p + x.r @ xi[XI_P], x.b_a + xi[XI_BA],
                          x.b_w + xi[XI_BW])
    raise ValueError(f"unknown parametrization {kind!r}")


def local_coordinates(kind: Parametrization, x_ref: TfgElement, x: TfgElement):
    """Tangent xi with retract(kind, x_ref, xi) == x; inverse of ``retract``.

    Raises ValueError when the rotation discrepancy reaches a half turn.
    """
    if kind == Parametrization.TFG:
        return tfg.log(tfg.compose(tfg.inverse(x_ref), x))
    if kind == Parametrization.SE23:
        rt = x_ref.r.T
        xi = np.empty(tfg.DIM)
        xi[0:9] = se23_log(rt @ x.r, rt @ (x.v - x_ref.v), rt @ (x.p - x_ref.p))
        xi[XI_BA] = x.b_a - x_ref.b_a
        xi[XI_BW] = x.b_w - x_ref.b_w
        return xi
    if kind == Parametrization.LINEAR:
        rt = x_ref.r.T
        xi_r = so3.log(rt @ x.r)
        if np.linalg.norm(xi_r) >= np.pi - 1e-6:
            raise ValueError("local coordinates undefined this close to a half turn")
        xi = np.empty(tfg.DIM)
        xi[XI_R] = xi_r
        xi[XI_V] = rt @ (x.v - x_ref.v)
        xi[XI_P] = rt @ (x.p - x_ref.p)
        xi[XI_BA] = x.b_a - x_ref.b_a
        xi[XI_BW] = x.b_w - x_ref.b_w
        return xi
    raise ValueError(f"unknown parametrization {kind!r}")


def _congruence_inverse(j, p0_cov):
    """J^{-1} P J^{-T} with a singularity guard on J."""
    try:
        j_inv = np.linalg.solve(j, np.eye(j.shape[0]))
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("retraction Jacobian is singular")
    if np.max(np.abs(j @ j_inv - np.eye(j.shape[0]))) > 1e-8:
        raise np.linalg.LinAlgError("retraction Jacobian is numerically singular")
    out = j_inv @ p0_cov @ j_inv.T
    return 0.5 * (out + out.T)


def prior_weight(kind: Parametrization, p0, p0_cov):
    """Covariance of the prior residual p0 + xi for the given retraction.

    The stored prior covariance lives at the prior mean; the residual is
    expressed at the current estimate, so the covariance is transported by
    the retraction's Jacobian at p0 (identity for the linear kind).
    """
    p0 = np.asarray(p0, dtype=float)
    p0_cov = np.asarray(p0_cov, dtype=float)
    if kind == Parametrization.TFG:
        return _congruence_inverse(tfg.left_jacobian(p0), p0_cov)
    if kind == Parametrization.SE23:
        j = np.eye(tfg.DIM)
        j[0:9, 0:9] = se23_left_jacobian(p0[0:9])
        return _congruence_inverse(j, p0_cov)
    if kind == Parametrization.LINEAR:
        return p0_cov.copy()
    raise ValueError(f"unknown parametrization {kind!r}")
