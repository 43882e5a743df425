"""Fixed-lag MAP smoother over a window of IMU states.

A window holds state estimates at measurement epochs, one prior on its
oldest state, IMU segments between consecutive states, and position
measurements. The cost is the standard sum of Mahalanobis terms

    |p0 + xi_0|^2_P0~  +  sum_i |u_i - F_i xi_i + xi_{i+1}|^2_Q_i
                       +  sum_k |n_k - H_k xi|^2_N_k

linearized around the current estimates in the chosen retraction's local
coordinates. Gauss-Newton (lambda = 0) or Levenberg-Marquardt iterations
solve it; the oldest state is marginalized by Schur complement once the
window exceeds its size budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (DEFAULT_GRAVITY, ProcessNoise, StepTransition,
                       compound_arrays, propagate_arrays, segment_arrays)
from .parametrizations import (Parametrization, local_coordinates,
                               prior_weight, retract, se23_left_jacobian)
from .tfg import DIM, XI_P, TfgElement
from . import tfg


class SolverError(RuntimeError):
    """Normal-equations failure; carries the iteration index."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass
class SolverConfig:
    max_iterations: int = 50
    cost_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    lm_initial_lambda: float = 1e-4
    window_size: int = 5

    def __post_init__(self):
        if self.cost_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.lm_initial_lambda < 0:
            raise ValueError("lm_initial_lambda must be nonnegative")


@dataclass
class PriorFactor:
    """Gaussian prior on one state: mean element and covariance of the
    local perturbation at the mean."""

    index: int
    mean: TfgElement
    cov: np.ndarray


@dataclass
class DynamicsSegment:
    """IMU samples covering (t_i, t_{i+1}]; sample k applies over
    [t_k, t_{k+1}) with the last step ending at t_end."""

    samples: list
    t_end: float
    noise: ProcessNoise
    _arrays: tuple = field(default=None, repr=False, compare=False)

    def arrays(self):
        if self._arrays is None:
            self._arrays = segment_arrays(self.samples, self.t_end)
        return self._arrays


@dataclass
class PositionFactor:
    index: int
    y: np.ndarray
    cov: np.ndarray


@dataclass
class Window:
    times: list
    states: list
    prior: PriorFactor
    segments: list = field(default_factory=list)
    pos_factors: list = field(default_factory=list)
    gravity: np.ndarray = None
    dyn_factors: list = field(default_factory=list)   # StepTransitions, refreshed by linearize
    _cache: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.gravity is None:
            self.gravity = DEFAULT_GRAVITY.copy()
        self.gravity = np.asarray(self.gravity, dtype=float)

    def __len__(self):
        return len(self.states)

    def validate(self):
        """Check the structural invariants; raises ValueError on violation."""
        if len(self.times) != len(self.states):
            raise ValueError("times and states lengths differ")
        if len(self.segments) != len(self.states) - 1:
            raise ValueError("need exactly one IMU segment between consecutive states")
        if not (0 <= self.prior.index < len(self.states)):
            raise ValueError("prior index out of range")
        for factor in self.pos_factors:
            if not (0 <= factor.index < len(self.states)):
                raise ValueError("position factor index out of range")
        for name, cov in [("prior", self.prior.cov)] + [
                (f"position[{f.index}]", f.cov) for f in self.pos_factors]:
            if np.max(np.abs(cov - cov.T)) > 1e-9:
                raise ValueError(f"{name} covariance is not symmetric")
            np.linalg.cholesky(cov)
        return self


@dataclass
class FactorRow:
    """One weighted residual block: residual(xi) = residual + sum_j J_j xi_j."""

    tag: str
    indices: tuple
    jacobians: tuple
    residual: np.ndarray
    cov: np.ndarray
    weight: np.ndarray = None       # inverse covariance, cached
    source: object = None

    def __post_init__(self):
        if self.weight is None:
            np.linalg.cholesky(self.cov)   # rejects non-PD covariances
            self.weight = np.linalg.inv(self.cov)


@dataclass
class LinearizedProblem:
    rows: list
    n_states: int
    cost: float

    def normal_equations(self):
        dim = DIM * self.n_states
        info = np.zeros((dim, dim))
        rhs = np.zeros(dim)
        for row in self.rows:
            wj = [row.weight @ jac for jac in row.jacobians]
            wr = row.weight @ row.residual
            for a, ia in zip(row.jacobians, row.indices):
                sa = slice(DIM * ia, DIM * (ia + 1))
                rhs[sa] -= a.T @ wr
                for wb, ib in zip(wj, row.indices):
                    sb = slice(DIM * ib, DIM * (ib + 1))
                    info[sa, sb] += a.T @ wb
        return info, rhs


def measurement_jacobian(kind: Parametrization, x: TfgElement):
    """Jacobian of the position measurement w.r.t. the local correction;
    the single nonzero block is the attitude estimate in the p column,
    identical for all three retractions."""
    h = np.zeros((3, DIM))
    h[:, XI_P] = x.r
    return h


def _segment_transition(kind, w: Window, i) -> StepTransition:
    """Compound transition for segment i, cached on the base state value."""
    base = w.states[i]
    key = np.concatenate([base.r.ravel(), base.v, base.p, base.b_a, base.b_w])
    while len(w._cache) < len(w.segments):
        w._cache.append(None)
    entry = w._cache[i]
    if entry is not None and entry[0] == kind and np.array_equal(entry[1], key):
        return entry[2]
    seg = w.segments[i]
    omegas, accels, dts = seg.arrays()
    tr = compound_arrays(kind, base, omegas, accels, dts, w.gravity, seg.noise)
    w._cache[i] = (kind, key, tr)
    return tr


def linearize(kind: Parametrization, w: Window) -> LinearizedProblem:
    """Build the weighted least-squares problem at the current estimates.

    Raises numpy.linalg.LinAlgError on non-positive-definite weights.
    """
    rows = []
    cost = 0.0

    p0 = local_coordinates(kind, w.prior.mean, w.states[w.prior.index])
    p0_weight = prior_weight(kind, p0, w.prior.cov)
    row = FactorRow("prior", (w.prior.index,), (np.eye(DIM),), p0, p0_weight)
    rows.append(row)
    cost += float(p0 @ row.weight @ p0)

    w.dyn_factors = []
    for i in range(len(w.states) - 1):
        tr = _segment_transition(kind, w, i)
        w.dyn_factors.append(tr)
        u_hat = local_coordinates(kind, tr.predicted, w.states[i + 1])
        row = FactorRow("dynamics", (i, i + 1), (-tr.f, np.eye(DIM)), u_hat,
                        tr.q, source=w.segments[i])
        rows.append(row)
        cost += float(u_hat @ row.weight @ u_hat)

    for factor in w.pos_factors:
        x = w.states[factor.index]
        n_hat = factor.y - x.p
        h = measurement_jacobian(kind, x)
        row = FactorRow("position", (factor.index,), (-h,), n_hat,
                        factor.cov, source=factor)
        rows.append(row)
        cost += float(n_hat @ row.weight @ n_hat)

    return LinearizedProblem(rows, len(w.states), cost)


def _cost_at(kind, w: Window, states, lin: LinearizedProblem):
    """Nonlinear cost of candidate states under the linearization's weights.

    Residual means are fully recomputed (including re-propagating the IMU
    segments); a candidate outside a retraction's domain costs +inf.
    """
    try:
        cost = 0.0
        for row in lin.rows:
            if row.tag == "prior":
                r = local_coordinates(kind, w.prior.mean, states[w.prior.index])
            elif row.tag == "dynamics":
                i = row.indices[0]
                omegas, accels, dts = row.source.arrays()
                predicted = propagate_arrays(states[i], omegas, accels, dts,
                                             w.gravity)
                r = local_coordinates(kind, predicted, states[i + 1])
            else:
                r = row.source.y - states[row.indices[0]].p
            cost += float(r @ row.weight @ r)
        return cost
    except ValueError:
        return np.inf


def _solve_normal_equations(matrix, rhs):
    return np.linalg.solve(matrix, rhs)


@dataclass
class IterationRecord:
    cost_before: float
    cost_after: float
    lm_lambda: float
    accepted: bool


@dataclass
class SolveReport:
    iterations: int
    final_cost: float
    converged: bool
    trace: list
    reason: str = ""

    @property
    def lm_violations(self):
        """Accepted damped steps that increased the cost (should be zero)."""
        return sum(1 for rec in self.trace
                   if rec.accepted and rec.lm_lambda > 0
                   and rec.cost_after > rec.cost_before)


def solve(kind: Parametrization, w: Window, cfg: SolverConfig):
    """Iterate linearize / solve / retract until convergence.

    Returns a SolveReport; the window's states are updated in place on every
    accepted step. Raises SolverError if the normal equations cannot be
    solved.
    """
    lam = cfg.lm_initial_lambda
    trace = []
    final_cost = None
    converged = False
    reason = "max_iterations"
    iterations = 0
    cost_history = []

    for outer in range(cfg.max_iterations):
        iterations = outer + 1
        lin = linearize(kind, w)
        cost0 = lin.cost
        final_cost = cost0
        # the freshly weighted cost is the one comparable across iterations;
        # no net progress over three of them means the relinearize/solve
        # fixed point has been reached (the per-step costs may still wander
        # with the reweighting)
        cost_history.append(cost0)
        if len(cost_history) >= 4:
            net = cost_history[-4] - min(cost_history[-3:])
            if net <= cfg.cost_tolerance * max(cost_history[-4], 1e-12):
                return SolveReport(iterations, cost0, True, trace, "cost_plateau")
        info, rhs = lin.normal_equations()
        dim = info.shape[0]

        accepted_cost = None
        first_trial = True
        while True:
            damped = info + lam * np.eye(dim) if lam > 0 else info
            try:
                xi = _solve_normal_equations(damped, rhs)
            except np.linalg.LinAlgError:
                raise SolverError("normal equations are rank deficient", iterations)
            step_norm = float(np.linalg.norm(xi))
            if step_norm < cfg.step_tolerance:
                return SolveReport(iterations, cost0, True, trace, "step_tolerance")
            candidate = [retract(kind, s, xi[DIM * i:DIM * (i + 1)])
                         for i, s in enumerate(w.states)]
            cand_cost = _cost_at(kind, w, candidate, lin)
            accept = (lam == 0) or (cand_cost < cost0)
            trace.append(IterationRecord(cost0, cand_cost, lam, accept))
            within_tol = (abs(cost0 - cand_cost)
                          <= cfg.cost_tolerance * max(cost0, 1e-12))
            if accept:
                w.states = candidate
                if lam > 0:
                    lam = lam / 10.0
                if within_tol:
                    return SolveReport(iterations, cand_cost, True, trace,
                                       "cost_tolerance")
                accepted_cost = cand_cost
                break
            # an undamped trial that cannot change the cost beyond the
            # tolerance means this linearization is exhausted
            if within_tol and first_trial and lam <= cfg.lm_initial_lambda:
                return SolveReport(iterations, cost0, True, trace,
                                   "cost_tolerance")
            first_trial = False
            lam *= 10.0
            if lam > 1e12:
                return SolveReport(iterations, cost0, True, trace, "lm_stalled")

        final_cost = accepted_cost

    return SolveReport(iterations, final_cost, converged, trace, reason)


def _retraction_jacobian(kind, p):
    if kind == Parametrization.TFG:
        return tfg.left_jacobian(p)
    if kind == Parametrization.SE23:
        j = np.eye(DIM)
        j[0:9, 0:9] = se23_left_jacobian(p[0:9])
        return j
    return np.eye(DIM)


def marginalize_oldest(kind: Parametrization, w: Window) -> Window:
    """Schur-complement the oldest state out of the linearized system and
    attach the resulting dense prior to the new oldest state. The
    linearization point is frozen at the current estimates."""
    if len(w.states) < 2:
        raise ValueError("cannot marginalize a single-state window")
    if w.prior.index != 0:
        raise ValueError("marginalization expects the prior on the oldest state")

    lin = linearize(kind, w)
    info = np.zeros((2 * DIM, 2 * DIM))
    rhs = np.zeros(2 * DIM)
    for row in lin.rows:
        if not all(i <= 1 for i in row.indices):
            continue
        if 0 not in row.indices:
            continue
        wj = [row.weight @ jac for jac in row.jacobians]
        wr = row.weight @ row.residual
        for a, ia in zip(row.jacobians, row.indices):
            sa = slice(DIM * ia, DIM * (ia + 1))
            rhs[sa] -= a.T @ wr
            for wb, ib in zip(wj, row.indices):
                sb = slice(DIM * ib, DIM * (ib + 1))
                info[sa, sb] += a.T @ wb

    i00 = info[:DIM, :DIM]
    i01 = info[:DIM, DIM:]
    i11 = info[DIM:, DIM:]
    try:
        gain = np.linalg.solve(i00, np.column_stack([i01, rhs[:DIM]]))
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular marginal block")
    info_new = i11 - i01.T @ gain[:, :DIM]
    rhs_new = rhs[DIM:] - i01.T @ gain[:, DIM]
    info_new = 0.5 * (info_new + info_new.T)
    try:
        mean_offset = np.linalg.solve(info_new, rhs_new)
        cov_new = np.linalg.inv(info_new)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("marginal information is singular")
    cov_new = 0.5 * (cov_new + cov_new.T)

    # express the marginal as a prior (mean element, covariance at the mean)
    new_mean = retract(kind, w.states[1], mean_offset)
    j = _retraction_jacobian(kind, -mean_offset)
    cov_mean = j @ cov_new @ j.T
    cov_mean = 0.5 * (cov_mean + cov_mean.T)

    w.times = w.times[1:]
    w.states = w.states[1:]
    w.segments = w.segments[1:]
    w._cache = w._cache[1:]
    w.dyn_factors = []
    w.pos_factors = [PositionFactor(f.index - 1, f.y, f.cov)
                     for f in w.pos_factors if f.index != 0]
    w.prior = PriorFactor(0, new_mean, cov_mean)
    return w


def covariance_at(kind: Parametrization, w: Window, index):
    """Marginal covariance block of one state at the current linearization,
    in the active retraction's tangent coordinates."""
    lin = linearize(kind, w)
    info, _ = lin.normal_equations()
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("window information matrix is singular")
    block = cov[DIM * index:DIM * (index + 1), DIM * index:DIM * (index + 1)]
    return 0.5 * (block + block.T)
