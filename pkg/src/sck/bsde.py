"""Dual backward equation solver and the identities built on it.

The backward equation dY = -(A^T Y + C^T Z) dt + Z dW with terminal value xi
is linear, so its solution has the flow-adjoint representation

    Y_t = E[ Phi(t, T)^T xi | F_t ],

where Phi(t, T) is the fundamental matrix of the uncontrolled forward
equation from t to T.  The solver estimates these conditional expectations
on a coarse grid of regression times: terminal values that are
deterministic need only the plain ensemble mean, while terminals affine in
W_T are regressed on polynomials of W_t (the true conditional expectation
is itself affine in W_t, so low-degree regression is exact up to Monte
Carlo noise).  Z is read off the martingale part of Y: the conditional
covariance of the centered one-step increment of Y with dW/dt.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, DomainError, RegressionError
from .sde import (
    Control,
    SimConfig,
    _check_blowup,
    _control_at,
    _step_normals,
    _validate_control,
)
from .systems import StochasticSystem, as_vector
from .systems import yosida as yosida_pair

__all__ = [
    "DeterministicTerminal",
    "LinearInWTTerminal",
    "BsdeSolution",
    "DualityReport",
    "AprioriSample",
    "AprioriReport",
    "ConvergenceRow",
    "ConvergenceReport",
    "solve_dual_bsde",
    "duality_check",
    "apriori_bound_check",
    "approximation_convergence",
]


@dataclass(frozen=True)
class DeterministicTerminal:
    """Terminal value Y_T = xi with a fixed vector xi."""

    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi", as_vector(self.xi, "xi"))

    def per_path(self, w_T: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.xi, (w_T.shape[0], self.xi.shape[0]))

    def scaled(self, c: float) -> "DeterministicTerminal":
        return DeterministicTerminal(c * self.xi)


@dataclass(frozen=True)
class LinearInWTTerminal:
    """Terminal value Y_T = xi0 + xi1 * W_T."""

    xi0: np.ndarray
    xi1: np.ndarray

    def __post_init__(self):
        xi0 = as_vector(self.xi0, "xi0")
        xi1 = as_vector(self.xi1, "xi1")
        if xi0.shape != xi1.shape:
            raise DimensionError("xi0 and xi1 must have the same length")
        object.__setattr__(self, "xi0", xi0)
        object.__setattr__(self, "xi1", xi1)

    def per_path(self, w_T: np.ndarray) -> np.ndarray:
        return self.xi0[None, :] + w_T[:, None] * self.xi1[None, :]

    def scaled(self, c: float) -> "LinearInWTTerminal":
        return LinearInWTTerminal(c * self.xi0, c * self.xi1)


Terminal = Union[DeterministicTerminal, LinearInWTTerminal]


def _terminal_dim(terminal: Terminal) -> int:
    if isinstance(terminal, DeterministicTerminal):
        return terminal.xi.shape[0]
    if isinstance(terminal, LinearInWTTerminal):
        return terminal.xi0.shape[0]
    raise DomainError(f"unsupported terminal specification: {terminal!r}")


@dataclass
class BsdeSolution:
    """Solution estimate on the regression-time grid.

    Y, Z have shape (n_times, n_paths, n).  For deterministic terminals the
    closed form Y_t = exp((T-t) A^T) xi is attached as ``y_exact`` and Z is
    exactly zero.  ``w`` holds the Brownian values W_t per path at the grid
    times.
    """

    times: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    terminal: Terminal
    w: np.ndarray
    y_exact: Optional[np.ndarray] = None


def _regression_steps(cfg: SimConfig, n_times: int) -> np.ndarray:
    if n_times < 2:
        raise DomainError("need at least 2 regression times")
    steps = np.unique(np.round(np.linspace(0, cfg.n_steps, n_times)).astype(int))
    return steps


def _cond_exp(values: np.ndarray, w: np.ndarray, degree: int) -> np.ndarray:
    """Per-path conditional expectation estimate E[values | w].

    Least squares on a standardized polynomial basis of w.  A constant w
    (e.g. at t = 0) degenerates to the plain ensemble mean, which is the
    correct conditional expectation there.
    """
    n_paths = values.shape[0]
    mean_w = float(np.mean(w))
    std_w = float(np.std(w))
    if degree == 0 or std_w <= 1e-300:
        mean = np.mean(values, axis=0)
        return np.broadcast_to(mean, values.shape)
    z = (w - mean_w) / std_w
    design = np.vander(z, degree + 1, increasing=True)
    beta, _, rank, _ = np.linalg.lstsq(design, values, rcond=None)
    if rank < degree + 1:
        raise RegressionError(
            f"regression design is rank-deficient (rank {rank} < {degree + 1}); "
            "increase n_paths or lower regression_degree"
        )
    return design @ beta


def solve_dual_bsde(
    sys: StochasticSystem,
    terminal: Terminal,
    cfg: SimConfig,
    n_regression_times: int = 11,
) -> BsdeSolution:
    """Monte Carlo solution of dY = -(A^T Y + C^T Z) dt + Z dW, Y_T = xi.

    Segment flows of the uncontrolled forward equation are chained backward
    between consecutive regression times, giving per-path samples
    V_j = Phi(t_j, T)^T xi without ever inverting a flow matrix;
    conditional expectations in W_{t_j} then produce Y.  Z at t_j is the
    regression of (Y_{t_{j+1}} - E[Y_{t_{j+1}} | F_{t_j}]) * dW_j / dt_j,
    i.e. the covariance of the martingale part of Y with the noise; it
    vanishes identically for deterministic terminals, matching the exact
    solution.  The last grid point carries the previous Z value.

    Noise is drawn from the same counter-based stream as every other
    simulation with this cfg, so forward and backward solvers pair pathwise.
    """
    n = sys.n
    if _terminal_dim(terminal) != n:
        raise DimensionError(f"terminal dimension must equal n={n}")
    deterministic = isinstance(terminal, DeterministicTerminal)
    degree = 0 if deterministic else cfg.regression_degree

    steps = _regression_steps(cfg, n_regression_times)
    R = len(steps)
    P = cfg.n_paths
    dt = cfg.dt
    root = np.sqrt(dt)
    A, C = sys.A, sys.C

    # Brownian values at the regression times
    w_at = np.zeros((P, R))
    j = 0
    w = np.zeros(P)
    for k in range(cfg.n_steps):
        w = w + _step_normals(cfg.seed, k, P) * root
        if k + 1 == steps[j + 1]:
            j += 1
            w_at[:, j] = w

    xi = terminal.per_path(w_at[:, -1])

    # V_j = Phi(t_j, T)^T xi accumulated backward: the flow is the ordered
    # product of per-step factors F_k = I + A dt + C dW_k, so its transpose
    # applies to a vector by walking the steps in reverse, v <- F_k^T v.
    # The counter-based noise keys make the reverse-order redraw exact.
    V = np.empty((R, P, n))
    V[R - 1] = xi
    cur = np.array(xi, dtype=float)
    for j in range(R - 2, -1, -1):
        for k in range(steps[j + 1] - 1, steps[j] - 1, -1):
            dw = _step_normals(cfg.seed, k, P) * root
            cur = cur + (cur @ A) * dt + (cur @ C) * dw[:, None]
            _check_blowup(cur, k, dt)
        V[j] = cur

    Y = np.empty((R, P, n))
    for j in range(R):
        Y[j] = _cond_exp(V[j], w_at[:, j], degree)

    Z = np.zeros((R, P, n))
    if not deterministic:
        for j in range(R - 1):
            ddt = dt * (steps[j + 1] - steps[j])
            predicted = _cond_exp(Y[j + 1], w_at[:, j], degree)
            centered = Y[j + 1] - predicted
            dw_seg = w_at[:, j + 1] - w_at[:, j]
            target = centered * (dw_seg / ddt)[:, None]
            Z[j] = _cond_exp(target, w_at[:, j], degree)
        Z[R - 1] = Z[R - 2]

    times = dt * steps.astype(float)
    y_exact = None
    if deterministic:
        T = cfg.T
        y_exact = np.stack(
            [scipy.linalg.expm((T - t) * A.T) @ terminal.xi for t in times]
        )
    return BsdeSolution(times=times, Y=Y, Z=Z, terminal=terminal, w=w_at, y_exact=y_exact)


def _forward_states_at(
    sys: StochasticSystem,
    x0: np.ndarray,
    control: Control,
    cfg: SimConfig,
    steps: np.ndarray,
) -> np.ndarray:
    """States at the given grid steps, shape (n_paths, len(steps), n)."""
    K = cfg.n_steps
    control = _validate_control(control, sys, K)
    pos = {int(k): i for i, k in enumerate(steps)}
    X = np.tile(x0, (cfg.n_paths, 1))
    out = np.empty((cfg.n_paths, len(steps), sys.n))
    if 0 in pos:
        out[:, pos[0]] = X
    A_T, B, C_T = sys.A.T, sys.B, sys.C.T
    dt = cfg.dt
    for k in range(K):
        dw = _step_normals(cfg.seed, k, cfg.n_paths) * np.sqrt(dt)
        u = _control_at(control, k, X, sys.m)
        X = X + (X @ A_T + u @ B.T) * dt + (X @ C_T) * dw[:, None]
        _check_blowup(X, k + 1, dt)
        if (k + 1) in pos:
            out[:, pos[k + 1]] = X
    return out


@dataclass
class DualityReport:
    """Monte Carlo check of E<X_T, Y_T> = E<x0, Y_0> + E int <B u_s, Y_s> ds.

    ``stderr`` combines the two estimators' standard errors in quadrature;
    the pass rule allows 3 standard errors plus an explicit discretization
    allowance proportional to dt.  ``feedback_control`` marks runs whose
    control is a state feedback (supported, treated as experimental).
    """

    lhs: float
    rhs: float
    stderr: float
    bias_allowance: float
    dt: float
    passed: bool
    feedback_control: bool = False


def duality_check(
    sys: StochasticSystem,
    x0,
    control: Control,
    terminal: Terminal,
    cfg: SimConfig,
    n_regression_times: int = 11,
) -> DualityReport:
    """Verify the forward/backward duality identity on a shared ensemble.

    The forward paths and the backward solver consume the identical
    counter-based increments, so both sides are evaluated on the same
    probability-space sample.  The time integral on the right side uses the
    trapezoid rule over the regression grid; its bias is covered by the
    dt-proportional allowance in the pass rule.
    """
    from .sde import FeedbackControl  # local import to avoid cycle noise

    x0 = as_vector(x0, "x0")
    if x0.shape[0] != sys.n:
        raise DimensionError(f"x0 must have length n={sys.n}")
    sol = solve_dual_bsde(sys, terminal, cfg, n_regression_times)
    steps = _regression_steps(cfg, n_regression_times)
    states = _forward_states_at(sys, x0, control, cfg, steps)

    xi = terminal.per_path(sol.w[:, -1])
    lhs_samples = np.einsum("pi,pi->p", states[:, -1], xi)

    K = cfg.n_steps
    ctrl = _validate_control(control, sys, K)
    integrand = np.empty((len(steps), cfg.n_paths))
    for j, k in enumerate(steps):
        u = _control_at(ctrl, min(int(k), K - 1), states[:, j], sys.m)
        integrand[j] = np.einsum("pi,pi->p", u @ sys.B.T, sol.Y[j])
    rhs_samples = sol.Y[0] @ x0 + np.trapezoid(integrand, x=sol.times, axis=0)

    lhs = float(np.mean(lhs_samples))
    rhs = float(np.mean(rhs_samples))
    se_lhs = float(np.std(lhs_samples, ddof=1) / np.sqrt(cfg.n_paths))
    se_rhs = float(np.std(rhs_samples, ddof=1) / np.sqrt(cfg.n_paths))
    stderr = float(np.hypot(se_lhs, se_rhs))
    norm_a = np.linalg.norm(sys.A, 2)
    norm_c = np.linalg.norm(sys.C, 2)
    allowance = float((1.0 + norm_a + norm_c**2) * (abs(lhs) + abs(rhs) + 1.0))
    passed = abs(lhs - rhs) <= 3.0 * stderr + cfg.dt * allowance
    return DualityReport(
        lhs=lhs,
        rhs=rhs,
        stderr=stderr,
        bias_allowance=allowance,
        dt=cfg.dt,
        passed=bool(passed),
        feedback_control=isinstance(control, FeedbackControl),
    )


@dataclass(frozen=True)
class AprioriSample:
    index: int
    xi_mean_square: float
    sup_mean_y_square: float
    int_mean_z_square: float
    ratio: float


@dataclass
class AprioriReport:
    """Empirical energy-bound ratios (sup E|Y|^2 + E int |Z|^2) / E|xi|^2.

    ``k_hat`` is the largest observed ratio.  Samples that are pure
    rescalings of one another are grouped; ``scale_spread`` is the worst
    max/min ratio spread inside a group and must stay close to 1 for a
    linear equation (the bound constant cannot depend on the terminal).
    """

    k_hat: float
    samples: list[AprioriSample]
    scale_spread: float
    scale_ok: bool


def _stacked_terminal(t: Terminal) -> np.ndarray:
    if isinstance(t, DeterministicTerminal):
        return np.concatenate([t.xi, np.zeros_like(t.xi)])
    return np.concatenate([t.xi0, t.xi1])


def apriori_bound_check(
    sys: StochasticSystem,
    terminal_samples: Sequence[Terminal],
    cfg: SimConfig,
    n_regression_times: int = 11,
) -> AprioriReport:
    """Estimate the a-priori energy bound constant over terminal samples."""
    samples = list(terminal_samples)
    if len(samples) < 5:
        raise DomainError("need at least 5 terminal samples")
    records = []
    vecs = []
    for i, term in enumerate(samples):
        sol = solve_dual_bsde(sys, term, cfg, n_regression_times)
        xi = term.per_path(sol.w[:, -1])
        xi_ms = float(np.mean(np.sum(xi * xi, axis=1)))
        if xi_ms <= 0:
            raise DomainError(f"terminal sample {i} has zero mean square")
        mean_y2 = np.mean(np.sum(sol.Y * sol.Y, axis=2), axis=1)  # (R,)
        mean_z2 = np.mean(np.sum(sol.Z * sol.Z, axis=2), axis=1)
        sup_y = float(np.max(mean_y2))
        int_z = float(np.trapezoid(mean_z2, x=sol.times))
        records.append(
            AprioriSample(
                index=i,
                xi_mean_square=xi_ms,
                sup_mean_y_square=sup_y,
                int_mean_z_square=int_z,
                ratio=(sup_y + int_z) / xi_ms,
            )
        )
        vecs.append(_stacked_terminal(term))

    norms = sorted(np.sqrt(r.xi_mean_square) for r in records)
    for a, b in zip(norms, norms[1:]):
        if abs(a - b) <= 1e-12 * max(1.0, abs(b)):
            raise DomainError("terminal samples must have distinct norms")

    # group pure rescalings of the same shape (collinear stacked terminals)
    spread = 1.0
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            vi, vj = vecs[i], vecs[j]
            cross = abs(float(vi @ vj))
            if cross >= (1.0 - 1e-12) * np.linalg.norm(vi) * np.linalg.norm(vj):
                ri, rj = records[i].ratio, records[j].ratio
                hi, lo = max(ri, rj), min(ri, rj)
                if lo > 0:
                    spread = max(spread, hi / lo)
    k_hat = max(r.ratio for r in records)
    return AprioriReport(
        k_hat=float(k_hat),
        samples=records,
        scale_spread=float(spread),
        scale_ok=bool(spread <= 1.5),
    )


@dataclass(frozen=True)
class ConvergenceRow:
    nres: int
    delta: float
    err_yosida: float      # resolvent-smoothing error at fixed delta
    err_mollifier: float   # mollified-vs-exact semigroup error (delta only)
    err_total: float       # smoothed+mollified against the exact semigroup
    err_bsde: Optional[float] = None


@dataclass
class ConvergenceReport:
    """Approximation-scheme errors over (nres, delta) pairs.

    The two limits are encoded as monotonicity flags:
    ``yosida_decreasing_in_n`` -- at every delta, the smoothing gap is
    strictly decreasing along n_list; ``mollifier_decreasing_in_delta`` --
    the mollifier gap is strictly decreasing along delta_list;
    ``total_decreasing_in_delta_at_max_n`` -- at the largest n, the total
    gap against the exact semigroup is strictly decreasing along delta_list
    (at small n the smoothing floor dominates and the total gap may
    plateau or not decrease, which is expected).  BSDE flags mirror these
    when the experiment includes the backward-solver column.
    """

    rows: list[ConvergenceRow]
    n_list: list[int]
    delta_list: list[float]
    lam: float
    yosida_decreasing_in_n: bool
    mollifier_decreasing_in_delta: bool
    total_decreasing_in_delta_at_max_n: bool
    bsde_decreasing_in_n: Optional[bool] = None
    bsde_decreasing_in_delta_at_max_n: Optional[bool] = None

    def row(self, nres: int, delta: float) -> ConvergenceRow:
        for r in self.rows:
            if r.nres == nres and r.delta == delta:
                return r
        raise KeyError((nres, delta))


def _sup_semigroup_gap(M1: np.ndarray, M2: np.ndarray, times: np.ndarray, probes: np.ndarray) -> float:
    gap = 0.0
    for t in times:
        D = (scipy.linalg.expm(t * M1) - scipy.linalg.expm(t * M2)) @ probes
        gap = max(gap, float(np.max(np.linalg.norm(D, axis=0))))
    return gap


def approximation_convergence(
    sys: StochasticSystem,
    terminal: Optional[Terminal],
    cfg: SimConfig,
    n_list: Sequence[int],
    delta_list: Sequence[float],
    lam: float = 1.0,
    n_time_points: int = 21,
    n_regression_times: int = 11,
) -> ConvergenceReport:
    """Two-parameter convergence experiment for the approximation scheme.

    Semigroup part: with E_d = exp(delta*A) and (J, An) the resolvent
    smoothing at level n, compares the matrix semigroups generated by

        An + lam * J^T E_d C E_d J     (smoothed + mollified)
        A  + lam * E_d C E_d           (mollified)
        A  + lam * C                   (exact)

    on a probe set over the time grid [0, T]; the first gap shrinks with n
    at fixed delta, the second with delta.  With A = 0 every operator
    coincides and all gaps vanish identically.

    BSDE part (when ``terminal`` is given): re-solves the dual equation with
    the noise operator replaced by its (n, delta)-mollification on the same
    noise stream and reports sup_t mean |Y_mod - Y|^2.
    """
    n_list = [int(v) for v in n_list]
    delta_list = [float(d) for d in delta_list]
    if not n_list or not delta_list:
        raise DomainError("n_list and delta_list must be non-empty")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise DomainError("n_list must be strictly increasing")
    if any(b >= a for a, b in zip(delta_list, delta_list[1:])):
        raise DomainError("delta_list must be strictly decreasing")
    if any(v < 1 for v in n_list):
        raise DomainError("n_list entries must be >= 1")
    if any(d <= 0 for d in delta_list):
        raise DomainError("delta_list entries must be positive")

    A, C = sys.A, sys.C
    dim = sys.n
    times = np.linspace(0.0, cfg.T, n_time_points)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    extra = rng.standard_normal((dim, 2))
    extra /= np.linalg.norm(extra, axis=0)
    probes = np.hstack([np.eye(dim), extra])
    M_exact = A + lam * C

    sol_ref = None
    if terminal is not None:
        sol_ref = solve_dual_bsde(sys, terminal, cfg, n_regression_times)

    rows = []
    for delta in delta_list:
        E_d = scipy.linalg.expm(delta * A)
        C_d = E_d @ C @ E_d
        M_moll = A + lam * C_d
        err_moll = _sup_semigroup_gap(M_moll, M_exact, times, probes)
        for nres in n_list:
            J, An = yosida_pair(A, nres)
            M_full = An + lam * (J.T @ C_d @ J)
            err_yos = _sup_semigroup_gap(M_full, M_moll, times, probes)
            err_tot = _sup_semigroup_gap(M_full, M_exact, times, probes)
            err_bsde = None
            if sol_ref is not None:
                sys_mod = StochasticSystem(sys.A, sys.B, C=J.T @ C_d @ J, gamma=sys.gamma)
                sol_mod = solve_dual_bsde(sys_mod, terminal, cfg, n_regression_times)
                diff = sol_mod.Y - sol_ref.Y
                err_bsde = float(np.max(np.mean(np.sum(diff * diff, axis=2), axis=1)))
            rows.append(
                ConvergenceRow(nres, delta, err_yos, err_moll, err_tot, err_bsde)
            )

    def decreasing(seq):
        return all(b < a for a, b in zip(seq, seq[1:]))

    by = {(r.nres, r.delta): r for r in rows}
    n_max = n_list[-1]
    yos_flag = all(
        decreasing([by[(n_, d)].err_yosida for n_ in n_list]) for d in delta_list
    )
    moll_flag = decreasing([by[(n_max, d)].err_mollifier for d in delta_list])
    tot_flag = decreasing([by[(n_max, d)].err_total for d in delta_list])
    bsde_n = bsde_d = None
    if sol_ref is not None:
        bsde_n = all(
            decreasing([by[(n_, d)].err_bsde for n_ in n_list]) for d in delta_list
        )
        bsde_d = decreasing([by[(n_max, d)].err_bsde for d in delta_list])
    return ConvergenceReport(
        rows=rows,
        n_list=n_list,
        delta_list=delta_list,
        lam=lam,
        yosida_decreasing_in_n=yos_flag,
        mollifier_decreasing_in_delta=moll_flag,
        total_decreasing_in_delta_at_max_n=tot_flag,
        bsde_decreasing_in_n=bsde_n,
        bsde_decreasing_in_delta_at_max_n=bsde_d,
    )
