"""Seeded Euler-Maruyama engine for the forward SDE and its fundamental flow.

Noise is a single scalar Brownian motion.  Increments come from one Philox
stream per (seed, step_index), with the path index as the offset inside the
step block, so every value is a pure function of (seed, path, step): results
are reproducible, independent of evaluation order, and any sub-block of
steps can be redrawn on demand without materialising the whole array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .exceptions import DimensionError, DomainError, StabilityError
from .systems import StochasticSystem, as_matrix, as_vector

__all__ = [
    "SimConfig",
    "ZeroControl",
    "ConstantControl",
    "PiecewiseConstantControl",
    "FeedbackControl",
    "PathEnsemble",
    "FlowEnsemble",
    "brownian_increments",
    "simulate_forward",
    "simulate_flow",
    "ensemble_moments",
    "girsanov_check",
    "fit_convergence_order",
]

#: any state coordinate beyond this magnitude aborts the run
BLOWUP_LIMIT = 1e12


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo run parameters.

    T                  horizon (> 0)
    dt                 Euler step; T/dt must be an integer within 1e-12
    n_paths            ensemble size (>= 2)
    seed               64-bit unsigned seed of the counter-based generator
    regression_degree  polynomial degree in W_t for conditional expectations
    """

    T: float
    dt: float
    n_paths: int
    seed: int
    regression_degree: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise DomainError(f"T must be positive, got {self.T}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise DomainError(f"dt must be positive, got {self.dt}")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-12 * max(1.0, ratio):
            raise DomainError(f"T/dt = {ratio!r} is not an integer")
        if self.n_paths < 2:
            raise DomainError("n_paths must be >= 2")
        if self.seed < 0 or self.seed > 0xFFFFFFFFFFFFFFFF:
            raise DomainError("seed must fit in an unsigned 64-bit integer")
        if not (0 <= self.regression_degree <= 6):
            raise DomainError("regression_degree must lie in [0, 6]")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def _step_normals(seed: int, step: int, n_paths: int) -> np.ndarray:
    """Standard normals for one time step, keyed by (seed, step)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(step),))
    return np.random.Generator(np.random.Philox(ss)).standard_normal(n_paths)


def brownian_increments(cfg: SimConfig, k0: int = 0, k1: Optional[int] = None) -> np.ndarray:
    """Increment block dW[:, k0:k1] of shape (n_paths, k1 - k0)."""
    if k1 is None:
        k1 = cfg.n_steps
    if not (0 <= k0 <= k1 <= cfg.n_steps):
        raise DomainError(f"invalid step range [{k0}, {k1})")
    out = np.empty((cfg.n_paths, k1 - k0))
    root = np.sqrt(cfg.dt)
    for k in range(k0, k1):
        out[:, k - k0] = _step_normals(cfg.seed, k, cfg.n_paths)
    out *= root
    return out


# ---------------------------------------------------------------------------
# control specifications


@dataclass(frozen=True)
class ZeroControl:
    """u = 0."""


@dataclass(frozen=True)
class ConstantControl:
    """u_t = u for a fixed vector u of length m."""

    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", as_vector(self.u, "u"))


@dataclass(frozen=True)
class PiecewiseConstantControl:
    """Deterministic control, constant on each grid step: values[k] on step k."""

    values: np.ndarray

    def __post_init__(self):
        v = as_matrix(self.values, "values")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class FeedbackControl:
    """Linear state feedback u_t = K X_t with K of shape (m, n)."""

    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", as_matrix(self.K, "K"))


Control = Union[ZeroControl, ConstantControl, PiecewiseConstantControl, FeedbackControl]


def _validate_control(control: Control, sys: StochasticSystem, n_steps: int) -> Control:
    if isinstance(control, ZeroControl):
        return control
    if isinstance(control, ConstantControl):
        if control.u.shape[0] != sys.m:
            raise DimensionError(f"constant control must have length m={sys.m}")
        return control
    if isinstance(control, PiecewiseConstantControl):
        if control.values.shape != (n_steps, sys.m):
            raise DimensionError(
                f"piecewise control must have shape ({n_steps}, {sys.m}), "
                f"got {control.values.shape}"
            )
        return control
    if isinstance(control, FeedbackControl):
        if control.K.shape != (sys.m, sys.n):
            raise DimensionError(f"feedback gain must have shape ({sys.m}, {sys.n})")
        return control
    raise DomainError(f"unsupported control specification: {control!r}")


def _bu_term(control: Control, B: np.ndarray, k: int, states: np.ndarray) -> Union[float, np.ndarray]:
    """B u_k for all paths; 0.0, a (n,) vector, or an (n_paths, n) array."""
    if isinstance(control, ZeroControl):
        return 0.0
    if isinstance(control, ConstantControl):
        return B @ control.u
    if isinstance(control, PiecewiseConstantControl):
        return B @ control.values[k]
    return (states @ control.K.T) @ B.T


def _control_at(control: Control, k: int, states: np.ndarray, m: int) -> np.ndarray:
    """u_k per path, shape (n_paths, m)."""
    n_paths = states.shape[0]
    if isinstance(control, ZeroControl):
        return np.zeros((n_paths, m))
    if isinstance(control, ConstantControl):
        return np.broadcast_to(control.u, (n_paths, m))
    if isinstance(control, PiecewiseConstantControl):
        return np.broadcast_to(control.values[k], (n_paths, m))
    return states @ control.K.T


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class PathEnsemble:
    """State trajectories: times (K+1,), states (n_paths, K+1, n),
    increments (n_paths, K)."""

    times: np.ndarray
    states: np.ndarray
    increments: np.ndarray


@dataclass
class FlowEnsemble:
    """Fundamental-matrix trajectories: flows (n_paths, K+1, n, n), with
    flows[:, 0] = identity."""

    times: np.ndarray
    flows: np.ndarray


def _check_blowup(X: np.ndarray, step: int, dt: float):
    if not np.all(np.isfinite(X)) or np.max(np.abs(X)) > BLOWUP_LIMIT:
        raise StabilityError(
            f"ensemble blew up at step {step} (dt={dt}); use a smaller time step"
        )


def simulate_forward(
    sys: StochasticSystem,
    x0,
    control: Control,
    cfg: SimConfig,
    record_steps: Optional[Sequence[int]] = None,
) -> PathEnsemble:
    """Euler-Maruyama paths of dX = (A X + B u) dt + C X dW.

    The update is X <- X + (A X + B u_k) dt + (C X) dW_k with the step noise
    drawn from the counter-based source, so the result is independent of how
    paths would be scheduled.  ``record_steps`` restricts the stored time
    slices (0 and the final step are always included); the returned
    increments cover the full grid either way.

    Raises
    ------
    StabilityError  when any |state| exceeds 1e12.
    """
    x0 = as_vector(x0, "x0")
    if x0.shape[0] != sys.n:
        raise DimensionError(f"x0 must have length n={sys.n}")
    K = cfg.n_steps
    control = _validate_control(control, sys, K)
    if record_steps is None:
        recorded = list(range(K + 1))
    else:
        recorded = sorted(set(int(k) for k in record_steps) | {0, K})
        if recorded[0] < 0 or recorded[-1] > K:
            raise DomainError("record_steps out of range")
    rec_pos = {k: i for i, k in enumerate(recorded)}

    A_T, B, C_T = sys.A.T, sys.B, sys.C.T
    X = np.tile(x0, (cfg.n_paths, 1))
    states = np.empty((cfg.n_paths, len(recorded), sys.n))
    states[:, 0] = X
    increments = np.empty((cfg.n_paths, K))
    dt = cfg.dt
    for k in range(K):
        dw = _step_normals(cfg.seed, k, cfg.n_paths) * np.sqrt(dt)
        increments[:, k] = dw
        drift = X @ A_T
        bu = _bu_term(control, B, k, X)
        X = X + (drift + bu) * dt + (X @ C_T) * dw[:, None]
        _check_blowup(X, k + 1, dt)
        if (k + 1) in rec_pos:
            states[:, rec_pos[k + 1]] = X
    return PathEnsemble(times=dt * np.array(recorded, dtype=float), states=states, increments=increments)


def simulate_flow(
    sys: StochasticSystem,
    cfg: SimConfig,
    k0: int = 0,
    k1: Optional[int] = None,
    record: bool = True,
) -> FlowEnsemble:
    """Euler-Maruyama fundamental matrices of the uncontrolled equation.

    Runs the same recursion as :func:`simulate_forward` column-wise from the
    identity over steps [k0, k1), consuming exactly the increments keyed by
    those steps, so flows pair with any path ensemble drawn from the same
    seed.  With ``record=False`` only the initial and final matrices are
    kept (the terminal flow is the product of all step factors).
    """
    K = cfg.n_steps
    if k1 is None:
        k1 = K
    if not (0 <= k0 <= k1 <= K):
        raise DomainError(f"invalid step range [{k0}, {k1})")
    A, C = sys.A, sys.C
    n = sys.n
    Phi = np.broadcast_to(np.eye(n), (cfg.n_paths, n, n)).copy()
    steps = k1 - k0
    n_rec = steps + 1 if record else (2 if steps else 1)
    flows = np.empty((cfg.n_paths, n_rec, n, n))
    flows[:, 0] = Phi
    dt = cfg.dt
    for j, k in enumerate(range(k0, k1)):
        dw = _step_normals(cfg.seed, k, cfg.n_paths) * np.sqrt(dt)
        Phi = Phi + np.matmul(A, Phi) * dt + np.matmul(C, Phi) * dw[:, None, None]
        _check_blowup(Phi, k + 1, dt)
        if record:
            flows[:, j + 1] = Phi
    if not record and steps:
        flows[:, 1] = Phi
    times = dt * (np.arange(k0, k1 + 1, dtype=float) if record else np.array([k0, k1][: n_rec], dtype=float))
    return FlowEnsemble(times=times, flows=flows)


# ---------------------------------------------------------------------------
# measure-change consistency experiment


def ensemble_moments(
    sys: StochasticSystem,
    x0,
    control: Control,
    cfg: SimConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-time ensemble mean and second moment of the forward states.

    Streams over the grid without storing trajectories; returns
    (times, mean, second_moment) with the moment arrays shaped (K+1, n).
    """
    x0 = as_vector(x0, "x0")
    if x0.shape[0] != sys.n:
        raise DimensionError(f"x0 must have length n={sys.n}")
    K = cfg.n_steps
    control = _validate_control(control, sys, K)
    A_T, B, C_T = sys.A.T, sys.B, sys.C.T
    X = np.tile(x0, (cfg.n_paths, 1))
    mean = np.empty((K + 1, sys.n))
    second = np.empty((K + 1, sys.n))
    mean[0] = X.mean(axis=0)
    second[0] = np.mean(X * X, axis=0)
    dt = cfg.dt
    for k in range(K):
        dw = _step_normals(cfg.seed, k, cfg.n_paths) * np.sqrt(dt)
        bu = _bu_term(control, B, k, X)
        X = X + (X @ A_T + bu) * dt + (X @ C_T) * dw[:, None]
        _check_blowup(X, k + 1, dt)
        mean[k + 1] = X.mean(axis=0)
        second[k + 1] = np.mean(X * X, axis=0)
    return cfg.times, mean, second


def girsanov_check(
    sys: StochasticSystem,
    lam: float,
    x0,
    control: Control,
    cfg: SimConfig,
    dt_list: Sequence[float],
) -> list[tuple[float, float]]:
    """Compare the exponential-martingale transform with the direct scheme.

    For each dt, simulate X from the original equation and, in lockstep on
    the same increments, X~ from

        dX~ = ((A + lam*C) X~ + B v) dt + (C + lam*I) X~ dW,
        v_t = E_t u_t,   E_t = exp(lam W_t - lam^2 t / 2).

    Pathwise, E_t X_t and X~_t coincide in the continuous limit; the
    reported sup_error is the ensemble mean of max_t |E_t X_t - X~_t| and
    decays with dt at the strong Euler rate.  At lam = 0 both recursions are
    identical and the error is exactly zero.
    """
    lam = float(lam)
    x0 = as_vector(x0, "x0")
    dts = [float(d) for d in dt_list]
    if not dts:
        raise DomainError("dt_list must be non-empty")
    if any(d2 >= d1 for d1, d2 in zip(dts, dts[1:])):
        raise DomainError("dt_list must be strictly decreasing")

    A, B, C = sys.A, sys.B, sys.C
    A2 = A + lam * C
    C2 = C + lam * np.eye(sys.n)
    out = []
    for dt in dts:
        run = SimConfig(T=cfg.T, dt=dt, n_paths=cfg.n_paths, seed=cfg.seed,
                        regression_degree=cfg.regression_degree)
        K = run.n_steps
        ctrl = _validate_control(control, sys, K)
        X = np.tile(x0, (run.n_paths, 1))
        Xt = X.copy()
        W = np.zeros(run.n_paths)
        sup_err = np.zeros(run.n_paths)
        root = np.sqrt(dt)
        for k in range(K):
            dw = _step_normals(run.seed, k, run.n_paths) * root
            expmart = np.exp(lam * W - 0.5 * lam * lam * (k * dt))
            u = _control_at(ctrl, k, X, sys.m)
            bu = u @ B.T
            X_new = X + (X @ A.T + bu) * dt + (X @ C.T) * dw[:, None]
            bv = (expmart[:, None] * u) @ B.T
            Xt_new = Xt + (Xt @ A2.T + bv) * dt + (Xt @ C2.T) * dw[:, None]
            _check_blowup(X_new, k + 1, dt)
            _check_blowup(Xt_new, k + 1, dt)
            X, Xt = X_new, Xt_new
            W = W + dw
            expmart_next = np.exp(lam * W - 0.5 * lam * lam * ((k + 1) * dt))
            err = np.linalg.norm(expmart_next[:, None] * X - Xt, axis=1)
            np.maximum(sup_err, err, out=sup_err)
        out.append((dt, float(np.mean(sup_err))))
    return out


def fit_convergence_order(points: Sequence[tuple[float, float]]) -> Optional[float]:
    """Least-squares slope of log(error) against log(dt); None if any error
    is zero (nothing to fit) or fewer than two points are given."""
    pts = [(dt, err) for dt, err in points]
    if len(pts) < 2 or any(err <= 0.0 for _, err in pts):
        return None
    logs = np.log([dt for dt, _ in pts]), np.log([err for _, err in pts])
    slope = np.polyfit(logs[0], logs[1], 1)[0]
    return float(slope)
