"""Spectral Galerkin assembly of 1-D heat-type systems on (0, 1).

Everything is expressed in the orthonormal Dirichlet sine basis
e_k(x) = sqrt(2) sin(k pi x).  Two builders are provided: the
projection-noise model (rank-one noise on the first mode, diagonal
Laplacian drift) and the divergence-form model with variable diffusion
a(x), first-order noise coefficient c(x) and scalar control shape b(x).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .exceptions import DimensionError, DomainError, EllipticityError, EvaluationError
from .systems import StochasticSystem, ToleranceConfig, as_vector

__all__ = [
    "HeatSystemSpec",
    "constant",
    "polynomial",
    "trigonometric",
    "assemble_example2",
    "assemble_divform_1d",
    "check_ellipticity",
    "b_coefficient_test",
    "ModeCoefficient",
]

# fixed Gauss-Legendre order per panel of the composite quadrature rule
_PANEL_ORDER = 8


def constant(value: float) -> Callable[[np.ndarray], np.ndarray]:
    """Constant coefficient x -> value."""
    value = float(value)

    def f(x):
        return np.full_like(np.asarray(x, dtype=float), value)

    return f


def polynomial(coeffs: Sequence[float]) -> Callable[[np.ndarray], np.ndarray]:
    """Polynomial coefficient c0 + c1 x + c2 x^2 + ..."""
    coeffs = [float(c) for c in coeffs]

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in reversed(coeffs):
            out = out * x + c
        return out

    return f


def trigonometric(
    offset: float = 0.0,
    sin_coeffs: Sequence[float] = (),
    cos_coeffs: Sequence[float] = (),
) -> Callable[[np.ndarray], np.ndarray]:
    """Trigonometric coefficient offset + sum_j s_j sin(j pi x) + c_j cos(j pi x)."""
    offset = float(offset)
    sin_coeffs = [float(c) for c in sin_coeffs]
    cos_coeffs = [float(c) for c in cos_coeffs]

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, offset)
        for j, c in enumerate(sin_coeffs, start=1):
            out += c * np.sin(j * np.pi * x)
        for j, c in enumerate(cos_coeffs, start=1):
            out += c * np.cos(j * np.pi * x)
        return out

    return f


@dataclass
class HeatSystemSpec:
    """Inputs of the divergence-form builder.

    N          truncation dimension (>= 2)
    a_fn       diffusion coefficient on (0, 1)
    c_fn       noise drift coefficient on (0, 1)
    b_fn       control shape on (0, 1)
    quad_order panel count of the composite Gauss rule; each panel carries
               an 8-node Gauss-Legendre rule.  Must be >= 2N so that
               products of the first N sine modes are resolved to below
               1e-10 for smooth coefficients.  Defaults to max(2N, 16).
    """

    N: int
    a_fn: Callable[[np.ndarray], np.ndarray]
    c_fn: Callable[[np.ndarray], np.ndarray]
    b_fn: Callable[[np.ndarray], np.ndarray]
    quad_order: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise DomainError(f"N must be >= 2, got {self.N}")
        if self.quad_order == 0:
            self.quad_order = max(2 * self.N, 16)
        if self.quad_order < 2 * self.N:
            raise DomainError(
                f"quad_order must be >= 2N = {2 * self.N}, got {self.quad_order}"
            )


def composite_gauss(n_panels: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the composite Gauss rule on (0, 1)."""
    if n_panels < 1:
        raise DomainError("n_panels must be positive")
    ref_x, ref_w = leggauss(_PANEL_ORDER)
    edges = np.linspace(0.0, 1.0, n_panels + 1)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + 0.5 * h[:, None] * (ref_x[None, :] + 1.0)).ravel()
    weights = (0.5 * h[:, None] * ref_w[None, :]).ravel()
    return nodes, weights


def _sine_basis(nodes: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of e_k = sqrt(2) sin(k pi x), shape (N, len(nodes))."""
    k = np.arange(1, N + 1)[:, None]
    arg = k * np.pi * nodes[None, :]
    return np.sqrt(2.0) * np.sin(arg), np.sqrt(2.0) * (k * np.pi) * np.cos(arg)


def _eval_coeff(fn, nodes: np.ndarray, name: str) -> np.ndarray:
    vals = np.asarray(fn(nodes), dtype=float)
    if vals.shape != nodes.shape:
        vals = np.broadcast_to(vals, nodes.shape).astype(float)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError(f"coefficient {name} returned non-finite values")
    return vals


def assemble_example2(N: int, b_coeffs) -> StochasticSystem:
    """Heat system with rank-one projection noise, in the sine eigenbasis.

    Drift is the Dirichlet Laplacian, A = diag(-k^2 pi^2); the noise operator
    maps any state to its first-mode component (C = e1 e1^T, a bounded
    orthogonal projection, carried in the bounded slot C2); B is the single
    control column with sine coefficients ``b_coeffs``.
    """
    if N < 2:
        raise DomainError(f"N must be >= 2, got {N}")
    b = as_vector(b_coeffs, "b_coeffs")
    if b.shape[0] != N:
        raise DimensionError(f"b_coeffs must have length {N}, got {b.shape[0]}")
    k = np.arange(1, N + 1, dtype=float)
    A = np.diag(-((k * np.pi) ** 2))
    C = np.zeros((N, N))
    C[0, 0] = 1.0
    return StochasticSystem(A, b.reshape(N, 1), C1=np.zeros((N, N)), C2=C)


def assemble_divform_1d(
    spec: HeatSystemSpec,
    cfg: ToleranceConfig = ToleranceConfig(),
) -> StochasticSystem:
    """Galerkin truncation of the divergence-form system on (0, 1).

    Weak-form entries over the sine basis:

        A[j, k] = -int a(x) e_j'(x) e_k'(x) dx      (symmetric, <= 0)
        C[j, k] =  int e_j(x) c(x) e_k'(x) dx       (first-order noise)
        B[k]    =  int b(x) e_k(x) dx               (scalar control, m = 1)

    The first-order noise part is stiff, so the assembled C goes into the
    C1 slot.  The diffusion coefficient must pass the pointwise ellipticity
    floor (checked with c = 0 before assembling).

    Raises
    ------
    EllipticityError   if a(x) dips below -psd_tol on the check grid.
    EvaluationError    if a coefficient function produces NaN/Inf.
    """
    ok, margin = check_ellipticity(
        spec.a_fn, constant(0.0), alpha=1.0, grid_points=max(100, 4 * spec.quad_order),
        psd_tol=cfg.psd_tol,
    )
    if not ok:
        raise EllipticityError(
            f"diffusion coefficient is not nonnegative on (0,1): min a = {margin:.3e}"
        )
    nodes, weights = composite_gauss(spec.quad_order)
    e, de = _sine_basis(nodes, spec.N)
    a = _eval_coeff(spec.a_fn, nodes, "a")
    c = _eval_coeff(spec.c_fn, nodes, "c")
    b = _eval_coeff(spec.b_fn, nodes, "b")

    A = -(de * (weights * a)) @ de.T
    C = (e * (weights * c)) @ de.T
    B = (e @ (weights * b)).reshape(spec.N, 1)
    A = 0.5 * (A + A.T)  # exact form is symmetric; remove quadrature asymmetry
    return StochasticSystem(A, B, C1=C, C2=np.zeros((spec.N, spec.N)))


def check_ellipticity(
    a_fn,
    c_fn,
    alpha: float,
    grid_points: int,
    psd_tol: float = 1e-10,
) -> tuple[bool, float]:
    """Pointwise joint ellipticity a(x) - alpha c(x)^2 >= 0 on (0, 1).

    Evaluated on a uniform grid of midpoints; requires alpha > 1/2.
    Returns (ok, min_margin) with ok = (min over the grid >= -psd_tol).
    """
    if not alpha > 0.5:
        raise DomainError(f"alpha must be > 1/2, got {alpha}")
    if grid_points < 100:
        raise DomainError(f"grid_points must be >= 100, got {grid_points}")
    x = (np.arange(grid_points) + 0.5) / grid_points
    a = _eval_coeff(a_fn, x, "a")
    c = _eval_coeff(c_fn, x, "c")
    margin = float(np.min(a - alpha * c * c))
    return margin >= -psd_tol, margin


@dataclass(frozen=True)
class ModeCoefficient:
    """Projection of the control operator onto one drift eigenvector."""

    mode_index: int
    eigenvalue: float
    coefficient: float
    near_zero: bool


def b_coefficient_test(
    sys: StochasticSystem,
    cfg: ToleranceConfig = ToleranceConfig(),
) -> list[ModeCoefficient]:
    """Project B onto the eigenbasis of a self-adjoint drift operator.

    A mode whose projection is (numerically) zero certifies an uncontrolled
    eigendirection: the necessary spectral condition fails and the system
    cannot be approximately controllable.  Eigenvalues that cluster within
    rank_tol of each other are treated as one eigenspace: the near-zero flag
    is decided on the projection of B onto the whole cluster, since
    individual eigenvectors are not well defined there.

    ``coefficient`` is the signed projection for a single control column
    (m = 1) and the row norm otherwise.

    Raises
    ------
    DomainError  if A is not symmetric (no orthonormal eigenbasis assumed).
    """
    A, B = sys.A, sys.B
    scale = 1.0 + np.linalg.norm(A, 2)
    if np.linalg.norm(A - A.T, 2) > cfg.zero_tol * scale:
        raise DomainError("b_coefficient_test requires a symmetric drift operator")
    eigvals, eigvecs = np.linalg.eigh(A)
    # descending eigenvalue order: mode 1 is the slowest direction, matching
    # the k = 1, 2, ... numbering of the sine eigenbasis
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    proj = eigvecs.T @ B  # (n, m) rows are per-mode projections
    b_norm = np.linalg.norm(B, 2)
    row_norms = np.linalg.norm(proj, axis=1)

    # cluster indices of nearly equal eigenvalues
    clusters: list[list[int]] = []
    for i, ev in enumerate(eigvals):
        if clusters and abs(ev - eigvals[clusters[-1][-1]]) <= cfg.rank_tol * scale:
            clusters[-1].append(i)
        else:
            clusters.append([i])

    out = []
    for cluster in clusters:
        cluster_norm = float(np.sqrt(sum(row_norms[i] ** 2 for i in cluster)))
        flag = bool(cluster_norm <= cfg.zero_tol * b_norm)
        for i in cluster:
            coeff = float(proj[i, 0]) if sys.m == 1 else float(row_norms[i])
            out.append(
                ModeCoefficient(
                    mode_index=i + 1,
                    eigenvalue=float(eigvals[i]),
                    coefficient=coeff,
                    near_zero=flag,
                )
            )
    return out
