"""Finite-dimensional stochastic linear systems and basic operator calculus.

The central object is the matrix triple (A, B, C) of the controlled linear
SDE ``dX = (A X + B u) dt + C X dW`` with a one-dimensional Brownian motion.
The noise operator is carried as a split C = C1 + C2 (stiff part / bounded
part); at finite dimension the split is bookkeeping, but it determines which
part enters the joint-dissipativity test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .exceptions import DimensionError, DomainError, SingularResolventError

__all__ = [
    "ToleranceConfig",
    "StochasticSystem",
    "SubspaceBasis",
    "LambdaPoint",
    "is_dissipative",
    "lambda_set",
    "yosida",
    "semigroup_apply",
]


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-D array; always a fresh copy, so callers
    and callees never alias each other's data."""
    M = np.array(M, dtype=float)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} contains non-finite entries")
    return M


def as_vector(x, name: str = "vector") -> np.ndarray:
    x = np.array(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} contains non-finite entries")
    return x


def _square(M: np.ndarray, name: str) -> np.ndarray:
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class ToleranceConfig:
    """Numerical thresholds shared by the algebraic tests.

    psd_tol   semidefiniteness slack (>= 0)
    rank_tol  singular-value rank threshold (> 0)
    zero_tol  vector-nullity / commutator threshold (> 0)
    eps_a     offset above 1/2 used in the joint-dissipativity test (> 0)
    """

    psd_tol: float = 1e-10
    rank_tol: float = 1e-9
    zero_tol: float = 1e-9
    eps_a: float = 1e-6

    def __post_init__(self):
        if self.psd_tol < 0:
            raise DomainError("psd_tol must be >= 0")
        for name in ("rank_tol", "zero_tol", "eps_a"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be > 0")


class StochasticSystem:
    """Matrix data (A, B, C1, C2) of a controlled linear SDE.

    Parameters
    ----------
    A : (n, n) array
        Drift operator.
    B : (n, m) array
        Control operator.
    C1, C2 : (n, n) array, optional
        Split of the noise operator; missing parts default to zero.
    C : (n, n) array, optional
        Shorthand for C1 = C, C2 = 0.  Mutually exclusive with C1/C2.
    gamma : float
        Singularity exponent metadata in [0, 1/2); informational at finite
        dimension.

    The full noise operator is always obtained through the ``C`` property,
    never stored redundantly.
    """

    def __init__(self, A, B, C1=None, C2=None, *, C=None, gamma: float = 0.0):
        A = _square(as_matrix(A, "A"), "A")
        n = A.shape[0]
        B = as_matrix(B, "B")
        if B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {B.shape[0]}")
        if C is not None:
            if C1 is not None or C2 is not None:
                raise DomainError("pass either C or the C1/C2 split, not both")
            C1 = C
        C1 = np.zeros((n, n)) if C1 is None else _square(as_matrix(C1, "C1"), "C1")
        C2 = np.zeros((n, n)) if C2 is None else _square(as_matrix(C2, "C2"), "C2")
        if C1.shape[0] != n or C2.shape[0] != n:
            raise DimensionError("C1 and C2 must be n x n")
        if not (0.0 <= gamma < 0.5):
            raise DomainError(f"gamma must lie in [0, 1/2), got {gamma}")
        for M in (A, B, C1, C2):
            M.setflags(write=False)
        self.A = A
        self.B = B
        self.C1 = C1
        self.C2 = C2
        self.gamma = float(gamma)
        self.n = n
        self.m = B.shape[1]

    @property
    def C(self) -> np.ndarray:
        """Full noise operator C1 + C2."""
        return self.C1 + self.C2

    def __repr__(self):
        return f"StochasticSystem(n={self.n}, m={self.m}, gamma={self.gamma})"


class SubspaceBasis:
    """Orthonormal basis of a linear subspace; dim = 0 encodes {0}."""

    #: columns of ``basis`` must be orthonormal within this tolerance
    ORTHO_TOL = 1e-10

    def __init__(self, basis: np.ndarray):
        basis = np.asarray(basis, dtype=float)
        if basis.ndim != 2:
            raise DimensionError("basis must be an n x dim matrix")
        dim = basis.shape[1]
        if dim > 0:
            gram = basis.T @ basis
            if np.max(np.abs(gram - np.eye(dim))) > self.ORTHO_TOL:
                raise DomainError("basis columns are not orthonormal")
        basis.setflags(write=False)
        self.basis = basis
        self.dim = dim

    def contains(self, v: np.ndarray, tol: float) -> bool:
        """Whether v lies in the subspace up to relative residual tol."""
        v = as_vector(v)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return True
        if self.dim == 0:
            return nv <= tol
        resid = v - self.basis @ (self.basis.T @ v)
        return np.linalg.norm(resid) <= tol * nv

    def __repr__(self):
        return f"SubspaceBasis(dim={self.dim}, n={self.basis.shape[0]})"


def is_dissipative(M, tol: float = 0.0) -> bool:
    """Whether <Mx, x> <= tol |x|^2 for all x.

    Decided through the top eigenvalue of the symmetric part (M + M^T)/2,
    which is exactly equivalent at finite dimension.
    """
    M = _square(as_matrix(M, "M"), "M")
    if tol < 0:
        raise DomainError("tol must be >= 0")
    sym = 0.5 * (M + M.T)
    return bool(np.linalg.eigvalsh(sym)[-1] <= tol)


@dataclass(frozen=True)
class LambdaPoint:
    """One grid point of the joint-dissipativity set scan.

    ``margin`` is the top eigenvalue of sym(A + lam*C1) + (1/2 + eps_a) C1^T C1;
    membership means margin <= psd_tol.  ``boundary`` flags margins inside
    [-psd_tol, psd_tol], where membership is decided by convention.
    """

    lam: float
    in_set: bool
    margin: float
    boundary: bool


def lambda_set(
    sys: StochasticSystem,
    lambda_grid: Sequence[float],
    cfg: ToleranceConfig = ToleranceConfig(),
) -> list[LambdaPoint]:
    """Scan a grid of real lambda for joint dissipativity of (A, C1).

    A value lambda is accepted when A + lambda*C1 + a*C1^T C1 is dissipative
    at a = 1/2 + eps_a.  Testing this single value suffices: the quadratic
    form is monotone in a (C1^T C1 is PSD), so existence of an admissible
    a > 1/2 is equivalent to admissibility at the infimum plus the offset.
    """
    grid = [float(lam) for lam in lambda_grid]
    if not grid:
        raise DomainError("lambda_grid must be non-empty")
    if not all(np.isfinite(grid)):
        raise DomainError("lambda_grid entries must be finite")
    A, C1 = sys.A, sys.C1
    gram = C1.T @ C1
    a = 0.5 + cfg.eps_a
    out = []
    for lam in grid:
        M = A + lam * C1
        sym = 0.5 * (M + M.T) + a * gram
        margin = float(np.linalg.eigvalsh(sym)[-1])
        out.append(
            LambdaPoint(
                lam=lam,
                in_set=margin <= cfg.psd_tol,
                margin=margin,
                boundary=abs(margin) <= cfg.psd_tol,
            )
        )
    return out


def yosida(A, nres: int) -> tuple[np.ndarray, np.ndarray]:
    """Resolvent smoother J = n (nI - A)^{-1} and approximant An = J A.

    For dissipative A the resolvent exists for every nres >= 1, ||J|| <= 1,
    An is again dissipative, and An x -> A x as nres grows.
    """
    A = _square(as_matrix(A, "A"), "A")
    if nres < 1:
        raise DomainError("nres must be a positive integer")
    n = A.shape[0]
    R = nres * np.eye(n) - A
    try:
        J = np.linalg.solve(R, nres * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise SingularResolventError(
            f"resolvent ({nres} I - A) is singular; A may not be dissipative "
            f"or nres={nres} is too small"
        ) from exc
    return J, J @ A


def semigroup_apply(A, t: float, x) -> np.ndarray:
    """Evaluate exp(t A) x by scaling-and-squaring matrix exponential."""
    A = _square(as_matrix(A, "A"), "A")
    x = as_vector(x, "x")
    if x.shape[0] != A.shape[0]:
        raise DimensionError("x length must match A")
    if not np.isfinite(t) or t < 0:
        raise DomainError(f"t must be a finite nonnegative real, got {t}")
    return scipy.linalg.expm(t * A) @ x
