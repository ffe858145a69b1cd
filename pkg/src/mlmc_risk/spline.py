"""Not-a-knot cubic splines on uniform grids.

The interpolant is linear in the node values, so most heavy lifting
(bootstrap sup-norms, Gram matrices) goes through small dense operators
built once per grid with :func:`derivative_matrix`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded

DEFAULT_N_FINE = 1000

# Relative slack when checking that an evaluation point lies inside Theta.
_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class ThetaGrid:
    """Uniform nodes ``theta_min = theta_1 < ... < theta_n = theta_max``."""

    theta_min: float
    theta_max: float
    n: int

    def __post_init__(self):
        if not self.theta_min < self.theta_max:
            raise ValueError(
                f"theta_min must be < theta_max, got [{self.theta_min}, {self.theta_max}]"
            )
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 nodes, got n={self.n}")

    @property
    def length(self) -> float:
        return self.theta_max - self.theta_min

    @property
    def spacing(self) -> float:
        return self.length / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.theta_min, self.theta_max, self.n)

    def fine(self, n_fine: int = DEFAULT_N_FINE) -> np.ndarray:
        if n_fine < 2:
            raise ValueError(f"n_fine must be >= 2, got {n_fine}")
        return np.linspace(self.theta_min, self.theta_max, n_fine)

    def with_n(self, n: int) -> "ThetaGrid":
        return ThetaGrid(self.theta_min, self.theta_max, int(n))


def _second_derivatives(grid: ThetaGrid, values: np.ndarray) -> np.ndarray:
    """Spline second derivatives at the nodes; ``values`` has shape (n, ...)."""
    n, h = grid.n, grid.spacing
    rhs = np.zeros_like(values, dtype=float)
    rhs[1:-1] = 6.0 * (values[:-2] - 2.0 * values[1:-1] + values[2:]) / h**2

    # Banded storage for solve_banded((2, 2), ...): ab[2 + i - j, j] = A[i, j].
    # Interior rows: M[j-1] + 4 M[j] + M[j+1] = rhs.  End rows enforce a
    # continuous third derivative at the second and penultimate nodes.
    ab = np.zeros((5, n))
    ab[2, :] = 4.0
    ab[1, 1:] = 1.0
    ab[3, :-1] = 1.0
    # first row: M0 - 2 M1 + M2 = 0
    ab[2, 0] = 1.0
    ab[1, 1] = -2.0
    ab[0, 2] = 1.0
    # last row: M[n-3] - 2 M[n-2] + M[n-1] = 0
    ab[2, n - 1] = 1.0
    ab[3, n - 2] = -2.0
    ab[4, n - 3] = 1.0
    return solve_banded((2, 2), ab, rhs)


@dataclass(frozen=True)
class SplineCurve:
    """C2 piecewise cubic on ``grid``; immutable once fitted.

    ``coefficients[j]`` holds ``(a, b, c, d)`` for the piece
    ``a + b t + c t**2 + d t**3`` with ``t = theta - theta_j``.
    """

    grid: ThetaGrid
    values: np.ndarray
    coefficients: np.ndarray = field(repr=False)

    def __call__(self, theta, m: int = 0):
        return evaluate(self, m, theta)


def fit(grid: ThetaGrid, values) -> SplineCurve:
    """Not-a-knot cubic spline through ``(grid.nodes, values)``."""
    values = np.array(values, dtype=float)
    if grid.n < 4:
        raise ValueError(f"not-a-knot spline needs n >= 4 nodes, got {grid.n}")
    if values.shape[0] != grid.n:
        raise ValueError(f"expected {grid.n} values, got {values.shape[0]}")
    h = grid.spacing
    M = _second_derivatives(grid, values)
    a = values[:-1]
    b = (values[1:] - values[:-1]) / h - h * (2.0 * M[:-1] + M[1:]) / 6.0
    c = M[:-1] / 2.0
    d = (M[1:] - M[:-1]) / (6.0 * h)
    coefficients = np.stack([a, b, c, d], axis=1)
    values.setflags(write=False)
    coefficients.setflags(write=False)
    return SplineCurve(grid, values, coefficients)


def _locate(grid: ThetaGrid, theta: np.ndarray):
    slack = _DOMAIN_SLACK * grid.length
    if np.any(theta < grid.theta_min - slack) or np.any(theta > grid.theta_max + slack):
        bad = theta[(theta < grid.theta_min - slack) | (theta > grid.theta_max + slack)]
        raise ValueError(
            f"theta={bad.flat[0]!r} outside [{grid.theta_min}, {grid.theta_max}]; "
            "spline does not extrapolate"
        )
    idx = np.floor((theta - grid.theta_min) / grid.spacing).astype(int)
    idx = np.clip(idx, 0, grid.n - 2)
    t = theta - (grid.theta_min + idx * grid.spacing)
    return idx, t


def evaluate(curve: SplineCurve, m: int, theta):
    """m-th derivative (m in 0..3) of ``curve`` at ``theta`` (scalar or array).

    For curves fitted to stacked values of shape (n, k) the result has
    shape ``theta.shape + (k,)``.
    """
    if m not in (0, 1, 2, 3):
        raise ValueError(f"derivative order must be 0..3, got {m}")
    scalar = np.ndim(theta) == 0
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    idx, t = _locate(curve.grid, theta)
    a, b, c, d = np.moveaxis(curve.coefficients[idx], 1, 0)
    t = t.reshape(t.shape + (1,) * (a.ndim - 1))
    if m == 0:
        out = a + t * (b + t * (c + t * d))
    elif m == 1:
        out = b + t * (2.0 * c + 3.0 * t * d)
    elif m == 2:
        out = 2.0 * c + 6.0 * t * d
    else:
        out = 6.0 * d
    if scalar:
        return float(out[0]) if out.ndim == 1 else out[0]
    return out


def sup_norm_deriv(curve: SplineCurve, m: int, n_fine: int = DEFAULT_N_FINE) -> float:
    """max |S^(m)| over ``n_fine`` uniformly spaced points of Theta."""
    return float(np.max(np.abs(evaluate(curve, m, curve.grid.fine(n_fine)))))


@lru_cache(maxsize=256)
def _derivative_matrix(theta_min: float, theta_max: float, n: int, m: int, n_fine: int):
    grid = ThetaGrid(theta_min, theta_max, n)
    basis = fit(grid, np.eye(n))
    mat = evaluate(basis, m, grid.fine(n_fine))
    mat.setflags(write=False)
    return mat


def derivative_matrix(grid: ThetaGrid, m: int, n_fine: int = DEFAULT_N_FINE) -> np.ndarray:
    """Matrix ``E`` with ``E @ values`` = m-th spline derivative on the fine grid."""
    return _derivative_matrix(grid.theta_min, grid.theta_max, grid.n, m, n_fine)


def gram_matrix(grid: ThetaGrid, m: int) -> np.ndarray:
    """``B[i, j] = int_Theta psi_i^(m) psi_j^(m)`` for the cardinal spline basis.

    Each piece is a polynomial of degree <= 3, so 4-point Gauss-Legendre
    per interval integrates the products exactly.
    """
    basis = fit(grid, np.eye(grid.n))
    x, w = np.polynomial.legendre.leggauss(4)
    h = grid.spacing
    left = grid.nodes[:-1]
    pts = (left[:, None] + 0.5 * h * (x + 1.0)[None, :]).ravel()
    weights = np.tile(0.5 * h * w, grid.n - 1)
    vals = evaluate(basis, m, pts)  # (points, n)
    return (vals * weights[:, None]).T @ vals


def lebesgue_sum_constant(n: int) -> float:
    """c(n) = 2 pi (ln(n+1) + sqrt(8/pi) sum_{k=2}^{n+1} k^-2 ln(k)^-1/2)."""
    k = np.arange(2, n + 2, dtype=float)
    tail = float(np.sum(k**-2 * np.log(k) ** -0.5)) if k.size else 0.0
    return 2.0 * math.pi * (math.log(n + 1) + math.sqrt(8.0 / math.pi) * tail)


C1 = {0: 5.0 / 384.0, 1: 1.0 / 24.0, 2: 3.0 / 8.0}
C3 = 7.0 * (2.0 * math.sqrt(7.0) + 1.0) / 27.0


def constants(m: int, n: int, theta_len: float):
    """Interpolation and stability constants ``(C1(m), C2(m), C3, c(n))``."""
    if m not in C1:
        raise ValueError(f"m must be in {{0, 1, 2}}, got {m}")
    c2 = {0: 1.0, 1: 18.0 / theta_len, 2: 48.0 / theta_len**2}[m]
    return C1[m], c2, C3, lebesgue_sum_constant(n)
