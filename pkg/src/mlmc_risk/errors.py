"""Estimators for the interpolation, bias and statistical parts of the MSE."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .estimator import level_differences
from .hierarchy import Hierarchy, LevelSamples
from .kde import DegenerateSamplesError, scott_bandwidth, smoothed_diff
from .spline import DEFAULT_N_FINE, ThetaGrid, constants, derivative_matrix, fit

M_ORDERS = (0, 1, 2)


class BootstrapCapWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LevelStats:
    level: int
    v_hat: float
    b_hat_naive: Optional[float] = None
    b_hat_new: Optional[Dict[int, float]] = None
    cost: float = 0.0


@dataclass
class ErrorReport:
    """Per-derivative error estimates for one hierarchy (non-squared values)."""

    interp: Dict[int, float]
    bias: Dict[int, float]
    stat: Dict[int, float]
    r_e: float
    v_tilde: list
    n_bs: int
    norm4: float
    levels: list = field(default_factory=list)
    alphas: Dict[int, float] = field(default_factory=dict)
    bootstrap_capped: bool = False

    def __post_init__(self):
        for name in ("interp", "bias", "stat"):
            if any(v < 0 for v in getattr(self, name).values()):
                raise ValueError(f"{name} estimates must be non-negative")


def _div(alpha: float) -> float:
    if not alpha > 0:
        raise ValueError(f"decay rate alpha must be > 0, got {alpha}")
    return math.expm1(alpha)


def level_variance(ls: LevelSamples, grid: ThetaGrid, tau: float) -> float:
    """Mean over samples of the squared sup-node norm of the level difference.

    Level 0 has no coarse partner; there we centre phi(., Q_0) by its
    sample mean so that V_0 plays the role of a variance.
    """
    if ls.count == 0:
        raise ValueError(f"level {ls.level} is empty")
    D = level_differences(ls, grid.nodes, tau)
    if ls.coarse is None:
        D = D - D.mean(axis=0)
    return float(np.mean(np.max(np.abs(D), axis=1) ** 2))


def _mean_difference(ls: LevelSamples, grid: ThetaGrid, tau: float) -> np.ndarray:
    if ls.coarse is None:
        raise ValueError("bias estimates need a level >= 1")
    return level_differences(ls, grid.nodes, tau).mean(axis=0)


def level_bias_naive(ls: LevelSamples, grid: ThetaGrid, tau: float, alpha: float) -> float:
    return float(np.max(np.abs(_mean_difference(ls, grid, tau)))) / _div(alpha)


def naive_bias_norms(ls, grid, tau, m_list=M_ORDERS, n_fine=DEFAULT_N_FINE) -> Dict[int, float]:
    """sup |S^(m)(mean difference)| without smoothing, not divided by e^alpha - 1."""
    mean = _mean_difference(ls, grid, tau)
    return {m: float(np.max(np.abs(derivative_matrix(grid, m, n_fine) @ mean))) for m in m_list}


def novel_bias_norms(
    ls: LevelSamples, grid: ThetaGrid, tau: float, m_list=M_ORDERS, n_fine=DEFAULT_N_FINE, bandwidths=None
) -> Dict[int, float]:
    """sup |S^(m)(smoothed level difference)|, i.e. b_{l,new}^(m) before division."""
    if ls.coarse is None:
        raise ValueError("bias estimates need a level >= 1")
    try:
        if bandwidths is None:
            bandwidths = (scott_bandwidth(ls.fine), scott_bandwidth(ls.coarse))
    except DegenerateSamplesError:
        if any(m > 0 for m in m_list):
            raise
        return naive_bias_norms(ls, grid, tau, m_list, n_fine)
    values = smoothed_diff(grid.nodes, ls.fine, ls.coarse, bandwidths[0], bandwidths[1], tau)
    return {m: float(np.max(np.abs(derivative_matrix(grid, m, n_fine) @ values))) for m in m_list}


def bias_novel(ls, grid, tau, m, alpha, n_fine=DEFAULT_N_FINE, bandwidths=None) -> float:
    return novel_bias_norms(ls, grid, tau, (m,), n_fine, bandwidths)[m] / _div(alpha)


def interp_error(norm4: float, n: int, m: int, theta_len: float) -> float:
    c1 = constants(m, n, theta_len)[0]
    return c1 * norm4 * (theta_len / n) ** (4 - m)


def apriori_bias(b_hat_L: float, n: int, m: int, theta_len: float) -> float:
    _, c2, c3, _ = constants(m, n, theta_len)
    return c2 * c3 * (n - 1) ** m * b_hat_L


def apriori_stat(v_hats, N_ls, n: int, m: int, theta_len: float) -> float:
    _, c2, c3, cn = constants(m, n, theta_len)
    total = float(np.sum(np.asarray(v_hats, float) / np.asarray(N_ls, float)))
    return c2 * c3 * (n - 1) ** m * math.sqrt(cn * total)


# ---------------------------------------------------------------------------
# bootstrap


@dataclass(frozen=True)
class BootstrapResult:
    stat_sq: Dict[int, float]
    n_bs: int
    std_error: float
    capped: bool


def _replicate_means(D: Sequence[np.ndarray], k: int, rng: np.random.Generator) -> np.ndarray:
    """k pair-preserving bootstrap replicates of the pointwise MLMC estimate."""
    n = D[0].shape[1]
    out = np.zeros((k, n))
    for Dl in D:
        N = Dl.shape[0]
        chunk = max(1, min(k, 4_000_000 // N))
        for s in range(0, k, chunk):
            kk = min(chunk, k - s)
            idx = rng.integers(0, N, size=(kk, N), dtype=np.int64)
            idx += (np.arange(kk, dtype=np.int64) * N)[:, None]
            counts = np.bincount(idx.ravel(), minlength=kk * N).reshape(kk, N)
            out[s : s + kk] += counts.astype(float) @ Dl
    return out


def _sup_sq(reps: np.ndarray, op: np.ndarray) -> np.ndarray:
    dev = reps - reps.mean(axis=0)
    return np.max(np.abs(dev @ op.T), axis=1) ** 2


def bootstrap_stat_error(
    h: Hierarchy,
    grid: ThetaGrid,
    tau: float,
    m_list=M_ORDERS,
    eps_s_sq: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    weights: Optional[Dict[int, float]] = None,
    n_bs_init: int = 100,
    n_bs_cap: int = 12800,
    n_fine: int = DEFAULT_N_FINE,
    rel_se: float = 0.01,
) -> BootstrapResult:
    """Squared statistical error of S^(m) Phi_hat by resampling each level.

    N_bs doubles from ``n_bs_init`` until the Monte Carlo standard error of
    the (k-weighted) estimate drops below ``rel_se * eps_s_sq``, or the cap
    is reached.  Without ``eps_s_sq`` a single round of ``n_bs_init`` is used.
    """
    if any(c < 2 for c in h.counts):
        raise ValueError(f"bootstrap needs N_l >= 2 on every level, got {h.counts}")
    rng = np.random.default_rng() if rng is None else rng
    weights = {m: 1.0 for m in m_list} if weights is None else weights
    nodes = grid.nodes
    # Rows are centred per level, which leaves deviations between replicates
    # unchanged and makes constant samples give exactly zero.  Pre-dividing by
    # N_l lets a count vector map straight to a level mean.
    D = []
    for ls in h.levels:
        Dl = level_differences(ls, nodes, tau)
        D.append((Dl - Dl.mean(axis=0)) / ls.count)
    ops = {m: derivative_matrix(grid, m, n_fine) for m in m_list}

    reps = np.empty((0, grid.n))
    n_bs = min(n_bs_init, n_bs_cap)
    capped = False
    while True:
        reps = np.vstack([reps, _replicate_means(D, n_bs - reps.shape[0], rng)])
        sq = {m: _sup_sq(reps, ops[m]) for m in m_list}
        combined = sum(weights.get(m, 0.0) * sq[m] for m in m_list)
        se = float(np.std(combined, ddof=1) / math.sqrt(n_bs))
        if eps_s_sq is None or se <= rel_se * eps_s_sq:
            break
        if n_bs >= n_bs_cap:
            capped = True
            warnings.warn(
                f"bootstrap reached the cap of {n_bs_cap} replicates with standard error "
                f"{se:.3g} > {rel_se:g} * eps_s^2",
                BootstrapCapWarning,
                stacklevel=2,
            )
            break
        n_bs = min(2 * n_bs, n_bs_cap)
    return BootstrapResult({m: float(sq[m].mean()) for m in m_list}, n_bs, se, capped)


# ---------------------------------------------------------------------------
# rescaling and the combined bound


def rescale(v_hats, N_ls, stat_errors_sq, k):
    """Rescaling ratio r_e and the rescaled level variances."""
    v = np.asarray(v_hats, dtype=float)
    denom = float(np.sum(v / np.asarray(N_ls, dtype=float)))
    if not denom > 0:
        raise ValueError("sum of V_l / N_l must be positive to rescale")
    if isinstance(stat_errors_sq, dict):
        num = sum(k[m] * stat_errors_sq.get(m, 0.0) for m in M_ORDERS)
    else:
        num = sum(km * s for km, s in zip(k, stat_errors_sq))
    r_e = num / denom
    return r_e, list(r_e * v)


def _check_k(k):
    if len(k) != 3 or any(km < 0 for km in k):
        raise ValueError(f"k-weights must be three non-negative numbers, got {k}")


def combined_mse(k0: float, k1: float, k2: float, report: ErrorReport):
    """(total, interp, bias, stat) with total = 3 * sum of k-weighted squares."""
    k = (k0, k1, k2)
    _check_k(k)
    parts = []
    for comp in (report.interp, report.bias, report.stat):
        parts.append(3.0 * sum(k[m] * comp.get(m, 0.0) ** 2 for m in M_ORDERS))
    return (sum(parts), *parts)
