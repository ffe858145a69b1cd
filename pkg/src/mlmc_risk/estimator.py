"""MLMC and single-level Monte Carlo estimators of Phi on the node grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hierarchy import Hierarchy, LevelSamples
from .spline import SplineCurve, ThetaGrid, fit


@dataclass(frozen=True)
class PhiEstimate:
    grid: ThetaGrid
    tau: float
    pointwise: np.ndarray
    curve: SplineCurve
    L: int
    counts: tuple

    def __post_init__(self):
        if not np.all(np.isfinite(self.pointwise)):
            raise ValueError("pointwise estimates must be finite")


def phi_of(theta, q, tau: float):
    """phi(theta, q) = theta + (q - theta)^+ / (1 - tau), broadcasting."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    theta = np.asarray(theta, dtype=float)
    q = np.asarray(q, dtype=float)
    out = theta + np.maximum(q - theta, 0.0) / (1.0 - tau)
    return float(out) if out.ndim == 0 else out


def level_differences(ls: LevelSamples, nodes: np.ndarray, tau: float) -> np.ndarray:
    """Matrix (N_l, n) of phi(theta_j, Q_l) - phi(theta_j, Q_{l-1}); level 0 uses phi itself."""
    fine = phi_of(nodes[None, :], ls.fine[:, None], tau)
    if ls.coarse is None:
        return fine
    # theta cancels in the difference
    return (np.maximum(ls.fine[:, None] - nodes, 0.0) - np.maximum(ls.coarse[:, None] - nodes, 0.0)) / (
        1.0 - tau
    )


def _level_mean(ls: LevelSamples, nodes: np.ndarray, tau: float, chunk: int = 65536) -> np.ndarray:
    # streaming accumulation keeps memory at O(chunk * n)
    total = np.zeros(nodes.size)
    for s in range(0, ls.count, chunk):
        total += level_differences(ls.take(np.arange(s, min(s + chunk, ls.count))), nodes, tau).sum(axis=0)
    return total / ls.count


def mlmc_pointwise(h: Hierarchy, grid: ThetaGrid, tau: float, nodes=None) -> np.ndarray:
    """Telescoping MLMC estimate of Phi at the grid nodes (or at ``nodes``)."""
    nodes = grid.nodes if nodes is None else np.asarray(nodes, dtype=float)
    if len(h) == 0:
        raise ValueError("hierarchy has no levels")
    est = np.zeros(nodes.size)
    for ls in h.levels:
        if ls.count == 0:
            raise ValueError(f"level {ls.level} is empty")
        est += _level_mean(ls, nodes, tau)
    return est


def build_estimate(h: Hierarchy, grid: ThetaGrid, tau: float) -> PhiEstimate:
    values = mlmc_pointwise(h, grid, tau)
    return PhiEstimate(grid, tau, values, fit(grid, values), h.L, tuple(h.counts))


def mc_pointwise(samples, grid: ThetaGrid, tau: float) -> np.ndarray:
    """Plain Monte Carlo estimate from single-level samples of Q_L."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise ValueError("no samples")
    return phi_of(grid.nodes[None, :], samples[:, None], tau).mean(axis=0)
