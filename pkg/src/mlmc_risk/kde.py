"""Gaussian kernel smoothing of empirical QoI measures.

Smoothing the empirical law of Q with a Gaussian kernel turns the
piecewise-linear map theta -> mean(phi(theta, Q_i)) into a smooth function
whose expectation is available in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .spline import DEFAULT_N_FINE, ThetaGrid

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DegenerateSamplesError(ValueError):
    """Raised when a bandwidth cannot be computed from the samples."""


@dataclass(frozen=True)
class KdeModel:
    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        centers = np.array(self.centers, dtype=float).ravel()
        if centers.size == 0:
            raise ValueError("KDE needs at least one center")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    @classmethod
    def from_samples(cls, samples) -> "KdeModel":
        samples = np.asarray(samples, dtype=float).ravel()
        return cls(samples, scott_bandwidth(samples))


def scott_bandwidth(samples) -> float:
    """Scott's rule ``sigma_hat * N**(-1/5)`` with the unbiased std."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateSamplesError(f"need >= 2 samples for a bandwidth, got {x.size}")
    sigma = float(np.std(x, ddof=1))
    if not sigma > 0:
        raise DegenerateSamplesError("samples have zero variance; bandwidth undefined")
    return sigma * x.size ** -0.2


def _mean_positive_part(theta: np.ndarray, centers: np.ndarray, delta: float) -> np.ndarray:
    """E[(Y - theta)^+] for Y ~ p_kde, on an array of theta values."""
    out = np.empty(theta.shape, dtype=float)
    # chunk over theta so the (theta x centers) block stays moderate
    step = max(1, 2_000_000 // max(centers.size, 1))
    flat_t, flat_o = theta.ravel(), out.ravel()
    for s in range(0, flat_t.size, step):
        diff = centers[None, :] - flat_t[s : s + step, None]
        z = diff / delta
        vals = diff * ndtr(z) + delta * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        flat_o[s : s + step] = vals.mean(axis=1)
    return flat_o.reshape(theta.shape)


def smoothed_phi(theta, model: KdeModel, tau: float):
    """Closed-form ``E_kde[phi(theta, Q)]``; accepts scalar or array theta."""
    _check_tau(tau)
    t = np.asarray(theta, dtype=float)
    val = t + _mean_positive_part(np.atleast_1d(t), model.centers, model.bandwidth).reshape(
        t.shape
    ) / (1.0 - tau)
    return float(val) if val.ndim == 0 else val


def smoothed_diff(theta, fine, coarse, delta_fine: float, delta_coarse: float, tau: float):
    """Product-kernel expectation of ``phi(theta, Q_l) - phi(theta, Q_{l-1})``.

    The integrand separates, so this is exactly the difference of the two
    marginal smoothed expectations.  The theta terms cancel and are left out
    to avoid roundoff.
    """
    _check_tau(tau)
    fine = np.asarray(fine, dtype=float).ravel()
    coarse = np.asarray(coarse, dtype=float).ravel()
    if fine.size == 0 or coarse.size == 0:
        raise ValueError("smoothed_diff needs at least one pair")
    if fine.size != coarse.size:
        raise ValueError("fine and coarse sample counts differ")
    t = np.asarray(theta, dtype=float)
    t1 = np.atleast_1d(t)
    val = (
        _mean_positive_part(t1, fine, delta_fine) - _mean_positive_part(t1, coarse, delta_coarse)
    ) / (1.0 - tau)
    val = val.reshape(t.shape)
    return float(val) if val.ndim == 0 else val


def fourth_deriv_norm(samples, grid: ThetaGrid, tau: float, n_fine: int = DEFAULT_N_FINE) -> float:
    """Max of the central 4th difference of the smoothed expectation on Theta."""
    if n_fine < 7:
        raise ValueError(f"n_fine must be >= 7, got {n_fine}")
    model = KdeModel.from_samples(samples)
    theta = grid.fine(n_fine)
    h = theta[1] - theta[0]
    # the linear part theta has zero 4th derivative; drop it to save digits
    u = _mean_positive_part(theta, model.centers, model.bandwidth) / (1.0 - tau)
    d4 = (u[:-4] - 4.0 * u[1:-3] + 6.0 * u[2:-2] - 4.0 * u[3:-1] + u[4:]) / h**4
    return float(np.max(np.abs(d4)))


def _check_tau(tau: float):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
