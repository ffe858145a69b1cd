"""Post-processing of an estimated Phi curve into CDF, PDF, VaR and CVaR."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spline import DEFAULT_N_FINE, SplineCurve, ThetaGrid, evaluate, fit

STAT_KINDS = ("phi", "cdf", "pdf", "var", "cvar")


class DegenerateQuantileError(ArithmeticError):
    """Phi'' vanishes at the estimated quantile, so the VaR/CVaR weights are undefined."""


@dataclass(frozen=True)
class StatisticSpec:
    kind: str
    tau: float
    m: int = 0  # derivative order, only for kind == "phi"

    def __post_init__(self):
        if self.kind not in STAT_KINDS:
            raise ValueError(f"statistic kind must be one of {STAT_KINDS}, got {self.kind!r}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.kind == "phi" and self.m not in (0, 1, 2):
            raise ValueError(f"phi derivative order must be 0, 1 or 2, got {self.m}")


@dataclass
class RiskReport:
    tau: float
    var_hat: float
    cvar_hat: float
    theta: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)
    pdf: np.ndarray = field(repr=False)
    k: tuple = (1.0, 0.0, 0.0)
    mse: dict = field(default_factory=dict)

    @property
    def cdf_clipped(self) -> np.ndarray:
        return np.clip(self.cdf, 0.0, 1.0)


def var_from_curve(curve: SplineCurve) -> float:
    """Exact global minimiser of the piecewise cubic; ties go to the smaller theta."""
    grid = curve.grid
    h = grid.spacing
    left = grid.nodes[:-1]
    a, b, c, d = curve.coefficients.T
    cand_t = [np.zeros_like(left)]
    cand_i = [np.arange(left.size)]
    # roots of b + 2 c t + 3 d t^2 on [0, h]
    A, B, C = 3.0 * d, 2.0 * c, b
    disc = B * B - 4.0 * A * C
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        # numerically stable quadratic roots
        qq = -0.5 * (B + np.copysign(sq, B))
        r1 = np.where(A != 0.0, qq / A, np.nan)
        r2 = np.where(qq != 0.0, C / qq, np.nan)
        lin = np.where((A == 0.0) & (B != 0.0), -C / B, np.nan)
    for r in (r1, r2, lin):
        sel = ok & np.isfinite(r) & (r >= 0.0) & (r <= h)
        cand_t.append(r[sel])
        cand_i.append(np.nonzero(sel)[0])
    idx = np.concatenate(cand_i)
    t = np.concatenate(cand_t)
    theta = np.concatenate([left[idx] + t, [grid.theta_max]])
    vals = np.concatenate([a[idx] + t * (b[idx] + t * (c[idx] + t * d[idx])), [curve.values[-1]]])
    order = np.lexsort((theta, vals))
    best = vals[order[0]]
    # ties within roundoff go to the smallest theta
    tied = theta[np.abs(vals - best) <= 1e-14 * max(1.0, abs(best))]
    return float(np.clip(tied.min(), grid.theta_min, grid.theta_max))


def cvar_from_curve(curve: SplineCurve) -> float:
    return float(evaluate(curve, 0, var_from_curve(curve)))


def cdf_pdf_curves(curve: SplineCurve, tau: float, n_fine: int = DEFAULT_N_FINE):
    theta = curve.grid.fine(n_fine)
    cdf = tau + (1.0 - tau) * evaluate(curve, 1, theta)
    pdf = (1.0 - tau) * evaluate(curve, 2, theta)
    return cdf, pdf


def stat_weights(kind: str, curve: Optional[SplineCurve], q_hat: Optional[float], tau: float, m: int = 0):
    """(k0, k1, k2) combining the derivative MSEs into the MSE of a statistic."""
    if kind == "phi":
        k = [0.0, 0.0, 0.0]
        k[m] = 1.0
        return tuple(k)
    if kind == "cdf":
        return (0.0, (1.0 - tau) ** 2, 0.0)
    if kind == "pdf":
        return (0.0, 0.0, (1.0 - tau) ** 2)
    if kind not in ("var", "cvar"):
        raise ValueError(f"unknown statistic kind {kind!r}")
    d1 = float(evaluate(curve, 1, q_hat))
    d2 = float(evaluate(curve, 2, q_hat))
    grid = curve.grid
    # a roundoff-level curvature counts as zero
    if abs(d2) <= 1e-10 * (1.0 + float(np.max(np.abs(curve.values)))) / grid.length**2:
        raise DegenerateQuantileError(f"Phi''(q_hat) = 0 at q_hat={q_hat}; quantile weights undefined")
    if kind == "var":
        return (0.0, 1.0 / d2**2, 0.0)
    # at an interior stationary point Phi'(q_hat) = 0; what's left is roundoff
    interior = grid.theta_min < q_hat < grid.theta_max
    if interior and abs(d1) <= 1e-9 * max(1.0, abs(d2) * grid.length):
        d1 = 0.0
    return (2.0, 2.0 * d1**2 / d2**2, 0.0)


def refit_subinterval(h, tau: float, theta_min: float, theta_max: float, n: int) -> SplineCurve:
    """Fit Phi on a narrower interval from the same hierarchy samples."""
    from .estimator import mlmc_pointwise

    grid = ThetaGrid(theta_min, theta_max, n)
    return fit(grid, mlmc_pointwise(h, grid, tau))


def risk_report(curve: SplineCurve, spec: StatisticSpec, n_fine: int = DEFAULT_N_FINE, var_curve=None) -> RiskReport:
    """Point estimates, CDF/PDF curves and k-weights for ``spec``.

    ``var_curve`` optionally supplies a curve on a narrower interval used only
    for locating the VaR.
    """
    q = var_from_curve(var_curve if var_curve is not None else curve)
    c = float(evaluate(curve, 0, q))
    cdf, pdf = cdf_pdf_curves(curve, spec.tau, n_fine)
    k = stat_weights(spec.kind, curve, q, spec.tau, spec.m)
    return RiskReport(spec.tau, q, c, curve.grid.fine(n_fine), cdf, pdf, k)
