"""Built-in stochastic models and their analytic references.

A model only has to know how to turn a random generator into a block of
correlated (fine, coarse) QoI realisations at a given level.  Seeding and
bookkeeping live in :mod:`mlmc_risk.hierarchy`.
"""
from __future__ import annotations

import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import integrate, optimize, special, stats
from scipy.sparse.linalg import cg


class SolverError(RuntimeError):
    """A model's numerical solver failed for some level."""

    def __init__(self, message, level=None, sample_index=None):
        super().__init__(message)
        self.level = level
        self.sample_index = sample_index


class Model(ABC):
    """Pair sampler plus optional exact references."""

    name: str = "model"

    @abstractmethod
    def sample_block(self, level: int, rng: np.random.Generator, size: int):
        """Return ``(fine, coarse)`` arrays of length ``size``; ``coarse`` is None at level 0."""

    @abstractmethod
    def theoretical_cost(self, level: int) -> float:
        """Work units for one fine sample at ``level``."""

    def phi_exact(self, theta, tau):
        raise NotImplementedError(f"{self.name} has no exact parametric expectation")

    def var_cvar_exact(self, tau):
        raise NotImplementedError(f"{self.name} has no exact VaR/CVaR reference")

    def params(self) -> dict:
        return {}


# ---------------------------------------------------------------------------
# Poisson problem with a Beta(2, 6) forcing amplitude


def beta26_sample(rng: np.random.Generator, size=None):
    """Beta(2, 6) draws as a ratio of Gamma variates."""
    a = rng.standard_gamma(2.0, size=size)
    b = rng.standard_gamma(6.0, size=size)
    return a / (a + b)


def _poisson_mesh(level: int):
    m = 5 * 2**level - 1  # number of intervals per direction
    return m - 1, 1.0 / m


def solve_poisson_factor(level: int, C: float = 432.0, rtol: float = 1e-12) -> float:
    """Spatial mean of the 5-point finite-difference solution for xi = 1."""
    k, h = _poisson_mesh(level)
    x = np.arange(1, k + 1) * h
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    f = (-C * (X1**2 + X2**2 - X1 - X2)).ravel()
    d = sp.diags([-np.ones(k - 1), 2 * np.ones(k), -np.ones(k - 1)], [-1, 0, 1])
    eye = sp.identity(k)
    A = ((sp.kron(eye, d) + sp.kron(d, eye)) / h**2).tocsr()
    if k <= 40:
        u = np.linalg.solve(A.toarray(), f)
    else:
        M = sp.diags(1.0 / A.diagonal())
        u, info = cg(A, f, rtol=rtol, atol=0.0, M=M, maxiter=20 * k * k)
        if info != 0:
            raise SolverError(f"CG did not converge at level {level} (info={info})", level=level)
    # trapezoid on the closed square; boundary values are zero
    return float(u.sum() * h * h)


def poisson_factor_closed_form(level: int, C: float = 432.0) -> float:
    """q_l from the discrete solution, which is exact at the mesh nodes."""
    _, h = _poisson_mesh(level)
    return C / 72.0 * (1.0 - h * h) ** 2


@dataclass
class PoissonModel(Model):
    """-Lap u = -C xi (x1^2 + x2^2 - x1 - x2) on the unit square, Q = mean of u."""

    C: float = 432.0
    # largest level solved with CG; beyond it the nodal-exactness formula is used
    max_solve_level: int = 6
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    name = "poisson"

    def factor(self, level: int) -> float:
        if level < 0:
            raise ValueError(f"level must be >= 0, got {level}")
        with self._lock:
            if level not in self._cache:
                if level <= self.max_solve_level:
                    self._cache[level] = solve_poisson_factor(level, self.C)
                else:
                    self._cache[level] = poisson_factor_closed_form(level, self.C)
            return self._cache[level]

    def pair(self, level: int, xi):
        fine = self.factor(level) * np.asarray(xi, dtype=float)
        coarse = None if level == 0 else self.factor(level - 1) * np.asarray(xi, dtype=float)
        return fine, coarse

    def sample_block(self, level, rng, size):
        return self.pair(level, beta26_sample(rng, size))

    def theoretical_cost(self, level):
        return float((5 * 2**level - 2) ** 2)

    def params(self):
        return {"C": self.C}

    @property
    def q_limit(self) -> float:
        return self.C / 72.0

    # exact references (valid for C = 432, i.e. Q = 6 xi)

    def phi_exact(self, theta, tau):
        return poisson_phi_exact(theta, tau, scale=self.q_limit)

    def phi_level_exact(self, theta, tau, level):
        """Exact Phi for the level-l QoI q_l xi."""
        return poisson_phi_exact(theta, tau, scale=self.factor(level))

    def var_cvar_exact(self, tau):
        return poisson_var_cvar_exact(tau, scale=self.q_limit)


_G_DENOM = 373248.0


def _tail_poly(t, deriv=0):
    """E[(6 xi - t)^+] = -(t-6)^7 (t+2)/373248 on [0, 6], and its derivatives."""
    p = np.polynomial.Polynomial([-6.0, 1.0]) ** 7 * np.polynomial.Polynomial([2.0, 1.0])
    p = -p / _G_DENOM
    return p.deriv(deriv)(t) if deriv else p(t)


def poisson_phi_exact(theta, tau, deriv: int = 0, scale: float = 6.0):
    """Exact Phi (or a derivative) for Q = scale * xi with xi ~ Beta(2, 6)."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0.0) or np.any(theta > scale):
        raise ValueError(f"theta outside [0, {scale}]: closed form not valid")
    s = scale / 6.0
    t = theta / s
    # E[(s*6xi - theta)^+] = s * g(theta / s)
    tail = s ** (1 - deriv) * _tail_poly(t, deriv)
    lin = {0: theta, 1: np.ones_like(theta)}.get(deriv, np.zeros_like(theta))
    out = lin + tail / (1.0 - tau)
    return float(out) if out.ndim == 0 else out


def poisson_cdf_exact(theta, scale: float = 6.0):
    return stats.beta(2, 6).cdf(np.asarray(theta, dtype=float) / scale)


def poisson_var_cvar_exact(tau, scale: float = 6.0):
    q = float(stats.beta(2, 6).ppf(tau) * scale)
    return q, poisson_phi_exact(q, tau, scale=scale)


# ---------------------------------------------------------------------------
# Black-Scholes geometric Brownian motion with a discounted call payoff


@dataclass
class BlackScholesModel(Model):
    r: float = 0.05
    sigma: float = 0.2
    T: float = 1.0
    K: float = 10.0
    S0: float = 10.0
    base_steps: int = 4  # dt0 = T / base_steps

    name = "black_scholes"

    def __post_init__(self):
        for key in ("sigma", "T", "S0"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be > 0")
        if self.K < 0 or self.base_steps < 1:
            raise ValueError("K must be >= 0 and base_steps >= 1")

    def steps(self, level: int) -> int:
        return self.base_steps * 2**level

    def dt(self, level: int) -> float:
        return self.T / self.steps(level)

    def paths(self, level: int, increments: np.ndarray):
        """Terminal fine and coarse values given Brownian increments (size, steps)."""
        dt = self.dt(level)
        fine = np.full(increments.shape[0], float(self.S0))
        for i in range(increments.shape[1]):
            fine = fine * (1.0 + self.r * dt + self.sigma * increments[:, i])
        if level == 0:
            return fine, None
        dW = increments[:, 0::2] + increments[:, 1::2]
        coarse = np.full(increments.shape[0], float(self.S0))
        for i in range(dW.shape[1]):
            coarse = coarse * (1.0 + self.r * 2.0 * dt + self.sigma * dW[:, i])
        return fine, coarse

    def payoff(self, s_T):
        return math.exp(-self.r * self.T) * np.maximum(s_T - self.K, 0.0)

    def sample_block(self, level, rng, size):
        dW = math.sqrt(self.dt(level)) * rng.standard_normal((size, self.steps(level)))
        fine, coarse = self.paths(level, dW)
        return self.payoff(fine), None if coarse is None else self.payoff(coarse)

    def theoretical_cost(self, level):
        return float(self.steps(level))

    def params(self):
        return {k: getattr(self, k) for k in ("r", "sigma", "T", "K", "S0", "base_steps")}

    # exact references for the continuous-time model

    def _log_moments(self):
        mean = math.log(self.S0) + (self.r - 0.5 * self.sigma**2) * self.T
        return mean, self.sigma * math.sqrt(self.T)

    def cdf_exact(self, theta):
        theta = np.asarray(theta, dtype=float)
        mean, sd = self._log_moments()
        strike = self.K + math.exp(self.r * self.T) * np.maximum(theta, 0.0)
        with np.errstate(divide="ignore"):
            z = (np.log(strike) - mean) / sd
        out = np.where(theta < 0.0, 0.0, special.ndtr(z))
        return float(out) if out.ndim == 0 else out

    def call_price(self, strike):
        """Discounted E[(S_T - strike)^+]."""
        strike = np.asarray(strike, dtype=float)
        mean, sd = self._log_moments()
        fwd = self.S0 * math.exp(self.r * self.T)
        with np.errstate(divide="ignore"):
            d1 = (mean + sd**2 - np.log(strike)) / sd
        d2 = d1 - sd
        return math.exp(-self.r * self.T) * (fwd * special.ndtr(d1) - strike * special.ndtr(d2))

    def phi_exact(self, theta, tau):
        """theta + E[(Q - theta)^+]/(1 - tau) via the call formula."""
        theta = np.asarray(theta, dtype=float)
        grow = math.exp(self.r * self.T)
        pos = self.call_price(self.K + grow * np.maximum(theta, 0.0))
        # for theta < 0 every outcome exceeds theta: E[(Q - theta)^+] = E[Q] - theta
        tail = np.where(theta < 0.0, self.call_price(self.K) - theta, pos)
        out = theta + tail / (1.0 - tau)
        return float(out) if out.ndim == 0 else out

    def var_cvar_exact(self, tau):
        atom = self.cdf_exact(0.0)
        if not atom < tau < 1.0:
            raise ValueError(f"tau={tau} must exceed the atom mass F(0)={atom:.6f}")
        hi = 1.0
        while self.cdf_exact(hi) < tau:
            hi *= 2.0
        q = optimize.brentq(lambda t: self.cdf_exact(t) - tau, 0.0, hi, xtol=1e-13, rtol=1e-15)
        tail, _ = integrate.quad(
            lambda t: 1.0 - self.cdf_exact(t), q, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200
        )
        return q, q + tail / (1.0 - tau)


MODELS = {"poisson": PoissonModel, "black_scholes": BlackScholesModel}


def make_model(name: str, **params) -> Model:
    try:
        cls = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**params)
