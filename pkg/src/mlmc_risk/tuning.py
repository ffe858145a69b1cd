"""Rate fits, optimal hierarchy parameters and the continuation MLMC driver."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import errors as err
from .config import CmlmcConfig
from .estimator import PhiEstimate, build_estimate
from .hierarchy import Hierarchy, Sampler, SamplerConfig, grow_hierarchy, new_hierarchy
from .kde import fourth_deriv_norm
from .models import make_model
from .risk import RiskReport, StatisticSpec, refit_subinterval, risk_report
from .spline import C1, ThetaGrid

# tag that keeps the bootstrap stream apart from the sampling streams
_BOOTSTRAP_STREAM = 1 << 40


class LevelCapWarning(RuntimeWarning):
    pass


class CmlmcError(RuntimeError):
    """The continuation loop stopped without meeting the tolerance."""

    def __init__(self, message, trace=None, result=None):
        super().__init__(message)
        self.trace = trace or []
        self.result = result


@dataclass(frozen=True)
class RateModel:
    """value(l) = exp(log_constant - rate*l) for decays, exp(log_constant + rate*l) for growth."""

    log_constant: float
    rate: float
    fitted_levels: tuple = ()
    growth: bool = False

    def value(self, level):
        sign = 1.0 if self.growth else -1.0
        return np.exp(self.log_constant + sign * self.rate * np.asarray(level, dtype=float))


def fit_rate(values, growth: bool = False) -> RateModel:
    """Least squares fit of ln(value) against level."""
    pts = [(int(l), float(v)) for l, v in values]
    if len(pts) < 2:
        raise ValueError("need at least two points to fit a rate")
    if any(not v > 0 for _, v in pts):
        raise ValueError(f"rate fit needs positive values, got {[v for _, v in pts]}")
    lv = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(lv, y, 1)
    rate = slope if growth else -slope
    return RateModel(float(intercept), float(rate), tuple(int(l) for l in lv), growth)


@dataclass(frozen=True)
class LevelTable:
    """Observed per-level values with a fitted model for levels beyond them."""

    observed: tuple
    model: Optional[RateModel] = None
    use_model_from: int = 1  # levels >= this use the model when one is given

    def value(self, level):
        level = int(level)
        if self.model is not None and level >= self.use_model_from:
            return float(self.model.value(level))
        if level < len(self.observed):
            return float(self.observed[level])
        raise ValueError(f"no value for level {level}")


@dataclass(frozen=True)
class ToleranceBudget:
    eps: float
    w_i: float = 0.1
    w_b: float = 0.3
    w_s: float = 0.6

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        w = (self.w_i, self.w_b, self.w_s)
        if any(x <= 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"weights must be positive and sum to 1, got {w}")

    @property
    def eps_i_sq(self):
        return self.w_i * self.eps**2 / 3.0

    @property
    def eps_b_sq(self):
        return self.w_b * self.eps**2 / 3.0

    @property
    def eps_s_sq(self):
        return self.w_s * self.eps**2 / 3.0


def optimal_nodes(k, norm4: float, theta_len: float, eps_i: float, n_max: int = 1 << 20) -> int:
    """Smallest n >= 4 whose a priori interpolation error meets eps_i."""
    if not eps_i > 0:
        raise ValueError("eps_i must be > 0")

    def lhs(n):
        return norm4**2 * sum(k[m] * C1[m] ** 2 * (theta_len / n) ** (2 * (4 - m)) for m in range(3))

    target = eps_i**2
    lo = 4
    if lhs(lo) <= target:
        return lo
    hi = lo
    while lhs(hi) > target:
        hi *= 2
        if hi > n_max:
            raise ValueError("optimal node count exceeds n_max")
    while hi - lo > 1:  # invariant: lhs(lo) > target >= lhs(hi)
        mid = (lo + hi) // 2
        if lhs(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


def optimal_levels(bias_models: Dict[int, RateModel], k, eps_b: float, L_cap: int = 10):
    """(L, capped): minimum L >= 1 with the summed bias model below eps_b^2."""
    used = {m: bm for m, bm in bias_models.items() if k[m] > 0}
    for m, bm in used.items():
        if not bm.rate > 0:
            raise ValueError(f"bias of derivative {m} is not decaying (fitted rate {bm.rate:.3g})")

    def total(L):
        return sum(
            k[m] * math.exp(2 * bm.log_constant - 2 * L * bm.rate) / math.expm1(bm.rate) ** 2
            for m, bm in used.items()
        )

    for L in range(1, L_cap + 1):
        if total(L) <= eps_b**2:
            return L, False
    warnings.warn(f"bias tolerance needs more than L_cap={L_cap} levels", LevelCapWarning, stacklevel=2)
    return L_cap, True


def optimal_samples(var_model, cost_model, L: int, eps_s: float) -> List[int]:
    """N_l* from the rescaled variance and cost models, floored at 2."""
    if not eps_s > 0:
        raise ValueError("eps_s must be > 0")
    V = np.array([float(var_model.value(l)) for l in range(L + 1)])
    c = np.array([float(cost_model.value(l)) for l in range(L + 1)])
    total = np.sum(np.sqrt(V * c))
    N = np.ceil(np.sqrt(V / c) * total / eps_s**2)
    return [max(2, int(x)) for x in N]


# ---------------------------------------------------------------------------
# continuation MLMC


@dataclass
class Assessment:
    estimate: PhiEstimate
    risk: RiskReport
    report: err.ErrorReport
    k: tuple
    mse: tuple  # (total, interp, bias, stat)
    bias_models: Dict[int, RateModel]
    var_model: Optional[RateModel]


@dataclass
class IterationRecord:
    iteration: int
    eps_a: float
    n: int
    L: int
    counts: list
    mse: float
    mse_parts: tuple
    cost: float
    k: tuple
    var_hat: float
    cvar_hat: float
    r_e: float
    n_bs: int
    wall_time: float = 0.0


@dataclass
class RunResult:
    config: CmlmcConfig
    hierarchy: Hierarchy
    assessment: Assessment
    trace: List[IterationRecord]
    converged: bool
    warnings: list = field(default_factory=list)

    @property
    def estimate(self):
        return self.assessment.estimate

    @property
    def risk(self):
        return self.assessment.risk

    @property
    def report(self):
        return self.assessment.report

    @property
    def mse(self):
        return self.assessment.mse[0]

    @property
    def cost(self):
        return self.hierarchy.total_cost

    def statistic_value(self, spec: StatisticSpec):
        if spec.kind == "var":
            return self.risk.var_hat
        if spec.kind == "cvar":
            return self.risk.cvar_hat
        raise ValueError("only var/cvar have scalar values")


def assess(
    h: Hierarchy,
    grid: ThetaGrid,
    spec: StatisticSpec,
    cfg: CmlmcConfig,
    eps_s_sq: Optional[float],
    rng: np.random.Generator,
) -> Assessment:
    """Estimate Phi on ``grid`` and every MSE component for ``spec``."""
    tau, n_fine = spec.tau, cfg.n_fine
    estimate = build_estimate(h, grid, tau)
    var_curve = None
    if cfg.var_theta_min is not None:
        var_curve = refit_subinterval(h, tau, cfg.var_theta_min, cfg.var_theta_max, grid.n)
    risk = risk_report(estimate.curve, spec, n_fine, var_curve)
    k = risk.k

    L = h.L
    levels = []
    b_new = {m: [] for m in err.M_ORDERS}
    for ls in h.levels:
        v = err.level_variance(ls, grid, tau)
        if ls.level >= 1:
            norms = err.novel_bias_norms(ls, grid, tau, err.M_ORDERS, n_fine)
            for m in err.M_ORDERS:
                b_new[m].append((ls.level, norms[m]))
            levels.append(err.LevelStats(ls.level, v, None, norms, ls.per_sample_cost))
        else:
            levels.append(err.LevelStats(0, v, None, None, ls.per_sample_cost))

    bias_models, bias, alphas = {}, {}, {}
    for m in err.M_ORDERS:
        if k[m] <= 0:
            continue
        bm = fit_rate(b_new[m])
        bias_models[m] = bm
        alphas[m] = bm.rate
        if not bm.rate > 0:
            raise ValueError(f"bias of derivative {m} is not decaying (fitted rate {bm.rate:.3g})")
        bias[m] = b_new[m][-1][1] / math.expm1(bm.rate)

    norm4 = fourth_deriv_norm(h[math.ceil(L / 2)].fine, grid, tau, n_fine)
    interp = {m: err.interp_error(norm4, grid.n, m, grid.length) for m in err.M_ORDERS}

    used = tuple(m for m in err.M_ORDERS if k[m] > 0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", err.BootstrapCapWarning)
        bs = err.bootstrap_stat_error(
            h, grid, tau, used, eps_s_sq, rng, {m: k[m] for m in used}, cfg.bs_init, cfg.bs_cap, n_fine
        )
    stat = {m: math.sqrt(bs.stat_sq[m]) for m in used}
    v_hats = [ls.v_hat for ls in levels]
    r_e, v_tilde = err.rescale(v_hats, h.counts, bs.stat_sq, k)
    var_model = None
    pos = [(ls.level, vt) for ls, vt in zip(levels[1:], v_tilde[1:]) if vt > 0]
    if len(pos) >= 2:
        var_model = fit_rate(pos)

    report = err.ErrorReport(
        interp, bias, stat, r_e, v_tilde, bs.n_bs, norm4, levels, alphas, bs.capped or bool(caught)
    )
    mse = err.combined_mse(*k, report)
    return Assessment(estimate, risk, report, k, mse, bias_models, var_model)


def tolerance_sequence(eps: float, d: int, lam: float, kappa: float, count: int) -> List[float]:
    """eps_a for iterations j = 0 .. count-1."""
    return [eps * lam ** (d - j) if j <= d else eps * kappa ** (d - j) for j in range(count)]


def _cost_table(h: Hierarchy, sampler: Sampler, cfg: CmlmcConfig):
    if cfg.cost_model == "theoretical":
        model = sampler.model

        class _Exact:
            def value(self, level):
                return model.theoretical_cost(level)

        return _Exact()
    observed = tuple(h.per_sample_costs)
    growth = fit_rate([(l, c) for l, c in enumerate(observed) if c > 0], growth=True)
    return LevelTable(observed, growth, use_model_from=len(observed))


def cmlmc_run(cfg: CmlmcConfig, spec: Optional[StatisticSpec] = None, threads: int = 1) -> RunResult:
    """Continuation MLMC: screen, then tune (n, L, N_l) over a tolerance sequence."""
    import time

    cfg.validate()
    spec = spec or StatisticSpec(cfg.statistic, cfg.tau, cfg.stat_m)
    model = make_model(cfg.model, **cfg.model_params)
    sampler = Sampler(
        model,
        SamplerConfig(cfg.model, dict(cfg.model_params), cfg.seed, 2.0, cfg.cost_model),
        threads=threads,
    )
    theta_len = cfg.theta_max - cfg.theta_min
    rng = np.random.default_rng([int(cfg.seed), _BOOTSTRAP_STREAM])
    notes = []

    t0 = time.perf_counter()
    h = new_hierarchy([cfg.screen_samples] * cfg.screen_levels, sampler)
    grid = ThetaGrid(cfg.theta_min, cfg.theta_max, cfg.n_init)
    first = ToleranceBudget(cfg.eps * cfg.lam**cfg.d, cfg.w_i, cfg.w_b, cfg.w_s)
    a = assess(h, grid, spec, cfg, first.eps_s_sq, rng)
    trace = [_record(-1, float("nan"), grid, h, a, time.perf_counter() - t0)]

    j = 0
    while j <= cfg.d or a.mse[0] >= cfg.eps**2:
        if j >= cfg.max_iter:
            result = RunResult(cfg, h, a, trace, False, notes)
            raise CmlmcError(
                f"tolerance {cfg.eps} not met after {cfg.max_iter} iterations (MSE {a.mse[0]:.3g})",
                trace,
                result,
            )
        t0 = time.perf_counter()
        eps_a = tolerance_sequence(cfg.eps, cfg.d, cfg.lam, cfg.kappa, j + 1)[-1]
        budget = ToleranceBudget(eps_a, cfg.w_i, cfg.w_b, cfg.w_s)
        k = a.k

        n_new = optimal_nodes(k, a.report.norm4, theta_len, math.sqrt(budget.eps_i_sq))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", LevelCapWarning)
            L_star, capped = optimal_levels(a.bias_models, k, math.sqrt(budget.eps_b_sq), cfg.L_cap)
        if capped:
            notes.append(f"iteration {j}: level cap {cfg.L_cap} reached")
        L_new = max(L_star, h.L)

        v_obs = tuple(a.report.v_tilde)
        var_table = LevelTable(v_obs, a.var_model, use_model_from=1 if a.var_model else len(v_obs))
        N_star = optimal_samples(var_table, _cost_table(h, sampler, cfg), L_new, math.sqrt(budget.eps_s_sq))
        targets = [max(N_star[l], h.counts[l] if l <= h.L else 0) for l in range(L_new + 1)]
        h = grow_hierarchy(h, targets, L_new, sampler)

        grid = ThetaGrid(cfg.theta_min, cfg.theta_max, n_new)
        a = assess(h, grid, spec, cfg, budget.eps_s_sq, rng)
        if a.report.bootstrap_capped:
            notes.append(f"iteration {j}: bootstrap cap {cfg.bs_cap} reached")
        trace.append(_record(j, eps_a, grid, h, a, time.perf_counter() - t0))
        j += 1
    return RunResult(cfg, h, a, trace, True, notes)


def _record(j, eps_a, grid, h, a: Assessment, wall):
    return IterationRecord(
        j,
        eps_a,
        grid.n,
        h.L,
        list(h.counts),
        float(a.mse[0]),
        tuple(float(x) for x in a.mse[1:]),
        h.total_cost,
        tuple(float(x) for x in a.k),
        a.risk.var_hat,
        a.risk.cvar_hat,
        a.report.r_e,
        a.report.n_bs,
        wall,
    )
