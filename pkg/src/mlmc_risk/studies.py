"""Repetition studies: reliability, complexity and error-estimator comparisons.

Each study returns plain row dictionaries; :mod:`mlmc_risk.cli` writes them
to CSV.  Repetition seeds are derived from the base seed so that any single
row can be reproduced on its own.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np

from . import errors as err
from .config import CmlmcConfig, StudyConfig
from .estimator import mlmc_pointwise
from .hierarchy import Hierarchy, Sampler, SamplerConfig, new_hierarchy
from .models import PoissonModel, make_model, poisson_phi_exact
from .spline import ThetaGrid, derivative_matrix, fit, gram_matrix, constants
from .tuning import CmlmcError, cmlmc_run, fit_rate

M_ORDERS = err.M_ORDERS


def derive_seed(base_seed: int, *keys: int) -> int:
    """Independent 64-bit seed for a (base, key...) tuple."""
    state = np.random.SeedSequence([int(base_seed), *map(int, keys)]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def exact_reference(cfg: CmlmcConfig, study: Optional[StudyConfig] = None) -> float:
    if study is not None and study.reference == "value":
        return float(study.reference_value)
    if cfg.statistic not in ("var", "cvar"):
        raise ValueError(f"no exact reference for statistic {cfg.statistic!r}")
    model = make_model(cfg.model, **cfg.model_params)
    try:
        q, c = model.var_cvar_exact(cfg.tau)
    except NotImplementedError as exc:
        raise ValueError(str(exc)) from None
    return q if cfg.statistic == "var" else c


def _run_quiet(cfg: CmlmcConfig):
    """Run CMLMC; an iteration-cap exit still yields its last result."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            return cmlmc_run(cfg)
        except CmlmcError as exc:
            if exc.result is None:
                raise
            return exc.result


def reliability(cfg: CmlmcConfig, study: StudyConfig, threads: int = 1, runs: Optional[list] = None) -> List[dict]:
    """One row per (tolerance, repetition) with the true and estimated squared errors.

    Finished runs are appended to ``runs`` when given, so a complexity study
    can reuse them.
    """
    ref = exact_reference(cfg, study)
    tolerances = study.tolerances or (cfg.eps,)
    tasks = [(ti, float(tol), rep) for ti, tol in enumerate(tolerances) for rep in range(study.repetitions)]

    def one(task):
        ti, tol, rep = task
        return _run_quiet(replace(cfg, eps=tol, seed=derive_seed(cfg.seed, ti, rep)))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, tasks))
    else:
        results = [one(t) for t in tasks]
    rows = []
    for (ti, tol, rep), res in zip(tasks, results):
        value = res.risk.var_hat if cfg.statistic == "var" else res.risk.cvar_hat
        rows.append(
            {
                "tolerance": tol,
                "rep": rep,
                "stat": cfg.statistic,
                "true_sq_err": (value - ref) ** 2,
                "est_mse": res.mse,
                "cost": res.cost,
            }
        )
        if runs is not None:
            runs.append((tol, res))
    return rows


def mc_baseline_cost(cfg: CmlmcConfig, tol: float, n: int, L: int, k, pilot: int = 1000) -> float:
    """Cost of plain Monte Carlo at level L meeting the statistical tolerance.

    The single-level statistical error is measured with a bootstrap on a
    pilot sample and scaled as 1/N.
    """
    model = make_model(cfg.model, **cfg.model_params)
    sampler = Sampler(model, SamplerConfig(cfg.model, dict(cfg.model_params), derive_seed(cfg.seed, 0xC057, L)))
    ls = sampler.draw_range(L, 0, pilot)
    single = Hierarchy((type(ls)(0, ls.fine, None),))
    grid = ThetaGrid(cfg.theta_min, cfg.theta_max, n)
    used = tuple(m for m in M_ORDERS if k[m] > 0)
    rng = np.random.default_rng([int(cfg.seed), 0xC057, L])
    bs = err.bootstrap_stat_error(single, grid, cfg.tau, used, None, rng, None, n_bs_init=cfg.bs_init * 4)
    pilot_sq = sum(k[m] * bs.stat_sq[m] for m in used)
    eps_s_sq = cfg.w_s * tol**2 / 3.0
    N = max(1, math.ceil(pilot * pilot_sq / eps_s_sq))
    return N * model.theoretical_cost(L)


def complexity(cfg: CmlmcConfig, study: StudyConfig, threads: int = 1, runs=None) -> List[dict]:
    """Mean MLMC cost per tolerance and the matching Monte Carlo estimate."""
    if runs is None:
        runs = []
        reliability(cfg, study, threads, runs)
    rows = []
    for tol in sorted({t for t, _ in runs}, reverse=True):
        group = [r for t, r in runs if t == tol]
        L = max(r.hierarchy.L for r in group)
        n = max(r.estimate.grid.n for r in group)
        k = group[0].assessment.k
        rows.append(
            {
                "tolerance": tol,
                "mean_mlmc_cost": float(np.mean([r.cost for r in group])),
                "mc_cost_estimate": mc_baseline_cost(cfg, tol, n, L, k),
            }
        )
    return rows


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------------------
# estimator comparisons on the Poisson model


def _fine_theta(grid: ThetaGrid, n_true: int = 10_001):
    return np.linspace(grid.theta_min, grid.theta_max, n_true)


def interpolation_study(tau=0.7, theta=(1.5, 2.5), ns=(5, 10, 20, 40, 80), n_true=10_001) -> List[dict]:
    """Spline error on exact Phi against the a priori estimate."""
    rows = []
    probe = ThetaGrid(theta[0], theta[1], 4)
    t = _fine_theta(probe, n_true)
    norm4 = float(np.max(np.abs(poisson_phi_exact(t, tau, deriv=4))))
    for n in ns:
        grid = ThetaGrid(theta[0], theta[1], n)
        curve = fit(grid, poisson_phi_exact(grid.nodes, tau))
        for m in M_ORDERS:
            true = float(np.max(np.abs(curve(t, m) - poisson_phi_exact(t, tau, deriv=m))))
            rows.append({"n": n, "m": m, "true_err": true, "est_err": err.interp_error(norm4, n, m, grid.length)})
    return rows


def _true_level_bias(model: PoissonModel, grid, tau, level, m, n_true=10_001):
    t = _fine_theta(grid, n_true)
    fine = poisson_phi_exact(t, tau, deriv=m, scale=model.factor(level))
    return float(np.max(np.abs(fine - poisson_phi_exact(t, tau, deriv=m))))


def bias_study(
    seed=0, tau=0.7, theta=(1.5, 2.5), n=10, level=5, sizes=(100, 1000), reps=20, alpha=2 * math.log(2)
) -> List[dict]:
    """A priori, naive and smoothed bias estimates at one level against the true bias."""
    model = PoissonModel()
    grid = ThetaGrid(theta[0], theta[1], n)
    true = {m: _true_level_bias(model, grid, tau, level, m) for m in M_ORDERS}
    div = math.expm1(alpha)
    rows = []
    for N in sizes:
        for rep in range(reps):
            sampler = Sampler(model, SamplerConfig("poisson", base_seed=derive_seed(seed, 0xB1A5, N, rep)))
            ls = sampler.draw_range(level, 0, N)
            b_naive_nodes = err.level_bias_naive(ls, grid, tau, alpha)
            naive = err.naive_bias_norms(ls, grid, tau)
            new = err.novel_bias_norms(ls, grid, tau)
            for m in M_ORDERS:
                rows.append(
                    {
                        "N": N,
                        "rep": rep,
                        "m": m,
                        "true": true[m],
                        "apriori": err.apriori_bias(b_naive_nodes, n, m, grid.length),
                        "naive": naive[m] / div,
                        "new": new[m] / div,
                    }
                )
    return rows


def bias_decay_study(
    seed=0, tau=0.7, theta=(1.5, 2.5), n=10, levels=(1, 2, 3, 4, 5), N=100, reps=20, alpha=2 * math.log(2)
) -> List[dict]:
    """Level-wise bias estimates for decay-rate fits."""
    model = PoissonModel()
    grid = ThetaGrid(theta[0], theta[1], n)
    div = math.expm1(alpha)
    rows = []
    for rep in range(reps):
        sampler = Sampler(model, SamplerConfig("poisson", base_seed=derive_seed(seed, 0xDECA, rep)))
        for level in levels:
            ls = sampler.draw_range(level, 0, N)
            b_nodes = err.level_bias_naive(ls, grid, tau, alpha)
            naive = err.naive_bias_norms(ls, grid, tau)
            new = err.novel_bias_norms(ls, grid, tau)
            for m in M_ORDERS:
                rows.append(
                    {
                        "level": level,
                        "rep": rep,
                        "m": m,
                        "apriori": err.apriori_bias(b_nodes, n, m, grid.length),
                        "naive": naive[m] / div,
                        "new": new[m] / div,
                    }
                )
    return rows


def decay_rates(rows, column="new") -> dict:
    """Mean over repetitions of the fitted decay rate, per m."""
    out = {}
    for m in M_ORDERS:
        rates = []
        for rep in sorted({r["rep"] for r in rows}):
            pts = [(r["level"], r[column]) for r in rows if r["m"] == m and r["rep"] == rep]
            rates.append(fit_rate(pts).rate)
        out[m] = float(np.mean(rates))
    return out


def hierarchy_shape(N0: int, r: int, L: int) -> List[int]:
    """N_l = floor(N0 2^(r l)), floored at 2 so every level can be resampled."""
    return [max(2, int(math.floor(N0 * 2.0 ** (r * l)))) for l in range(L + 1)]


def brute_force_stat(
    model: PoissonModel, sizes, grid: ThetaGrid, tau, n_ref, seed, m_list=M_ORDERS, n_fine=1000
) -> dict:
    """Mean squared sup error of S^(m)(Phi_hat - Phi_L) over n_ref independent hierarchies."""
    L = len(sizes) - 1
    exact_L = poisson_phi_exact(grid.nodes, tau, scale=model.factor(L))
    ops = {m: derivative_matrix(grid, m, n_fine) for m in m_list}
    acc = {m: 0.0 for m in m_list}
    for i in range(n_ref):
        sampler = Sampler(model, SamplerConfig("poisson", base_seed=derive_seed(seed, 0xB007, i)))
        h = new_hierarchy(sizes, sampler)
        dev = mlmc_pointwise(h, grid, tau) - exact_L
        for m in m_list:
            acc[m] += float(np.max(np.abs(ops[m] @ dev))) ** 2
    return {m: acc[m] / n_ref for m in m_list}


def stat_study(
    seed=0, tau=0.7, theta=(1.5, 2.5), n=10, L=5, shapes=(-1, 0, 1), N0s=(50, 200), n_ref=1000, reps=5, n_bs_init=800
) -> List[dict]:
    """Bootstrap and a priori statistical error estimates against brute force."""
    model = PoissonModel()
    grid = ThetaGrid(theta[0], theta[1], n)
    rows = []
    for r in shapes:
        for N0 in N0s:
            sizes = hierarchy_shape(N0, r, L)
            true = brute_force_stat(model, sizes, grid, tau, n_ref, derive_seed(seed, r + 8, N0))
            for rep in range(reps):
                sampler = Sampler(model, SamplerConfig("poisson", base_seed=derive_seed(seed, 0x57A7, r + 8, N0, rep)))
                h = new_hierarchy(sizes, sampler)
                rng = np.random.default_rng([seed, 0x57A7, r + 8, N0, rep])
                bs = err.bootstrap_stat_error(h, grid, tau, M_ORDERS, None, rng, n_bs_init=n_bs_init)
                v_hats = [err.level_variance(ls, grid, tau) for ls in h.levels]
                for m in M_ORDERS:
                    rows.append(
                        {
                            "r": r,
                            "N0": N0,
                            "rep": rep,
                            "m": m,
                            "true": math.sqrt(true[m]),
                            "apriori": err.apriori_stat(v_hats, h.counts, n, m, grid.length),
                            "new": math.sqrt(bs.stat_sq[m]),
                        }
                    )
    return rows


def sandwich_bounds(grid: ThetaGrid, k=(1.0, 1.0, 1.0)):
    """(lambda(n)/|Theta|, sum_m k_m K(n, m)) for the combined statistical error."""
    B = sum(km * gram_matrix(grid, m) for m, km in zip(M_ORDERS, k))
    lam = float(np.linalg.eigvalsh(B)[0])
    upper = 0.0
    for m, km in zip(M_ORDERS, k):
        _, c2, c3, cn = constants(m, grid.n, grid.length)
        upper += km * c2**2 * c3**2 * (grid.n - 1) ** (2 * m) * cn
    return lam / grid.length, upper
