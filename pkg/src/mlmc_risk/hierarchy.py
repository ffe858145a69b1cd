"""Level-wise correlated samples, deterministic seeding and cost accounting.

Samples are generated in fixed-size blocks.  Block ``b`` of level ``l`` is
always drawn from ``default_rng([base_seed, l, b])`` with the same shape, so
sample ``i`` is bit-identical no matter which subset of indices is requested
or in which order blocks are produced.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .models import Model, SolverError

BLOCK_SIZE = 1024
COST_MODELS = ("theoretical", "measured")


@dataclass(frozen=True)
class CorrelatedPair:
    level: int
    fine: float
    coarse: Optional[float] = None

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be >= 0")
        if (self.coarse is None) != (self.level == 0):
            raise ValueError("coarse must be present exactly when level >= 1")


@dataclass(frozen=True)
class LevelSamples:
    """All pairs at one level, stored column-wise.

    ``total_cost`` follows the sampler's cost model; ``wall_time`` always
    holds the measured seconds and is kept apart for determinism checks.
    """

    level: int
    fine: np.ndarray
    coarse: Optional[np.ndarray]
    total_cost: float = 0.0
    wall_time: float = 0.0

    def __post_init__(self):
        fine = np.array(self.fine, dtype=float).ravel()
        fine.setflags(write=False)
        object.__setattr__(self, "fine", fine)
        if self.level == 0:
            if self.coarse is not None:
                raise ValueError("level 0 has no coarse samples")
        else:
            coarse = np.array(self.coarse, dtype=float).ravel()
            if coarse.shape != fine.shape:
                raise ValueError("fine and coarse sample counts differ")
            coarse.setflags(write=False)
            object.__setattr__(self, "coarse", coarse)

    @property
    def count(self) -> int:
        return self.fine.size

    @property
    def per_sample_cost(self) -> float:
        return self.total_cost / self.count if self.count else 0.0

    @property
    def pairs(self) -> list:
        if self.coarse is None:
            return [CorrelatedPair(0, float(f)) for f in self.fine]
        return [CorrelatedPair(self.level, float(f), float(c)) for f, c in zip(self.fine, self.coarse)]

    def take(self, idx) -> "LevelSamples":
        """Subset (or resample) by index, with proportional cost."""
        idx = np.asarray(idx)
        frac = idx.size / self.count if self.count else 0.0
        return LevelSamples(
            self.level,
            self.fine[idx],
            None if self.coarse is None else self.coarse[idx],
            self.total_cost * frac,
            self.wall_time * frac,
        )

    @classmethod
    def from_pairs(cls, level: int, pairs: Sequence[CorrelatedPair], total_cost: float = 0.0):
        if any(p.level != level for p in pairs):
            raise ValueError("all pairs must share the same level")
        fine = [p.fine for p in pairs]
        coarse = None if level == 0 else [p.coarse for p in pairs]
        return cls(level, fine, coarse, total_cost)


@dataclass(frozen=True)
class Hierarchy:
    levels: tuple = ()

    def __post_init__(self):
        levels = tuple(self.levels)
        for i, ls in enumerate(levels):
            if ls.level != i:
                raise ValueError(f"level indices must be contiguous from 0; got {ls.level} at {i}")
        object.__setattr__(self, "levels", levels)

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    @property
    def counts(self) -> list:
        return [ls.count for ls in self.levels]

    @property
    def per_sample_costs(self) -> list:
        return [ls.per_sample_cost for ls in self.levels]

    @property
    def total_cost(self) -> float:
        return float(sum(ls.total_cost for ls in self.levels))

    @property
    def wall_time(self) -> float:
        return float(sum(ls.wall_time for ls in self.levels))

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, level):
        return self.levels[level]

    def truncate(self, L: int) -> "Hierarchy":
        return Hierarchy(self.levels[: L + 1])

    def summary(self) -> dict:
        return {"L": self.L, "N": self.counts}


@dataclass(frozen=True)
class SamplerConfig:
    model: str
    params: dict = field(default_factory=dict)
    base_seed: int = 0
    refinement: float = 2.0
    cost_model: str = "theoretical"

    def __post_init__(self):
        if not 0 <= int(self.base_seed) < 2**64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")
        if self.refinement <= 1:
            raise ValueError("refinement factor must be > 1")
        if self.cost_model not in COST_MODELS:
            raise ValueError(f"cost_model must be one of {COST_MODELS}")


class Sampler:
    """Deterministic pair generator for one model and base seed."""

    def __init__(self, model: Model, config: SamplerConfig, threads: int = 1, block_size: int = BLOCK_SIZE):
        self.model = model
        self.config = config
        self.threads = max(1, int(threads))
        self.block_size = int(block_size)

    def _block(self, level: int, block: int):
        rng = np.random.default_rng([int(self.config.base_seed), level, block])
        start = time.perf_counter()
        try:
            fine, coarse = self.model.sample_block(level, rng, self.block_size)
        except SolverError as exc:
            exc.level = level
            exc.sample_index = block * self.block_size
            raise
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            raise SolverError(
                f"model failed at level {level}, sample {block * self.block_size}: {exc}",
                level=level,
                sample_index=block * self.block_size,
            ) from exc
        return fine, coarse, time.perf_counter() - start

    def draw_range(self, level: int, start: int, stop: int) -> LevelSamples:
        """Samples ``start <= index < stop`` at ``level``."""
        if level < 0:
            raise ValueError("level must be >= 0")
        if stop <= start:
            return LevelSamples(level, [], None if level == 0 else [])
        B = self.block_size
        blocks = range(start // B, (stop - 1) // B + 1)
        if self.threads > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(lambda b: self._block(level, b), blocks))
        else:
            results = [self._block(level, b) for b in blocks]
        lo = start - blocks[0] * B
        hi = lo + (stop - start)
        fine = np.concatenate([r[0] for r in results])[lo:hi]
        coarse = None if level == 0 else np.concatenate([r[1] for r in results])[lo:hi]
        # a block's wall time is attributed pro rata to the samples kept from it
        wall = sum(r[2] for r in results) * (stop - start) / (len(blocks) * B)
        if self.config.cost_model == "theoretical":
            cost = self.model.theoretical_cost(level) * (stop - start)
        else:
            cost = wall
        return LevelSamples(level, fine, coarse, cost, wall)

    def draw_pair(self, level: int, sample_index: int) -> CorrelatedPair:
        ls = self.draw_range(level, sample_index, sample_index + 1)
        return ls.pairs[0]


def _concat(a: LevelSamples, b: LevelSamples) -> LevelSamples:
    return LevelSamples(
        a.level,
        np.concatenate([a.fine, b.fine]),
        None if a.coarse is None else np.concatenate([a.coarse, b.coarse]),
        a.total_cost + b.total_cost,
        a.wall_time + b.wall_time,
    )


def draw_pair(sampler: Sampler, level: int, sample_index: int) -> CorrelatedPair:
    return sampler.draw_pair(level, sample_index)


def grow_hierarchy(h: Hierarchy, target_sizes, target_L: int, sampler: Sampler) -> Hierarchy:
    """Top up ``h`` to ``target_sizes``; existing samples are kept as they are."""
    target_sizes = [int(n) for n in target_sizes]
    if len(target_sizes) != target_L + 1:
        raise ValueError(f"target_sizes has length {len(target_sizes)}, expected {target_L + 1}")
    if target_L < h.L:
        raise ValueError(f"hierarchy cannot shrink from L={h.L} to L={target_L}")
    levels = list(h.levels)
    for level, target in enumerate(target_sizes):
        current = levels[level].count if level < len(levels) else 0
        new = sampler.draw_range(level, current, max(current, target))
        if level < len(levels):
            if new.count:
                levels[level] = _concat(levels[level], new)
        else:
            levels.append(new)
    return Hierarchy(tuple(levels))


def new_hierarchy(sizes, sampler: Sampler) -> Hierarchy:
    return grow_hierarchy(Hierarchy(), sizes, len(sizes) - 1, sampler)


__all__ = [
    "CorrelatedPair",
    "LevelSamples",
    "Hierarchy",
    "SamplerConfig",
    "Sampler",
    "draw_pair",
    "grow_hierarchy",
    "new_hierarchy",
]
