"""Genetic-programming baselines sharing the SMC proposal and evidence machinery.

Three variants:

* ``gp-mse``  deterministic crowding on training MSE
* ``gp-nml``  deterministic crowding on -ln q (negative log NML)
* ``gp-agg``  tournament selection on training MSE over parents and offspring

Crowding pairs parent ``i`` with its own offspring and keeps the offspring
when its loss is no worse.  Tournaments draw ``tournament_size`` distinct
members of the combined pool for every slot of the next generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .canonical import structure_key
from .evidence import Dataset, EvidenceConfig, FitResult
from .generate import GenerationConfig
from .smc import (_ACCEPT, Population, _Executor, config_hash, derived_rng, initial_population,
                  make_space, ordered_record, population_stats)
from .variation import VariationConfig

VARIANTS = ("gp-mse", "gp-nml", "gp-agg")
SELECTIONS = ("deterministic-crowding", "tournament")
DEFAULT_SELECTION = {"gp-mse": "deterministic-crowding", "gp-nml": "deterministic-crowding",
                     "gp-agg": "tournament"}


@dataclass
class GpConfig:
    variant: str
    seed: int
    n_generations: int
    population_size: int = 2000
    selection: str | None = None
    tournament_size: int = 4
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    variation: VariationConfig = field(default_factory=VariationConfig)
    evidence: EvidenceConfig = field(default_factory=EvidenceConfig)
    workers: int = 1
    enumerated: list | None = None
    init_attempts_factor: int = 50

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.selection is None:
            self.selection = DEFAULT_SELECTION[self.variant]
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")
        if self.n_generations < 1:
            raise ValueError("n_generations must be >= 1")
        if self.selection == "tournament" and not 2 <= self.tournament_size <= 2 * self.population_size:
            raise ValueError("tournament_size must lie in [2, 2 * population_size]")
        if self.seed is None:
            raise ValueError("a seed is required")


def matched_generations(smc_trace, n_mcmc: int) -> int:
    """Generations giving the GP the same number of offspring evaluations as an SMC run."""
    return len(smc_trace) * int(n_mcmc)


def loss(fit: FitResult, variant: str) -> float:
    if variant == "gp-nml":
        return -fit.log_nml
    return fit.mse if math.isfinite(fit.mse) else math.inf


def crowding(parent_loss, child_loss) -> np.ndarray:
    """Mask of slots where the offspring replaces its parent."""
    return np.asarray(child_loss) <= np.asarray(parent_loss)


def tournament(pool_loss, n_slots: int, size: int, rng) -> np.ndarray:
    """Pool indices of the winners; each tournament draws ``size`` distinct entries."""
    pool_loss = np.asarray(pool_loss, dtype=float)
    winners = np.empty(n_slots, dtype=int)
    for s in range(n_slots):
        entrants = rng.choice(pool_loss.size, size=size, replace=False)
        winners[s] = entrants[int(np.argmin(pool_loss[entrants]))]
    return winners


@dataclass
class GpResult:
    population: Population
    trace: list
    losses: np.ndarray


def run_gp(config: GpConfig, data: Dataset, on_generation=None) -> GpResult:
    space = make_space(config, data)
    magnitude = data.magnitude if data.magnitude else 1.0
    chash = config_hash(config.generation, config.variation, config.evidence)
    executor = _Executor(space, config.workers)
    seen: set = set()
    accepted: set = set()
    evaluations = 0
    trace: list = []
    n = config.population_size
    try:
        members = initial_population(space, n, config.seed, config.init_attempts_factor)
        results = executor.fit(members, config.seed)
        members = [m for m, _ in results]
        fits = [f for _, f in results]
        seen.update(structure_key(m) for m in members)
        losses = np.array([loss(f, config.variant) for f in fits])
        for gen in range(1, config.n_generations + 1):
            offspring = executor.offspring(members, config.seed, gen, 0)
            evaluations += n
            kids = [c for c, _ in offspring]
            kid_fits = [f for _, f in offspring]
            kid_losses = np.array([loss(f, config.variant) for f in kid_fits])
            seen.update(structure_key(c) for c in kids)
            if config.selection == "deterministic-crowding":
                take = crowding(losses, kid_losses)
                chosen = np.where(take, np.arange(n) + n, np.arange(n))
            else:
                pool_loss = np.concatenate([losses, kid_losses])
                chosen = tournament(pool_loss, n, config.tournament_size,
                                    derived_rng(config.seed, _ACCEPT, gen, 0))
            pool = members + kids
            pool_fits = fits + kid_fits
            pool_losses = np.concatenate([losses, kid_losses])
            from_offspring = chosen >= n
            accepted.update(structure_key(pool[j]) for j in chosen[from_offspring])
            members = [pool[j] for j in chosen]
            fits = [pool_fits[j] for j in chosen]
            losses = pool_losses[chosen]
            lq = np.array([f.log_nml for f in fits])
            finite = losses[np.isfinite(losses)]
            record = {
                "step": gen, "phi": None, "delta_phi": None, "ess_pre": None, "ess_post": None,
                "accept_rate": float(from_offspring.mean()),
                **population_stats(members, lq, fits, magnitude),
                "unique_total": len(seen), "unique_accepted_total": len(accepted),
                "min_loss": float(losses.min()),
                "median_loss": float(np.median(finite)) if finite.size else math.inf,
                "evaluations": evaluations, "config_hash": chash,
            }
            record = ordered_record(record)
            trace.append(record)
            if on_generation is not None:
                on_generation(record, members, fits)
    finally:
        executor.close()
    pop = Population(members, np.full(n, 1.0 / n), [f.log_nml for f in fits], fits)
    return GpResult(pop, trace, losses)
