"""Sequential Monte Carlo over expressions with adaptive likelihood tempering.

Targets are ``pi_t(M) ~ prior(M) * q(M)**phi_t`` with ``phi`` moving from 0
to 1.  Each step picks the tempering increment by bisection so that the
effective sample size of the reweighted population hits a target, resamples
with stratified resampling and rejuvenates with ``n_mcmc`` Metropolis sweeps
whose proposals come from the crossover/mutation operators.

Every random draw comes from a generator derived from the master seed and
the position of the draw (phase, step, sweep, particle), so results do not
depend on how offspring evaluation is split across worker processes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .canonical import canonicalize, structure_key
from .evidence import Dataset, EvidenceConfig, FitResult, _evidence
from .expression import Expression, Node, _check_inputs
from .generate import GenerationConfig, generate_random
from .text import format_expression, parse
from .variation import VariationConfig, propose_one

log = logging.getLogger(__name__)

# spawn-key tags for the derived random streams
_INIT, _INIT_FIT, _PROPOSE, _ACCEPT, _RESAMPLE, _ENUM = range(6)

TRACE_FIELDS = ("step", "phi", "delta_phi", "ess_pre", "ess_post", "accept_rate",
                "mean_log_nml", "max_log_nml", "unique_in_pop", "unique_total",
                "unique_accepted_total")


class DegeneratePopulationError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


def derived_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


@dataclass
class SmcConfig:
    seed: int
    population_size: int = 2000
    n_mcmc: int = 10
    ess_target_fraction: float = 0.95
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    variation: VariationConfig = field(default_factory=VariationConfig)
    evidence: EvidenceConfig = field(default_factory=EvidenceConfig)
    snapshots: tuple = ()
    workers: int = 1
    # restrict the model space to these expressions (exact-posterior testing)
    enumerated: list | None = None
    init_attempts_factor: int = 50
    # one shared offset for all resampling strata (see stratified_resample)
    resample_shared_offset: bool = True

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is required")
        if not 0.0 < self.ess_target_fraction < 1.0:
            raise ValueError("ess_target_fraction must lie in (0, 1)")
        if self.n_mcmc < 1:
            raise ValueError("n_mcmc must be >= 1")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")

    @property
    def target_ess(self) -> float:
        return self.ess_target_fraction * self.population_size


def config_hash(generation, variation, evidence) -> str:
    """Fingerprint of the shared proposal and evidence settings."""
    blob = json.dumps({"generation": asdict(generation), "variation": asdict(variation),
                       "evidence": asdict(evidence)}, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class Population:
    members: list
    weights: np.ndarray
    log_nml: np.ndarray
    fits: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.log_nml = np.asarray(self.log_nml, dtype=float)
        if not (len(self.members) == self.weights.size == self.log_nml.size):
            raise ValueError("population lists are not index-aligned")

    def __len__(self):
        return len(self.members)

    def take(self, idx) -> "Population":
        idx = np.asarray(idx, dtype=int)
        n = idx.size
        fits = [self.fits[i] for i in idx] if self.fits else []
        return Population([self.members[i] for i in idx], np.full(n, 1.0 / n),
                          self.log_nml[idx].copy(), fits)


@dataclass
class SmcState:
    phi: float
    step: int
    population: Population
    trace: list


# ---------------------------------------------------------------- tempering

def ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return 1.0 / float(np.sum(w * w))


def reweight(weights, log_nml, delta_phi: float) -> np.ndarray:
    """Importance weights for raising the tempering exponent by ``delta_phi``."""
    w = np.asarray(weights, dtype=float)
    if delta_phi == 0.0:
        return w / w.sum()
    lq = np.asarray(log_nml, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lw = np.log(w) + delta_phi * lq
    lw[np.isnan(lw)] = -np.inf
    top = lw.max()
    if not np.isfinite(top):
        raise DegeneratePopulationError("every member has zero weight after reweighting")
    out = np.exp(lw - top)
    return out / out.sum()


def next_phi(weights, log_nml, phi: float, target_ess: float,
             tol: float = 0.5, max_iter: int = 100) -> float:
    """Tempering increment that keeps the reweighted ESS at ``target_ess``.

    Jumps straight to phi = 1 when that already satisfies the target.  When
    members with zero evidence make the target unreachable for any positive
    increment, the target is scaled to the same fraction of the ESS that
    remains among members with finite evidence.
    """
    remaining = 1.0 - phi
    if remaining <= 0.0:
        raise ValueError("phi is already 1")
    w = np.asarray(weights, dtype=float)
    lq = np.asarray(log_nml, dtype=float)
    finite = np.isfinite(lq) & (w > 0)
    if not finite.any():
        raise DegeneratePopulationError("all members have log NML of -inf")
    if ess(reweight(w, lq, remaining)) >= target_ess:
        return remaining
    if not finite.all():
        limit = ess(w[finite] / w[finite].sum())
        if limit < target_ess:
            target_ess = limit * target_ess / w.size
    lo, hi = 0.0, remaining
    mid = hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        e = ess(reweight(w, lq, mid))
        if abs(e - target_ess) < tol:
            return mid
        if e > target_ess:
            lo = mid
        else:
            hi = mid
    return mid


def stratified_resample(weights, rng, shared_offset: bool = True) -> np.ndarray:
    """Indices of survivors: one point in each stratum [k/N, (k+1)/N).

    With ``shared_offset`` every stratum uses the same uniform offset, which
    guarantees at least floor(N * W_i) copies of member i.  Otherwise each
    stratum draws its own offset; that lowers the correlation between strata
    but a member can then fall one copy short of floor(N * W_i).
    """
    w = np.asarray(weights, dtype=float)
    n = w.size
    u = (np.arange(n) + (rng.random() if shared_offset else rng.random(n))) / n
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), n - 1)


def acceptance_probability(log_nml_new: float, log_nml_old: float, phi: float) -> float:
    """Metropolis acceptance under a uniform model prior."""
    if phi == 0.0:
        return 1.0
    if log_nml_new == -math.inf:
        return 0.0
    if log_nml_old == -math.inf:
        return 1.0
    return math.exp(min(0.0, phi * (log_nml_new - log_nml_old)))


# ---------------------------------------------------------------- model spaces

class ExpressionSpace:
    """Random generation, crossover/mutation proposals and fresh Laplace evidence."""

    def __init__(self, generation, variation, evidence, data: Dataset):
        self.generation = generation
        self.variation = variation
        self.evidence = evidence
        self.n_features = data.n_features
        self.X, self.y = data.subset("train")

    def candidate(self, rng) -> Expression:
        return generate_random(self.generation, self.n_features, rng)

    def offspring(self, parents, i, rng) -> Expression:
        return propose_one(parents, i, self.variation, rng, self.generation, self.n_features)

    def evaluate(self, expr: Expression, rng) -> FitResult:
        X = _check_inputs(expr, self.X)
        return _evidence(expr, X, self.y, rng, self.evidence)


class EnumeratedSpace:
    """Finite model space with uniform independent proposals.

    The evidence of each listed expression is computed once, so the target
    distribution over the list is fixed and can be enumerated exactly.
    """

    def __init__(self, expressions, evidence, data: Dataset, seed: int):
        exprs = [parse(e) if isinstance(e, str) else e for e in expressions]
        self.members = []
        seen = set()
        for e in exprs:
            k = structure_key(e)
            if k not in seen:
                seen.add(k)
                self.members.append(e)
        X, y = data.subset("train")
        self.fits = []
        for j, e in enumerate(self.members):
            fit = _evidence(e, _check_inputs(e, X), y, derived_rng(seed, _ENUM, j), evidence)
            self.fits.append(fit)
            if e.n_params:
                self.members[j] = e.with_params(fit.theta_star)
        self.index = {structure_key(e): j for j, e in enumerate(self.members)}

    @property
    def log_nml(self) -> np.ndarray:
        return np.array([f.log_nml for f in self.fits])

    def exact_posterior(self, phi: float = 1.0) -> np.ndarray:
        lq = phi * self.log_nml
        p = np.exp(lq - lq.max())
        return p / p.sum()

    def candidate(self, rng) -> Expression:
        return self.members[int(rng.integers(len(self.members)))]

    def offspring(self, parents, i, rng) -> Expression:
        return self.members[int(rng.integers(len(self.members)))]

    def evaluate(self, expr: Expression, rng) -> FitResult:
        return self.fits[self.index[structure_key(expr)]]


def make_space(config: SmcConfig, data: Dataset, generation=None, variation=None, evidence=None):
    generation = generation or config.generation
    variation = variation or config.variation
    evidence = evidence or config.evidence
    if config.enumerated:
        return EnumeratedSpace(config.enumerated, evidence, data, config.seed)
    return ExpressionSpace(generation, variation, evidence, data)


# ---------------------------------------------------------------- parallel evaluation

_WORKER_SPACE = None


def _init_worker(space):
    global _WORKER_SPACE
    _WORKER_SPACE = space


def _with_fit(expr: Expression, fit: FitResult) -> Expression:
    if expr.n_params and np.all(np.isfinite(fit.theta_star)) and fit.theta_star.size == expr.n_params:
        return expr.with_params(fit.theta_star)
    return expr


def _offspring_chunk(space, parents, seed, step, sweep, indices):
    out = []
    for i in indices:
        rng = derived_rng(seed, _PROPOSE, step, sweep, i)
        child = space.offspring(parents, i, rng)
        fit = space.evaluate(child, rng)
        out.append((_with_fit(child, fit), fit))
    return out


def _fit_chunk(space, members, seed, indices):
    out = []
    for i in indices:
        fit = space.evaluate(members[i], derived_rng(seed, _INIT_FIT, i))
        out.append((_with_fit(members[i], fit), fit))
    return out


def _worker_offspring(parents, seed, step, sweep, indices):
    return _offspring_chunk(_WORKER_SPACE, parents, seed, step, sweep, indices)


def _worker_fit(members, seed, indices):
    return _fit_chunk(_WORKER_SPACE, members, seed, indices)


class _Executor:
    """Runs per-index work inline or across a process pool, preserving order."""

    def __init__(self, space, workers: int):
        self.space = space
        self.workers = max(1, int(workers))
        self.pool = None
        if self.workers > 1:
            self.pool = ProcessPoolExecutor(self.workers, initializer=_init_worker, initargs=(space,))

    def _chunks(self, n):
        bounds = np.linspace(0, n, self.workers + 1).astype(int)
        return [list(range(bounds[k], bounds[k + 1])) for k in range(self.workers) if bounds[k] < bounds[k + 1]]

    def offspring(self, parents, seed, step, sweep):
        n = len(parents)
        if self.pool is None:
            return _offspring_chunk(self.space, parents, seed, step, sweep, range(n))
        futures = [self.pool.submit(_worker_offspring, parents, seed, step, sweep, c)
                   for c in self._chunks(n)]
        return [r for f in futures for r in f.result()]

    def fit(self, members, seed):
        n = len(members)
        if self.pool is None:
            return _fit_chunk(self.space, members, seed, range(n))
        futures = [self.pool.submit(_worker_fit, members, seed, c) for c in self._chunks(n)]
        return [r for f in futures for r in f.result()]

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None


# ---------------------------------------------------------------- population helpers

@lru_cache(maxsize=200_000)
def _complexity_of_nodes(nodes: tuple[Node, ...]) -> int:
    return len(canonicalize(Expression(nodes)).nodes)


def ordered_record(record: dict) -> dict:
    """Documented trace fields first, extras after, in a stable order."""
    head = {k: record.get(k) for k in TRACE_FIELDS}
    return {**head, **{k: record[k] for k in sorted(record) if k not in head}}


def population_stats(members, log_nml, fits, magnitude: float) -> dict:
    lq = np.asarray(log_nml, dtype=float)
    finite = lq[np.isfinite(lq)]
    rmse = [math.sqrt(f.mse) / magnitude for f in fits if f is not None and math.isfinite(f.mse)]
    return {
        "mean_log_nml": float(finite.mean()) if finite.size else -math.inf,
        "max_log_nml": float(lq.max()) if lq.size else -math.inf,
        "unique_in_pop": len({structure_key(m) for m in members}),
        "min_nrmse_train": min(rmse) if rmse else math.inf,
        "mean_complexity": float(np.mean([_complexity_of_nodes(m.nodes) for m in members])),
        "mean_n_params": float(np.mean([m.n_params for m in members])),
    }


def initial_population(space, n: int, seed: int, attempts_factor: int = 50) -> list:
    """Unique random members; duplicates are admitted once the attempt budget runs out."""
    members, keys = [], set()
    budget = attempts_factor * n
    attempt = 0
    while len(members) < n:
        cand = space.candidate(derived_rng(seed, _INIT, attempt))
        attempt += 1
        k = structure_key(cand)
        if k in keys and attempt <= budget:
            continue
        if k in keys and attempt == budget + 1:
            log.warning("initial population: %d unique members after %d attempts, admitting duplicates",
                        len(members), budget)
        keys.add(k)
        members.append(cand)
    return members


def aggregate(population: Population) -> list[dict]:
    """Population grouped by structural class; each class reports its best member."""
    groups: dict = {}
    for m, lq in zip(population.members, population.log_nml):
        k = structure_key(m)
        g = groups.get(k)
        if g is None:
            groups[k] = [m, float(lq), 1]
        else:
            g[2] += 1
            if lq > g[1]:
                g[0], g[1] = m, float(lq)
    rows = [{"expression": format_expression(m), "params": [float(p) for p in m.params],
             "log_nml": lq, "count": c} for m, lq, c in groups.values()]
    rows.sort(key=lambda r: (-r["count"], -r["log_nml"], r["expression"]))
    return rows


# ---------------------------------------------------------------- sampler

@dataclass
class SmcResult:
    population: Population
    trace: list
    snapshots: list
    phi: float
    space: object = None

    @property
    def n_steps(self) -> int:
        return len(self.trace)


class SmcSampler:
    def __init__(self, config: SmcConfig, data: Dataset, on_step=None, space=None):
        self.config = config
        self.data = data
        self.on_step = on_step
        self.space = space or make_space(config, data)
        self.magnitude = data.magnitude if data.magnitude else 1.0
        self.hash = config_hash(config.generation, config.variation, config.evidence)
        self.seen: set = set()
        self.accepted: set = set()
        self.evaluations = 0
        self.state: SmcState | None = None
        self.snapshots: list = []
        self._pending_snapshots = sorted(float(s) for s in config.snapshots)

    def initialize(self, executor) -> SmcState:
        cfg = self.config
        members = initial_population(self.space, cfg.population_size, cfg.seed, cfg.init_attempts_factor)
        results = executor.fit(members, cfg.seed)
        members = [m for m, _ in results]
        fits = [f for _, f in results]
        self.seen.update(structure_key(m) for m in members)
        n = len(members)
        pop = Population(members, np.full(n, 1.0 / n), [f.log_nml for f in fits], fits)
        self.state = SmcState(0.0, 0, pop, [])
        self._take_snapshots()
        return self.state

    def _take_snapshots(self):
        phi = self.state.phi
        while self._pending_snapshots and (self._pending_snapshots[0] <= phi or phi >= 1.0):
            requested = self._pending_snapshots.pop(0)
            self.snapshots.append({"requested_phi": requested, "phi": phi, "step": self.state.step,
                                   "log_nml": [float(v) for v in self.state.population.log_nml]})

    def rejuvenate(self, population: Population, phi: float, step: int, executor):
        """``n_mcmc`` Metropolis sweeps; returns the new population and acceptance rate."""
        cfg = self.config
        members = list(population.members)
        lq = population.log_nml.copy()
        fits = list(population.fits)
        n = len(members)
        n_accept = 0
        for sweep in range(cfg.n_mcmc):
            results = executor.offspring(members, cfg.seed, step, sweep)
            u = derived_rng(cfg.seed, _ACCEPT, step, sweep).random(n)
            self.evaluations += n
            for i, (child, fit) in enumerate(results):
                key = structure_key(child)
                self.seen.add(key)
                if u[i] < acceptance_probability(fit.log_nml, lq[i], phi):
                    members[i] = child
                    lq[i] = fit.log_nml
                    fits[i] = fit
                    n_accept += 1
                    self.accepted.add(key)
        return Population(members, np.full(n, 1.0 / n), lq, fits), n_accept / (n * cfg.n_mcmc)

    def step(self, executor) -> dict:
        st = self.state
        cfg = self.config
        pop = st.population
        try:
            dphi = next_phi(pop.weights, pop.log_nml, st.phi, cfg.target_ess)
            weights = reweight(pop.weights, pop.log_nml, dphi)
        except DegeneratePopulationError as exc:
            raise DegeneratePopulationError(str(exc), st.trace) from None
        phi = 1.0 if dphi >= 1.0 - st.phi else st.phi + dphi
        step = st.step + 1
        ess_pre = ess(weights)
        pop.weights = weights
        idx = stratified_resample(weights, derived_rng(cfg.seed, _RESAMPLE, step),
                                  cfg.resample_shared_offset)
        resampled = pop.take(idx)
        ess_post = ess(resampled.weights)
        pop, accept_rate = self.rejuvenate(resampled, phi, step, executor)
        self.state = SmcState(phi, step, pop, st.trace)
        record = {
            "step": step, "phi": phi, "delta_phi": dphi, "ess_pre": ess_pre, "ess_post": ess_post,
            "accept_rate": accept_rate,
            **population_stats(pop.members, pop.log_nml, pop.fits, self.magnitude),
            "unique_total": len(self.seen), "unique_accepted_total": len(self.accepted),
            "evaluations": self.evaluations, "config_hash": self.hash,
        }
        record = ordered_record(record)
        st.trace.append(record)
        self._take_snapshots()
        if self.on_step is not None:
            self.on_step(record, pop)
        return record

    def run(self) -> SmcResult:
        executor = _Executor(self.space, self.config.workers)
        try:
            if self.state is None:
                self.initialize(executor)
            while self.state.phi < 1.0:
                self.step(executor)
        finally:
            executor.close()
        return SmcResult(self.state.population, self.state.trace, self.snapshots, self.state.phi, self.space)


def run(config: SmcConfig, data: Dataset, on_step=None) -> SmcResult:
    """Sample the expression posterior; the final population is equally weighted."""
    return SmcSampler(config, data, on_step=on_step).run()


def mcmc_rejuvenate(population: Population, phi: float, config: SmcConfig, data: Dataset,
                    step: int = 1, space=None):
    """Standalone rejuvenation sweep (see ``SmcSampler.rejuvenate``)."""
    sampler = SmcSampler(config, data, space=space)
    executor = _Executor(sampler.space, 1)
    return sampler.rejuvenate(population, phi, step, executor)
