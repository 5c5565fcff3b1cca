"""Synthetic problems, model selection and the benchmark campaign."""

from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .canonical import structure_key
from .config import ConfigError, evidence_config, generation_config, variation_config
from .evidence import Dataset, DatasetError, EvidenceConfig, _fit
from .expression import Expression, ExpressionError, compile_nodes, evaluate
from .gp import VARIANTS, GpConfig, matched_generations, run_gp
from .smc import DegeneratePopulationError, SmcConfig, SmcResult, _complexity_of_nodes
from .smc import run as run_smc
from .text import format_expression, parse

log = logging.getLogger(__name__)

SELECTION_METHODS = ("max-nml", "validation", "mode", "best-loss")
ALGORITHMS = ("smc",) + VARIANTS
RESULT_COLUMNS = ("problem", "algorithm", "repetition", "selection", "nrmse_train", "nrmse_test",
                  "min_nrmse_test_pop", "complexity", "n_params", "ground_truth_hit", "steps",
                  "generations", "seed", "status")
GROUND_TRUTH_THRESHOLD = 1e-10
VALIDATION_FRACTION = 0.2
MAX_SYNTH_ROUNDS = 100


class SpecError(ValueError):
    pass


# ---------------------------------------------------------------- problem specs

@dataclass
class ProblemSpec:
    name: str
    expression: str
    ranges: list
    n_total: int
    n_train: int
    noise_fraction: float = 0.1
    seed: int = 0
    # absolute noise standard deviation; overrides noise_fraction when set
    noise_std: float | None = None
    operators: list | None = None

    def __post_init__(self):
        try:
            self.truth = parse(self.expression)
        except ExpressionError as exc:
            raise SpecError(f"{self.name}: cannot parse expression: {exc}") from None
        if self.truth.n_params:
            raise SpecError(f"{self.name}: ground truth must use numeric literals, not fitted constants")
        rng_list = []
        for r in self.ranges:
            low, high = (r["low"], r["high"]) if isinstance(r, dict) else r
            low, high = float(low), float(high)
            if not (math.isfinite(low) and math.isfinite(high)) or low > high:
                raise SpecError(f"{self.name}: invalid range [{low}, {high}]")
            rng_list.append((low, high))
        self.ranges = rng_list
        if self.truth.max_feature >= len(self.ranges):
            raise SpecError(f"{self.name}: expression uses x{self.truth.max_feature} "
                            f"but only {len(self.ranges)} ranges are given")
        if not 1 <= self.n_train <= self.n_total:
            raise SpecError(f"{self.name}: need 1 <= n_train <= n_total")
        if self.noise_fraction < 0 or (self.noise_std is not None and self.noise_std < 0):
            raise SpecError(f"{self.name}: noise must be nonnegative")

    @property
    def n_features(self) -> int:
        return len(self.ranges)

    def to_dict(self) -> dict:
        d = {"name": self.name, "expression": self.expression,
             "ranges": [{"low": lo, "high": hi} for lo, hi in self.ranges],
             "n_total": self.n_total, "n_train": self.n_train,
             "noise_fraction": self.noise_fraction, "seed": self.seed}
        if self.noise_std is not None:
            d["noise_std"] = self.noise_std
        if self.operators is not None:
            d["operators"] = list(self.operators)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        if not isinstance(d, dict):
            raise SpecError("problem spec must be a JSON object")
        allowed = {"name", "expression", "ranges", "n_total", "n_train", "noise_fraction",
                   "seed", "noise_std", "operators"}
        unknown = set(d) - allowed
        if unknown:
            raise SpecError(f"unknown problem spec keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from None
        except (KeyError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"bad problem spec: {exc}") from None

    @classmethod
    def load(cls, path) -> "ProblemSpec":
        path = Path(path)
        if not path.is_file():
            raise SpecError(f"problem spec not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: {exc}") from None


BUILTIN_NAMES = ("demo", "coulomb", "kinetic", "ratio", "torque")


def builtin_problem(name: str) -> ProblemSpec:
    if name not in BUILTIN_NAMES:
        raise SpecError(f"unknown built-in problem {name!r}; choose from {BUILTIN_NAMES}")
    text = resources.files("smcsr.problems").joinpath(f"{name}.json").read_text()
    return ProblemSpec.from_dict(json.loads(text))


def resolve_problem(ref) -> ProblemSpec:
    """A ProblemSpec from a dict, a built-in name or a JSON path."""
    if isinstance(ref, ProblemSpec):
        return ref
    if isinstance(ref, dict):
        return ProblemSpec.from_dict(ref)
    if isinstance(ref, str) and ref in BUILTIN_NAMES:
        return builtin_problem(ref)
    return ProblemSpec.load(ref)


# ---------------------------------------------------------------- synthesis

def synthesize_with_truth(spec: ProblemSpec, rng=None):
    """Dataset plus the noiseless targets for every row."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    lows = np.array([lo for lo, _ in spec.ranges])
    highs = np.array([hi for _, hi in spec.ranges])
    X = rng.uniform(lows, highs, size=(spec.n_total, spec.n_features))
    y = evaluate(spec.truth, X)
    for _ in range(MAX_SYNTH_ROUNDS):
        bad = ~np.isfinite(y)
        if not bad.any():
            break
        X[bad] = rng.uniform(lows, highs, size=(int(bad.sum()), spec.n_features))
        y[bad] = evaluate(spec.truth, X[bad])
    else:
        raise DatasetError(f"{spec.name}: ground truth is non-finite on the sampled inputs")
    magnitude = float(np.median(np.abs(y)))
    sigma = spec.noise_std if spec.noise_std is not None else spec.noise_fraction * magnitude
    train = np.arange(spec.n_train)
    test = np.arange(spec.n_train, spec.n_total)
    y_obs = y.copy()
    if sigma > 0:
        y_obs[train] += rng.normal(0.0, sigma, size=train.size)
    splits = {"train": train}
    if test.size:
        splits["test"] = test
    return Dataset(X, y_obs, magnitude, splits), y


def synthesize(spec: ProblemSpec, rng=None) -> Dataset:
    """Noisy training rows and noiseless test rows; magnitude from the clean targets."""
    return synthesize_with_truth(spec, rng)[0]


def carve_validation(data: Dataset, rng, fraction: float = VALIDATION_FRACTION) -> Dataset:
    """Move a random ``fraction`` of the training rows into a validation split."""
    train = data.indices("train")
    n_val = max(1, int(round(fraction * train.size)))
    if n_val >= train.size:
        raise DatasetError("training split too small to carve a validation split")
    picked = np.zeros(train.size, dtype=bool)
    picked[rng.choice(train.size, size=n_val, replace=False)] = True
    splits = dict(data.splits)
    splits["train"] = train[~picked]
    splits["validation"] = train[picked]
    return Dataset(data.X, data.y, data.magnitude, splits)


# ---------------------------------------------------------------- scoring

def _nrmse_rows(expr: Expression, X, y, magnitude) -> float:
    if y.size == 0:
        return math.nan
    with np.errstate(all="ignore"):
        r = compile_nodes(expr.nodes, False)(X, np.asarray(expr.params, dtype=float)) - y
        m = float(np.mean(r * r)) if np.all(np.isfinite(r)) else math.inf
    return math.sqrt(m) / magnitude if math.isfinite(m) else math.inf


def split_nrmse(expr: Expression, data: Dataset, split: str) -> float:
    if not data.has_split(split):
        return math.nan
    X, y = data.subset(split)
    return _nrmse_rows(expr, X, y, data.magnitude)


def population_nrmse(members, data: Dataset, split: str) -> np.ndarray:
    """NRMSE of every member; identical (structure, constants) pairs are scored once."""
    if not data.has_split(split):
        return np.full(len(members), math.nan)
    X, y = data.subset(split)
    memo: dict = {}
    out = np.empty(len(members))
    for i, m in enumerate(members):
        key = (m.nodes, m.params)
        if key not in memo:
            memo[key] = _nrmse_rows(m, X, y, data.magnitude)
        out[i] = memo[key]
    return out


def select_model(population, method: str, data: Dataset | None = None, variant: str = "smc") -> Expression:
    """Pick one expression from a final population.

    ``best-loss`` uses the algorithm's own training loss: evidence for SMC
    and GP-NML, training MSE for GP-MSE and GP-agg.
    """
    members = population.members
    if not members:
        raise ValueError("population is empty")
    lq = np.asarray(population.log_nml, dtype=float)
    if method == "best-loss" and variant in ("smc", "gp-nml"):
        method = "max-nml"
    if method == "max-nml":
        return members[int(np.argmax(lq))]
    if method == "mode":
        groups: dict = {}
        for i, m in enumerate(members):
            g = groups.setdefault(structure_key(m), [0, i])
            g[0] += 1
            j = g[1]
            if lq[i] > lq[j] or (lq[i] == lq[j] and m.params < members[j].params):
                g[1] = i
        # largest class; ties go to higher evidence, then to the canonical text
        _, (_, best) = min(groups.items(), key=lambda kv: (-kv[1][0], -lq[kv[1][1]], kv[0]))
        return members[best]
    if method in ("validation", "best-loss"):
        split = "validation" if method == "validation" else "train"
        if data is None or (split == "validation" and split not in data.splits):
            raise DatasetError(f"{method} selection needs a {split} split")
        scores = population_nrmse(members, data, split)
        scores = np.where(np.isnan(scores), np.inf, scores)
        order = np.lexsort((-lq, scores))
        return members[int(order[0])]
    raise ValueError(f"unknown selection method {method!r}")


def ground_truth_identified(expr: Expression, data: Dataset, split: str = "test",
                            threshold: float = GROUND_TRUTH_THRESHOLD, rng=None) -> bool:
    """Refit the constants on ``split`` and test the refit NRMSE against ``threshold``."""
    if not data.has_split(split) or (split != "train" and split not in data.splits):
        return False
    X, y = data.subset(split)
    if expr.max_feature >= X.shape[1]:
        return False
    if expr.n_params:
        rng = rng if rng is not None else np.random.default_rng(0)
        config = EvidenceConfig(restarts=5, max_iter=2000, step_tol=1e-15, sse_tol=1e-15,
                                warm_start=True)
        try:
            theta, sse, _ = _fit(expr, X, y, rng, config)
        except (np.linalg.LinAlgError, ValueError):
            return False
        if not math.isfinite(sse):
            return False
        expr = expr.with_params(theta)
    score = _nrmse_rows(expr, X, y, data.magnitude)
    return math.isfinite(score) and score < threshold


# ---------------------------------------------------------------- figure data

def posterior_predictive_histogram(population, x_grid, y_bins) -> np.ndarray:
    """Counts of member predictions per (y-bin, x) cell.

    Rows are the ``len(y_bins) - 1`` bins followed by one overflow row that
    counts non-finite predictions; finite values outside the bin range are
    clipped into the edge bins, so every column sums to the population size.
    """
    members = population.members if hasattr(population, "members") else population
    x_grid = np.asarray(x_grid, dtype=float)
    X = x_grid[:, None] if x_grid.ndim == 1 else x_grid
    edges = np.asarray(y_bins, dtype=float)
    n_bins = edges.size - 1
    if n_bins < 1:
        raise ValueError("need at least two bin edges")
    counts = np.zeros((n_bins + 1, X.shape[0]), dtype=np.int64)
    cols = np.arange(X.shape[0])
    memo: dict = {}
    for m in members:
        key = (m.nodes, m.params)
        rows = memo.get(key)
        if rows is None:
            with np.errstate(all="ignore"):
                v = evaluate(m, X)
            finite = np.isfinite(v)
            rows = np.full(v.shape, n_bins)
            rows[finite] = np.clip(np.searchsorted(edges, v[finite], side="right") - 1, 0, n_bins - 1)
            memo[key] = rows
        np.add.at(counts, (rows, cols), 1)
    return counts


def _iqr(values) -> float:
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan
    q1, q3 = np.percentile(v, [25, 75])
    return float(q3 - q1)


def nml_distribution_snapshots(result: SmcResult) -> list[dict]:
    """Evidence values recorded at the requested tempering levels, with their IQR."""
    return [{**s, "iqr": _iqr(s["log_nml"])} for s in result.snapshots]


# ---------------------------------------------------------------- campaign

@dataclass
class CampaignConfig:
    problems: list
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    repetitions: int = 1
    seed: int = 0
    population_size: int = 200
    n_mcmc: int = 10
    ess_target_fraction: float = 0.95
    selections: list = field(default_factory=lambda: ["max-nml", "mode", "best-loss"])
    tournament_size: int = 4
    generation: dict = field(default_factory=dict)
    variation: dict = field(default_factory=dict)
    evidence: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    # generations for GP runs when no SMC run is in the campaign
    generations: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("campaign seed is required")
        self.problems = [resolve_problem(p) for p in self.problems]
        names = [p.name for p in self.problems]
        if len(set(names)) != len(names):
            raise ConfigError("problem names must be unique")
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad:
            raise ConfigError(f"unknown algorithms {sorted(bad)}")
        bad = set(self.selections) - set(SELECTION_METHODS)
        if bad:
            raise ConfigError(f"unknown selection methods {sorted(bad)}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if "smc" not in self.algorithms and self.generations is None:
            raise ConfigError("GP-only campaigns need 'generations'")
        # validate the nested configs early
        generation_config(self.generation)
        variation_config(self.variation)
        evidence_config(self.evidence)

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown campaign keys {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, SpecError) as exc:
            raise ConfigError(str(exc)) from None

    def smc(self, spec: ProblemSpec, seed: int) -> SmcConfig:
        gen = generation_config(self.generation, spec.operators)
        return SmcConfig(seed=seed, population_size=self.population_size, n_mcmc=self.n_mcmc,
                         ess_target_fraction=self.ess_target_fraction, generation=gen,
                         variation=variation_config(self.variation, gen.max_nodes),
                         evidence=evidence_config(self.evidence),
                         snapshots=tuple(self.snapshots), workers=self.workers)

    def gp(self, spec: ProblemSpec, variant: str, seed: int, n_generations: int) -> GpConfig:
        gen = generation_config(self.generation, spec.operators)
        return GpConfig(variant=variant, seed=seed, n_generations=n_generations,
                        population_size=self.population_size, tournament_size=self.tournament_size,
                        generation=gen, variation=variation_config(self.variation, gen.max_nodes),
                        evidence=evidence_config(self.evidence), workers=self.workers)


def cell_seed(master: int, problem: str, repetition: int) -> int:
    """Seed of one (problem, repetition) cell, independent of execution order."""
    ss = np.random.SeedSequence(int(master), spawn_key=(zlib.crc32(problem.encode()), int(repetition)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _run_rows(name, algorithm, rep, seed, population, data, selections, variant, steps, generations):
    test_scores = population_nrmse(population.members, data, "test")
    finite = test_scores[np.isfinite(test_scores)]
    min_test = float(finite.min()) if finite.size else (math.nan if np.isnan(test_scores).all() else math.inf)
    rows = []
    for method in selections:
        if method == "validation":
            continue
        chosen = select_model(population, method, data, variant)
        rows.append(_row(name, algorithm, rep, method, chosen, data, min_test, steps, generations, seed))
    return rows


def _row(name, algorithm, rep, method, chosen, data, min_test, steps, generations, seed, status="ok"):
    has_test = "test" in data.splits
    return {
        "problem": name, "algorithm": algorithm, "repetition": rep, "selection": method,
        "nrmse_train": split_nrmse(chosen, data, "train"),
        "nrmse_test": split_nrmse(chosen, data, "test") if has_test else math.nan,
        "min_nrmse_test_pop": min_test,
        "complexity": _complexity_of_nodes(chosen.nodes), "n_params": chosen.n_params,
        "ground_truth_hit": ground_truth_identified(chosen, data) if has_test else False,
        "steps": steps, "generations": generations, "seed": seed, "status": status,
        "expression": format_expression(chosen),
    }


def _error_row(name, algorithm, rep, seed, message):
    row = {c: math.nan for c in RESULT_COLUMNS}
    row.update(problem=name, algorithm=algorithm, repetition=rep, selection="", seed=seed,
               ground_truth_hit=False, steps="", generations="", status=f"error: {message}",
               expression="")
    return row


class _Trajectory:
    """Per-step diagnostics on the normalized compute axis."""

    def __init__(self, data):
        self.data = data
        self.points = []

    def smc(self, record, population):
        self._add(record, population.members)

    def gp(self, record, members, fits):
        self._add(record, members)

    def _add(self, record, members):
        test = population_nrmse(members, self.data, "test")
        finite = test[np.isfinite(test)]
        self.points.append({
            "step": record["step"], "phi": record["phi"],
            "min_nrmse_train": record["min_nrmse_train"],
            "min_nrmse_test": float(finite.min()) if finite.size else None,
            "mean_log_nml": record["mean_log_nml"], "unique_total": record["unique_total"],
            "unique_accepted_total": record["unique_accepted_total"],
            "accept_rate": record["accept_rate"],
        })

    def finish(self):
        n = len(self.points)
        for p in self.points:
            p["compute"] = p["step"] / n if n else 0.0
        return self.points


def _histogram_figure(spec: ProblemSpec, population, data: Dataset, n_x=61, n_y=40):
    lo, hi = spec.ranges[0]
    x_grid = np.linspace(lo, hi, n_x)
    y = data.y
    pad = 0.25 * (y.max() - y.min() or 1.0)
    edges = np.linspace(y.min() - pad, y.max() + pad, n_y + 1)
    counts = posterior_predictive_histogram(population, x_grid, edges)
    return {"x_grid": x_grid.tolist(), "y_edges": edges.tolist(), "counts": counts.tolist(),
            "train_x": data.subset("train")[0][:, 0].tolist(), "train_y": data.subset("train")[1].tolist()}


def run_cell(config: CampaignConfig, spec: ProblemSpec, rep: int) -> dict:
    """All algorithms on one (problem, repetition); failures become error rows."""
    seed = cell_seed(config.seed, spec.name, rep)
    data = synthesize(spec)
    rows, figures = [], {"trajectories": [], "snapshots": [], "histograms": []}
    steps = None
    generations = config.generations
    meta = {"problem": spec.name, "repetition": rep, "seed": seed}

    if "smc" in config.algorithms:
        traj = _Trajectory(data)
        try:
            res = run_smc(config.smc(spec, seed), data, on_step=traj.smc)
            steps = res.n_steps
            generations = matched_generations(res.trace, config.n_mcmc)
            rows += _run_rows(spec.name, "smc", rep, seed, res.population, data, config.selections,
                              "smc", steps, generations)
            figures["trajectories"].append({**meta, "algorithm": "smc", "points": traj.finish()})
            figures["snapshots"].append({**meta, "snapshots": nml_distribution_snapshots(res)})
            if spec.n_features == 1:
                figures["histograms"].append({**meta, **_histogram_figure(spec, res.population, data)})
        except DegeneratePopulationError as exc:
            rows.append(_error_row(spec.name, "smc", rep, seed, str(exc)))
            generations = None
        if "validation" in config.selections:
            rows.append(_validation_row(config, spec, rep, seed, data))

    for variant in VARIANTS:
        if variant not in config.algorithms:
            continue
        if not generations:
            rows.append(_error_row(spec.name, variant, rep, seed, "no paired SMC run"))
            continue
        traj = _Trajectory(data)
        try:
            res = run_gp(config.gp(spec, variant, seed, generations), data, on_generation=traj.gp)
        except DegeneratePopulationError as exc:
            rows.append(_error_row(spec.name, variant, rep, seed, str(exc)))
            continue
        rows += _run_rows(spec.name, variant, rep, seed, res.population, data,
                          [s for s in config.selections if s != "validation"], variant, steps, generations)
        figures["trajectories"].append({**meta, "algorithm": variant, "points": traj.finish()})
    return {"rows": rows, "figures": figures}


def _validation_row(config, spec, rep, seed, data):
    """Separate SMC run that trains on a carved-down split and selects on the carved rows."""
    carved = carve_validation(data, np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,))))
    try:
        res = run_smc(config.smc(spec, seed), carved)
    except DegeneratePopulationError as exc:
        return _error_row(spec.name, "smc", rep, seed, f"validation run: {exc}")
    test = population_nrmse(res.population.members, carved, "test")
    finite = test[np.isfinite(test)]
    min_test = float(finite.min()) if finite.size else math.nan
    chosen = select_model(res.population, "validation", carved)
    return _row(spec.name, "smc", rep, "validation", chosen, carved, min_test, res.n_steps,
                matched_generations(res.trace, config.n_mcmc), seed)


def _cell_path(out_dir: Path, spec: ProblemSpec, rep: int) -> Path:
    return out_dir / "cells" / f"{spec.name}__{rep}.json"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return "" if v is None else str(v)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_json_safe(obj), indent=1, sort_keys=True) + "\n")


def run_campaign(config: CampaignConfig, out_dir=None) -> list[dict]:
    """Run every (problem, repetition) cell; completed cells in ``out_dir`` are reused."""
    out_dir = Path(out_dir) if out_dir is not None else None
    cells = []
    for spec in config.problems:
        for rep in range(config.repetitions):
            path = _cell_path(out_dir, spec, rep) if out_dir else None
            if path is not None and path.is_file():
                log.info("reusing completed cell %s", path.name)
                cell = json.loads(path.read_text())
            else:
                try:
                    cell = run_cell(config, spec, rep)
                except Exception as exc:  # noqa: BLE001 - campaign keeps going
                    log.exception("cell %s/%d failed", spec.name, rep)
                    seed = cell_seed(config.seed, spec.name, rep)
                    cell = {"rows": [_error_row(spec.name, a, rep, seed, repr(exc)) for a in config.algorithms],
                            "figures": {}, "failed": True}
                if path is not None and not cell.get("failed"):
                    path.parent.mkdir(parents=True, exist_ok=True)
                    dump_json(cell, path)
                    cell = json.loads(path.read_text())
            cells.append(cell)
    rows = [r for c in cells for r in c["rows"]]
    if out_dir is not None:
        write_results(rows, out_dir / "results.csv")
        figures = {"trajectories": [], "snapshots": [], "histograms": []}
        for c in cells:
            for k in figures:
                figures[k].extend(c.get("figures", {}).get(k, []))
        dump_json(figures, out_dir / "figures.json")
    return rows


def write_results(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS + ("expression",))
        for r in rows:
            w.writerow([_fmt(_from_json(r.get(c))) if c not in ("steps", "generations") else _fmt(r.get(c))
                        for c in RESULT_COLUMNS + ("expression",)])


def _from_json(v):
    # cells reloaded from JSON carry None for non-finite numbers
    return math.nan if v is None else v


def read_results(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
