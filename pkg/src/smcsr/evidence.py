"""Constant fitting and the Laplace-approximated normalized marginal likelihood.

For an expression with fitted constants theta the noise model is iid
Gaussian.  By default the noise variance is profiled out
(``sigma^2 = SSE / N``), giving the log-likelihood

    ln L = -(N / 2) * (ln(2 pi sigma^2) + 1)

and the log normalized marginal likelihood is

    ln q = (n_params / 2) * ln(gamma) + (1 - gamma) * ln L,   gamma = 1 / sqrt(N)

where ``n_params`` counts the fitted constants plus the noise parameter.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares, minimize

from .canonical import canonicalize
from .expression import Expression, _check_inputs, _forward, compile_nodes
from .text import format_expression

SIGMA2_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    magnitude: float | None = None
    splits: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DatasetError(f"X shape {self.X.shape} does not match y length {self.y.shape[0]}")
        if self.y.size < 1:
            raise DatasetError("dataset needs at least one observation")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DatasetError("dataset contains non-finite entries")
        if self.magnitude is None:
            self.magnitude = float(np.median(np.abs(self.y)))
        self.splits = {k: np.asarray(v, dtype=int).ravel() for k, v in (self.splits or {}).items()}
        seen = np.zeros(self.n_rows, dtype=bool)
        for name, idx in self.splits.items():
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_rows):
                raise DatasetError(f"split {name!r} has out-of-range indices")
            if np.unique(idx).size != idx.size or np.any(seen[idx]):
                raise DatasetError(f"split {name!r} overlaps another split or repeats indices")
            seen[idx] = True

    @property
    def n_rows(self) -> int:
        return self.y.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def indices(self, split: str | None = "train") -> np.ndarray:
        if split is None or split == "all":
            return np.arange(self.n_rows)
        if split in self.splits:
            return self.splits[split]
        if split == "train":
            # no manifest: everything is training data
            return np.arange(self.n_rows)
        raise DatasetError(f"dataset has no {split!r} split")

    def subset(self, split: str | None = "train"):
        idx = self.indices(split)
        return self.X[idx], self.y[idx]

    def has_split(self, split: str) -> bool:
        return split in self.splits or split in ("train", "all")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        for name in sorted(self.splits):
            h.update(name.encode())
            h.update(self.splits[name].tobytes())
        return h.hexdigest()[:16]


def load_csv(path, splits_path=None) -> Dataset:
    """Read ``x0,...,x{n-1},y`` CSV plus an optional JSON split manifest.

    Without an explicit manifest a sibling ``<stem>.splits.json`` is used
    when present.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    expected = [f"x{i}" for i in range(len(header) - 1)] + ["y"]
    if header != expected or len(header) < 2:
        raise DatasetError(f"{path}: header must be x0,...,x{{n-1}},y; got {','.join(header)}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise DatasetError(f"{path}: ragged rows")
    if splits_path is None:
        sibling = path.with_name(path.stem + ".splits.json")
        splits_path = sibling if sibling.is_file() else None
    splits, magnitude = {}, None
    if splits_path is not None:
        splits_path = Path(splits_path)
        if not splits_path.is_file():
            raise DatasetError(f"split manifest not found: {splits_path}")
        try:
            manifest = json.loads(splits_path.read_text())
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{splits_path}: {exc}") from None
        magnitude = manifest.pop("magnitude", None)
        splits = {k: v for k, v in manifest.items() if k in ("train", "validation", "test")}
    return Dataset(data[:, :-1], data[:, -1], magnitude, splits)


def write_csv(data: Dataset, path, splits_path=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(data.n_features)] + ["y"])
        for xr, yv in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in xr] + [repr(float(yv))])
    if splits_path is None:
        splits_path = path.with_name(path.stem + ".splits.json")
    manifest = {k: [int(i) for i in v] for k, v in sorted(data.splits.items())}
    manifest["magnitude"] = float(data.magnitude)
    Path(splits_path).write_text(json.dumps(manifest) + "\n")


@dataclass
class EvidenceConfig:
    restarts: int = 3
    init_std: float = 10.0
    max_iter: int = 200
    step_tol: float = 1e-8
    # relative SSE decrease below which a step counts as converged
    sse_tol: float = 1e-8
    count_noise_param: bool = True
    # known noise standard deviation; None profiles it from the residuals
    noise_sigma: float | None = None
    warm_start: bool = False

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class FitResult:
    theta_star: np.ndarray
    log_likelihood: float
    n_params: int
    log_nml: float
    converged: bool
    n_restarts_used: int
    sse: float = math.inf
    n_data: int = 0

    @property
    def mse(self) -> float:
        return self.sse / self.n_data if self.n_data else math.inf


class _Problem:
    """Residuals and Jacobian of one expression on fixed data."""

    def __init__(self, expr: Expression, X, y):
        self.expr = expr
        self.X = X
        self.y = y
        self.n = y.shape[0]
        self._f = compile_nodes(expr.nodes, False)
        self._fg = compile_nodes(expr.nodes, True)

    def residual(self, theta):
        # callers run under np.errstate(all="ignore")
        return self._f(self.X, theta) - self.y

    def residual_jac(self, theta):
        v, jac = self._fg(self.X, theta)
        return v - self.y, jac


def _sse(r) -> float:
    s = float(r @ r)
    return s if math.isfinite(s) else math.inf


def levenberg_marquardt(problem: _Problem, theta0, max_iter=500, step_tol=1e-8, sse_tol=1e-8):
    """Damped Gauss-Newton with Marquardt diagonal scaling.

    Returns ``(theta, sse, converged, jacobian_ok)``; ``jacobian_ok`` is False
    when a non-finite Jacobian stopped the iteration.
    """
    theta = np.array(theta0, dtype=float)
    r, J = problem.residual_jac(theta)
    sse = _sse(r)
    if not math.isfinite(sse):
        return theta, math.inf, False, True
    if not np.all(np.isfinite(J)):
        return theta, sse, False, False
    lam = 1e-3
    for _ in range(max_iter):
        if sse == 0.0:
            return theta, sse, True, True
        A = J.T @ J
        g = J.T @ r
        d = A.diagonal().copy()
        d[d <= 0.0] = 1.0
        D = np.diag(d)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * D, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + step
            r_new = problem.residual(trial)
            sse_new = _sse(r_new)
            if sse_new < sse or (sse_new == sse and not np.any(step)):
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at machine precision
            return theta, sse, True, True
        decrease = sse - sse_new
        theta = trial
        r, J = problem.residual_jac(theta)
        sse = sse_new
        lam = max(lam * 0.1, 1e-15)
        if not np.all(np.isfinite(J)):
            return theta, sse, False, False
        if (np.linalg.norm(step) < step_tol * (np.linalg.norm(theta) + step_tol)
                or decrease <= sse_tol * sse):
            return theta, sse, True, True
    return theta, sse, False, True


def _minpack(problem: _Problem, theta0, config):
    """MINPACK's damped least squares; None when it cannot be trusted."""
    k = theta0.shape[0]
    r0, J0 = problem.residual_jac(theta0)
    if problem.n < k or not (np.all(np.isfinite(r0)) and np.all(np.isfinite(J0))):
        return None
    # MINPACK's result on a rank-deficient Jacobian varies between processes
    # (bit-level, but enough to break worker-count invariance)
    if np.linalg.matrix_rank(J0) < k:
        return None
    try:
        res = least_squares(problem.residual, theta0, jac=lambda t: problem.residual_jac(t)[1],
                            method="lm", xtol=config.step_tol, ftol=config.sse_tol,
                            max_nfev=config.max_iter)
    except (ValueError, np.linalg.LinAlgError):
        return None
    theta = np.asarray(res.x, dtype=float)
    sse = _sse(problem.residual(theta))
    if not math.isfinite(sse) or sse > _sse(r0):
        return None
    return theta, sse, bool(res.status > 0)


def _simplex(problem: _Problem, theta0, max_iter):
    def f(t):
        return _sse(problem.residual(t))

    res = minimize(f, theta0, method="Nelder-Mead",
                   options={"maxiter": max_iter * max(1, len(theta0)), "xatol": 1e-8, "fatol": 1e-12})
    return np.asarray(res.x, dtype=float), _sse(problem.residual(res.x)), bool(res.success)


def _fit(expr: Expression, X, y, rng, config: EvidenceConfig, restarts: int | None = None):
    """Best-of-restarts least squares.  Returns (theta, sse, converged)."""
    with np.errstate(all="ignore"):
        return _fit_restarts(expr, X, y, rng, config, restarts)


def _fit_restarts(expr, X, y, rng, config, restarts):
    problem = _Problem(expr, X, y)
    k = expr.n_params
    if k == 0:
        sse = _sse(problem.residual(np.zeros(0)))
        return np.zeros(0), sse, math.isfinite(sse)
    best = (np.array(expr.params, dtype=float), math.inf, False)
    for attempt in range(restarts or config.restarts):
        if attempt == 0 and config.warm_start:
            theta0 = np.array(expr.params, dtype=float)
        else:
            theta0 = rng.normal(0.0, config.init_std, size=k)
        out = _minpack(problem, theta0, config)
        if out is not None:
            theta, sse, conv = out
        else:
            theta, sse, conv, jac_ok = levenberg_marquardt(
                problem, theta0, config.max_iter, config.step_tol, config.sse_tol)
            if not jac_ok:
                theta, sse, conv = _simplex(problem, theta, config.max_iter)
        if sse < best[1]:
            best = (theta, sse, conv)
    return best


def gaussian_log_likelihood(sse: float, n: int, noise_sigma: float | None = None) -> float:
    if not math.isfinite(sse):
        return -math.inf
    if noise_sigma is not None:
        s2 = float(noise_sigma) ** 2
        return -0.5 * n * (LOG_2PI + math.log(s2)) - sse / (2.0 * s2)
    s2 = max(sse / n, SIGMA2_FLOOR)
    return -0.5 * n * (LOG_2PI + math.log(s2) + 1.0)


def fit_params(expr: Expression, data: Dataset, rng, restarts: int = 3,
               config: EvidenceConfig | None = None, split: str = "train"):
    """Maximum-likelihood constants and the maximized log-likelihood."""
    config = config or EvidenceConfig()
    X, y = data.subset(split)
    X = _check_inputs(expr, X)
    theta, sse, _ = _fit(expr, X, y, rng, config, restarts)
    return theta, gaussian_log_likelihood(sse, y.shape[0], config.noise_sigma)


def nml_from_loglik(log_likelihood: float, n_params: int, n_data: int) -> float:
    gamma = 1.0 / math.sqrt(n_data)
    if not math.isfinite(log_likelihood):
        return -math.inf
    if gamma == 1.0:
        return 0.0
    return 0.5 * n_params * math.log(gamma) + (1.0 - gamma) * log_likelihood


def log_nml(expr: Expression, data: Dataset, rng, config: EvidenceConfig | None = None,
            split: str = "train") -> FitResult:
    config = config or EvidenceConfig()
    X, y = data.subset(split)
    X = _check_inputs(expr, X)
    return _evidence(expr, X, y, rng, config)


def _evidence(expr, X, y, rng, config: EvidenceConfig) -> FitResult:
    theta, sse, conv = _fit(expr, X, y, rng, config)
    n = y.shape[0]
    loglik = gaussian_log_likelihood(sse, n, config.noise_sigma)
    counted_noise = config.count_noise_param and config.noise_sigma is None
    n_params = expr.n_params + (1 if counted_noise else 0)
    return FitResult(
        theta_star=theta,
        log_likelihood=loglik,
        n_params=n_params,
        log_nml=nml_from_loglik(loglik, n_params, n),
        converged=bool(conv and math.isfinite(loglik)),
        n_restarts_used=config.restarts if expr.n_params else 0,
        sse=sse,
        n_data=n,
    )


def predict(expr: Expression, data: Dataset, split: str | None = "train") -> np.ndarray:
    X, _ = data.subset(split)
    X = _check_inputs(expr, X)
    with np.errstate(all="ignore"):
        v, _ = _forward(expr, X, None, with_grad=False)
    return np.broadcast_to(np.asarray(v, dtype=float), (X.shape[0],)).copy()


def mse(expr: Expression, data: Dataset, split: str | None = "train") -> float:
    """Mean squared error using the expression's stored constants."""
    _, y = data.subset(split)
    r = predict(expr, data, split) - y
    if not np.all(np.isfinite(r)):
        return math.inf
    return float(np.mean(r * r))


def nrmse(expr: Expression, data: Dataset, split: str | None = "train") -> float:
    m = mse(expr, data, split)
    if not math.isfinite(m):
        return math.inf
    return math.sqrt(m) / data.magnitude


class EvidenceCache:
    """Reporting cache of FitResults keyed by canonical form and dataset."""

    def __init__(self):
        self._store: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(expr: Expression, data: Dataset) -> tuple:
        return format_expression(canonicalize(expr)), data.fingerprint()

    def log_nml(self, expr, data, rng, config=None, split="train") -> FitResult:
        k = self.key(expr, data) + (split,)
        with self._lock:
            hit = self._store.get(k)
            if hit is not None:
                self.hits += 1
                return hit
        result = log_nml(expr, data, rng, config, split)
        with self._lock:
            self.misses += 1
            self._store.setdefault(k, result)
            return self._store[k]

    def merge(self, other: "EvidenceCache") -> None:
        with self._lock:
            for k, v in other._store.items():
                self._store.setdefault(k, v)

    def __len__(self):
        return len(self._store)
