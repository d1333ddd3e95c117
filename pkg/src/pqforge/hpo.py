"""Hyperparameter search: random and TPE-style samplers, studies, Pareto fronts."""

from __future__ import annotations

import logging
import math
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import make_rng
from .config import CategoricalDim, HPOConfig, IntStepDim, LogUniformDim, UniformDim
from .errors import ConfigError

log = logging.getLogger(__name__)

GAMMA = 0.25
N_CANDIDATES = 24
N_STARTUP = 5


@dataclass
class Trial:
    id: int
    params: dict
    values: list | None = None
    status: str = "running"
    error: str | None = None
    metrics: dict = field(default_factory=dict)
    duration: float = 0.0

    def to_dict(self) -> dict:
        return {"type": "trial", "trial": self.id, "params": self.params, "values": self.values,
                "status": self.status, "error": self.error, "metrics": self.metrics, "duration": self.duration}


# sampling ---------------------------------------------------------------------------------

def _coerce_space(space) -> dict:
    if not space:
        raise ConfigError("search space is empty")
    if isinstance(space, HPOConfig):
        space = space.search_space
    out = {}
    for name, dim in space.items():
        if isinstance(dim, dict):
            from pydantic import TypeAdapter

            from .config import Dimension

            dim = TypeAdapter(Dimension).validate_python(dim)
        out[name] = dim
    return out


def _draw(dim, rng: np.random.Generator):
    if isinstance(dim, LogUniformDim):
        return float(math.exp(rng.uniform(math.log(dim.low), math.log(dim.high))))
    if isinstance(dim, UniformDim):
        return float(rng.uniform(dim.low, dim.high))
    if isinstance(dim, IntStepDim):
        steps = (dim.high - dim.low) // dim.step
        return int(dim.low + dim.step * rng.integers(0, steps + 1))
    if isinstance(dim, CategoricalDim):
        return dim.choices[int(rng.integers(0, len(dim.choices)))]
    raise ConfigError(f"unknown dimension {dim!r}")


def sample_random(space: dict, rng: np.random.Generator) -> dict:
    return {name: _draw(dim, rng) for name, dim in space.items()}


def _to_internal(dim, value) -> float:
    if isinstance(dim, LogUniformDim):
        return math.log(value)
    if isinstance(dim, CategoricalDim):
        return float(dim.choices.index(value))
    return float(value)


def _bounds(dim):
    if isinstance(dim, LogUniformDim):
        return math.log(dim.low), math.log(dim.high)
    return float(dim.low), float(dim.high)


def silverman_bandwidth(points: np.ndarray, low: float, high: float) -> float:
    n = len(points)
    sigma = float(np.std(points, ddof=1)) if n > 1 else 0.0
    h = 1.06 * sigma * n ** (-0.2) if sigma > 0 else (high - low) / 10.0
    return max(h, (high - low) * 1e-3)


def _kde_logpdf(x: np.ndarray, points: np.ndarray, h: float) -> np.ndarray:
    z = (x[:, None] - points[None, :]) / h
    logk = -0.5 * z * z - math.log(h * math.sqrt(2 * math.pi))
    m = logk.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(logk - m).mean(axis=1, keepdims=True)))[:, 0]


def _tpe_dim(dim, good: list, bad: list, rng: np.random.Generator):
    if isinstance(dim, CategoricalDim):
        n = len(dim.choices)
        pg = np.ones(n) + np.bincount([dim.choices.index(v) for v in good], minlength=n)
        pb = np.ones(n) + np.bincount([dim.choices.index(v) for v in bad], minlength=n)
        pg, pb = pg / pg.sum(), pb / pb.sum()
        cands = rng.choice(n, size=N_CANDIDATES, p=pg)
        score = np.log(pg[cands]) - np.log(pb[cands])
        return dim.choices[int(cands[int(np.argmax(score))])]
    low, high = _bounds(dim)
    g = np.asarray([_to_internal(dim, v) for v in good])
    b = np.asarray([_to_internal(dim, v) for v in bad])
    hg, hb = silverman_bandwidth(g, low, high), silverman_bandwidth(b, low, high)
    centers = g[rng.integers(0, len(g), size=N_CANDIDATES)]
    cands = np.clip(centers + rng.normal(0.0, hg, size=N_CANDIDATES), low, high)
    score = _kde_logpdf(cands, g, hg) - _kde_logpdf(cands, b, hb)
    best = float(cands[int(np.argmax(score))])
    if isinstance(dim, LogUniformDim):
        return float(min(max(math.exp(best), dim.low), dim.high))
    if isinstance(dim, IntStepDim):
        k = int(round((best - dim.low) / dim.step))
        k = min(max(k, 0), (dim.high - dim.low) // dim.step)
        return int(dim.low + k * dim.step)
    return best


def _history_scores(history: list, directions: list) -> np.ndarray:
    """Lower is better.  Failed trials score worst; several objectives use Pareto rank."""
    n = len(history)
    k = len(directions)
    vals = np.full((n, k), np.inf)
    for r, t in enumerate(history):
        if t.status == "complete":
            vals[r] = [v if d == "minimize" else -v for v, d in zip(t.values, directions)]
    if k == 1:
        return vals[:, 0]
    return pareto_ranks(vals).astype(np.float64)


def sample_trial(space, sampler: str, history: list, rng: np.random.Generator,
                 directions: list | None = None) -> dict:
    """Draw one assignment.  ``tpe_lite`` falls back to random draws for the first trials."""
    space = _coerce_space(space)
    directions = directions or ["maximize"]
    if sampler == "random":
        return sample_random(space, rng)
    if sampler != "tpe_lite":
        raise ConfigError(f"unknown sampler {sampler!r}")
    done = [t for t in history if t.status in ("complete", "failed")]
    if len(done) < N_STARTUP:
        return sample_random(space, rng)
    scores = _history_scores(done, directions)
    order = np.argsort(scores, kind="stable")
    n_good = max(1, int(math.ceil(GAMMA * len(done))))
    good = [done[j] for j in order[:n_good]]
    bad = [done[j] for j in order[n_good:]] or good
    return {name: _tpe_dim(dim, [t.params[name] for t in good], [t.params[name] for t in bad], rng)
            for name, dim in space.items()}


# pareto -----------------------------------------------------------------------------------

def _as_minimization(values, directions) -> np.ndarray:
    V = np.asarray(values, dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[1] != len(directions):
        raise ConfigError(f"{V.shape[1]} objective values but {len(directions)} directions")
    sign = np.array([1.0 if d == "minimize" else -1.0 for d in directions])
    return V * sign


def pareto_front(values, directions) -> list[int]:
    """Indices of the non-dominated rows of ``values`` (ascending index order).

    Sweeps the rows in lexicographic order: a row can only be dominated by a
    row that sorts before it, so each row is checked against the front found
    so far.  Equal rows do not dominate each other.
    """
    V = _as_minimization(values, directions)
    if len(V) == 0:
        return []
    order = np.lexsort(V.T[::-1])
    front: list[int] = []
    for idx in order:
        v = V[idx]
        if front:
            F = V[front]
            if np.any(np.all(F <= v, axis=1) & np.any(F < v, axis=1)):
                continue
        front.append(int(idx))
    return sorted(front)


def pareto_ranks(V: np.ndarray) -> np.ndarray:
    """Non-dominated sorting rank of every row (0 = front), minimization, inf rows last."""
    n = len(V)
    ranks = np.full(n, -1)
    remaining = np.arange(n)
    rank = 0
    while remaining.size:
        sub = V[remaining]
        finite = np.all(np.isfinite(sub), axis=1)
        if not finite.any():
            ranks[remaining] = rank
            break
        idx = pareto_front(np.where(finite[:, None], sub, np.inf), ["minimize"] * V.shape[1])
        idx = [j for j in idx if finite[j]]
        ranks[remaining[idx]] = rank
        remaining = np.delete(remaining, idx)
        rank += 1
    return ranks


# studies ----------------------------------------------------------------------------------

@dataclass
class Study:
    trials: list
    objectives: list
    directions: list

    def complete(self) -> list:
        return [t for t in self.trials if t.status == "complete"]

    def best(self) -> Trial | None:
        done = self.complete()
        if not done:
            return None
        sign = 1.0 if self.directions[0] == "minimize" else -1.0
        return min(done, key=lambda t: (sign * t.values[0], t.id))

    def pareto(self) -> list:
        done = self.complete()
        if not done:
            return []
        idx = pareto_front([t.values for t in done], self.directions)
        return [done[j] for j in idx]


def _normalize_result(result, objectives: list) -> tuple:
    if isinstance(result, dict):
        values = [float(result[name]) for name in objectives]
        metrics = {k: v for k, v in result.items() if isinstance(v, (int, float, str, bool))}
    else:
        values = [float(v) for v in np.atleast_1d(result)]
        metrics = {}
    if len(values) != len(objectives):
        raise ValueError(f"objective returned {len(values)} values, expected {len(objectives)}")
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"objective returned non-finite values {values}")
    return values, metrics


def run_study(space, n_trials: int, objective: Callable, objectives=("accuracy",), directions=("maximize",),
              sampler: str = "tpe_lite", seed: int = 0, workers: int = 1, tracker=None) -> Study:
    """Run ``n_trials`` evaluations of ``objective(params, trial_id)``.

    Trials are proposed in synchronous batches of ``workers``: every trial in a
    batch sees the same history, and each draws from its own seeded stream,
    so results do not depend on thread scheduling.  A trial that raises or
    returns non-finite values is marked failed and the study continues.
    """
    space = _coerce_space(space)
    objectives, directions = list(objectives), list(directions)
    if len(objectives) != len(directions):
        raise ConfigError(f"{len(objectives)} objectives but {len(directions)} directions")
    trials: list[Trial] = []

    def run_one(trial: Trial):
        start = time.perf_counter()
        try:
            trial.values, trial.metrics = _normalize_result(objective(dict(trial.params), trial.id), objectives)
            trial.status = "complete"
        except Exception as exc:  # noqa: BLE001 - a failing trial must not stop the study
            trial.status = "failed"
            trial.error = f"{type(exc).__name__}: {exc}"
            log.warning("trial %d failed: %s", trial.id, trial.error)
            log.debug("%s", traceback.format_exc())
        trial.duration = time.perf_counter() - start
        if tracker is not None:
            tracker.log(trial.to_dict())
        return trial

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        while len(trials) < n_trials:
            batch = []
            for tid in range(len(trials), min(n_trials, len(trials) + max(1, workers))):
                rng = make_rng(seed, f"trial-{tid}")
                batch.append(Trial(tid, sample_trial(space, sampler, trials, rng, directions)))
            list(pool.map(run_one, batch))
            trials.extend(batch)
    return Study(trials, objectives, directions)


def config_objective(base_config, data, objectives=("accuracy",), model_factory=None, dtype=None):
    """Objective that trains ``base_config`` with the trial's dotted-path overrides.

    Returns the final summary metrics (``accuracy``, ``loss``, ``ebops``,
    ``sparsity``) for the given data split.
    """
    from .config import update_config
    from .model import hlf_mlp
    from .training import train_model

    factory = model_factory or (lambda cfg: hlf_mlp(cfg, dtype=dtype))

    def objective(params: dict, trial_id: int):
        cfg = update_config(base_config, params)
        model = factory(cfg)
        _, record = train_model(model, cfg, training_data=data.train, validation_data=data.val)
        return {k: v for k, v in record.summary.items() if not isinstance(v, dict)}

    return objective
