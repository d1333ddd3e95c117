import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import pareto_oracle
from pqforge.config import config_from_dict
from pqforge.data import synth_dataset
from pqforge.errors import ConfigError
from pqforge.hpo import config_objective, pareto_front, run_study, sample_trial, silverman_bandwidth
from pqforge.tracking import RunTracker

SPACE = {
    "lr": {"type": "log_uniform", "low": 1e-4, "high": 1e-1},
    "x": {"type": "uniform", "low": -1.0, "high": 1.0},
    "n": {"type": "int_step", "low": 2, "high": 10, "step": 2},
    "act": {"type": "categorical", "choices": ["relu", "tanh"]},
}


def ks_pvalue(sample, cdf) -> float:
    """One-sample Kolmogorov-Smirnov p-value (asymptotic series with the Stephens correction)."""
    x = np.sort(np.asarray(sample))
    n = len(x)
    F = cdf(x)
    d = max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
    lam = (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n)) * d
    p = 2.0 * sum((-1) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam) for k in range(1, 101))
    return min(max(p, 0.0), 1.0)


def test_ks_helper_sanity():
    rng = np.random.default_rng(0)
    assert ks_pvalue(rng.uniform(size=2000), lambda v: v) > 0.01
    assert ks_pvalue(rng.uniform(size=2000) ** 2, lambda v: v) < 1e-6


def test_best_trial_is_the_minimum():
    values = [3.0, 1.0, 2.0]
    study = run_study({"x": {"type": "uniform", "low": 0, "high": 1}}, 3, lambda p, t: values[t],
                      objectives=["loss"], directions=["minimize"], sampler="random")
    assert study.best().id == 1


def test_pareto_example():
    values = [[0.9, 100], [0.8, 50], [0.7, 60], [0.9, 120]]
    assert pareto_front(values, ["maximize", "minimize"]) == [0, 1]


def test_equal_rows_are_both_on_the_front():
    assert pareto_front([[1, 1], [1, 1], [2, 2]], ["minimize", "minimize"]) == [0, 1]


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 3)),
              elements=st.integers(0, 6).map(float)),
       st.lists(st.sampled_from(["minimize", "maximize"]), min_size=3, max_size=3))
def test_pareto_matches_pairwise_oracle(values, dirs):
    dirs = dirs[: values.shape[1]]
    assert pareto_front(values, dirs) == pareto_oracle(values, dirs)


def test_single_option_categorical_always_returns_it():
    rng = np.random.default_rng(0)
    space = {"c": {"type": "categorical", "choices": ["only"]}}
    assert all(sample_trial(space, "random", [], rng)["c"] == "only" for _ in range(20))


def test_samples_stay_in_bounds():
    rng = np.random.default_rng(1)
    for _ in range(300):
        p = sample_trial(SPACE, "random", [], rng)
        assert 1e-4 <= p["lr"] <= 1e-1 and -1 <= p["x"] <= 1
        assert p["n"] in (2, 4, 6, 8, 10) and p["act"] in ("relu", "tanh")


def test_log_uniform_draws_are_uniform_in_log_space():
    rng = np.random.default_rng(2)
    draws = np.array([sample_trial({"lr": SPACE["lr"]}, "random", [], rng)["lr"] for _ in range(3000)])
    lo, hi = math.log(1e-4), math.log(1e-1)
    assert ks_pvalue(draws, lambda v: (np.log(v) - lo) / (hi - lo)) > 0.01


def test_failing_trial_does_not_stop_the_study(tmp_path):
    tracker = RunTracker(tmp_path / "hpo.jsonl")

    def objective(params, tid):
        if tid == 2:
            raise RuntimeError("diverged")
        if tid == 3:
            return float("nan")
        return params["x"]

    study = run_study({"x": SPACE["x"]}, 6, objective, sampler="random", tracker=tracker)
    status = [t.status for t in study.trials]
    assert status == ["complete", "complete", "failed", "failed", "complete", "complete"]
    assert "diverged" in study.trials[2].error
    assert [e["status"] for e in tracker.read()] == status


def test_studies_are_repeatable_with_parallel_workers():
    def objective(params, tid):
        return {"accuracy": -(params["x"] - 0.3) ** 2, "ebops": params["n"] * 10.0}

    kwargs = dict(objectives=["accuracy", "ebops"], directions=["maximize", "minimize"], seed=5)
    a = run_study(SPACE, 16, objective, workers=3, **kwargs)
    b = run_study(SPACE, 16, objective, workers=3, **kwargs)
    assert [t.params for t in a.trials] == [t.params for t in b.trials]
    assert [t.id for t in a.pareto()] == [t.id for t in b.pareto()]
    c = run_study(SPACE, 16, objective, workers=3, **{**kwargs, "seed": 6})
    assert [t.params for t in a.trials] != [t.params for t in c.trials]


def test_tpe_concentrates_near_the_optimum():
    def objective(params, tid):
        return -abs(params["x"] - 0.5)

    study = run_study({"x": SPACE["x"]}, 40, objective, sampler="tpe_lite", seed=0)
    late = [t.params["x"] for t in study.trials[20:]]
    early = [t.params["x"] for t in study.trials[:5]]
    assert np.mean(np.abs(np.array(late) - 0.5)) < np.mean(np.abs(np.array(early) - 0.5))


def test_parallel_trials_really_overlap():
    running, peak, lock = [0], [0], threading.Lock()
    barrier = threading.Barrier(2, timeout=5)

    def objective(params, tid):
        with lock:
            running[0] += 1
            peak[0] = max(peak[0], running[0])
        barrier.wait()
        with lock:
            running[0] -= 1
        return 0.0

    run_study({"x": SPACE["x"]}, 4, objective, sampler="random", workers=2)
    assert peak[0] == 2


def test_bad_inputs():
    with pytest.raises(ConfigError, match="empty"):
        run_study({}, 1, lambda p, t: 0.0)
    with pytest.raises(ConfigError, match="directions"):
        run_study({"x": SPACE["x"]}, 1, lambda p, t: 0.0, objectives=["a", "b"], directions=["minimize"])
    with pytest.raises(ConfigError, match="sampler"):
        sample_trial({"x": SPACE["x"]}, "grid", [], np.random.default_rng(0))


def test_silverman_bandwidth():
    pts = np.array([0.0, 1.0, 2.0, 3.0])
    sigma = np.std(pts, ddof=1)
    assert silverman_bandwidth(pts, 0.0, 3.0) == pytest.approx(1.06 * sigma * 4 ** -0.2)
    assert silverman_bandwidth(np.array([1.0]), 0.0, 10.0) > 0


def test_config_objective_trains_with_overrides():
    cfg = config_from_dict({"pruning": {"pruning_method": "dst"}, "training": {"epochs": 1, "batch_size": 64}})
    data = synth_dataset(200, seed=0)
    objective = config_objective(cfg, data, dtype=np.float64)
    out = objective({"pruning.alpha": 0.5, "training.learning_rate": 1e-3}, 0)
    assert set(out) >= {"accuracy", "ebops", "sparsity"}
    with pytest.raises(ConfigError):
        objective({"pruning.bogus": 1}, 1)
