"""The staged training loop: pre-training, rounds of compression training, fine-tuning."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, adam_step
from .config import CompressionConfig, _StageRuleError, check_stage_rules, config_hash
from .errors import ConfigError, DataError, StateError
from .model import ModelGraph
from .nn import softmax_ce_loss
from .pruning import PDP, Wanda, pdp_budgets

log = logging.getLogger(__name__)

REWIND_ROLES = ("weight", "bias", "norm")


@dataclass(frozen=True)
class TrainingPlan:
    pretraining_epochs: int
    epochs: int
    fine_tuning_epochs: int
    rounds: int = 1
    rewind: str = "never"
    save_weights_epoch: int = 0
    pruning_first: bool = True

    @classmethod
    def from_config(cls, config: CompressionConfig) -> "TrainingPlan":
        t = config.training
        return cls(t.pretraining_epochs, t.epochs, t.fine_tuning_epochs, t.rounds, t.rewind,
                   t.save_weights_epoch, t.pruning_first)


@dataclass
class RunRecord:
    config_hash: str
    epochs: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "running"
    summary: dict = field(default_factory=dict)
    artifact: str | None = None
    wall_clock: float = 0.0

    def add_epoch(self, entry: dict):
        if self.epochs and entry["epoch"] <= self.epochs[-1]["epoch"]:
            raise StateError("epoch indices must increase")
        self.epochs.append(entry)

    def finish(self, status: str, summary: dict):
        if self.status != "running":
            raise StateError(f"run already finished with status {self.status!r}")
        self.status = status
        self.summary = summary

    def lines(self) -> list[dict]:
        """JSON-ready events: one per epoch, then one terminal summary."""
        out = [{"type": "epoch", "config_hash": self.config_hash, **e} for e in self.epochs]
        out.append({"type": "summary", "config_hash": self.config_hash, "status": self.status,
                    "artifact": self.artifact, "wall_clock": self.wall_clock, **self.summary})
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def as_arrays(data):
    if data is None:
        return None
    if hasattr(data, "X") and hasattr(data, "y"):
        return np.asarray(data.X), np.asarray(data.y)
    X, y = data
    return np.asarray(X), np.asarray(y)


def iterate_batches(X, y, batch_size: int, rng: np.random.Generator | None = None):
    order = rng.permutation(len(X)) if rng is not None else np.arange(len(X))
    for start in range(0, len(X), batch_size):
        idx = order[start:start + batch_size]
        yield X[idx], y[idx]


def default_train_epoch(model: ModelGraph, epoch: int, training_data, optimizer: AdamState,
                        batch_size: int = 1024, rng: np.random.Generator | None = None, **kwargs) -> dict:
    """One pass over the data: forward, task + compression loss, backward, Adam, step hooks."""
    X, y = as_arrays(training_data)
    if len(X) == 0:
        raise DataError("training split is empty")
    model.train(True)
    dtype = model.parameters()[0].dtype
    params = model.parameters()
    total, correct, seen = 0.0, 0, 0
    for xb, yb in iterate_batches(X, y, batch_size, rng):
        if len(xb) < 2 and any(layer.kind == "batchnorm" for layer in model.layers):
            continue
        model.zero_grad()
        logits = model(ad.Tensor(xb.astype(dtype, copy=False)))
        loss = softmax_ce_loss(logits, yb)
        extra = model.compression_loss()
        objective = loss if extra is None else loss + extra
        objective.backward()
        adam_step(params, optimizer)
        model.post_step()
        total += float(loss.data) * len(xb)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
        seen += len(xb)
    return {"loss": total / max(seen, 1), "accuracy": correct / max(seen, 1)}


def evaluate(model: ModelGraph, data, batch_size: int = 4096) -> dict:
    """Loss, accuracy, per-layer sparsity and EBOPs over a full split."""
    X, y = as_arrays(data)
    if len(X) == 0:
        raise DataError("cannot evaluate on an empty split")
    logits = model.predict(X, batch_size)
    loss = float(softmax_ce_loss(ad.Tensor(logits.astype(np.float64)), y).data)
    return {
        "loss": loss,
        "accuracy": float(np.mean(np.argmax(logits, axis=1) == y)),
        "sparsity": model.layer_sparsity(),
        "ebops": model.ebops(),
    }


def default_validate_epoch(model: ModelGraph, epoch: int, validation_data, **kwargs) -> dict:
    metrics = evaluate(model, validation_data)
    return {"val_loss": metrics["loss"], "val_accuracy": metrics["accuracy"]}


def rewind_weights(model: ModelGraph, snapshot: dict | None, policy: str, round_index: int,
                   rounds: int) -> bool:
    """Restore weights, biases and norm parameters from ``snapshot`` when ``policy`` asks.

    Called after each round's training stage.  Masks and mask learnables are
    never rewound.  Returns whether a restore happened.
    """
    if policy == "never":
        return False
    if policy not in ("every_round", "post_training_stage"):
        raise ConfigError(f"unknown rewind policy {policy!r}")
    if policy == "post_training_stage" and round_index != rounds - 1:
        return False
    if snapshot is None:
        raise StateError(f"rewind policy {policy!r} needs a weight snapshot but none was saved")
    params = model.named_parameters()
    for name, value in snapshot.items():
        params[name].data = value.copy()
    return True


def prepare_pruning(model: ModelGraph, config: CompressionConfig, training_data, batch_size: int = 1024):
    """Work done once pre-training is over: PDP budgets and Wanda's one-shot pruning."""
    pdp_layers = [p for p in model.pruners() if isinstance(p, PDP)]
    if pdp_layers:
        budgets = pdp_budgets([p.scores() for p in pdp_layers], pdp_layers[0].target)
        for p, b in zip(pdp_layers, budgets):
            p.set_budget(b)
    wanda_layers = [p for p in model.pruners() if isinstance(p, Wanda)]
    if wanda_layers:
        X, _ = as_arrays(training_data)
        batches = getattr(config.pruning, "calibration_batches", 8)
        for p in wanda_layers:
            p.calibrating = True
        try:
            model.predict(X[:batches * batch_size], batch_size)
        finally:
            for p in wanda_layers:
                p.calibrating = False
        if wanda_layers[0].use_layer_budgets:
            scores = [np.abs(p.weight.data) * 1.0 for p in wanda_layers]
            budgets = pdp_budgets(scores, wanda_layers[0].target)
            for p, b in zip(wanda_layers, budgets):
                p.prune(sparsity=b)
        else:
            for p in wanda_layers:
                p.prune()


def train_model(model: ModelGraph, config: CompressionConfig, train_epoch: Callable | None = None,
                validate_epoch: Callable | None = None, training_data=None, validation_data=None,
                tracker=None, **kwargs):
    """Run every configured stage and return ``(model, RunRecord)``.

    ``train_epoch(model, epoch, training_data, **kwargs)`` and
    ``validate_epoch(model, epoch, validation_data, **kwargs)`` return metric
    dicts.  A custom ``train_epoch`` must call ``model.post_step()`` after each
    optimizer step and add ``model.compression_loss()`` to its loss.
    """
    try:
        check_stage_rules(config)
    except _StageRuleError as exc:
        raise ConfigError(str(exc)) from None
    plan = TrainingPlan.from_config(config)
    train_epoch = train_epoch or default_train_epoch
    validate_epoch = validate_epoch or default_validate_epoch
    t = config.training
    kwargs.setdefault("optimizer", AdamState(lr=t.learning_rate, weight_decay=t.weight_decay))
    kwargs.setdefault("batch_size", t.batch_size)
    kwargs.setdefault("rng", ad.make_rng(t.seed, "batches"))
    record = RunRecord(config_hash(config))
    start = time.perf_counter()
    counter = [0]

    def run_epochs(stage: str, n: int, round_index: int = 0, hooks: bool = False, snapshot_at: int | None = None):
        snapshot = None
        for e in range(n):
            if snapshot_at is not None and e == snapshot_at:
                snapshot = model.state_dict(REWIND_ROLES)
                record.events.append({"event": "snapshot", "stage": stage, "round": round_index, "epoch": e})
            if hooks:
                model.on_epoch_start(e, n)
            metrics = dict(train_epoch(model, counter[0], training_data, **kwargs) or {})
            if validation_data is not None:
                metrics.update(validate_epoch(model, counter[0], validation_data, **kwargs) or {})
            if hooks:
                model.on_epoch_end(e, n)
            entry = {"epoch": counter[0], "stage": stage, "round": round_index, "stage_epoch": e,
                     "sparsity": model.sparsity(), "ebops": model.ebops(),
                     "mask_updates": sum(p.state.updates for p in model.pruners()), **metrics}
            record.add_epoch(entry)
            if tracker is not None:
                tracker.log({"type": "epoch", "config_hash": record.config_hash, **entry})
            log.info("%s r%d e%d %s", stage, round_index, e,
                     {k: round(v, 5) for k, v in metrics.items() if isinstance(v, float)})
            counter[0] += 1
        return snapshot

    try:
        # pre-training: no pruning; no quantization when the compression search follows
        model.set_pruning_active(False)
        if plan.pretraining_epochs:
            record.events.append({"event": "stage_start", "stage": "pretraining"})
            if config.fitcompress.enabled:
                model.set_quantization_enabled(False)
            pre_kwargs = kwargs
            if config.fitcompress.enabled and config.fitcompress.pretraining_weight_decay:
                pre_kwargs = dict(kwargs, optimizer=AdamState(lr=t.learning_rate,
                                                              weight_decay=config.fitcompress.pretraining_weight_decay))
            saved = kwargs
            kwargs = pre_kwargs
            run_epochs("pretraining", plan.pretraining_epochs)
            kwargs = saved
        if config.fitcompress.enabled:
            from .fitcompress import apply_fitcompress, fitcompress_search

            result = fitcompress_search(model, training_data, config.fitcompress, batch_size=t.batch_size)
            apply_fitcompress(model, result)
            model.set_quantization_enabled(config.quantization.enable_quantization)
            record.events.append({"event": "fitcompress", "bits": result.bits, "sparsity": result.sparsity,
                                  "ratio": result.ratio})
        if model.pruners():
            prepare_pruning(model, config, training_data, t.batch_size)

        # compression training
        model.set_pruning_active(True)
        snapshot = None
        for r in range(plan.rounds):
            record.events.append({"event": "stage_start", "stage": "training", "round": r})
            model.on_round_start(r)
            taken = run_epochs("training", plan.epochs, r, hooks=True,
                               snapshot_at=plan.save_weights_epoch if r == 0 else None)
            snapshot = taken if taken is not None else snapshot
            if rewind_weights(model, snapshot, plan.rewind, r, plan.rounds):
                record.events.append({"event": "rewind", "round": r})

        # fine-tuning on frozen hard masks; masks are rounded even when this stage is empty
        model.finalize_masks()
        record.events.append({"event": "masks_finalized", "hashes": model.mask_hashes()})
        if plan.fine_tuning_epochs:
            record.events.append({"event": "stage_start", "stage": "fine_tuning"})
            run_epochs("fine_tuning", plan.fine_tuning_epochs)

        q = config.quantization
        summary = {"method": config.pruning_method or "none",
                   "granularity": "per_weight" if q.use_high_granularity_quantization else q.granularity,
                   "quantized": q.enable_quantization, "hgq": q.use_high_granularity_quantization,
                   "sparsity": model.sparsity(), "layer_sparsity": model.layer_sparsity(), "ebops": model.ebops()}
        if validation_data is not None:
            final = evaluate(model, validation_data)
            summary.update(accuracy=final["accuracy"], loss=final["loss"])
        record.wall_clock = time.perf_counter() - start
        record.finish("complete", summary)
    except Exception:
        record.wall_clock = time.perf_counter() - start
        if record.status == "running":
            record.finish("failed", {})
        raise
    finally:
        if tracker is not None and record.status != "running":
            tracker.log(record.lines()[-1])
    return model, record
