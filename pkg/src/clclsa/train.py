"""Training loop and grid search.

One epoch is: forward all observed views, complete missing latents, assemble
the weighted objective, one Adam step. Full-batch is the default (the
reference recipe trains on the whole set each step); mini-batching is
available. Runs are bitwise reproducible for a fixed seed in single-thread
mode.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import model as md
from . import numerics as nm
from .data import MultiOmicsDataset, SplitSpec, split
from .model import CLCLSAParams, LossBreakdown, LossWeights, ModelConfig
from .numerics import AdamState, RngStream, adam_step, gradients

TERM_NAMES = ("al", "co", "cl")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults follow the published recipe.

    2500 epochs, Adam at 1e-4 with step decay, full-batch. `reduction` picks
    per-subject means ("mean", default) or the as-printed sums ("sum") inside
    the loss terms. `disabled_terms` removes a term's code path entirely,
    which is bitwise equivalent to setting its weight to zero.
    """

    epochs: int = 2500
    initial_lr: float = 1e-4
    lr_schedule: str = "step"
    lr_decay_factor: float = 0.2
    lr_decay_every: int = 500
    batch_size: Optional[int] = None
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    reduction: str = "mean"
    eval_every: int = 0
    disabled_terms: tuple = ()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.initial_lr <= 0:
            raise nm.HyperparameterError("initial_lr must be positive")
        if self.lr_schedule not in ("step", "constant"):
            raise ValueError("lr_schedule must be 'step' or 'constant'")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if self.batch_size is not None and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs 2 rows)")
        if any(t not in TERM_NAMES for t in self.disabled_terms):
            raise ValueError(f"disabled_terms must be among {TERM_NAMES}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs, "initial_lr": self.initial_lr,
            "lr_schedule": self.lr_schedule, "lr_decay_factor": self.lr_decay_factor,
            "lr_decay_every": self.lr_decay_every, "batch_size": self.batch_size,
            "seed": self.seed, "weights": self.weights.to_dict(),
            "reduction": self.reduction, "eval_every": self.eval_every,
            "disabled_terms": list(self.disabled_terms),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights.from_dict(d["weights"])
        if "disabled_terms" in d:
            d["disabled_terms"] = tuple(d["disabled_terms"])
        return cls(**d)


@dataclass
class EpochLog:
    epoch: int
    breakdown: LossBreakdown
    lr: float
    latent_variance: list
    train_acc: Optional[float] = None


class TrainingAborted(RuntimeError):
    """A loss term or gradient went non-finite; carries the last good state."""

    def __init__(self, term: str, epoch: int, params: CLCLSAParams, logs):
        super().__init__(
            f"training aborted at epoch {epoch}: term {term!r} is non-finite")
        self.term = term
        self.epoch = epoch
        self.params = params
        self.logs = logs


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: initial_lr * factor^(epoch // every); or constant."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if cfg.lr_schedule == "constant":
        return cfg.initial_lr
    return cfg.initial_lr * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def _active_terms(cfg: TrainConfig):
    return tuple(t for t in TERM_NAMES if t not in cfg.disabled_terms)


def _effective_weights(ds: MultiOmicsDataset, weights: LossWeights) -> LossWeights:
    # with complete data there is nothing to translate; the cross-view term is off
    if ds.is_complete() and weights.lambda_co != 0.0:
        return replace(weights, lambda_co=0.0)
    return weights


def train(ds: MultiOmicsDataset, model_config: ModelConfig, train_config: TrainConfig,
          params: Optional[CLCLSAParams] = None):
    """Train CLCLSA on a dataset; returns (params, [EpochLog]).

    Aborts with TrainingAborted (carrying the pre-step parameters and the logs
    so far) the first time a loss term or gradient is non-finite.
    """
    if ds.n_subjects == 0:
        raise ValueError("training set is empty")
    if ds.n_views != model_config.num_views:
        raise nm.ShapeError(
            f"dataset has {ds.n_views} views, model expects {model_config.num_views}")
    weights = _effective_weights(ds, train_config.weights)
    active = _active_terms(train_config)
    if params is None:
        params = CLCLSAParams.init_random(model_config, train_config.seed)
    tensors = params.tensors()
    adam = AdamState()
    rngs = [RngStream(train_config.seed, f"dropout/view{i}")
            for i in range(model_config.num_views)]
    batch_rng = RngStream(train_config.seed, "batches")
    logs = []
    n = ds.n_subjects
    for epoch in range(train_config.epochs):
        lr = lr_at(epoch, train_config)
        if train_config.batch_size is None or train_config.batch_size >= n:
            batches = [np.arange(n)]
        else:
            order = batch_rng.permutation(n)
            b = train_config.batch_size
            batches = [np.sort(order[s:s + b]) for s in range(0, n, b)]
            # a trailing 1-row batch cannot be batch-normalized; merge it
            if len(batches) > 1 and batches[-1].size < 2:
                batches[-2] = np.sort(np.concatenate(batches[-2:]))
                batches.pop()
        breakdown = None
        for batch in batches:
            views_b = [v[batch] for v in ds.views]
            mask_b = ds.mask[batch]
            labels_b = ds.labels[batch]
            try:
                total, breakdown, cache = md.build_objective(
                    views_b, mask_b, labels_b, params, weights,
                    mode="train", rngs=rngs, reduction=train_config.reduction,
                    active=active)
            except md.NumericError as exc:
                raise TrainingAborted(exc.term, epoch, params, logs) from exc
            grads = gradients(total, tensors)
            if not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingAborted("gradient", epoch, params, logs)
            adam_step(tensors, grads, adam, lr)
        entry = EpochLog(epoch=epoch, breakdown=breakdown, lr=lr,
                         latent_variance=md.latent_variances(cache))
        if train_config.eval_every and (epoch + 1) % train_config.eval_every == 0:
            _, pred = md.predict(ds.views, ds.mask, params)
            entry.train_acc = float((pred == ds.labels).mean())
        logs.append(entry)
    return params, logs


# ---------------------------------------------------------------------------
# Grid search


@dataclass(frozen=True)
class GridSpec:
    """Candidate weight sets and the selection rule for grid search."""

    lambda_al_values: tuple = md.GRID_VALUES
    lambda_co_values: tuple = md.GRID_VALUES
    lambda_cl_values: tuple = md.GRID_VALUES
    metric: str = "acc"
    val_fraction: float = 0.2

    def __post_init__(self):
        if not (self.lambda_al_values and self.lambda_co_values and self.lambda_cl_values):
            raise ValueError("candidate sets must be nonempty")


@dataclass
class GridTrial:
    index: int
    weights: LossWeights
    metric: Optional[float]
    status: str
    detail: str = ""


@dataclass
class GridSearchResult:
    trials: list
    best: Optional[GridTrial]

    def ranked(self):
        ok = [t for t in self.trials if t.status == "ok"]
        return sorted(ok, key=lambda t: (-t.metric, t.weights.lambda_cl,
                                         t.weights.lambda_co, t.weights.lambda_al))


def grid_search(train_ds: MultiOmicsDataset, val_ds: Optional[MultiOmicsDataset],
                model_config: ModelConfig, grid: GridSpec,
                base: TrainConfig) -> GridSearchResult:
    """Train one model per weight triple and rank by the validation metric.

    With complete training data the cross-view candidates collapse to {0}.
    Ties break toward the smaller (lambda_cl, lambda_co, lambda_al) triple.
    Aborted trials are recorded as failed and excluded from the ranking.
    """
    if val_ds is None:
        train_ds, val_ds = split(
            train_ds, SplitSpec(train_fraction=1.0 - grid.val_fraction,
                                seed=nm.derive_seed(base.seed, "grid-val"),
                                stratified=True))
    co_values = grid.lambda_co_values
    if train_ds.is_complete():
        co_values = (0.0,)
    trials = []
    for index, (al, co, cl) in enumerate(
            itertools.product(grid.lambda_al_values, co_values, grid.lambda_cl_values)):
        weights = LossWeights(lambda_al=al, lambda_co=co, lambda_cl=cl,
                              alpha=base.weights.alpha)
        cfg = replace(base, weights=weights,
                      seed=nm.derive_seed(base.seed, "grid-trial", index))
        try:
            params, _ = train(train_ds, model_config, cfg)
        except TrainingAborted as exc:
            trials.append(GridTrial(index, weights, None, "failed", str(exc)))
            continue
        _, pred = md.predict(val_ds.views, val_ds.mask, params)
        metric = _selection_metric(grid.metric, pred, val_ds)
        trials.append(GridTrial(index, weights, metric, "ok"))
    result = GridSearchResult(trials=trials, best=None)
    ranked = result.ranked()
    result.best = ranked[0] if ranked else None
    return result


def _selection_metric(name: str, pred, ds: MultiOmicsDataset) -> float:
    from . import evaluation as ev

    if name == "acc":
        return ev.accuracy(pred, ds.labels)
    if name == "macro_f1":
        return ev.multiclass_f1(pred, ds.labels, mode="macro")
    if name == "weighted_f1":
        return ev.multiclass_f1(pred, ds.labels, mode="weighted")
    raise ValueError(f"unknown selection metric {name!r}")
