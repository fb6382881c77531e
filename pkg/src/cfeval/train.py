"""Maximum-likelihood training: Adam, temporal validation, early stopping,
and seeded random hyperparameter search. fit_evaluator is the one entry point
that turns prefix samples into a sealed EvaluatorBundle; fit_estimator trains
the squared-error outcome regressors that policies use.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from . import heads as hd
from .encode import EncoderState, fit_encoder
from .errors import CoverageError, TrainingError
from .eventlog import InterventionSpec, LogSchema, PrefixSample, temporal_split
from .heads import HeadSpec
from .learners import (EncodedBatch, Ensemble, EvaluatorBundle, OutcomeModel,
                       TreatmentModel, encode_batch, init_outcome_params,
                       init_treatment_params, outcome_raw_graph,
                       treatment_raw_graph, _lift)
from .rng import stream

VAL_FRACTION = 0.2
MIN_IMPROVEMENT = 1e-6
T_LEARNER_MIN_PER_LEVEL = 10


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 100
    patience: int = 10
    hidden_dim: int = 64
    seed: int | tuple = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs,
               self.patience, self.hidden_dim) <= 0:
            raise ValueError("TrainConfig fields must be positive")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")


@dataclass(frozen=True)
class SearchSpace:
    hidden_dims: tuple[int, ...] = (32, 64, 128)
    learning_rates: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    batch_sizes: tuple[int, ...] = (64, 128, 256)
    budget: int = 20

    def __post_init__(self):
        if not (self.hidden_dims and self.learning_rates and self.batch_sizes):
            raise ValueError("search grids must be non-empty")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")


@dataclass
class FitReport:
    train_nll: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)
    init_val: float = float("inf")  # validation loss at initialization
    best_epoch: int = 0             # 1-based; 0 = initialization won
    stopping: str = ""              # "early" | "max_epochs"

    @property
    def best_val(self) -> float:
        return min(self.val_nll + [self.init_val])

    def to_csv(self) -> str:
        lines = ["epoch,train_nll,val_nll"]
        for i, (tr, va) in enumerate(zip(self.train_nll, self.val_nll), start=1):
            lines.append(f"{i},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"


Dataset = tuple[EncodedBatch, np.ndarray, np.ndarray]  # x, t, y


def _subset(x: EncodedBatch, idx: np.ndarray) -> EncodedBatch:
    if isinstance(x, np.ndarray):
        return x[idx]
    steps, lengths, case = x
    return steps[idx], lengths[idx], case[idx]


def _n_rows(x: EncodedBatch) -> int:
    return len(x) if isinstance(x, np.ndarray) else len(x[1])


def _treatment_target(model: TreatmentModel, t: np.ndarray) -> np.ndarray:
    if model.head.kind == "bernoulli":
        return (t == model.levels[1]).astype(float)
    index = {level: i for i, level in enumerate(model.levels)}
    return np.array([index[int(v)] for v in t], dtype=float)


def _loss_graph(model, x, t, y, objective: str) -> tuple[dc.Tensor, dict]:
    tape = dc.Tape()
    lifted = _lift(tape, model.params)
    if isinstance(model, TreatmentModel):
        raw = treatment_raw_graph(model, tape, lifted, x)
        loss = hd.nll_graph(model.head, raw, _treatment_target(model, t))
    else:
        raw = outcome_raw_graph(model, tape, lifted, x, t)
        if objective == "mse":
            loss = hd.mse_graph(model.head, raw, y)
        else:
            loss = hd.nll_graph(model.head, raw, y)
    return loss, lifted


def eval_loss(model, data: Dataset, objective: str = "nll") -> float:
    x, t, y = data
    loss, _ = _loss_graph(model, x, t, y, objective)
    return float(loss.values)


class _Adam:
    def __init__(self, names, config: TrainConfig):
        self.m = {n: 0.0 for n in names}
        self.v = {n: 0.0 for n in names}
        self.step = 0
        self.cfg = config

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        c = self.cfg
        self.step += 1
        correct1 = 1.0 - c.beta1 ** self.step
        correct2 = 1.0 - c.beta2 ** self.step
        for name, g in grads.items():
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            m_hat = self.m[name] / correct1
            v_hat = self.v[name] / correct2
            params[name] = params[name] - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)


def mle_fit(model, train: Dataset, val: Dataset, config: TrainConfig,
            objective: str = "nll") -> tuple[dict[str, np.ndarray], FitReport]:
    """Mini-batch Adam on the mean batch loss; per-epoch seeded shuffling;
    early stopping on validation loss (strict decrease >= 1e-6 resets
    patience); the best-validation parameter snapshot is returned. The
    initialization counts as epoch-0 snapshot, so the returned parameters
    are never worse on validation than the initial ones."""
    if _n_rows(train[0]) == 0 or _n_rows(val[0]) == 0:
        raise TrainingError("mle_fit needs non-empty train and validation sets")
    if not model.params:
        raise TrainingError("model parameters must be initialized before mle_fit")

    params = {k: v.copy() for k, v in model.params.items()}
    adam = _Adam(sorted(params), config)
    report = FitReport()
    report.init_val = eval_loss(model, val, objective)
    best_val = report.init_val
    best_params = {k: v.copy() for k, v in params.items()}
    since_improvement = 0
    n = _n_rows(train[0])
    key = config.seed if isinstance(config.seed, tuple) else (config.seed,)

    for epoch in range(1, config.max_epochs + 1):
        order = stream(*key, "shuffle", epoch).permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = _subset(train[0], idx)
            model.params = params
            loss, lifted = _loss_graph(model, xb, train[1][idx], train[2][idx],
                                       objective)
            value = float(loss.values)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}")
            grads = dc.backward(loss)
            grad_arrays = {}
            for name, tensor in lifted.items():
                g = grads.get(tensor.node_id)
                grad_arrays[name] = g if g is not None else np.zeros_like(params[name])
            adam.update(params, grad_arrays)
            batch_losses.append(value)

        model.params = params
        val_value = eval_loss(model, val, objective)
        report.train_nll.append(float(np.mean(batch_losses)))
        report.val_nll.append(val_value)
        if val_value < best_val - MIN_IMPROVEMENT:
            best_val = val_value
            best_params = {k: v.copy() for k, v in params.items()}
            report.best_epoch = epoch
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= config.patience:
                report.stopping = "early"
                break
    if not report.stopping:
        report.stopping = "max_epochs"
    model.params = best_params
    return best_params, report


def hyper_search(space: SearchSpace, trial_fn, seed) -> TrainConfig:
    """Seeded uniform random search over the grid (without replacement while
    it lasts). trial_fn(config) -> validation loss. Ties break by smaller
    hidden_dim, then lower learning rate."""
    key = seed if isinstance(seed, tuple) else (seed,)
    grid = [TrainConfig(learning_rate=lr, batch_size=bs, hidden_dim=h, seed=seed)
            for h, lr, bs in itertools.product(
                space.hidden_dims, space.learning_rates, space.batch_sizes)]
    gen = stream(*key, "search")
    if space.budget <= len(grid):
        picks = gen.permutation(len(grid))[:space.budget]
    else:
        picks = gen.integers(0, len(grid), size=space.budget)
    results = []
    for trial_index, pick in enumerate(picks):
        config = grid[int(pick)]
        results.append((trial_fn(config), config.hidden_dim, config.learning_rate,
                        trial_index, config))
    results.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    return results[0][4]


# ---------------------------------------------------------------------------
# full evaluator / estimator fitting


@dataclass(frozen=True)
class FitOptions:
    """Scalar training knobs shared by every model in one fit run."""

    max_epochs: int = 100
    patience: int = 10
    search: SearchSpace = SearchSpace()
    val_fraction: float = VAL_FRACTION
    ensemble_mode: str = "average"


@dataclass
class PolicyEstimator:
    """An outcome regressor + its encoder, used by informed policies."""

    model: OutcomeModel
    encoder: EncoderState
    intervention: InterventionSpec


def _check_coverage(samples, levels, t_learner: bool):
    counts = {level: 0 for level in levels}
    for s in samples:
        if s.treatment in counts:
            counts[s.treatment] += 1
    for level, count in counts.items():
        if count == 0:
            raise CoverageError(f"treatment level {level} has no samples")
        if t_learner and count < T_LEARNER_MIN_PER_LEVEL:
            raise CoverageError(
                f"treatment level {level} has {count} samples; the T-learner "
                f"needs at least {T_LEARNER_MIN_PER_LEVEL}")


def _dataset(base, encoder, samples) -> Dataset:
    x = encode_batch(base, encoder, samples)
    t = np.array([s.treatment for s in samples])
    y = np.array([s.outcome for s in samples])
    return x, t, y


def _input_dims(base, encoder) -> tuple[int, int]:
    if base == "mlp":
        return encoder.flat_dim, 0
    return encoder.step_dim, encoder.case_dim


def _make_head(template: dict, y_train: np.ndarray) -> HeadSpec:
    kind = template["kind"]
    if kind in ("bernoulli", "categorical"):
        return HeadSpec(kind, n_classes=template.get("n_classes", 0))
    y_std = float(np.std(y_train))
    stats = {"y_mean": float(np.mean(y_train)), "y_std": y_std if y_std > 0 else 1.0}
    if kind == "gaussian":
        return HeadSpec("gaussian", **stats)
    return HeadSpec("mixed_flow", atoms=tuple(template.get("atoms", ())),
                    components=template.get("components", 8), **stats)


def _fit_one_outcome(kind, base, head, levels, train, val, dims, options,
                     seed, objective="nll") -> tuple[OutcomeModel, FitReport]:
    input_dim, case_dim = dims
    key = seed if isinstance(seed, tuple) else (seed,)

    def build(config: TrainConfig) -> OutcomeModel:
        model = OutcomeModel(kind, base, head, levels, config.hidden_dim,
                             input_dim, case_dim)
        model.params = init_outcome_params(model, (*key, "init", config.hidden_dim))
        return model

    def trial(config: TrainConfig) -> float:
        config = replace(config, max_epochs=options.max_epochs,
                         patience=options.patience)
        _, rep = mle_fit(build(config), train, val, config, objective)
        return rep.best_val

    best = hyper_search(options.search, trial, (*key, "hs"))
    best = replace(best, max_epochs=options.max_epochs, patience=options.patience,
                   seed=(*key, "final"))
    model = build(best)
    params, report = mle_fit(model, train, val, best, objective)
    model.params = params
    return model, report


def fit_treatment_model(base, levels, train, val, dims, options, seed
                        ) -> tuple[TreatmentModel, FitReport]:
    input_dim, case_dim = dims
    head = (HeadSpec("bernoulli") if len(levels) == 2 and levels[0] == 0
            else HeadSpec("categorical", n_classes=len(levels)))
    counts = np.array([(train[1] == level).sum() for level in levels], dtype=float)
    marginal = counts / counts.sum()
    key = seed if isinstance(seed, tuple) else (seed,)

    def build(config: TrainConfig) -> TreatmentModel:
        model = TreatmentModel(base, head, levels, config.hidden_dim, input_dim,
                               case_dim, marginal)
        model.params = init_treatment_params(model, (*key, "init", config.hidden_dim))
        return model

    def trial(config: TrainConfig) -> float:
        config = replace(config, max_epochs=options.max_epochs,
                         patience=options.patience)
        _, rep = mle_fit(build(config), train, val, config)
        return rep.best_val

    best = hyper_search(options.search, trial, (*key, "hs"))
    best = replace(best, max_epochs=options.max_epochs, patience=options.patience,
                   seed=(*key, "final"))
    model = build(best)
    params, report = mle_fit(model, train, val, best)
    model.params = params
    return model, report


def fit_evaluator(samples: list[PrefixSample], schema: LogSchema,
                  intervention: InterventionSpec, learner: str, base: str,
                  head_template: dict, options: FitOptions, seed,
                  ) -> tuple[EvaluatorBundle, dict[str, FitReport]]:
    """Fit a full evaluator: temporal split, encoder, hyperparameter search,
    outcome model(s) (three full fits for the ensemble), treatment model."""
    if learner not in ("s", "t", "tarnet", "ensemble"):
        raise ValueError(f"unknown learner kind {learner!r}")
    levels = intervention.levels
    _check_coverage(samples, levels, t_learner=learner in ("t", "ensemble"))

    train_samples, val_samples = temporal_split(samples, options.val_fraction)
    encoder = fit_encoder(train_samples, schema)
    train = _dataset(base, encoder, train_samples)
    val = _dataset(base, encoder, val_samples)
    dims = _input_dims(base, encoder)
    head = _make_head(head_template, train[2])
    key = seed if isinstance(seed, tuple) else (seed,)

    reports: dict[str, FitReport] = {}
    if learner == "ensemble":
        members = {}
        for kind in ("s", "t", "tarnet"):
            members[kind], reports[kind] = _fit_one_outcome(
                kind, base, head, levels, train, val, dims, options,
                (*key, "outcome", kind))
        outcome: OutcomeModel | Ensemble = Ensemble(members, options.ensemble_mode)
    else:
        outcome, reports[learner] = _fit_one_outcome(
            learner, base, head, levels, train, val, dims, options,
            (*key, "outcome", learner))

    treatment, reports["treatment"] = fit_treatment_model(
        base, levels, train, val, dims, options, (*key, "treatment"))

    bundle = EvaluatorBundle(outcome, treatment, encoder, intervention,
                             metadata={"seed": str(seed), "learner": learner,
                                       "base": base})
    return bundle, reports


def fit_estimator(samples: list[PrefixSample], schema: LogSchema,
                  intervention: InterventionSpec, learner: str, base: str,
                  options: FitOptions, seed) -> tuple[PolicyEstimator, FitReport]:
    """Train an outcome regressor (squared error through a gaussian head's
    mean) for use inside informed policies."""
    if learner not in ("s", "t", "tarnet"):
        raise ValueError(f"unknown estimator kind {learner!r}")
    levels = intervention.levels
    _check_coverage(samples, levels, t_learner=learner == "t")
    train_samples, val_samples = temporal_split(samples, options.val_fraction)
    encoder = fit_encoder(train_samples, schema)
    train = _dataset(base, encoder, train_samples)
    val = _dataset(base, encoder, val_samples)
    head = _make_head({"kind": "gaussian"}, train[2])
    model, report = _fit_one_outcome(learner, base, head, levels, train, val,
                                     _input_dims(base, encoder), options,
                                     seed, objective="mse")
    return PolicyEstimator(model, encoder, intervention), report
