"""Causal learner architectures over the nn bases and distribution heads.

Outcome models parameterize P(Y | T, X):
  s      - one base network on [x ++ onehot(t)], one head projection
  t      - one independent base network + head projection per treatment level
  tarnet - one shared base (MLP stack, or the LSTM when base="lstm") feeding
           per-level MLP towers, each with its own head projection
plus an ensemble that averages per-index samples from all three. A separate
TreatmentModel parameterizes P(T | X) and carries a deconfounding knob:
alpha=1 replaces the conditional with the empirical marginal.

Inputs are encoded views of prefixes: a flat matrix for MLP bases, or a
(steps, lengths, case_features) padded batch for LSTM bases. Treatment is
never inside x; the S-learner appends it, branch models select on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import diffcore as dc
from . import heads as hd
from . import nn
from .encode import EncoderState, encode_flat, encode_sequence, pad_sequences
from .eventlog import InterventionSpec, PrefixSample
from .heads import DistParams, HeadSpec
from .rng import stream

MLP_HIDDEN_LAYERS = 2  # base depth is fixed; width is the tuned knob
ENSEMBLE_MEMBERS = ("s", "t", "tarnet")

FlatBatch = np.ndarray
SeqBatch = tuple[np.ndarray, np.ndarray, np.ndarray]  # steps, lengths, case
EncodedBatch = Union[FlatBatch, SeqBatch]


@dataclass
class OutcomeModel:
    kind: str                  # "s" | "t" | "tarnet"
    base: str                  # "mlp" | "lstm"
    head: HeadSpec
    levels: tuple[int, ...]
    hidden: int
    input_dim: int             # flat dim (mlp) or step dim (lstm)
    case_dim: int              # lstm only; 0 for mlp
    params: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TreatmentModel:
    base: str
    head: HeadSpec             # bernoulli (binary) or categorical over levels
    levels: tuple[int, ...]
    hidden: int
    input_dim: int
    case_dim: int
    marginal: np.ndarray       # empirical P(T = level) over levels, from training
    params: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Ensemble:
    members: dict[str, OutcomeModel]   # keys exactly ENSEMBLE_MEMBERS
    mode: str = "average"              # "average" | "pool"

    def __post_init__(self):
        if tuple(sorted(self.members)) != tuple(sorted(ENSEMBLE_MEMBERS)):
            raise ValueError(f"ensemble needs members {ENSEMBLE_MEMBERS}")
        if self.mode not in ("average", "pool"):
            raise ValueError(f"unknown ensemble mode {self.mode!r}")


@dataclass
class EvaluatorBundle:
    outcome: OutcomeModel | Ensemble
    treatment: TreatmentModel
    encoder: EncoderState
    intervention: InterventionSpec
    metadata: dict = field(default_factory=dict)

    @property
    def base(self) -> str:
        m = self.outcome
        return (m.members["s"] if isinstance(m, Ensemble) else m).base

    @property
    def head(self) -> HeadSpec:
        m = self.outcome
        return (m.members["s"] if isinstance(m, Ensemble) else m).head

    def outcome_members(self) -> dict[str, OutcomeModel]:
        if isinstance(self.outcome, Ensemble):
            return dict(self.outcome.members)
        return {self.outcome.kind: self.outcome}


# ---------------------------------------------------------------------------
# parameter initialization


def _mlp_names(prefix: str, dims: list[int], seed) -> dict[str, np.ndarray]:
    p = nn.init_mlp(dims, seed)
    return {f"{prefix}.{name}": arr for name, arr in p.arrays()}


def _lstm_names(prefix: str, input_dim, hidden, case_dim, seed) -> dict[str, np.ndarray]:
    p = nn.init_lstm(input_dim, hidden, case_dim, hidden, seed)
    return {f"{prefix}.{name}": arr for name, arr in p.arrays()}


def _head_names(prefix: str, feature_dim: int, head: HeadSpec, seed) -> dict[str, np.ndarray]:
    gen = stream(*nn._seed_key(seed), "init_head", feature_dim, head.param_count)
    bound = 1.0 / np.sqrt(feature_dim)
    return {f"{prefix}.w": gen.uniform(-bound, bound, (feature_dim, head.param_count)),
            f"{prefix}.b": np.zeros(head.param_count)}


def _base_input_dim(model: OutcomeModel | TreatmentModel, with_treatment: bool) -> tuple[int, int]:
    """(net input dim, net case dim) after the S-learner's treatment one-hot."""
    extra = len(model.levels) if with_treatment else 0
    if model.base == "mlp":
        return model.input_dim + extra, 0
    return model.input_dim, model.case_dim + extra


def init_outcome_params(model: OutcomeModel, seed) -> dict[str, np.ndarray]:
    key = nn._seed_key(seed)
    h = model.hidden
    params: dict[str, np.ndarray] = {}

    def base(prefix, in_dim, case_dim, component_key):
        if model.base == "mlp":
            dims = [in_dim] + [h] * MLP_HIDDEN_LAYERS
            return _mlp_names(prefix, dims, component_key)
        return _lstm_names(prefix, in_dim, h, case_dim, component_key)

    if model.kind == "s":
        in_dim, case_dim = _base_input_dim(model, with_treatment=True)
        params |= base("base", in_dim, case_dim, (*key, "s_base"))
        params |= _head_names("head", h, model.head, (*key, "s_head"))
    elif model.kind == "t":
        in_dim, case_dim = _base_input_dim(model, with_treatment=False)
        for level in model.levels:
            params |= base(f"branch{level}.base", in_dim, case_dim,
                           (*key, "t_base", level))
            params |= _head_names(f"branch{level}.head", h, model.head,
                                  (*key, "t_head", level))
    elif model.kind == "tarnet":
        in_dim, case_dim = _base_input_dim(model, with_treatment=False)
        params |= base("shared", in_dim, case_dim, (*key, "tarnet_shared"))
        for level in model.levels:
            params |= _mlp_names(f"tower{level}", [h, h], (*key, "tarnet_tower", level))
            params |= _head_names(f"tower{level}.head", h, model.head,
                                  (*key, "tarnet_head", level))
    else:
        raise ValueError(f"unknown learner kind {model.kind!r}")
    return params


def init_treatment_params(model: TreatmentModel, seed) -> dict[str, np.ndarray]:
    key = nn._seed_key(seed)
    h = model.hidden
    if model.base == "mlp":
        params = _mlp_names("base", [model.input_dim] + [h] * MLP_HIDDEN_LAYERS,
                            (*key, "treat_base"))
    else:
        params = _lstm_names("base", model.input_dim, h, model.case_dim,
                             (*key, "treat_base"))
    params |= _head_names("head", h, model.head, (*key, "treat_head"))
    return params


# ---------------------------------------------------------------------------
# forward graphs


def _lift(tape: dc.Tape, params: dict[str, np.ndarray]) -> dict[str, dc.Tensor]:
    return {name: tape.leaf(arr, param=True) for name, arr in params.items()}


def _mlp_from(lifted, prefix) -> nn.MLPParams:
    weights, biases, i = [], [], 0
    while f"{prefix}.w{i}" in lifted:
        weights.append(lifted[f"{prefix}.w{i}"])
        biases.append(lifted[f"{prefix}.b{i}"])
        i += 1
    return nn.MLPParams(weights, biases)


def _lstm_from(lifted, prefix) -> nn.LSTMParams:
    return nn.LSTMParams(lifted[f"{prefix}.wx"], lifted[f"{prefix}.wh"],
                         lifted[f"{prefix}.b"], lifted[f"{prefix}.proj_w"],
                         lifted[f"{prefix}.proj_b"])


def _onehot_levels(levels: tuple[int, ...], t: np.ndarray) -> np.ndarray:
    out = np.zeros((len(t), len(levels)))
    index = {level: i for i, level in enumerate(levels)}
    for row, value in enumerate(t):
        out[row, index[int(value)]] = 1.0
    return out


def _base_features(base_kind: str, lifted, prefix: str, tape: dc.Tape,
                   x: EncodedBatch) -> dc.Tensor:
    if base_kind == "mlp":
        xt = x if isinstance(x, dc.Tensor) else tape.leaf(np.atleast_2d(x))
        return dc.tanh(nn.mlp_forward(_mlp_from(lifted, prefix), xt))
    steps, lengths, case = x
    steps_t = steps if isinstance(steps, dc.Tensor) else tape.leaf(steps)
    case_t = case if isinstance(case, dc.Tensor) else tape.leaf(np.atleast_2d(case))
    return dc.tanh(nn.lstm_forward(_lstm_from(lifted, prefix), steps_t, lengths, case_t))


def _head_raw(lifted, prefix: str, features: dc.Tensor) -> dc.Tensor:
    return dc.add(dc.matmul(features, lifted[f"{prefix}.w"]), lifted[f"{prefix}.b"])


def _s_input(model, x: EncodedBatch, t: np.ndarray):
    onehot = _onehot_levels(model.levels, t)
    if model.base == "mlp":
        return np.concatenate([np.atleast_2d(x), onehot], axis=1)
    steps, lengths, case = x
    return steps, lengths, np.concatenate([np.atleast_2d(case), onehot], axis=1)


def outcome_raw_graph(model: OutcomeModel, tape: dc.Tape,
                      lifted: dict[str, dc.Tensor], x: EncodedBatch,
                      t: np.ndarray) -> dc.Tensor:
    """Raw head parameters (batch, param_count) for treatments t."""
    t = np.atleast_1d(np.asarray(t))
    for value in np.unique(t):
        if int(value) not in model.levels:
            raise ValueError(f"treatment {int(value)} not in levels {model.levels}")
    if model.kind == "s":
        feats = _base_features(model.base, lifted, "base", tape, _s_input(model, x, t))
        return _head_raw(lifted, "head", feats)
    if model.kind == "t":
        raws = []
        for level in model.levels:
            feats = _base_features(model.base, lifted, f"branch{level}.base", tape, x)
            raws.append((level, _head_raw(lifted, f"branch{level}.head", feats)))
    else:  # tarnet
        rep = _base_features(model.base, lifted, "shared", tape, x)
        raws = []
        for level in model.levels:
            tower = dc.tanh(nn.mlp_forward(_mlp_from(lifted, f"tower{level}"), rep))
            raws.append((level, _head_raw(lifted, f"tower{level}.head", tower)))
    total = None
    for level, raw in raws:
        mask = tape.leaf((t == level).astype(float)[:, None])
        masked = dc.mul(mask, raw)
        total = masked if total is None else dc.add(total, masked)
    return total


def treatment_raw_graph(model: TreatmentModel, tape: dc.Tape,
                        lifted: dict[str, dc.Tensor], x: EncodedBatch) -> dc.Tensor:
    feats = _base_features(model.base, lifted, "base", tape, x)
    return _head_raw(lifted, "head", feats)


# ---------------------------------------------------------------------------
# prediction and sampling (numpy side)


def predict_outcome_params(model: OutcomeModel, x: EncodedBatch, t) -> DistParams:
    """DistParams for a batch of encoded prefixes under treatment t (scalar
    or per-row vector)."""
    n = len(np.atleast_2d(x)) if model.base == "mlp" else len(x[1])
    t_vec = np.full(n, t) if np.isscalar(t) else np.asarray(t)
    tape = dc.Tape()
    lifted = _lift(tape, model.params)
    raw = outcome_raw_graph(model, tape, lifted, x, t_vec)
    return _constrain(model.head, raw.values)


def _constrain(head: HeadSpec, raw: np.ndarray) -> DistParams:
    if head.kind == "bernoulli":
        logit = raw[:, 0]
        return DistParams("bernoulli", {"logit": logit, "p": hd._sigmoid(logit)})
    if head.kind == "categorical":
        logp = hd._log_softmax(raw)
        return DistParams("categorical", {"logits": raw, "probs": np.exp(logp)})
    if head.kind == "gaussian":
        return DistParams("gaussian", {"mean": raw[:, 0], "log_var": raw[:, 1]})
    return DistParams("mixed_flow", hd._constrain_flow(raw, head))


def predict_expected_outcome(model: OutcomeModel, x: EncodedBatch, t) -> np.ndarray:
    return hd.expected_value(model.head, predict_outcome_params(model, x, t))


def predict_treatment_params(tmodel: TreatmentModel, x: EncodedBatch,
                             alpha: float = 0.0) -> np.ndarray:
    """P(T = level | x) over tmodel.levels, blended with the marginal:
    probs = alpha * marginal + (1 - alpha) * conditional (renormalized).
    alpha=1 removes confounding entirely; alpha=0 is the fitted assignment."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    tape = dc.Tape()
    lifted = _lift(tape, tmodel.params)
    raw = treatment_raw_graph(tmodel, tape, lifted, x).values
    if tmodel.head.kind == "bernoulli":
        p1 = hd._sigmoid(raw[:, 0])
        conditional = np.column_stack([1.0 - p1, p1])
    else:
        conditional = np.exp(hd._log_softmax(raw))
    blended = alpha * tmodel.marginal[None, :] + (1.0 - alpha) * conditional
    return blended / blended.sum(axis=1, keepdims=True)


def sample_treatment(tmodel: TreatmentModel, x: EncodedBatch, alpha: float,
                     gen: np.random.Generator) -> int:
    """One treatment level draw for a single encoded prefix (inverse CDF)."""
    probs = predict_treatment_params(tmodel, x, alpha)[0]
    u = gen.random()
    return int(tmodel.levels[min(np.searchsorted(np.cumsum(probs), u, side="right"),
                                 len(probs) - 1)])


def sample_outcome(model: OutcomeModel | Ensemble, x: EncodedBatch, t: int,
                   n: int, key) -> np.ndarray:
    """n outcome draws for a single encoded prefix under treatment t.

    Draw i uses the stream keyed (*key, i). In "average" mode the ensemble
    averages one draw from each member per index, with all members consuming
    the same index stream: shared uniforms make the member draws comonotone,
    so the average is the quantile average (Wasserstein barycenter) of the
    member distributions rather than a variance-shrunk convolution. "pool"
    mode instead picks one member uniformly per index.
    """
    key = key if isinstance(key, tuple) else (key,)
    if isinstance(model, Ensemble):
        member_draws = []
        for name in ENSEMBLE_MEMBERS:
            member = model.members[name]
            params = predict_outcome_params(member, x, t)
            gens = [stream(*key, i) for i in range(n)]
            member_draws.append(hd.sample_n(member.head, params, gens))
        stacked = np.stack(member_draws)
        if model.mode == "average":
            return stacked.mean(axis=0)
        picks = np.array([int(stream(*key, i, "pick").random() * len(ENSEMBLE_MEMBERS))
                          for i in range(n)]).clip(0, len(ENSEMBLE_MEMBERS) - 1)
        return stacked[picks, np.arange(n)]
    params = predict_outcome_params(model, x, t)
    gens = [stream(*key, i) for i in range(n)]
    return hd.sample_n(model.head, params, gens)


def estimate_cate(model: OutcomeModel | Ensemble, x: EncodedBatch, t: int,
                  t_alt: int, n: int, key) -> float:
    """Mean sampled outcome under t minus under t_alt with antithetic streams
    (both arms consume identical uniforms), so swapping arms flips the sign
    exactly."""
    if t == t_alt:
        raise ValueError("estimate_cate requires two distinct treatments")
    a = sample_outcome(model, x, t, n, key)
    b = sample_outcome(model, x, t_alt, n, key)
    return float(a.mean() - b.mean())


# ---------------------------------------------------------------------------
# encoding helpers shared by training and evaluation


def encode_batch(base: str, encoder: EncoderState,
                 samples: list[PrefixSample]) -> EncodedBatch:
    if base == "mlp":
        return np.stack([encode_flat(encoder, s) for s in samples])
    return pad_sequences([encode_sequence(encoder, s) for s in samples])


def encoded_row(base: str, encoder: EncoderState, sample: PrefixSample) -> EncodedBatch:
    return encode_batch(base, encoder, [sample])
