"""Feature encoders fitted on training prefixes.

Two views of the same prefix:
  - flat: activity occurrence counts, (mean, max, last) aggregates of numeric
    event attributes, one-hot of capped categoricals at the last event,
    case-level features, and last-event time features
  - sequence: one step vector per event (activity one-hot, numerics, capped
    categoricals, time features) plus a separate case-level feature vector

Categorical attributes are capped to the 6 most frequent levels plus "other";
the activity vocabulary is uncapped but carries a reserved unknown slot.
Continuous coordinates are standardized with training statistics; attributes
with zero variance get std 1. Treatment is never part of the encoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FitError
from .eventlog import LogSchema, PrefixSample

CATEGORY_CAP = 6
AGG_STATS = ("mean", "max", "last")
TIME_FEATURES = ("since_start", "since_prev")


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float

    def apply(self, value: float) -> float:
        return (value - self.mean) / self.std


def _fit_stat(values) -> Stat:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std())
    return Stat(float(arr.mean()), std if std > 0 else 1.0)


@dataclass
class SequenceTensor:
    steps: np.ndarray          # (length, step_dim)
    case_features: np.ndarray  # (case_dim,)

    @property
    def length(self) -> int:
        return self.steps.shape[0]


@dataclass
class EncoderState:
    activity_vocab: list[str]                 # + reserved unknown slot at the end
    capped_event_vocabs: dict[str, list[str]]  # top levels; "other" slot implicit
    capped_case_vocabs: dict[str, list[str]]
    event_numeric: list[str]
    event_categorical: list[str]
    case_numeric: list[str]
    case_categorical: list[str]
    event_attr_stats: dict[str, Stat]         # per event over training prefixes
    agg_stats: dict[str, dict[str, Stat]]     # per sample aggregate
    case_stats: dict[str, Stat]
    time_flat_stats: dict[str, Stat]          # last-event time features
    time_seq_stats: dict[str, Stat]           # per-event time features

    @property
    def flat_dim(self) -> int:
        return (len(self.activity_vocab) + 1
                + 3 * len(self.event_numeric)
                + sum(len(v) + 1 for v in self.capped_event_vocabs.values())
                + self.case_dim + 2)

    @property
    def step_dim(self) -> int:
        return (len(self.activity_vocab) + 1 + len(self.event_numeric)
                + sum(len(v) + 1 for v in self.capped_event_vocabs.values()) + 2)

    @property
    def case_dim(self) -> int:
        return (len(self.case_numeric)
                + sum(len(v) + 1 for v in self.capped_case_vocabs.values()))

    def flat_layout(self) -> list[str]:
        names = [f"act_count:{a}" for a in self.activity_vocab] + ["act_count:<unk>"]
        for attr in self.event_numeric:
            names += [f"agg:{attr}:{s}" for s in AGG_STATS]
        for attr in self.event_categorical:
            names += [f"last:{attr}={v}" for v in self.capped_event_vocabs[attr]]
            names.append(f"last:{attr}=<other>")
        names += self.case_layout()
        names += [f"time:{t}" for t in TIME_FEATURES]
        return names

    def case_layout(self) -> list[str]:
        names = [f"case:{attr}" for attr in self.case_numeric]
        for attr in self.case_categorical:
            names += [f"case:{attr}={v}" for v in self.capped_case_vocabs[attr]]
            names.append(f"case:{attr}=<other>")
        return names

    def to_dict(self) -> dict:
        stat = lambda s: [s.mean.hex(), s.std.hex()]
        return {
            "activity_vocab": self.activity_vocab,
            "capped_event_vocabs": self.capped_event_vocabs,
            "capped_case_vocabs": self.capped_case_vocabs,
            "event_numeric": self.event_numeric,
            "event_categorical": self.event_categorical,
            "case_numeric": self.case_numeric,
            "case_categorical": self.case_categorical,
            "event_attr_stats": {k: stat(v) for k, v in self.event_attr_stats.items()},
            "agg_stats": {k: {s: stat(v) for s, v in d.items()}
                          for k, d in self.agg_stats.items()},
            "case_stats": {k: stat(v) for k, v in self.case_stats.items()},
            "time_flat_stats": {k: stat(v) for k, v in self.time_flat_stats.items()},
            "time_seq_stats": {k: stat(v) for k, v in self.time_seq_stats.items()},
        }

    @staticmethod
    def from_dict(d: dict) -> "EncoderState":
        stat = lambda pair: Stat(float.fromhex(pair[0]), float.fromhex(pair[1]))
        return EncoderState(
            activity_vocab=list(d["activity_vocab"]),
            capped_event_vocabs={k: list(v) for k, v in d["capped_event_vocabs"].items()},
            capped_case_vocabs={k: list(v) for k, v in d["capped_case_vocabs"].items()},
            event_numeric=list(d["event_numeric"]),
            event_categorical=list(d["event_categorical"]),
            case_numeric=list(d["case_numeric"]),
            case_categorical=list(d["case_categorical"]),
            event_attr_stats={k: stat(v) for k, v in d["event_attr_stats"].items()},
            agg_stats={k: {s: stat(v) for s, v in sd.items()}
                       for k, sd in d["agg_stats"].items()},
            case_stats={k: stat(v) for k, v in d["case_stats"].items()},
            time_flat_stats={k: stat(v) for k, v in d["time_flat_stats"].items()},
            time_seq_stats={k: stat(v) for k, v in d["time_seq_stats"].items()},
        )


def _top_levels(counts: dict[str, int], cap: int) -> list[str]:
    return [v for v, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]]


def _time_features(prefix, i: int) -> tuple[float, float]:
    since_start = float(prefix[i].timestamp - prefix[0].timestamp)
    since_prev = 0.0 if i == 0 else float(prefix[i].timestamp - prefix[i - 1].timestamp)
    return since_start, since_prev


def _aggregates(sample: PrefixSample, attr: str) -> tuple[float, float, float]:
    # events without the attribute contribute 0.0 (a documented fill value)
    values = [e.numeric_attrs.get(attr, 0.0) for e in sample.prefix]
    return float(np.mean(values)), float(np.max(values)), float(values[-1])


def fit_encoder(train_samples: list[PrefixSample], schema: LogSchema,
                cap: int = CATEGORY_CAP) -> EncoderState:
    """Compute vocabularies and standardization statistics from training data."""
    if not train_samples:
        raise FitError("cannot fit an encoder on an empty training set")

    activity_counts: dict[str, int] = {}
    event_cat_counts = {a: {} for a in schema.event_categorical}
    case_cat_counts = {a: {} for a in schema.case_categorical}
    event_values = {a: [] for a in schema.event_numeric}
    agg_values = {a: {s: [] for s in AGG_STATS} for a in schema.event_numeric}
    case_values = {a: [] for a in schema.case_numeric}
    time_flat = {t: [] for t in TIME_FEATURES}
    time_seq = {t: [] for t in TIME_FEATURES}

    for sample in train_samples:
        for i, event in enumerate(sample.prefix):
            activity_counts[event.activity] = activity_counts.get(event.activity, 0) + 1
            for attr in schema.event_numeric:
                event_values[attr].append(event.numeric_attrs.get(attr, 0.0))
            for attr in schema.event_categorical:
                level = event.categorical_attrs.get(attr)
                if level is not None:
                    counts = event_cat_counts[attr]
                    counts[level] = counts.get(level, 0) + 1
            ss, sp = _time_features(sample.prefix, i)
            time_seq["since_start"].append(ss)
            time_seq["since_prev"].append(sp)
        for attr in schema.event_numeric:
            for stat_name, value in zip(AGG_STATS, _aggregates(sample, attr)):
                agg_values[attr][stat_name].append(value)
        for attr in schema.case_numeric:
            case_values[attr].append(sample.case_numeric_attrs.get(attr, 0.0))
        for attr in schema.case_categorical:
            level = sample.case_categorical_attrs.get(attr)
            if level is not None:
                counts = case_cat_counts[attr]
                counts[level] = counts.get(level, 0) + 1
        ss, sp = _time_features(sample.prefix, len(sample.prefix) - 1)
        time_flat["since_start"].append(ss)
        time_flat["since_prev"].append(sp)

    return EncoderState(
        activity_vocab=sorted(activity_counts),
        capped_event_vocabs={a: _top_levels(c, cap) for a, c in event_cat_counts.items()},
        capped_case_vocabs={a: _top_levels(c, cap) for a, c in case_cat_counts.items()},
        event_numeric=list(schema.event_numeric),
        event_categorical=list(schema.event_categorical),
        case_numeric=list(schema.case_numeric),
        case_categorical=list(schema.case_categorical),
        event_attr_stats={a: _fit_stat(v) for a, v in event_values.items()},
        agg_stats={a: {s: _fit_stat(v) for s, v in d.items()}
                   for a, d in agg_values.items()},
        case_stats={a: _fit_stat(v) for a, v in case_values.items()},
        time_flat_stats={t: _fit_stat(v) for t, v in time_flat.items()},
        time_seq_stats={t: _fit_stat(v) for t, v in time_seq.items()},
    )


def _one_hot(vocab: list[str], level: str | None) -> list[float]:
    """Known level -> its slot; unseen level -> the trailing "other" slot;
    absent attribute -> all zeros."""
    out = [0.0] * (len(vocab) + 1)
    if level is None:
        return out
    try:
        out[vocab.index(level)] = 1.0
    except ValueError:
        out[-1] = 1.0
    return out


def _case_features(state: EncoderState, sample: PrefixSample) -> list[float]:
    values = [state.case_stats[a].apply(sample.case_numeric_attrs.get(a, 0.0))
              for a in state.case_numeric]
    for attr in state.case_categorical:
        values += _one_hot(state.capped_case_vocabs[attr],
                           sample.case_categorical_attrs.get(attr))
    return values


def encode_flat(state: EncoderState, sample: PrefixSample) -> np.ndarray:
    counts = [0.0] * (len(state.activity_vocab) + 1)
    index = {a: i for i, a in enumerate(state.activity_vocab)}
    for event in sample.prefix:
        counts[index.get(event.activity, len(counts) - 1)] += 1.0
    values = counts
    for attr in state.event_numeric:
        values += [state.agg_stats[attr][s].apply(v)
                   for s, v in zip(AGG_STATS, _aggregates(sample, attr))]
    last = sample.prefix[-1]
    for attr in state.event_categorical:
        values += _one_hot(state.capped_event_vocabs[attr],
                           last.categorical_attrs.get(attr))
    values += _case_features(state, sample)
    ss, sp = _time_features(sample.prefix, len(sample.prefix) - 1)
    values.append(state.time_flat_stats["since_start"].apply(ss))
    values.append(state.time_flat_stats["since_prev"].apply(sp))
    return np.array(values)


def encode_sequence(state: EncoderState, sample: PrefixSample) -> SequenceTensor:
    steps = []
    for i, event in enumerate(sample.prefix):
        row = _one_hot(state.activity_vocab, event.activity)
        row += [state.event_attr_stats[a].apply(event.numeric_attrs.get(a, 0.0))
                for a in state.event_numeric]
        for attr in state.event_categorical:
            row += _one_hot(state.capped_event_vocabs[attr],
                            event.categorical_attrs.get(attr))
        ss, sp = _time_features(sample.prefix, i)
        row.append(state.time_seq_stats["since_start"].apply(ss))
        row.append(state.time_seq_stats["since_prev"].apply(sp))
        steps.append(row)
    return SequenceTensor(np.array(steps), np.array(_case_features(state, sample)))


def pad_sequences(tensors: list[SequenceTensor]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack variable-length sequences into (batch, max_len, dim) + lengths
    + case features; padding rows are zero."""
    lengths = np.array([t.length for t in tensors])
    max_len = int(lengths.max())
    steps = np.zeros((len(tensors), max_len, tensors[0].steps.shape[1]))
    for i, t in enumerate(tensors):
        steps[i, :t.length] = t.steps
    case = np.stack([t.case_features for t in tensors])
    return steps, lengths, case
