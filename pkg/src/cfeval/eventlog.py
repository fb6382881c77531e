"""Event logs: CSV parsing, prefix extraction at intervention points, and
temporal train/validation splitting.

Conventions used throughout the package:
  - timestamps are integer seconds since epoch (sub-second precision truncated)
  - treatment code 0 means "not (yet) treated"; treated levels are positive
  - an intervention point is a prefix length j: the decision sits between
    event j-1 and event j, and the decision prefix is events[:j]
  - ordering ties break by timestamp, then case_id, then original row order
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

from .errors import DataError, RowError, SchemaError, SplitError


@dataclass
class Event:
    case_id: str
    activity: str
    timestamp: int
    numeric_attrs: dict[str, float] = field(default_factory=dict)
    categorical_attrs: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.activity:
            raise DataError("event with empty activity")
        if self.timestamp < 0:
            raise DataError(f"negative timestamp {self.timestamp}")


@dataclass
class Case:
    case_id: str
    events: list[Event]
    case_numeric_attrs: dict[str, float] = field(default_factory=dict)
    case_categorical_attrs: dict[str, str] = field(default_factory=dict)
    observed_treatment: int | None = None
    observed_treatment_step: int | None = None
    outcome: float | None = None

    @property
    def start_time(self) -> int:
        return self.events[0].timestamp


@dataclass(frozen=True)
class LogSchema:
    """Column-role mapping for CSV event logs."""

    case_id: str = "case_id"
    activity: str = "activity"
    timestamp: str = "timestamp"
    outcome: str | None = "outcome"
    treatment: str | None = "treatment"
    treatment_step: str | None = "treatment_step"
    event_numeric: tuple[str, ...] = ()
    event_categorical: tuple[str, ...] = ()
    case_numeric: tuple[str, ...] = ()
    case_categorical: tuple[str, ...] = ()

    @staticmethod
    def from_dict(d: dict) -> "LogSchema":
        return LogSchema(
            case_id=d.get("case_id", "case_id"),
            activity=d.get("activity", "activity"),
            timestamp=d.get("timestamp", "timestamp"),
            outcome=d.get("outcome", "outcome"),
            treatment=d.get("treatment", "treatment"),
            treatment_step=d.get("treatment_step", "treatment_step"),
            event_numeric=tuple(d.get("event_numeric", ())),
            event_categorical=tuple(d.get("event_categorical", ())),
            case_numeric=tuple(d.get("case_numeric", ())),
            case_categorical=tuple(d.get("case_categorical", ())),
        )

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id, "activity": self.activity,
            "timestamp": self.timestamp, "outcome": self.outcome,
            "treatment": self.treatment, "treatment_step": self.treatment_step,
            "event_numeric": list(self.event_numeric),
            "event_categorical": list(self.event_categorical),
            "case_numeric": list(self.case_numeric),
            "case_categorical": list(self.case_categorical),
        }


@dataclass
class EventLog:
    cases: list[Case]
    schema: LogSchema


@dataclass(frozen=True)
class InterventionSpec:
    """Where a treatment decision may happen and which action codes exist.

    rule selects intervention points from a case's activities:
      ("after_last", act)  -> one point just after the last occurrence of act
      ("after_each", act)  -> one point just after every occurrence of act
    fixed_point interventions must use an "after_last" rule (exactly one
    point per case); timed interventions must include action code 0 (wait).
    """

    kind: str                  # "fixed_point" | "timed"
    levels: tuple[int, ...]    # admissible action codes at a point
    rule: tuple[str, str]
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("fixed_point", "timed"):
            raise ValueError(f"unknown intervention kind {self.kind!r}")
        if len(self.levels) < 2:
            raise ValueError("intervention needs at least 2 action codes")
        if self.kind == "timed" and 0 not in self.levels:
            raise ValueError("timed intervention must include code 0 (wait)")
        if self.kind == "fixed_point" and self.rule[0] != "after_last":
            raise ValueError("fixed_point intervention requires an after_last rule")
        if self.rule[0] not in ("after_last", "after_each"):
            raise ValueError(f"unknown point rule {self.rule[0]!r}")

    @staticmethod
    def from_dict(d: dict) -> "InterventionSpec":
        return InterventionSpec(kind=d["kind"], levels=tuple(d["levels"]),
                                rule=tuple(d["rule"]), name=d.get("name", ""))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "levels": list(self.levels),
                "rule": list(self.rule), "name": self.name}


@dataclass
class PrefixSample:
    case_id: str
    prefix: list[Event]
    case_numeric_attrs: dict[str, float]
    case_categorical_attrs: dict[str, str]
    treatment: int
    outcome: float
    intervention_step: int  # prefix length j; decision precedes event j
    case_start: int


def intervention_points(spec: InterventionSpec, events: list[Event]) -> list[int]:
    """Prefix lengths j at which the intervention decision may be taken."""
    mode, activity = spec.rule
    hits = [i for i, e in enumerate(events) if e.activity == activity]
    if not hits:
        return []
    if mode == "after_last":
        return [hits[-1] + 1]
    return [i + 1 for i in hits]


# ---------------------------------------------------------------------------
# CSV parsing / writing


def _parse_float(raw: str) -> float | None:
    raw = raw.strip()
    if raw == "":
        return None
    return float(raw)


def parse_event_log(text: str, schema: LogSchema, delimiter: str = ",") -> EventLog:
    """Parse a CSV document into cases with events sorted by timestamp.

    Case-level attributes are taken from the first row of each case; ties in
    event timestamps keep original file order. Raises SchemaError for missing
    columns and RowError (with line numbers) if any row fails to parse.
    """
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty document: no header row")
    col = {name: i for i, name in enumerate(header)}

    mandatory = {"case_id": schema.case_id, "activity": schema.activity,
                 "timestamp": schema.timestamp}
    for role, name in mandatory.items():
        if name not in col:
            raise SchemaError(f"missing mandatory column {name!r} (role: {role})")
    optional = [schema.outcome, schema.treatment, schema.treatment_step]
    declared = ([c for c in optional if c] + list(schema.event_numeric)
                + list(schema.event_categorical) + list(schema.case_numeric)
                + list(schema.case_categorical))
    for name in declared:
        if name not in col:
            raise SchemaError(f"schema names column {name!r} not present in header")

    cases: dict[str, Case] = {}
    order: dict[str, int] = {}
    bad: list[tuple[int, str]] = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(c.strip() == "" for c in row):
            continue
        try:
            case_id = row[col[schema.case_id]].strip()
            activity = row[col[schema.activity]].strip()
            timestamp = int(float(row[col[schema.timestamp]]))
            numeric = {}
            for name in schema.event_numeric:
                v = _parse_float(row[col[name]])
                if v is not None:
                    numeric[name] = v
            categorical = {}
            for name in schema.event_categorical:
                v = row[col[name]].strip()
                if v:
                    categorical[name] = v
            event = Event(case_id, activity, timestamp, numeric, categorical)

            if case_id not in cases:
                case_numeric = {}
                for name in schema.case_numeric:
                    v = _parse_float(row[col[name]])
                    if v is not None:
                        case_numeric[name] = v
                case_categorical = {}
                for name in schema.case_categorical:
                    v = row[col[name]].strip()
                    if v:
                        case_categorical[name] = v
                outcome = (_parse_float(row[col[schema.outcome]])
                           if schema.outcome else None)
                treatment = None
                if schema.treatment:
                    t = _parse_float(row[col[schema.treatment]])
                    treatment = None if t is None else int(t)
                step = None
                if schema.treatment_step:
                    s = _parse_float(row[col[schema.treatment_step]])
                    step = None if s is None else int(s)
                cases[case_id] = Case(case_id, [], case_numeric, case_categorical,
                                      treatment, step, outcome)
                order[case_id] = len(order)
            cases[case_id].events.append(event)
        except (ValueError, IndexError, DataError) as exc:
            bad.append((line_no, str(exc)))

    if bad:
        lines = ", ".join(str(n) for n, _ in bad[:20])
        raise RowError(f"{len(bad)} malformed row(s) at line(s) {lines}", bad)

    for case in cases.values():
        case.events.sort(key=lambda e: e.timestamp)  # stable: ties keep file order
    ordered = sorted(cases.values(), key=lambda c: (c.start_time, c.case_id))
    return EventLog(ordered, schema)


def write_event_log(log: EventLog, delimiter: str = ",") -> str:
    """Serialize back to the CSV format parse_event_log reads."""
    schema = log.schema
    header = [schema.case_id, schema.activity, schema.timestamp]
    header += list(schema.event_numeric) + list(schema.event_categorical)
    header += list(schema.case_numeric) + list(schema.case_categorical)
    for c in (schema.treatment, schema.treatment_step, schema.outcome):
        if c:
            header.append(c)
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(header)
    for case in log.cases:
        for event in case.events:
            row = [case.case_id, event.activity, str(event.timestamp)]
            for name in schema.event_numeric:
                v = event.numeric_attrs.get(name)
                row.append("" if v is None else repr(float(v)))
            for name in schema.event_categorical:
                row.append(event.categorical_attrs.get(name, ""))
            for name in schema.case_numeric:
                v = case.case_numeric_attrs.get(name)
                row.append("" if v is None else repr(float(v)))
            for name in schema.case_categorical:
                row.append(case.case_categorical_attrs.get(name, ""))
            if schema.treatment:
                t = case.observed_treatment
                row.append("" if t is None else str(int(t)))
            if schema.treatment_step:
                s = case.observed_treatment_step
                row.append("" if s is None else str(int(s)))
            if schema.outcome:
                y = case.outcome
                row.append("" if y is None else repr(float(y)))
            writer.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# prefix extraction and splitting


def _sample(case: Case, j: int, treatment: int) -> PrefixSample:
    return PrefixSample(
        case_id=case.case_id,
        prefix=list(case.events[:j]),
        case_numeric_attrs=dict(case.case_numeric_attrs),
        case_categorical_attrs=dict(case.case_categorical_attrs),
        treatment=treatment,
        outcome=float(case.outcome),
        intervention_step=j,
        case_start=case.start_time,
    )


def extract_prefix_dataset(log: EventLog, spec: InterventionSpec,
                           training: bool = True) -> list[PrefixSample]:
    """Truncate each case at its intervention points.

    Treated cases yield the prefix just before the treated point, labeled
    with the observed treatment. Untreated cases yield the prefix at the
    latest point with treatment 0. For timed interventions in training mode,
    a treated case additionally yields one treatment-0 sample per point
    preceding the treated one, so the value of waiting is learnable.
    """
    samples: list[PrefixSample] = []
    for case in log.cases:
        if case.outcome is None:
            raise DataError(f"case {case.case_id!r} has no recorded outcome")
        points = intervention_points(spec, case.events)
        if not points:
            if case.observed_treatment:
                raise DataError(
                    f"case {case.case_id!r} is treated but has no intervention point")
            continue
        treatment = case.observed_treatment or 0
        if treatment == 0:
            samples.append(_sample(case, points[-1], 0))
            continue
        if treatment not in spec.levels:
            raise DataError(
                f"case {case.case_id!r} treatment {treatment} not in levels {spec.levels}")
        step = case.observed_treatment_step
        if step is None or step not in points:
            raise DataError(
                f"case {case.case_id!r} treated at step {step}, which is not an "
                f"intervention point {points}")
        if spec.kind == "timed" and training:
            for j in points:
                if j < step:
                    samples.append(_sample(case, j, 0))
        samples.append(_sample(case, step, treatment))
    return samples


def temporal_split(samples: list[PrefixSample],
                   val_fraction: float) -> tuple[list[PrefixSample], list[PrefixSample]]:
    """Latest val_fraction of cases (by start time, floor, min 1) go to
    validation; all samples of a case land on the same side."""
    if not 0.0 < val_fraction < 1.0:
        raise SplitError(f"val_fraction {val_fraction} outside (0, 1)")
    cases = sorted({s.case_id: s.case_start for s in samples}.items(),
                   key=lambda kv: (kv[1], kv[0]))
    if len(cases) < 2:
        raise SplitError(f"need at least 2 distinct cases, got {len(cases)}")
    n_val = max(1, int(len(cases) * val_fraction))
    val_ids = {cid for cid, _ in cases[len(cases) - n_val:]}
    train = [s for s in samples if s.case_id not in val_ids]
    val = [s for s in samples if s.case_id in val_ids]
    return train, val
