import pytest

from cfeval.errors import DataError, RowError, SchemaError, SplitError
from cfeval.eventlog import (Case, Event, EventLog, InterventionSpec, LogSchema,
                             extract_prefix_dataset, intervention_points,
                             parse_event_log, temporal_split, write_event_log)

SCHEMA = LogSchema(event_numeric=("score",), case_numeric=("amount",),
                   case_categorical=("sector",))

CSV_SMALL = """case_id,activity,timestamp,score,amount,sector,treatment,treatment_step,outcome
c1,start,100,,5000,retail,1,2,250.0
c1,assess,200,0.4,5000,retail,1,2,250.0
"""


def test_smallest_well_formed_log():
    log = parse_event_log(CSV_SMALL, SCHEMA)
    assert len(log.cases) == 1
    case = log.cases[0]
    assert [e.activity for e in case.events] == ["start", "assess"]
    assert case.case_numeric_attrs == {"amount": 5000.0}
    assert case.case_categorical_attrs == {"sector": "retail"}
    assert case.observed_treatment == 1 and case.observed_treatment_step == 2
    assert case.outcome == 250.0
    assert case.events[1].numeric_attrs == {"score": 0.4}
    assert "score" not in case.events[0].numeric_attrs


def test_out_of_order_rows_sorted_by_timestamp():
    text = """case_id,activity,timestamp,score,amount,sector,treatment,treatment_step,outcome
c1,b,300,,1,x,,,0
c1,a,100,,1,x,,,0
c1,c,200,,1,x,,,0
"""
    log = parse_event_log(text, SCHEMA)
    assert [e.activity for e in log.cases[0].events] == ["a", "c", "b"]


def test_missing_activity_column():
    text = "case_id,timestamp\nc1,100\n"
    with pytest.raises(SchemaError, match="activity"):
        parse_event_log(text, LogSchema(outcome=None, treatment=None,
                                        treatment_step=None))


def test_bad_rows_reported_with_line_numbers():
    text = """case_id,activity,timestamp,score,amount,sector,treatment,treatment_step,outcome
c1,start,100,,1,x,,,0
c1,assess,oops,,1,x,,,0
c1,assess,300,bad,1,x,,,0
"""
    with pytest.raises(RowError, match=r"2 malformed row\(s\) at line\(s\) 3, 4"):
        parse_event_log(text, SCHEMA)


def test_round_trip_preserves_triples():
    log = parse_event_log(CSV_SMALL, SCHEMA)
    again = parse_event_log(write_event_log(log), SCHEMA)
    triples = lambda lg: sorted((c.case_id, e.activity, e.timestamp)
                                for c in lg.cases for e in c.events)
    assert triples(log) == triples(again)
    assert write_event_log(log) == write_event_log(again)


def make_case(case_id, n_assess, treatment=None, step=None, outcome=0.0, start=0):
    events = [Event(case_id, "start", start)]
    for k in range(n_assess):
        events.append(Event(case_id, "assess", start + 100 * (k + 1), {"score": 0.5}))
    events.append(Event(case_id, "decide", start + 1000))
    events.append(Event(case_id, "end", start + 1100))
    return Case(case_id, events, {"amount": 1.0}, {"sector": "retail"},
                treatment, step, outcome)


FIXED = InterventionSpec("fixed_point", (1, 2, 3), ("after_last", "assess"))
TIMED = InterventionSpec("timed", (0, 1), ("after_each", "assess"))


def test_intervention_point_rules():
    case = make_case("c", 3)
    assert intervention_points(FIXED, case.events) == [4]
    assert intervention_points(TIMED, case.events) == [2, 3, 4]
    single = make_case("c", 1)
    assert intervention_points(TIMED, single.events) == [2]


def test_untreated_case_sampled_at_latest_point():
    log = EventLog([make_case("c", 3)], SCHEMA)
    samples = extract_prefix_dataset(log, TIMED)
    assert len(samples) == 1
    assert samples[0].treatment == 0
    assert samples[0].intervention_step == 4
    assert len(samples[0].prefix) == 4


def test_timed_treated_case_emits_waiting_samples():
    log = EventLog([make_case("c", 3, treatment=1, step=3)], SCHEMA)
    samples = extract_prefix_dataset(log, TIMED)
    assert [(s.intervention_step, s.treatment) for s in samples] == [(2, 0), (3, 1)]
    for s in samples:
        assert [e.activity for e in s.prefix] == \
            [e.activity for e in log.cases[0].events[:s.intervention_step]]


def test_timed_eval_mode_skips_waiting_samples():
    log = EventLog([make_case("c", 3, treatment=1, step=3)], SCHEMA)
    samples = extract_prefix_dataset(log, TIMED, training=False)
    assert [(s.intervention_step, s.treatment) for s in samples] == [(3, 1)]


def test_treated_at_non_intervention_point_is_an_error():
    log = EventLog([make_case("c", 3, treatment=1, step=1)], SCHEMA)
    with pytest.raises(DataError, match="not an intervention point"):
        extract_prefix_dataset(log, TIMED)


def test_missing_outcome_is_an_error():
    log = EventLog([make_case("c", 2, outcome=None)], SCHEMA)
    with pytest.raises(DataError, match="outcome"):
        extract_prefix_dataset(log, TIMED)


def test_prefixes_are_true_prefixes():
    cases = [make_case(f"c{i}", 1 + i % 4, treatment=(1 if i % 2 else None),
                       step=(2 if i % 2 else None), start=i * 1000)
             for i in range(8)]
    log = EventLog(cases, SCHEMA)
    by_id = {c.case_id: c for c in cases}
    for s in extract_prefix_dataset(log, TIMED):
        full = by_id[s.case_id].events
        assert s.prefix == full[:len(s.prefix)]


def test_temporal_split_latest_cases_to_validation():
    samples = []
    for i in range(10):
        log = EventLog([make_case(f"c{i}", 2, start=i * 1000)], SCHEMA)
        samples += extract_prefix_dataset(log, TIMED)
    train, val = temporal_split(samples, 0.2)
    assert {s.case_id for s in val} == {"c8", "c9"}
    assert {s.case_id for s in train} | {s.case_id for s in val} == \
        {f"c{i}" for i in range(10)}
    assert not ({s.case_id for s in train} & {s.case_id for s in val})


def test_temporal_split_tie_break_lexical():
    samples = []
    for cid in ["b", "a", "d", "c"]:
        log = EventLog([make_case(cid, 2, start=500)], SCHEMA)
        samples += extract_prefix_dataset(log, TIMED)
    _, val = temporal_split(samples, 0.25)
    assert {s.case_id for s in val} == {"d"}


def test_temporal_split_floor_minimum_one():
    samples = []
    for i in range(5):
        log = EventLog([make_case(f"c{i}", 2, start=i)], SCHEMA)
        samples += extract_prefix_dataset(log, TIMED)
    _, val = temporal_split(samples, 0.2)
    assert {s.case_id for s in val} == {"c4"}
    with pytest.raises(SplitError):
        temporal_split(samples[:1], 0.2)
