"""End-to-end experiment orchestration on top of the library pieces.

run_accuracy_pipeline mirrors the simulator study design: generate an
observational training log at confounding level delta, fit the evaluator
(an ensemble, whose members double as the single-learner evaluators) on one
portion and the policy estimators on the rest, then score every evaluator
against the oracle on fresh test cases.

generate_pairs implements ancestral (T, Y) generation on a real or held-out
log for the realism suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import learners as ln
from .errors import DataError
from .evalpipe import EvaluationReport, Policy, evaluate_methods, make_policy
from .eventlog import (Case, EventLog, InterventionSpec, PrefixSample,
                       extract_prefix_dataset, intervention_points)
from .learners import Ensemble, EvaluatorBundle
from .rng import stream
from .simulate import SIM_SCHEMA, SimConfig, generate_cases, generate_log, intervention_spec
from .stattests import TestSuiteReport, realism_suite
from .train import FitOptions, PolicyEstimator, fit_estimator, fit_evaluator

POLICY_DATA_FRACTION = 0.2  # share of the training log used by policy estimators


@dataclass(frozen=True)
class PolicySpec:
    name: str
    kind: str          # "random" | "argmax" | "threshold"
    learner: str = "s"
    base: str = "mlp"


@dataclass
class AccuracyRunResult:
    delta: float
    seed: int
    reports: dict[str, EvaluationReport]   # per evaluator name
    bundle: EvaluatorBundle


def split_cases(cases: list[Case], policy_fraction: float) -> tuple[list[Case], list[Case]]:
    """Deterministic split of a log's cases: the tail fraction (by the log's
    start-time order) trains the policy estimators."""
    n_policy = max(1, int(len(cases) * policy_fraction))
    return cases[:len(cases) - n_policy], cases[len(cases) - n_policy:]


def member_bundle(bundle: EvaluatorBundle, member: str) -> EvaluatorBundle:
    """A single-learner view of an ensemble bundle (shared treatment model,
    encoder, and intervention)."""
    if not isinstance(bundle.outcome, Ensemble):
        raise DataError("member_bundle needs an ensemble bundle")
    return EvaluatorBundle(bundle.outcome.members[member], bundle.treatment,
                           bundle.encoder, bundle.intervention,
                           dict(bundle.metadata, member=member))


def build_policies(specs: list[PolicySpec], policy_cases: list[Case],
                   intervention: InterventionSpec, schema, options: FitOptions,
                   seed) -> list[Policy]:
    key = seed if isinstance(seed, tuple) else (seed,)
    policies = []
    for spec in specs:
        if spec.kind == "random":
            policies.append(make_policy("random", spec.name,
                                        seed=(*key, "policy", spec.name)))
            continue
        samples = extract_prefix_dataset(EventLog(policy_cases, schema), intervention)
        estimator, _ = fit_estimator(samples, schema, intervention, spec.learner,
                                     spec.base, options,
                                     seed=(*key, "estimator", spec.name))
        if spec.kind == "threshold":
            n_val = max(1, int(len(policy_cases) * options.val_fraction))
            validation = policy_cases[len(policy_cases) - n_val:]
            policies.append(make_policy("threshold", spec.name, estimator,
                                        validation_cases=validation,
                                        seed=(*key, "policy", spec.name)))
        else:
            policies.append(make_policy("argmax", spec.name, estimator,
                                        seed=(*key, "policy", spec.name)))
    return policies


def run_accuracy_pipeline(intervention_kind: str, n_train: int, n_test: int,
                          delta: float, seed: int, policy_specs: list[PolicySpec],
                          options: FitOptions, head_template: dict,
                          evaluator_base: str = "mlp", n_samples: int = 50,
                          threads: int = 1) -> AccuracyRunResult:
    """One (delta, seed) run: returns reports for the three single-learner
    evaluators and the ensemble, all sharing one set of member fits."""
    spec = intervention_spec(intervention_kind)
    log = generate_log(SimConfig(n_train, delta, intervention_kind, seed=seed))
    eval_cases, policy_cases = split_cases(log.cases, POLICY_DATA_FRACTION)

    eval_samples = extract_prefix_dataset(EventLog(eval_cases, SIM_SCHEMA), spec)
    bundle, _ = fit_evaluator(eval_samples, SIM_SCHEMA, spec, "ensemble",
                              evaluator_base, head_template, options,
                              seed=(seed, "evaluator"))

    policies = build_policies(policy_specs, policy_cases, spec, SIM_SCHEMA,
                              options, (seed, "policies"))

    test_cases = generate_cases(SimConfig(n_test, delta, intervention_kind,
                                          seed=(seed, "test")))
    evaluators = {name: member_bundle(bundle, name) for name in ("s", "t", "tarnet")}
    evaluators["ensemble"] = bundle
    reports = {}
    for name in sorted(evaluators):
        reports[name] = evaluate_methods(test_cases, evaluators[name], policies,
                                         n_samples=n_samples,
                                         seed=(seed, "evaluate"), threads=threads)
    return AccuracyRunResult(delta, seed, reports, bundle)


# ---------------------------------------------------------------------------
# ancestral (T, Y) generation for the realism suite


def _decision_prefix(case: Case, spec: InterventionSpec) -> PrefixSample | None:
    points = intervention_points(spec, case.events)
    if not points:
        return None
    treatment = case.observed_treatment or 0
    j = case.observed_treatment_step if treatment else points[-1]
    return PrefixSample(case.case_id, list(case.events[:j]),
                        dict(case.case_numeric_attrs),
                        dict(case.case_categorical_attrs), treatment,
                        case.outcome if case.outcome is not None else 0.0,
                        j, case.start_time)


def _point_sample(case: Case, j: int) -> PrefixSample:
    return PrefixSample(case.case_id, list(case.events[:j]),
                        dict(case.case_numeric_attrs),
                        dict(case.case_categorical_attrs), 0, 0.0, j,
                        case.start_time)


def _generation_view(bundle: EvaluatorBundle) -> EvaluatorBundle:
    """Single ancestral draws from an ensemble must come from the member
    mixture, not from per-index value averaging: averaging three draws
    reshapes the marginal (atoms vanish, spread shrinks by sqrt(3)), which
    is not a sample of the modeled outcome law."""
    if isinstance(bundle.outcome, Ensemble) and bundle.outcome.mode != "pool":
        return EvaluatorBundle(Ensemble(dict(bundle.outcome.members), "pool"),
                               bundle.treatment, bundle.encoder,
                               bundle.intervention, dict(bundle.metadata))
    return bundle


def generate_case_pair(bundle: EvaluatorBundle, case: Case, alpha: float,
                       key: tuple) -> tuple[int, float]:
    """Ancestral draw for one case: T from the (knob-blended) treatment model
    at its decision point(s), then Y from the outcome member mixture."""
    bundle = _generation_view(bundle)
    spec = bundle.intervention
    points = intervention_points(spec, case.events)
    if not points:
        raise DataError(f"case {case.case_id!r} has no intervention point")
    if spec.kind == "fixed_point":
        x = ln.encoded_row(bundle.base, bundle.encoder, _point_sample(case, points[0]))
        t = ln.sample_treatment(bundle.treatment, x, alpha,
                                stream(*key, case.case_id, "t"))
        y = ln.sample_outcome(bundle.outcome, x, t, 1,
                              key=(*key, case.case_id, "y"))[0]
        return t, float(y)
    # timed: walk the points; contacting ends the walk (once per case)
    for j in points:
        x = ln.encoded_row(bundle.base, bundle.encoder, _point_sample(case, j))
        t = ln.sample_treatment(bundle.treatment, x, alpha,
                                stream(*key, case.case_id, "t", j))
        if t == 1:
            y = ln.sample_outcome(bundle.outcome, x, 1, 1,
                                  key=(*key, case.case_id, "y"))[0]
            return 1, float(y)
    x = ln.encoded_row(bundle.base, bundle.encoder, _point_sample(case, points[-1]))
    y = ln.sample_outcome(bundle.outcome, x, 0, 1,
                          key=(*key, case.case_id, "y"))[0]
    return 0, float(y)


def generate_pairs(bundle: EvaluatorBundle, log: EventLog, alpha: float = 0.0,
                   seed=0) -> tuple[np.ndarray, np.ndarray]:
    """(real, generated) (T, Y) pair arrays over the cases of a log."""
    key = seed if isinstance(seed, tuple) else (seed,)
    real, gen = [], []
    for case in log.cases:
        if case.outcome is None:
            raise DataError(f"case {case.case_id!r} has no outcome")
        real.append((float(case.observed_treatment or 0), float(case.outcome)))
        gen.append(generate_case_pair(bundle, case, alpha, key))
    return np.array(real, dtype=float), np.array(gen, dtype=float)


def run_realism_protocol(intervention_kind: str, n_train: int, n_heldout: int,
                         delta: float, seed: int, options: FitOptions,
                         head_template: dict, base: str = "mlp",
                         learner: str = "ensemble", alpha: float = 0.0,
                         n_perm: int = 1000) -> tuple[TestSuiteReport, EvaluatorBundle]:
    """Fit an evaluator on n_train simulated cases, generate (T, Y) on
    n_heldout fresh cases from the same observational law, and run the
    nine-row realism grid."""
    spec = intervention_spec(intervention_kind)
    train_log = generate_log(SimConfig(n_train, delta, intervention_kind, seed=seed))
    samples = extract_prefix_dataset(train_log, spec)
    bundle, _ = fit_evaluator(samples, SIM_SCHEMA, spec, learner, base,
                              head_template, options, seed=(seed, "evaluator"))
    heldout = generate_log(SimConfig(n_heldout, delta, intervention_kind,
                                     seed=(seed, "heldout")))
    real, gen = generate_pairs(bundle, heldout, alpha, seed=(seed, "pairs"))
    report = realism_suite(real, gen, seed=(seed, "suite"), n_perm=n_perm)
    return report, bundle
