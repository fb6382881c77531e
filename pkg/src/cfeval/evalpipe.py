"""Policy construction and the evaluator-accuracy pipeline.

For each test case and policy we roll the case to its decision, collect
n samples from the simulator oracle (the true local outcome distribution)
and n from the evaluator bundle, and score:
  - absolute performance: per-case Wasserstein-1 between the two 50-sample
    sets, averaged over cases (informed policies and the random policy are
    aggregated separately)
  - relative performance: Kendall's tau between the method rankings induced
    by total true profit and total estimated profit
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import learners as ln
from .errors import DataError, UsageError
from .eventlog import Case, InterventionSpec, PrefixSample, intervention_points
from .learners import Ensemble, EvaluatorBundle, OutcomeModel
from .rng import stream
from .simulate import SimCase, list_intervention_points, true_outcome_samples
from .train import PolicyEstimator

THRESHOLD_GRID_POINTS = 21


# ---------------------------------------------------------------------------
# metrics


def wasserstein1(a, b) -> float:
    """Equal-size 1-D Wasserstein-1: mean absolute difference of sorted values."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) == 0:
        raise ValueError(f"wasserstein1 needs equal-length 1-D samples, "
                         f"got {a.shape} and {b.shape}")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def kendall_tau(rank_a: list[str], rank_b: list[str]) -> float:
    """tau-a between two rankings (ordered item lists) by pair enumeration."""
    if sorted(rank_a) != sorted(rank_b):
        raise ValueError("rankings must contain the same items")
    n = len(rank_a)
    if n < 2:
        raise ValueError("kendall_tau needs at least 2 items")
    pos_a = {item: i for i, item in enumerate(rank_a)}
    pos_b = {item: i for i, item in enumerate(rank_b)}
    items = sorted(rank_a)
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = pos_a[items[i]] - pos_a[items[j]]
            db = pos_b[items[i]] - pos_b[items[j]]
            if da * db > 0:
                concordant += 1
            else:
                discordant += 1
    return (concordant - discordant) / (0.5 * n * (n - 1))


# ---------------------------------------------------------------------------
# policies


@dataclass
class Policy:
    name: str
    kind: str                              # "random" | "argmax" | "threshold"
    estimator: PolicyEstimator | None = None
    threshold: float = float("nan")
    seed: int | tuple = 0


def _prefix_sample(case_id, events, numeric, categorical, j) -> PrefixSample:
    return PrefixSample(case_id, list(events[:j]), dict(numeric),
                        dict(categorical), 0, 0.0, j, events[0].timestamp)


def _estimator_predict(estimator: PolicyEstimator, sample: PrefixSample) -> dict[int, float]:
    """Expected outcome per treatment level for one prefix."""
    x = ln.encoded_row(estimator.model.base, estimator.encoder, sample)
    return {level: float(ln.predict_expected_outcome(estimator.model, x, level)[0])
            for level in estimator.model.levels}


def tune_threshold(estimator: PolicyEstimator, validation_cases: list[Case]) -> float:
    """Pick the intervene-now threshold on a 21-point grid over the empirical
    range of estimated effects, maximizing validation profit proxied by the
    estimator's own expected outcomes (ground truth is not consulted)."""
    spec = estimator.intervention
    per_case: list[list[tuple[float, float, float]]] = []  # (effect, e1, e0)
    effects = []
    for case in validation_cases:
        points = intervention_points(spec, case.events)
        rows = []
        for j in points:
            sample = _prefix_sample(case.case_id, case.events,
                                    case.case_numeric_attrs,
                                    case.case_categorical_attrs, j)
            pred = _estimator_predict(estimator, sample)
            effect = pred[1] - pred[0]
            rows.append((effect, pred[1], pred[0]))
            effects.append(effect)
        per_case.append(rows)
    if not effects:
        raise DataError("threshold tuning found no intervention points")
    grid = np.linspace(min(effects), max(effects), THRESHOLD_GRID_POINTS)

    def profit(theta: float) -> float:
        total = 0.0
        for rows in per_case:
            if not rows:
                continue
            for effect, e1, e0 in rows:
                if effect > theta:
                    total += e1
                    break
            else:
                total += rows[-1][2]  # never intervened: waiting value at last point
        return total

    profits = [profit(t) for t in grid]
    return float(grid[int(np.argmax(profits))])  # ties: lowest threshold


def make_policy(kind: str, name: str, estimator: PolicyEstimator | None = None,
                validation_cases: list[Case] | None = None, seed=0,
                threshold: float | None = None) -> Policy:
    """random needs only its seed; argmax needs an estimator; threshold needs
    an estimator plus validation cases to tune on (or an explicit threshold)."""
    if kind == "random":
        return Policy(name, "random", seed=seed)
    if estimator is None:
        raise UsageError(f"{kind} policy needs an estimator")
    if kind == "argmax":
        return Policy(name, "argmax", estimator=estimator, seed=seed)
    if kind == "threshold":
        if estimator.intervention.kind != "timed":
            raise UsageError("threshold policies apply to timed interventions")
        if threshold is None:
            if validation_cases is None:
                raise UsageError("threshold policy needs validation cases to tune on")
            threshold = tune_threshold(estimator, validation_cases)
        return Policy(name, "threshold", estimator=estimator,
                      threshold=float(threshold), seed=seed)
    raise UsageError(f"unknown policy kind {kind!r}")


def policy_action(policy: Policy, case: SimCase, j: int,
                  intervention: InterventionSpec) -> int:
    """The action this policy takes at decision point j (a prefix length)."""
    levels = intervention.levels
    if policy.kind == "random":
        key = policy.seed if isinstance(policy.seed, tuple) else (policy.seed,)
        gen = stream(*key, "policy", case.case_id, j)
        return int(levels[min(int(gen.random() * len(levels)), len(levels) - 1)])
    sample = _prefix_sample(case.case_id, case.events(), {"amount": case.amount},
                            {"sector": case.sector}, j)
    pred = _estimator_predict(policy.estimator, sample)
    if intervention.kind == "fixed_point":
        values = [pred[level] for level in levels]
        return int(levels[int(np.argmax(values))])  # tie: lowest action index
    effect = pred[1] - pred[0]
    cutoff = 0.0 if policy.kind == "argmax" else policy.threshold
    return 1 if effect > cutoff else 0


# ---------------------------------------------------------------------------
# the accuracy pipeline


@dataclass
class CaseEvaluation:
    policy: str
    case_id: str
    treatment: int
    step: int
    w1: float
    true_mean: float
    est_mean: float


@dataclass
class EvaluationReport:
    cases: list[CaseEvaluation]
    totals_true: dict[str, float]
    totals_est: dict[str, float]
    true_ranking: list[str]
    est_ranking: list[str]
    kendall: float
    mean_w1: dict[str, float]
    mean_w1_informed: float
    mean_w1_random: float | None

    def to_case_csv(self) -> str:
        lines = ["policy,case_id,treatment,step,w1,true_mean,est_mean"]
        for c in self.cases:
            lines.append(f"{c.policy},{c.case_id},{c.treatment},{c.step},"
                         f"{c.w1!r},{c.true_mean!r},{c.est_mean!r}")
        return "\n".join(lines) + "\n"

    def to_summary_json(self) -> str:
        payload = {
            "totals_true": self.totals_true,
            "totals_est": self.totals_est,
            "true_ranking": self.true_ranking,
            "est_ranking": self.est_ranking,
            "kendall_tau": self.kendall,
            "mean_w1": self.mean_w1,
            "mean_w1_informed": self.mean_w1_informed,
            "mean_w1_random": self.mean_w1_random,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _ranking(totals: dict[str, float]) -> list[str]:
    return [name for name, _ in
            sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))]


def _decide(policy: Policy, case: SimCase, intervention: InterventionSpec
            ) -> tuple[int, int]:
    """Roll the case to its treatment decision: (treatment, step)."""
    points = list_intervention_points(case, intervention.name)
    if intervention.kind == "fixed_point":
        return policy_action(policy, case, points[0], intervention), points[0]
    for j in points:
        if policy_action(policy, case, j, intervention) == 1:
            return 1, j
    return 0, points[-1]


def evaluate_methods(test_cases: list[SimCase], bundle: EvaluatorBundle,
                     policies: list[Policy], n_samples: int = 50, seed=0,
                     threads: int = 1) -> EvaluationReport:
    """Score every policy on every test case against the oracle.

    Outcome streams are keyed (seed, case_id, source, index) and shared by
    all policies: two policies taking the same action on a case see the same
    draws (common random numbers), and the result is byte-identical for any
    thread count.
    """
    intervention = bundle.intervention
    for policy in policies:
        if policy.estimator is not None and \
                policy.estimator.intervention.to_dict() != intervention.to_dict():
            raise DataError(
                f"policy {policy.name!r} was built for intervention "
                f"{policy.estimator.intervention.name!r}, bundle has "
                f"{intervention.name!r}")
    key = seed if isinstance(seed, tuple) else (seed,)

    def one(policy: Policy, case: SimCase) -> CaseEvaluation:
        treatment, step = _decide(policy, case, intervention)
        true = true_outcome_samples(case, intervention.name, treatment,
                                    step, n_samples, seed=(*key, "true"))
        sample = _prefix_sample(case.case_id, case.events(),
                                {"amount": case.amount}, {"sector": case.sector},
                                step)
        x = ln.encoded_row(bundle.base, bundle.encoder, sample)
        est = ln.sample_outcome(bundle.outcome, x, treatment, n_samples,
                                key=(*key, case.case_id, "est"))
        return CaseEvaluation(policy.name, case.case_id, treatment, step,
                              wasserstein1(true, est),
                              float(true.mean()), float(est.mean()))

    tasks = [(policy, case) for policy in policies for case in test_cases]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda pc: one(*pc), tasks))
    else:
        results = [one(*pc) for pc in tasks]
    results.sort(key=lambda c: (c.policy, c.case_id))

    names = [p.name for p in policies]
    totals_true = {n: 0.0 for n in names}
    totals_est = {n: 0.0 for n in names}
    w1_sums = {n: 0.0 for n in names}
    counts = {n: 0 for n in names}
    for c in results:
        totals_true[c.policy] += c.true_mean
        totals_est[c.policy] += c.est_mean
        w1_sums[c.policy] += c.w1
        counts[c.policy] += 1
    mean_w1 = {n: w1_sums[n] / counts[n] for n in names}

    informed = [p.name for p in policies if p.kind != "random"]
    random_names = [p.name for p in policies if p.kind == "random"]
    mean_w1_informed = (float(np.mean([mean_w1[n] for n in informed]))
                        if informed else float("nan"))
    mean_w1_random = (float(np.mean([mean_w1[n] for n in random_names]))
                      if random_names else None)

    true_ranking = _ranking(totals_true)
    est_ranking = _ranking(totals_est)
    tau = kendall_tau(true_ranking, est_ranking) if len(names) >= 2 else float("nan")
    return EvaluationReport(results, totals_true, totals_est, true_ranking,
                            est_ranking, tau, mean_w1, mean_w1_informed,
                            mean_w1_random)
