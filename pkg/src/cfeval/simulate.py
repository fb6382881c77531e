"""Miniature loan-process data-generating process with a known ground truth.

Each case is a loan application: amount A ~ U(1000, 50000), latent risk
R ~ U(0, 1), sector ~ Cat(0.5, 0.3, 0.2), then events "start", K_a = 1 +
Binomial(4, R) "assess" events carrying noisy scores s_k = R + N(0, 0.1 sd),
"decide", "end", with Exp(mean 1 day) inter-event gaps. R never appears in
the log; policies and models only see the scores.

Outcome law (the oracle):
  rate r:      p_acc = sigmoid(3 - 4R - 50(r - 0.03))
  rejected  -> Y = 0 (the declared atom)
  accepted  -> default ~ Bernoulli(q), q = clip(0.8R + 5(r - 0.01), 0, 0.95)
               Y = 5*A*r on repayment, Y = -0.5*A on default
Two interventions:
  set_rate   : codes {1,2,3} -> rates {1%, 3%, 5%}, decided once at the single
               point after the last assess event
  contact_hq : binary, decidable after each assess event; contacting after
               assess k multiplies q by m(k) = min(1, 0.5 + 0.1k) and costs
               0.01*A on accepted paths; the rate is fixed at 3%
Observational logs mix a confounded assignment policy (fraction delta) with
randomized assignment on the remainder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .eventlog import Case, Event, EventLog, InterventionSpec, LogSchema
from .rng import normal, stream

RATE_OF_LEVEL = {1: 0.01, 2: 0.03, 3: 0.05}
BASE_RATE = 0.03
SECTORS = ("retail", "tech", "agri")
SECTOR_PROBS = (0.5, 0.3, 0.2)
SCORE_SD = 0.1
EVENT_GAP_MEAN = 86_400.0   # one day
ARRIVAL_GAP_MEAN = 3_600.0  # one hour between case starts
EPOCH = 1_600_000_000
EPSILON_UNIFORM = 0.1       # confounded set_rate acts uniformly this often
CONTACT_SCORE_CUTOFF = 0.7

SIM_SCHEMA = LogSchema(event_numeric=("score",), case_numeric=("amount",),
                       case_categorical=("sector",))


@dataclass(frozen=True)
class SimConfig:
    n_cases: int
    delta: float          # fraction of cases assigned by the confounded policy
    intervention: str     # "set_rate" | "contact_hq"
    seed: int | tuple = 0

    @property
    def seed_key(self) -> tuple:
        return self.seed if isinstance(self.seed, tuple) else (self.seed,)

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta {self.delta} outside [0, 1]")
        if self.intervention not in ("set_rate", "contact_hq"):
            raise ValueError(f"unknown intervention {self.intervention!r}")
        if self.n_cases < 1:
            raise ValueError("n_cases must be >= 1")


def intervention_spec(kind: str) -> InterventionSpec:
    if kind == "set_rate":
        return InterventionSpec("fixed_point", (1, 2, 3), ("after_last", "assess"),
                                name="set_rate")
    if kind == "contact_hq":
        return InterventionSpec("timed", (0, 1), ("after_each", "assess"),
                                name="contact_hq")
    raise ValueError(f"unknown intervention {kind!r}")


@dataclass
class SimCase:
    """A sampled case with its latent risk, before treatment/outcome."""

    case_id: str
    amount: float
    risk: float
    sector: str
    scores: list[float]   # one per assess event
    times: list[int]      # absolute timestamps: start, assess..., decide, end

    @property
    def k_assess(self) -> int:
        return len(self.scores)

    def events(self) -> list[Event]:
        out = [Event(self.case_id, "start", self.times[0])]
        for k, s in enumerate(self.scores):
            out.append(Event(self.case_id, "assess", self.times[1 + k],
                             {"score": s}))
        out.append(Event(self.case_id, "decide", self.times[-2]))
        out.append(Event(self.case_id, "end", self.times[-1]))
        return out

    def to_case(self, treatment: int | None, step: int | None,
                outcome: float | None) -> Case:
        return Case(self.case_id, self.events(), {"amount": self.amount},
                    {"sector": self.sector}, treatment, step, outcome)


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x)) if x >= 0 else np.exp(x) / (1.0 + np.exp(x))


def _contact_multiplier(k: int) -> float:
    return min(1.0, 0.5 + 0.1 * k)


def draw_outcome(gen: np.random.Generator, amount: float, risk: float,
                 intervention: str, action: int, contact_k: int | None = None) -> float:
    """One outcome draw from the closed-form law."""
    if intervention == "set_rate":
        rate = RATE_OF_LEVEL[action]
        contacted = False
    else:
        rate = BASE_RATE
        contacted = action == 1
    p_acc = _sigmoid(3.0 - 4.0 * risk - 50.0 * (rate - 0.03))
    if gen.random() >= p_acc:
        return 0.0
    q = float(np.clip(0.8 * risk + 5.0 * (rate - 0.01), 0.0, 0.95))
    cost = 0.0
    if contacted:
        q = min(1.0, q * _contact_multiplier(contact_k))
        cost = 0.01 * amount
    if gen.random() < q:
        return -0.5 * amount - cost
    return 5.0 * amount * rate - cost


def generate_cases(config: SimConfig) -> list[SimCase]:
    """Sample case structures (latents, scores, event times) only."""
    arrivals = stream(*config.seed_key, "arrivals")
    cases = []
    start = EPOCH
    for i in range(config.n_cases):
        start += max(1, round(-ARRIVAL_GAP_MEAN * np.log(1.0 - arrivals.random())))
        gen = stream(*config.seed_key, "case", i)
        amount = 1000.0 + 49000.0 * gen.random()
        risk = gen.random()
        u_sector = gen.random()
        sector = SECTORS[0] if u_sector < SECTOR_PROBS[0] else (
            SECTORS[1] if u_sector < SECTOR_PROBS[0] + SECTOR_PROBS[1] else SECTORS[2])
        k_assess = 1 + sum(gen.random() < risk for _ in range(4))
        scores = [risk + SCORE_SD * normal(gen) for _ in range(k_assess)]
        times = [start]
        for _ in range(k_assess + 2):
            gap = max(1, round(-EVENT_GAP_MEAN * np.log(1.0 - gen.random())))
            times.append(times[-1] + gap)
        cases.append(SimCase(f"c{i:06d}", amount, risk, sector, scores, times))
    return cases


def _assign_set_rate(gen, case: SimCase, delta: float) -> tuple[int, int]:
    step = case.k_assess + 1
    if gen.random() < delta:  # confounded bank policy (with epsilon exploration)
        if gen.random() < EPSILON_UNIFORM:
            level = 1 + int(gen.random() * 3.0)
        elif case.risk < 1.0 / 3.0:
            level = 3
        elif case.risk < 2.0 / 3.0:
            level = 2
        else:
            level = 1
    else:
        level = 1 + int(gen.random() * 3.0)
    return min(level, 3), step


def _assign_contact(gen, case: SimCase, delta: float) -> tuple[int, int | None]:
    if gen.random() < delta:
        for k, s in enumerate(case.scores, start=1):
            if s > CONTACT_SCORE_CUTOFF:
                return 1, k + 1
        return 0, None
    pick = int(gen.random() * (case.k_assess + 1))  # uniform incl. "never"
    if pick >= case.k_assess:
        return 0, None
    return 1, pick + 2  # contact after assess k=pick+1 -> prefix length k+1


def generate_log(config: SimConfig) -> EventLog:
    """Observational log: structure, treatment assignment, and outcomes."""
    cases = []
    for sim in generate_cases(config):
        assign = stream(*config.seed_key, "assign", sim.case_id)
        if config.intervention == "set_rate":
            treatment, step = _assign_set_rate(assign, sim, config.delta)
        else:
            treatment, step = _assign_contact(assign, sim, config.delta)
        contact_k = step - 1 if (config.intervention == "contact_hq" and treatment) else None
        out_gen = stream(*config.seed_key, "outcome", sim.case_id)
        outcome = draw_outcome(out_gen, sim.amount, sim.risk, config.intervention,
                               treatment, contact_k)
        cases.append(sim.to_case(treatment, step, outcome))
    cases.sort(key=lambda c: (c.start_time, c.case_id))
    return EventLog(cases, SIM_SCHEMA)


def list_intervention_points(case: SimCase, kind: str) -> list[int]:
    """Prefix lengths at which the intervention may be decided."""
    if kind == "set_rate":
        return [case.k_assess + 1]
    return [k + 1 for k in range(1, case.k_assess + 1)]


def check_admissible(case: SimCase, kind: str, action: int, step: int | None):
    points = list_intervention_points(case, kind)
    if kind == "set_rate":
        if action not in (1, 2, 3):
            raise DataError(f"set_rate action {action} not in {{1,2,3}}")
        if step is not None and step != points[0]:
            raise DataError(f"set_rate decided at step {step}, point is {points[0]}")
    else:
        if action not in (0, 1):
            raise DataError(f"contact_hq action {action} not binary")
        if action == 1 and step not in points:
            raise DataError(f"contact at step {step} not an intervention point {points}")


def true_outcome_samples(case: SimCase, kind: str, action: int, step: int | None,
                         n: int = 50, seed=0) -> np.ndarray:
    """n oracle draws conditioned on the case's latent (A, R) and the action.

    seed may be an int or a tuple of key parts; draw i uses the stream keyed
    (*seed, case_id, i), so any subset can be regenerated independently.
    """
    check_admissible(case, kind, action, step)
    key = seed if isinstance(seed, tuple) else (seed,)
    contact_k = step - 1 if (kind == "contact_hq" and action == 1) else None
    out = np.empty(n)
    for i in range(n):
        gen = stream(*key, case.case_id, i)
        out[i] = draw_outcome(gen, case.amount, case.risk, kind, action, contact_k)
    return out
