"""Developer verification battery: finite-difference checks for every
primitive, both base models, and all four head log-likelihoods."""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from . import heads as hd
from . import nn
from .heads import HeadSpec
from .rng import stream

TOLERANCE = 1e-4

PRIMITIVES = {
    "matmul": lambda p: dc.sum_(dc.matmul(p[0], p[1])),
    "add": lambda p: dc.sum_(dc.add(p[0], p[1])),
    "mul": lambda p: dc.sum_(dc.mul(p[0], p[1])),
    "sigmoid": lambda p: dc.sum_(dc.sigmoid(p[0])),
    "tanh": lambda p: dc.sum_(dc.tanh(p[0])),
    "exp": lambda p: dc.sum_(dc.exp(p[0])),
    "log": lambda p: dc.sum_(dc.log(dc.add(dc.mul(p[0], p[0]), 1.0))),
    "softplus": lambda p: dc.sum_(dc.softplus(p[0])),
    "negate": lambda p: dc.sum_(dc.negate(p[0])),
    "concat": lambda p: dc.sum_(dc.sigmoid(dc.concat([p[0], p[1]], axis=1))),
    "slice": lambda p: dc.sum_(dc.slice_(p[0], (slice(1, 3), slice(0, 2)))),
    "sum": lambda p: dc.sum_(dc.tanh(dc.sum_(p[0], axis=0))),
    "mean": lambda p: dc.mean(dc.mul(p[0], p[0])),
    "log_sum_exp": lambda p: dc.sum_(dc.log_sum_exp(p[0], axis=1)),
}

HEADS = {
    "bernoulli": HeadSpec("bernoulli"),
    "categorical": HeadSpec("categorical", n_classes=3),
    "gaussian": HeadSpec("gaussian", y_mean=0.3, y_std=1.7),
    "mixed_flow": HeadSpec("mixed_flow", atoms=(0.0,), components=3,
                           y_mean=0.1, y_std=2.0),
}


def _check_primitive(name: str, trial: int) -> float:
    op = PRIMITIVES[name]
    gen = stream("gradcheck", name, trial)
    shapes = [(3, 4), (4, 2)] if name == "matmul" else [(3, 4), (3, 4)]
    arrays = [gen.normal(size=s) for s in shapes]

    def build(arrs):
        tape = dc.Tape()
        tensors = [tape.leaf(a, param=True) for a in arrs]
        return op(tensors), tensors

    return dc.grad_check(build, arrays)


def _check_mlp(trial: int) -> float:
    gen = stream("gradcheck", "mlp", trial)
    x = gen.normal(size=(3, 4))
    init = nn.init_mlp([4, 5, 2], seed=("gc_mlp", trial))
    arrays = [a for _, a in init.arrays()]

    def build(arrs):
        tape = dc.Tape()
        tensors = [tape.leaf(a, param=True) for a in arrs]
        p = nn.MLPParams([tensors[0], tensors[2]], [tensors[1], tensors[3]])
        out = nn.mlp_forward(p, tape.leaf(x))
        return dc.mean(dc.mul(out, out)), tensors

    return dc.grad_check(build, arrays)


def _check_lstm(trial: int) -> float:
    gen = stream("gradcheck", "lstm", trial)
    steps = gen.normal(size=(2, 3, 2))
    case = gen.normal(size=(2, 1))
    init = nn.init_lstm(2, 3, 1, 2, seed=("gc_lstm", trial))
    arrays = [a for _, a in init.arrays()]

    def build(arrs):
        tape = dc.Tape()
        tensors = [tape.leaf(a, param=True) for a in arrs]
        p = nn.LSTMParams(*tensors)
        out = nn.lstm_forward(p, tape.leaf(steps), [2, 3], tape.leaf(case))
        return dc.mean(dc.mul(out, out)), tensors

    return dc.grad_check(build, arrays)


def _check_head(kind: str, trial: int) -> float:
    spec = HEADS[kind]
    gen = stream("gradcheck", kind, trial)
    feats = gen.normal(size=(5, 3))
    if kind == "bernoulli":
        y = gen.integers(0, 2, size=5).astype(float)
    elif kind == "categorical":
        y = gen.integers(0, 3, size=5).astype(float)
    elif kind == "gaussian":
        y = gen.normal(size=5)
    else:
        y = np.where(gen.random(5) < 0.4, 0.0, gen.normal(size=5) * 2.0)
    arrays = [gen.normal(size=(3, spec.param_count)) * 0.5,
              gen.normal(size=spec.param_count) * 0.2]

    def build(arrs):
        tape = dc.Tape()
        w, b = tape.leaf(arrs[0], param=True), tape.leaf(arrs[1], param=True)
        raw = hd.project_graph(spec, tape.leaf(feats), w, b)
        return hd.nll_graph(spec, raw, y), [w, b]

    return dc.grad_check(build, arrays)


def run_battery(n_seeds: int = 20) -> list[tuple[str, float]]:
    """Max relative gradient error per check, each across n_seeds trials."""
    results = []
    for name in sorted(PRIMITIVES):
        err = max(_check_primitive(name, t) for t in range(n_seeds))
        results.append((f"primitive:{name}", err))
    results.append(("base:mlp", max(_check_mlp(t) for t in range(n_seeds))))
    results.append(("base:lstm", max(_check_lstm(t) for t in range(n_seeds))))
    for kind in sorted(HEADS):
        err = max(_check_head(kind, t) for t in range(n_seeds))
        results.append((f"head:{kind}", err))
    return results
