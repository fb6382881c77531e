"""Distribution heads: feature vector -> distribution parameters -> exact
log-probability and sampling.

Four kinds are supported: bernoulli, categorical, gaussian, and mixed_flow.
The mixed head places probability mass on a declared list of atom values and
models the continuous remainder with a monotone one-layer sigmoidal flow,
i.e. a CDF  F(y') = sum_m w_m * sigmoid(a_m * y' + b_m)  on standardized
outcomes y' = (y - y_mean) / y_std, with w on the simplex and slopes a_m > 0.
Its density is f(y') = sum_m w_m * a_m * sig'(a_m * y' + b_m).

Each head has two code paths that are tested against each other: a numpy
path (project / log_prob / sample) used at evaluation time, and a tape path
(nll_graph) used for maximum-likelihood training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import ShapeError, TrainingError

ATOM_TOL = 1e-9
_SLOPE_FLOOR = 1e-12  # keeps log(softplus(a_raw)) finite for extreme raw values
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class HeadSpec:
    kind: str                       # bernoulli | categorical | gaussian | mixed_flow
    n_classes: int = 0              # categorical only
    atoms: tuple[float, ...] = ()   # mixed_flow, raw outcome units, strictly increasing
    components: int = 8             # mixed_flow M
    y_mean: float = 0.0             # outcome standardization (continuous parts)
    y_std: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bernoulli", "categorical", "gaussian", "mixed_flow"):
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.kind == "categorical" and self.n_classes < 2:
            raise ValueError("categorical head needs n_classes >= 2")
        if self.kind == "mixed_flow":
            if self.components < 1:
                raise ValueError("mixed_flow needs components >= 1")
            if any(b <= a for a, b in zip(self.atoms, self.atoms[1:])):
                raise ValueError("atoms must be strictly increasing")
        if self.y_std <= 0:
            raise ValueError("y_std must be positive")

    @property
    def param_count(self) -> int:
        """Raw parameters produced by the affine projection, per sample."""
        if self.kind == "bernoulli":
            return 1
        if self.kind == "categorical":
            return self.n_classes
        if self.kind == "gaussian":
            return 2
        return len(self.atoms) + 1 + 3 * self.components

    def standardize(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std


@dataclass
class DistParams:
    """Constrained distribution parameters for a batch (plus raw copies)."""

    kind: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def batch(self) -> int:
        return next(iter(self.arrays.values())).shape[0]

    def row(self, i: int) -> "DistParams":
        return DistParams(self.kind, {k: v[i:i + 1] for k, v in self.arrays.items()})


# ---------------------------------------------------------------------------
# numpy helpers shared by inference and sampling


def _sigmoid(x):
    return dc._sigmoid_values(np.asarray(x, dtype=float))


def _softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=float))


def _log_sigmoid_deriv(u):
    # log sig'(u) = -softplus(u) - softplus(-u)
    return -_softplus(u) - _softplus(-u)


def _log_softmax(z, axis=-1):
    m = np.max(z, axis=axis, keepdims=True)
    return z - m - np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True))


def flow_cdf(w, a, b, t):
    """F(t) = sum_m w_m sigmoid(a_m t + b_m); t broadcasts against (M,) params."""
    t = np.asarray(t, dtype=float)
    return _sigmoid(np.multiply.outer(t, a) + b) @ w


def flow_log_density(w, a, b, t):
    """log f(t) for the standardized flow; t: scalar or (n,)."""
    t = np.asarray(t, dtype=float)
    u = np.multiply.outer(t, a) + b
    terms = np.log(w) + np.log(a) + _log_sigmoid_deriv(u)
    m = terms.max(axis=-1, keepdims=True)
    return np.squeeze(m, -1) + np.log(np.exp(terms - m).sum(axis=-1))


def _constrain_flow(raw: np.ndarray, spec: HeadSpec) -> dict[str, np.ndarray]:
    n_atoms = len(spec.atoms)
    m = spec.components
    mix_logits = raw[:, :n_atoms + 1]
    w_logits = raw[:, n_atoms + 1:n_atoms + 1 + m]
    a_raw = raw[:, n_atoms + 1 + m:n_atoms + 1 + 2 * m]
    b = raw[:, n_atoms + 1 + 2 * m:]
    log_mix = _log_softmax(mix_logits)
    log_w = _log_softmax(w_logits)
    return {
        "mix_logits": mix_logits, "mix": np.exp(log_mix), "log_mix": log_mix,
        "w_logits": w_logits, "w": np.exp(log_w), "log_w": log_w,
        "a_raw": a_raw, "a": _softplus(a_raw) + _SLOPE_FLOOR, "b": b,
    }


def project(spec: HeadSpec, features: np.ndarray, proj_w: np.ndarray,
            proj_b: np.ndarray) -> DistParams:
    """Affine map features -> raw parameters, then apply constraints."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[1] != proj_w.shape[0] or proj_w.shape[1] != spec.param_count:
        raise ShapeError(
            f"projection shapes {proj_w.shape} do not map features "
            f"{features.shape} to {spec.param_count} head parameters")
    raw = features @ proj_w + proj_b
    if spec.kind == "bernoulli":
        logit = raw[:, 0]
        return DistParams("bernoulli", {"logit": logit, "p": _sigmoid(logit)})
    if spec.kind == "categorical":
        logp = _log_softmax(raw)
        return DistParams("categorical", {"logits": raw, "probs": np.exp(logp)})
    if spec.kind == "gaussian":
        return DistParams("gaussian", {"mean": raw[:, 0], "log_var": raw[:, 1]})
    return DistParams("mixed_flow", _constrain_flow(raw, spec))


def log_prob(spec: HeadSpec, params: DistParams, y) -> np.ndarray:
    """Exact log density/mass of raw outcomes y, one value per batch row."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if spec.kind == "bernoulli":
        z = params.arrays["logit"]
        return y * z - _softplus(z)
    if spec.kind == "categorical":
        idx = y.astype(int)
        if np.any(idx < 0) or np.any(idx >= spec.n_classes):
            raise ValueError(f"categorical outcome out of range 0..{spec.n_classes - 1}")
        logits = params.arrays["logits"]
        return _log_softmax(logits)[np.arange(len(idx)), idx]
    if spec.kind == "gaussian":
        ys = spec.standardize(y)
        m, v = params.arrays["mean"], params.arrays["log_var"]
        return (-0.5 * (_LOG_2PI + v + (ys - m) ** 2 * np.exp(-v))
                - np.log(spec.y_std))
    return _mixed_log_prob(spec, params, y)


def _atom_index(spec: HeadSpec, y: np.ndarray) -> np.ndarray:
    """Index of the matching atom per sample, or -1 for the continuous part."""
    idx = np.full(len(y), -1, dtype=int)
    for i, atom in enumerate(spec.atoms):
        idx[np.abs(y - atom) <= ATOM_TOL] = i
    return idx


def _mixed_log_prob(spec: HeadSpec, params: DistParams, y: np.ndarray) -> np.ndarray:
    log_mix = params.arrays["log_mix"]
    idx = _atom_index(spec, y)
    out = np.empty(len(y))
    on_atom = idx >= 0
    if np.any(on_atom):
        rows = np.nonzero(on_atom)[0]
        out[rows] = log_mix[rows, idx[rows]]
    cont = ~on_atom
    if np.any(cont):
        rows = np.nonzero(cont)[0]
        ys = spec.standardize(y[rows])
        w, a, b = (params.arrays[k][rows] for k in ("w", "a", "b"))
        u = a * ys[:, None] + b
        terms = params.arrays["log_w"][rows] + np.log(a) + _log_sigmoid_deriv(u)
        mx = terms.max(axis=1, keepdims=True)
        log_f = mx[:, 0] + np.log(np.exp(terms - mx).sum(axis=1))
        out[rows] = log_mix[rows, -1] + log_f - np.log(spec.y_std)
    return out


# ---------------------------------------------------------------------------
# sampling

# uniforms consumed per draw, fixed per head kind so parallel per-index
# streams stay aligned no matter which branch a draw takes
UNIFORM_BUDGET = {"bernoulli": 1, "categorical": 1, "gaussian": 2, "mixed_flow": 2}


def invert_flow_cdf(w, a, b, u, tol: float = 1e-8, max_iter: int = 200):
    """Solve F(t) = u for each u by bracket doubling from [-10, 10] + bisection.

    Vectorized over u; returns t with |F(t) - u| <= tol.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    lo = np.full(u.shape, -10.0)
    hi = np.full(u.shape, 10.0)
    for _ in range(200):
        bad = flow_cdf(w, a, b, lo) > u
        if not np.any(bad):
            break
        lo[bad] *= 2.0
    for _ in range(200):
        bad = flow_cdf(w, a, b, hi) < u
        if not np.any(bad):
            break
        hi[bad] *= 2.0
    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f = flow_cdf(w, a, b, t)
        done = np.abs(f - u) <= tol
        if np.all(done):
            return t
        high = f > u
        hi = np.where(high & ~done, t, hi)
        lo = np.where(~high & ~done, t, lo)
        t = np.where(done, t, 0.5 * (lo + hi))
    f = flow_cdf(w, a, b, t)
    if np.any(np.abs(f - u) > tol):
        raise TrainingError("flow CDF bisection failed to converge")
    return t


def _transform_uniforms(spec: HeadSpec, params: DistParams, uniforms: np.ndarray,
                        row: int = 0) -> np.ndarray:
    """Map (n, budget) uniforms to n outcome draws for one parameter row."""
    n = uniforms.shape[0]
    if spec.kind == "bernoulli":
        return (uniforms[:, 0] < params.arrays["p"][row]).astype(float)
    if spec.kind == "categorical":
        cdf = np.cumsum(params.arrays["probs"][row])
        return np.searchsorted(cdf, uniforms[:, 0], side="right").clip(0, spec.n_classes - 1).astype(float)
    if spec.kind == "gaussian":
        u1 = 1.0 - uniforms[:, 0]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * uniforms[:, 1])
        m, v = params.arrays["mean"][row], params.arrays["log_var"][row]
        return spec.y_mean + spec.y_std * (m + np.exp(0.5 * v) * z)
    mix = params.arrays["mix"][row]
    cdf = np.cumsum(mix)
    slot = np.searchsorted(cdf, uniforms[:, 0], side="right").clip(0, len(mix) - 1)
    out = np.empty(n)
    n_atoms = len(spec.atoms)
    for i in range(n_atoms):
        out[slot == i] = spec.atoms[i]
    cont = slot == n_atoms
    if np.any(cont):
        w, a, b = (params.arrays[k][row] for k in ("w", "a", "b"))
        t = invert_flow_cdf(w, a, b, uniforms[cont, 1])
        out[cont] = spec.y_mean + spec.y_std * t
    return out


def sample(spec: HeadSpec, params: DistParams, gen: np.random.Generator,
           row: int = 0) -> float:
    """One draw; consumes exactly UNIFORM_BUDGET[kind] uniforms from gen."""
    u = gen.random(UNIFORM_BUDGET[spec.kind]).reshape(1, -1)
    return float(_transform_uniforms(spec, params, u, row)[0])


def sample_n(spec: HeadSpec, params: DistParams, gens, row: int = 0) -> np.ndarray:
    """n draws using one independent stream per index (vectorized)."""
    budget = UNIFORM_BUDGET[spec.kind]
    uniforms = np.stack([g.random(budget) for g in gens])
    return _transform_uniforms(spec, params, uniforms, row)


def expected_value(spec: HeadSpec, params: DistParams) -> np.ndarray:
    """Closed-form mean, for heads that have one (policy estimators use this)."""
    if spec.kind == "bernoulli":
        return params.arrays["p"]
    if spec.kind == "gaussian":
        return spec.y_mean + spec.y_std * params.arrays["mean"]
    raise ValueError(f"no closed-form mean for head kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# tape path (training objectives)


def project_graph(spec: HeadSpec, features: dc.Tensor, proj_w: dc.Tensor,
                  proj_b: dc.Tensor) -> dc.Tensor:
    """Raw (unconstrained) head parameters on the tape: features @ W + b."""
    return dc.add(dc.matmul(features, proj_w), proj_b)


def nll_graph(spec: HeadSpec, raw: dc.Tensor, y) -> dc.Tensor:
    """Mean negative log-likelihood of raw outcomes y as a tape scalar."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    tape = raw.tape
    n = len(y)
    if spec.kind == "bernoulli":
        z = dc.slice_(raw, (slice(None), 0))
        per = dc.add(dc.softplus(z), dc.negate(dc.mul(z, tape.leaf(y))))
        return dc.mean(per)
    if spec.kind == "categorical":
        idx = y.astype(int)
        onehot = np.zeros((n, spec.n_classes))
        onehot[np.arange(n), idx] = 1.0
        picked = dc.sum_(dc.mul(raw, tape.leaf(onehot)), axis=1)
        per = dc.add(dc.log_sum_exp(raw, axis=1), dc.negate(picked))
        return dc.mean(per)
    if spec.kind == "gaussian":
        ys = spec.standardize(y)
        m = dc.slice_(raw, (slice(None), 0))
        v = dc.slice_(raw, (slice(None), 1))
        diff = dc.add(tape.leaf(ys), dc.negate(m))
        quad = dc.mul(dc.mul(diff, diff), dc.exp(dc.negate(v)))
        per = dc.mul(dc.add(dc.add(quad, v), tape.leaf(np.full(n, _LOG_2PI))),
                     tape.leaf(np.full(n, 0.5)))
        return dc.add(dc.mean(per), tape.leaf(np.log(spec.y_std)))
    return _mixed_nll_graph(spec, raw, y)


def _mixed_nll_graph(spec: HeadSpec, raw: dc.Tensor, y: np.ndarray) -> dc.Tensor:
    tape = raw.tape
    n = len(y)
    n_atoms = len(spec.atoms)
    m = spec.components
    mix_logits = dc.slice_(raw, (slice(None), slice(0, n_atoms + 1)))
    w_logits = dc.slice_(raw, (slice(None), slice(n_atoms + 1, n_atoms + 1 + m)))
    a_raw = dc.slice_(raw, (slice(None), slice(n_atoms + 1 + m, n_atoms + 1 + 2 * m)))
    b = dc.slice_(raw, (slice(None), slice(n_atoms + 1 + 2 * m, n_atoms + 1 + 3 * m)))

    log_mix_norm = dc.log_sum_exp(mix_logits, axis=1)  # (n,)
    idx = _atom_index(spec, y)

    # slot selector: one-hot over atoms for atom rows, continuous slot otherwise
    sel = np.zeros((n, n_atoms + 1))
    sel[np.arange(n), np.where(idx >= 0, idx, n_atoms)] = 1.0
    chosen_logit = dc.sum_(dc.mul(mix_logits, tape.leaf(sel)), axis=1)

    # log f(y') for every row; masked out for atom rows
    ys = spec.standardize(np.where(idx >= 0, spec.y_mean, y))  # atom rows: dummy 0
    lse_w = dc.slice_(dc.log_sum_exp(w_logits, axis=1), (slice(None), None))  # (n,1)
    log_w = dc.add(w_logits, dc.negate(lse_w))
    a = dc.add(dc.softplus(a_raw), tape.leaf(np.full((n, m), _SLOPE_FLOOR)))
    u = dc.add(dc.mul(a, tape.leaf(ys[:, None])), b)
    log_deriv = dc.negate(dc.add(dc.softplus(u), dc.softplus(dc.negate(u))))
    log_f = dc.log_sum_exp(dc.add(dc.add(log_w, dc.log(a)), log_deriv), axis=1)

    cont_mask = tape.leaf((idx < 0).astype(float))
    jacobian = np.where(idx < 0, np.log(spec.y_std), 0.0)
    log_p = dc.add(dc.add(chosen_logit, dc.negate(log_mix_norm)),
                   dc.add(dc.mul(cont_mask, log_f), tape.leaf(-jacobian)))
    return dc.negate(dc.mean(log_p))


def mse_graph(spec: HeadSpec, raw: dc.Tensor, y) -> dc.Tensor:
    """Squared error on standardized outcomes through the head's mean column.

    Used by policy estimators trained on outcome regression; requires a
    gaussian head (only the mean column receives gradient).
    """
    if spec.kind != "gaussian":
        raise ValueError("mse objective requires a gaussian head")
    ys = spec.standardize(np.atleast_1d(np.asarray(y, dtype=float)))
    m = dc.slice_(raw, (slice(None), 0))
    diff = dc.add(raw.tape.leaf(ys), dc.negate(m))
    return dc.mean(dc.mul(diff, diff))
