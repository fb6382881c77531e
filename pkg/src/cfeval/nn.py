"""MLP and LSTM base models built on the diffcore tape.

Both produce a feature vector per sample; distribution heads project those
features to distribution parameters. Parameters are plain float64 arrays
grouped in small dataclasses with a stable (name, array) listing used by the
optimizer and by bundle persistence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ShapeError
from .rng import stream


@dataclass
class MLPParams:
    """Affine layers with tanh between them; the last layer is affine only."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"w{i}", w))
            out.append((f"b{i}", b))
        return out


@dataclass
class LSTMParams:
    """One LSTM layer; gate order along the packed axis is (i, f, g, o).

    The final hidden state is concatenated with case-level features and
    passed through one affine projection to give the feature vector.
    """

    wx: np.ndarray      # (input_dim, 4H)
    wh: np.ndarray      # (H, 4H)
    b: np.ndarray       # (4H,), forget slice initialized to 1
    proj_w: np.ndarray  # (H + case_dim, feature_dim)
    proj_b: np.ndarray  # (feature_dim,)

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [("wx", self.wx), ("wh", self.wh), ("b", self.b),
                ("proj_w", self.proj_w), ("proj_b", self.proj_b)]


def _uniform_fan_in(gen, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return gen.uniform(-bound, bound, size=shape)


def _seed_key(seed) -> tuple:
    return seed if isinstance(seed, tuple) else (seed,)


def init_mlp(dims: list[int], seed) -> MLPParams:
    """dims = [input, hidden..., output]; weights ~ U(-1/sqrt(fan_in), +).

    seed may be an int or a tuple of stream-key parts, so sibling networks
    (e.g. per-treatment branches) can be initialized independently."""
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise ShapeError(f"mlp dims must be positive with >= 1 layer: {dims}")
    gen = stream(*_seed_key(seed), "init_mlp", *dims)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        weights.append(_uniform_fan_in(gen, d_in, (d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MLPParams(weights, biases)


def init_lstm(input_dim: int, hidden: int, case_dim: int, feature_dim: int,
              seed) -> LSTMParams:
    if min(input_dim, hidden, feature_dim) <= 0 or case_dim < 0:
        raise ShapeError(
            f"lstm dims must be positive: input={input_dim} hidden={hidden} "
            f"case={case_dim} feature={feature_dim}")
    gen = stream(*_seed_key(seed), "init_lstm", input_dim, hidden, case_dim, feature_dim)
    wx = _uniform_fan_in(gen, input_dim, (input_dim, 4 * hidden))
    wh = _uniform_fan_in(gen, hidden, (hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    proj_w = _uniform_fan_in(gen, hidden + case_dim, (hidden + case_dim, feature_dim))
    proj_b = np.zeros(feature_dim)
    return LSTMParams(wx, wh, b, proj_w, proj_b)


def lift(tape: dc.Tape, params) -> "MLPParams | LSTMParams":
    """Register every parameter array on the tape; returns the same structure
    holding Tensors, plus keeps ordering identical to .arrays()."""
    if isinstance(params, MLPParams):
        return MLPParams([tape.leaf(w, param=True) for w in params.weights],
                         [tape.leaf(b, param=True) for b in params.biases])
    if isinstance(params, LSTMParams):
        return LSTMParams(tape.leaf(params.wx, param=True),
                          tape.leaf(params.wh, param=True),
                          tape.leaf(params.b, param=True),
                          tape.leaf(params.proj_w, param=True),
                          tape.leaf(params.proj_b, param=True))
    raise TypeError(f"cannot lift {type(params)!r}")


def mlp_forward(lifted: MLPParams, x: dc.Tensor) -> dc.Tensor:
    """x: (batch, input_dim) -> (batch, dims[-1]). tanh between layers."""
    h = x
    last = len(lifted.weights) - 1
    for i, (w, b) in enumerate(zip(lifted.weights, lifted.biases)):
        h = dc.add(dc.matmul(h, w), b)
        if i != last:
            h = dc.tanh(h)
    return h


def lstm_forward(lifted: LSTMParams, steps: dc.Tensor, lengths: np.ndarray,
                 case_feats: dc.Tensor) -> dc.Tensor:
    """Run the recurrence over a padded batch.

    steps: (batch, max_len, step_dim); lengths gives each sequence's true
    length, and padded positions never touch the state, so any padding of the
    same sequences gives identical features.
    """
    batch, max_len, _ = steps.values.shape
    lengths = np.asarray(lengths, dtype=int)
    if len(lengths) != batch:
        raise ShapeError(f"lengths size {len(lengths)} != batch {batch}")
    if np.any(lengths < 1):
        raise ShapeError("zero-length sequence in lstm_forward")
    if np.any(lengths > max_len):
        raise ShapeError("length exceeds padded axis")
    tape = steps.tape
    hdim = lifted.wh.values.shape[0]

    h = tape.leaf(np.zeros((batch, hdim)))
    c = tape.leaf(np.zeros((batch, hdim)))
    for t in range(max_len):
        x_t = dc.slice_(steps, (slice(None), t))
        gates = dc.add(dc.add(dc.matmul(x_t, lifted.wx), dc.matmul(h, lifted.wh)),
                       lifted.b)
        i_g = dc.sigmoid(dc.slice_(gates, (slice(None), slice(0, hdim))))
        f_g = dc.sigmoid(dc.slice_(gates, (slice(None), slice(hdim, 2 * hdim))))
        g_g = dc.tanh(dc.slice_(gates, (slice(None), slice(2 * hdim, 3 * hdim))))
        o_g = dc.sigmoid(dc.slice_(gates, (slice(None), slice(3 * hdim, 4 * hdim))))
        c_new = dc.add(dc.mul(f_g, c), dc.mul(i_g, g_g))
        h_new = dc.mul(o_g, dc.tanh(c_new))
        mask = tape.leaf((lengths > t).astype(float).reshape(batch, 1))
        inv = tape.leaf((lengths <= t).astype(float).reshape(batch, 1))
        c = dc.add(dc.mul(mask, c_new), dc.mul(inv, c))
        h = dc.add(dc.mul(mask, h_new), dc.mul(inv, h))

    joined = dc.concat([h, case_feats], axis=1)
    return dc.add(dc.matmul(joined, lifted.proj_w), lifted.proj_b)
