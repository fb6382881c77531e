import numpy as np
import pytest

from cfeval import diffcore as dc
from cfeval import nn
from cfeval.errors import ShapeError
from cfeval.rng import stream


def test_init_is_deterministic():
    a = nn.init_mlp([4, 8, 2], seed=3)
    b = nn.init_mlp([4, 8, 2], seed=3)
    for (_, x), (_, y) in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    c = nn.init_mlp([4, 8, 2], seed=4)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_init_rejects_zero_hidden():
    with pytest.raises(ShapeError):
        nn.init_mlp([4, 0, 2], seed=0)
    with pytest.raises(ShapeError):
        nn.init_lstm(4, 0, 2, 3, seed=0)


def test_forget_gate_bias_is_one():
    p = nn.init_lstm(3, 5, 2, 4, seed=1)
    assert np.array_equal(p.b[5:10], np.ones(5))
    assert np.array_equal(p.b[:5], np.zeros(5))
    assert np.array_equal(p.b[10:], np.zeros(10))


def test_mlp_zero_weights_outputs_bias():
    p = nn.init_mlp([3, 2], seed=0)
    p.weights[0][:] = 0.0
    p.biases[0][:] = [1.5, -2.0]
    tape = dc.Tape()
    x = tape.leaf(stream("mlpzero").normal(size=(4, 3)))
    out = nn.mlp_forward(nn.lift(tape, p), x)
    assert np.allclose(out.values, [[1.5, -2.0]] * 4)


def test_mlp_identity_single_layer():
    p = nn.MLPParams([np.eye(3)], [np.zeros(3)])
    tape = dc.Tape()
    xv = stream("mlpid").normal(size=(2, 3))
    out = nn.mlp_forward(nn.lift(tape, p), tape.leaf(xv))
    assert np.allclose(out.values, xv)


def test_mlp_batch_order_preserved():
    p = nn.init_mlp([3, 6, 2], seed=5)
    xv = stream("mlpbatch").normal(size=(5, 3))
    tape = dc.Tape()
    full = nn.mlp_forward(nn.lift(tape, p), tape.leaf(xv)).values
    perm = np.array([4, 2, 0, 1, 3])
    tape2 = dc.Tape()
    permuted = nn.mlp_forward(nn.lift(tape2, p), tape2.leaf(xv[perm])).values
    assert np.allclose(full[perm], permuted)


def test_lstm_zero_params_zero_hidden():
    p = nn.init_lstm(2, 3, 1, 3, seed=0)
    p.wx[:] = 0.0
    p.wh[:] = 0.0
    p.b[:] = 0.0  # forget bias forced 0 for this degenerate check
    p.proj_w[:] = 0.0
    p.proj_b[:] = 0.0
    tape = dc.Tape()
    steps = tape.leaf(stream("lstmzero").normal(size=(2, 4, 2)))
    case = tape.leaf(np.ones((2, 1)))
    out = nn.lstm_forward(nn.lift(tape, p), steps, [4, 4], case)
    assert np.allclose(out.values, 0.0)


def test_lstm_padding_invariance():
    p = nn.init_lstm(3, 4, 2, 4, seed=7)
    gen = stream("lstmpad")
    seqs = [gen.normal(size=(2, 3)), gen.normal(size=(3, 3))]
    case = gen.normal(size=(2, 2))

    def run(pad_to):
        batch = np.zeros((2, pad_to, 3))
        for i, s in enumerate(seqs):
            batch[i, :len(s)] = s
        tape = dc.Tape()
        return nn.lstm_forward(nn.lift(tape, p), tape.leaf(batch),
                               [2, 3], tape.leaf(case)).values

    assert np.allclose(run(3), run(6))


def test_lstm_length_one_equals_single_step():
    p = nn.init_lstm(3, 4, 0, 4, seed=2)
    gen = stream("lstm1")
    x = gen.normal(size=(1, 1, 3))
    tape = dc.Tape()
    out = nn.lstm_forward(nn.lift(tape, p), tape.leaf(x), [1],
                          tape.leaf(np.zeros((1, 0))))

    # manual single step from zero state
    z = x[0, 0] @ p.wx + p.b
    h = 3 * [None]
    i_g = 1 / (1 + np.exp(-z[:4]))
    f_g = 1 / (1 + np.exp(-z[4:8]))
    g_g = np.tanh(z[8:12])
    o_g = 1 / (1 + np.exp(-z[12:]))
    c = i_g * g_g
    h = o_g * np.tanh(c)
    expected = h @ p.proj_w + p.proj_b
    assert np.allclose(out.values[0], expected)


def test_lstm_rejects_zero_length():
    p = nn.init_lstm(3, 4, 0, 4, seed=2)
    tape = dc.Tape()
    with pytest.raises(ShapeError):
        nn.lstm_forward(nn.lift(tape, p), tape.leaf(np.zeros((1, 2, 3))), [0],
                        tape.leaf(np.zeros((1, 0))))


def _mlp_nll_build(arrays):
    dims = [3, 4, 2]
    tape = dc.Tape()
    tensors = [tape.leaf(a, param=True) for a in arrays]
    p = nn.MLPParams([tensors[0], tensors[2]], [tensors[1], tensors[3]])
    gen = stream("gcmlp")
    x = tape.leaf(np.array([[0.3, -1.0, 0.7], [1.1, 0.2, -0.4]]))
    out = nn.mlp_forward(p, x)
    return dc.mean(dc.mul(out, out)), tensors


def test_mlp_grad_check():
    for trial in range(3):
        gen = stream("gcmlp", trial)
        arrays = [gen.normal(size=(3, 4)), gen.normal(size=4),
                  gen.normal(size=(4, 2)), gen.normal(size=2)]
        assert dc.grad_check(_mlp_nll_build, arrays) < 1e-4


def test_lstm_grad_check():
    gen = stream("gclstm")
    steps_v = gen.normal(size=(2, 3, 2))
    case_v = gen.normal(size=(2, 1))
    init = nn.init_lstm(2, 3, 1, 2, seed=11)
    arrays = [a for _, a in init.arrays()]

    def build(arrs):
        tape = dc.Tape()
        tensors = [tape.leaf(a, param=True) for a in arrs]
        p = nn.LSTMParams(*tensors)
        out = nn.lstm_forward(p, tape.leaf(steps_v), [2, 3], tape.leaf(case_v))
        return dc.mean(dc.mul(out, out)), tensors

    assert dc.grad_check(build, arrays) < 1e-4
